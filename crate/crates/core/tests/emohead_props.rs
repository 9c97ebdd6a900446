//! Head properties: focal loss against a plain cross-entropy oracle,
//! mask invariants, attention normalization and label-permutation
//! equivariance.

use mlbvae::emohead::{
    asymmetric_focal_loss, build_mask, masked_attention, predict, AttentionWeights, CooccurrenceMask, HeadConfig,
    HeadParams,
};
use mlbvae::ndcore::{ParamStore, Rng, Tensor};
use proptest::prelude::*;

fn bce(p: &[f64], y: &[u8]) -> f64 {
    let mut s = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        s += if yi == 1 { -pi.ln() } else { -(1.0 - pi).ln() };
    }
    s / p.len() as f64
}

#[test]
fn focal_loss_without_focusing_is_cross_entropy() {
    let mut rng = Rng::new(2024);
    for _ in 0..1000 {
        let p = [rng.uniform_range(1e-6, 1.0 - 1e-6)];
        let y = [u8::from(rng.uniform() < 0.5)];
        let got = asymmetric_focal_loss(&p, &y, 0.0, 0.0).unwrap();
        assert_eq!(got.clamped, 0);
        assert!((got.value - bce(&p, &y)).abs() < 1e-12, "p={p:?} y={y:?}");
    }
}

fn label_matrix() -> impl Strategy<Value = Vec<Vec<u8>>> {
    (2usize..7).prop_flat_map(|c| prop::collection::vec(prop::collection::vec(0u8..=1, c), 1..12))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mask_rows_and_diagonal(labels in label_matrix()) {
        let m = build_mask(&labels).unwrap();
        let c = labels[0].len();
        for j in 0..c {
            for k in 0..c {
                let v = m.get(j, k);
                prop_assert!((0.0..=1.0).contains(&v));
                if m.counts[j] == 0 {
                    prop_assert_eq!(v, 0.0);
                } else {
                    prop_assert_eq!(v, m.pair_counts[j][k] as f64 / m.counts[j] as f64);
                }
            }
            if m.counts[j] > 0 {
                prop_assert_eq!(m.get(j, j), 1.0);
            }
        }
    }

    #[test]
    fn mask_ignores_order_and_duplication(labels in label_matrix(), seed in any::<u64>()) {
        let m = build_mask(&labels).unwrap();
        let mut shuffled = labels.clone();
        Rng::new(seed).shuffle(&mut shuffled);
        prop_assert_eq!(&build_mask(&shuffled).unwrap().mask, &m.mask);
        let doubled: Vec<Vec<u8>> = labels.iter().chain(&labels).cloned().collect();
        prop_assert_eq!(&build_mask(&doubled).unwrap().mask, &m.mask);
    }

    #[test]
    fn mask_text_round_trip(labels in label_matrix()) {
        let m = build_mask(&labels).unwrap();
        let back = CooccurrenceMask::from_text(&m.to_text()).unwrap();
        prop_assert_eq!(back.mask, m.mask);
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), c in 2usize..6, d in 1usize..5, dp in 1usize..4) {
        let mut rng = Rng::new(seed);
        let zz = rng.normal_tensor::<f64>(&[c, d]);
        let mask = rng.uniform_tensor::<f64>(&[c, c], 1.0);
        let wq = rng.normal_tensor(&[d, dp]);
        let wk = rng.normal_tensor(&[d, dp]);
        let wv = rng.normal_tensor(&[d, d]);
        let wg = rng.normal_tensor(&[c, d]);
        let bg: Vec<f64> = rng.normal_tensor::<f64>(&[c]).into_data();
        let w = AttentionWeights { omega_q: &wq, omega_k: &wk, omega_v: &wv, omega_g: &wg, omega_g_bias: &bg };
        let (p2, a) = masked_attention(&zz, Some(&mask), &w).unwrap();
        for r in 0..c {
            let row = a.row(r);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert!(p2.iter().all(|&p| p > 0.0 && p < 1.0));
        // A zero mask and no mask agree bitwise.
        let zeros = Tensor::zeros(&[c, c]);
        let (q1, a1) = masked_attention(&zz, Some(&zeros), &w).unwrap();
        let (q2, a2) = masked_attention(&zz, None, &w).unwrap();
        prop_assert_eq!(q1, q2);
        prop_assert_eq!(a1, a2);
    }

    #[test]
    fn focal_loss_is_non_negative(p in prop::collection::vec(0.0f64..=1.0, 1..8), bits in any::<u8>(), gn in 0.0f64..4.0, gp in 0.0f64..4.0) {
        let y: Vec<u8> = (0..p.len()).map(|i| (bits >> (i % 8)) & 1).collect();
        let l = asymmetric_focal_loss(&p, &y, gp, gn).unwrap();
        prop_assert!(l.value >= 0.0 && l.value.is_finite());
    }

    #[test]
    fn stronger_negative_focusing_shrinks_confident_negatives(p in 1e-4f64..0.4999, g in 0.0f64..5.0, dg in 0.01f64..2.0) {
        let a = asymmetric_focal_loss(&[p], &[0], 0.0, g).unwrap().value;
        let b = asymmetric_focal_loss(&[p], &[0], 0.0, g + dg).unwrap().value;
        prop_assert!(b < a);
    }

    #[test]
    fn prediction_is_label_permutation_equivariant(seed in any::<u64>(), c in 2usize..6, d in 1usize..5) {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::<f64>::new();
        let head = HeadParams::new(&mut store, d, c, &HeadConfig::default(), &mut rng).unwrap();
        let z: Vec<f64> = rng.normal_tensor::<f64>(&[d]).into_data();
        let labels: Vec<Vec<u8>> = (0..10).map(|_| (0..c).map(|_| u8::from(rng.uniform() < 0.4)).collect()).collect();
        let mask = build_mask(&labels).unwrap();
        let mut perm: Vec<usize> = (0..c).collect();
        rng.shuffle(&mut perm);

        let mut pstore = store.clone();
        let permute_rows = |t: &Tensor<f64>| {
            let cols = t.len() / c;
            let mut out = Vec::with_capacity(t.len());
            for &src in &perm {
                out.extend_from_slice(&t.data()[src * cols..(src + 1) * cols]);
            }
            Tensor::new(t.shape().to_vec(), out).unwrap()
        };
        let label_params = [Some(head.omega1.weight), head.omega1.bias, Some(head.omega_g), head.omega_g_bias];
        for id in label_params.into_iter().flatten() {
            let v = permute_rows(&store.get(id).value);
            pstore.get_mut(id).value = v;
        }
        let plabels: Vec<Vec<u8>> = labels.iter().map(|r| perm.iter().map(|&s| r[s]).collect()).collect();
        let pmask = build_mask(&plabels).unwrap();

        let (p, ..) = predict(&head, &store, &z, &mask).unwrap();
        let (pp, ..) = predict(&head, &pstore, &z, &pmask).unwrap();
        for (new, &src) in perm.iter().enumerate() {
            prop_assert!((pp[new] - p[src]).abs() < 1e-12);
        }
    }
}

#[test]
fn focal_loss_vanishes_as_predictions_approach_labels() {
    let y = [1u8, 0, 1, 0];
    let mut last = f64::INFINITY;
    for k in 1..8 {
        let e = 10f64.powi(-k);
        let p = [1.0 - e, e, 1.0 - e, e];
        let l = asymmetric_focal_loss(&p, &y, 0.0, 1.0).unwrap().value;
        assert!(l < last);
        last = l;
    }
    assert!(last < 1e-6);
}

#[test]
fn zero_input_attention_reduces_to_mask_softmax() {
    let c = 3;
    let zz = Tensor::<f64>::zeros(&[c, 2]);
    let mask = Tensor::from_rows(&[vec![1.0, 0.5, 0.0], vec![0.0, 1.0, 0.0], vec![0.2, 0.2, 1.0]]).unwrap();
    let mut rng = Rng::new(1);
    let wq = rng.normal_tensor(&[2, 2]);
    let wk = rng.normal_tensor(&[2, 2]);
    let wv = rng.normal_tensor(&[2, 2]);
    let wg = rng.normal_tensor(&[c, 2]);
    let bg = vec![0.3, -0.2, 0.0];
    let w = AttentionWeights { omega_q: &wq, omega_k: &wk, omega_v: &wv, omega_g: &wg, omega_g_bias: &bg };
    let (p2, a) = masked_attention(&zz, Some(&mask), &w).unwrap();
    for r in 0..c {
        let row = mask.row(r);
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        for k in 0..c {
            assert!((a.at(r, k) - row[k].exp() / denom).abs() < 1e-15);
        }
        assert!((p2[r] - 1.0 / (1.0 + (-bg[r]).exp())).abs() < 1e-15);
    }
    let (_, uniform) = masked_attention(&zz, Some(&Tensor::zeros(&[c, c])), &w).unwrap();
    assert!(uniform.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
}
