//! Dataset storage round trips, splits and generator properties.

use mlbvae::bvae::View;
use mlbvae::dataio::{
    generate_synthetic, make_splits, threshold_ratings, Dataset, RawViews, SplitScheme, Standardizer, SyntheticSpec,
};
use mlbvae::emohead::build_mask;
use mlbvae::mlmetrics::{example_ap, EvalBatch};
use proptest::prelude::*;

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_samples: 60,
        view_dim: 6,
        n_labels: 5,
        latent_dim: 3,
        n_groups: 2,
        seed,
        ..SyntheticSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn write_then_read_is_bitwise_identical(seed in any::<u64>(), ratings in any::<bool>(), raw in any::<bool>()) {
        let (mut ds, _) = generate_synthetic(&small_spec(seed)).unwrap();
        if ratings {
            let r: Vec<f32> = ds.labels.iter().map(|&y| if y == 1 { 0.75 } else { 0.05 }).collect();
            ds.labels = threshold_ratings(&r, 0.1).unwrap();
            ds.ratings = Some(r);
            ds.meta.has_ratings = true;
            ds.meta.threshold = Some(0.1);
        }
        if raw {
            ds.raw = Some(RawViews { dim: 2, left: vec![1.5; 120], right: vec![-0.5; 120] });
            ds.meta.raw_dim = Some(2);
        }
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.left), bits(&ds.left));
        prop_assert_eq!(bits(&back.right), bits(&ds.right));
        prop_assert_eq!(&back, &ds);
    }

    #[test]
    fn difference_view_is_exact(seed in any::<u64>()) {
        let (ds, _) = generate_synthetic(&small_spec(seed)).unwrap();
        let rows: Vec<usize> = (0..ds.n_samples()).collect();
        let b32 = ds.views::<f32>(&rows, None).unwrap();
        for i in rows {
            let diff = ds.diff_row(i);
            prop_assert_eq!(b32.view(View::Diff).row(i), diff.as_slice());
            for j in 0..ds.width() {
                prop_assert_eq!(ds.diff_row(i)[j], ds.left_row(i)[j] - ds.right_row(i)[j]);
            }
        }
        let std = Standardizer::fit(&ds, &[0, 1, 2, 3, 4, 5]).unwrap();
        let b64 = ds.views::<f64>(&[7, 8], Some(&std)).unwrap();
        for i in 0..2 {
            for j in 0..ds.width() {
                let l = b64.view(View::Left).row(i)[j];
                let r = b64.view(View::Right).row(i)[j];
                prop_assert_eq!(b64.view(View::Diff).row(i)[j], l - r);
            }
        }
    }

    #[test]
    fn kfold_partitions_exactly(n in 2usize..400, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let s = make_splits(n, SplitScheme::Kfold { k }, seed).unwrap();
        let mut seen = vec![0u8; n];
        for f in &s.folds {
            for &i in f { seen[i] += 1; }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = s.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let split = s.split(0).unwrap();
        prop_assert_eq!(split.train.len() + split.test.len(), n);
        prop_assert_eq!(&s, &make_splits(n, SplitScheme::Kfold { k }, seed).unwrap());
    }
}

#[test]
fn benchmark_sized_splits() {
    let s = make_splits(2196, SplitScheme::Kfold { k: 10 }, 1).unwrap();
    assert_eq!(s.folds.iter().map(Vec::len).sum::<usize>(), 2196);
    let f = make_splits(5400, SplitScheme::Fixed { train: 3600, test: 1800 }, 1).unwrap();
    let split = f.split(0).unwrap();
    assert_eq!((split.train.len(), split.test.len()), (3600, 1800));
    assert!(make_splits(5000, SplitScheme::Fixed { train: 3600, test: 1800 }, 1).is_err());
    assert!(make_splits(5, SplitScheme::Kfold { k: 6 }, 1).is_err());
}

#[test]
fn generator_is_seed_deterministic_and_hits_density() {
    let spec = SyntheticSpec::default();
    let (a, truth) = generate_synthetic(&spec).unwrap();
    let (b, _) = generate_synthetic(&spec).unwrap();
    assert_eq!(a, b);
    let density = a.labels.iter().map(|&y| f64::from(y)).sum::<f64>() / a.labels.len() as f64;
    assert!((density - 0.17).abs() < 0.03, "density {density}");
    assert_eq!((a.n_samples(), a.width(), a.n_labels()), (2000, 128, 27));
    assert_eq!(truth.latent.len(), 2000);
    let (c, _) = generate_synthetic(&SyntheticSpec { seed: 28, ..spec }).unwrap();
    assert_ne!(a.left, c.left);
}

#[test]
fn label_groups_show_up_in_the_mask() {
    let spec = SyntheticSpec {
        n_samples: 4000,
        n_labels: 10,
        n_groups: 2,
        ..SyntheticSpec::default()
    };
    let (ds, truth) = generate_synthetic(&spec).unwrap();
    let rows: Vec<usize> = (0..ds.n_samples()).collect();
    let mask = build_mask(&ds.label_rows(&rows)).unwrap();
    let (mut within, mut across, mut nw, mut na) = (0.0, 0.0, 0, 0);
    for j in 0..10 {
        for k in 0..10 {
            if j == k {
                continue;
            }
            if truth.label_group[j] == truth.label_group[k] {
                within += mask.get(j, k);
                nw += 1;
            } else {
                across += mask.get(j, k);
                na += 1;
            }
        }
    }
    let (within, across) = (within / nw as f64, across / na as f64);
    assert!(within > across + 0.05, "within {within} across {across}");
}

/// Solves the symmetric positive definite system `a x = b` by Cholesky.
fn cholesky_solve(mut a: Vec<Vec<f64>>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    for j in 0..n {
        for k in 0..j {
            let v = a[j][k];
            for i in j..n {
                a[i][j] -= a[i][k] * v;
            }
        }
        let d = a[j][j].sqrt();
        for i in j..n {
            a[i][j] /= d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i][k] * y[k];
        }
        y[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k][i] * y[k];
        }
        y[i] /= a[i][i];
    }
    y
}

#[test]
fn noiseless_data_admits_a_near_perfect_linear_readout() {
    let spec = SyntheticSpec {
        n_samples: 600,
        view_dim: 16,
        n_labels: 6,
        latent_dim: 4,
        noise: 0.0,
        deterministic_labels: true,
        ..SyntheticSpec::default()
    };
    let (ds, truth) = generate_synthetic(&spec).unwrap();
    let (train, test): (Vec<usize>, Vec<usize>) = (0..600).partition(|i| i % 3 != 0);
    let d = ds.width() + 1;
    let x = |i: usize| -> Vec<f64> {
        let mut v: Vec<f64> = ds.left_row(i).iter().map(|&a| f64::from(a)).collect();
        v.push(1.0);
        v
    };
    let mut gram = vec![vec![0.0; d]; d];
    for &i in &train {
        let xi = x(i);
        for a in 0..d {
            for b in 0..d {
                gram[a][b] += xi[a] * xi[b];
            }
        }
    }
    for (a, row) in gram.iter_mut().enumerate() {
        row[a] += 1e-9;
    }
    let mut scores = vec![0.0; test.len() * 6];
    for c in 0..6 {
        // Regress the true label logit on the left view.
        let target = |i: usize| -> f64 {
            truth.latent[i].iter().zip(&truth.label_weights[c]).map(|(t, w)| t * w).sum::<f64>() + truth.label_bias[c]
        };
        let mut rhs = vec![0.0; d];
        for &i in &train {
            let xi = x(i);
            let t = target(i);
            for a in 0..d {
                rhs[a] += xi[a] * t;
            }
        }
        let beta = cholesky_solve(gram.clone(), &rhs);
        for (r, &i) in test.iter().enumerate() {
            scores[r * 6 + c] = x(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
        }
    }
    let labels: Vec<u8> = test.iter().flat_map(|&i| ds.label_row(i).to_vec()).collect();
    let batch = EvalBatch::new(test.len(), 6, scores, labels).unwrap();
    let eap = example_ap(&batch).value;
    assert!(eap > 0.98, "e-AP {eap}");
}
