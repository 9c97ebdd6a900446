//! ROI pooling against an explicit cell-enumeration oracle, plus shape
//! and linearity properties.

use mlbvae::roipool::{pool_hemisphere, pool_roi, Hemisphere, RoiPoolConfig, RoiPooler, RoiTable, VoxelInfo, VoxelRecord};
use proptest::prelude::*;

/// Cell of `c` found by scanning the bin list: bin `k` covers
/// `[lo + k·w, lo + (k+1)·w)` with `w = (hi − lo)/s`, and the last bin
/// also takes `hi`. Compared in integers scaled by `s`.
fn oracle_bin(c: u32, lo: u32, hi: u32, s: usize) -> usize {
    if lo == hi {
        return 0;
    }
    let (c, lo, hi, s64) = (c as u64, lo as u64, hi as u64, s as u64);
    (0..s)
        .find(|&k| {
            let left = lo * s64 + (hi - lo) * k as u64;
            let right = lo * s64 + (hi - lo) * (k as u64 + 1);
            let cs = c * s64;
            left <= cs && (cs < right || k + 1 == s)
        })
        .expect("every coordinate falls in some bin")
}

fn oracle_pool(voxels: &[VoxelRecord], s: usize) -> Vec<f64> {
    let lo: [u32; 3] = std::array::from_fn(|a| voxels.iter().map(|v| v.info.coord[a]).min().unwrap());
    let hi: [u32; 3] = std::array::from_fn(|a| voxels.iter().map(|v| v.info.coord[a]).max().unwrap());
    let bins: [usize; 3] = std::array::from_fn(|a| if lo[a] == hi[a] { 1 } else { s });
    let mut out = vec![0.0; s * s * s];
    let mut idx = 0;
    for bx in 0..bins[0] {
        for by in 0..bins[1] {
            for bz in 0..bins[2] {
                let members: Vec<f64> = voxels
                    .iter()
                    .filter(|v| {
                        let c = v.info.coord;
                        oracle_bin(c[0], lo[0], hi[0], s) == bx
                            && oracle_bin(c[1], lo[1], hi[1], s) == by
                            && oracle_bin(c[2], lo[2], hi[2], s) == bz
                    })
                    .map(|v| v.activity)
                    .collect();
                if !members.is_empty() {
                    out[idx] = members.iter().sum::<f64>() / members.len() as f64;
                }
                idx += 1;
            }
        }
    }
    out
}

fn voxels() -> impl Strategy<Value = Vec<VoxelRecord>> {
    prop::collection::vec(((0u32..7, 0u32..7, 0u32..7), -3.0f64..3.0), 1..40).prop_map(|items| {
        items
            .into_iter()
            .enumerate()
            .map(|(i, ((x, y, z), a))| VoxelRecord {
                info: VoxelInfo { voxel_id: i, roi_id: 1, hemisphere: Hemisphere::Left, coord: [x, y, z] },
                activity: a,
            })
            .collect()
    })
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_cell_enumeration(v in voxels(), side in 1usize..5) {
        let cfg = RoiPoolConfig::new(side * side * side).unwrap();
        let got = pool_roi(&v, cfg).unwrap();
        prop_assert_eq!(got.len(), cfg.n_roif());
        prop_assert!(close(&got, &oracle_pool(&v, side)));
    }

    #[test]
    fn every_voxel_lands_in_exactly_one_cell(v in voxels(), side in 1usize..5) {
        let lo: [u32; 3] = std::array::from_fn(|a| v.iter().map(|r| r.info.coord[a]).min().unwrap());
        let hi: [u32; 3] = std::array::from_fn(|a| v.iter().map(|r| r.info.coord[a]).max().unwrap());
        for r in &v {
            for a in 0..3 {
                let hits = (0..side).filter(|&k| oracle_bin(r.info.coord[a], lo[a], hi[a], side) == k).count();
                prop_assert_eq!(hits, 1);
            }
        }
        // With unit activities the cell means are 1 exactly where occupied.
        let ones: Vec<VoxelRecord> = v.iter().map(|r| VoxelRecord { activity: 1.0, ..*r }).collect();
        let cfg = RoiPoolConfig::new(side * side * side).unwrap();
        let pooled = pool_roi(&ones, cfg).unwrap();
        prop_assert!(pooled.iter().all(|&p| p == 0.0 || p == 1.0));
    }

    #[test]
    fn order_of_voxels_is_irrelevant(v in voxels(), seed in any::<u64>()) {
        let cfg = RoiPoolConfig::new(8).unwrap();
        let mut w = v.clone();
        mlbvae::ndcore::Rng::new(seed).shuffle(&mut w);
        prop_assert!(close(&pool_roi(&v, cfg).unwrap(), &pool_roi(&w, cfg).unwrap()));
    }

    #[test]
    fn pooling_is_linear_in_activity(v in voxels(), c in -4.0f64..4.0) {
        let cfg = RoiPoolConfig::new(27).unwrap();
        let base = pool_roi(&v, cfg).unwrap();
        let scaled: Vec<VoxelRecord> = v.iter().map(|r| VoxelRecord { activity: c * r.activity, ..*r }).collect();
        let got = pool_roi(&scaled, cfg).unwrap();
        let want: Vec<f64> = base.iter().map(|b| c * b).collect();
        prop_assert!(close(&got, &want));
    }
}

#[test]
fn constant_activity_with_full_cells() {
    let cfg = RoiPoolConfig::new(8).unwrap();
    let mut v = Vec::new();
    for roi in [5u32, 9] {
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..4 {
                    v.push(VoxelRecord {
                        info: VoxelInfo { voxel_id: v.len(), roi_id: roi, hemisphere: Hemisphere::Right, coord: [x, y, z] },
                        activity: 0.75,
                    });
                }
            }
        }
    }
    let out = pool_hemisphere(&v, &[5, 9], cfg).unwrap();
    assert_eq!(out, vec![0.75; 16]);
}

#[test]
fn seventy_four_rois_give_592_features_per_hemisphere() {
    let mut text = String::from("voxel_id,roi_id,hemisphere,x,y,z\n");
    let mut id = 0;
    for h in ["left", "right"] {
        for roi in 0..74 {
            for k in 0..10u32 {
                text.push_str(&format!("{id},{roi},{h},{},{},{}\n", k % 3, (k / 3) % 3, k % 2));
                id += 1;
            }
        }
    }
    let table = RoiTable::parse(&text).unwrap();
    let cfg = RoiPoolConfig::new(8).unwrap();
    for h in [Hemisphere::Left, Hemisphere::Right] {
        let order = table.atlas_order(h);
        assert_eq!(order.len(), 74);
        let pooler = RoiPooler::new(&table, h, &order, cfg).unwrap();
        assert_eq!(pooler.out_dim(), 592);
        let activity: Vec<f32> = (0..table.n_voxels()).map(|i| i as f32 * 0.01).collect();
        let fast = pooler.pool(&activity);
        assert_eq!(fast.len(), 592);
        let records: Vec<VoxelRecord> = table
            .voxels
            .iter()
            .filter(|v| v.hemisphere == h)
            .map(|&info| VoxelRecord { info, activity: f64::from(activity[info.voxel_id]) })
            .collect();
        assert_eq!(fast, pool_hemisphere(&records, &order, cfg).unwrap());
    }
}
