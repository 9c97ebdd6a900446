//! ROI pooling: each ROI's voxel bounding box is cut into an `s×s×s` grid
//! of equal subvolumes and the voxel activities in each cell are averaged.
//!
//! Along each axis the bins are half-open `[lo, hi)` except the last, which
//! is closed. An axis whose voxels all share one coordinate gets a single
//! bin. The occupied grid `bx×by×bz` is flattened with `x` slowest and `z`
//! fastest, then zero-padded to `n_roif` entries. Empty cells read 0.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hemisphere {
    Left,
    Right,
}

impl Hemisphere {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Hemisphere::Left),
            "right" | "r" => Ok(Hemisphere::Right),
            other => Err(Error::Input(format!("unknown hemisphere {other:?}"))),
        }
    }
}

/// Static description of one voxel from the ROI assignment table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoxelInfo {
    /// Column of this voxel in the activity file.
    pub voxel_id: usize,
    pub roi_id: u32,
    pub hemisphere: Hemisphere,
    pub coord: [u32; 3],
}

/// A voxel with its activity for one stimulus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelRecord {
    pub info: VoxelInfo,
    pub activity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiPoolConfig {
    n_roif: usize,
    side: usize,
}

impl RoiPoolConfig {
    pub fn new(n_roif: usize) -> Result<Self> {
        let side = (1..=n_roif).find(|s| s * s * s >= n_roif).unwrap_or(0);
        if n_roif == 0 || side * side * side != n_roif {
            return Err(Error::Config(format!("n_roif must be a positive perfect cube, got {n_roif}")));
        }
        Ok(Self { n_roif, side })
    }

    pub fn n_roif(&self) -> usize {
        self.n_roif
    }

    /// Bins per axis.
    pub fn side(&self) -> usize {
        self.side
    }
}

/// Bin index of `c` on an axis spanning `[lo, hi]` split into `s` bins.
fn bin(c: u32, lo: u32, hi: u32, s: usize) -> usize {
    if hi == lo {
        return 0;
    }
    let offset = u64::from(c - lo) * s as u64;
    let b = (offset / u64::from(hi - lo)) as usize;
    b.min(s - 1)
}

/// Cell layout of one ROI: per-voxel output slot, fixed by coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
struct RoiLayout {
    slots: Vec<usize>,
}

fn layout(coords: &[[u32; 3]], cfg: RoiPoolConfig) -> RoiLayout {
    let s = cfg.side;
    let mut lo = [u32::MAX; 3];
    let mut hi = [0u32; 3];
    for c in coords {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let bins: [usize; 3] = std::array::from_fn(|a| if hi[a] == lo[a] { 1 } else { s });
    let slots = coords
        .iter()
        .map(|c| {
            let b: [usize; 3] = std::array::from_fn(|a| bin(c[a], lo[a], hi[a], s));
            (b[0] * bins[1] + b[1]) * bins[2] + b[2]
        })
        .collect();
    RoiLayout { slots }
}

fn pool_with(slots: &[usize], activity: impl Iterator<Item = f64>, n_roif: usize, out: &mut [f64]) {
    let mut count = vec![0u32; n_roif];
    out.iter_mut().for_each(|v| *v = 0.0);
    for (&slot, a) in slots.iter().zip(activity) {
        out[slot] += a;
        count[slot] += 1;
    }
    for (v, &n) in out.iter_mut().zip(&count) {
        if n > 0 {
            *v /= f64::from(n);
        }
    }
}

/// Pools one ROI's voxels into `n_roif` features.
pub fn pool_roi(voxels: &[VoxelRecord], cfg: RoiPoolConfig) -> Result<Vec<f64>> {
    let first = voxels
        .first()
        .ok_or_else(|| Error::Input("pool_roi needs at least one voxel".into()))?;
    if voxels
        .iter()
        .any(|v| v.info.roi_id != first.info.roi_id || v.info.hemisphere != first.info.hemisphere)
    {
        return Err(Error::Input("pool_roi voxels must share ROI and hemisphere".into()));
    }
    let coords: Vec<[u32; 3]> = voxels.iter().map(|v| v.info.coord).collect();
    let lay = layout(&coords, cfg);
    let mut out = vec![0.0; cfg.n_roif];
    pool_with(&lay.slots, voxels.iter().map(|v| v.activity), cfg.n_roif, &mut out);
    Ok(out)
}

/// Pools every ROI of `atlas_order` and concatenates the blocks.
pub fn pool_hemisphere(voxels: &[VoxelRecord], atlas_order: &[u32], cfg: RoiPoolConfig) -> Result<Vec<f64>> {
    let mut by_roi: BTreeMap<u32, Vec<VoxelRecord>> = BTreeMap::new();
    for v in voxels {
        by_roi.entry(v.info.roi_id).or_default().push(*v);
    }
    let mut out = Vec::with_capacity(atlas_order.len() * cfg.n_roif);
    for roi in atlas_order {
        let members = by_roi
            .get(roi)
            .ok_or_else(|| Error::Input(format!("ROI {roi} is listed in the atlas but has no voxels")))?;
        out.extend(pool_roi(members, cfg)?);
    }
    Ok(out)
}

/// Parsed ROI assignment table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiTable {
    pub voxels: Vec<VoxelInfo>,
}

impl RoiTable {
    /// Comma-separated `voxel_id, roi_id, hemisphere, x, y, z` after one
    /// header line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        lines
            .next()
            .ok_or_else(|| Error::Input("ROI table is empty".into()))?;
        let mut voxels = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let lineno = i + 2;
            if f.len() != 6 {
                return Err(Error::Input(format!("ROI table line {lineno}: expected 6 fields, got {}", f.len())));
            }
            let num = |s: &str, what: &str| -> Result<u64> {
                s.parse::<u64>()
                    .map_err(|_| Error::Input(format!("ROI table line {lineno}: {what} {s:?} is not a non-negative integer")))
            };
            let coord = [num(f[3], "x")?, num(f[4], "y")?, num(f[5], "z")?];
            if coord.iter().any(|&c| c > u64::from(u32::MAX)) {
                return Err(Error::Input(format!("ROI table line {lineno}: coordinate out of range")));
            }
            voxels.push(VoxelInfo {
                voxel_id: num(f[0], "voxel_id")? as usize,
                roi_id: u32::try_from(num(f[1], "roi_id")?)
                    .map_err(|_| Error::Input(format!("ROI table line {lineno}: roi_id out of range")))?,
                hemisphere: Hemisphere::parse(f[2])?,
                coord: coord.map(|c| c as u32),
            });
        }
        let table = Self { voxels };
        table.check_ids()?;
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::data(path, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("voxel_id,roi_id,hemisphere,x,y,z\n");
        for v in &self.voxels {
            let h = match v.hemisphere {
                Hemisphere::Left => "left",
                Hemisphere::Right => "right",
            };
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                v.voxel_id, v.roi_id, h, v.coord[0], v.coord[1], v.coord[2]
            ));
        }
        s
    }

    /// Voxel ids must be exactly `0..n_voxels`.
    fn check_ids(&self) -> Result<()> {
        let mut seen = vec![false; self.voxels.len()];
        for v in &self.voxels {
            match seen.get_mut(v.voxel_id) {
                Some(s) if !*s => *s = true,
                Some(_) => return Err(Error::Input(format!("duplicate voxel_id {}", v.voxel_id))),
                None => {
                    return Err(Error::Input(format!(
                        "voxel_id {} out of range for {} voxels",
                        v.voxel_id,
                        self.voxels.len()
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn n_voxels(&self) -> usize {
        self.voxels.len()
    }

    /// ROI ids of one hemisphere in ascending order.
    pub fn atlas_order(&self, h: Hemisphere) -> Vec<u32> {
        self.voxels
            .iter()
            .filter(|v| v.hemisphere == h)
            .map(|v| v.roi_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Precomputed pooling plan for one hemisphere: every voxel's output slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiPooler {
    pub cfg: RoiPoolConfig,
    pub hemisphere: Hemisphere,
    pub atlas_order: Vec<u32>,
    /// Per ROI block: (activity columns, slots).
    blocks: Vec<(Vec<usize>, RoiLayout)>,
}

impl RoiPooler {
    pub fn new(table: &RoiTable, hemisphere: Hemisphere, atlas_order: &[u32], cfg: RoiPoolConfig) -> Result<Self> {
        let mut blocks = Vec::with_capacity(atlas_order.len());
        for &roi in atlas_order {
            let members: Vec<&VoxelInfo> = table
                .voxels
                .iter()
                .filter(|v| v.hemisphere == hemisphere && v.roi_id == roi)
                .collect();
            if members.is_empty() {
                return Err(Error::Input(format!("ROI {roi} is listed in the atlas but has no voxels")));
            }
            let coords: Vec<[u32; 3]> = members.iter().map(|v| v.coord).collect();
            blocks.push((members.iter().map(|v| v.voxel_id).collect(), layout(&coords, cfg)));
        }
        Ok(Self {
            cfg,
            hemisphere,
            atlas_order: atlas_order.to_vec(),
            blocks,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.blocks.len() * self.cfg.n_roif
    }

    /// Pools one activity row (all voxels of the table, by voxel id).
    pub fn pool(&self, activity: &[f32]) -> Vec<f64> {
        let n = self.cfg.n_roif;
        let mut out = vec![0.0; self.out_dim()];
        for (b, (cols, lay)) in self.blocks.iter().enumerate() {
            let vals = cols.iter().map(|&c| f64::from(activity[c]));
            pool_with(&lay.slots, vals, n, &mut out[b * n..(b + 1) * n]);
        }
        out
    }

    /// Raw activities of this hemisphere, ROI by ROI in atlas order.
    pub fn raw(&self, activity: &[f32]) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|(cols, _)| cols.iter().map(|&c| f64::from(activity[c])))
            .collect()
    }

    pub fn raw_dim(&self) -> usize {
        self.blocks.iter().map(|(c, _)| c.len()).sum()
    }
}
