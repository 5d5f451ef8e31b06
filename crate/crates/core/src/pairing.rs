//! Voxel-overlap scoring of view pairs and selection of six-view tuples
//! (two views per modality).

use std::collections::HashSet;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::frames::Modality;
use crate::{Error, Result};

pub const DEFAULT_CELL_M: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSet {
    cell: f64,
    pub occupied: HashSet<[i64; 3]>,
}

impl VoxelSet {
    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }
}

/// Integer cell of a point: `floor(p / cell)` per axis.
pub fn cell_of(p: &Vector3<f64>, cell: f64) -> [i64; 3] {
    [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
}

pub fn voxelize<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>, cell: f64) -> Result<VoxelSet> {
    if !(cell > 0.0) || !cell.is_finite() {
        return Err(Error::Configuration(format!("voxel size must be positive, got {cell}")));
    }
    let occupied = points
        .into_iter()
        .filter(|p| p.iter().all(|c| c.is_finite()))
        .map(|p| cell_of(p, cell))
        .collect();
    Ok(VoxelSet { cell, occupied })
}

fn same_cell(a: &VoxelSet, b: &VoxelSet) -> Result<()> {
    if a.cell != b.cell {
        return Err(Error::Configuration(format!("voxel sizes differ: {} vs {}", a.cell, b.cell)));
    }
    Ok(())
}

/// Number of cells occupied in both sets.
pub fn overlap_score(a: &VoxelSet, b: &VoxelSet) -> Result<usize> {
    same_cell(a, b)?;
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    Ok(small.occupied.iter().filter(|c| large.occupied.contains(*c)).count())
}

/// Intersection over union of the occupied cells (0 for two empty sets).
pub fn overlap_iou(a: &VoxelSet, b: &VoxelSet) -> Result<f64> {
    let inter = overlap_score(a, b)?;
    let union = a.len() + b.len() - inter;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairScore {
    Count,
    Iou,
}

/// A chosen tuple: indices into the satellite, UAV and ground candidate lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleChoice {
    pub satellite: [usize; 2],
    pub uav: [usize; 2],
    pub ground: [usize; 2],
    pub score: f64,
}

impl TupleChoice {
    fn key(&self) -> [usize; 6] {
        [self.satellite[0], self.satellite[1], self.uav[0], self.uav[1], self.ground[0], self.ground[1]]
    }
}

/// Candidate views of one region, grouped by modality, as voxelized clouds.
#[derive(Debug, Clone, Default)]
pub struct Candidates {
    pub satellite: Vec<VoxelSet>,
    pub uav: Vec<VoxelSet>,
    pub ground: Vec<VoxelSet>,
}

impl Candidates {
    pub fn from_clouds(clouds: &[(Modality, Vec<Vector3<f64>>)], cell: f64) -> Result<Self> {
        let mut out = Candidates::default();
        for (m, pts) in clouds {
            let v = voxelize(pts.iter(), cell)?;
            match m {
                Modality::Satellite => out.satellite.push(v),
                Modality::Uav => out.uav.push(v),
                Modality::Ground => out.ground.push(v),
            }
        }
        Ok(out)
    }

    fn flat(&self) -> (Vec<&VoxelSet>, [usize; 3]) {
        let all = self.satellite.iter().chain(&self.uav).chain(&self.ground).collect();
        (all, [0, self.satellite.len(), self.satellite.len() + self.uav.len()])
    }
}

fn two_subsets(n: usize) -> Vec<[usize; 2]> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| [a, b])).collect()
}

/// Best `k` tuples of two views per modality. Tuples with any empty pairwise
/// overlap are discarded; survivors are ranked by the sum of their 15 pairwise
/// scores, ties going to the lexicographically smaller index tuple.
pub fn select_tuples(c: &Candidates, k: usize, score: PairScore) -> Result<Vec<TupleChoice>> {
    if c.satellite.len() < 2 || c.uav.len() < 2 || c.ground.len() < 2 {
        return Err(Error::Validation("need at least two candidate views per modality".into()));
    }
    let (all, offsets) = c.flat();
    if let Some(v) = all.iter().find(|v| v.cell != all[0].cell) {
        return Err(Error::Configuration(format!("voxel sizes differ: {} vs {}", all[0].cell, v.cell)));
    }
    let n = all.len();
    let pair_scores: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|a| {
            (0..n)
                .map(|b| {
                    let count = overlap_score(all[a], all[b]).expect("cell sizes checked");
                    let s = match score {
                        PairScore::Count => count as f64,
                        PairScore::Iou => overlap_iou(all[a], all[b]).expect("cell sizes checked"),
                    };
                    (count, s)
                })
                .collect()
        })
        .collect();

    let mut found = Vec::new();
    for s in two_subsets(c.satellite.len()) {
        for u in two_subsets(c.uav.len()) {
            for g in two_subsets(c.ground.len()) {
                let idx = [
                    s[0] + offsets[0],
                    s[1] + offsets[0],
                    u[0] + offsets[1],
                    u[1] + offsets[1],
                    g[0] + offsets[2],
                    g[1] + offsets[2],
                ];
                let mut total = 0.0;
                let mut ok = true;
                for a in 0..6 {
                    for b in a + 1..6 {
                        let (count, sc) = pair_scores[idx[a]][idx[b]];
                        ok &= count > 0;
                        total += sc;
                    }
                }
                if ok {
                    found.push(TupleChoice {
                        satellite: s,
                        uav: u,
                        ground: g,
                        score: total,
                    });
                }
            }
        }
    }
    found.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.key().cmp(&b.key())));
    found.truncate(k);
    Ok(found)
}
