//! Basin spanning tree clustering over Voronoi cell densities.
//!
//! Every non-empty cell points at its densest neighbor; cells denser than
//! or as dense as all their neighbors are roots. Following parent links is
//! a gradient ascent, so each tree of the forest is one density basin.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voronoi::{Adjacency, VoronoiIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    /// Member count over cell volume.
    #[default]
    CountPerVolume,
    InverseVolume,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinForest {
    /// `None` for cells without members.
    pub parent: Vec<Option<u32>>,
    /// Root cell of each non-empty cell's basin, after any merging.
    pub cluster: Vec<Option<u32>>,
    pub density: Vec<f64>,
    /// Cells whose Monte-Carlo volume was zero and got the fallback volume.
    pub volume_fallback: Vec<bool>,
}

impl BasinForest {
    pub fn roots(&self) -> Vec<usize> {
        (0..self.parent.len())
            .filter(|&c| self.parent[c] == Some(c as u32))
            .collect()
    }

    /// Distinct cluster ids, ascending.
    pub fn clusters(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.cluster.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Cluster of every point through its cell.
    pub fn point_clusters(&self, assignment: &[u32]) -> Vec<u32> {
        assignment
            .iter()
            .map(|&c| self.cluster[c as usize].expect("assigned cells are non-empty"))
            .collect()
    }
}

/// Per-cell densities; empty cells get 0. Zero-volume cells use half the
/// volume of one Monte-Carlo hit and are flagged.
pub fn cell_densities(idx: &VoronoiIndex, mode: DensityMode) -> (Vec<f64>, Vec<bool>) {
    let v = idx.volumes();
    let half_hit = 0.5 * v.bbox.volume() / v.samples as f64;
    let mut flags = vec![false; idx.seed_count()];
    let dens = (0..idx.seed_count())
        .map(|c| {
            let count = idx.members(c).len();
            if count == 0 {
                return 0.0;
            }
            let mut vol = v.volume(c);
            if vol <= 0.0 {
                vol = half_hit;
                flags[c] = true;
            }
            match mode {
                DensityMode::CountPerVolume => count as f64 / vol,
                DensityMode::InverseVolume => 1.0 / vol,
            }
        })
        .collect();
    (dens, flags)
}

pub fn build_bst(idx: &VoronoiIndex, mode: DensityMode) -> BasinForest {
    let (density, flags) = cell_densities(idx, mode);
    let active: Vec<bool> = (0..idx.seed_count())
        .map(|c| !idx.members(c).is_empty())
        .collect();
    let mut f = forest_from_densities(idx.adjacency(), &density, &active);
    f.volume_fallback = flags;
    f
}

/// Forest over an arbitrary graph; inactive cells are left out entirely.
pub fn forest_from_densities(adj: &Adjacency, density: &[f64], active: &[bool]) -> BasinForest {
    let n = density.len();
    let mut parent = vec![None; n];
    for c in 0..n {
        if !active[c] {
            continue;
        }
        let mut best: Option<usize> = None;
        for &nb in adj.neighbors(c) {
            let nb = nb as usize;
            if !active[nb] {
                continue;
            }
            // Neighbor lists are ascending, so `>` keeps the smaller id on ties.
            if best.is_none_or(|b| density[nb] > density[b]) {
                best = Some(nb);
            }
        }
        parent[c] = Some(match best {
            Some(b) if density[b] > density[c] => b as u32,
            _ => c as u32,
        });
    }
    let mut cluster = vec![None; n];
    for c in 0..n {
        if parent[c].is_none() || cluster[c].is_some() {
            continue;
        }
        let mut path = vec![c];
        let mut cur = c;
        let root = loop {
            let p = parent[cur].expect("active") as usize;
            if let Some(r) = cluster[p] {
                break r;
            }
            if p == cur {
                break cur as u32;
            }
            path.push(p);
            cur = p;
        };
        for q in path {
            cluster[q] = Some(root);
        }
    }
    BasinForest {
        parent,
        cluster,
        density: density.to_vec(),
        volume_fallback: vec![false; n],
    }
}

/// Merges basins whose peak rises less than `tau` times its own height
/// above the best saddle connecting it to a higher basin. Saddles are
/// processed from highest to lowest; the surviving id is the higher peak
/// (smaller id on ties).
pub fn merge_basins(forest: &mut BasinForest, adj: &Adjacency, tau: f64) -> Result<()> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "merge tau {tau} must be >= 0"
        )));
    }
    let dens = &forest.density;
    let mut saddles: Vec<(f64, u32, u32)> = Vec::new();
    for (a, b) in adj.edges() {
        let (Some(ca), Some(cb)) = (forest.cluster[a as usize], forest.cluster[b as usize]) else {
            continue;
        };
        if ca != cb {
            saddles.push((dens[a as usize].min(dens[b as usize]), ca, cb));
        }
    }
    saddles.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut uf: BTreeMap<u32, u32> = BTreeMap::new();
    fn find(uf: &mut BTreeMap<u32, u32>, x: u32) -> u32 {
        let p = *uf.get(&x).unwrap_or(&x);
        if p == x {
            return x;
        }
        let r = find(uf, p);
        uf.insert(x, r);
        r
    }
    let higher = |a: u32, b: u32| -> (u32, u32) {
        let (da, db) = (dens[a as usize], dens[b as usize]);
        if da > db || (da == db && a < b) {
            (a, b)
        } else {
            (b, a)
        }
    };
    for (saddle, a, b) in saddles {
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        if ra == rb {
            continue;
        }
        let (hi, lo) = higher(ra, rb);
        let peak = dens[lo as usize];
        if peak - saddle < tau * peak {
            uf.insert(lo, hi);
        }
    }
    for c in 0..forest.cluster.len() {
        if let Some(r) = forest.cluster[c] {
            forest.cluster[c] = Some(find(&mut uf, r));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: u32,
    pub size: usize,
    pub majority_label: i32,
    pub majority_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    pub clusters: Vec<ClusterSummary>,
    /// Fraction of points whose label equals their cluster's majority label.
    pub accuracy: f64,
}

/// Majority-label purity; label ties go to the smaller label.
pub fn evaluate_purity(point_clusters: &[u32], labels: &[i32]) -> Result<PurityReport> {
    if point_clusters.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} cluster ids but {} labels",
            point_clusters.len(),
            labels.len()
        )));
    }
    let mut counts: BTreeMap<u32, BTreeMap<i32, usize>> = BTreeMap::new();
    for (&c, &l) in point_clusters.iter().zip(labels) {
        *counts.entry(c).or_default().entry(l).or_default() += 1;
    }
    let mut correct = 0;
    let clusters: Vec<ClusterSummary> = counts
        .into_iter()
        .map(|(cluster, by_label)| {
            let size = by_label.values().sum();
            let (majority_label, majority_count) = by_label.iter().fold(
                (i32::MIN, 0),
                |acc, (&l, &n)| if n > acc.1 { (l, n) } else { acc },
            );
            correct += majority_count;
            ClusterSummary {
                cluster,
                size,
                majority_label,
                majority_count,
            }
        })
        .collect();
    let accuracy = if labels.is_empty() {
        1.0
    } else {
        correct as f64 / labels.len() as f64
    };
    Ok(PurityReport { clusters, accuracy })
}
