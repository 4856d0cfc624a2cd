//! Exact k-nearest-neighbor search by growing a region of kd-tree leaves.
//!
//! The search keeps two lists: the result list (the best `k` points seen so
//! far, ascending) and a frontier of admitted leaves. Starting from the leaf
//! that contains the query, every examined leaf contributes boundary points:
//! for each leaf touching it, the point of their shared boundary patch
//! closest to the query (a projection of the query onto a face, clamped to
//! the patch, which degenerates to a box vertex). A boundary point closer
//! than `m`, the current k-th distance, admits the leaf on the other side.
//! Leaves are examined in order of their lower-bound distance; once the
//! nearest admitted leaf is farther than `m` nothing outside the examined
//! region can enter the list.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::dataset::PointSet;
use crate::error::{Error, Result};
use crate::geometry::dist_sq;
use crate::kdtree::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

/// Up to `k` neighbors ordered by (distance, id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub k: usize,
    pub entries: Vec<Neighbor>,
}

impl NeighborList {
    pub fn ids(&self) -> Vec<usize> {
        self.entries.iter().map(|n| n.id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distance of the last entry when the list is full, otherwise infinity.
    pub fn kth_distance(&self) -> f64 {
        if self.entries.len() < self.k {
            f64::INFINITY
        } else {
            self.entries.last().map_or(f64::INFINITY, |n| n.distance)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnnStats {
    pub leaves_examined: usize,
    pub points_examined: usize,
    /// Boundary points generated (one per examined leaf / touching leaf pair).
    pub boundary_points: usize,
    /// Lower-bound distance of each examined leaf, in examination order.
    pub visit_bounds: Vec<f64>,
    /// k-th distance after each examined leaf.
    pub kth_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64, usize);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn validate(dim: usize, n: usize, p: &[f64], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::Empty);
    }
    if p.len() != dim {
        return Err(Error::Dim {
            expected: dim,
            got: p.len(),
        });
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("query point is not finite".into()));
    }
    Ok(())
}

fn finish(k: usize, best: Vec<Key>) -> NeighborList {
    NeighborList {
        k,
        entries: best
            .into_iter()
            .map(|Key(d2, id)| Neighbor {
                id,
                distance: d2.sqrt(),
            })
            .collect(),
    }
}

/// Exact kNN over the kd-tree; ties in distance go to the smaller id.
pub fn knn_search(tree: &KdTree, ps: &PointSet, p: &[f64], k: usize) -> Result<NeighborList> {
    knn_search_with_stats(tree, ps, p, k).map(|(l, _)| l)
}

pub fn knn_search_with_stats(
    tree: &KdTree,
    ps: &PointSet,
    p: &[f64],
    k: usize,
) -> Result<(NeighborList, KnnStats)> {
    validate(tree.dim(), ps.len(), p, k)?;
    if ps.len() != tree.len() || ps.dim() != tree.dim() {
        return Err(Error::InvalidParameter(
            "point set does not match the tree".into(),
        ));
    }
    let nleaves = tree.leaf_count();
    let mut admitted = vec![false; nleaves];
    let mut best: Vec<Key> = Vec::with_capacity(k + 1);
    let mut stats = KnnStats::default();
    let mut frontier = BinaryHeap::new();
    let mut touching = Vec::new();
    let mut scratch: Vec<Key> = Vec::new();

    let start = tree.locate_leaf(p);
    admitted[start] = true;
    frontier.push(Reverse(Key(tree.leaf(start).cell.min_dist_sq(p), start)));

    while let Some(Reverse(Key(bound, leaf))) = frontier.pop() {
        let m = kth(&best, k);
        if bound > m {
            break;
        }
        stats.leaves_examined += 1;
        stats.visit_bounds.push(bound.sqrt());

        // Entries closer than the leaf's lower bound cannot be displaced;
        // only the best k − f leaf points can matter.
        let f = best.partition_point(|e| e.0 < bound);
        let need = k - f;
        let node = tree.leaf_node(leaf);
        let start = tree.nodes()[node].start;
        let pts = tree.node_points(node);
        stats.points_examined += pts.len();
        scratch.clear();
        scratch.extend(
            pts.iter()
                .enumerate()
                .map(|(j, &id)| Key(tree.dist_sq_at(start + j, p), id)),
        );
        if scratch.len() > need {
            scratch.select_nth_unstable(need - 1);
            scratch.truncate(need);
        }
        best.extend_from_slice(&scratch);
        best.sort_unstable();
        best.truncate(k);
        let m = kth(&best, k);
        stats.kth_history.push(m.sqrt());

        let cell = &tree.nodes()[node].cell;
        tree.leaves_touching(cell, &mut touching);
        for &q in &touching {
            if admitted[q] {
                continue;
            }
            let qcell = &tree.leaf(q).cell;
            let Some(shared) = cell.intersection(qcell) else {
                continue;
            };
            stats.boundary_points += 1;
            let b = shared.clamp(p);
            if dist_sq(&b, p) <= m {
                admitted[q] = true;
                frontier.push(Reverse(Key(qcell.min_dist_sq(p), q)));
            }
        }
    }
    Ok((finish(k, best), stats))
}

fn kth(best: &[Key], k: usize) -> f64 {
    if best.len() < k {
        f64::INFINITY
    } else {
        best[k - 1].0
    }
}

/// Full scan sorted by (distance, id), truncated to `k`.
pub fn knn_brute(ps: &PointSet, p: &[f64], k: usize) -> Result<NeighborList> {
    validate(ps.dim(), ps.len(), p, k)?;
    let mut all: Vec<Key> = (0..ps.len())
        .map(|id| Key(ps.dist_sq_to(id, p), id))
        .collect();
    if all.len() > k {
        all.select_nth_unstable(k - 1);
        all.truncate(k);
    }
    all.sort_unstable();
    Ok(finish(k, all))
}

/// Nearest neighbors of a stored point's own feature vector, excluding it.
pub fn similar_objects(
    tree: &KdTree,
    features: &PointSet,
    query_id: usize,
    k: usize,
) -> Result<NeighborList> {
    if query_id >= features.len() {
        return Err(Error::InvalidId(query_id));
    }
    let p = features.point(query_id);
    let mut l = knn_search(tree, features, &p, k + 1)?;
    l.entries.retain(|n| n.id != query_id);
    l.entries.truncate(k);
    l.k = k;
    Ok(l)
}
