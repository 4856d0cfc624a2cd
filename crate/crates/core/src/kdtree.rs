//! Balanced kd-tree with post-order node numbering and polytope queries.
//!
//! The tree is perfect: every leaf sits at depth `levels`, and the leaf
//! count is the power of two nearest to `√N`, so leaves and points per leaf
//! are both about `√N`. The tree owns a permutation of point ids in which
//! every node's points form one contiguous range, plus one copy of the
//! coordinate columns in that order so a leaf is read sequentially.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::dataset::{read_f64s, write_f64s, PointSet, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, CompiledPolytope, Polytope};

pub const KD_MAGIC: &[u8; 4] = b"HGKD";

#[derive(Debug, Clone, PartialEq)]
pub struct KdNode {
    /// Unused (0) on leaves.
    pub split_dim: usize,
    /// Lower-median coordinate along `split_dim`; NaN on leaves.
    pub split_value: f64,
    /// Tight box around the node's points.
    pub bbox: BoundingBox,
    /// Region bounded by the ancestors' split planes (closed); leaf cells tile
    /// the root box.
    pub cell: BoundingBox,
    pub post_order_id: usize,
    pub first_leaf: usize,
    pub last_leaf: usize,
    /// Range into the permutation.
    pub start: usize,
    pub end: usize,
    pub level: usize,
}

impl KdNode {
    pub fn population(&self) -> usize {
        self.end - self.start
    }
}

/// Compact node summary served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub post_order_id: usize,
    pub level: usize,
    pub bbox: BoundingBox,
    pub population: usize,
}

/// Work counters for a polytope query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryStats {
    pub returned: usize,
    /// Points tested individually against the halfspaces.
    pub tested: usize,
    /// Points emitted without a test because their node lies inside.
    pub wholesale: usize,
    /// Leaves whose points were read (wholesale or filtered).
    pub leaves_touched: usize,
    /// Leaves whose points were filtered point by point.
    pub leaves_filtered: usize,
    pub nodes_visited: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeResult {
    pub ids: Vec<usize>,
    pub stats: QueryStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdTree {
    dim: usize,
    levels: usize,
    /// Heap order: children of `i` are `2i+1`, `2i+2`.
    nodes: Vec<KdNode>,
    permutation: Vec<usize>,
    /// Coordinate columns in permutation order, so a node's points are one
    /// contiguous run per column (the analog of a clustered cover index).
    clustered: Vec<Vec<f64>>,
}

/// Leaf count: the power of two nearest to `√n` (in log scale, ties up).
pub fn leaf_count(n: usize) -> usize {
    if n < 2 {
        return 1;
    }
    // Largest k with 4^k <= n.
    let mut k = 0u32;
    while (k + 1) < 32 && 4u128.pow(k + 1) <= n as u128 {
        k += 1;
    }
    if 2u128.pow(2 * k + 1) <= n as u128 {
        1 << (k + 1)
    } else {
        1 << k
    }
}

impl KdTree {
    /// Level-by-level build: each node splits at the lower median of its
    /// widest tight-box dimension, ties on the coordinate broken by point id.
    pub fn build(ps: &PointSet) -> Result<Self> {
        let n = ps.len();
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "kd-tree needs at least 2 points, got {n}"
            )));
        }
        let dim = ps.dim();
        let leaves = leaf_count(n);
        let levels = leaves.trailing_zeros() as usize;
        let total = 2 * leaves - 1;
        let mut permutation: Vec<usize> = (0..n).collect();
        let mut nodes: Vec<KdNode> = Vec::with_capacity(total);

        let root_box = tight_box(ps, &permutation);
        let mut level_ranges = vec![(0usize, n, root_box.clone())];
        for level in 0..=levels {
            let mut next = Vec::with_capacity(level_ranges.len() * 2);
            for (j, (start, end, cell)) in level_ranges.into_iter().enumerate() {
                let bbox = tight_box(ps, &permutation[start..end]);
                let span = leaves >> level;
                let mut node = KdNode {
                    split_dim: 0,
                    split_value: f64::NAN,
                    bbox,
                    cell,
                    post_order_id: 0,
                    first_leaf: j * span,
                    last_leaf: (j + 1) * span - 1,
                    start,
                    end,
                    level,
                };
                if level < levels {
                    let d = node.bbox.widest_dim();
                    let col = ps.column(d);
                    let slice = &mut permutation[start..end];
                    let m = (slice.len() - 1) / 2;
                    slice.select_nth_unstable_by(m, |&a, &b| {
                        col[a].total_cmp(&col[b]).then(a.cmp(&b))
                    });
                    let split_value = col[slice[m]];
                    node.split_dim = d;
                    node.split_value = split_value;
                    let mid = start + m + 1;
                    let mut lcell = node.cell.clone();
                    lcell.hi[d] = split_value;
                    let mut rcell = node.cell.clone();
                    rcell.lo[d] = split_value;
                    next.push((start, mid, lcell));
                    next.push((mid, end, rcell));
                }
                nodes.push(node);
            }
            level_ranges = next;
        }

        let clustered = cluster_columns(ps, &permutation);
        let mut tree = KdTree {
            dim,
            levels,
            nodes,
            permutation,
            clustered,
        };
        tree.number_post_order();
        Ok(tree)
    }

    fn number_post_order(&mut self) {
        let mut counter = 0;
        // Iterative post-order: (node, children_done).
        let mut stack = vec![(0usize, false)];
        while let Some((i, done)) = stack.pop() {
            if done || self.is_leaf(i) {
                self.nodes[i].post_order_id = counter;
                counter += 1;
            } else {
                stack.push((i, true));
                stack.push((2 * i + 2, false));
                stack.push((2 * i + 1, false));
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Depth of the leaves (root is level 0).
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn nodes(&self) -> &[KdNode] {
        &self.nodes
    }

    pub fn root(&self) -> &KdNode {
        &self.nodes[0]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.levels
    }

    #[inline]
    pub fn is_leaf(&self, node: usize) -> bool {
        2 * node + 1 >= self.nodes.len()
    }

    /// Heap index of leaf number `leaf` (left-to-right order).
    #[inline]
    pub fn leaf_node(&self, leaf: usize) -> usize {
        self.leaf_count() - 1 + leaf
    }

    pub fn leaf(&self, leaf: usize) -> &KdNode {
        &self.nodes[self.leaf_node(leaf)]
    }

    /// Point ids of a node (a contiguous slice of the permutation).
    pub fn node_points(&self, node: usize) -> &[usize] {
        let n = &self.nodes[node];
        &self.permutation[n.start..n.end]
    }

    /// Point ids of leaves `first..=last`, the contiguous fetch enabled by
    /// post-order leaf numbering.
    pub fn leaf_interval_points(&self, first: usize, last: usize) -> &[usize] {
        let a = self.leaf(first).start;
        let b = self.leaf(last).end;
        &self.permutation[a..b]
    }

    /// Coordinate `d` of every point, in permutation order.
    pub fn clustered_column(&self, d: usize) -> &[f64] {
        &self.clustered[d]
    }

    /// Squared distance from `p` to the point at permutation position
    /// `pos`; summed in the same order as [`PointSet::dist_sq_to`].
    #[inline]
    pub fn dist_sq_at(&self, pos: usize, p: &[f64]) -> f64 {
        let mut s = 0.0;
        for (c, &x) in self.clustered.iter().zip(p) {
            let t = c[pos] - x;
            s += t * t;
        }
        s
    }

    /// Leaf whose cell contains `p` after clamping `p` into the root box;
    /// for points outside the root box this is a leaf at minimal distance.
    pub fn locate_leaf(&self, p: &[f64]) -> usize {
        let root = &self.nodes[0].cell;
        let mut i = 0;
        while !self.is_leaf(i) {
            let n = &self.nodes[i];
            let x = p[n.split_dim].clamp(root.lo[n.split_dim], root.hi[n.split_dim]);
            i = if x <= n.split_value {
                2 * i + 1
            } else {
                2 * i + 2
            };
        }
        i + 1 - self.leaf_count()
    }

    /// Leaves whose closed cells intersect the closed box `b`.
    pub fn leaves_touching(&self, b: &BoundingBox, out: &mut Vec<usize>) {
        out.clear();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if !self.nodes[i].cell.intersects(b) {
                continue;
            }
            if self.is_leaf(i) {
                out.push(i + 1 - self.leaf_count());
            } else {
                stack.push(2 * i + 2);
                stack.push(2 * i + 1);
            }
        }
    }

    /// Exact polytope query. Halfspaces satisfied by a node's whole box
    /// are dropped for its subtree; a node left with none is inside and is
    /// emitted wholesale from its permutation range, and only partial leaves
    /// are point-filtered, against their remaining halfspaces.
    pub fn query_polytope(&self, ps: &PointSet, poly: &Polytope) -> Result<PolytopeResult> {
        self.check(ps)?;
        poly.validate(Some(self.dim))?;
        if poly.halfspaces.len() > u16::MAX as usize {
            return Err(Error::InvalidParameter("too many halfspaces".into()));
        }
        let cp = CompiledPolytope::new(poly);
        let mut ids = Vec::new();
        let mut stats = QueryStats::default();
        let mut stack = vec![(0usize, (0..cp.len() as u16).collect::<Vec<u16>>())];
        while let Some((i, active)) = stack.pop() {
            stats.nodes_visited += 1;
            let node = &self.nodes[i];
            let mut remaining = Vec::with_capacity(active.len());
            let mut outside = false;
            for &h in &active {
                let (min, max) = cp.support(h as usize, &node.bbox);
                let offset = cp.offset(h as usize);
                if min > offset {
                    outside = true;
                    break;
                }
                if max > offset {
                    remaining.push(h);
                }
            }
            if outside {
                continue;
            }
            if remaining.is_empty() {
                ids.extend_from_slice(&self.permutation[node.start..node.end]);
                stats.wholesale += node.end - node.start;
                stats.leaves_touched += node.last_leaf - node.first_leaf + 1;
            } else if self.is_leaf(i) {
                stats.leaves_touched += 1;
                stats.leaves_filtered += 1;
                stats.tested += node.end - node.start;
                for pos in node.start..node.end {
                    if cp.contains_active(&self.clustered, pos, &remaining) {
                        ids.push(self.permutation[pos]);
                    }
                }
            } else {
                stack.push((2 * i + 2, remaining.clone()));
                stack.push((2 * i + 1, remaining));
            }
        }
        stats.returned = ids.len();
        Ok(PolytopeResult { ids, stats })
    }

    /// Nodes of the shallowest level at which at least `min_nodes` node
    /// boxes meet `b`; the leaf level when no level has that many.
    pub fn subtree_at_depth(
        &self,
        b: &BoundingBox,
        min_nodes: usize,
    ) -> Result<Vec<NodeDescriptor>> {
        if b.dim() != self.dim {
            return Err(Error::Dim {
                expected: self.dim,
                got: b.dim(),
            });
        }
        b.validate()?;
        let mut frontier: Vec<usize> = if self.nodes[0].bbox.intersects(b) {
            vec![0]
        } else {
            Vec::new()
        };
        let mut level = 0;
        while frontier.len() < min_nodes.max(1) && level < self.levels {
            // Child boxes lie inside the parent box, so only children of
            // intersecting parents can intersect.
            frontier = frontier
                .iter()
                .flat_map(|&i| [2 * i + 1, 2 * i + 2])
                .filter(|&c| self.nodes[c].bbox.intersects(b))
                .collect();
            level += 1;
        }
        Ok(frontier
            .into_iter()
            .map(|i| {
                let n = &self.nodes[i];
                NodeDescriptor {
                    post_order_id: n.post_order_id,
                    level: n.level,
                    bbox: n.bbox.clone(),
                    population: n.population(),
                }
            })
            .collect())
    }

    fn check(&self, ps: &PointSet) -> Result<()> {
        if ps.len() != self.len() || ps.dim() != self.dim {
            return Err(Error::InvalidParameter(
                "point set does not match the tree".into(),
            ));
        }
        Ok(())
    }

    /// Sidecar layout: magic `HGKD`, version u16, D u16, N u64, levels u8,
    /// then per node in heap order: split_dim u16, split_value f64, tight box
    /// (D lo, D hi), cell (D lo, D hi), start u64, end u64; then the
    /// permutation as N u64.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(KD_MAGIC)?;
        w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u16::<LittleEndian>(self.dim as u16)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_u8(self.levels as u8)?;
        for n in &self.nodes {
            w.write_u16::<LittleEndian>(n.split_dim as u16)?;
            w.write_f64::<LittleEndian>(n.split_value)?;
            write_f64s(w, &n.bbox.lo)?;
            write_f64s(w, &n.bbox.hi)?;
            write_f64s(w, &n.cell.lo)?;
            write_f64s(w, &n.cell.hi)?;
            w.write_u64::<LittleEndian>(n.start as u64)?;
            w.write_u64::<LittleEndian>(n.end as u64)?;
        }
        for &p in &self.permutation {
            w.write_u64::<LittleEndian>(p as u64)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, ps: &PointSet) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::MalformedHeader("truncated kd header".into()))?;
        if &magic != KD_MAGIC {
            return Err(Error::MalformedHeader(format!("bad kd magic {magic:?}")));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported version {version}"
            )));
        }
        let dim = r.read_u16::<LittleEndian>()? as usize;
        let n = r.read_u64::<LittleEndian>()? as usize;
        let levels = r.read_u8()? as usize;
        if dim != ps.dim() || n != ps.len() {
            return Err(Error::MalformedHeader(
                "kd sidecar does not match the point set".into(),
            ));
        }
        if levels >= 40 || 1usize << levels != leaf_count(n) {
            return Err(Error::MalformedHeader("inconsistent kd level count".into()));
        }
        let leaves = 1usize << levels;
        let mut nodes = Vec::with_capacity(2 * leaves - 1);
        for i in 0..2 * leaves - 1 {
            let split_dim = r.read_u16::<LittleEndian>()? as usize;
            let split_value = r.read_f64::<LittleEndian>()?;
            let bbox = BoundingBox {
                lo: read_f64s(&mut r, dim)?,
                hi: read_f64s(&mut r, dim)?,
            };
            let cell = BoundingBox {
                lo: read_f64s(&mut r, dim)?,
                hi: read_f64s(&mut r, dim)?,
            };
            let start = r.read_u64::<LittleEndian>()? as usize;
            let end = r.read_u64::<LittleEndian>()? as usize;
            let level = (usize::BITS - (i + 1).leading_zeros() - 1) as usize;
            let j = i + 1 - (1 << level);
            let span = leaves >> level;
            if split_dim >= dim || start > end || end > n {
                return Err(Error::MalformedHeader(format!("bad kd node {i}")));
            }
            nodes.push(KdNode {
                split_dim,
                split_value,
                bbox,
                cell,
                post_order_id: 0,
                first_leaf: j * span,
                last_leaf: (j + 1) * span - 1,
                start,
                end,
                level,
            });
        }
        let mut perm = vec![0u64; n];
        r.read_u64_into::<LittleEndian>(&mut perm)?;
        let permutation: Vec<usize> = perm.into_iter().map(|x| x as usize).collect();
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::MalformedHeader(
                    "kd permutation is not a bijection".into(),
                ));
            }
        }
        let clustered = cluster_columns(ps, &permutation);
        let mut tree = KdTree {
            dim,
            levels,
            nodes,
            permutation,
            clustered,
        };
        tree.number_post_order();
        Ok(tree)
    }
}

fn cluster_columns(ps: &PointSet, permutation: &[usize]) -> Vec<Vec<f64>> {
    ps.columns()
        .iter()
        .map(|c| permutation.iter().map(|&id| c[id]).collect())
        .collect()
}

fn tight_box(ps: &PointSet, ids: &[usize]) -> BoundingBox {
    let dim = ps.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for d in 0..dim {
        let c = ps.column(d);
        for &id in ids {
            let x = c[id];
            if x < lo[d] {
                lo[d] = x;
            }
            if x > hi[d] {
                hi[d] = x;
            }
        }
    }
    BoundingBox { lo, hi }
}

/// Halfspace test of one stored point, reading the columns directly.
#[inline]
pub fn contains_id(ps: &PointSet, poly: &Polytope, id: usize) -> bool {
    poly.halfspaces.iter().all(|h| {
        let mut s = 0.0;
        for (d, &n) in h.normal.iter().enumerate() {
            s += n * ps.coord(id, d);
        }
        s <= h.offset
    })
}

/// Unindexed baseline: tests every point.
pub fn full_scan(ps: &PointSet, poly: &Polytope) -> Vec<usize> {
    (0..ps.len())
        .filter(|&id| contains_id(ps, poly, id))
        .collect()
}
