//! Sampled Voronoi tessellation: random seeds, exact nearest-seed
//! assignment, an approximate Delaunay graph, directed-walk point location,
//! Monte-Carlo cell volumes and cell-level polytope filtering.
//!
//! The Delaunay graph is a witness graph: seeds `a` and `b` are joined when
//! some probe point has `a` as nearest and `b` as second-nearest seed. Such
//! a probe lies near the face shared by the two cells, so every witnessed
//! edge is a true Delaunay edge; faces no probe lands near are missed. The
//! walk tolerates missing edges by verifying its answer with an exact
//! nearest-seed search.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{fit_pca, read_f64s, write_f64s, PointSet, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::geometry::{classify_box, dist_sq, BoundingBox, Classification, Polytope};
use crate::kdtree::{contains_id, KdTree};
use crate::knn::knn_search;
use crate::rng;

pub const VORONOI_MAGIC: &[u8; 4] = b"HGVR";
const MORTON_BITS: u32 = 21;
const PROBE_STREAM: u64 = 1;
const VOLUME_STREAM: u64 = 1 << 32;
const VOLUME_CHUNK: usize = 8192;

/// Nearest-seed oracle: a kd-tree over the seeds, or a scan when there are
/// too few seeds for a tree.
#[derive(Debug, Clone)]
pub struct SeedSet {
    points: PointSet,
    tree: Option<KdTree>,
}

impl SeedSet {
    pub fn new(points: PointSet) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("no seeds".into()));
        }
        let tree = if points.len() >= 2 {
            Some(KdTree::build(&points)?)
        } else {
            None
        };
        Ok(SeedSet { points, tree })
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Up to `k` nearest seeds, ties to the smaller seed id.
    pub fn nearest(&self, p: &[f64], k: usize) -> Vec<usize> {
        match &self.tree {
            Some(t) => knn_search(t, &self.points, p, k)
                .map(|l| l.ids())
                .expect("query dimension checked by caller"),
            None => vec![0],
        }
    }
}

/// Seeds drawn uniformly without replacement; ids returned ascending.
pub fn pick_seeds(ps: &PointSet, n_seed: usize, seed: u64) -> Result<Vec<usize>> {
    if n_seed == 0 || n_seed > ps.len() {
        return Err(Error::InvalidParameter(format!(
            "n_seed = {n_seed} not in 1..={}",
            ps.len()
        )));
    }
    let mut r = rng::stream(seed, 0);
    let mut ids = index::sample(&mut r, ps.len(), n_seed).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dim { expected, got });
    }
    Ok(())
}

/// Exact nearest seed of every point.
pub fn assign_cells(ps: &PointSet, seeds: &SeedSet) -> Result<Vec<u32>> {
    check_dim(seeds.points.dim(), ps.dim())?;
    Ok((0..ps.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; ps.dim()],
            |buf, id| {
                ps.fill_point(id, buf);
                seeds.nearest(buf, 1)[0] as u32
            },
        )
        .collect())
}

/// Symmetric sparse adjacency, neighbor lists sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Adjacency {
    /// Symmetric closure of `edges`, self-loops dropped.
    pub fn from_edges(n: usize, mut edges: Vec<(u32, u32)>) -> Self {
        let mut both: Vec<(u32, u32)> = edges
            .drain(..)
            .filter(|(a, b)| a != b)
            .flat_map(|(a, b)| [(a, b), (b, a)])
            .collect();
        both.sort_unstable();
        both.dedup();
        let mut offsets = vec![0usize; n + 1];
        for &(a, _) in &both {
            offsets[a as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Adjacency {
            offsets,
            targets: both.into_iter().map(|(_, b)| b).collect(),
        }
    }

    pub fn neighbors(&self, c: usize) -> &[u32] {
        &self.targets[self.offsets[c]..self.offsets[c + 1]]
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Undirected edges `(a, b)` with `a < b`, ascending.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        (0..self.len())
            .flat_map(|a| {
                self.neighbors(a)
                    .iter()
                    .filter(move |&&b| b as usize > a)
                    .map(move |&b| (a as u32, b))
            })
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }
}

/// Witness adjacency over every data point plus `probe_budget` uniform
/// probes in the data bounding box.
pub fn build_adjacency(
    ps: &PointSet,
    seeds: &SeedSet,
    probe_budget: usize,
    seed: u64,
) -> Result<Adjacency> {
    check_dim(seeds.points.dim(), ps.dim())?;
    let ns = seeds.len();
    if ns < 2 || ps.is_empty() {
        return Ok(Adjacency::from_edges(ns, Vec::new()));
    }
    let pair = |p: &[f64]| -> (u32, u32) {
        let nn = seeds.nearest(p, 2);
        (nn[0] as u32, nn[1] as u32)
    };
    let mut edges: Vec<(u32, u32)> = (0..ps.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; ps.dim()],
            |buf, id| {
                ps.fill_point(id, buf);
                let (a, b) = pair(buf);
                (a.min(b), a.max(b))
            },
        )
        .collect();
    let bbox = ps.bounding_box()?;
    let probes = uniform_chunks(&bbox, probe_budget, seed, PROBE_STREAM, |p| {
        let (a, b) = pair(p);
        (a.min(b), a.max(b))
    });
    edges.extend(probes);
    edges.par_sort_unstable();
    edges.dedup();
    Ok(Adjacency::from_edges(ns, edges))
}

/// Maps `f` over `count` uniform points of `b`, drawn in fixed-size chunks
/// from per-chunk streams so the output is schedule-independent.
fn uniform_chunks<T, F>(b: &BoundingBox, count: usize, seed: u64, base_stream: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[f64]) -> T + Sync,
{
    let chunks = count.div_ceil(VOLUME_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = rng::stream(seed, base_stream + c as u64);
            let len = VOLUME_CHUNK.min(count - c * VOLUME_CHUNK);
            let mut p = vec![0.0; b.dim()];
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                for (d, x) in p.iter_mut().enumerate() {
                    *x = b.lo[d] + (b.hi[d] - b.lo[d]) * r.random::<f64>();
                }
                out.push(f(&p));
            }
            out
        })
        .collect()
}

/// Monte-Carlo cell volumes inside `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellVolumes {
    pub bbox: BoundingBox,
    pub samples: usize,
    pub hits: Vec<u64>,
}

impl CellVolumes {
    pub fn volume(&self, c: usize) -> f64 {
        self.bbox.volume() * self.hits[c] as f64 / self.samples as f64
    }

    /// Binomial standard error of `volume(c)`.
    pub fn standard_error(&self, c: usize) -> f64 {
        let p = self.hits[c] as f64 / self.samples as f64;
        self.bbox.volume() * (p * (1.0 - p) / self.samples as f64).sqrt()
    }

    pub fn volumes(&self) -> Vec<f64> {
        (0..self.hits.len()).map(|c| self.volume(c)).collect()
    }
}

pub fn estimate_volumes(
    seeds: &SeedSet,
    b: &BoundingBox,
    samples: usize,
    seed: u64,
) -> Result<CellVolumes> {
    check_dim(seeds.points.dim(), b.dim())?;
    b.validate()?;
    if samples < 10 * seeds.len() {
        return Err(Error::InvalidParameter(format!(
            "{samples} volume samples is fewer than 10 per seed"
        )));
    }
    let owners = uniform_chunks(b, samples, seed, VOLUME_STREAM, |p| {
        seeds.nearest(p, 1)[0] as u32
    });
    let mut hits = vec![0u64; seeds.len()];
    for o in owners {
        hits[o as usize] += 1;
    }
    Ok(CellVolumes {
        bbox: b.clone(),
        samples,
        hits,
    })
}

/// Seed indices sorted by the Morton code of their quantized coordinates.
/// Up to 3 axes are interleaved with axis 0 in the lowest bit; above 3
/// dimensions the first three principal axes are used.
pub fn order_cells(seeds: &PointSet) -> Result<Vec<u32>> {
    let n = seeds.len();
    if n < 2 {
        return Ok((0..n as u32).collect());
    }
    let coords = if seeds.dim() > 3 {
        fit_pca(seeds, 3)?.transform.apply(seeds)?
    } else {
        seeds.clone()
    };
    let axes = coords.dim();
    let max = ((1u64 << MORTON_BITS) - 1) as f64;
    let quantized: Vec<Vec<u64>> = (0..axes)
        .map(|d| {
            let col = coords.column(d);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            col.iter()
                .map(|&x| {
                    if span > 0.0 {
                        ((x - lo) / span * max).round() as u64
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let mut keyed: Vec<(u64, u32)> = (0..n)
        .map(|i| {
            let q: Vec<u64> = quantized.iter().map(|c| c[i]).collect();
            (morton(&q), i as u32)
        })
        .collect();
    keyed.sort_unstable();
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

/// Interleaves the low 21 bits of each coordinate, axis 0 lowest.
pub fn morton(q: &[u64]) -> u64 {
    let axes = q.len() as u32;
    let mut code = 0u64;
    for bit in 0..MORTON_BITS {
        for (a, &x) in q.iter().enumerate() {
            code |= ((x >> bit) & 1) << (bit * axes + a as u32);
        }
    }
    code
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Located {
    pub seed: usize,
    pub steps: usize,
    /// The walk stopped at a seed other than the nearest one.
    pub walk_missed: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellQueryStats {
    pub cells_inside: usize,
    pub cells_outside: usize,
    pub cells_partial: usize,
    /// Partial cells whose member sample already straddles the boundary.
    pub cells_confirmed_mixed: usize,
    pub points_filtered: usize,
    pub returned: usize,
}

#[derive(Debug)]
pub struct VoronoiIndex {
    seed_ids: Vec<usize>,
    seeds: SeedSet,
    assignment: Vec<u32>,
    adjacency: Adjacency,
    volumes: CellVolumes,
    order: Vec<u32>,
    member_offsets: Vec<usize>,
    members: Vec<u32>,
    member_boxes: Vec<Option<BoundingBox>>,
    walk_misses: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoronoiParams {
    pub n_seed: usize,
    /// Uniform probes added to the data points when building adjacency.
    pub probe_budget: usize,
    pub volume_samples: usize,
    pub seed: u64,
}

impl VoronoiParams {
    pub fn new(n_seed: usize, seed: u64) -> Self {
        VoronoiParams {
            n_seed,
            probe_budget: 20 * n_seed,
            volume_samples: 100 * n_seed,
            seed,
        }
    }
}

impl VoronoiIndex {
    pub fn build(ps: &PointSet, params: &VoronoiParams) -> Result<Self> {
        let seed_ids = pick_seeds(ps, params.n_seed, params.seed)?;
        let seeds = SeedSet::new(ps.subset(&seed_ids))?;
        let assignment = assign_cells(ps, &seeds)?;
        let adjacency = build_adjacency(ps, &seeds, params.probe_budget, params.seed)?;
        let volumes = estimate_volumes(
            &seeds,
            &ps.bounding_box()?,
            params.volume_samples,
            params.seed,
        )?;
        let order = order_cells(seeds.points())?;
        Ok(Self::assemble(
            ps, seed_ids, seeds, assignment, adjacency, volumes, order,
        ))
    }

    fn assemble(
        ps: &PointSet,
        seed_ids: Vec<usize>,
        seeds: SeedSet,
        assignment: Vec<u32>,
        adjacency: Adjacency,
        volumes: CellVolumes,
        order: Vec<u32>,
    ) -> Self {
        let ns = seeds.len();
        let mut member_offsets = vec![0usize; ns + 1];
        for &a in &assignment {
            member_offsets[a as usize + 1] += 1;
        }
        for i in 0..ns {
            member_offsets[i + 1] += member_offsets[i];
        }
        let mut cursor = member_offsets.clone();
        let mut members = vec![0u32; assignment.len()];
        for (id, &a) in assignment.iter().enumerate() {
            members[cursor[a as usize]] = id as u32;
            cursor[a as usize] += 1;
        }
        let mut buf = vec![0.0; ps.dim()];
        let member_boxes = (0..ns)
            .map(|c| {
                let ids = &members[member_offsets[c]..member_offsets[c + 1]];
                let pts: Vec<Vec<f64>> = ids
                    .iter()
                    .map(|&id| {
                        ps.fill_point(id as usize, &mut buf);
                        buf.clone()
                    })
                    .collect();
                BoundingBox::around(ps.dim(), pts.iter().map(|p| p.as_slice()))
            })
            .collect();
        VoronoiIndex {
            seed_ids,
            seeds,
            assignment,
            adjacency,
            volumes,
            order,
            member_offsets,
            members,
            member_boxes,
            walk_misses: AtomicU64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.seeds.points.dim()
    }

    pub fn seed_count(&self) -> usize {
        self.seeds.len()
    }

    /// Dataset ids of the seeds, ascending; seed `i` is point `seed_ids[i]`.
    pub fn seed_ids(&self) -> &[usize] {
        &self.seed_ids
    }

    pub fn seeds(&self) -> &SeedSet {
        &self.seeds
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn volumes(&self) -> &CellVolumes {
        &self.volumes
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn members(&self, c: usize) -> &[u32] {
        &self.members[self.member_offsets[c]..self.member_offsets[c + 1]]
    }

    pub fn member_box(&self, c: usize) -> Option<&BoundingBox> {
        self.member_boxes[c].as_ref()
    }

    pub fn walk_misses(&self) -> u64 {
        self.walk_misses.load(Ordering::Relaxed)
    }

    /// Greedy walk from the first cell in curve order, moving to the
    /// neighbor strictly closest to `p` (ties to the smaller id), verified
    /// by an exact nearest-seed search at the local minimum.
    pub fn locate_cell(&self, p: &[f64]) -> Result<Located> {
        check_dim(self.dim(), p.len())?;
        let pts = &self.seeds.points;
        let mut cur = self.order[0] as usize;
        let mut cur_d = pts.dist_sq_to(cur, p);
        let mut steps = 0;
        loop {
            let mut next = None;
            let mut best = cur_d;
            for &nb in self.adjacency.neighbors(cur) {
                let d = pts.dist_sq_to(nb as usize, p);
                if d < best {
                    best = d;
                    next = Some(nb as usize);
                }
            }
            match next {
                Some(n) => {
                    cur = n;
                    cur_d = best;
                    steps += 1;
                }
                None => break,
            }
        }
        let exact = self.seeds.nearest(p, 1)[0];
        let walk_missed = exact != cur;
        if walk_missed {
            self.walk_misses.fetch_add(1, Ordering::Relaxed);
        }
        Ok(Located {
            seed: exact,
            steps,
            walk_missed,
        })
    }

    /// Exact polytope query. Cells are classified by their members' tight
    /// box; inside cells are emitted whole, partial cells are filtered.
    /// The first `sample_per_cell` members of a partial cell are tested
    /// first, which only serves to report whether the cell is known to
    /// straddle the boundary. Result ids are ascending.
    pub fn query_polytope(
        &self,
        ps: &PointSet,
        poly: &Polytope,
        sample_per_cell: usize,
    ) -> Result<(Vec<usize>, CellQueryStats)> {
        poly.validate(Some(self.dim()))?;
        if ps.len() != self.assignment.len() || ps.dim() != self.dim() {
            return Err(Error::InvalidParameter(
                "point set does not match the Voronoi index".into(),
            ));
        }
        let mut stats = CellQueryStats::default();
        let mut ids = Vec::new();
        for c in 0..self.seed_count() {
            let Some(b) = &self.member_boxes[c] else {
                continue;
            };
            let members = self.members(c);
            match classify_box(b, poly) {
                Classification::Inside => {
                    stats.cells_inside += 1;
                    ids.extend(members.iter().map(|&i| i as usize));
                }
                Classification::Outside => stats.cells_outside += 1,
                Classification::Partial => {
                    stats.cells_partial += 1;
                    stats.points_filtered += members.len();
                    let s = sample_per_cell.min(members.len());
                    let mut seen_in = false;
                    let mut seen_out = false;
                    for (j, &id) in members.iter().enumerate() {
                        let inside = contains_id(ps, poly, id as usize);
                        if j < s {
                            seen_in |= inside;
                            seen_out |= !inside;
                        }
                        if inside {
                            ids.push(id as usize);
                        }
                    }
                    if seen_in && seen_out {
                        stats.cells_confirmed_mixed += 1;
                    }
                }
            }
        }
        ids.sort_unstable();
        stats.returned = ids.len();
        Ok((ids, stats))
    }

    /// Seeds inside the closed box.
    pub fn cells_in_box(&self, b: &BoundingBox) -> Result<Vec<usize>> {
        check_dim(self.dim(), b.dim())?;
        let mut buf = vec![0.0; self.dim()];
        Ok((0..self.seed_count())
            .filter(|&c| {
                self.seeds.points.fill_point(c, &mut buf);
                b.contains(&buf)
            })
            .collect())
    }

    /// Graph edges with both endpoints' seeds inside the closed box.
    pub fn edges_in_box(&self, b: &BoundingBox) -> Result<Vec<(u32, u32)>> {
        let inside = self.cells_in_box(b)?;
        let mut flag = vec![false; self.seed_count()];
        for &c in &inside {
            flag[c] = true;
        }
        Ok(inside
            .iter()
            .flat_map(|&a| {
                let flag = &flag;
                self.adjacency
                    .neighbors(a)
                    .iter()
                    .filter(move |&&b| b as usize > a && flag[b as usize])
                    .map(move |&b| (a as u32, b))
            })
            .collect())
    }

    /// Sidecar layout: magic `HGVR`, version u16, D u16, N u64, seeds u64,
    /// seed ids (u64 each), seed coordinate columns, assignment (u32 each),
    /// adjacency as CSR (offsets u64 × (seeds+1), targets u32), volume box
    /// (D lo, D hi), sample count u64, hits (u64 each), cell order (u32
    /// each).
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let dim = self.dim();
        w.write_all(VORONOI_MAGIC)?;
        w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u16::<LittleEndian>(dim as u16)?;
        w.write_u64::<LittleEndian>(self.assignment.len() as u64)?;
        w.write_u64::<LittleEndian>(self.seed_count() as u64)?;
        for &s in &self.seed_ids {
            w.write_u64::<LittleEndian>(s as u64)?;
        }
        for d in 0..dim {
            write_f64s(w, self.seeds.points.column(d))?;
        }
        for &a in &self.assignment {
            w.write_u32::<LittleEndian>(a)?;
        }
        for &o in &self.adjacency.offsets {
            w.write_u64::<LittleEndian>(o as u64)?;
        }
        for &t in &self.adjacency.targets {
            w.write_u32::<LittleEndian>(t)?;
        }
        write_f64s(w, &self.volumes.bbox.lo)?;
        write_f64s(w, &self.volumes.bbox.hi)?;
        w.write_u64::<LittleEndian>(self.volumes.samples as u64)?;
        for &h in &self.volumes.hits {
            w.write_u64::<LittleEndian>(h)?;
        }
        for &o in &self.order {
            w.write_u32::<LittleEndian>(o)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R, ps: &PointSet) -> Result<Self> {
        let bad = |m: &str| Error::MalformedHeader(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated Voronoi header"))?;
        if &magic != VORONOI_MAGIC {
            return Err(Error::MalformedHeader(format!(
                "bad Voronoi magic {magic:?}"
            )));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported version {version}"
            )));
        }
        let dim = r.read_u16::<LittleEndian>()? as usize;
        let n = r.read_u64::<LittleEndian>()? as usize;
        let ns = r.read_u64::<LittleEndian>()? as usize;
        if dim != ps.dim() || n != ps.len() {
            return Err(bad("Voronoi sidecar does not match the point set"));
        }
        if ns == 0 || ns > n {
            return Err(bad("bad seed count"));
        }
        let mut seed_ids = Vec::with_capacity(ns);
        for _ in 0..ns {
            let s = r.read_u64::<LittleEndian>()? as usize;
            if s >= n {
                return Err(bad("seed id out of range"));
            }
            seed_ids.push(s);
        }
        let columns = (0..dim)
            .map(|_| read_f64s(&mut r, ns))
            .collect::<Result<Vec<_>>>()?;
        let seeds = SeedSet::new(PointSet::from_columns(columns)?)?;
        let mut assignment = vec![0u32; n];
        r.read_u32_into::<LittleEndian>(&mut assignment)?;
        if assignment.iter().any(|&a| a as usize >= ns) {
            return Err(bad("assignment out of range"));
        }
        let mut offsets = vec![0u64; ns + 1];
        r.read_u64_into::<LittleEndian>(&mut offsets)?;
        let offsets: Vec<usize> = offsets.into_iter().map(|o| o as usize).collect();
        if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(bad("bad adjacency offsets"));
        }
        let mut targets = vec![0u32; offsets[ns]];
        r.read_u32_into::<LittleEndian>(&mut targets)?;
        if targets.iter().any(|&t| t as usize >= ns) {
            return Err(bad("adjacency target out of range"));
        }
        let bbox = BoundingBox {
            lo: read_f64s(&mut r, dim)?,
            hi: read_f64s(&mut r, dim)?,
        };
        let samples = r.read_u64::<LittleEndian>()? as usize;
        let mut hits = vec![0u64; ns];
        r.read_u64_into::<LittleEndian>(&mut hits)?;
        if hits.iter().sum::<u64>() != samples as u64 {
            return Err(bad("volume hits do not sum to the sample count"));
        }
        let mut order = vec![0u32; ns];
        r.read_u32_into::<LittleEndian>(&mut order)?;
        let mut seen = vec![false; ns];
        for &o in &order {
            if o as usize >= ns || std::mem::replace(&mut seen[o as usize], true) {
                return Err(bad("cell order is not a permutation"));
            }
        }
        Ok(Self::assemble(
            ps,
            seed_ids,
            seeds,
            assignment,
            Adjacency { offsets, targets },
            CellVolumes {
                bbox,
                samples,
                hits,
            },
            order,
        ))
    }
}

/// O(N·N_seed) nearest-seed scan, ties to the smaller seed id.
pub fn assign_brute(ps: &PointSet, seeds: &PointSet) -> Vec<u32> {
    let mut buf = vec![0.0; ps.dim()];
    let mut s = vec![0.0; seeds.dim()];
    (0..ps.len())
        .map(|id| {
            ps.fill_point(id, &mut buf);
            let mut best = (f64::INFINITY, 0u32);
            for j in 0..seeds.len() {
                seeds.fill_point(j, &mut s);
                let d = dist_sq(&s, &buf);
                if d < best.0 {
                    best = (d, j as u32);
                }
            }
            best.1
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_uniform;

    fn unit(dim: usize) -> BoundingBox {
        BoundingBox::new(vec![0.0; dim], vec![1.0; dim]).unwrap()
    }

    #[test]
    fn pick_seeds_edges() {
        let ps = generate_uniform(1, 50, &unit(2)).unwrap();
        assert_eq!(pick_seeds(&ps, 50, 3).unwrap(), (0..50).collect::<Vec<_>>());
        assert_eq!(pick_seeds(&ps, 1, 3).unwrap().len(), 1);
        assert!(pick_seeds(&ps, 51, 3).is_err());
        assert!(pick_seeds(&ps, 0, 3).is_err());
        assert_eq!(
            pick_seeds(&ps, 10, 3).unwrap(),
            pick_seeds(&ps, 10, 3).unwrap()
        );
    }

    #[test]
    fn single_seed() {
        let ps = generate_uniform(2, 200, &unit(3)).unwrap();
        let idx = VoronoiIndex::build(&ps, &VoronoiParams::new(1, 4)).unwrap();
        assert!(idx.assignment().iter().all(|&a| a == 0));
        assert_eq!(idx.adjacency().edge_count(), 0);
        let b = ps.bounding_box().unwrap();
        assert_eq!(idx.volumes().volume(0), b.volume());
        let l = idx.locate_cell(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!((l.seed, l.steps, l.walk_missed), (0, 0, false));
    }

    #[test]
    fn assignment_tie_goes_to_smaller_seed() {
        let seeds =
            SeedSet::new(PointSet::from_rows(1, &[vec![-1.0], vec![5.0], vec![1.0]]).unwrap())
                .unwrap();
        let ps = PointSet::from_rows(1, &[vec![0.0], vec![5.0], vec![3.0]]).unwrap();
        assert_eq!(assign_cells(&ps, &seeds).unwrap(), vec![0, 1, 1]);
        assert_eq!(assign_brute(&ps, seeds.points()), vec![0, 1, 1]);
    }

    #[test]
    fn two_and_three_seeds_adjacency() {
        let ps = generate_uniform(5, 2000, &unit(2)).unwrap();
        let two = SeedSet::new(PointSet::from_rows(2, &[vec![0.2, 0.5], vec![0.8, 0.5]]).unwrap())
            .unwrap();
        assert_eq!(
            build_adjacency(&ps, &two, 100, 1).unwrap().edges(),
            vec![(0, 1)]
        );
        let tri = SeedSet::new(
            PointSet::from_rows(2, &[vec![0.2, 0.2], vec![0.8, 0.2], vec![0.5, 0.8]]).unwrap(),
        )
        .unwrap();
        assert_eq!(
            build_adjacency(&ps, &tri, 1000, 1).unwrap().edges(),
            vec![(0, 1), (0, 2), (1, 2)]
        );
    }

    #[test]
    fn mirror_volumes_and_closure() {
        let seeds =
            SeedSet::new(PointSet::from_rows(2, &[vec![0.25, 0.5], vec![0.75, 0.5]]).unwrap())
                .unwrap();
        let v = estimate_volumes(&seeds, &unit(2), 100_000, 9).unwrap();
        let diff = (v.volume(0) - v.volume(1)).abs();
        let se = (v.standard_error(0).powi(2) + v.standard_error(1).powi(2)).sqrt();
        assert!(diff <= 3.0 * se, "diff {diff} se {se}");
        assert_eq!(v.hits.iter().sum::<u64>(), 100_000);
        assert!(estimate_volumes(&seeds, &unit(2), 19, 9).is_err());
    }

    #[test]
    fn lattice_cell_volumes() {
        let m = 6;
        let rows: Vec<Vec<f64>> = (0..m * m)
            .map(|i| {
                vec![
                    (i % m) as f64 / m as f64 + 0.5 / m as f64,
                    (i / m) as f64 / m as f64 + 0.5 / m as f64,
                ]
            })
            .collect();
        let seeds = SeedSet::new(PointSet::from_rows(2, &rows).unwrap()).unwrap();
        let v = estimate_volumes(&seeds, &unit(2), 400_000, 2).unwrap();
        let expect = 1.0 / (m * m) as f64;
        for c in 0..m * m {
            assert!(
                (v.volume(c) - expect).abs() <= 3.0 * v.standard_error(c),
                "cell {c}: {} vs {expect}",
                v.volume(c)
            );
        }
    }

    #[test]
    fn morton_corners() {
        let ps = PointSet::from_rows(
            2,
            &[
                vec![1.0, 1.0],
                vec![0.0, 1.0],
                vec![1.0, 0.0],
                vec![0.0, 0.0],
            ],
        )
        .unwrap();
        assert_eq!(order_cells(&ps).unwrap(), vec![3, 2, 1, 0]);
        assert_eq!(morton(&[1, 0, 0]), 1);
        assert_eq!(morton(&[0, 1, 0]), 2);
        assert_eq!(morton(&[0, 0, 1]), 4);
        assert_eq!(morton(&[3, 0]), 0b101);
    }

    #[test]
    fn morton_order_has_locality() {
        use rand::seq::SliceRandom;
        let ps = generate_uniform(7, 2000, &unit(3)).unwrap();
        let order = order_cells(&ps).unwrap();
        let mean_step = |o: &[u32]| {
            o.windows(2)
                .map(|w| {
                    ps.dist_sq_to(w[0] as usize, &ps.point(w[1] as usize))
                        .sqrt()
                })
                .sum::<f64>()
                / (o.len() - 1) as f64
        };
        let mut shuffled = order.clone();
        shuffled.shuffle(&mut rng::seeded(1));
        assert!(mean_step(&order) < 0.5 * mean_step(&shuffled));
    }

    #[test]
    fn query_and_locate_small() {
        let ps = generate_uniform(11, 3000, &unit(3)).unwrap();
        let idx = VoronoiIndex::build(&ps, &VoronoiParams::new(60, 5)).unwrap();
        assert_eq!(
            idx.assignment(),
            assign_brute(&ps, idx.seeds().points()).as_slice()
        );
        for c in 0..idx.seed_count() {
            for &nb in idx.adjacency().neighbors(c) {
                assert_ne!(nb as usize, c);
                assert!(idx.adjacency().neighbors(nb as usize).contains(&(c as u32)));
            }
        }
        let whole = Polytope::whole_space(3);
        let (ids, st) = idx.query_polytope(&ps, &whole, 4).unwrap();
        assert_eq!(ids.len(), ps.len());
        assert_eq!(st.cells_partial, 0);
        let b = BoundingBox::new(vec![0.2, 0.1, 0.3], vec![0.6, 0.7, 0.5]).unwrap();
        let poly = Polytope::from_box(&b);
        let (ids, _) = idx.query_polytope(&ps, &poly, 4).unwrap();
        assert_eq!(ids, crate::kdtree::full_scan(&ps, &poly));
        for s in [0usize, 17, 59] {
            let p = idx.seeds().points().point(s);
            assert_eq!(idx.locate_cell(&p).unwrap().seed, s);
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let ps = generate_uniform(3, 1500, &unit(2)).unwrap();
        let idx = VoronoiIndex::build(&ps, &VoronoiParams::new(40, 8)).unwrap();
        let mut buf = Vec::new();
        idx.write(&mut buf).unwrap();
        let back = VoronoiIndex::read(buf.as_slice(), &ps).unwrap();
        assert_eq!(back.seed_ids(), idx.seed_ids());
        assert_eq!(back.assignment(), idx.assignment());
        assert_eq!(back.adjacency(), idx.adjacency());
        assert_eq!(back.volumes(), idx.volumes());
        assert_eq!(back.order(), idx.order());
        let other = generate_uniform(3, 1499, &unit(2)).unwrap();
        assert!(VoronoiIndex::read(buf.as_slice(), &other).is_err());
        assert!(VoronoiIndex::read(&buf[..buf.len() - 3], &ps).is_err());
    }
}
