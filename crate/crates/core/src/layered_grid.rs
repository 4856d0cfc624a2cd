//! Layered uniform grid for distribution-following progressive samples.
//!
//! Points get a random rank (`random_id`). The first `base` ranks form layer
//! 1, the next `8·base` layer 2, and so on; layer `ℓ` is covered by a uniform
//! `2^ℓ × 2^ℓ × 2^ℓ` grid over three chosen coordinates, so every layer holds
//! on average `base / 8` points per cell. A box query walks the layers in
//! order and stops after the first layer at which the running count reaches
//! the requested number of points.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;

use crate::dataset::{read_f64s, write_f64s, PointSet, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::rng;

pub const GRID_MAGIC: &[u8; 4] = b"HGLG";
pub const DEFAULT_BASE: usize = 1024;
/// Number of indexed coordinates.
pub const GRID_DIMS: usize = 3;
/// Capacity growth per layer, `2^GRID_DIMS`.
pub const BRANCHING: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerInfo {
    /// 1-based layer index.
    pub layer: u32,
    /// Cells per axis, `2^layer`.
    pub resolution: usize,
    /// Random ids `first_random_id..end_random_id` belong to this layer.
    pub first_random_id: usize,
    pub end_random_id: usize,
    /// Offsets into `order` (relative to the layer start), one per cell plus one.
    cell_offsets: Vec<u32>,
    /// Start of this layer in `order`.
    order_start: usize,
}

impl LayerInfo {
    pub fn population(&self) -> usize {
        self.end_random_id - self.first_random_id
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.pow(GRID_DIMS as u32)
    }

    /// Storage range of one cell's points within the index's point order.
    fn cell_range(&self, cell: usize) -> std::ops::Range<usize> {
        self.order_start + self.cell_offsets[cell] as usize
            ..self.order_start + self.cell_offsets[cell + 1] as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredGridIndex {
    base: usize,
    coord_indices: [usize; GRID_DIMS],
    bbox: BoundingBox,
    layers: Vec<LayerInfo>,
    random_id: Vec<u64>,
    layer: Vec<u8>,
    contained_by: Vec<u32>,
    /// Point ids sorted by (layer, contained_by, random_id).
    order: Vec<u32>,
}

/// Result of a progressive box sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    /// Point ids in (layer, cell, random_id) order.
    pub ids: Vec<usize>,
    /// Points read from the touched cells (the work done).
    pub examined: usize,
    /// Last layer read.
    pub layers_read: u32,
}

/// Number of layers needed so that `base·(8^L − 1)/7 ≥ n`.
pub fn layer_count(n: usize, base: usize) -> usize {
    let mut l = 1;
    while cumulative_capacity(l, base) < n {
        l += 1;
    }
    l
}

/// Total capacity of layers `1..=l`.
pub fn cumulative_capacity(l: usize, base: usize) -> usize {
    let mut cap = 0usize;
    let mut layer_cap = base;
    for _ in 0..l {
        cap = cap.saturating_add(layer_cap);
        layer_cap = layer_cap.saturating_mul(BRANCHING);
    }
    cap
}

fn cell_coord(x: f64, lo: f64, extent: f64, res: usize) -> usize {
    let t = ((x - lo) / extent * res as f64).floor();
    if t <= 0.0 || t.is_nan() {
        0
    } else if t >= (res - 1) as f64 {
        res - 1
    } else {
        t as usize
    }
}

impl LayeredGridIndex {
    /// Builds the index over the coordinates `coord_indices` of `ps`.
    pub fn build(
        ps: &PointSet,
        coord_indices: [usize; GRID_DIMS],
        base: usize,
        seed: u64,
    ) -> Result<Self> {
        let n = ps.len();
        if n == 0 {
            return Err(Error::Empty);
        }
        if base < BRANCHING {
            return Err(Error::InvalidParameter(format!(
                "base {base} < {BRANCHING}"
            )));
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidParameter(
                "too many points for a grid index".into(),
            ));
        }
        let sub = ps.select_dims(&coord_indices)?;
        let bbox = sub.bounding_box()?;

        let mut by_rank: Vec<u32> = (0..n as u32).collect();
        by_rank.shuffle(&mut rng::seeded(seed));
        let mut random_id = vec![0u64; n];
        for (r, &id) in by_rank.iter().enumerate() {
            random_id[id as usize] = r as u64;
        }
        Self::assemble(&sub, coord_indices, base, bbox, random_id)
    }

    fn assemble(
        sub: &PointSet,
        coord_indices: [usize; GRID_DIMS],
        base: usize,
        bbox: BoundingBox,
        random_id: Vec<u64>,
    ) -> Result<Self> {
        let n = sub.len();
        let nl = layer_count(n, base);
        if nl > 10 {
            return Err(Error::InvalidParameter("too many grid layers".into()));
        }
        let mut layers = Vec::with_capacity(nl);
        let mut first = 0usize;
        for l in 1..=nl {
            let end = cumulative_capacity(l, base).min(n);
            layers.push(LayerInfo {
                layer: l as u32,
                resolution: 1 << l,
                first_random_id: first,
                end_random_id: end,
                cell_offsets: Vec::new(),
                order_start: 0,
            });
            first = end;
        }

        let mut layer = vec![0u8; n];
        let mut contained_by = vec![0u32; n];
        let mut buf = [0.0; GRID_DIMS];
        for id in 0..n {
            let r = random_id[id] as usize;
            if r >= n {
                return Err(Error::InvalidParameter(
                    "random ids are not a permutation".into(),
                ));
            }
            let li = layers.partition_point(|info| info.end_random_id <= r);
            let info = &layers[li];
            sub.fill_point(id, &mut buf);
            layer[id] = info.layer as u8;
            contained_by[id] = Self::cell_of_in(&bbox, &buf, info.resolution) as u32;
        }

        // Counting sort by (layer, cell); random_id order within a cell comes
        // from scanning ranks in increasing order.
        let mut by_rank = vec![u32::MAX; n];
        for (id, &r) in random_id.iter().enumerate() {
            if by_rank[r as usize] != u32::MAX {
                return Err(Error::InvalidParameter(
                    "random ids are not a permutation".into(),
                ));
            }
            by_rank[r as usize] = id as u32;
        }
        let mut order = vec![0u32; n];
        for info in layers.iter_mut() {
            let cells = info.cell_count();
            let mut counts = vec![0u32; cells + 1];
            for r in info.first_random_id..info.end_random_id {
                counts[contained_by[by_rank[r] as usize] as usize + 1] += 1;
            }
            for c in 0..cells {
                counts[c + 1] += counts[c];
            }
            info.order_start = info.first_random_id;
            let mut fill = counts.clone();
            for r in info.first_random_id..info.end_random_id {
                let id = by_rank[r];
                let c = contained_by[id as usize] as usize;
                order[info.order_start + fill[c] as usize] = id;
                fill[c] += 1;
            }
            info.cell_offsets = counts;
        }

        Ok(LayeredGridIndex {
            base,
            coord_indices,
            bbox,
            layers,
            random_id,
            layer,
            contained_by,
            order,
        })
    }

    fn cell_of_in(bbox: &BoundingBox, p: &[f64], res: usize) -> usize {
        let ix = cell_coord(p[0], bbox.lo[0], bbox.extent(0), res);
        let iy = cell_coord(p[1], bbox.lo[1], bbox.extent(1), res);
        let iz = cell_coord(p[2], bbox.lo[2], bbox.extent(2), res);
        ix + res * (iy + res * iz)
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn coord_indices(&self) -> [usize; GRID_DIMS] {
        self.coord_indices
    }

    /// Half-open box over the three indexed coordinates.
    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.random_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.random_id.is_empty()
    }

    pub fn random_id(&self, id: usize) -> u64 {
        self.random_id[id]
    }

    pub fn layer_of(&self, id: usize) -> u32 {
        self.layer[id] as u32
    }

    pub fn contained_by(&self, id: usize) -> u32 {
        self.contained_by[id]
    }

    /// Linearized cell `ix + R·iy + R²·iz` of a 3-D point at `layer`.
    pub fn cell_of(&self, layer: u32, p: &[f64]) -> usize {
        Self::cell_of_in(&self.bbox, p, 1 << layer)
    }

    /// Extent of one cell (for oracles and display).
    pub fn cell_box(&self, layer: u32, cell: usize) -> BoundingBox {
        let res = 1usize << layer;
        let idx = [cell % res, (cell / res) % res, cell / (res * res)];
        let mut lo = Vec::with_capacity(GRID_DIMS);
        let mut hi = Vec::with_capacity(GRID_DIMS);
        for d in 0..GRID_DIMS {
            let w = self.bbox.extent(d) / res as f64;
            lo.push(self.bbox.lo[d] + idx[d] as f64 * w);
            hi.push(self.bbox.lo[d] + (idx[d] + 1) as f64 * w);
        }
        BoundingBox { lo, hi }
    }

    /// Per-axis inclusive cell index ranges touched by `q`, `None` when `q`
    /// misses the indexed box.
    fn axis_ranges(&self, res: usize, q: &BoundingBox) -> Option<[(usize, usize); GRID_DIMS]> {
        let mut out = [(0, 0); GRID_DIMS];
        for (d, r) in out.iter_mut().enumerate() {
            if q.hi[d] < self.bbox.lo[d] || q.lo[d] >= self.bbox.hi[d] {
                return None;
            }
            let e = self.bbox.extent(d);
            *r = (
                cell_coord(q.lo[d], self.bbox.lo[d], e, res),
                cell_coord(q.hi[d], self.bbox.lo[d], e, res),
            );
        }
        Some(out)
    }

    /// Cells of `layer` whose extent meets the closed query box, computed
    /// from per-axis index ranges.
    pub fn cells_intersecting(&self, layer: u32, q: &BoundingBox) -> Result<Vec<usize>> {
        if layer == 0 || layer as usize > self.layers.len() {
            return Err(Error::InvalidParameter(format!(
                "layer {layer} out of range"
            )));
        }
        self.check_query(q)?;
        let res = 1usize << layer;
        let Some([(x0, x1), (y0, y1), (z0, z1)]) = self.axis_ranges(res, q) else {
            return Ok(Vec::new());
        };
        let mut cells = Vec::with_capacity((x1 - x0 + 1) * (y1 - y0 + 1) * (z1 - z0 + 1));
        for iz in z0..=z1 {
            for iy in y0..=y1 {
                for ix in x0..=x1 {
                    cells.push(ix + res * (iy + res * iz));
                }
            }
        }
        Ok(cells)
    }

    fn check_query(&self, q: &BoundingBox) -> Result<()> {
        if q.dim() != GRID_DIMS {
            return Err(Error::Dim {
                expected: GRID_DIMS,
                got: q.dim(),
            });
        }
        q.validate()
    }

    /// Returns every in-`q` point of layers `1..=ℓ*`, where `ℓ*` is the
    /// first layer at which the running count reaches `n` (or the last
    /// layer). The stopping layer is always read completely.
    pub fn sample_box(&self, ps: &PointSet, q: &BoundingBox, n: usize) -> Result<Sample> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        self.check_query(q)?;
        let cols: Vec<&[f64]> = self.coord_indices.iter().map(|&d| ps.column(d)).collect();
        let mut ids = Vec::new();
        let mut examined = 0usize;
        let mut layers_read = 0;
        for info in &self.layers {
            layers_read = info.layer;
            let res = info.resolution;
            if let Some([(x0, x1), (y0, y1), (z0, z1)]) = self.axis_ranges(res, q) {
                for iz in z0..=z1 {
                    for iy in y0..=y1 {
                        let row = res * (iy + res * iz);
                        // Cells x0..=x1 of one row are contiguous in storage.
                        let range = info.cell_range(row + x0).start..info.cell_range(row + x1).end;
                        examined += range.len();
                        for &id in &self.order[range] {
                            let id = id as usize;
                            if (0..GRID_DIMS).all(|d| {
                                let x = cols[d][id];
                                q.lo[d] <= x && x <= q.hi[d]
                            }) {
                                ids.push(id);
                            }
                        }
                    }
                }
            }
            if ids.len() >= n {
                break;
            }
        }
        Ok(Sample {
            ids,
            examined,
            layers_read,
        })
    }

    /// Sidecar layout: magic `HGLG`, version u16, base u64, three u16 coord
    /// indices, N u64, box (3 lo + 3 hi f64), then per point: random_id u64
    /// column, layer u8 column, contained_by u32 column.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u64::<LittleEndian>(self.base as u64)?;
        for &c in &self.coord_indices {
            w.write_u16::<LittleEndian>(c as u16)?;
        }
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        write_f64s(w, &self.bbox.lo)?;
        write_f64s(w, &self.bbox.hi)?;
        for &r in &self.random_id {
            w.write_u64::<LittleEndian>(r)?;
        }
        w.write_all(&self.layer)?;
        for &c in &self.contained_by {
            w.write_u32::<LittleEndian>(c)?;
        }
        Ok(())
    }

    /// Reads a sidecar and re-derives the cell order; `ps` must be the indexed set.
    pub fn read<R: Read>(mut r: R, ps: &PointSet) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::MalformedHeader("truncated grid header".into()))?;
        if &magic != GRID_MAGIC {
            return Err(Error::MalformedHeader(format!("bad grid magic {magic:?}")));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported version {version}"
            )));
        }
        let base = r.read_u64::<LittleEndian>()? as usize;
        let mut coord_indices = [0usize; GRID_DIMS];
        for c in coord_indices.iter_mut() {
            *c = r.read_u16::<LittleEndian>()? as usize;
        }
        let n = r.read_u64::<LittleEndian>()? as usize;
        if n != ps.len() {
            return Err(Error::Dim {
                expected: ps.len(),
                got: n,
            });
        }
        if base < BRANCHING || n == 0 {
            return Err(Error::MalformedHeader("invalid grid parameters".into()));
        }
        let bbox = BoundingBox::new(read_f64s(&mut r, GRID_DIMS)?, read_f64s(&mut r, GRID_DIMS)?)?;
        let mut random_id = vec![0u64; n];
        r.read_u64_into::<LittleEndian>(&mut random_id)?;
        let mut layer = vec![0u8; n];
        r.read_exact(&mut layer)?;
        let mut contained_by = vec![0u32; n];
        r.read_u32_into::<LittleEndian>(&mut contained_by)?;
        let sub = ps.select_dims(&coord_indices)?;
        let idx = Self::assemble(&sub, coord_indices, base, bbox, random_id)?;
        if idx.layer != layer || idx.contained_by != contained_by {
            return Err(Error::MalformedHeader(
                "grid sidecar does not match the point set".into(),
            ));
        }
        Ok(idx)
    }
}
