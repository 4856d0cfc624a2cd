//! Wire types and the request handlers, independent of the HTTP layer.
//!
//! Every handler is a thin serialization of one index operation. Boxes for
//! `kdboxes`, `delaunay_edges` and `voronoi_cells` may be given either in
//! the dataset's full dimension or in the three serving dimensions; a
//! three-dimensional box is left unbounded along the other columns.

use serde::{Deserialize, Serialize};

use hypergrid_core::kdtree::NodeDescriptor;
use hypergrid_core::knn::knn_search_with_stats;
use hypergrid_core::{BoundingBox, PointSet, Polytope};

use crate::catalog::{Catalog, Dataset};

pub const SCHEMA_VERSION: u32 = 1;

/// Media type of binary point responses: an `HGPS` container whose column
/// 0 holds point ids (exact as f64 below 2^53) followed by the serving
/// coordinates, plus the targets column when the dataset has targets.
pub const BINARY_POINTS: &str = "application/x-hypergrid-points";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Sample,
    Knn,
    Polytope,
    Kdboxes,
    DelaunayEdges,
    VoronoiCells,
}

impl Kind {
    pub fn path(self) -> &'static str {
        match self {
            Kind::Sample => "sample",
            Kind::Knn => "knn",
            Kind::Polytope => "polytope",
            Kind::Kdboxes => "kdboxes",
            Kind::DelaunayEdges => "delaunay_edges",
            Kind::VoronoiCells => "voronoi_cells",
        }
    }
}

/// Request body. Which payload fields are required depends on the kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    /// Optional; must match the endpoint when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polytope: Option<Polytope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_edges: Option<usize>,
    /// Ladder level for `voronoi_cells`, 0 = coarsest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub id: usize,
    /// Coordinates along the serving dimensions.
    pub coords: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell: usize,
    pub seed_id: usize,
    pub volume: f64,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    /// Points (or nodes, edges, cells) read to answer.
    pub examined: usize,
    /// Rows in the primary result collection.
    pub returned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub schema_version: u32,
    pub kind: Kind,
    pub dataset: String,
    pub points: Vec<PointRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<NodeDescriptor>>,
    /// Dataset ids of the two seeds, smaller first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<CellRecord>>,
    /// Seed count of the Voronoi level that answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    pub stats: Stats,
}

impl QueryResponse {
    pub fn new(kind: Kind, dataset: &str) -> Self {
        QueryResponse {
            schema_version: SCHEMA_VERSION,
            kind,
            dataset: dataset.to_string(),
            points: Vec::new(),
            boxes: None,
            edges: None,
            cells: None,
            seeds: None,
            stats: Stats::default(),
        }
    }

    /// Rows counted against the row cap.
    pub fn rows(&self) -> usize {
        self.points.len()
            + self.boxes.as_ref().map_or(0, Vec::len)
            + self.edges.as_ref().map_or(0, Vec::len)
            + self
                .cells
                .as_ref()
                .map_or(0, |c| c.iter().map(|r| 1 + r.members.len()).sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapInfo {
    pub cap: usize,
    pub returned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: u32,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<CapInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    TooLarge(CapInfo),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::BadRequest(_) => 400,
            ApiError::NotFound(_) => 404,
            ApiError::TooLarge(_) => 413,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (error, stats) = match self {
            ApiError::BadRequest(m) | ApiError::NotFound(m) => (m.clone(), None),
            ApiError::TooLarge(c) => (
                format!("result has {} rows, cap is {}", c.returned, c.cap),
                Some(c.clone()),
            ),
        };
        ErrorBody {
            schema_version: SCHEMA_VERSION,
            error,
            stats,
        }
    }
}

impl From<hypergrid_core::Error> for ApiError {
    fn from(e: hypergrid_core::Error) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn required<T>(v: Option<T>, field: &str, kind: Kind) -> ApiResult<T> {
    v.ok_or_else(|| ApiError::BadRequest(format!("{} requires `{field}`", kind.path())))
}

fn positive(v: usize, field: &str) -> ApiResult<usize> {
    if v == 0 {
        Err(ApiError::BadRequest(format!("`{field}` must be at least 1")))
    } else {
        Ok(v)
    }
}

/// Serves one request against the catalog, enforcing the row cap.
pub fn handle(
    catalog: &Catalog,
    dataset: &str,
    kind: Kind,
    req: &QueryRequest,
) -> ApiResult<QueryResponse> {
    let ds = catalog
        .get(dataset)
        .ok_or_else(|| ApiError::NotFound(format!("unknown dataset {dataset:?}")))?;
    if let Some(v) = req.schema_version {
        if v != SCHEMA_VERSION {
            return Err(ApiError::BadRequest(format!(
                "schema_version {v} not supported (server speaks {SCHEMA_VERSION})"
            )));
        }
    }
    if let Some(k) = req.kind {
        if k != kind {
            return Err(ApiError::BadRequest(format!(
                "kind {} sent to /{}",
                k.path(),
                kind.path()
            )));
        }
    }
    let resp = match kind {
        Kind::Sample => sample(ds, req)?,
        Kind::Knn => knn(ds, req)?,
        Kind::Polytope => polytope(ds, req)?,
        Kind::Kdboxes => kdboxes(ds, req)?,
        Kind::DelaunayEdges => delaunay_edges(ds, req)?,
        Kind::VoronoiCells => voronoi_cells(ds, req)?,
    };
    let rows = resp.rows();
    if rows > catalog.row_cap {
        return Err(ApiError::TooLarge(CapInfo {
            cap: catalog.row_cap,
            returned: rows,
        }));
    }
    Ok(resp)
}

/// Point rows in the given id order.
pub fn point_records(ds: &Dataset, ids: impl IntoIterator<Item = usize>) -> Vec<PointRecord> {
    let dims = ds.serving_dims();
    let targets = ds.points.targets();
    ids.into_iter()
        .map(|id| PointRecord {
            id,
            coords: dims.iter().map(|&d| ds.points.coord(id, d)).collect(),
            scalar: targets.map(|t| t[id]),
            distance: None,
        })
        .collect()
}

fn full_box(ds: &Dataset, b: BoundingBox) -> ApiResult<BoundingBox> {
    let dim = ds.points.dim();
    b.validate()?;
    if b.dim() == dim {
        return Ok(b);
    }
    if b.dim() != 3 {
        return Err(ApiError::BadRequest(format!(
            "box has {} dimensions; expected {dim} or 3",
            b.dim()
        )));
    }
    let mut lifted = BoundingBox::unbounded(dim);
    for (j, &d) in ds.serving_dims().iter().enumerate() {
        lifted.lo[d] = b.lo[j];
        lifted.hi[d] = b.hi[j];
    }
    Ok(lifted)
}

fn sample(ds: &Dataset, req: &QueryRequest) -> ApiResult<QueryResponse> {
    let b = required(req.bbox.clone(), "box", Kind::Sample)?;
    let n = positive(required(req.n, "n", Kind::Sample)?, "n")?;
    let s = ds.grid.sample_box(&ds.points, &b, n)?;
    let mut r = QueryResponse::new(Kind::Sample, &ds.name);
    r.points = point_records(ds, s.ids.iter().copied());
    r.stats = Stats {
        examined: s.examined,
        returned: r.points.len(),
    };
    Ok(r)
}

fn knn(ds: &Dataset, req: &QueryRequest) -> ApiResult<QueryResponse> {
    let p = required(req.point.clone(), "point", Kind::Knn)?;
    let k = positive(required(req.k, "k", Kind::Knn)?, "k")?;
    let (list, st) = knn_search_with_stats(&ds.kd, &ds.points, &p, k)?;
    let mut r = QueryResponse::new(Kind::Knn, &ds.name);
    r.points = point_records(ds, list.ids());
    for (rec, nb) in r.points.iter_mut().zip(&list.entries) {
        rec.distance = Some(nb.distance);
    }
    r.stats = Stats {
        examined: st.points_examined,
        returned: r.points.len(),
    };
    Ok(r)
}

fn polytope(ds: &Dataset, req: &QueryRequest) -> ApiResult<QueryResponse> {
    let poly = required(req.polytope.as_ref(), "polytope", Kind::Polytope)?;
    let res = ds.kd.query_polytope(&ds.points, poly)?;
    let mut ids = res.ids;
    ids.sort_unstable();
    let mut r = QueryResponse::new(Kind::Polytope, &ds.name);
    r.points = point_records(ds, ids);
    r.stats = Stats {
        examined: res.stats.tested + res.stats.wholesale,
        returned: r.points.len(),
    };
    Ok(r)
}

fn kdboxes(ds: &Dataset, req: &QueryRequest) -> ApiResult<QueryResponse> {
    let b = full_box(ds, required(req.bbox.clone(), "box", Kind::Kdboxes)?)?;
    let n = positive(required(req.n, "n", Kind::Kdboxes)?, "n")?;
    let boxes = ds.kd.subtree_at_depth(&b, n)?;
    let mut r = QueryResponse::new(Kind::Kdboxes, &ds.name);
    r.stats = Stats {
        examined: boxes.len(),
        returned: boxes.len(),
    };
    r.boxes = Some(boxes);
    Ok(r)
}

fn delaunay_edges(ds: &Dataset, req: &QueryRequest) -> ApiResult<QueryResponse> {
    let b = full_box(ds, required(req.bbox.clone(), "box", Kind::DelaunayEdges)?)?;
    let min_edges = req.min_edges.unwrap_or(1);
    if ds.ladder.is_empty() {
        return Err(ApiError::NotFound(format!(
            "dataset {:?} has no Voronoi index",
            ds.name
        )));
    }
    let mut examined = 0;
    let mut chosen = None;
    for idx in &ds.ladder {
        let edges = idx.edges_in_box(&b)?;
        examined += idx.seed_count();
        let enough = edges.len() >= min_edges;
        chosen = Some((idx, edges));
        if enough {
            break;
        }
    }
    let (idx, edges) = chosen.expect("ladder is non-empty");
    let sid = idx.seed_ids();
    let mut pairs: Vec<[usize; 2]> = edges
        .iter()
        .map(|&(a, c)| {
            let (x, y) = (sid[a as usize], sid[c as usize]);
            [x.min(y), x.max(y)]
        })
        .collect();
    pairs.sort_unstable();
    let mut ends: Vec<usize> = pairs.iter().flatten().copied().collect();
    ends.sort_unstable();
    ends.dedup();
    let mut r = QueryResponse::new(Kind::DelaunayEdges, &ds.name);
    r.points = point_records(ds, ends);
    r.seeds = Some(idx.seed_count());
    r.stats = Stats {
        examined,
        returned: pairs.len(),
    };
    r.edges = Some(pairs);
    Ok(r)
}

fn voronoi_cells(ds: &Dataset, req: &QueryRequest) -> ApiResult<QueryResponse> {
    let b = full_box(ds, required(req.bbox.clone(), "box", Kind::VoronoiCells)?)?;
    let level = req.level.unwrap_or(0);
    let idx = ds.ladder.get(level).ok_or_else(|| {
        ApiError::NotFound(format!(
            "dataset {:?} has {} Voronoi levels; level {level} requested",
            ds.name,
            ds.ladder.len()
        ))
    })?;
    let cells: Vec<CellRecord> = idx
        .cells_in_box(&b)?
        .into_iter()
        .map(|c| CellRecord {
            cell: c,
            seed_id: idx.seed_ids()[c],
            volume: idx.volumes().volume(c),
            members: idx.members(c).iter().map(|&m| m as usize).collect(),
        })
        .collect();
    let mut r = QueryResponse::new(Kind::VoronoiCells, &ds.name);
    r.points = point_records(ds, cells.iter().map(|c| c.seed_id));
    r.seeds = Some(idx.seed_count());
    r.stats = Stats {
        examined: idx.seed_count(),
        returned: cells.len(),
    };
    r.cells = Some(cells);
    Ok(r)
}

/// Binary encoding of a point payload; see [`BINARY_POINTS`].
pub fn encode_points(ds: &Dataset, points: &[PointRecord]) -> Vec<u8> {
    let mut cols: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(points.len())).collect();
    for p in points {
        cols[0].push(p.id as f64);
        for (j, &x) in p.coords.iter().enumerate() {
            cols[j + 1].push(x);
        }
    }
    let mut ps = PointSet::from_columns(cols).expect("equal-length columns");
    if ds.points.targets().is_some() {
        ps = ps
            .with_targets(points.iter().map(|p| p.scalar.unwrap_or(f64::NAN)).collect())
            .expect("one target per point");
    }
    let mut out = Vec::new();
    ps.write_binary(&mut out).expect("writing to memory");
    out
}
