//! Columnar point storage, file formats, the synthetic mixture generator and
//! the linear transforms (whitening, PCA) applied before indexing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::rng;

pub const POINTS_MAGIC: &[u8; 4] = b"HGPS";
pub const FORMAT_VERSION: u16 = 1;

const FLAG_LABELS: u8 = 1;
const FLAG_TARGETS: u8 = 2;

/// Relative padding added on the high side of a bounding box.
pub const BOX_EPSILON: f64 = 1e-9;

/// Immutable D-dimensional point set stored column by column.
///
/// Point ids are the row indices `0..len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    columns: Vec<Vec<f64>>,
    count: usize,
    labels: Option<Vec<i32>>,
    targets: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Csv,
}

impl Format {
    /// Guesses the format from a file extension (`.csv` or anything else).
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

impl PointSet {
    /// Builds a point set from `dim` columns of equal length.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidParameter("dim must be at least 1".into()));
        }
        let count = columns[0].len();
        for (d, c) in columns.iter().enumerate() {
            if c.len() != count {
                return Err(Error::Dim {
                    expected: count,
                    got: c.len(),
                });
            }
            if let Some(row) = c.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { row, column: d });
            }
        }
        Ok(PointSet {
            columns,
            count,
            labels: None,
            targets: None,
        })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut columns = vec![Vec::with_capacity(rows.len()); dim];
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    row: i,
                    expected: dim,
                    found: r.len(),
                });
            }
            for d in 0..dim {
                columns[d].push(r[d]);
            }
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be at least 1".into()));
        }
        Self::from_columns(columns)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::from_columns(vec![Vec::new(); dim])
    }

    pub fn with_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != self.count {
            return Err(Error::Dim {
                expected: self.count,
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_targets(mut self, targets: Vec<f64>) -> Result<Self> {
        if targets.len() != self.count {
            return Err(Error::Dim {
                expected: self.count,
                got: targets.len(),
            });
        }
        if let Some(row) = targets.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                row,
                column: self.dim(),
            });
        }
        self.targets = Some(targets);
        Ok(self)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    pub fn coord(&self, id: usize, d: usize) -> f64 {
        self.columns[d][id]
    }

    pub fn column(&self, d: usize) -> &[f64] {
        &self.columns[d]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    pub fn targets(&self) -> Option<&[f64]> {
        self.targets.as_deref()
    }

    pub fn point(&self, id: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[id]).collect()
    }

    /// Copies point `id` into `buf` (length `dim`).
    #[inline]
    pub fn fill_point(&self, id: usize, buf: &mut [f64]) {
        for (b, c) in buf.iter_mut().zip(&self.columns) {
            *b = c[id];
        }
    }

    #[inline]
    pub fn dist_sq_to(&self, id: usize, p: &[f64]) -> f64 {
        let mut s = 0.0;
        for (c, &x) in self.columns.iter().zip(p) {
            let t = c[id] - x;
            s += t * t;
        }
        s
    }

    /// New point set holding the listed rows (labels/targets carried along).
    pub fn subset(&self, ids: &[usize]) -> PointSet {
        PointSet {
            columns: self
                .columns
                .iter()
                .map(|c| ids.iter().map(|&i| c[i]).collect())
                .collect(),
            count: ids.len(),
            labels: self
                .labels
                .as_ref()
                .map(|l| ids.iter().map(|&i| l[i]).collect()),
            targets: self
                .targets
                .as_ref()
                .map(|t| ids.iter().map(|&i| t[i]).collect()),
        }
    }

    /// New point set holding only the listed dimensions.
    pub fn select_dims(&self, dims: &[usize]) -> Result<PointSet> {
        for &d in dims {
            if d >= self.dim() {
                return Err(Error::Dim {
                    expected: self.dim(),
                    got: d + 1,
                });
            }
        }
        Ok(PointSet {
            columns: dims.iter().map(|&d| self.columns[d].clone()).collect(),
            count: self.count,
            labels: self.labels.clone(),
            targets: self.targets.clone(),
        })
    }

    /// Tight per-dimension bounds, padded on the high side so every point
    /// satisfies `lo <= x < hi`.
    pub fn bounding_box(&self) -> Result<BoundingBox> {
        if self.count == 0 {
            return Err(Error::Empty);
        }
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for c in &self.columns {
            let (mn, mx) = c
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                    (a.min(x), b.max(x))
                });
            lo.push(mn);
            hi.push(mx + BOX_EPSILON * (mx - mn).max(mx.abs()).max(1.0));
        }
        Ok(BoundingBox { lo, hi })
    }

    pub fn load(path: impl AsRef<Path>, format: Format) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        match format {
            Format::Binary => Self::read_binary(reader),
            Format::Csv => Self::read_csv(reader),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: Format) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        match format {
            Format::Binary => self.write_binary(&mut w)?,
            Format::Csv => self.write_csv(&mut w)?,
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `HGPS` container: magic, version u16, D u16, N u64, flags u8, then D
    /// little-endian f64 columns, optional i32 labels, optional f64 targets.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        if self.dim() > u16::MAX as usize {
            return Err(Error::InvalidParameter("dim exceeds u16".into()));
        }
        w.write_all(POINTS_MAGIC)?;
        w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u16::<LittleEndian>(self.dim() as u16)?;
        w.write_u64::<LittleEndian>(self.count as u64)?;
        let mut flags = 0u8;
        if self.labels.is_some() {
            flags |= FLAG_LABELS;
        }
        if self.targets.is_some() {
            flags |= FLAG_TARGETS;
        }
        w.write_u8(flags)?;
        for c in &self.columns {
            write_f64s(w, c)?;
        }
        if let Some(l) = &self.labels {
            for &x in l {
                w.write_i32::<LittleEndian>(x)?;
            }
        }
        if let Some(t) = &self.targets {
            write_f64s(w, t)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::MalformedHeader("truncated header".into()))?;
        if &magic != POINTS_MAGIC {
            return Err(Error::MalformedHeader(format!("bad magic {magic:?}")));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported version {version}"
            )));
        }
        let dim = r.read_u16::<LittleEndian>()? as usize;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let flags = r.read_u8()?;
        if dim == 0 {
            return Err(Error::MalformedHeader("dim = 0".into()));
        }
        if flags & !(FLAG_LABELS | FLAG_TARGETS) != 0 {
            return Err(Error::MalformedHeader(format!("unknown flags {flags:#x}")));
        }
        let mut columns = Vec::with_capacity(dim);
        for _ in 0..dim {
            columns.push(read_f64s(&mut r, count)?);
        }
        let mut ps = PointSet::from_columns(columns)?;
        if flags & FLAG_LABELS != 0 {
            let mut l = vec![0i32; count];
            r.read_i32_into::<LittleEndian>(&mut l)?;
            ps = ps.with_labels(l)?;
        }
        if flags & FLAG_TARGETS != 0 {
            ps = ps.with_targets(read_f64s(&mut r, count)?)?;
        }
        Ok(ps)
    }

    /// CSV with a header row. Columns named `label` / `target` are read as
    /// labels / targets; every other column is a coordinate.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(r);
        let headers = rdr
            .headers()
            .map_err(|e| Error::MalformedHeader(e.to_string()))?
            .clone();
        let mut coord_cols = Vec::new();
        let mut label_col = None;
        let mut target_col = None;
        for (i, h) in headers.iter().enumerate() {
            match h {
                "label" if label_col.is_none() => label_col = Some(i),
                "target" if target_col.is_none() => target_col = Some(i),
                "" => return Err(Error::MalformedHeader(format!("empty name for column {i}"))),
                _ => coord_cols.push(i),
            }
        }
        if coord_cols.is_empty() {
            return Err(Error::MalformedHeader("no coordinate columns".into()));
        }
        let mut columns = vec![Vec::new(); coord_cols.len()];
        let mut labels = Vec::new();
        let mut targets = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| match e.kind() {
                csv::ErrorKind::UnequalLengths { len, .. } => Error::DimensionMismatch {
                    row,
                    expected: headers.len(),
                    found: *len as usize,
                },
                _ => Error::Parse {
                    row,
                    value: e.to_string(),
                },
            })?;
            for (d, &c) in coord_cols.iter().enumerate() {
                let v = parse_f64(&rec[c], row)?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { row, column: c });
                }
                columns[d].push(v);
            }
            if let Some(c) = label_col {
                labels.push(rec[c].parse::<i32>().map_err(|_| Error::Parse {
                    row,
                    value: rec[c].to_string(),
                })?);
            }
            if let Some(c) = target_col {
                let v = parse_f64(&rec[c], row)?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { row, column: c });
                }
                targets.push(v);
            }
        }
        let mut ps = PointSet::from_columns(columns)?;
        if label_col.is_some() {
            ps = ps.with_labels(labels)?;
        }
        if target_col.is_some() {
            ps = ps.with_targets(targets)?;
        }
        Ok(ps)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim()).map(|d| format!("x{d}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        if self.targets.is_some() {
            header.push("target".into());
        }
        wtr.write_record(&header).map_err(csv_io)?;
        let mut rec = Vec::with_capacity(header.len());
        for i in 0..self.count {
            rec.clear();
            rec.extend(self.columns.iter().map(|c| format!("{:?}", c[i])));
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            if let Some(t) = &self.targets {
                rec.push(format!("{:?}", t[i]));
            }
            wtr.write_record(&rec).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Stream(std::io::Error::other(e))
}

fn parse_f64(s: &str, row: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse {
        row,
        value: s.to_string(),
    })
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for &x in xs {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0f64; n];
    r.read_f64_into::<LittleEndian>(&mut v)
        .map_err(|_| Error::MalformedHeader("truncated column data".into()))?;
    Ok(v)
}

/// One Gaussian component of the synthetic mixture (axis-aligned covariance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
}

/// Draws `n` points from a Gaussian mixture plus uniform outliers.
///
/// Each point draws, in order: one uniform to decide whether it is an
/// outlier, then either one uniform per dimension over the outlier box, or
/// one uniform for the component choice and one standard normal per
/// dimension. Component index is stored as the label; outliers get `-1`.
/// The outlier box is the union of `mean ± 4·stdev` over components,
/// widened by a quarter of its extent on each side.
pub fn generate_mixture(
    seed: u64,
    n: usize,
    dim: usize,
    components: &[Component],
    outlier_fraction: f64,
) -> Result<PointSet> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dim must be at least 1".into()));
    }
    if components.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one component required".into(),
        ));
    }
    if !(0.0..1.0).contains(&outlier_fraction) {
        return Err(Error::InvalidParameter(format!(
            "outlier_fraction {outlier_fraction} not in [0, 1)"
        )));
    }
    for (i, c) in components.iter().enumerate() {
        if c.mean.len() != dim || c.stdev.len() != dim {
            return Err(Error::InvalidParameter(format!(
                "component {i}: wrong dimension"
            )));
        }
        if !(c.weight > 0.0 && c.weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "component {i}: weight must be positive"
            )));
        }
        if c.stdev.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!("component {i}: bad stdev")));
        }
        if c.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter(format!("component {i}: bad mean")));
        }
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    let cumulative: Vec<f64> = components
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c.weight / total;
            Some(*acc)
        })
        .collect();

    let mut olo = vec![f64::INFINITY; dim];
    let mut ohi = vec![f64::NEG_INFINITY; dim];
    for c in components {
        for d in 0..dim {
            olo[d] = olo[d].min(c.mean[d] - 4.0 * c.stdev[d]);
            ohi[d] = ohi[d].max(c.mean[d] + 4.0 * c.stdev[d]);
        }
    }
    for d in 0..dim {
        let pad = 0.25 * (ohi[d] - olo[d]).max(1.0);
        olo[d] -= pad;
        ohi[d] += pad;
    }

    let mut r = rng::seeded(seed);
    let mut columns = vec![Vec::with_capacity(n); dim];
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = r.random();
        if u < outlier_fraction {
            for d in 0..dim {
                let t: f64 = r.random();
                columns[d].push(olo[d] + t * (ohi[d] - olo[d]));
            }
            labels.push(-1);
            continue;
        }
        let v: f64 = r.random();
        let k = cumulative
            .iter()
            .position(|&c| v < c)
            .unwrap_or(components.len() - 1);
        let c = &components[k];
        for d in 0..dim {
            let z: f64 = StandardNormal.sample(&mut r);
            columns[d].push(c.mean[d] + c.stdev[d] * z);
        }
        labels.push(k as i32);
    }
    PointSet::from_columns(columns)?.with_labels(labels)
}

/// Random mixture parameters: `k` components with weights in [0.5, 1.5],
/// per-axis stdev in [0.5, 1] and means at pairwise Euclidean distance at
/// least `separation` (in units of the largest stdev, 1). Means are drawn
/// uniformly from a cube grown by 10% whenever a draw keeps failing.
pub fn random_components(seed: u64, k: usize, dim: usize, separation: f64) -> Result<Vec<Component>> {
    if k == 0 || dim == 0 {
        return Err(Error::InvalidParameter(
            "need at least one component and one dimension".into(),
        ));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "separation {separation} must be finite and >= 0"
        )));
    }
    let mut r = rng::stream(seed, 1);
    let mut half = (separation * (k as f64).powf(1.0 / dim as f64)).max(1.0);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut failures = 0;
    while means.len() < k {
        let m: Vec<f64> = (0..dim).map(|_| r.random_range(-half..half)).collect();
        let far = means.iter().all(|o| {
            o.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= separation * separation
        });
        if far {
            means.push(m);
            failures = 0;
        } else {
            failures += 1;
            if failures == 100 {
                half *= 1.1;
                failures = 0;
            }
        }
    }
    Ok(means
        .into_iter()
        .map(|mean| Component {
            weight: r.random_range(0.5..1.5),
            stdev: (0..dim).map(|_| r.random_range(0.5..1.0)).collect(),
            mean,
        })
        .collect())
}

/// Uniform points over a box (no labels).
pub fn generate_uniform(seed: u64, n: usize, b: &BoundingBox) -> Result<PointSet> {
    b.validate()?;
    let mut r = rng::seeded(seed);
    let mut columns = vec![Vec::with_capacity(n); b.dim()];
    for _ in 0..n {
        for (d, col) in columns.iter_mut().enumerate() {
            let t: f64 = r.random();
            col.push(b.lo[d] + t * b.extent(d));
        }
    }
    PointSet::from_columns(columns)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Whitening,
    Pca,
}

/// `y = matrix · (x − mean)`; `matrix` is K×D, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTransform {
    pub mean: Vec<f64>,
    pub matrix: Vec<Vec<f64>>,
    pub kind: TransformKind,
}

#[derive(Debug, Clone)]
pub struct PcaFit {
    pub transform: LinearTransform,
    /// Variance along each returned direction, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Set when some returned direction has (numerically) zero variance and
    /// is therefore an arbitrary orthonormal completion.
    pub degenerate: bool,
}

impl LinearTransform {
    pub fn identity(dim: usize) -> Self {
        LinearTransform {
            mean: vec![0.0; dim],
            matrix: (0..dim)
                .map(|r| (0..dim).map(|c| if r == c { 1.0 } else { 0.0 }).collect())
                .collect(),
            kind: TransformKind::Whitening,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.matrix.len()
    }

    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .map(|row| {
                row.iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(m, (xi, mu))| m * (xi - mu))
                    .sum()
            })
            .collect()
    }

    /// `mean + matrixᵀ · y`; the inverse for PCA with K = D.
    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (row, &yk) in self.matrix.iter().zip(y) {
            for (xi, m) in x.iter_mut().zip(row) {
                *xi += m * yk;
            }
        }
        x
    }

    pub fn apply(&self, ps: &PointSet) -> Result<PointSet> {
        if ps.dim() != self.input_dim() {
            return Err(Error::Dim {
                expected: self.input_dim(),
                got: ps.dim(),
            });
        }
        let n = ps.len();
        let centered: Vec<Vec<f64>> = ps
            .columns()
            .iter()
            .zip(&self.mean)
            .map(|(c, mu)| c.iter().map(|x| x - mu).collect())
            .collect();
        let mut out = Vec::with_capacity(self.output_dim());
        for row in &self.matrix {
            let mut col = vec![0.0; n];
            for (m, c) in row.iter().zip(&centered) {
                if *m == 0.0 {
                    continue;
                }
                for (o, x) in col.iter_mut().zip(c) {
                    *o += m * x;
                }
            }
            out.push(col);
        }
        let mut res = PointSet::from_columns(out)?;
        res.labels = ps.labels.clone();
        res.targets = ps.targets.clone();
        Ok(res)
    }
}

fn column_means(ps: &PointSet) -> Vec<f64> {
    ps.columns()
        .iter()
        .map(|c| c.iter().sum::<f64>() / ps.len() as f64)
        .collect()
}

/// Per-dimension standardization: unit sample variance (N−1 denominator)
/// on the fitted set. Zero-variance dimensions are left unscaled.
pub fn fit_whitening(ps: &PointSet) -> Result<LinearTransform> {
    if ps.len() < 2 {
        return Err(Error::InvalidParameter(
            "whitening needs at least 2 points".into(),
        ));
    }
    let mean = column_means(ps);
    let dim = ps.dim();
    let mut matrix = vec![vec![0.0; dim]; dim];
    for d in 0..dim {
        let mu = mean[d];
        let var = ps
            .column(d)
            .iter()
            .map(|x| (x - mu) * (x - mu))
            .sum::<f64>()
            / (ps.len() - 1) as f64;
        matrix[d][d] = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    }
    Ok(LinearTransform {
        mean,
        matrix,
        kind: TransformKind::Whitening,
    })
}

/// Principal components by eigendecomposition of the sample covariance.
pub fn fit_pca(ps: &PointSet, k: usize) -> Result<PcaFit> {
    let dim = ps.dim();
    if k == 0 || k > dim {
        return Err(Error::InvalidParameter(format!("k = {k} not in 1..={dim}")));
    }
    if ps.len() < 2 {
        return Err(Error::InvalidParameter(
            "PCA needs at least 2 points".into(),
        ));
    }
    let mean = column_means(ps);
    let centered: Vec<Vec<f64>> = ps
        .columns()
        .iter()
        .zip(&mean)
        .map(|(c, mu)| c.iter().map(|x| x - mu).collect())
        .collect();
    let denom = (ps.len() - 1) as f64;
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for a in 0..dim {
        for b in a..dim {
            let s: f64 = centered[a]
                .iter()
                .zip(&centered[b])
                .map(|(x, y)| x * y)
                .sum();
            cov[(a, b)] = s / denom;
            cov[(b, a)] = s / denom;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut degenerate = false;
    let mut matrix = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        // Sign convention: largest-magnitude component positive.
        let (imax, _) = v.iter().enumerate().fold((0, 0.0f64), |(bi, bv), (j, x)| {
            if x.abs() > bv {
                (j, x.abs())
            } else {
                (bi, bv)
            }
        });
        if v[imax] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let ev = eig.eigenvalues[i].max(0.0);
        if ev <= 1e-12 * top.max(f64::MIN_POSITIVE) {
            degenerate = true;
        }
        explained.push(ev);
        matrix.push(v);
    }
    Ok(PcaFit {
        transform: LinearTransform {
            mean,
            matrix,
            kind: TransformKind::Pca,
        },
        explained_variance: explained,
        degenerate,
    })
}
