//! kNN + local polynomial regression of a scalar target.
//!
//! For a query `q` the `k` nearest reference points are fitted with a
//! polynomial in `(x − q) / h`, where `h` is the distance to the k-th
//! neighbor, so the estimate is simply the fitted constant term. Scaling by
//! `h` keeps the design matrix well conditioned without changing the fit.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PointSet;
use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::knn::{knn_brute, knn_search, NeighborList};
use crate::rng;

/// Monomial count for a polynomial of `order` in `dim` variables
/// (all monomials of total degree ≤ order, order ≤ 2).
pub fn coefficient_count(order: u8, dim: usize) -> usize {
    match order {
        0 => 1,
        1 => 1 + dim,
        _ => 1 + dim + dim * (dim + 1) / 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub order: u8,
    /// Ridge weight relative to the mean diagonal of the non-intercept block.
    pub ridge: f64,
}

impl FitConfig {
    /// Order 1, four neighbors per coefficient.
    pub fn default_for(dim: usize) -> Self {
        FitConfig {
            k: 4 * coefficient_count(1, dim),
            order: 1,
            ridge: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.order > 2 {
            return Err(Error::InvalidParameter(format!(
                "order {} not in 0..=2",
                self.order
            )));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ridge {} must be finite and >= 0",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// Reference catalog: features with a known target per point.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    features: PointSet,
    targets: Vec<f64>,
    tree: Option<KdTree>,
}

impl ReferenceSet {
    pub fn new(features: PointSet, targets: Vec<f64>) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::InvalidParameter(format!(
                "{} points but {} targets",
                features.len(),
                targets.len()
            )));
        }
        if let Some(row) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite {
                row,
                column: features.dim(),
            });
        }
        if features.is_empty() {
            return Err(Error::Empty);
        }
        let tree = if features.len() >= 2 {
            Some(KdTree::build(&features)?)
        } else {
            None
        };
        Ok(ReferenceSet {
            features,
            targets,
            tree,
        })
    }

    /// Uses the point set's own target column.
    pub fn from_points(ps: PointSet) -> Result<Self> {
        let targets = ps
            .targets()
            .ok_or_else(|| Error::InvalidParameter("reference set has no target column".into()))?
            .to_vec();
        Self::new(ps, targets)
    }

    pub fn features(&self) -> &PointSet {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn neighbors(&self, q: &[f64], k: usize) -> Result<NeighborList> {
        match &self.tree {
            Some(t) => knn_search(t, &self.features, q, k),
            None => knn_brute(&self.features, q, k),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateFlags {
    /// Fewer reference points than `k`.
    pub k_clamped: bool,
    /// Too few neighbors for the configured order; a lower order was used.
    pub order_reduced: bool,
    /// The unregularized system was singular and an extra ridge was added.
    pub rank_deficient: bool,
}

impl EstimateFlags {
    pub fn any(&self) -> bool {
        self.k_clamped || self.order_reduced || self.rank_deficient
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub neighbor_count: usize,
    pub order_used: u8,
    pub flags: EstimateFlags,
}

fn monomials(x: &[f64], order: u8, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if order >= 1 {
        out.extend_from_slice(x);
    }
    if order >= 2 {
        for a in 0..x.len() {
            for b in a..x.len() {
                out.push(x[a] * x[b]);
            }
        }
    }
}

pub fn estimate_target(reference: &ReferenceSet, q: &[f64], cfg: &FitConfig) -> Result<Estimate> {
    cfg.validate()?;
    let dim = reference.features.dim();
    let mut flags = EstimateFlags::default();
    let k = if cfg.k > reference.len() {
        flags.k_clamped = true;
        reference.len()
    } else {
        cfg.k
    };
    let nb = reference.neighbors(q, k)?;
    let mut order = cfg.order;
    while order > 0 && k < coefficient_count(order, dim) {
        order -= 1;
        flags.order_reduced = true;
    }
    let p = coefficient_count(order, dim);
    let h = match nb.kth_distance() {
        d if d > 0.0 && d.is_finite() => d,
        _ => 1.0,
    };

    let mut ata = DMatrix::<f64>::zeros(p, p);
    let mut aty = DVector::<f64>::zeros(p);
    let mut x = vec![0.0; dim];
    let mut row = Vec::with_capacity(p);
    for n in &nb.entries {
        reference.features.fill_point(n.id, &mut x);
        for (xi, qi) in x.iter_mut().zip(q) {
            *xi = (*xi - qi) / h;
        }
        monomials(&x, order, &mut row);
        let y = reference.targets[n.id];
        for a in 0..p {
            aty[a] += row[a] * y;
            for b in a..p {
                ata[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            ata[(a, b)] = ata[(b, a)];
        }
    }

    let scale = if p > 1 {
        (1..p).map(|i| ata[(i, i)]).sum::<f64>() / (p - 1) as f64
    } else {
        0.0
    };
    // Pivots below this fraction of the diagonal mean the system is
    // numerically singular even if the factorization succeeds.
    const PIVOT_FLOOR: f64 = 1e-12;
    let solve = |lambda: f64| {
        let mut m = ata.clone();
        for i in 1..p {
            m[(i, i)] += lambda;
        }
        let top = (0..p).map(|i| m[(i, i)]).fold(0.0, f64::max);
        let chol = m.cholesky()?;
        let l = chol.l_dirty();
        if (0..p).any(|i| l[(i, i)] * l[(i, i)] <= PIVOT_FLOOR * top) {
            return None;
        }
        Some(chol.solve(&aty)[0]).filter(|v| v.is_finite())
    };
    let value = match solve(cfg.ridge * scale) {
        Some(v) => v,
        None => {
            flags.rank_deficient = true;
            // A zero non-intercept block means every neighbor sits on the
            // query; any positive ridge then yields zero slopes.
            let lambda = if scale > 0.0 { 1e-6 * scale } else { 1.0 };
            solve(lambda).ok_or_else(|| Error::InvalidParameter("local fit is singular".into()))?
        }
    };
    Ok(Estimate {
        value,
        neighbor_count: nb.len(),
        order_used: order,
        flags,
    })
}

/// Estimates for every point of `unknown`, in input order.
pub fn estimate_all(
    reference: &ReferenceSet,
    unknown: &PointSet,
    cfg: &FitConfig,
) -> Result<Vec<Estimate>> {
    cfg.validate()?;
    if unknown.dim() != reference.features.dim() {
        return Err(Error::Dim {
            expected: reference.features.dim(),
            got: unknown.dim(),
        });
    }
    (0..unknown.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; unknown.dim()],
            |buf, id| {
                unknown.fill_point(id, buf);
                estimate_target(reference, buf, cfg)
            },
        )
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub rms: f64,
    pub mae: f64,
}

impl ErrorMetrics {
    pub fn from_errors(errors: &[f64]) -> Self {
        let n = errors.len().max(1) as f64;
        ErrorMetrics {
            rms: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
            mae: errors.iter().map(|e| e.abs()).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub folds: usize,
    pub points: usize,
    pub a: ErrorMetrics,
    pub b: ErrorMetrics,
    /// `100·(rms_a − rms_b)/rms_a`: positive when `b` is better.
    pub improvement_pct: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bootstrap: usize,
}

fn improvement(sq_a: f64, sq_b: f64) -> f64 {
    if sq_a == sq_b {
        return 0.0;
    }
    let (ra, rb) = (sq_a.sqrt(), sq_b.sqrt());
    100.0 * (ra - rb) / ra
}

/// k-fold cross-validated comparison of two configurations with a paired
/// percentile bootstrap 95% interval on the RMS improvement.
pub fn evaluate_estimator(
    reference: &ReferenceSet,
    cfg_a: &FitConfig,
    cfg_b: &FitConfig,
    folds: usize,
    bootstrap: usize,
    seed: u64,
) -> Result<Comparison> {
    cfg_a.validate()?;
    cfg_b.validate()?;
    let n = reference.len();
    if folds < 2 || folds > n {
        return Err(Error::InvalidParameter(format!(
            "folds = {folds} not in 2..={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    let mut fold_of = vec![0usize; n];
    for (pos, &id) in order.iter().enumerate() {
        fold_of[id] = pos % folds;
    }
    let mut err_a = vec![0.0; n];
    let mut err_b = vec![0.0; n];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let tr = ReferenceSet::new(
            reference.features.subset(&train),
            train.iter().map(|&i| reference.targets[i]).collect(),
        )?;
        let held = reference.features.subset(&test);
        let ea = estimate_all(&tr, &held, cfg_a)?;
        let eb = if cfg_a == cfg_b {
            ea.clone()
        } else {
            estimate_all(&tr, &held, cfg_b)?
        };
        for (j, &i) in test.iter().enumerate() {
            err_a[i] = ea[j].value - reference.targets[i];
            err_b[i] = eb[j].value - reference.targets[i];
        }
    }
    let sq = |e: &[f64], idx: &mut dyn Iterator<Item = usize>| -> f64 {
        let mut s = 0.0;
        let mut c = 0usize;
        for i in idx {
            s += e[i] * e[i];
            c += 1;
        }
        s / c as f64
    };
    let full_a = sq(&err_a, &mut (0..n));
    let full_b = sq(&err_b, &mut (0..n));
    let mut r = rng::stream(seed, 1);
    let mut samples: Vec<f64> = Vec::with_capacity(bootstrap);
    let mut pick = vec![0usize; n];
    for _ in 0..bootstrap {
        for p in pick.iter_mut() {
            *p = r.random_range(0..n);
        }
        let a = sq(&err_a, &mut pick.iter().copied());
        let b = sq(&err_b, &mut pick.iter().copied());
        samples.push(improvement(a, b));
    }
    samples.sort_by(f64::total_cmp);
    let quantile = |q: f64| -> f64 {
        if samples.is_empty() {
            return f64::NAN;
        }
        let pos = q * (samples.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        samples[lo] + (samples[hi] - samples[lo]) * (pos - lo as f64)
    };
    Ok(Comparison {
        folds,
        points: n,
        a: ErrorMetrics::from_errors(&err_a),
        b: ErrorMetrics::from_errors(&err_b),
        improvement_pct: improvement(full_a, full_b),
        ci_low: quantile(0.025),
        ci_high: quantile(0.975),
        bootstrap,
    })
}
