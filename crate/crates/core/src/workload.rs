//! Random polytope workloads and the selectivity benchmark.
//!
//! A workload polytope is a randomly rotated cube (the `2·D` faces `±u_i`
//! of a random orthonormal basis, so it is always bounded) cut by extra
//! random faces, centered on a random data point `c` with every face at
//! distance `r`. A point `x` is inside iff
//! `max_j n_j·(x − c) ≤ r`, so the radius giving a target selectivity is an
//! order statistic of that maximum over the data.

use std::time::Instant;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::PointSet;
use crate::error::{Error, Result};
use crate::geometry::{Halfspace, Polytope};
use crate::kdtree::{full_scan, KdTree};
use crate::rng::{self, Rng};

/// Bounded polytope with `2·D + extra_faces` halfspaces selecting about
/// `target · N` points (exactly that many when no two points tie on the
/// radius).
pub fn random_polytope(
    ps: &PointSet,
    extra_faces: usize,
    target: f64,
    r: &mut Rng,
) -> Result<Polytope> {
    if ps.is_empty() {
        return Err(Error::Empty);
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "selectivity {target} not in (0, 1]"
        )));
    }
    let dim = ps.dim();
    let center = ps.point(r.random_range(0..ps.len()));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v = random_direction(dim, r);
        for b in &basis {
            let t: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= t * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut normals: Vec<Vec<f64>> = Vec::with_capacity(2 * dim + extra_faces);
    for b in basis {
        normals.push(b.iter().map(|x| -x).collect());
        normals.push(b);
    }
    normals.extend((0..extra_faces).map(|_| random_direction(dim, r)));
    let base: Vec<f64> = normals
        .iter()
        .map(|n| n.iter().zip(&center).map(|(a, b)| a * b).sum())
        .collect();
    let mut reach: Vec<f64> = (0..ps.len())
        .map(|id| {
            normals
                .iter()
                .zip(&base)
                .map(|(n, b)| {
                    let mut s = 0.0;
                    for (d, &nd) in n.iter().enumerate() {
                        s += nd * ps.coord(id, d);
                    }
                    s - b
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let want = ((target * ps.len() as f64).round() as usize).clamp(1, ps.len());
    let (_, radius, _) = reach.select_nth_unstable_by(want - 1, f64::total_cmp);
    let radius = *radius;
    // Offsets are built from the same sums the containment test evaluates,
    // so the selected points lie inside up to rounding of `b + r`.
    Polytope::new(
        normals
            .into_iter()
            .zip(base)
            .map(|(normal, b)| Halfspace {
                normal,
                offset: b + radius,
            })
            .collect(),
    )
}

fn random_direction(dim: usize, r: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// One benchmark level: aggregates over the queries issued at `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityRow {
    pub target: f64,
    pub queries: usize,
    pub mean_selectivity: f64,
    pub returned: usize,
    pub tested: usize,
    /// Total tested over total returned.
    pub tested_per_returned: f64,
    /// Worst single-query tested/returned.
    pub max_tested_per_returned: f64,
    pub leaves_touched: f64,
    pub kd_seconds: f64,
    pub scan_seconds: f64,
    /// Total scan time over total kd time.
    pub speedup: f64,
    pub exact: bool,
}

impl SelectivityRow {
    pub const CSV_HEADER: &'static str = "target,queries,mean_selectivity,returned,tested,tested_per_returned,max_tested_per_returned,mean_leaves_touched,kd_seconds,scan_seconds,speedup,exact";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{},{},{:.4},{:.4},{:.2},{:.6},{:.6},{:.2},{}",
            self.target,
            self.queries,
            self.mean_selectivity,
            self.returned,
            self.tested,
            self.tested_per_returned,
            self.max_tested_per_returned,
            self.leaves_touched,
            self.kd_seconds,
            self.scan_seconds,
            self.speedup,
            self.exact
        )
    }
}

/// Runs `per_level` random polytopes at every target selectivity, timing the
/// kd-tree against the full scan and checking set equality.
pub fn selectivity_curve(
    ps: &PointSet,
    tree: &KdTree,
    targets: &[f64],
    per_level: usize,
    extra_faces: usize,
    seed: u64,
) -> Result<Vec<SelectivityRow>> {
    let mut rows = Vec::with_capacity(targets.len());
    for (level, &target) in targets.iter().enumerate() {
        let mut r = rng::stream(seed, level as u64);
        let mut row = SelectivityRow {
            target,
            queries: per_level,
            mean_selectivity: 0.0,
            returned: 0,
            tested: 0,
            tested_per_returned: 0.0,
            max_tested_per_returned: 0.0,
            leaves_touched: 0.0,
            kd_seconds: 0.0,
            scan_seconds: 0.0,
            speedup: 0.0,
            exact: true,
        };
        for _ in 0..per_level {
            let poly = random_polytope(ps, extra_faces, target, &mut r)?;
            let t0 = Instant::now();
            let res = tree.query_polytope(ps, &poly)?;
            let t1 = Instant::now();
            let scan = full_scan(ps, &poly);
            let t2 = Instant::now();
            row.kd_seconds += (t1 - t0).as_secs_f64();
            row.scan_seconds += (t2 - t1).as_secs_f64();
            let mut ids = res.ids;
            ids.sort_unstable();
            row.exact &= ids == scan;
            row.returned += res.stats.returned;
            row.tested += res.stats.tested;
            row.leaves_touched += res.stats.leaves_touched as f64;
            row.mean_selectivity += res.stats.returned as f64 / ps.len() as f64;
            let ratio = res.stats.tested as f64 / res.stats.returned.max(1) as f64;
            row.max_tested_per_returned = row.max_tested_per_returned.max(ratio);
        }
        let q = per_level.max(1) as f64;
        row.mean_selectivity /= q;
        row.leaves_touched /= q;
        row.tested_per_returned = row.tested as f64 / row.returned.max(1) as f64;
        row.speedup = row.scan_seconds / row.kd_seconds.max(1e-12);
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_uniform;
    use crate::geometry::BoundingBox;

    #[test]
    fn hits_target_selectivity() {
        let b = BoundingBox::new(vec![0.0; 4], vec![1.0; 4]).unwrap();
        let ps = generate_uniform(1, 20_000, &b).unwrap();
        let mut r = rng::seeded(3);
        for target in [0.001, 0.05, 0.3, 1.0] {
            let poly = random_polytope(&ps, 8, target, &mut r).unwrap();
            let got = full_scan(&ps, &poly).len();
            let want = (target * 20_000.0).round() as usize;
            assert!(got.abs_diff(want) <= 2, "target {target}: {got} vs {want}");
        }
        assert!(random_polytope(&ps, 8, 0.0, &mut r).is_err());
        let cube = random_polytope(&ps, 0, 0.1, &mut r).unwrap();
        assert_eq!(cube.halfspaces.len(), 8);
    }

    #[test]
    fn curve_is_exact() {
        let b = BoundingBox::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let ps = generate_uniform(2, 5000, &b).unwrap();
        let t = KdTree::build(&ps).unwrap();
        let rows = selectivity_curve(&ps, &t, &[0.01, 0.2], 5, 6, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.exact && r.tested >= r.returned));
        assert!(rows[0].mean_selectivity < rows[1].mean_selectivity);
    }
}
