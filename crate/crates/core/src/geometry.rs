//! Axis-aligned boxes and convex polytopes in halfspace form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box. Data boxes are treated as half-open `[lo, hi)`;
/// intersection tests against query boxes use the closed extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = BoundingBox { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() {
            return Err(Error::Dim {
                expected: self.lo.len(),
                got: self.hi.len(),
            });
        }
        if self.lo.is_empty() {
            return Err(Error::InvalidParameter("box has no dimensions".into()));
        }
        for d in 0..self.lo.len() {
            if self.lo[d].is_nan() || self.hi[d].is_nan() || self.lo[d] > self.hi[d] {
                return Err(Error::DegenerateBox(d));
            }
        }
        Ok(())
    }

    /// Box covering the whole of `dim`-space.
    pub fn unbounded(dim: usize) -> Self {
        BoundingBox {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn extent(&self, d: usize) -> f64 {
        self.hi[d] - self.lo[d]
    }

    /// Dimension with the largest extent (lowest index on ties).
    pub fn widest_dim(&self) -> usize {
        let mut best = 0;
        for d in 1..self.dim() {
            if self.extent(d) > self.extent(best) {
                best = d;
            }
        }
        best
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|d| self.extent(d)).product()
    }

    /// Half-open containment `lo <= x < hi`.
    pub fn contains_half_open(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&x, (&lo, &hi))| lo <= x && x < hi)
    }

    /// Closed containment `lo <= x <= hi`.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&x, (&lo, &hi))| lo <= x && x <= hi)
    }

    /// Closed-extent intersection test.
    pub fn intersects(&self, other: &BoundingBox) -> bool {
        (0..self.dim()).all(|d| self.lo[d] <= other.hi[d] && other.lo[d] <= self.hi[d])
    }

    /// Closed intersection of two boxes, `None` when disjoint.
    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let l = self.lo[d].max(other.lo[d]);
            let h = self.hi[d].min(other.hi[d]);
            if l > h {
                return None;
            }
            lo.push(l);
            hi.push(h);
        }
        Some(BoundingBox { lo, hi })
    }

    /// Squared distance from `p` to the nearest point of the closed box.
    pub fn min_dist_sq(&self, p: &[f64]) -> f64 {
        let mut s = 0.0;
        for (d, &x) in p.iter().enumerate() {
            let c = x.clamp(self.lo[d], self.hi[d]);
            s += (x - c) * (x - c);
        }
        s
    }

    /// Nearest point of the closed box to `p`.
    pub fn clamp(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(d, &x)| x.clamp(self.lo[d], self.hi[d]))
            .collect()
    }

    /// Tight box around the points produced by `iter`; `None` when empty.
    pub fn around<'a, I>(dim: usize, iter: I) -> Option<BoundingBox>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut any = false;
        for p in iter {
            any = true;
            for d in 0..dim {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        any.then_some(BoundingBox { lo, hi })
    }
}

/// `normal · x <= offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    #[inline]
    pub fn contains(&self, p: &[f64]) -> bool {
        dot(&self.normal, p) <= self.offset
    }
}

/// Convex query region: the intersection of its halfspaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub halfspaces: Vec<Halfspace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Inside,
    Outside,
    Partial,
}

impl Polytope {
    pub fn new(halfspaces: Vec<Halfspace>) -> Result<Self> {
        let p = Polytope { halfspaces };
        p.validate(None)?;
        Ok(p)
    }

    /// Checks the non-empty / non-zero-normal invariants and, when given, the dimension.
    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        let first = self.halfspaces.first().ok_or_else(|| {
            Error::InvalidParameter("polytope needs at least one halfspace".into())
        })?;
        let d = dim.unwrap_or(first.normal.len());
        for h in &self.halfspaces {
            if h.normal.len() != d {
                return Err(Error::Dim {
                    expected: d,
                    got: h.normal.len(),
                });
            }
            if h.normal.iter().any(|x| !x.is_finite()) || h.offset.is_nan() {
                return Err(Error::InvalidParameter("non-finite halfspace".into()));
            }
            if h.normal.iter().all(|&x| x == 0.0) {
                return Err(Error::InvalidParameter("zero halfspace normal".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.halfspaces[0].normal.len()
    }

    /// The whole of `dim`-space.
    pub fn whole_space(dim: usize) -> Self {
        let mut normal = vec![0.0; dim];
        normal[0] = 1.0;
        Polytope {
            halfspaces: vec![Halfspace {
                normal,
                offset: f64::INFINITY,
            }],
        }
    }

    /// Axis-aligned box as a polytope (2·D halfspaces).
    pub fn from_box(b: &BoundingBox) -> Self {
        let dim = b.dim();
        let mut halfspaces = Vec::with_capacity(2 * dim);
        for d in 0..dim {
            let mut n = vec![0.0; dim];
            n[d] = 1.0;
            halfspaces.push(Halfspace {
                normal: n.clone(),
                offset: b.hi[d],
            });
            n[d] = -1.0;
            halfspaces.push(Halfspace {
                normal: n,
                offset: -b.lo[d],
            });
        }
        Polytope { halfspaces }
    }

    #[inline]
    pub fn contains(&self, p: &[f64]) -> bool {
        self.halfspaces.iter().all(|h| h.contains(p))
    }
}

/// Classifies a closed box against a polytope using per-halfspace support corners.
///
/// `Partial` is conservative: the box may still contain no feasible point.
pub fn classify_box(b: &BoundingBox, poly: &Polytope) -> Classification {
    let mut inside = true;
    for h in &poly.halfspaces {
        let mut min = 0.0;
        let mut max = 0.0;
        for (d, &n) in h.normal.iter().enumerate() {
            if n > 0.0 {
                min += n * b.lo[d];
                max += n * b.hi[d];
            } else if n < 0.0 {
                min += n * b.hi[d];
                max += n * b.lo[d];
            }
        }
        if min > h.offset {
            return Classification::Outside;
        }
        if max > h.offset {
            inside = false;
        }
    }
    if inside {
        Classification::Inside
    } else {
        Classification::Partial
    }
}

/// Halfspaces flattened row-major for tight loops over column-major points.
///
/// Point tests and box support sums add terms in the same dimension order,
/// so a halfspace satisfied by a box's maximizing corner is also satisfied,
/// bit for bit, by every point inside that box.
#[derive(Debug, Clone)]
pub struct CompiledPolytope {
    dim: usize,
    normals: Vec<f64>,
    offsets: Vec<f64>,
}

impl CompiledPolytope {
    pub fn new(poly: &Polytope) -> Self {
        let dim = poly.dim();
        CompiledPolytope {
            dim,
            normals: poly
                .halfspaces
                .iter()
                .flat_map(|h| h.normal.iter().copied())
                .collect(),
            offsets: poly.halfspaces.iter().map(|h| h.offset).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offset(&self, h: usize) -> f64 {
        self.offsets[h]
    }

    #[inline]
    fn row(&self, h: usize) -> &[f64] {
        &self.normals[h * self.dim..(h + 1) * self.dim]
    }

    /// Minimum and maximum of `normal_h · x` over the closed box.
    #[inline]
    pub fn support(&self, h: usize, b: &BoundingBox) -> (f64, f64) {
        let mut min = 0.0;
        let mut max = 0.0;
        for (d, &n) in self.row(h).iter().enumerate() {
            if n > 0.0 {
                min += n * b.lo[d];
                max += n * b.hi[d];
            } else if n < 0.0 {
                min += n * b.hi[d];
                max += n * b.lo[d];
            }
        }
        (min, max)
    }

    #[inline]
    fn holds(&self, h: usize, cols: &[Vec<f64>], pos: usize) -> bool {
        let mut s = 0.0;
        for (c, &n) in cols.iter().zip(self.row(h)) {
            s += n * c[pos];
        }
        s <= self.offsets[h]
    }

    /// Row `pos` of the columns against the listed halfspaces.
    #[inline]
    pub fn contains_active(&self, cols: &[Vec<f64>], pos: usize, active: &[u16]) -> bool {
        active.iter().all(|&h| self.holds(h as usize, cols, pos))
    }

    /// Row `pos` of the columns against every halfspace.
    #[inline]
    pub fn contains_row(&self, cols: &[Vec<f64>], pos: usize) -> bool {
        (0..self.len()).all(|h| self.holds(h, cols, pos))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corner_oracle(b: &BoundingBox, poly: &Polytope) -> Classification {
        let dim = b.dim();
        let mut n_in = 0;
        let mut all_out_of_one = vec![true; poly.halfspaces.len()];
        for mask in 0..(1u32 << dim) {
            let c: Vec<f64> = (0..dim)
                .map(|d| if mask >> d & 1 == 1 { b.hi[d] } else { b.lo[d] })
                .collect();
            if poly.contains(&c) {
                n_in += 1;
            }
            for (j, h) in poly.halfspaces.iter().enumerate() {
                if h.contains(&c) {
                    all_out_of_one[j] = false;
                }
            }
        }
        if n_in == 1 << dim {
            Classification::Inside
        } else if all_out_of_one.iter().any(|&x| x) {
            Classification::Outside
        } else {
            Classification::Partial
        }
    }

    #[test]
    fn huge_offset_is_inside() {
        let b = BoundingBox::new(vec![-5.0, 2.0], vec![3.0, 9.0]).unwrap();
        let poly = Polytope::new(vec![Halfspace {
            normal: vec![1.0, 0.0],
            offset: 1e300,
        }])
        .unwrap();
        assert_eq!(classify_box(&b, &poly), Classification::Inside);
        assert_eq!(
            classify_box(&b, &Polytope::whole_space(2)),
            Classification::Inside
        );
    }

    #[test]
    fn violating_side_is_outside() {
        let b = BoundingBox::new(vec![2.0, 0.0], vec![3.0, 1.0]).unwrap();
        let poly = Polytope::new(vec![Halfspace {
            normal: vec![1.0, 0.0],
            offset: 1.5,
        }])
        .unwrap();
        assert_eq!(classify_box(&b, &poly), Classification::Outside);
    }

    #[test]
    fn matches_corner_enumeration_on_random_polygons() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let dim = 2;
            let lo: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|&l| l + rng.random_range(0.0..0.8)).collect();
            let b = BoundingBox::new(lo, hi).unwrap();
            let hs = (0..rng.random_range(1..6))
                .map(|_| {
                    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    Halfspace {
                        normal: vec![a.cos(), a.sin()],
                        offset: rng.random_range(-0.8..0.8),
                    }
                })
                .collect();
            let poly = Polytope::new(hs).unwrap();
            assert_eq!(classify_box(&b, &poly), corner_oracle(&b, &poly));
        }
    }

    #[test]
    fn rejects_zero_normal_and_empty() {
        assert!(Polytope::new(vec![]).is_err());
        assert!(Polytope::new(vec![Halfspace {
            normal: vec![0.0, 0.0],
            offset: 1.0
        }])
        .is_err());
        assert!(BoundingBox::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn box_distance_and_intersection() {
        let b = BoundingBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(b.min_dist_sq(&[2.0, 0.5]), 1.0);
        assert_eq!(b.min_dist_sq(&[0.5, 0.5]), 0.0);
        let c = BoundingBox::new(vec![1.0, 0.5], vec![2.0, 3.0]).unwrap();
        assert!(b.intersects(&c));
        let i = b.intersection(&c).unwrap();
        assert_eq!(i.lo, vec![1.0, 0.5]);
        assert_eq!(i.hi, vec![1.0, 1.0]);
    }
}
