//! Truncated power series bases `{x, …, x^p, (x−κ₁)₊^p, …, (x−κᵣ)₊^p}`
//! without an intercept, and percentile knot placement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_DEGREE: usize = 3;
/// Knots used for real-data fits.
pub const DEFAULT_KNOTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SplineBasisSpec<T> {
    degree: usize,
    knots: Vec<T>,
}

impl<T: Scalar> SplineBasisSpec<T> {
    pub fn new(degree: usize, knots: Vec<T>) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidSpline("degree must be at least 1".into()));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidSpline("knots must be finite".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidSpline("knots must be strictly increasing".into()));
        }
        Ok(Self { degree, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    /// Number of basis functions, `p + r`.
    pub fn size(&self) -> usize {
        self.degree + self.knots.len()
    }

    /// Indices (within this basis) of the truncated-power terms.
    pub fn knot_terms(&self) -> std::ops::Range<usize> {
        self.degree..self.size()
    }

    pub fn eval_into(&self, x: T, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.size());
        let mut pow = T::one();
        for slot in out.iter_mut().take(self.degree) {
            pow = pow * x;
            *slot = pow;
        }
        let p = self.degree as i32;
        for (slot, &k) in out[self.degree..].iter_mut().zip(&self.knots) {
            let u = x - k;
            *slot = if u > T::zero() { u.powi(p) } else { T::zero() };
        }
    }

    pub fn eval_basis(&self, x: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.size()];
        self.eval_into(x, &mut out);
        out
    }

    /// `φ(x) = B(x)ᵀβ`.
    pub fn eval_phi(&self, beta: &[T], x: T) -> Result<T> {
        if beta.len() != self.size() {
            return Err(Error::Dimension {
                what: "spline coefficients",
                expected: self.size(),
                found: beta.len(),
            });
        }
        let b = self.eval_basis(x);
        Ok(b.iter().zip(beta).map(|(&u, &v)| u * v).sum())
    }
}

/// One basis per nonlinear covariate; coefficients are concatenated in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AdditiveBasisSpec<T> {
    pub components: Vec<SplineBasisSpec<T>>,
}

impl<T: Scalar> AdditiveBasisSpec<T> {
    pub fn new(components: Vec<SplineBasisSpec<T>>) -> Self {
        Self { components }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn total_size(&self) -> usize {
        self.components.iter().map(|c| c.size()).sum()
    }

    /// Coefficient ranges of each component inside the concatenated vector.
    pub fn offsets(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.components
            .iter()
            .map(|c| {
                let r = start..start + c.size();
                start = r.end;
                r
            })
            .collect()
    }

    /// Evaluates every component at its covariate value into `out`.
    pub fn eval_into(&self, xs: &[T], out: &mut [T]) {
        let mut start = 0;
        for (c, &x) in self.components.iter().zip(xs) {
            let m = c.size();
            c.eval_into(x, &mut out[start..start + m]);
            start += m;
        }
    }

    /// `Σⱼ φⱼ(xⱼ)`.
    pub fn eval_sum(&self, beta: &[T], xs: &[T]) -> Result<T> {
        if beta.len() != self.total_size() {
            return Err(Error::Dimension {
                what: "spline coefficients",
                expected: self.total_size(),
                found: beta.len(),
            });
        }
        if xs.len() != self.len() {
            return Err(Error::Dimension {
                what: "nonlinear covariates",
                expected: self.len(),
                found: xs.len(),
            });
        }
        let mut total = T::zero();
        for ((c, r), &x) in self.components.iter().zip(self.offsets()).zip(xs) {
            total = total + c.eval_phi(&beta[r], x)?;
        }
        Ok(total)
    }
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], level: T) -> T {
    let n = sorted.len();
    let h = T::from_usize_lossy(n - 1) * level;
    let lo = h.floor();
    let i = lo.to_usize().unwrap_or(0).min(n - 1);
    if i + 1 >= n {
        return sorted[n - 1];
    }
    sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i])
}

fn sorted_copy<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite covariate"));
    v
}

/// Distinct quantiles strictly inside the data range.
fn collapsed_quantiles<T: Scalar>(values: &[T], r: usize) -> Vec<T> {
    let sorted = sorted_copy(values);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let mut knots: Vec<T> = (1..=r)
        .map(|k| quantile_sorted(&sorted, T::from_usize_lossy(k) / T::from_usize_lossy(r + 1)))
        .filter(|&k| k > lo && k < hi)
        .collect();
    knots.dedup();
    knots
}

/// Places `r` knots at the equally spaced sample percentiles `k/(r+1)`.
///
/// Fails when tied values leave fewer than `r` distinct quantiles; the error
/// reports how many are achievable.
pub fn place_knots<T: Scalar>(values: &[T], r: usize) -> Result<Vec<T>> {
    if r == 0 {
        return Err(Error::InvalidSpline("at least one knot is required".into()));
    }
    if values.len() < 2 {
        return Err(Error::KnotDegeneracy {
            requested: r,
            achievable: 0,
        });
    }
    let knots = collapsed_quantiles(values, r);
    if knots.len() < r {
        return Err(Error::KnotDegeneracy {
            requested: r,
            achievable: knots.len(),
        });
    }
    Ok(knots)
}

/// Like [`place_knots`] but collapses tied quantiles and continues with fewer
/// knots, logging a warning. Only fails when no knot survives.
pub fn place_knots_lenient<T: Scalar>(values: &[T], r: usize) -> Result<Vec<T>> {
    match place_knots(values, r) {
        Ok(k) => Ok(k),
        Err(Error::KnotDegeneracy { achievable, .. }) if achievable > 0 => {
            log::warn!("tied covariate values: using {achievable} knots instead of {r}");
            Ok(collapsed_quantiles(values, r))
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn knots_of_small_sets() {
        assert_eq!(place_knots(&[0.0, 1.0, 2.0, 3.0, 4.0], 1).unwrap(), vec![2.0]);
        let v: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        assert_eq!(place_knots(&v, 3).unwrap(), vec![2.5, 5.0, 7.5]);
    }

    #[test]
    fn knots_match_sort_and_interpolate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let knots = place_knots(&v, 4).unwrap();
        // oracle: R type-7 quantile written out directly
        let mut s = v.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, &got) in knots.iter().enumerate() {
            let p = (k + 1) as f64 / 5.0;
            let pos = p * 99.0;
            let j = pos as usize;
            let want = s[j] * (1.0 - (pos - j as f64)) + s[j + 1] * (pos - j as f64);
            assert!((got - want).abs() < 1e-12);
        }
        assert!(knots.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tied_values_collapse() {
        let v = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        match place_knots(&v, 4) {
            Err(Error::KnotDegeneracy { requested: 4, achievable }) => assert!(achievable < 4),
            other => panic!("unexpected {other:?}"),
        }
        let k = place_knots_lenient(&v, 4).unwrap();
        assert!(!k.is_empty() && k.len() < 4);
        assert!(place_knots_lenient(&[2.0; 8], 3).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(SplineBasisSpec::new(0, vec![1.0]).is_err());
        assert!(SplineBasisSpec::new(3, vec![1.0, 1.0]).is_err());
        assert!(SplineBasisSpec::new(3, vec![2.0, 1.0]).is_err());
        let s = SplineBasisSpec::new(3, vec![1.0, 2.0]).unwrap();
        assert_eq!(s.size(), 5);
        assert!(s.eval_phi(&[1.0; 4], 0.3).is_err());
    }

    #[test]
    fn basis_values() {
        let s = SplineBasisSpec::new(3, vec![1.0, 2.0]).unwrap();
        assert_eq!(s.eval_basis(0.0), vec![0.0; 5]);
        let s = SplineBasisSpec::new(1, vec![0.0]).unwrap();
        assert_eq!(s.eval_basis(2.0), vec![2.0, 2.0]);
        let s = SplineBasisSpec::new(3, vec![-1.0, 0.0, 1.0]).unwrap();
        let b = s.eval_basis(0.5);
        // x, x², x³, (1.5)³, (0.5)³, 0
        let want: [f64; 6] = [0.5, 0.25, 0.125, 3.375, 0.125, 0.0];
        for (g, w) in b.iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_values() {
        let s = SplineBasisSpec::new(1, vec![0.0]).unwrap();
        assert_eq!(s.eval_phi(&[1.0, -2.0], 3.0).unwrap(), -3.0);
        let s = SplineBasisSpec::new(3, vec![-1.0, 0.5]).unwrap();
        for x in [-4.0, -0.2, 0.0, 3.3] {
            assert_eq!(s.eval_phi(&[0.0; 5], x).unwrap(), 0.0);
        }
    }

    /// Polynomial-plus-hinge expansion written independently of the basis code.
    fn cubic_oracle(knots: &[f64], beta: &[f64], x: f64) -> f64 {
        let mut v = beta[0] * x + beta[1] * x * x + beta[2] * x * x * x;
        for (k, b) in knots.iter().zip(&beta[3..]) {
            if x > *k {
                let u = x - k;
                v += b * u * u * u;
            }
        }
        v
    }

    #[test]
    fn cubic_phi_matches_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let knots = vec![-2.0, -0.5, 0.7, 1.9];
        let s = SplineBasisSpec::new(3, knots.clone()).unwrap();
        let beta: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        for _ in 0..20 {
            let x = rng.random_range(-4.0..4.0);
            let got = s.eval_phi(&beta, x).unwrap();
            let want = cubic_oracle(&knots, &beta, x);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn additive_sum_and_offsets() {
        let a = SplineBasisSpec::new(1, vec![0.0]).unwrap();
        let b = SplineBasisSpec::new(2, vec![1.0, 2.0]).unwrap();
        let add = AdditiveBasisSpec::new(vec![a.clone(), b.clone()]);
        assert_eq!(add.total_size(), 6);
        assert_eq!(add.offsets(), vec![0..2, 2..6]);
        let beta = [1.0, 2.0, 0.5, -1.0, 3.0, 0.25];
        let got = add.eval_sum(&beta, &[1.5, 2.5]).unwrap();
        let want = a.eval_phi(&beta[..2], 1.5).unwrap() + b.eval_phi(&beta[2..], 2.5).unwrap();
        assert_eq!(got, want);
        assert!(add.eval_sum(&beta, &[1.0]).is_err());
    }

    #[test]
    fn f32_basis() {
        let s = SplineBasisSpec::<f32>::new(1, vec![0.0]).unwrap();
        assert_eq!(s.eval_phi(&[1.0, -2.0], 3.0).unwrap(), -3.0f32);
    }

    fn arb_spec(max_degree: usize) -> impl Strategy<Value = (SplineBasisSpec<f64>, Vec<f64>)> {
        arb_spec_in(max_degree, -400..400)
    }

    fn arb_spec_in(
        max_degree: usize,
        knot_range: std::ops::Range<i32>,
    ) -> impl Strategy<Value = (SplineBasisSpec<f64>, Vec<f64>)> {
        (1..=max_degree, prop::collection::btree_set(knot_range, 1..6)).prop_flat_map(|(p, ks)| {
            let knots: Vec<f64> = ks.into_iter().map(|k| k as f64 / 100.0).collect();
            let m = p + knots.len();
            (
                Just(SplineBasisSpec::new(p, knots).unwrap()),
                prop::collection::vec(-3.0f64..3.0, m),
            )
        })
    }

    proptest! {
        #[test]
        fn phi_vanishes_at_origin_with_nonnegative_knots((spec, beta) in arb_spec_in(4, 0..400)) {
            prop_assert_eq!(spec.eval_phi(&beta, 0.0).unwrap(), 0.0);
        }

        #[test]
        fn phi_is_polynomial_left_of_knots((spec, beta) in arb_spec(4), t in 0.0f64..3.0) {
            let x = spec.knots()[0] - t;
            let mut poly = 0.0;
            let mut pow = 1.0;
            for b in &beta[..spec.degree()] {
                pow *= x;
                poly += b * pow;
            }
            prop_assert_eq!(spec.eval_phi(&beta, x).unwrap(), poly);
        }

        #[test]
        fn phi_continuous_and_smooth_across_knots((spec, beta) in arb_spec(3)) {
            for &k in spec.knots() {
                let scale = 1.0 + k.abs();
                let f = |x: f64| spec.eval_phi(&beta, x).unwrap();
                let tiny = 1e-9 * scale;
                let jump = (f(k + tiny) - f(k - tiny)).abs();
                prop_assert!(jump < 1e-6 * (1.0 + f(k).abs()));
                if spec.degree() >= 2 {
                    // central differences at k ± a, extrapolated to a → 0
                    let h = 1e-6 * scale;
                    let d = |x: f64| (f(x + h) - f(x - h)) / (2.0 * h);
                    let jump = |a: f64| d(k + a) - d(k - a);
                    let a = 1e-4 * scale;
                    let slope = d(k);
                    let extrapolated = 2.0 * jump(a / 2.0) - jump(a);
                    prop_assert!(extrapolated.abs() < 1e-6 * (1.0 + slope.abs()),
                        "derivative jump at {}: {}", k, extrapolated);
                }
            }
        }

        #[test]
        fn basis_is_piecewise_polynomial((spec, _beta) in arb_spec(4), x in -6.0f64..6.0) {
            let b = spec.eval_basis(x);
            let p = spec.degree();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-13 * b.abs().max(1.0);
            for m in 1..=p {
                prop_assert!(close(b[m - 1], x.powi(m as i32)));
            }
            for (j, &k) in spec.knots().iter().enumerate() {
                if x > k {
                    prop_assert!(close(b[p + j], (x - k).powi(p as i32)));
                } else {
                    prop_assert_eq!(b[p + j], 0.0);
                }
            }
        }
    }
}
