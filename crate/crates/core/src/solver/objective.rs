use crate::error::{Error, Result};
use crate::gehan::{abs_excess, DesignMatrix, PseudoProblem, ZetaPolicy};
use crate::scalar::{dot, median, Scalar};

/// `ρ_ε(u) = √(u² + ε²) − ε`, written without cancellation near zero.
pub fn rho<T: Scalar>(u: T, eps: T) -> T {
    let u2 = u * u;
    u2 / ((u2 + eps * eps).sqrt() + eps)
}

pub fn rho_prime<T: Scalar>(u: T, eps: T) -> T {
    u / (u * u + eps * eps).sqrt()
}

/// A convex piecewise-linear objective of L1-regression type, together with
/// its smoothed surrogate.
pub trait L1Objective<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    /// Exact objective.
    fn objective(&self, theta: &[T]) -> T;

    /// Exact objective less a θ-independent constant (possibly rescaled by a
    /// positive constant). Used for comparisons where `objective` would lose
    /// precision.
    fn excess(&self, theta: &[T]) -> T;

    /// Smoothed surrogate with every `|u|` replaced by `ρ_ε(u)`, on the same
    /// scale and up to a constant as `excess`. Writes the gradient.
    fn smoothed(&self, theta: &[T], eps: T, grad: &mut [T]) -> T;

    /// Typical absolute response; the default initial smoothing width is a
    /// tenth of this.
    fn response_scale(&self) -> T;
}

impl<T: Scalar> L1Objective<T> for PseudoProblem<T> {
    fn dim(&self) -> usize {
        self.ncols()
    }

    fn objective(&self, theta: &[T]) -> T {
        PseudoProblem::objective(self, theta)
    }

    fn excess(&self, theta: &[T]) -> T {
        self.excess_objective(theta)
    }

    fn smoothed(&self, theta: &[T], eps: T, grad: &mut [T]) -> T {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let e2 = eps * eps;
        let mut value = T::zero();
        for s in 0..self.rows() {
            let (v, w) = self.row(s);
            let a = dot(w, theta);
            let r = v - a;
            let sr = (r * r + e2).sqrt();
            let sv = (v * v + e2).sqrt();
            // ρ(r) − ρ(v) = (r − v)(r + v) / (√(r²+ε²) + √(v²+ε²))
            value = value + (-a) * (v + r) / (sr + sv);
            let dr = r / sr;
            for (g, &x) in grad.iter_mut().zip(w) {
                *g = *g - dr * x;
            }
        }
        value
    }

    fn response_scale(&self) -> T {
        let pairs = if self.zeta() > T::zero() {
            self.base_rows() - 1
        } else {
            self.base_rows()
        };
        let v: Vec<T> = self.response()[..pairs.max(1).min(self.rows())]
            .iter()
            .map(|x| x.abs())
            .collect();
        median(&v)
    }
}

/// The augmented pseudo-problem evaluated pair by pair, never materializing
/// the `O(n²)` rows. Values and gradients are divided by `2n²` so that they
/// live on the scale of the Gehan loss.
#[derive(Debug, Clone)]
pub struct PairwiseGehan<T> {
    times: Vec<T>,
    events: Vec<bool>,
    design: DesignMatrix<T>,
    zeta: T,
    zeta_row: Vec<T>,
    /// `(column, weight)` as they would appear in augmentation rows.
    penalties: Vec<(usize, T)>,
    scale: T,
    response_scale: T,
}

impl<T: Scalar> PairwiseGehan<T> {
    pub fn new(
        times: &[T],
        events: &[bool],
        design: DesignMatrix<T>,
        penalties: Vec<(usize, T)>,
        policy: ZetaPolicy,
    ) -> Result<Self> {
        let n = times.len();
        if events.len() != n || design.nrows() != n {
            return Err(Error::Dimension {
                what: "observations",
                expected: n,
                found: if events.len() != n { events.len() } else { design.nrows() },
            });
        }
        let n_events = events.iter().filter(|&&e| e).count();
        if n_events < 2 {
            return Err(Error::DegenerateData(format!(
                "need at least 2 observed events, found {n_events}"
            )));
        }
        if let Some(&(c, _)) = penalties.iter().find(|(c, _)| *c >= design.ncols()) {
            return Err(Error::Dimension {
                what: "penalized column",
                expected: design.ncols(),
                found: c,
            });
        }
        let p = design.ncols();
        let mut all = vec![T::zero(); p];
        let mut ev = vec![T::zero(); p];
        for k in 0..n {
            for (c, &x) in design.row(k).iter().enumerate() {
                all[c] = all[c] + x;
                if events[k] {
                    ev[c] = ev[c] + x;
                }
            }
        }
        let ne = T::from_usize_lossy(n_events);
        let nn = T::from_usize_lossy(n);
        let zeta_row = all.iter().zip(&ev).map(|(&a, &e)| ne * a - nn * e).collect();
        let mut diffs = Vec::with_capacity(n_events * n);
        for i in (0..n).filter(|&i| events[i]) {
            diffs.extend(times.iter().map(|&t| (times[i] - t).abs()));
        }
        let mass: T = diffs.iter().copied().sum();
        let zeta = match policy {
            ZetaPolicy::RelativeToResponse(f) => T::c(f) * mass.max(T::one()),
            ZetaPolicy::Fixed(z) => T::c(z),
        };
        Ok(Self {
            times: times.to_vec(),
            events: events.to_vec(),
            design,
            zeta,
            zeta_row,
            penalties,
            scale: T::one() / (T::c(2.0) * nn * nn),
            response_scale: median(&diffs),
        })
    }

    pub fn zeta(&self) -> T {
        self.zeta
    }

    fn residuals(&self, theta: &[T]) -> Vec<T> {
        (0..self.times.len())
            .map(|i| self.times[i] - dot(self.design.row(i), theta))
            .collect()
    }

    fn pair_sum(&self, e: &[T]) -> T {
        let mut acc = T::zero();
        for i in (0..e.len()).filter(|&i| self.events[i]) {
            for &ej in e {
                acc = acc + (e[i] - ej).abs();
            }
        }
        acc
    }

    fn penalty_sum(&self, theta: &[T]) -> T {
        self.penalties.iter().map(|&(c, w)| (w * theta[c]).abs()).sum()
    }
}

impl<T: Scalar> L1Objective<T> for PairwiseGehan<T> {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn objective(&self, theta: &[T]) -> T {
        let e = self.residuals(theta);
        self.pair_sum(&e) + (self.zeta - dot(&self.zeta_row, theta)).abs() + self.penalty_sum(theta)
    }

    fn excess(&self, theta: &[T]) -> T {
        let e = self.residuals(theta);
        let z = abs_excess(self.zeta, dot(&self.zeta_row, theta));
        (self.pair_sum(&e) + z + self.penalty_sum(theta)) * self.scale
    }

    fn smoothed(&self, theta: &[T], eps: T, grad: &mut [T]) -> T {
        let n = self.times.len();
        let e = self.residuals(theta);
        let e2 = eps * eps;
        // weight on x_k in −∂/∂θ of the pair sum
        let mut a = vec![T::zero(); n];
        let mut value = T::zero();
        for i in (0..n).filter(|&i| self.events[i]) {
            let ei = e[i];
            let mut ai = T::zero();
            for (j, &ej) in e.iter().enumerate() {
                let u = ei - ej;
                let s = (u * u + e2).sqrt();
                value = value + u * u / (s + eps);
                let d = u / s;
                ai = ai + d;
                a[j] = a[j] - d;
            }
            a[i] = a[i] + ai;
        }
        self.design.tr_mul_vec(&a, grad);
        for g in grad.iter_mut() {
            *g = -*g;
        }
        // the ζ row stays on the positive branch: its term is linear
        let zr = dot(&self.zeta_row, theta);
        value = value + abs_excess(self.zeta, zr);
        for (g, &c) in grad.iter_mut().zip(&self.zeta_row) {
            *g = *g - c;
        }
        for &(c, w) in &self.penalties {
            let u = w * theta[c];
            value = value + rho(u, eps);
            grad[c] = grad[c] + w * rho_prime(u, eps);
        }
        for g in grad.iter_mut() {
            *g = *g * self.scale;
        }
        value * self.scale
    }

    fn response_scale(&self) -> T {
        self.response_scale
    }
}
