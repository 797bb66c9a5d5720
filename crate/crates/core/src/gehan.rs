//! Gehan rank loss and its reformulation as an L1 regression over
//! pseudo-observations.
//!
//! For residuals `eᵢ = T̃ᵢ − θᵀxᵢ` the loss is `n⁻² Σᵢ Σⱼ δᵢ (eᵢ − eⱼ)₋`.
//! Because `|u| = u + 2u₋`, the sum `Σᵢⱼ δᵢ|eᵢ − eⱼ|` equals twice the
//! unnormalized loss plus a term linear in θ. The extra "ζ row"
//! `|ζ − θᵀ Σₖ Σₗ δₖ(xₗ − xₖ)|` cancels that linear term whenever ζ is large,
//! so the pseudo-problem objective is `2n² Lₙ(θ) + const`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, StandardizationRecord};
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::splines::AdditiveBasisSpec;

/// Dense row-major `n × p` design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// One design row split into its spline and linear parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignRow<'a, T> {
    pub basis_part: &'a [T],
    pub linear_part: &'a [T],
}

impl<T: Scalar> DesignMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "design matrix entries",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    what: "design row",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn design_row(&self, i: usize, basis_cols: usize) -> DesignRow<'_, T> {
        let (basis_part, linear_part) = self.row(i).split_at(basis_cols);
        DesignRow {
            basis_part,
            linear_part,
        }
    }

    /// Keeps only the listed columns, in order.
    pub fn select_columns(&self, keep: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * keep.len());
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend(keep.iter().map(|&c| r[c]));
        }
        Self {
            rows: self.rows,
            cols: keep.len(),
            data,
        }
    }

    /// `xᵢᵀθ` for every row.
    pub fn mul_vec(&self, theta: &[T]) -> Vec<T> {
        (0..self.rows).map(|i| dot(self.row(i), theta)).collect()
    }

    /// `Xᵀa`.
    pub fn tr_mul_vec(&self, a: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        for (i, &ai) in a.iter().enumerate() {
            if ai == T::zero() {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o = *o + ai * x;
            }
        }
    }
}

/// How a dataset maps onto design columns: spline bases for the nonlinear
/// clinical covariates, then linearly modeled clinical covariates, then the
/// (standardized) features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DesignLayout<T> {
    pub nonlinear: Vec<usize>,
    pub basis: AdditiveBasisSpec<T>,
    pub linear_clinical: Vec<usize>,
    pub standardization: StandardizationRecord<T>,
}

impl<T: Scalar> DesignLayout<T> {
    pub fn spline_cols(&self) -> usize {
        self.basis.total_size()
    }

    pub fn linear_cols(&self) -> usize {
        self.linear_clinical.len() + self.standardization.len()
    }

    pub fn ncols(&self) -> usize {
        self.spline_cols() + self.linear_cols()
    }

    pub fn feature_range(&self) -> Range<usize> {
        let start = self.spline_cols() + self.linear_clinical.len();
        start..start + self.standardization.len()
    }

    fn validate(&self, q: usize, d: usize) -> Result<()> {
        if self.nonlinear.len() != self.basis.len() {
            return Err(Error::Dimension {
                what: "nonlinear covariate bases",
                expected: self.nonlinear.len(),
                found: self.basis.len(),
            });
        }
        if let Some(&j) = self.nonlinear.iter().chain(&self.linear_clinical).find(|&&j| j >= q) {
            return Err(Error::Dimension {
                what: "clinical covariate index",
                expected: q,
                found: j,
            });
        }
        if self.standardization.len() != d {
            return Err(Error::Dimension {
                what: "features",
                expected: self.standardization.len(),
                found: d,
            });
        }
        Ok(())
    }

    /// Writes the design row for one subject's covariates.
    pub fn row_into(&self, clinical: &[T], features: &[T], out: &mut [T]) -> Result<()> {
        if out.len() != self.ncols() {
            return Err(Error::Dimension {
                what: "design row",
                expected: self.ncols(),
                found: out.len(),
            });
        }
        let m = self.spline_cols();
        let xs: Vec<T> = self.nonlinear.iter().map(|&j| clinical[j]).collect();
        self.basis.eval_into(&xs, &mut out[..m]);
        let mut c = m;
        for &j in &self.linear_clinical {
            out[c] = clinical[j];
            c += 1;
        }
        let z = self.standardization.apply(features)?;
        out[c..].copy_from_slice(&z);
        Ok(())
    }

    pub fn build(&self, ds: &Dataset<T>) -> Result<DesignMatrix<T>> {
        self.validate(ds.q(), ds.d())?;
        let p = self.ncols();
        let mut data = vec![T::zero(); ds.n() * p];
        for (o, row) in ds.observations().iter().zip(data.chunks_mut(p.max(1))) {
            if p > 0 {
                self.row_into(&o.clinical, &o.features, row)?;
            }
        }
        DesignMatrix::new(ds.n(), p, data)
    }

    /// Knot-term columns (penalized by γ) and polynomial columns.
    pub fn penalty_layout(&self) -> PenaltyLayout {
        let mut knot_columns = Vec::new();
        let mut polynomial_columns = Vec::new();
        for (c, r) in self.basis.components.iter().zip(self.basis.offsets()) {
            polynomial_columns.extend(r.start..r.start + c.degree());
            knot_columns.extend(r.start + c.degree()..r.end);
        }
        let m = self.spline_cols();
        PenaltyLayout {
            knot_columns,
            polynomial_columns,
            linear_columns: (m..m + self.linear_cols()).collect(),
        }
    }
}

/// `eᵢ = T̃ᵢ − xᵢᵀθ`.
pub fn residuals<T: Scalar>(times: &[T], design: &DesignMatrix<T>, theta: &[T]) -> Result<Vec<T>> {
    if theta.len() != design.ncols() {
        return Err(Error::Dimension {
            what: "coefficient vector",
            expected: design.ncols(),
            found: theta.len(),
        });
    }
    if times.len() != design.nrows() {
        return Err(Error::Dimension {
            what: "log times",
            expected: design.nrows(),
            found: times.len(),
        });
    }
    Ok(times
        .iter()
        .zip(design.mul_vec(theta))
        .map(|(&t, fit)| t - fit)
        .collect())
}

/// Gehan loss from residuals by direct double loop. Reference implementation.
pub fn gehan_loss_naive<T: Scalar>(residuals: &[T], events: &[bool]) -> T {
    let n = residuals.len();
    let mut total = T::zero();
    for i in 0..n {
        if !events[i] {
            continue;
        }
        for j in 0..n {
            let u = residuals[i] - residuals[j];
            if u < T::zero() {
                total = total - u;
            }
        }
    }
    let nn = T::from_usize_lossy(n);
    total / (nn * nn)
}

/// Gehan loss from residuals in `O(n log n)`: for each event `i` the inner
/// sum is `Σ_{eⱼ > eᵢ} (eⱼ − eᵢ)`, read off a suffix sum over sorted residuals.
pub fn gehan_loss_from_residuals<T: Scalar>(residuals: &[T], events: &[bool]) -> T {
    let n = residuals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| residuals[a].partial_cmp(&residuals[b]).expect("finite residual"));
    let mut total = T::zero();
    let mut suffix = T::zero();
    let mut count = 0usize;
    let mut k = n;
    // walk groups of equal residuals from the top so ties contribute zero
    while k > 0 {
        let v = residuals[order[k - 1]];
        let mut start = k - 1;
        while start > 0 && residuals[order[start - 1]] == v {
            start -= 1;
        }
        let ev = order[start..k].iter().filter(|&&i| events[i]).count();
        if ev > 0 {
            let contrib = suffix - T::from_usize_lossy(count) * v;
            total = total + T::from_usize_lossy(ev) * contrib;
        }
        for &i in &order[start..k] {
            suffix = suffix + residuals[i];
        }
        count += k - start;
        k = start;
    }
    let nn = T::from_usize_lossy(n);
    total / (nn * nn)
}

/// Gehan loss of coefficients `(β, ϑ)` on a dataset.
pub fn gehan_loss<T: Scalar>(
    ds: &Dataset<T>,
    layout: &DesignLayout<T>,
    beta: &[T],
    vartheta: &[T],
) -> Result<T> {
    if beta.len() != layout.spline_cols() {
        return Err(Error::Dimension {
            what: "spline coefficients",
            expected: layout.spline_cols(),
            found: beta.len(),
        });
    }
    if vartheta.len() != layout.linear_cols() {
        return Err(Error::Dimension {
            what: "linear coefficients",
            expected: layout.linear_cols(),
            found: vartheta.len(),
        });
    }
    let design = layout.build(ds)?;
    let theta: Vec<T> = beta.iter().chain(vartheta).copied().collect();
    let e = residuals(&ds.log_times(), &design, &theta)?;
    Ok(gehan_loss_from_residuals(&e, &ds.events()))
}

/// Rule for the large constant in the ζ row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ZetaPolicy {
    /// ζ = factor × Σ|Vₛ| over the pair rows.
    RelativeToResponse(f64),
    Fixed(f64),
}

impl Default for ZetaPolicy {
    fn default() -> Self {
        ZetaPolicy::RelativeToResponse(1e6)
    }
}

/// The L1 regression `min_θ Σₛ |Vₛ − θᵀWₛ|`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoProblem<T> {
    v: Vec<T>,
    w: Vec<T>,
    ncols: usize,
    zeta: T,
    /// Pair rows plus the ζ row.
    base_rows: usize,
    penalty_rows: usize,
}

impl<T: Scalar> PseudoProblem<T> {
    /// A bare L1 regression problem (no ζ row).
    pub fn from_parts(v: Vec<T>, w: Vec<T>, ncols: usize) -> Result<Self> {
        if w.len() != v.len() * ncols {
            return Err(Error::Dimension {
                what: "pseudo design entries",
                expected: v.len() * ncols,
                found: w.len(),
            });
        }
        let base_rows = v.len();
        Ok(Self {
            v,
            w,
            ncols,
            zeta: T::zero(),
            base_rows,
            penalty_rows: 0,
        })
    }

    pub fn rows(&self) -> usize {
        self.v.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn zeta(&self) -> T {
        self.zeta
    }

    pub fn base_rows(&self) -> usize {
        self.base_rows
    }

    pub fn penalty_rows(&self) -> usize {
        self.penalty_rows
    }

    pub fn is_augmented(&self) -> bool {
        self.penalty_rows > 0
    }

    pub fn response(&self) -> &[T] {
        &self.v
    }

    pub fn row(&self, s: usize) -> (T, &[T]) {
        (self.v[s], &self.w[s * self.ncols..(s + 1) * self.ncols])
    }

    /// `Σₛ |Vₛ − θᵀWₛ|`.
    pub fn objective(&self, theta: &[T]) -> T {
        (0..self.rows())
            .map(|s| {
                let (v, w) = self.row(s);
                (v - dot(w, theta)).abs()
            })
            .sum()
    }

    /// `Σₛ (|Vₛ − θᵀWₛ| − |Vₛ|)`, evaluated without cancellation against
    /// the ζ row's magnitude.
    pub fn excess_objective(&self, theta: &[T]) -> T {
        (0..self.rows())
            .map(|s| {
                let (v, w) = self.row(s);
                abs_excess(v, dot(w, theta))
            })
            .sum()
    }

    /// Memory needed to materialize a problem of this shape, in bytes.
    pub fn footprint(rows: usize, cols: usize) -> usize {
        rows.saturating_mul(cols + 1).saturating_mul(std::mem::size_of::<T>())
    }
}

/// `|v − a| − |v|` computed stably when |v| ≫ |a|.
pub(crate) fn abs_excess<T: Scalar>(v: T, a: T) -> T {
    let u = v - a;
    if v > T::zero() && u >= T::zero() {
        -a
    } else if v < T::zero() && u <= T::zero() {
        a
    } else {
        u.abs() - v.abs()
    }
}

/// Builds `(V, W)`: one row per ordered pair `(i, j)` with `δᵢ = 1`
/// (including `j = i`), followed by the ζ row.
pub fn build_pseudo_problem<T: Scalar>(
    times: &[T],
    events: &[bool],
    design: &DesignMatrix<T>,
    policy: ZetaPolicy,
) -> Result<PseudoProblem<T>> {
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
    let p = design.ncols();
    let rows = n_events * n + 1;
    let mut v = Vec::with_capacity(rows);
    let mut w = Vec::with_capacity(rows * p);
    for i in (0..n).filter(|&i| events[i]) {
        let xi = design.row(i);
        for j in 0..n {
            v.push(times[i] - times[j]);
            w.extend(xi.iter().zip(design.row(j)).map(|(&a, &b)| a - b));
        }
    }
    // Σₖ Σₗ δₖ (xₗ − xₖ) = n_events Σₗ xₗ − n Σ_{k: δₖ=1} xₖ
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
    let zeta_row: Vec<T> = all.iter().zip(&ev).map(|(&a, &e)| ne * a - nn * e).collect();
    let zeta = match policy {
        ZetaPolicy::RelativeToResponse(f) => {
            let mass: T = v.iter().map(|x| x.abs()).sum();
            T::c(f) * mass.max(T::one())
        }
        ZetaPolicy::Fixed(z) => T::c(z),
    };
    v.push(zeta);
    w.extend(zeta_row);
    Ok(PseudoProblem {
        v,
        w,
        ncols: p,
        zeta,
        base_rows: rows,
        penalty_rows: 0,
    })
}

/// Convenience wrapper building the design from a dataset first.
pub fn build_pseudo_problem_for<T: Scalar>(
    ds: &Dataset<T>,
    layout: &DesignLayout<T>,
    policy: ZetaPolicy,
) -> Result<PseudoProblem<T>> {
    let design = layout.build(ds)?;
    build_pseudo_problem(&ds.log_times(), &ds.events(), &design, policy)
}

/// Penalty weights: γ on spline knot terms (or every spline term), and one
/// λ per linear coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PenaltySpec<T> {
    pub gamma: T,
    pub lambda: Vec<T>,
    pub penalize_all_beta: bool,
}

impl<T: Scalar> PenaltySpec<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: T| v.is_finite() && v >= T::zero();
        if !ok(self.gamma) || !self.lambda.iter().all(|&l| ok(l)) {
            return Err(Error::Config(
                "penalty weights must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// `γ Σ|β_pen| + Σⱼ λⱼ|ϑⱼ|` for a full coefficient vector.
    pub fn value(&self, layout: &PenaltyLayout, theta: &[T]) -> T {
        self.weights(layout)
            .into_iter()
            .map(|(c, w)| w * theta[c].abs())
            .sum()
    }

    /// `(column, weight)` for every penalized coefficient, in row order.
    pub fn weights(&self, layout: &PenaltyLayout) -> Vec<(usize, T)> {
        let mut out = Vec::new();
        if self.penalize_all_beta {
            let mut cols: Vec<usize> = layout
                .polynomial_columns
                .iter()
                .chain(&layout.knot_columns)
                .copied()
                .collect();
            cols.sort_unstable();
            out.extend(cols.into_iter().map(|c| (c, self.gamma)));
        } else {
            out.extend(layout.knot_columns.iter().map(|&c| (c, self.gamma)));
        }
        out.extend(layout.linear_columns.iter().zip(&self.lambda).map(|(&c, &l)| (c, l)));
        out
    }
}

/// Column roles inside the pseudo design.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PenaltyLayout {
    pub knot_columns: Vec<usize>,
    pub polynomial_columns: Vec<usize>,
    pub linear_columns: Vec<usize>,
}

/// Appends one zero-response row per penalized coefficient whose only
/// nonzero design entry is that coefficient's weight.
pub fn augment_penalties<T: Scalar>(
    pp: &PseudoProblem<T>,
    pen: &PenaltySpec<T>,
    layout: &PenaltyLayout,
) -> Result<PseudoProblem<T>> {
    if pp.is_augmented() {
        return Err(Error::State("pseudo-problem is already augmented".into()));
    }
    pen.validate()?;
    if pen.lambda.len() != layout.linear_columns.len() {
        return Err(Error::Dimension {
            what: "lambda weights",
            expected: layout.linear_columns.len(),
            found: pen.lambda.len(),
        });
    }
    augment_weighted(pp, &pen.weights(layout))
}

/// Appends a zero-response row `weight · e_column` for each entry.
pub fn augment_weighted<T: Scalar>(
    pp: &PseudoProblem<T>,
    weights: &[(usize, T)],
) -> Result<PseudoProblem<T>> {
    if pp.is_augmented() {
        return Err(Error::State("pseudo-problem is already augmented".into()));
    }
    if let Some(&(c, _)) = weights.iter().find(|(c, _)| *c >= pp.ncols) {
        return Err(Error::Dimension {
            what: "penalized column",
            expected: pp.ncols,
            found: c,
        });
    }
    let mut out = pp.clone();
    out.v.reserve(weights.len());
    out.w.reserve(weights.len() * pp.ncols);
    for &(c, wt) in weights {
        out.v.push(T::zero());
        let start = out.w.len();
        out.w.resize(start + pp.ncols, T::zero());
        out.w[start + c] = wt;
        out.penalty_rows += 1;
    }
    Ok(out)
}
