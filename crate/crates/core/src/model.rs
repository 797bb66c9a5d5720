//! Partly linear and additive AFT estimators and risk scores.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{standardization_record, Dataset, StandardizationRecord};
use crate::error::{Error, Result};
use crate::gehan::{
    augment_weighted, build_pseudo_problem, gehan_loss_from_residuals, residuals, DesignLayout,
    DesignMatrix, PseudoProblem, ZetaPolicy,
};
use crate::scalar::{dot, Scalar};
use crate::solver::{
    solve_exact_l1_from, solve_smoothed, PairwiseGehan, SolveOutcome, SolverConfig, SolverMethod,
};
use crate::splines::{
    place_knots_lenient, AdditiveBasisSpec, SplineBasisSpec, DEFAULT_DEGREE, DEFAULT_KNOTS,
};

/// Coefficients of penalized terms below this magnitude are reported as zero.
pub const ZERO_THRESHOLD: f64 = 1e-8;

/// Largest pseudo-problem the exact path materializes, in bytes.
pub const DEFAULT_MATERIALIZE_LIMIT: usize = 2 << 30;

/// How the spline bases of the nonlinear covariates are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
#[serde(rename_all = "snake_case")]
pub enum BasisRule<T> {
    /// `knots` knots at equally spaced percentiles of each covariate.
    Percentiles { degree: usize, knots: usize },
    Fixed(AdditiveBasisSpec<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PenaltyConfig<T> {
    /// Weight on the knot coefficients (every spline coefficient when
    /// `penalize_all_beta`).
    pub gamma: T,
    /// Lasso weight on each feature coefficient.
    #[serde(with = "nonfinite::one")]
    pub lambda: T,
    /// Replaces the per-coefficient λ of the linear block (linearly modeled
    /// clinical covariates, then features). `+∞` fixes a coefficient at zero.
    #[serde(with = "nonfinite::opt_many")]
    pub lambda_weights: Option<Vec<T>>,
    pub penalize_all_beta: bool,
    /// Apply `lambda` to linearly modeled clinical covariates too.
    pub penalize_clinical: bool,
}

impl<T: Scalar> Default for PenaltyConfig<T> {
    fn default() -> Self {
        Self {
            gamma: T::zero(),
            lambda: T::zero(),
            lambda_weights: None,
            penalize_all_beta: false,
            penalize_clinical: false,
        }
    }
}

impl<T: Scalar> PenaltyConfig<T> {
    fn lambdas(&self, n_clinical: usize, d: usize) -> Vec<T> {
        if let Some(w) = &self.lambda_weights {
            return w.clone();
        }
        let clin = if self.penalize_clinical { self.lambda } else { T::zero() };
        std::iter::repeat_n(clin, n_clinical)
            .chain(std::iter::repeat_n(self.lambda, d))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelSpec<T> {
    /// Clinical columns entering through a spline.
    pub nonlinear: Vec<usize>,
    pub basis: BasisRule<T>,
    /// Clinical columns entering linearly, ahead of the features.
    pub linear_clinical: Vec<usize>,
    pub penalty: PenaltyConfig<T>,
    pub solver: SolverConfig,
    pub standardize: bool,
    pub zeta: ZetaPolicy,
    pub materialize_limit: usize,
}

impl<T: Scalar> ModelSpec<T> {
    /// Cubic splines with ten percentile knots, no penalty, exact solver,
    /// standardized features.
    pub fn new(nonlinear: Vec<usize>, linear_clinical: Vec<usize>) -> Self {
        Self {
            nonlinear,
            basis: BasisRule::Percentiles {
                degree: DEFAULT_DEGREE,
                knots: DEFAULT_KNOTS,
            },
            linear_clinical,
            penalty: PenaltyConfig::default(),
            solver: SolverConfig::default(),
            standardize: true,
            zeta: ZetaPolicy::default(),
            materialize_limit: DEFAULT_MATERIALIZE_LIMIT,
        }
    }

    pub fn with_knots(mut self, degree: usize, knots: usize) -> Self {
        self.basis = BasisRule::Percentiles { degree, knots };
        self
    }

    pub fn with_penalty(mut self, gamma: T, lambda: T) -> Self {
        self.penalty.gamma = gamma;
        self.penalty.lambda = lambda;
        self
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_standardize(mut self, standardize: bool) -> Self {
        self.standardize = standardize;
        self
    }

    pub fn validate(&self, q: usize, d: usize) -> Result<()> {
        let mut seen = vec![false; q];
        for &j in self.nonlinear.iter().chain(&self.linear_clinical) {
            if j >= q {
                return Err(Error::Dimension {
                    what: "clinical covariate index",
                    expected: q,
                    found: j,
                });
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::Config(format!(
                    "clinical covariate {j} is assigned more than one role"
                )));
            }
        }
        match &self.basis {
            BasisRule::Percentiles { degree, knots } => {
                if *degree == 0 {
                    return Err(Error::InvalidSpline("degree must be at least 1".into()));
                }
                if *knots == 0 && !self.nonlinear.is_empty() {
                    return Err(Error::InvalidSpline("at least one knot is required".into()));
                }
            }
            BasisRule::Fixed(b) if b.len() != self.nonlinear.len() => {
                return Err(Error::Dimension {
                    what: "nonlinear covariate bases",
                    expected: self.nonlinear.len(),
                    found: b.len(),
                })
            }
            BasisRule::Fixed(_) => {}
        }
        let pen = &self.penalty;
        if !(pen.gamma.is_finite() && pen.gamma >= T::zero()) {
            return Err(Error::Config("gamma must be finite and nonnegative".into()));
        }
        if !(pen.lambda >= T::zero()) {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if let Some(w) = &pen.lambda_weights {
            let want = self.linear_clinical.len() + d;
            if w.len() != want {
                return Err(Error::Dimension {
                    what: "lambda weights",
                    expected: want,
                    found: w.len(),
                });
            }
            if w.iter().any(|&l| !(l >= T::zero())) {
                return Err(Error::Config("lambda weights must be nonnegative".into()));
            }
        }
        self.solver.validate()
    }

    /// The spline bases this spec implies for `ds`.
    pub fn resolve_basis(&self, ds: &Dataset<T>) -> Result<AdditiveBasisSpec<T>> {
        match &self.basis {
            BasisRule::Fixed(b) => Ok(b.clone()),
            BasisRule::Percentiles { degree, knots } => {
                let comps = self
                    .nonlinear
                    .iter()
                    .map(|&j| {
                        let k = place_knots_lenient(&ds.clinical_column(j), *knots)?;
                        SplineBasisSpec::new(*degree, k)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(AdditiveBasisSpec::new(comps))
            }
        }
    }

    /// Copy with the bases fixed to those resolved on `ds`, so that fits on
    /// subsets of `ds` share one design.
    pub fn resolved(&self, ds: &Dataset<T>) -> Result<Self> {
        let mut out = self.clone();
        out.basis = BasisRule::Fixed(self.resolve_basis(ds)?);
        Ok(out)
    }

    pub fn has_knots(&self) -> bool {
        match &self.basis {
            BasisRule::Percentiles { knots, .. } => *knots > 0 && !self.nonlinear.is_empty(),
            BasisRule::Fixed(b) => b.components.iter().any(|c| !c.knots().is_empty()),
        }
    }
}

/// A fitted model: coefficients on the standardized-feature scale plus
/// everything needed to score new subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FitResult<T> {
    /// Spline coefficients, concatenated per nonlinear covariate.
    pub beta_hat: Vec<T>,
    /// Linear clinical coefficients followed by feature coefficients.
    pub vartheta_hat: Vec<T>,
    pub spec: ModelSpec<T>,
    pub layout: DesignLayout<T>,
    pub gamma: T,
    #[serde(with = "nonfinite::one")]
    pub lambda: T,
    /// Resolved λ per linear coefficient.
    #[serde(with = "nonfinite::many")]
    pub lambda_weights: Vec<T>,
    /// Gehan loss plus penalty at the estimate.
    pub objective: T,
    pub gehan_loss: T,
    /// Positions in `vartheta_hat` with nonzero coefficients.
    pub selected: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub method_used: SolverMethod,
    pub n: usize,
    pub q: usize,
    pub d: usize,
    pub clinical_names: Option<Vec<String>>,
    pub feature_names: Option<Vec<String>>,
    pub training_fingerprint: String,
}

pub fn fit<T: Scalar>(ds: &Dataset<T>, spec: &ModelSpec<T>) -> Result<FitResult<T>> {
    fit_from(ds, spec, None)
}

/// Additive model with two or more nonlinear components.
pub fn fit_additive<T: Scalar>(ds: &Dataset<T>, spec: &ModelSpec<T>) -> Result<FitResult<T>> {
    if spec.nonlinear.len() < 2 {
        return Err(Error::Config(format!(
            "additive fit needs at least 2 nonlinear covariates, got {}",
            spec.nonlinear.len()
        )));
    }
    fit_from(ds, spec, None)
}

/// As [`fit`], starting the solver from a previous fit's coefficients when
/// their dimensions agree.
pub fn fit_from<T: Scalar>(
    ds: &Dataset<T>,
    spec: &ModelSpec<T>,
    warm: Option<&FitResult<T>>,
) -> Result<FitResult<T>> {
    spec.validate(ds.q(), ds.d())?;
    let basis = spec.resolve_basis(ds)?;
    let standardization = if spec.standardize {
        standardization_record(ds)?
    } else {
        StandardizationRecord::identity(ds.d())
    };
    let layout = DesignLayout {
        nonlinear: spec.nonlinear.clone(),
        basis,
        linear_clinical: spec.linear_clinical.clone(),
        standardization,
    };
    let design = layout.build(ds)?;
    let m = layout.spline_cols();
    let ncols = layout.ncols();
    let lambda_weights = spec.penalty.lambdas(layout.linear_clinical.len(), ds.d());

    // penalty weight per design column; +∞ pins the coefficient at zero
    let mut weight = vec![T::zero(); ncols];
    let pl = layout.penalty_layout();
    if spec.penalty.penalize_all_beta {
        weight[..m].iter_mut().for_each(|w| *w = spec.penalty.gamma);
    } else {
        for &c in &pl.knot_columns {
            weight[c] = spec.penalty.gamma;
        }
    }
    weight[m..].copy_from_slice(&lambda_weights);

    let keep: Vec<usize> = (0..ncols).filter(|&c| weight[c].is_finite()).collect();
    let reduced = design.select_columns(&keep);
    let n = T::from_usize_lossy(ds.n());
    // the pair rows sum to 2n² L_n plus a constant
    let scale = T::c(2.0) * n * n;
    let penalties: Vec<(usize, T)> = keep
        .iter()
        .enumerate()
        .filter(|&(_, &c)| weight[c] > T::zero())
        .map(|(i, &c)| (i, scale * weight[c]))
        .collect();
    let theta0: Option<Vec<T>> = warm
        .map(|w| w.theta())
        .filter(|t| t.len() == ncols)
        .map(|t| keep.iter().map(|&c| t[c]).collect());

    let times = ds.log_times();
    let events = ds.events();
    let outcome = solve_reduced(spec, &times, &events, reduced, penalties, theta0.as_deref())?;

    let mut theta = vec![T::zero(); ncols];
    for (&c, &v) in keep.iter().zip(&outcome.theta_hat) {
        theta[c] = v;
    }
    let thr = T::c(ZERO_THRESHOLD);
    for (t, &w) in theta.iter_mut().zip(&weight) {
        if w > T::zero() && t.abs() < thr {
            *t = T::zero();
        }
    }
    let e = residuals(&times, &design, &theta)?;
    let loss = gehan_loss_from_residuals(&e, &events);
    let penalty: T = theta
        .iter()
        .zip(&weight)
        .filter(|(_, w)| w.is_finite())
        .map(|(&t, &w)| w * t.abs())
        .sum();
    let vartheta_hat = theta.split_off(m);
    let selected = (0..vartheta_hat.len())
        .filter(|&j| vartheta_hat[j] != T::zero())
        .collect();
    Ok(FitResult {
        beta_hat: theta,
        vartheta_hat,
        spec: spec.clone(),
        layout,
        gamma: spec.penalty.gamma,
        lambda: spec.penalty.lambda,
        lambda_weights,
        objective: loss + penalty,
        gehan_loss: loss,
        selected,
        converged: outcome.converged,
        iterations: outcome.iterations,
        method_used: outcome.method_used,
        n: ds.n(),
        q: ds.q(),
        d: ds.d(),
        clinical_names: ds.clinical_names().map(<[String]>::to_vec),
        feature_names: ds.feature_names().map(<[String]>::to_vec),
        training_fingerprint: ds.fingerprint(),
    })
}

fn solve_reduced<T: Scalar>(
    spec: &ModelSpec<T>,
    times: &[T],
    events: &[bool],
    design: DesignMatrix<T>,
    penalties: Vec<(usize, T)>,
    theta0: Option<&[T]>,
) -> Result<SolveOutcome<T>> {
    let p = design.ncols();
    if p == 0 {
        return Ok(SolveOutcome {
            theta_hat: Vec::new(),
            objective: T::zero(),
            iterations: 0,
            converged: true,
            method_used: spec.solver.method,
            stage_objectives: Vec::new(),
        });
    }
    if spec.solver.method == SolverMethod::ExactL1 {
        let n_events = events.iter().filter(|&&e| e).count();
        let rows = n_events * times.len() + 1 + penalties.len();
        if p + 1 > rows {
            return Err(Error::Capability(format!(
                "{p} coefficients exceed the {rows} pseudo-observations; use the smoothed solver"
            )));
        }
        if PseudoProblem::<T>::footprint(rows, p) <= spec.materialize_limit {
            let pp = build_pseudo_problem(times, events, &design, spec.zeta)?;
            let pp = augment_weighted(&pp, &penalties)?;
            return solve_exact_l1_from(&pp, theta0);
        }
        log::warn!(
            "pseudo-problem with {rows} rows exceeds the materialization limit; using the smoothed solver"
        );
    }
    let obj = PairwiseGehan::new(times, events, design, penalties, spec.zeta)?;
    let cfg = SolverConfig {
        method: SolverMethod::Smoothed,
        ..spec.solver.clone()
    };
    solve_smoothed(&obj, &cfg, theta0)
}

impl<T: Scalar> FitResult<T> {
    /// `(β̂, ϑ̂)` as one vector in design-column order.
    pub fn theta(&self) -> Vec<T> {
        self.beta_hat.iter().chain(&self.vartheta_hat).copied().collect()
    }

    /// Number of nonzero entries of `(β̂, ϑ̂)`.
    pub fn df(&self) -> usize {
        self.beta_hat
            .iter()
            .chain(&self.vartheta_hat)
            .filter(|&&v| v != T::zero())
            .count()
    }

    /// Feature coefficients only (the tail of `vartheta_hat`).
    pub fn feature_coefficients(&self) -> &[T] {
        &self.vartheta_hat[self.layout.linear_clinical.len()..]
    }

    /// `φ̂_j(x) − φ̂_j(0)` for the `j`-th nonlinear covariate.
    pub fn phi(&self, j: usize, x: T) -> Result<T> {
        let comps = &self.layout.basis.components;
        let Some(spec) = comps.get(j) else {
            return Err(Error::Dimension {
                what: "nonlinear component",
                expected: comps.len(),
                found: j,
            });
        };
        let range = self.layout.basis.offsets()[j].clone();
        let beta = &self.beta_hat[range];
        Ok(spec.eval_phi(beta, x)? - spec.eval_phi(beta, T::zero())?)
    }

    /// Risk score `Σⱼ φ̂ⱼ(xⱼ) + ϑ̂ᵀ(x_lin, z_std)`; larger means longer
    /// predicted survival. `z` is on the raw scale.
    pub fn predict_risk(&self, x: &[T], z: &[T]) -> Result<T> {
        if x.len() != self.q {
            return Err(Error::Dimension {
                what: "clinical covariates",
                expected: self.q,
                found: x.len(),
            });
        }
        if z.len() != self.d {
            return Err(Error::Dimension {
                what: "features",
                expected: self.d,
                found: z.len(),
            });
        }
        let k = self.layout.linear_clinical.len();
        let zs = self.layout.standardization.apply(z)?;
        Ok(self.clinical_part(x)? + dot(&self.vartheta_hat[k..], &zs))
    }

    /// The clinical share of the score: `Σⱼ φ̂ⱼ(xⱼ)` plus the linearly modeled
    /// clinical terms.
    pub fn clinical_part(&self, x: &[T]) -> Result<T> {
        if x.len() != self.q {
            return Err(Error::Dimension {
                what: "clinical covariates",
                expected: self.q,
                found: x.len(),
            });
        }
        let mut score = T::zero();
        for (j, &c) in self.layout.nonlinear.iter().enumerate() {
            score = score + self.phi(j, x[c])?;
        }
        for (&c, &b) in self.layout.linear_clinical.iter().zip(&self.vartheta_hat) {
            score = score + b * x[c];
        }
        Ok(score)
    }

    /// Scores for every subject of `ds`.
    pub fn predict_dataset(&self, ds: &Dataset<T>) -> Result<Vec<T>> {
        ds.observations()
            .iter()
            .map(|o| self.predict_risk(&o.clinical, &o.features))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// JSON has no infinities; non-finite weights are written as strings.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scalar::Scalar;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }

    fn to_num<T: Scalar>(v: T) -> Num {
        let x = v.to_f64_lossy();
        if x.is_finite() {
            Num::F(x)
        } else {
            Num::S(x.to_string())
        }
    }

    fn from_num<T: Scalar, E: serde::de::Error>(n: Num) -> Result<T, E> {
        match n {
            Num::F(x) => Ok(T::c(x)),
            Num::S(s) => s
                .parse::<f64>()
                .map(T::c)
                .map_err(|_| E::custom(format!("not a number: {s}"))),
        }
    }

    pub mod one {
        use super::*;

        pub fn serialize<T: Scalar, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
            to_num(*v).serialize(s)
        }

        pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
            from_num(Num::deserialize(d)?)
        }
    }

    pub mod many {
        use super::*;

        pub fn serialize<T: Scalar, S: Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
            v.iter().map(|&x| to_num(x)).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<Vec<T>, D::Error> {
            Vec::<Num>::deserialize(d)?.into_iter().map(from_num).collect()
        }
    }

    pub mod opt_many {
        use super::*;

        pub fn serialize<T: Scalar, S: Serializer>(v: &Option<Vec<T>>, s: S) -> Result<S::Ok, S::Error> {
            v.as_ref()
                .map(|v| v.iter().map(|&x| to_num(x)).collect::<Vec<_>>())
                .serialize(s)
        }

        pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Option<Vec<T>>, D::Error> {
            Option::<Vec<Num>>::deserialize(d)?
                .map(|v| v.into_iter().map(from_num).collect())
                .transpose()
        }
    }
}

#[cfg(test)]
mod tests;
