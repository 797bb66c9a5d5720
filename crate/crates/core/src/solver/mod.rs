//! Minimizers for L1-regression objectives `Σₛ |Vₛ − θᵀWₛ|`.

mod exact;
mod lbfgs;
mod objective;
mod smoothed;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gehan::PseudoProblem;
use crate::scalar::Scalar;

pub use exact::{solve_exact_l1, solve_exact_l1_from};
pub use objective::{rho, rho_prime, L1Objective, PairwiseGehan};
pub use smoothed::solve_smoothed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    ExactL1,
    Smoothed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Initial smoothing width. `None` starts at a tenth of the median
    /// absolute response.
    pub smoothing_eps: Option<f64>,
    pub continuation_factor: f64,
    pub eps_floor: f64,
    /// Total iteration budget across all continuation stages.
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub memory_pairs: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::ExactL1,
            smoothing_eps: None,
            continuation_factor: 0.1,
            eps_floor: 1e-8,
            max_iterations: 20_000,
            grad_tol: 1e-6,
            memory_pairs: 10,
        }
    }
}

impl SolverConfig {
    pub fn smoothed() -> Self {
        Self {
            method: SolverMethod::Smoothed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.continuation_factor > 0.0 && self.continuation_factor < 1.0) {
            return bad("continuation_factor must lie in (0, 1)");
        }
        if !(self.eps_floor > 0.0 && self.eps_floor.is_finite()) {
            return bad("eps_floor must be positive");
        }
        if let Some(e) = self.smoothing_eps {
            if !(e.is_finite() && e >= self.eps_floor) {
                return bad("smoothing_eps must be finite and at least eps_floor");
            }
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if self.memory_pairs == 0 {
            return bad("memory_pairs must be at least 1");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SolveOutcome<T> {
    pub theta_hat: Vec<T>,
    /// Exact (unsmoothed) objective at `theta_hat`.
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
    pub method_used: SolverMethod,
    /// Exact objective, less a θ-independent constant, at the end of each
    /// continuation stage. Empty for the exact method.
    pub stage_objectives: Vec<T>,
}

/// Dispatches on `config.method`.
pub fn solve<T: Scalar>(
    pp: &PseudoProblem<T>,
    config: &SolverConfig,
    theta0: Option<&[T]>,
) -> Result<SolveOutcome<T>> {
    match config.method {
        SolverMethod::ExactL1 => solve_exact_l1_from(pp, theta0),
        SolverMethod::Smoothed => {
            let mut out = solve_smoothed(pp, config, theta0)?;
            out.objective = pp.objective(&out.theta_hat);
            Ok(out)
        }
    }
}
