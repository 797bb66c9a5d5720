use super::lbfgs::minimize;
use super::{L1Objective, SolveOutcome, SolverConfig, SolverMethod};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smoothing widths from the initial width down to the floor.
fn schedule(eps0: f64, factor: f64, floor: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = eps0;
    while e > floor * (1.0 + 1e-9) {
        out.push(e);
        e *= factor;
    }
    out.push(floor);
    out
}

/// Minimizes the `ρ_ε`-smoothed objective by L-BFGS, driving `ε` down to
/// `eps_floor` and warm-starting each stage from the previous one.
pub fn solve_smoothed<T: Scalar, O: L1Objective<T> + ?Sized>(
    obj: &O,
    config: &SolverConfig,
    theta0: Option<&[T]>,
) -> Result<SolveOutcome<T>> {
    config.validate()?;
    let p = obj.dim();
    let mut theta = match theta0 {
        Some(t) if t.len() != p => {
            return Err(Error::Dimension {
                what: "initial coefficient vector",
                expected: p,
                found: t.len(),
            })
        }
        Some(t) => t.to_vec(),
        None => vec![T::zero(); p],
    };
    let scale = obj.response_scale().to_f64_lossy();
    let eps0 = config
        .smoothing_eps
        .unwrap_or(0.1 * scale)
        .max(config.eps_floor);
    let stages = schedule(eps0, config.continuation_factor, config.eps_floor);

    let mut best = theta.clone();
    let mut best_excess = obj.excess(&theta);
    let mut stage_objectives = Vec::with_capacity(stages.len());
    let mut used = 0;
    let mut converged = false;
    for (k, &eps) in stages.iter().enumerate() {
        let last = k + 1 == stages.len();
        let remaining = config.max_iterations - used;
        let (cap, gtol) = if last {
            (remaining, config.grad_tol)
        } else {
            let cap = (remaining / (stages.len() - k)).max(1);
            (cap, config.grad_tol * (eps / config.eps_floor).sqrt())
        };
        let e = T::c(eps);
        let m = minimize(
            |x: &[T], g: &mut [T]| obj.smoothed(x, e, g),
            theta,
            config.memory_pairs,
            cap,
            T::c(gtol),
        );
        used += m.iterations;
        theta = m.x;
        let ex = obj.excess(&theta);
        stage_objectives.push(ex);
        if ex <= best_excess {
            best_excess = ex;
            best.clone_from(&theta);
        }
        log::trace!(
            "stage eps={eps:.3e}: {} iterations, smoothed={:.6e}, |g|={:.3e}, excess={:.6e}",
            m.iterations,
            m.f.to_f64_lossy(),
            m.grad_inf.to_f64_lossy(),
            ex.to_f64_lossy()
        );
        if last {
            converged = m.converged;
        }
        if used >= config.max_iterations {
            break;
        }
    }
    Ok(SolveOutcome {
        objective: obj.objective(&best),
        theta_hat: best,
        iterations: used,
        converged,
        method_used: SolverMethod::Smoothed,
        stage_objectives,
    })
}
