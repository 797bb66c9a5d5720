//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion.
//!
//! Exits 0 regardless of the verdicts unless `ACCEPTANCE_STRICT=1`.
//! `ACCEPTANCE_ONLY=1,2,7` restricts the run to the listed criteria.

use std::time::Instant;

use plaft::data::Dataset;
use plaft::gehan::{build_pseudo_problem, gehan_loss_naive, residuals, DesignMatrix, PseudoProblem, ZetaPolicy};
use plaft::metrics::c_statistic;
use plaft::model::{fit, FitResult, ModelSpec};
use plaft::simgen::{
    default_models, generate, harness_grid, run_monte_carlo, Design, MonteCarloResult, PhiKind, ScenarioSpec,
};
use plaft::solver::{solve_exact_l1, L1Objective, PairwiseGehan, SolverConfig};
use plaft::tuning::assign_folds;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 2024;
const THREADS: usize = 1;

// criterion 1
const GRID_BOX: f64 = 5.0;
const COARSE_STEP: f64 = 0.05;
const FINE_STEP: f64 = 1e-3;
// criterion 2
const CROSS_SOLVER_REL: f64 = 1e-4;
// criterion 3
const GRADIENT_REL: f64 = 1e-6;
const MIN_EPS: f64 = 1e-4;
// criterion 4
const PL_MSE_MAX: f64 = 0.03;
const PL_BIAS_MAX: f64 = 0.02;
const AFT_MSE_MIN: f64 = 0.2;
// criterion 5
const PC_MIN: f64 = 0.60;
const PI_MAX: f64 = 0.05;
const MSPE_RATIO_MIN: f64 = 2.0;
// criterion 6
const C_TARGET: f64 = 0.86;
const C_TOL: f64 = 0.04;
// criterion 8
const HUGE_PENALTY: f64 = 1e8;
// criterion 9
const CONTINUITY_TOL: f64 = 1e-9;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: [(usize, fn() -> Verdict); 9] = [
        (1, pseudo_problem_equivalence),
        (2, cross_solver_agreement),
        (3, gradient_correctness),
        (4, estimation_scenario),
        (5, selection_scenario),
        (6, highdim_scenario),
        (7, concordance_oracle),
        (8, penalty_limits),
        (9, property_suite),
    ];
    let mut failed = 0;
    for (k, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&k)) {
            continue;
        }
        let t = Instant::now();
        let v = f();
        let verdict = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {k}: {verdict} ({:.1}s) {}", t.elapsed().as_secs_f64(), v.detail);
        failed += usize::from(!v.pass);
    }
    if strict && failed > 0 {
        std::process::exit(1);
    }
}

fn random_gehan(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (Vec<f64>, Vec<bool>, DesignMatrix<f64>) {
    let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let design = DesignMatrix::new(n, p, x).unwrap();
    let truth: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let times = (0..n)
        .map(|i| {
            let lin: f64 = design.row(i).iter().zip(&truth).map(|(a, b)| a * b).sum();
            lin + rng.random_range(-0.5..0.5)
        })
        .collect();
    let mut events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    events[0] = true;
    events[1] = true;
    (times, events, design)
}

fn gehan_at(times: &[f64], events: &[bool], design: &DesignMatrix<f64>, theta: &[f64]) -> f64 {
    gehan_loss_naive(&residuals(times, design, theta).unwrap(), events)
}

/// Minimum of `f` over the grid `center ± half` with spacing `step`, per axis.
fn grid_min(p: usize, center: &[f64], half: f64, step: f64, f: impl Fn(&[f64]) -> f64) -> (f64, Vec<f64>) {
    let m = (2.0 * half / step).round() as i64;
    let mut best = (f64::INFINITY, vec![0.0; p]);
    let mut idx = vec![0i64; p];
    loop {
        let th: Vec<f64> = (0..p).map(|k| center[k] - half + idx[k] as f64 * step).collect();
        let v = f(&th);
        if v < best.0 {
            best = (v, th);
        }
        let mut k = 0;
        while k < p {
            idx[k] += 1;
            if idx[k] <= m {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == p {
            return best;
        }
    }
}

/// Coarse global grid search on the Gehan loss, refined at the fine
/// resolution around the coarse winner; the exact pseudo-problem minimizer
/// must do at least as well as every grid point and sit within two fine
/// cells of the grid argmin unless the grid argmin itself attains the
/// minimum (non-unique argmin).
fn pseudo_problem_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_gap: f64 = f64::NEG_INFINITY;
    let mut worst_dist: f64 = 0.0;
    let mut bad = 0;
    for inst in 0..20 {
        let n = rng.random_range(4..=8);
        let p = 1 + inst % 2;
        let (t, e, x) = random_gehan(&mut rng, n, p);
        let pp = build_pseudo_problem(&t, &e, &x, ZetaPolicy::default()).unwrap();
        let theta = solve_exact_l1(&pp).unwrap().theta_hat;
        let l_star = gehan_at(&t, &e, &x, &theta);
        let loss = |th: &[f64]| gehan_at(&t, &e, &x, th);
        let (_, coarse) = grid_min(p, &vec![0.0; p], GRID_BOX, COARSE_STEP, loss);
        let (l_grid, g) = grid_min(p, &coarse, 2.0 * COARSE_STEP, FINE_STEP, loss);
        let scale = 1.0 + l_star.abs();
        let gap = (l_star - l_grid) / scale;
        let dist = g.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let same_value = (l_grid - l_star).abs() <= 1e-12 * scale;
        worst_gap = worst_gap.max(gap);
        if !same_value {
            worst_dist = worst_dist.max(dist);
        }
        if gap > 1e-12 || (!same_value && dist > 2.0 * FINE_STEP) {
            bad += 1;
        }
    }
    Verdict::new(
        bad == 0,
        format!("20 instances, {bad} disagree; max (L(theta*) - grid min) = {worst_gap:.2e}, max argmin distance = {worst_dist:.2e} (limit {:.0e})", 2.0 * FINE_STEP),
    )
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset<f64> {
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let z: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let times: Vec<f64> = (0..n)
        .map(|i| {
            let lin: f64 = z[i * d..(i + 1) * d].iter().take(2).sum();
            x[i] * x[i] + lin + rng.random_range(-0.5..0.5)
        })
        .collect();
    let events: Vec<bool> = (0..n).map(|i| i < 2 || rng.random_bool(0.75)).collect();
    Dataset::from_columns(&times, &events, &x, 1, &z, d).unwrap()
}

fn cross_solver_agreement() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(30..=60);
        let d = rng.random_range(2..=8);
        let ds = random_dataset(&mut rng, n, d);
        let gamma = rng.random_range(0.0..0.05);
        let lambda = rng.random_range(0.0..0.05);
        let spec = ModelSpec::new(vec![0], vec![]).with_knots(3, 3).with_penalty(gamma, lambda);
        let exact = fit(&ds, &spec).unwrap();
        let smooth = fit(&ds, &spec.with_solver(SolverConfig::smoothed())).unwrap();
        let rel = (smooth.objective - exact.objective).abs() / exact.objective.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    Verdict::new(
        worst <= CROSS_SOLVER_REL,
        format!("20 problems, max relative objective gap {worst:.2e} (limit {CROSS_SOLVER_REL:.0e})"),
    )
}

/// Largest coordinatewise `|fd − g| / max(|g|, 1)`.
fn gradient_error<O: L1Objective<f64>>(obj: &O, theta: &[f64], eps: f64) -> f64 {
    let p = obj.dim();
    let mut g = vec![0.0; p];
    obj.smoothed(theta, eps, &mut g);
    let mut scratch = vec![0.0; p];
    let h = 1e-4 * eps;
    let mut worst: f64 = 0.0;
    for k in 0..p {
        let mut plus = theta.to_vec();
        let mut minus = theta.to_vec();
        plus[k] += h;
        minus[k] -= h;
        let fd = (obj.smoothed(&plus, eps, &mut scratch) - obj.smoothed(&minus, eps, &mut scratch)) / (2.0 * h);
        worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1.0));
    }
    worst
}

fn gradient_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let eps = MIN_EPS * 10f64.powf(rng.random_range(0.0..4.0));
        let p = rng.random_range(2..=5);
        let theta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = if k % 2 == 0 {
            let rows = rng.random_range(10..=40);
            let w: Vec<f64> = (0..rows * p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..rows).map(|_| rng.random_range(-3.0..3.0)).collect();
            gradient_error(&PseudoProblem::from_parts(v, w, p).unwrap(), &theta, eps)
        } else {
            let n = rng.random_range(8..=20);
            let (t, e, x) = random_gehan(&mut rng, n, p);
            let pen = vec![(p - 1, rng.random_range(0.0..1.0))];
            let obj = PairwiseGehan::new(&t, &e, x, pen, ZetaPolicy::default()).unwrap();
            gradient_error(&obj, &theta, eps)
        };
        worst = worst.max(err);
    }
    Verdict::new(
        worst <= GRADIENT_REL,
        format!("20 triples, eps in [1e-4, 1], max relative error {worst:.2e} (limit {GRADIENT_REL:.0e})"),
    )
}

fn mean(s: &plaft::simgen::Summary) -> f64 {
    s.mean.unwrap_or(f64::NAN)
}

fn model_summary<'a>(r: &'a MonteCarloResult, name: &str) -> &'a plaft::simgen::ModelSummary {
    r.summary(name).unwrap_or_else(|| panic!("no model {name}"))
}

fn estimation_scenario() -> Verdict {
    let spec = ScenarioSpec::estimation(PhiKind::QuadraticX2).with_seed(SEED);
    let models = default_models::<f64>(Design::Estimation, &harness_grid(Design::Estimation));
    let r = match run_monte_carlo(&spec, &models, 100, THREADS) {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, format!("harness error: {e}")),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for s in &r.summaries {
        let (bias, mse) = (mean(&s.bias), mean(&s.mse));
        if s.name.starts_with("PL-AFT") {
            pass &= mse < PL_MSE_MAX && bias.abs() < PL_BIAS_MAX;
        } else {
            pass &= mse > AFT_MSE_MIN;
        }
        parts.push(format!("{} bias={bias:.4} mse={mse:.4} failed={}", s.name, s.failed));
    }
    Verdict::new(
        pass,
        format!(
            "100 reps; {}; need PL-AFT mse<{PL_MSE_MAX} |bias|<{PL_BIAS_MAX}, AFT mse>{AFT_MSE_MIN}",
            parts.join(", ")
        ),
    )
}

fn selection_scenario() -> Verdict {
    let spec = ScenarioSpec::selection(0.0, 1.0).with_seed(SEED);
    let models: Vec<_> = default_models::<f64>(Design::Selection, &harness_grid(Design::Selection))
        .into_iter()
        .filter(|m| m.name.starts_with("Lasso"))
        .collect();
    let r = match run_monte_carlo(&spec, &models, 100, THREADS) {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, format!("harness error: {e}")),
    };
    let pl = model_summary(&r, "Lasso-PL");
    let l = model_summary(&r, "Lasso-L");
    let (pc, pi) = (mean(&pl.p_c), mean(&pl.p_i));
    let ratio = mean(&l.mspe1) / mean(&pl.mspe1);
    Verdict::new(
        pc >= PC_MIN && pi <= PI_MAX && ratio >= MSPE_RATIO_MIN,
        format!(
            "100 reps, censoring {:.3}; Lasso-PL P_C={pc:.3} (>= {PC_MIN}) P_I={pi:.3} (<= {PI_MAX}); MSPE1 L/PL = {:.4}/{:.4} = {ratio:.2} (>= {MSPE_RATIO_MIN})",
            r.censoring,
            mean(&l.mspe1),
            mean(&pl.mspe1)
        ),
    )
}

fn highdim_scenario() -> Verdict {
    let spec = ScenarioSpec::highdim(100, 0.0).with_seed(SEED);
    let models = default_models::<f64>(Design::Highdim, &harness_grid(Design::Highdim));
    let r = match run_monte_carlo(&spec, &models, 50, THREADS) {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, format!("harness error: {e}")),
    };
    let pl = mean(&model_summary(&r, "Lasso-PL").c);
    let l = mean(&model_summary(&r, "Lasso-L").c);
    Verdict::new(
        (pl - C_TARGET).abs() <= C_TOL && pl > l,
        format!(
            "50 reps, censoring {:.3}; c Lasso-PL={pl:.4} (target {C_TARGET} +/- {C_TOL}), Lasso-L={l:.4}",
            r.censoring
        ),
    )
}

fn brute_concordance(t: &[f64], e: &[bool], s: &[f64]) -> (u64, u64) {
    let (mut half, mut comp) = (0, 0);
    for i in 0..t.len() {
        for j in 0..t.len() {
            // i fails first: earlier time, or same time with i the only event
            let first = t[i] < t[j] || (t[i] == t[j] && !e[j]);
            if i == j || !e[i] || !first {
                continue;
            }
            comp += 1;
            half += match s[i].partial_cmp(&s[j]).unwrap() {
                std::cmp::Ordering::Less => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Greater => 0,
            };
        }
    }
    (half, comp)
}

fn concordance_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 7);
    let mut bad = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=30);
        // coarse values force ties in both times and scores
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 * 0.5).collect();
        let got = c_statistic(&t, &e, &s).unwrap();
        if (got.half_units, got.comparable) != brute_concordance(&t, &e, &s) {
            bad += 1;
        }
    }
    Verdict::new(bad == 0, format!("100 instances, {bad} mismatches"))
}

fn knot_coefficients(fr: &FitResult<f64>) -> Vec<f64> {
    let basis = &fr.layout.basis;
    basis
        .offsets()
        .iter()
        .zip(&basis.components)
        .flat_map(|(range, c)| {
            let knots = c.knot_terms();
            fr.beta_hat[range.start + knots.start..range.start + knots.end].to_vec()
        })
        .collect()
}

fn penalty_limits() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    let (mut knot_bad, mut lasso_bad) = (0, 0);
    for _ in 0..10 {
        let n = rng.random_range(30..=60);
        let d = rng.random_range(3..=10);
        let ds = random_dataset(&mut rng, n, d);
        let base = ModelSpec::new(vec![0], vec![]).with_knots(3, 4);
        let g = fit(&ds, &base.clone().with_penalty(HUGE_PENALTY, 0.0)).unwrap();
        if knot_coefficients(&g).iter().any(|&b| b != 0.0) {
            knot_bad += 1;
        }
        let l = fit(&ds, &base.with_penalty(0.0, HUGE_PENALTY)).unwrap();
        if l.vartheta_hat.iter().any(|&v| v != 0.0) {
            lasso_bad += 1;
        }
    }
    Verdict::new(
        knot_bad + lasso_bad == 0,
        format!("10 datasets; gamma=1e8 left knot terms in {knot_bad}, lambda=1e8 left features in {lasso_bad}"),
    )
}

fn property_suite() -> Verdict {
    let mut failures: Vec<&str> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 9);

    // continuity of the fitted curve at every knot
    let ds = random_dataset(&mut rng, 60, 3);
    let fr = fit(&ds, &ModelSpec::new(vec![0], vec![]).with_knots(3, 5)).unwrap();
    let jump = fr.layout.basis.components[0]
        .knots()
        .iter()
        .map(|&k| (fr.phi(0, k + 1e-12).unwrap() - fr.phi(0, k - 1e-12).unwrap()).abs())
        .fold(0.0, f64::max);
    if jump > CONTINUITY_TOL {
        failures.push("continuity");
    }

    // c is invariant under strictly increasing score transforms
    for _ in 0..50 {
        let n = rng.random_range(2..=40);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let s2: Vec<f64> = s.iter().map(|v| 3.0 * v.exp() + 1.0).collect();
        if c_statistic(&t, &e, &s).unwrap() != c_statistic(&t, &e, &s2).unwrap() {
            failures.push("c transform invariance");
            break;
        }
    }

    // the Gehan loss ignores a common shift of the residuals
    for _ in 0..50 {
        let n = rng.random_range(2..=30);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let shift = rng.random_range(-5.0..5.0);
        let shifted: Vec<f64> = r.iter().map(|v| v + shift).collect();
        let (a, b) = (gehan_loss_naive(&r, &e), gehan_loss_naive(&shifted, &e));
        if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
            failures.push("loss translation invariance");
            break;
        }
    }

    // generators and folds depend only on their seeds
    for spec in [
        ScenarioSpec::estimation(PhiKind::QuadraticX2).with_seed(11),
        ScenarioSpec::selection(0.5, 1.0).with_seed(12),
        ScenarioSpec::highdim(100, 0.5).with_seed(13),
    ] {
        let a = generate::<f64>(&spec).unwrap();
        let b = generate::<f64>(&spec).unwrap();
        if a.train != b.train || a.test.as_ref().map(|t| &t.data) != b.test.as_ref().map(|t| &t.data) {
            failures.push("generator determinism");
            break;
        }
    }
    let events: Vec<bool> = (0..100).map(|i| i % 3 != 0).collect();
    if assign_folds(&events, 5, 77).unwrap() != assign_folds(&events, 5, 77).unwrap() {
        failures.push("fold determinism");
    }

    Verdict::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!("continuity (max jump {jump:.1e}), c transform invariance, loss translation invariance, generator and fold determinism")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}
