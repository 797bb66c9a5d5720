use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::gehan::gehan_loss;

/// `q` clinical covariates uniform on (−2, 2), `d` standard normal features,
/// log-time `f(x) + zᵀϑ + noise·ε`, censoring from an independent uniform.
fn simulate(
    rng: &mut ChaCha8Rng,
    n: usize,
    q: usize,
    vartheta: &[f64],
    f: impl Fn(&[f64]) -> f64,
    noise: f64,
    censor: bool,
) -> Dataset<f64> {
    let d = vartheta.len();
    let mut times = Vec::new();
    let mut events = Vec::new();
    let mut clin = Vec::new();
    let mut feat = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..q).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let eps: f64 = rng.sample(StandardNormal);
        let t = f(&x) + z.iter().zip(vartheta).map(|(a, b)| a * b).sum::<f64>() + noise * eps;
        let c = if censor { t + rng.random_range(-1.0..3.0) } else { f64::INFINITY };
        times.push(t.min(c));
        events.push(t <= c);
        clin.extend(x);
        feat.extend(z);
    }
    Dataset::from_columns(&times, &events, &clin, q, &feat, d).unwrap()
}

fn rmse(a: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = a.collect();
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn huge_lambda_zeroes_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ds = simulate(&mut rng, 40, 1, &[1.0, -1.0, 0.5], |x| x[0], 0.3, true);
    let spec = ModelSpec::new(vec![0], vec![]).with_knots(3, 2).with_penalty(0.0, 1e6);
    let fr = fit(&ds, &spec).unwrap();
    assert!(fr.vartheta_hat.iter().all(|&v| v == 0.0));
    assert!(fr.selected.is_empty());
    assert!(fr.beta_hat.iter().any(|&v| v != 0.0));
}

#[test]
fn huge_gamma_leaves_a_polynomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ds = simulate(&mut rng, 40, 1, &[1.0], |x| x[0] * x[0], 0.3, true);
    let spec = ModelSpec::new(vec![0], vec![]).with_knots(3, 3).with_penalty(1e6, 0.0);
    let fr = fit(&ds, &spec).unwrap();
    assert_eq!(&fr.beta_hat[3..], &[0.0, 0.0, 0.0]);
    assert!(fr.beta_hat[..3].iter().any(|&v| v != 0.0));
}

#[test]
fn noiseless_partly_linear_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = simulate(&mut rng, 40, 1, &[1.0], |x| 2.0 * x[0], 0.0, false);
    let spec = ModelSpec::new(vec![0], vec![])
        .with_knots(3, 2)
        .with_standardize(false);
    let fr = fit(&ds, &spec).unwrap();
    assert!((fr.vartheta_hat[0] - 1.0).abs() < 1e-3, "{:?}", fr.vartheta_hat);
    let xs = ds.clinical_column(0);
    let (lo, hi) = xs.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
    for k in 0..=20 {
        let x = lo + (hi - lo) * k as f64 / 20.0;
        let h = 1e-3;
        let slope = (fr.phi(0, x + h).unwrap() - fr.phi(0, x - h).unwrap()) / (2.0 * h);
        assert!((slope - 2.0).abs() < 1e-2, "slope {slope} at {x}");
    }
}

#[test]
fn predict_risk_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ds = simulate(&mut rng, 30, 2, &[0.5, -0.5], |x| x[0] + x[1], 0.5, true);
    let spec = ModelSpec::new(vec![0], vec![1]).with_knots(3, 2).with_standardize(false);
    let mut fr = fit(&ds, &spec).unwrap();
    // x = 0 for the nonlinear covariate, z = 0, linear clinical at 0
    assert_eq!(fr.predict_risk(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
    // recomputation oracle with random coefficients
    for v in fr.beta_hat.iter_mut().chain(fr.vartheta_hat.iter_mut()) {
        *v = rng.random_range(-1.0..1.0);
    }
    let comp = &fr.layout.basis.components[0];
    for _ in 0..20 {
        let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let z = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let phi = comp.eval_phi(&fr.beta_hat, x[0]).unwrap() - comp.eval_phi(&fr.beta_hat, 0.0).unwrap();
        let want = phi + fr.vartheta_hat[0] * x[1] + fr.vartheta_hat[1] * z[0] + fr.vartheta_hat[2] * z[1];
        assert!((fr.predict_risk(&x, &z).unwrap() - want).abs() < 1e-12);
    }
    for v in fr.beta_hat.iter_mut().chain(fr.vartheta_hat.iter_mut()) {
        *v = 0.0;
    }
    assert_eq!(fr.predict_risk(&[1.3, -2.0], &[4.0, 5.0]).unwrap(), 0.0);
    assert!(fr.predict_risk(&[1.0], &[0.0, 0.0]).is_err());
}

#[test]
fn standardized_predictions_use_the_record() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ds = simulate(&mut rng, 30, 1, &[2.0], |x| x[0], 0.5, true);
    let fr = fit(&ds, &ModelSpec::new(vec![0], vec![]).with_knots(3, 2)).unwrap();
    let rec = &fr.layout.standardization;
    let o = &ds.observations()[3];
    let zs = (o.features[0] - rec.means[0]) / rec.sds[0];
    let want = fr.phi(0, o.clinical[0]).unwrap() + fr.vartheta_hat[0] * zs;
    assert!((fr.predict_risk(&o.clinical, &o.features).unwrap() - want).abs() < 1e-12);
}

#[test]
fn additive_model_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ds = simulate(&mut rng, 50, 2, &[1.0], |x| x[0] + x[1] * x[1], 0.0, false);
    let spec = ModelSpec::new(vec![0, 1], vec![]).with_knots(3, 2).with_standardize(false);
    assert!(fit_additive(&ds, &ModelSpec::new(vec![0], vec![])).is_err());
    let fr = fit_additive(&ds, &spec).unwrap();
    for (j, truth) in [(0usize, (|x: f64| x) as fn(f64) -> f64), (1, |x: f64| x * x)] {
        let xs = ds.clinical_column(j);
        let err = rmse(xs.iter().map(|&x| fr.phi(j, x).unwrap() - truth(x)));
        assert!(err < 0.05, "component {j}: rmse {err}");
    }
    // zero out the second block: scores ignore the second covariate
    let mut zeroed = fr.clone();
    let r = zeroed.layout.basis.offsets()[1].clone();
    zeroed.beta_hat[r].iter_mut().for_each(|b| *b = 0.0);
    let a = zeroed.predict_risk(&[0.7, -1.5], &[0.2]).unwrap();
    let b = zeroed.predict_risk(&[0.7, 1.9], &[0.2]).unwrap();
    assert_eq!(a, b);

    let mut all = spec.clone().with_penalty(1e6, 0.0);
    all.penalty.penalize_all_beta = true;
    let fr = fit_additive(&ds, &all).unwrap();
    assert!(fr.beta_hat.iter().all(|&b| b == 0.0));
    assert!(fr.vartheta_hat[0] != 0.0);
}

#[test]
fn penalty_path_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vt = [1.0, 0.8, 0.0, 0.0, 0.5, 0.0];
    let ds = simulate(&mut rng, 50, 1, &vt, |x| x[0], 0.7, true);
    let base = ModelSpec::new(vec![0], vec![]).with_knots(3, 2).resolved(&ds).unwrap();
    let mut prev: Option<FitResult<f64>> = None;
    let mut counts = Vec::new();
    for k in 0..12 {
        let lambda = 1e-3 * 10f64.powf(k as f64 * 4.0 / 11.0);
        let fr = fit_from(&ds, &base.clone().with_penalty(0.0, lambda), prev.as_ref()).unwrap();
        counts.push(fr.selected.len());
        prev = Some(fr);
    }
    for w in counts.windows(2) {
        assert!(w[1] <= w[0] + 1, "{counts:?}");
    }
    assert_eq!(*counts.last().unwrap(), 0);
    assert!(counts[0] >= 3);
}

#[test]
fn feature_permutation_permutes_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ds = simulate(&mut rng, 40, 1, &[1.0, -0.5, 0.0, 0.3], |x| x[0], 0.5, true);
    let perm = [2usize, 0, 3, 1];
    let obs: Vec<_> = ds
        .observations()
        .iter()
        .map(|o| {
            let mut o = o.clone();
            o.features = perm.iter().map(|&j| o.features[j]).collect();
            o
        })
        .collect();
    let permuted = Dataset::new(obs).unwrap();
    let spec = ModelSpec::new(vec![0], vec![]).with_knots(3, 2).with_penalty(0.01, 0.02);
    let a = fit(&ds, &spec).unwrap();
    let b = fit(&permuted, &spec).unwrap();
    for (k, &j) in perm.iter().enumerate() {
        assert!((b.vartheta_hat[k] - a.vartheta_hat[j]).abs() < 1e-8);
    }
}

#[test]
fn reported_objective_is_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ds = simulate(&mut rng, 35, 1, &[1.0, 0.0, 0.4], |x| x[0].sin(), 0.5, true);
    let spec = ModelSpec::new(vec![0], vec![]).with_knots(3, 3).with_penalty(0.05, 0.03);
    let fr = fit(&ds, &spec).unwrap();
    let loss = gehan_loss(&ds, &fr.layout, &fr.beta_hat, &fr.vartheta_hat).unwrap();
    let knots: f64 = fr.beta_hat[3..].iter().map(|b| b.abs()).sum();
    let lin: f64 = fr.vartheta_hat.iter().map(|b| b.abs()).sum();
    let want = loss + 0.05 * knots + 0.03 * lin;
    assert!((fr.objective - want).abs() <= 1e-10 * want);
    assert!((fr.gehan_loss - loss).abs() <= 1e-12 * loss);
}

#[test]
fn time_shift_leaves_coefficients_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ds = simulate(&mut rng, 35, 1, &[1.0, 0.5], |x| x[0] * x[0], 0.5, true);
    let spec = ModelSpec::new(vec![0], vec![]).with_knots(3, 2).with_penalty(0.02, 0.01);
    let a = fit(&ds, &spec).unwrap();
    let b = fit(&ds.shift_times(3.75), &spec).unwrap();
    for (x, y) in a.theta().iter().zip(b.theta()) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn smoothed_fit_matches_exact_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ds = simulate(&mut rng, 40, 1, &[1.0, 0.0, -0.7], |x| x[0], 0.5, true);
    let spec = ModelSpec::new(vec![0], vec![]).with_knots(3, 2).with_penalty(0.01, 0.02);
    let ex = fit(&ds, &spec).unwrap();
    let sm = fit(&ds, &spec.clone().with_solver(SolverConfig::smoothed())).unwrap();
    assert_eq!(sm.method_used, SolverMethod::Smoothed);
    let rel = (sm.objective - ex.objective) / ex.objective;
    assert!((-1e-9..1e-4).contains(&rel), "{} vs {}", sm.objective, ex.objective);
}

#[test]
fn infinite_weights_fix_coefficients_and_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ds = simulate(&mut rng, 30, 1, &[1.0, 1.0, 0.0], |x| x[0], 0.5, true);
    let mut spec = ModelSpec::new(vec![0], vec![]).with_knots(3, 2);
    spec.penalty.lambda_weights = Some(vec![0.0, f64::INFINITY, 0.0]);
    let fr = fit(&ds, &spec).unwrap();
    assert_eq!(fr.vartheta_hat[1], 0.0);
    assert!(fr.vartheta_hat[0] != 0.0);
    let back = FitResult::<f64>::from_json(&fr.to_json().unwrap()).unwrap();
    assert_eq!(back, fr);
    for o in ds.observations() {
        assert_eq!(
            back.predict_risk(&o.clinical, &o.features).unwrap(),
            fr.predict_risk(&o.clinical, &o.features).unwrap()
        );
    }
}

#[test]
fn exact_path_rejects_wide_designs() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let vt = vec![0.0; 30];
    let ds = simulate(&mut rng, 5, 0, &vt, |_| 0.0, 1.0, false);
    let err = fit(&ds, &ModelSpec::new(vec![], vec![])).unwrap_err();
    assert!(matches!(err, Error::Capability(_)));
    let spec = ModelSpec::new(vec![], vec![])
        .with_penalty(0.0, 0.1)
        .with_solver(SolverConfig::smoothed());
    assert!(fit(&ds, &spec).is_ok());
}

#[test]
fn role_overlap_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let ds = simulate(&mut rng, 20, 2, &[1.0], |x| x[0], 0.5, true);
    assert!(fit(&ds, &ModelSpec::new(vec![0], vec![0])).is_err());
    assert!(fit(&ds, &ModelSpec::new(vec![2], vec![])).is_err());
}

#[test]
fn f32_fit_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let ds = simulate(&mut rng, 30, 1, &[1.0], |x| x[0], 0.3, true);
    let obs: Vec<_> = ds
        .observations()
        .iter()
        .map(|o| crate::data::CensoredObservation {
            log_time: o.log_time as f32,
            event: o.event,
            clinical: o.clinical.iter().map(|&v| v as f32).collect(),
            features: o.features.iter().map(|&v| v as f32).collect(),
        })
        .collect();
    let ds32 = Dataset::new(obs).unwrap();
    let spec = ModelSpec::<f32>::new(vec![0], vec![]).with_knots(3, 2);
    let a = fit(&ds32, &spec).unwrap();
    let b = fit(&ds, &ModelSpec::new(vec![0], vec![]).with_knots(3, 2)).unwrap();
    assert!((a.vartheta_hat[0] as f64 - b.vartheta_hat[0]).abs() < 1e-3);
}
