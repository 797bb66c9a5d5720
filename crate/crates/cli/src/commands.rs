use std::io::Write;
use std::path::Path;

use log::{info, warn};
use plaft::data::{ColumnSelector, Dataset};
use plaft::metrics::{c_statistic, Concordance, MetricsReport};
use plaft::model::{fit, FitResult, ModelSpec};
use plaft::simgen::{
    default_models, harness_grid, replicate_seed, run_monte_carlo, Design, PhiKind, ScenarioSpec, Summary,
};
use plaft::tuning::{tune_and_fit, Criterion, TuningGrid};
use plaft::Error;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::{
    parse_list, Cli, Command, DesignChoice, EvaluateArgs, FitArgs, PredictArgs, SimulateArgs, TuneArgs,
};
use crate::output::Run;

type Res<T = ()> = Result<T, Box<dyn std::error::Error>>;

const PHI_CURVE_POINTS: usize = 200;

pub fn run(cli: &Cli) -> Res {
    match &cli.command {
        Command::Fit(a) => cmd_fit(cli, a),
        Command::Tune(a) => cmd_tune(cli, a),
        Command::Predict(a) => cmd_predict(cli, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
    }
}

fn cmd_fit(cli: &Cli, a: &FitArgs) -> Res {
    let g = &cli.global;
    let ds = a.data.load()?;
    info!("loaded {} subjects, q = {}, d = {}", ds.n(), ds.q(), ds.d());
    let spec = a.model.spec(&ds)?;
    let mut run = Run::new(&g.out_dir)?;
    let fr = match a.tune {
        Some(c) => {
            let grid = a.grid.grid(g.seed, g.resolved_threads())?;
            let (report, fr) = tune_and_fit(&ds, &spec, &grid, c.into())?;
            report.write_csv(run.writer("tuning.csv")?)?;
            fr
        }
        None => fit(&ds, &spec)?,
    };
    if !fr.converged {
        warn!("solver stopped before convergence after {} iterations", fr.iterations);
    }
    fr.save(run.path("model.json"))?;
    write_selected(&fr, run.writer("selected_features.csv")?)?;
    write_phi_curve(&fr, &ds, run.writer("phi_curve.csv")?)?;
    record_fit(&mut run, &fr);
    println!(
        "gamma = {}, lambda = {}, Gehan loss = {:.6}, {} of {} linear terms selected",
        fr.gamma,
        fr.lambda,
        fr.gehan_loss,
        fr.selected.len(),
        fr.vartheta_hat.len()
    );
    run.finish(cli)
}

fn cmd_tune(cli: &Cli, a: &TuneArgs) -> Res {
    let g = &cli.global;
    let ds = a.data.load()?;
    let spec = a.model.spec(&ds)?;
    let grid = a.grid.grid(g.seed, g.resolved_threads())?;
    let report = match Criterion::from(a.criterion) {
        Criterion::Cv => plaft::tuning::cross_validate(&ds, &spec, &grid)?,
        Criterion::Gcv => plaft::tuning::tune_gcv(&ds, &spec, &grid)?,
    };
    let mut run = Run::new(&g.out_dir)?;
    report.write_csv(run.writer("tuning.csv")?)?;
    let best = report.chosen_record();
    run.record("gamma", report.chosen.0);
    run.record("lambda", report.chosen.1);
    run.record("criterion_value", best.value);
    run.record("df", best.df);
    println!(
        "chosen gamma = {}, lambda = {} ({} points evaluated)",
        report.chosen.0,
        report.chosen.1,
        report.records.len()
    );
    run.finish(cli)
}

fn cmd_predict(cli: &Cli, a: &PredictArgs) -> Res {
    let fr = FitResult::<f64>::load(&a.model)?;
    let selector = |flag: &Option<String>, stored: &Option<Vec<String>>, count: usize, what: &str| {
        match (flag, stored) {
            (Some(s), _) => Ok(ColumnSelector::parse(s)),
            (None, Some(names)) => Ok(ColumnSelector(names.clone())),
            (None, None) if count == 0 => Ok(ColumnSelector::default()),
            (None, None) => Err(Error::Schema(format!(
                "the model stores no {what} column names; pass --{what}-cols"
            ))),
        }
    };
    let clinical = selector(&a.clinical_cols, &fr.clinical_names, fr.q, "clinical")?;
    let features = selector(&a.feature_cols, &fr.feature_names, fr.d, "feature")?;
    let rows = read_covariates(&a.data, &clinical, &features, a.id_col.as_deref())?;
    let mut run = Run::new(&cli.global.out_dir)?;
    let mut w = csv::Writer::from_writer(run.writer("predictions.csv")?);
    w.write_record(["id", "risk"])?;
    for (k, (id, x, z)) in rows.iter().enumerate() {
        if x.len() != fr.q || z.len() != fr.d {
            return Err(Error::Schema(format!(
                "the model expects {} clinical and {} feature columns, the data has {} and {}",
                fr.q,
                fr.d,
                x.len(),
                z.len()
            ))
            .into());
        }
        let risk = fr.predict_risk(x, z)?;
        let id = id.clone().unwrap_or_else(|| (k + 1).to_string());
        w.write_record([id, risk.to_string()])?;
    }
    w.flush()?;
    run.record("subjects", rows.len());
    println!("scored {} subjects", rows.len());
    run.finish(cli)
}

type CovariateRow = (Option<String>, Vec<f64>, Vec<f64>);

/// Clinical and feature values of every row; outcome columns are ignored.
fn read_covariates(
    path: &Path,
    clinical: &ColumnSelector,
    features: &ColumnSelector,
    id_col: Option<&str>,
) -> plaft::Result<Vec<CovariateRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let xi = clinical.resolve(&header)?;
    let zi = features.resolve(&header)?;
    let id = id_col
        .map(|c| ColumnSelector(vec![c.to_string()]).resolve(&header).map(|v| v[0]))
        .transpose()?;
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |cols: &[usize]| -> plaft::Result<Vec<f64>> {
            cols.iter()
                .map(|&c| {
                    let cell = rec.get(c).unwrap_or("");
                    cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                        row: r + 1,
                        message: format!("column '{}' holds '{cell}', not a finite number", header[c]),
                    })
                })
                .collect()
        };
        rows.push((id.map(|c| rec.get(c).unwrap_or("").to_string()), parse(&xi)?, parse(&zi)?));
    }
    Ok(rows)
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Res {
    let ds = a.data.load()?;
    if a.repeats == 0 {
        let Some(path) = &a.model else {
            return Err("evaluate needs --model, or --repeats R for split validation".into());
        };
        return evaluate_saved(cli, &ds, &FitResult::load(path)?);
    }
    if !(a.split > 0.0 && a.split < 1.0) {
        return Err(format!("--split must lie in (0, 1), got {}", a.split).into());
    }
    let spec = match &a.model {
        Some(path) => {
            let fr = FitResult::<f64>::load(path)?;
            check_compatible(&fr, &ds)?;
            fr.spec.clone().with_penalty(fr.gamma, fr.lambda)
        }
        None => a.model_args.spec(&ds)?,
    };
    evaluate_splits(cli, a, &ds, &spec)
}

fn check_compatible(fr: &FitResult<f64>, ds: &Dataset<f64>) -> plaft::Result<()> {
    if fr.q != ds.q() || fr.d != ds.d() {
        return Err(Error::Schema(format!(
            "the model expects {} clinical and {} feature columns, the data has {} and {}",
            fr.q,
            fr.d,
            ds.q(),
            ds.d()
        )));
    }
    Ok(())
}

fn evaluate_saved(cli: &Cli, ds: &Dataset<f64>, fr: &FitResult<f64>) -> Res {
    check_compatible(fr, ds)?;
    let scores = fr.predict_dataset(ds)?;
    let c = c_statistic(&ds.log_times(), &ds.events(), &scores)?;
    let report = MetricsReport::default().with_concordance(c);
    let overfit = ds.fingerprint() == fr.training_fingerprint;
    if overfit {
        warn!("evaluating on the training data; the c statistic is optimistic");
    }
    let mut run = Run::new(&cli.global.out_dir)?;
    let mut w = csv::Writer::from_writer(run.writer("metrics.csv")?);
    let mut header: Vec<&str> = MetricsReport::CSV_HEADER.to_vec();
    header.push("training_data");
    w.write_record(&header)?;
    let mut row = report.csv_row();
    row.push(overfit.to_string());
    w.write_record(&row)?;
    w.flush()?;
    run.record("metrics", &report);
    run.record("overfitting_warning", overfit);
    print!("{report}");
    if overfit {
        println!("warning: evaluated on the training data");
    }
    run.finish(cli)
}

#[derive(Debug, Clone, Serialize)]
struct SplitOutcome {
    repeat: usize,
    seed: u64,
    n_train: usize,
    n_validation: usize,
    c: Option<f64>,
    comparable_pairs: u64,
    error: Option<String>,
}

/// Training and validation indices, both ascending. With `stratify`, events
/// and censored subjects are split separately.
fn split_indices(events: &[bool], frac: f64, stratify: bool, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = if stratify {
        [true, false]
            .iter()
            .map(|&s| (0..events.len()).filter(|&i| events[i] == s).collect())
            .collect()
    } else {
        vec![(0..events.len()).collect()]
    };
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for mut g in groups {
        g.shuffle(&mut rng);
        let k = (frac * g.len() as f64).round() as usize;
        train.extend_from_slice(&g[..k]);
        valid.extend_from_slice(&g[k..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    (train, valid)
}

fn one_split(
    ds: &Dataset<f64>,
    spec: &ModelSpec<f64>,
    a: &EvaluateArgs,
    grid: &Option<TuningGrid<f64>>,
    repeat: usize,
    seed: u64,
) -> SplitOutcome {
    let (train, valid) = split_indices(&ds.events(), a.split, a.stratify_status, seed);
    let mut out = SplitOutcome {
        repeat,
        seed,
        n_train: train.len(),
        n_validation: valid.len(),
        c: None,
        comparable_pairs: 0,
        error: None,
    };
    let result = (|| -> plaft::Result<Concordance> {
        let tr = ds.subset(&train)?;
        let fr = match (a.tune, grid) {
            (Some(c), Some(grid)) => tune_and_fit(&tr, spec, &grid.clone().with_seed(seed), c.into())?.1,
            _ => fit(&tr, spec)?,
        };
        // scored row by row: a validation split may hold too few events to
        // form a Dataset
        let obs: Vec<_> = valid.iter().map(|&i| &ds.observations()[i]).collect();
        let times: Vec<f64> = obs.iter().map(|o| o.log_time).collect();
        let events: Vec<bool> = obs.iter().map(|o| o.event).collect();
        let scores = obs
            .iter()
            .map(|o| fr.predict_risk(&o.clinical, &o.features))
            .collect::<plaft::Result<Vec<_>>>()?;
        c_statistic(&times, &events, &scores)
    })();
    match result {
        Ok(c) => {
            out.c = c.c();
            out.comparable_pairs = c.comparable;
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

fn evaluate_splits(cli: &Cli, a: &EvaluateArgs, ds: &Dataset<f64>, spec: &ModelSpec<f64>) -> Res {
    let g = &cli.global;
    let threads = g.resolved_threads().min(a.repeats).max(1);
    let grid = match a.tune {
        Some(_) => Some(a.grid.grid(g.seed, 1)?),
        None => None,
    };
    let mut outcomes: Vec<SplitOutcome> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let grid = &grid;
                s.spawn(move || {
                    (t..a.repeats)
                        .step_by(threads)
                        .map(|r| one_split(ds, spec, a, grid, r, replicate_seed(g.seed, r as u64)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("split worker panicked")).collect()
    });
    outcomes.sort_by_key(|o| o.repeat);

    let failed = outcomes.iter().filter(|o| o.error.is_some()).count();
    let undefined = outcomes.iter().filter(|o| o.error.is_none() && o.c.is_none()).count();
    let summary = Summary::of(outcomes.iter().filter_map(|o| o.c));
    if undefined > 0 {
        warn!("{undefined} of {} repeats had no comparable validation pairs and were excluded", a.repeats);
    }
    if failed > 0 {
        warn!("{failed} of {} repeats failed to fit", a.repeats);
    }

    let mut run = Run::new(&g.out_dir)?;
    let mut w = csv::Writer::from_writer(run.writer("evaluate_repeats.csv")?);
    w.write_record(["repeat", "seed", "n_train", "n_validation", "c_statistic", "comparable_pairs", "status"])?;
    for o in &outcomes {
        let status = match (&o.error, o.c) {
            (Some(e), _) => format!("failed: {e}"),
            (None, None) => "undefined".to_string(),
            (None, Some(_)) => "ok".to_string(),
        };
        w.write_record([
            o.repeat.to_string(),
            o.seed.to_string(),
            o.n_train.to_string(),
            o.n_validation.to_string(),
            o.c.map_or_else(|| "NA".into(), |c| c.to_string()),
            o.comparable_pairs.to_string(),
            status,
        ])?;
    }
    w.flush()?;
    let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    let mut w = csv::Writer::from_writer(run.writer("evaluate_summary.csv")?);
    w.write_record(["repeats", "defined", "undefined", "failed", "mean_c", "se_c"])?;
    w.write_record([
        a.repeats.to_string(),
        summary.count.to_string(),
        undefined.to_string(),
        failed.to_string(),
        na(summary.mean),
        na(summary.se),
    ])?;
    w.flush()?;
    run.record("mean_c", summary.mean);
    run.record("se_c", summary.se);
    run.record("defined", summary.count);
    run.record("undefined", undefined);
    run.record("failed", failed);
    println!(
        "mean c = {} (SE {}) over {} repeats; {undefined} undefined, {failed} failed",
        na(summary.mean),
        na(summary.se),
        summary.count
    );
    run.finish(cli)
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Res {
    let g = &cli.global;
    let (design, mut scenario) = match a.design {
        DesignChoice::Estimation => (Design::Estimation, ScenarioSpec::estimation(a.phi.parse::<PhiKind>()?)),
        DesignChoice::Selection => (Design::Selection, ScenarioSpec::selection(a.rho, a.delta)),
        DesignChoice::Highdim => (Design::Highdim, ScenarioSpec::highdim(a.d, a.rho)),
    };
    scenario = scenario.with_seed(g.seed);
    if let Some(n) = a.n {
        scenario = scenario.with_n(n);
    }
    scenario.validate()?;
    let mut grid = harness_grid::<f64>(design).with_seed(g.seed);
    if let Some(s) = &a.gamma_grid {
        grid.gamma_values = parse_list(s)?;
    }
    if let Some(s) = &a.lambda_grid {
        grid.lambda_values = parse_list(s)?;
    }
    let mut models = default_models(design, &grid);
    if let Some(names) = &a.models {
        let wanted: Vec<&str> = names.split(',').map(str::trim).collect();
        if let Some(bad) = wanted.iter().find(|w| !models.iter().any(|m| m.name == **w)) {
            let known: Vec<&str> = models.iter().map(|m| m.name.as_str()).collect();
            return Err(format!("unknown model '{bad}' for this design (known: {})", known.join(", ")).into());
        }
        models.retain(|m| wanted.contains(&m.name.as_str()));
    }
    info!("{} replicates of {:?} with {} models", a.replicates, design, models.len());
    let result = run_monte_carlo(&scenario, &models, a.replicates, g.resolved_threads())?;

    let mut run = Run::new(&g.out_dir)?;
    result.write_csv(run.writer("simulate_summary.csv")?)?;
    result.write_replicates_csv(run.writer("simulate_replicates.csv")?)?;
    run.record("scenario", &result.scenario);
    run.record("censor_width", result.censor_width);
    run.record("censoring", result.censoring);
    run.record("summaries", &result.summaries);
    let mut stdout = std::io::stdout().lock();
    write!(stdout, "{result}")?;
    run.finish(cli)
}

fn linear_term_names(fr: &FitResult<f64>) -> Vec<(&'static str, String)> {
    let clinical = fr.layout.linear_clinical.iter().map(|&j| {
        let name = fr.clinical_names.as_ref().map_or_else(|| format!("x{}", j + 1), |n| n[j].clone());
        ("clinical", name)
    });
    let features = (0..fr.d).map(|j| {
        let name = fr.feature_names.as_ref().map_or_else(|| format!("z{}", j + 1), |n| n[j].clone());
        ("feature", name)
    });
    clinical.chain(features).collect()
}

/// Coefficients are on the scale the model was fitted on (standardized
/// features unless `--no-standardize`).
fn write_selected(fr: &FitResult<f64>, w: impl Write) -> Res {
    let names = linear_term_names(fr);
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["kind", "name", "position", "coefficient"])?;
    for &k in &fr.selected {
        let (kind, name) = &names[k];
        w.write_record([kind.to_string(), name.clone(), (k + 1).to_string(), fr.vartheta_hat[k].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `φ̂ⱼ(x) − φ̂ⱼ(0)` at evenly spaced points over the observed range of each
/// nonlinear covariate.
fn write_phi_curve(fr: &FitResult<f64>, ds: &Dataset<f64>, w: impl Write) -> Res {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["covariate", "x", "phi"])?;
    for (j, &col) in fr.layout.nonlinear.iter().enumerate() {
        let values = ds.clinical_column(col);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let name = ds.clinical_name(col);
        for k in 0..PHI_CURVE_POINTS {
            let x = lo + (hi - lo) * k as f64 / (PHI_CURVE_POINTS - 1) as f64;
            w.write_record([name.clone(), x.to_string(), fr.phi(j, x)?.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn record_fit(run: &mut Run, fr: &FitResult<f64>) {
    run.record("gamma", fr.gamma);
    run.record("lambda", fr.lambda);
    run.record("gehan_loss", fr.gehan_loss);
    run.record("objective", fr.objective);
    run.record("converged", fr.converged);
    run.record("iterations", fr.iterations);
    let coefficients: serde_json::Map<String, serde_json::Value> = linear_term_names(fr)
        .into_iter()
        .zip(&fr.vartheta_hat)
        .map(|((_, name), &v)| (name, serde_json::json!(v)))
        .collect();
    run.record("coefficients", coefficients);
    run.record("beta_hat", &fr.beta_hat);
}
