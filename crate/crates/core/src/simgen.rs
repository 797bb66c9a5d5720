//! Seeded generators for the three simulation designs (estimation, selection,
//! high-dimensional prediction) and a Monte Carlo harness over them.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{c_statistic, mspe, selection_rates, sse, MetricsReport};
use crate::model::{fit, FitResult, ModelSpec};
use crate::scalar::Scalar;
use crate::solver::SolverConfig;
use crate::tuning::{log_spaced, parallel_map, tune_and_fit, Criterion, TuningGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// One normal `Z`, `X = 0.25Z + Un(−5, 5)`.
    Estimation,
    /// Eight AR(1) features, `X = 0.5(Z₁ + Z₂ + Z₃) + Un(−1, 1)`.
    Selection,
    /// `d ≥ 76` AR(1) features, `X = 0.5(Z₁₀ + Z₃₅ + Z₆₀) + Un(−1, 1)`.
    Highdim,
}

impl FromStr for Design {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimation" => Ok(Self::Estimation),
            "selection" => Ok(Self::Selection),
            "highdim" => Ok(Self::Highdim),
            _ => Err(Error::Config(format!(
                "unknown design '{s}' (expected estimation, selection or highdim)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    /// `2x`
    Linear2x,
    /// `x²`
    QuadraticX2,
    /// `2x²`
    Quadratic2x2,
    /// `(0.2x + 0.5x² + 0.15x³)·1(x ≥ 0) + 0.05x·1(x < 0)`
    CubicHinge,
}

impl PhiKind {
    /// All kinds vanish at zero, matching the fitted curves' anchoring.
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Self::Linear2x => 2.0 * x,
            Self::QuadraticX2 => x * x,
            Self::Quadratic2x2 => 2.0 * x * x,
            Self::CubicHinge if x >= 0.0 => 0.2 * x + 0.5 * x * x + 0.15 * x * x * x,
            Self::CubicHinge => 0.05 * x,
        }
    }
}

impl FromStr for PhiKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_2x" => Ok(Self::Linear2x),
            "quadratic_x2" => Ok(Self::QuadraticX2),
            "quadratic_2x2" => Ok(Self::Quadratic2x2),
            "cubic_hinge" => Ok(Self::CubicHinge),
            _ => Err(Error::Config(format!("unknown phi kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub design: Design,
    pub n: usize,
    pub d: usize,
    /// AR(1) correlation of the features.
    pub rho: f64,
    /// Size of every nonzero feature coefficient.
    pub delta: f64,
    pub phi_kind: PhiKind,
    /// Width of the uniform censoring offset; `None` takes the design default.
    pub censor_width: Option<f64>,
    /// Test sample size; `None` takes the design default.
    pub test_size: Option<usize>,
    pub seed: u64,
}

impl ScenarioSpec {
    /// `n = 100`, `ϑ = 1`, censoring offset `Un(0, 1)`, no test sample.
    pub fn estimation(phi_kind: PhiKind) -> Self {
        Self {
            design: Design::Estimation,
            n: 100,
            d: 1,
            rho: 0.0,
            delta: 1.0,
            phi_kind,
            censor_width: None,
            test_size: None,
            seed: 0,
        }
    }

    /// `n = 125`, `d = 8`, censoring offset `Un(0, 6)`, test sample of `10n`.
    pub fn selection(rho: f64, delta: f64) -> Self {
        Self {
            design: Design::Selection,
            n: 125,
            d: 8,
            rho,
            delta,
            phi_kind: PhiKind::CubicHinge,
            censor_width: None,
            test_size: None,
            seed: 0,
        }
    }

    /// `n = 100`, censoring calibrated to about 40%, test sample of `10n`.
    pub fn highdim(d: usize, rho: f64) -> Self {
        Self {
            design: Design::Highdim,
            n: 100,
            d,
            rho,
            delta: 1.0,
            phi_kind: PhiKind::CubicHinge,
            censor_width: None,
            test_size: None,
            seed: 0,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if !self.delta.is_finite() {
            return bad("delta must be finite".into());
        }
        if let Some(w) = self.censor_width {
            if !(w.is_finite() && w > 0.0) {
                return bad(format!("censor width must be positive, got {w}"));
            }
        }
        match self.design {
            Design::Estimation => {
                if self.d != 1 || self.rho != 0.0 {
                    return bad("the estimation design has d = 1 and rho = 0".into());
                }
                if self.phi_kind == PhiKind::CubicHinge {
                    return bad("the estimation design uses a linear or quadratic phi".into());
                }
            }
            Design::Selection | Design::Highdim => {
                if self.phi_kind != PhiKind::CubicHinge {
                    return bad("the selection and highdim designs use the cubic hinge phi".into());
                }
                if self.design == Design::Selection && self.d != 8 {
                    return bad(format!("the selection design has d = 8, got {}", self.d));
                }
                if self.design == Design::Highdim && self.d < 76 {
                    return bad(format!("the highdim design needs d >= 76, got {}", self.d));
                }
            }
        }
        Ok(())
    }

    pub fn vartheta(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.d];
        let support: &[usize] = match self.design {
            Design::Estimation => &[0],
            Design::Selection => &[0, 1, 5],
            Design::Highdim => &[0, 25, 50, 75],
        };
        for &j in support {
            v[j] = self.delta;
        }
        v
    }

    pub fn resolved_censor_width(&self) -> f64 {
        self.censor_width.unwrap_or_else(|| match self.design {
            Design::Estimation => 1.0,
            Design::Selection => 6.0,
            Design::Highdim => highdim_censor_width(),
        })
    }

    pub fn resolved_test_size(&self) -> usize {
        self.test_size.unwrap_or(match self.design {
            Design::Estimation => 0,
            Design::Selection | Design::Highdim => 10 * self.n,
        })
    }
}

const PILOT_SIZE: usize = 100_000;
const PILOT_SEED: u64 = 0x0c3a_5e1f;
const HIGHDIM_CENSORING: f64 = 0.40;

/// Censoring offset width giving about 40% censoring, calibrated once.
pub fn highdim_censor_width() -> f64 {
    static WIDTH: OnceLock<f64> = OnceLock::new();
    *WIDTH.get_or_init(|| calibrate_censor_width(HIGHDIM_CENSORING, PILOT_SIZE, PILOT_SEED))
}

/// Width `w` at which `P(ε > w·V) = target` on a pilot sample with
/// `ε ~ N(0, 1)`, `V ~ Un(0, 1)`. A subject is censored when `ε` exceeds
/// its offset, whatever its covariates, so the pilot needs neither.
pub fn calibrate_censor_width(target: f64, pilot: usize, seed: u64) -> f64 {
    assert!(target > 0.0 && target < 0.5, "censoring target must lie in (0, 0.5)");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(f64, f64)> = (0..pilot)
        .map(|_| (rng.sample(StandardNormal), rng.random::<f64>()))
        .collect();
    let frac = |w: f64| draws.iter().filter(|(e, v)| *e > w * v).count() as f64 / pilot as f64;
    let (mut lo, mut hi) = (0.0, 1.0);
    while frac(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if frac(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub vartheta: Vec<f64>,
    pub phi_kind: PhiKind,
}

impl Truth {
    pub fn phi(&self, x: f64) -> f64 {
        self.phi_kind.eval(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSample<T> {
    /// Censored observations, for the c statistic.
    pub data: Dataset<T>,
    /// Log-times before censoring.
    pub log_times_uncensored: Vec<T>,
    /// `φ(Xⱼ)` per subject.
    pub phi: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData<T> {
    pub train: Dataset<T>,
    pub test: Option<TestSample<T>>,
    pub truth: Truth,
    pub censor_width: f64,
}

struct Draw {
    log_times: Vec<f64>,
    uncensored: Vec<f64>,
    events: Vec<bool>,
    x: Vec<f64>,
    z: Vec<f64>,
}

fn draw(spec: &ScenarioSpec, truth: &Truth, width: f64, n: usize, rng: &mut ChaCha8Rng) -> Draw {
    let d = spec.d;
    let tail = (1.0 - spec.rho * spec.rho).sqrt();
    let mut out = Draw {
        log_times: Vec::with_capacity(n),
        uncensored: Vec::with_capacity(n),
        events: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        z: Vec::with_capacity(n * d),
    };
    let mut z = vec![0.0; d];
    for _ in 0..n {
        for k in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            z[k] = if k == 0 { e } else { spec.rho * z[k - 1] + tail * e };
        }
        let x = match spec.design {
            Design::Estimation => 0.25 * z[0] + rng.random_range(-5.0..5.0),
            Design::Selection => 0.5 * (z[0] + z[1] + z[2]) + rng.random_range(-1.0..1.0),
            Design::Highdim => 0.5 * (z[9] + z[34] + z[59]) + rng.random_range(-1.0..1.0),
        };
        let eps: f64 = rng.sample(StandardNormal);
        let offset = width * rng.random::<f64>();
        let systematic = truth.phi(x) + z.iter().zip(&truth.vartheta).map(|(a, b)| a * b).sum::<f64>();
        let t = systematic + eps;
        let c = systematic + offset;
        out.log_times.push(t.min(c));
        out.uncensored.push(t);
        out.events.push(t <= c);
        out.x.push(x);
        out.z.extend_from_slice(&z);
    }
    out
}

fn to_dataset<T: Scalar>(dr: &Draw, d: usize) -> Result<Dataset<T>> {
    let conv = |v: &[f64]| v.iter().map(|&a| T::c(a)).collect::<Vec<T>>();
    Dataset::from_columns(&conv(&dr.log_times), &dr.events, &conv(&dr.x), 1, &conv(&dr.z), d)?
        .with_names(
            Some(vec!["x".into()]),
            Some((1..=d).map(|j| format!("z{j}")).collect()),
        )
}

/// Draws the training sample and then the test sample from one stream
/// seeded by `spec.seed`.
pub fn generate<T: Scalar>(spec: &ScenarioSpec) -> Result<GeneratedData<T>> {
    spec.validate()?;
    let truth = Truth {
        vartheta: spec.vartheta(),
        phi_kind: spec.phi_kind,
    };
    let width = spec.resolved_censor_width();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = draw(spec, &truth, width, spec.n, &mut rng);
    let m = spec.resolved_test_size();
    let test = if m > 0 {
        let dr = draw(spec, &truth, width, m, &mut rng);
        Some(TestSample {
            data: to_dataset(&dr, spec.d)?,
            log_times_uncensored: dr.uncensored.iter().map(|&v| T::c(v)).collect(),
            phi: dr.x.iter().map(|&x| T::c(truth.phi(x))).collect(),
        })
    } else {
        None
    };
    Ok(GeneratedData {
        train: to_dataset(&train, spec.d)?,
        test,
        truth,
        censor_width: width,
    })
}

/// Seed of replicate `r`, by the splitmix64 finalizer over a golden-ratio
/// stride.
pub fn replicate_seed(master: u64, r: u64) -> u64 {
    let mut z = master.wrapping_add((r + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Estimators compared by the harness. `X` is clinical column 0 and the
/// features are never standardized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    /// Spline in `X`, unpenalized `ϑ`, tuned γ.
    PartlyLinear { knots: usize },
    /// `X` and `Z` linear, no penalty.
    Linear,
    /// Spline in `X`, lasso on `ϑ`, tuned (γ, λ).
    LassoPartlyLinear { knots: usize },
    /// `X` and `Z` linear, lasso on `ϑ`, tuned λ.
    LassoLinear,
    /// Spline in `X`, true zeros fixed at zero, the rest unpenalized, tuned γ.
    Oracle { knots: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct HarnessModel<T> {
    pub name: String,
    pub comparator: Comparator,
    pub grid: TuningGrid<T>,
    pub criterion: Criterion,
    pub solver: SolverConfig,
    pub degree: usize,
}

impl<T: Scalar> HarnessModel<T> {
    pub fn new(name: impl Into<String>, comparator: Comparator, grid: TuningGrid<T>) -> Self {
        Self {
            name: name.into(),
            comparator,
            grid,
            criterion: Criterion::Gcv,
            solver: SolverConfig::default(),
            degree: crate::splines::DEFAULT_DEGREE,
        }
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_criterion(mut self, criterion: Criterion) -> Self {
        self.criterion = criterion;
        self
    }

    fn spec(&self, truth: &Truth) -> ModelSpec<T> {
        let spline = |knots| ModelSpec::new(vec![0], vec![]).with_knots(self.degree, knots);
        let mut spec = match self.comparator {
            Comparator::PartlyLinear { knots }
            | Comparator::LassoPartlyLinear { knots }
            | Comparator::Oracle { knots } => spline(knots),
            Comparator::Linear | Comparator::LassoLinear => ModelSpec::new(vec![], vec![0]),
        };
        if let Comparator::Oracle { .. } = self.comparator {
            spec.penalty.lambda_weights = Some(
                truth
                    .vartheta
                    .iter()
                    .map(|&v| if v == 0.0 { T::infinity() } else { T::zero() })
                    .collect(),
            );
        }
        spec.with_solver(self.solver.clone()).with_standardize(false)
    }

    /// Fits on `train`; the second value is the chosen `(γ, λ)` when tuned.
    pub fn fit(&self, train: &Dataset<T>, truth: &Truth) -> Result<(FitResult<T>, Option<(T, T)>)> {
        let spec = self.spec(truth);
        let mut grid = self.grid.clone();
        match self.comparator {
            Comparator::Linear => return Ok((fit(train, &spec)?, None)),
            Comparator::PartlyLinear { .. } => grid.lambda_values = vec![T::zero()],
            _ => {}
        }
        let (report, fr) = tune_and_fit(train, &spec, &grid, self.criterion)?;
        Ok((fr, Some(report.chosen)))
    }
}

/// Outcome of one model on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub censoring: f64,
    pub metrics: MetricsReport,
    pub vartheta_hat: Vec<f64>,
    pub chosen: Option<(f64, f64)>,
    pub converged: bool,
    /// Set when the fit failed; the replicate is then excluded from the means.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub se: Option<f64>,
    pub count: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let count = v.len();
        if count == 0 {
            return Self::default();
        }
        let mean = v.iter().sum::<f64>() / count as f64;
        let se = (count > 1).then(|| {
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            (var / count as f64).sqrt()
        });
        Self {
            mean: Some(mean),
            se,
            count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub ok: usize,
    pub failed: usize,
    pub nonconverged: usize,
    /// Mean of `ϑ̂₁ − ϑ₁`.
    pub bias: Summary,
    /// Standard deviation of `ϑ̂₁` across replicates.
    pub sd: Option<f64>,
    /// Mean of `(ϑ̂₁ − ϑ₁)²`.
    pub mse: Summary,
    pub sse: Summary,
    pub p_c: Summary,
    pub p_i: Summary,
    pub mspe1: Summary,
    pub mspe2: Summary,
    pub c: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub scenario: ScenarioSpec,
    pub replicates: usize,
    pub censor_width: f64,
    /// Mean censoring proportion of the training samples.
    pub censoring: f64,
    /// Outcomes per model, in replicate order.
    pub outcomes: Vec<Vec<ReplicateOutcome>>,
    pub summaries: Vec<ModelSummary>,
}

const SUMMARY_COLUMNS: [&str; 9] = ["bias", "sd", "mse", "sse", "p_c", "p_i", "mspe1", "mspe2", "c"];

impl MonteCarloResult {
    pub fn summary(&self, name: &str) -> Option<&ModelSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    /// One row per model; metric columns are multiplied by 1000, as the
    /// `_x1000` header suffix says.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["model".to_string(), "ok".into(), "failed".into(), "nonconverged".into()];
        for c in SUMMARY_COLUMNS {
            header.push(format!("{c}_x1000"));
            if c != "sd" {
                header.push(format!("{c}_se_x1000"));
            }
        }
        out.write_record(&header)?;
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{:.3}", 1000.0 * x));
        for s in &self.summaries {
            let mut row = vec![
                s.name.clone(),
                s.ok.to_string(),
                s.failed.to_string(),
                s.nonconverged.to_string(),
            ];
            row.extend([cell(s.bias.mean), cell(s.bias.se), cell(s.sd)]);
            for m in [&s.mse, &s.sse, &s.p_c, &s.p_i, &s.mspe1, &s.mspe2, &s.c] {
                row.extend([cell(m.mean), cell(m.se)]);
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Every replicate outcome, one row per (model, replicate).
    pub fn write_replicates_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "model", "replicate", "seed", "censoring", "gamma", "lambda", "converged", "error",
            "c_statistic", "comparable_pairs", "mspe1", "mspe2", "sse", "p_c", "p_i", "vartheta_hat",
        ])?;
        for (s, outcomes) in self.summaries.iter().zip(&self.outcomes) {
            for o in outcomes {
                let mut row = vec![
                    s.name.clone(),
                    o.replicate.to_string(),
                    o.seed.to_string(),
                    o.censoring.to_string(),
                    o.chosen.map_or_else(|| "NA".into(), |c| c.0.to_string()),
                    o.chosen.map_or_else(|| "NA".into(), |c| c.1.to_string()),
                    o.converged.to_string(),
                    o.error.clone().unwrap_or_default(),
                ];
                row.extend(o.metrics.csv_row());
                row.push(
                    o.vartheta_hat
                        .iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(" "),
                );
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

impl fmt::Display for MonteCarloResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:?} design, n = {}, d = {}, {} replicates, censoring {:.1}%",
            self.scenario.design,
            self.scenario.n,
            self.scenario.d,
            self.replicates,
            100.0 * self.censoring
        )?;
        let show = |s: &Summary| s.mean.map_or_else(|| "-".to_string(), |m| format!("{m:.4}"));
        writeln!(
            f,
            "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "model", "bias", "mse", "sse", "P_C", "P_I", "MSPE1", "MSPE2", "c"
        )?;
        for s in &self.summaries {
            writeln!(
                f,
                "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
                s.name,
                show(&s.bias),
                show(&s.mse),
                show(&s.sse),
                show(&s.p_c),
                show(&s.p_i),
                show(&s.mspe1),
                show(&s.mspe2),
                show(&s.c)
            )?;
        }
        Ok(())
    }
}

fn evaluate<T: Scalar>(
    model: &HarnessModel<T>,
    data: &GeneratedData<T>,
) -> Result<(MetricsReport, Vec<f64>, Option<(f64, f64)>, bool)> {
    let (fr, chosen) = model.fit(&data.train, &data.truth)?;
    let vh: Vec<f64> = fr.feature_coefficients().iter().map(|v| v.to_f64_lossy()).collect();
    let truth = &data.truth.vartheta;
    let (p_c, p_i) = selection_rates(&vh, truth)?;
    let mut report = MetricsReport {
        sse: Some(sse(&vh, truth)?),
        p_c,
        p_i,
        ..Default::default()
    };
    if let Some(test) = &data.test {
        let ds = &test.data;
        let mut phi_hat = Vec::with_capacity(ds.n());
        let mut z = Vec::with_capacity(ds.n() * ds.d());
        for o in ds.observations() {
            phi_hat.push(fr.clinical_part(&o.clinical)?.to_f64_lossy());
            z.extend(o.features.iter().map(|v| v.to_f64_lossy()));
        }
        let phi: Vec<f64> = test.phi.iter().map(|v| v.to_f64_lossy()).collect();
        let (m1, m2) = mspe(&phi_hat, &phi, &z, &vh, truth)?;
        report.mspe1 = Some(m1);
        report.mspe2 = Some(m2);
        let scores = fr.predict_dataset(ds)?;
        report = report.with_concordance(c_statistic(&ds.log_times(), &ds.events(), &scores)?);
    }
    let chosen = chosen.map(|(g, l)| (g.to_f64_lossy(), l.to_f64_lossy()));
    Ok((report, vh, chosen, fr.converged))
}

fn summarize(name: &str, outcomes: &[ReplicateOutcome], truth: &[f64]) -> ModelSummary {
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
    let first = |o: &&ReplicateOutcome| o.vartheta_hat[0] - truth[0];
    let pick = |f: fn(&MetricsReport) -> Option<f64>| Summary::of(ok.iter().filter_map(|o| f(&o.metrics)));
    let est = Summary::of(ok.iter().map(|o| o.vartheta_hat[0]));
    ModelSummary {
        name: name.to_string(),
        ok: ok.len(),
        failed: outcomes.len() - ok.len(),
        nonconverged: ok.iter().filter(|o| !o.converged).count(),
        bias: Summary::of(ok.iter().map(first)),
        sd: est.se.map(|se| se * (est.count as f64).sqrt()),
        mse: Summary::of(ok.iter().map(|o| first(o).powi(2))),
        sse: pick(|m| m.sse),
        p_c: pick(|m| m.p_c),
        p_i: pick(|m| m.p_i),
        mspe1: pick(|m| m.mspe1),
        mspe2: pick(|m| m.mspe2),
        c: pick(|m| m.c_statistic),
    }
}

/// Generates `replicates` data sets from sub-seeds of `scenario.seed`, fits
/// every model on each, and aggregates the metrics. Failed fits are kept
/// in the outcomes with their error and left out of the means.
pub fn run_monte_carlo<T: Scalar>(
    scenario: &ScenarioSpec,
    models: &[HarnessModel<T>],
    replicates: usize,
    threads: usize,
) -> Result<MonteCarloResult> {
    if replicates == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    scenario.validate()?;
    let width = scenario.resolved_censor_width();
    let reps: Vec<usize> = (0..replicates).collect();
    let per_rep = parallel_map(&reps, threads, |&r| -> Result<(f64, Vec<ReplicateOutcome>)> {
        let seed = replicate_seed(scenario.seed, r as u64);
        let mut sc = scenario.clone();
        sc.seed = seed;
        sc.censor_width = Some(width);
        let data = generate::<T>(&sc)?;
        let n = data.train.n() as f64;
        let censoring = (n - data.train.n_events() as f64) / n;
        let outcomes = models
            .iter()
            .map(|m| {
                let base = ReplicateOutcome {
                    replicate: r,
                    seed,
                    censoring,
                    metrics: MetricsReport::default(),
                    vartheta_hat: vec![],
                    chosen: None,
                    converged: false,
                    error: None,
                };
                match evaluate(m, &data) {
                    Ok((metrics, vartheta_hat, chosen, converged)) => ReplicateOutcome {
                        metrics,
                        vartheta_hat,
                        chosen,
                        converged,
                        ..base
                    },
                    Err(e) => {
                        log::warn!("replicate {r}, model {}: {e}", m.name);
                        ReplicateOutcome {
                            error: Some(e.to_string()),
                            ..base
                        }
                    }
                }
            })
            .collect();
        Ok((censoring, outcomes))
    });
    let per_rep: Vec<(f64, Vec<ReplicateOutcome>)> = per_rep.into_iter().collect::<Result<_>>()?;
    let censoring = per_rep.iter().map(|p| p.0).sum::<f64>() / replicates as f64;
    let mut outcomes: Vec<Vec<ReplicateOutcome>> = vec![Vec::with_capacity(replicates); models.len()];
    for (_, row) in per_rep {
        for (k, o) in row.into_iter().enumerate() {
            outcomes[k].push(o);
        }
    }
    let truth = scenario.vartheta();
    let summaries = models
        .iter()
        .zip(&outcomes)
        .map(|(m, o)| summarize(&m.name, o, &truth))
        .collect();
    Ok(MonteCarloResult {
        scenario: scenario.clone(),
        replicates,
        censor_width: width,
        censoring,
        outcomes,
        summaries,
    })
}

/// Iteration cap of the smoothed solver in the highdim harness; the
/// prediction metrics settle long before the gradient tolerance is met.
pub const HIGHDIM_MAX_ITERATIONS: usize = 2000;

/// Tuning grid of each design's harness: ten log-spaced values on
/// [1e-3, 1e1] per axis, with γ thinned to four values for highdim.
pub fn harness_grid<T: Scalar>(design: Design) -> TuningGrid<T> {
    let lambdas = log_spaced(T::c(1e-3), T::c(1e1), 10);
    let gammas = match design {
        Design::Highdim => log_spaced(T::c(1e-3), T::c(1e1), 4),
        _ => lambdas.clone(),
    };
    TuningGrid::new(gammas, lambdas)
}

/// The comparators of each design as used by the harness: cubic splines,
/// GCV over `grid`, except for highdim where fits interpolate the training
/// ranks at small λ, GCV collapses to zero, and 5-fold CV with the
/// smoothed solver is used instead.
pub fn default_models<T: Scalar>(design: Design, grid: &TuningGrid<T>) -> Vec<HarnessModel<T>> {
    match design {
        Design::Estimation => vec![
            HarnessModel::new("PL-AFT(r=2)", Comparator::PartlyLinear { knots: 2 }, grid.clone()),
            HarnessModel::new("PL-AFT(r=4)", Comparator::PartlyLinear { knots: 4 }, grid.clone()),
            HarnessModel::new("AFT", Comparator::Linear, grid.clone()),
        ],
        Design::Selection => vec![
            HarnessModel::new("Lasso-PL", Comparator::LassoPartlyLinear { knots: 6 }, grid.clone()),
            HarnessModel::new("Lasso-L", Comparator::LassoLinear, grid.clone()),
            HarnessModel::new("AFT", Comparator::Linear, grid.clone()),
            HarnessModel::new("Oracle", Comparator::Oracle { knots: 6 }, grid.clone()),
        ],
        Design::Highdim => {
            let solver = SolverConfig {
                max_iterations: HIGHDIM_MAX_ITERATIONS,
                ..SolverConfig::smoothed()
            };
            [
                ("Lasso-PL", Comparator::LassoPartlyLinear { knots: 6 }),
                ("Lasso-L", Comparator::LassoLinear),
            ]
            .into_iter()
            .map(|(name, c)| {
                HarnessModel::new(name, c, grid.clone())
                    .with_solver(solver.clone())
                    .with_criterion(Criterion::Cv)
            })
            .collect()
        }
    }
}
