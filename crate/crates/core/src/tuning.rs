//! Choice of (γ, λ) by K-fold cross-validation of the Gehan loss or by
//! generalized cross-validation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gehan::gehan_loss;
use crate::model::{fit, fit_from, FitResult, ModelSpec};
use crate::scalar::Scalar;

/// Relative slack under which two criterion values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TuningGrid<T> {
    pub gamma_values: Vec<T>,
    pub lambda_values: Vec<T>,
    /// K, for cross-validation.
    pub folds: usize,
    /// Seed of the fold assignment.
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
}

impl<T: Scalar> Default for TuningGrid<T> {
    /// Ten log-spaced values on [1e-3, 1e1] for each parameter, K = 5.
    fn default() -> Self {
        let g = log_spaced(T::c(1e-3), T::c(1e1), 10);
        Self::new(g.clone(), g)
    }
}

impl<T: Scalar> TuningGrid<T> {
    pub fn new(gamma_values: Vec<T>, lambda_values: Vec<T>) -> Self {
        Self {
            gamma_values,
            lambda_values,
            folds: 5,
            seed: 0,
            threads: 0,
        }
    }

    pub fn with_folds(mut self, folds: usize) -> Self {
        self.folds = folds;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    /// Both axes must be nonempty, finite, nonnegative and nondecreasing.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", &self.gamma_values), ("lambda", &self.lambda_values)] {
            if v.is_empty() {
                return Err(Error::Config(format!("{name} grid is empty")));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= T::zero())) {
                return Err(Error::Config(format!(
                    "{name} grid values must be finite and nonnegative"
                )));
            }
            if v.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Config(format!("{name} grid must be sorted")));
            }
        }
        Ok(())
    }
}

/// `count` values from `lo` to `hi` evenly spaced on the log scale.
pub fn log_spaced<T: Scalar>(lo: T, hi: T, count: usize) -> Vec<T> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let steps = T::from_usize_lossy(count - 1);
    (0..count)
        .map(|i| (a + (b - a) * T::from_usize_lossy(i) / steps).exp())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Cv,
    Gcv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GridRecord<T> {
    pub gamma: T,
    pub lambda: T,
    /// `None` when the criterion is undefined at this point.
    pub value: Option<f64>,
    /// Nonzero coefficients (the mean over training folds for CV).
    pub df: f64,
    pub valid: bool,
    pub converged: bool,
    /// One fit per fold for CV, the full-data fit for GCV.
    #[serde(skip)]
    pub fits: Vec<FitResult<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TuningReport<T> {
    pub criterion: Criterion,
    /// Records in grid order, γ outer and λ inner.
    pub records: Vec<GridRecord<T>>,
    pub chosen: (T, T),
    pub chosen_index: usize,
    /// Fold of each observation (CV only).
    pub folds: Option<Vec<usize>>,
}

impl<T: Scalar> TuningReport<T> {
    pub fn chosen_record(&self) -> &GridRecord<T> {
        &self.records[self.chosen_index]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["gamma", "lambda", "criterion", "value", "df", "valid", "converged", "chosen"])?;
        let crit = match self.criterion {
            Criterion::Cv => "cv",
            Criterion::Gcv => "gcv",
        };
        for (i, r) in self.records.iter().enumerate() {
            out.write_record([
                r.gamma.to_string(),
                r.lambda.to_string(),
                crit.to_string(),
                r.value.map_or_else(|| "NA".into(), |v| v.to_string()),
                r.df.to_string(),
                r.valid.to_string(),
                r.converged.to_string(),
                (i == self.chosen_index).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// `Lₙ / (1 − df/n)²` at the fitted coefficients, with `Lₙ` evaluated on `ds`.
pub fn gcv_score<T: Scalar>(ds: &Dataset<T>, fr: &FitResult<T>) -> Result<T> {
    let n = ds.n();
    let df = fr.df();
    if df >= n {
        return Err(Error::Saturation { df, n });
    }
    let loss = gehan_loss(ds, &fr.layout, &fr.beta_hat, &fr.vartheta_hat)?;
    gcv_value(loss, df, n)
}

/// `loss / (1 − df/n)²`.
pub fn gcv_value<T: Scalar>(loss: T, df: usize, n: usize) -> Result<T> {
    if df >= n {
        return Err(Error::Saturation { df, n });
    }
    let shrink = T::one() - T::from_usize_lossy(df) / T::from_usize_lossy(n);
    Ok(loss / (shrink * shrink))
}

/// Fold of each observation. Events are shuffled and dealt round-robin,
/// then the censored continue the deal, so every fold gets its share of
/// both. Depends only on `(seed, events, k)`.
pub fn assign_folds(events: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs K >= 2, got {k}")));
    }
    if k > events.len() {
        return Err(Error::Config(format!(
            "K = {k} exceeds the sample size {}",
            events.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ev: Vec<usize> = (0..events.len()).filter(|&i| events[i]).collect();
    let mut cens: Vec<usize> = (0..events.len()).filter(|&i| !events[i]).collect();
    ev.shuffle(&mut rng);
    cens.shuffle(&mut rng);
    let mut folds = vec![0; events.len()];
    for (slot, &i) in ev.iter().chain(&cens).enumerate() {
        folds[i] = slot % k;
    }
    let mut counts = vec![0usize; k];
    for &i in &ev {
        counts[folds[i]] += 1;
    }
    if let Some((fold, &events)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(Error::FoldDegeneracy { fold, events });
    }
    Ok(folds)
}

/// The grid actually searched: an axis the model ignores collapses to its
/// smallest value.
fn effective_axes<T: Scalar>(ds: &Dataset<T>, spec: &ModelSpec<T>, grid: &TuningGrid<T>) -> (Vec<T>, Vec<T>) {
    let gamma_used =
        spec.has_knots() || (spec.penalty.penalize_all_beta && !spec.nonlinear.is_empty());
    let lambda_used = spec.penalty.lambda_weights.is_none()
        && (ds.d() > 0 || (spec.penalty.penalize_clinical && !spec.linear_clinical.is_empty()));
    let gammas = if gamma_used {
        grid.gamma_values.clone()
    } else {
        grid.gamma_values[..1].to_vec()
    };
    let lambdas = if lambda_used {
        grid.lambda_values.clone()
    } else {
        grid.lambda_values[..1].to_vec()
    };
    (gammas, lambdas)
}

/// Fits along the λ path for one γ, warm-starting each from the last.
fn lambda_path<T: Scalar>(
    ds: &Dataset<T>,
    spec: &ModelSpec<T>,
    gamma: T,
    lambdas: &[T],
) -> Result<Vec<FitResult<T>>> {
    let mut out: Vec<FitResult<T>> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let s = spec.clone().with_penalty(gamma, lambda);
        let fr = fit_from(ds, &s, out.last())?;
        out.push(fr);
    }
    Ok(out)
}

pub(crate) fn parallel_map<I: Sync, O: Send>(items: &[I], threads: usize, f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let threads = if threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        threads
    };
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(|| c.iter().map(&f).collect::<Vec<O>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("tuning worker panicked"))
            .collect()
    })
}

/// Index of the minimum over valid records; near-ties go to the smallest λ,
/// then the smallest γ.
fn choose<T: Scalar>(records: &[GridRecord<T>]) -> Result<usize> {
    let best = records
        .iter()
        .filter(|r| r.valid)
        .filter_map(|r| r.value)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::State("no grid point has a defined criterion".into()));
    }
    let cut = best + TIE_TOLERANCE * best.abs();
    let mut idx: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].valid && records[i].value.is_some_and(|v| v <= cut))
        .collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&records[a], &records[b]);
        ra.lambda
            .partial_cmp(&rb.lambda)
            .unwrap()
            .then(ra.gamma.partial_cmp(&rb.gamma).unwrap())
            .then(a.cmp(&b))
    });
    Ok(idx[0])
}

/// K-fold cross-validation: for each grid point, the mean over folds of
/// the held-out Gehan loss, with pairs formed within the held-out fold.
pub fn cross_validate<T: Scalar>(
    ds: &Dataset<T>,
    spec: &ModelSpec<T>,
    grid: &TuningGrid<T>,
) -> Result<TuningReport<T>> {
    grid.validate()?;
    spec.validate(ds.q(), ds.d())?;
    let spec = spec.resolved(ds)?;
    let folds = assign_folds(&ds.events(), grid.folds, grid.seed)?;
    let (gammas, lambdas) = effective_axes(ds, &spec, grid);

    let splits: Vec<(Dataset<T>, Dataset<T>)> = (0..grid.folds)
        .map(|k| {
            let train: Vec<usize> = (0..ds.n()).filter(|&i| folds[i] != k).collect();
            let test: Vec<usize> = (0..ds.n()).filter(|&i| folds[i] == k).collect();
            Ok((ds.subset(&train)?, ds.subset(&test)?))
        })
        .collect::<Result<_>>()?;

    // per fold: fits[γ][λ] and held-out losses
    let per_fold = parallel_map(&splits, grid.threads, |(train, test)| -> Result<Vec<Vec<(FitResult<T>, T)>>> {
        gammas
            .iter()
            .map(|&g| {
                lambda_path(train, &spec, g, &lambdas)?
                    .into_iter()
                    .map(|fr| {
                        let l = gehan_loss(test, &fr.layout, &fr.beta_hat, &fr.vartheta_hat)?;
                        Ok((fr, l))
                    })
                    .collect()
            })
            .collect()
    });
    let mut per_fold: Vec<Vec<Vec<(FitResult<T>, T)>>> = per_fold.into_iter().collect::<Result<_>>()?;

    let k = grid.folds as f64;
    let mut records = Vec::with_capacity(gammas.len() * lambdas.len());
    for (gi, &gamma) in gammas.iter().enumerate() {
        for (li, &lambda) in lambdas.iter().enumerate() {
            let mut fits = Vec::with_capacity(grid.folds);
            let mut total = 0.0;
            for fold in per_fold.iter_mut() {
                let slot = &mut fold[gi][li];
                total += slot.1.to_f64_lossy();
                fits.push(slot.0.clone());
            }
            let df = fits.iter().map(|f| f.df() as f64).sum::<f64>() / k;
            records.push(GridRecord {
                gamma,
                lambda,
                value: Some(total / k),
                df,
                valid: true,
                converged: fits.iter().all(|f| f.converged),
                fits,
            });
        }
    }
    let chosen_index = choose(&records)?;
    Ok(TuningReport {
        criterion: Criterion::Cv,
        chosen: (records[chosen_index].gamma, records[chosen_index].lambda),
        chosen_index,
        records,
        folds: Some(folds),
    })
}

/// Generalized cross-validation over full-data fits, warm-started along λ.
/// Saturated points (df ≥ n) are kept in the report, flagged invalid.
pub fn tune_gcv<T: Scalar>(
    ds: &Dataset<T>,
    spec: &ModelSpec<T>,
    grid: &TuningGrid<T>,
) -> Result<TuningReport<T>> {
    grid.validate()?;
    spec.validate(ds.q(), ds.d())?;
    let spec = spec.resolved(ds)?;
    let (gammas, lambdas) = effective_axes(ds, &spec, grid);
    let paths = parallel_map(&gammas, grid.threads, |&g| lambda_path(ds, &spec, g, &lambdas));
    let mut records = Vec::with_capacity(gammas.len() * lambdas.len());
    for path in paths {
        for fr in path? {
            let (value, valid) = match gcv_score(ds, &fr) {
                Ok(v) => (Some(v.to_f64_lossy()), true),
                Err(Error::Saturation { .. }) => (None, false),
                Err(e) => return Err(e),
            };
            records.push(GridRecord {
                gamma: fr.gamma,
                lambda: fr.lambda,
                value,
                df: fr.df() as f64,
                valid,
                converged: fr.converged,
                fits: vec![fr],
            });
        }
    }
    let chosen_index = choose(&records)?;
    Ok(TuningReport {
        criterion: Criterion::Gcv,
        chosen: (records[chosen_index].gamma, records[chosen_index].lambda),
        chosen_index,
        records,
        folds: None,
    })
}

/// Tunes by `criterion`, then refits on all of `ds` at the chosen point from
/// a cold start, so the result equals a plain fit at those values.
pub fn tune_and_fit<T: Scalar>(
    ds: &Dataset<T>,
    spec: &ModelSpec<T>,
    grid: &TuningGrid<T>,
    criterion: Criterion,
) -> Result<(TuningReport<T>, FitResult<T>)> {
    let report = match criterion {
        Criterion::Cv => cross_validate(ds, spec, grid)?,
        Criterion::Gcv => tune_gcv(ds, spec, grid)?,
    };
    let (g, l) = report.chosen;
    let fr = fit(ds, &spec.clone().with_penalty(g, l))?;
    Ok((report, fr))
}
