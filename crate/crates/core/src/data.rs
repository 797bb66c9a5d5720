//! Censored survival data: observations, datasets, CSV ingestion and
//! feature standardization.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One subject: log follow-up time, event indicator, clinical covariates
/// and linear features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CensoredObservation<T> {
    pub log_time: T,
    /// `true` when the event was observed, `false` when censored.
    pub event: bool,
    pub clinical: Vec<T>,
    pub features: Vec<T>,
}

/// An immutable collection of observations sharing the clinical and
/// feature dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Dataset<T> {
    observations: Vec<CensoredObservation<T>>,
    q: usize,
    d: usize,
    clinical_names: Option<Vec<String>>,
    feature_names: Option<Vec<String>>,
}

impl<T: Scalar> Dataset<T> {
    /// Validates and wraps the observations. Requires at least two events.
    pub fn new(observations: Vec<CensoredObservation<T>>) -> Result<Self> {
        let (q, d) = match observations.first() {
            Some(o) => (o.clinical.len(), o.features.len()),
            None => return Err(Error::DegenerateData("dataset has no observations".into())),
        };
        for (i, o) in observations.iter().enumerate() {
            if !o.log_time.is_finite() {
                return Err(Error::Parse {
                    row: i + 1,
                    message: "log time is not finite".into(),
                });
            }
            if o.clinical.len() != q {
                return Err(Error::Dimension {
                    what: "clinical covariates",
                    expected: q,
                    found: o.clinical.len(),
                });
            }
            if o.features.len() != d {
                return Err(Error::Dimension {
                    what: "features",
                    expected: d,
                    found: o.features.len(),
                });
            }
            if o.clinical.iter().chain(&o.features).any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: i + 1,
                    message: "covariate value is not finite".into(),
                });
            }
        }
        let events = observations.iter().filter(|o| o.event).count();
        if events < 2 {
            return Err(Error::DegenerateData(format!(
                "need at least 2 observed events, found {events}"
            )));
        }
        Ok(Self {
            observations,
            q,
            d,
            clinical_names: None,
            feature_names: None,
        })
    }

    /// Builds a dataset from parallel columns. `clinical` and `features` are
    /// row-major with `q` and `d` entries per subject.
    pub fn from_columns(
        log_times: &[T],
        events: &[bool],
        clinical: &[T],
        q: usize,
        features: &[T],
        d: usize,
    ) -> Result<Self> {
        let n = log_times.len();
        check_len("events", n, events.len())?;
        check_len("clinical matrix", n * q, clinical.len())?;
        check_len("feature matrix", n * d, features.len())?;
        let observations = (0..n)
            .map(|i| CensoredObservation {
                log_time: log_times[i],
                event: events[i],
                clinical: clinical[i * q..(i + 1) * q].to_vec(),
                features: features[i * d..(i + 1) * d].to_vec(),
            })
            .collect();
        Self::new(observations)
    }

    pub fn with_names(
        mut self,
        clinical_names: Option<Vec<String>>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if let Some(names) = &clinical_names {
            check_len("clinical names", self.q, names.len())?;
        }
        if let Some(names) = &feature_names {
            check_len("feature names", self.d, names.len())?;
        }
        self.clinical_names = clinical_names;
        self.feature_names = feature_names;
        Ok(self)
    }

    pub fn observations(&self) -> &[CensoredObservation<T>] {
        &self.observations
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_events(&self) -> usize {
        self.observations.iter().filter(|o| o.event).count()
    }

    pub fn log_times(&self) -> Vec<T> {
        self.observations.iter().map(|o| o.log_time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.observations.iter().map(|o| o.event).collect()
    }

    pub fn clinical_column(&self, j: usize) -> Vec<T> {
        self.observations.iter().map(|o| o.clinical[j]).collect()
    }

    pub fn feature_column(&self, j: usize) -> Vec<T> {
        self.observations.iter().map(|o| o.features[j]).collect()
    }

    pub fn clinical_names(&self) -> Option<&[String]> {
        self.clinical_names.as_deref()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn clinical_name(&self, j: usize) -> String {
        self.clinical_names
            .as_ref()
            .map(|v| v[j].clone())
            .unwrap_or_else(|| format!("x{}", j + 1))
    }

    pub fn feature_name(&self, j: usize) -> String {
        self.feature_names
            .as_ref()
            .map(|v| v[j].clone())
            .unwrap_or_else(|| format!("z{}", j + 1))
    }

    /// Rows selected by index, in the given order. Fails when the subset has
    /// fewer than two events.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let observations = indices
            .iter()
            .map(|&i| self.observations[i].clone())
            .collect();
        let mut ds = Self::new(observations)?;
        ds.clinical_names = self.clinical_names.clone();
        ds.feature_names = self.feature_names.clone();
        Ok(ds)
    }

    /// Returns a copy with the feature block replaced.
    pub(crate) fn with_features(&self, features: Vec<Vec<T>>) -> Self {
        let mut out = self.clone();
        for (o, f) in out.observations.iter_mut().zip(features) {
            o.features = f;
        }
        out
    }

    /// Returns a copy with every log time shifted by `c`.
    pub fn shift_times(&self, c: T) -> Self {
        let mut out = self.clone();
        for o in &mut out.observations {
            o.log_time = o.log_time + c;
        }
        out
    }

    /// SHA-256 over the bit patterns of every value; used to recognise the
    /// training data of a fitted model.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.q as u64).to_le_bytes());
        h.update((self.d as u64).to_le_bytes());
        for o in &self.observations {
            h.update(o.log_time.to_f64_lossy().to_bits().to_le_bytes());
            h.update([o.event as u8]);
            for v in o.clinical.iter().chain(&o.features) {
                h.update(v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

/// Per-feature location and scale used to standardize `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StandardizationRecord<T> {
    pub means: Vec<T>,
    pub sds: Vec<T>,
}

impl<T: Scalar> StandardizationRecord<T> {
    /// The no-op transform for `d` features.
    pub fn identity(d: usize) -> Self {
        Self {
            means: vec![T::zero(); d],
            sds: vec![T::one(); d],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn apply(&self, z: &[T]) -> Result<Vec<T>> {
        check_len("feature vector", self.len(), z.len())?;
        Ok(z.iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect())
    }

    pub fn invert(&self, z_std: &[T]) -> Result<Vec<T>> {
        check_len("feature vector", self.len(), z_std.len())?;
        Ok(z_std
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(&v, (&m, &s))| v * s + m)
            .collect())
    }
}

/// Sample mean and standard deviation (n − 1 denominator).
pub fn mean_sd<T: Scalar>(values: &[T]) -> (T, T) {
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let ss = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<T>();
    let sd = if values.len() > 1 {
        (ss / (n - T::one())).sqrt()
    } else {
        T::zero()
    };
    (mean, sd)
}

/// Column means and sample sds of the features.
pub fn standardization_record<T: Scalar>(ds: &Dataset<T>) -> Result<StandardizationRecord<T>> {
    let mut means = Vec::with_capacity(ds.d());
    let mut sds = Vec::with_capacity(ds.d());
    for j in 0..ds.d() {
        let (m, s) = mean_sd(&ds.feature_column(j));
        if !(s > T::zero()) || !s.is_finite() {
            return Err(Error::DegenerateColumn {
                column: ds.feature_name(j),
            });
        }
        means.push(m);
        sds.push(s);
    }
    Ok(StandardizationRecord { means, sds })
}

/// Centers every feature column to mean 0 and scales it to sample sd 1.
pub fn standardize_features<T: Scalar>(
    ds: &Dataset<T>,
) -> Result<(Dataset<T>, StandardizationRecord<T>)> {
    let record = standardization_record(ds)?;
    let features = ds
        .observations()
        .iter()
        .map(|o| record.apply(&o.features))
        .collect::<Result<Vec<_>>>()?;
    Ok((ds.with_features(features), record))
}

/// Columns selected by header name, 1-based position, or an inclusive range
/// `a..b` of either.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSelector(pub Vec<String>);

impl ColumnSelector {
    /// Parses a comma separated list such as `age,g1..g1536` or `3..10`.
    pub fn parse(spec: &str) -> Self {
        Self(
            spec.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        )
    }

    pub fn resolve(&self, header: &[String]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for item in &self.0 {
            if let Some((a, b)) = item.split_once("..") {
                let lo = resolve_column(a.trim(), header)?;
                let hi = resolve_column(b.trim(), header)?;
                if hi < lo {
                    return Err(Error::Schema(format!("empty column range '{item}'")));
                }
                out.extend(lo..=hi);
            } else {
                out.push(resolve_column(item, header)?);
            }
        }
        Ok(out)
    }
}

fn resolve_column(token: &str, header: &[String]) -> Result<usize> {
    if let Some(i) = header.iter().position(|h| h == token) {
        return Ok(i);
    }
    match token.parse::<usize>() {
        Ok(k) if k >= 1 && k <= header.len() => Ok(k - 1),
        _ => Err(Error::Schema(format!("unknown column '{token}'"))),
    }
}

/// Which CSV columns play which role.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time_col: String,
    pub status_col: String,
    pub clinical_cols: ColumnSelector,
    pub feature_cols: ColumnSelector,
    /// The time column already holds log times.
    pub time_is_log: bool,
    /// Rows sharing an id are averaged into one subject before use.
    pub id_col: Option<String>,
}

/// Reads a headed CSV file into a dataset.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset<T>> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<T: Scalar, R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let time_idx = resolve_column(&schema.time_col, &header)?;
    let status_idx = resolve_column(&schema.status_col, &header)?;
    let clinical_idx = schema.clinical_cols.resolve(&header)?;
    let feature_idx = schema.feature_cols.resolve(&header)?;
    let id_idx = match &schema.id_col {
        Some(c) => Some(resolve_column(c, &header)?),
        None => None,
    };

    let mut observations = Vec::new();
    let mut ids = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                message: format!(
                    "ragged row: expected {} fields, found {}",
                    header.len(),
                    record.len()
                ),
            });
        }
        let field = |i: usize| -> Result<T> {
            let raw = &record[i];
            let v: T = raw.parse().map_err(|_| Error::Parse {
                row,
                message: format!("column '{}': '{}' is not numeric", header[i], raw),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("column '{}': value is not finite", header[i]),
                });
            }
            Ok(v)
        };
        let time = field(time_idx)?;
        let log_time = if schema.time_is_log {
            time
        } else {
            if !(time > T::zero()) {
                return Err(Error::Parse {
                    row,
                    message: format!("time must be positive, found {}", &record[time_idx]),
                });
            }
            time.ln()
        };
        let event = match &record[status_idx] {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    row,
                    message: format!("status must be 0 or 1, found '{other}'"),
                })
            }
        };
        let clinical = clinical_idx.iter().map(|&i| field(i)).collect::<Result<Vec<T>>>()?;
        let features = feature_idx.iter().map(|&i| field(i)).collect::<Result<Vec<T>>>()?;
        if let Some(i) = id_idx {
            ids.push(record[i].to_string());
        }
        observations.push(CensoredObservation {
            log_time,
            event,
            clinical,
            features,
        });
    }
    if id_idx.is_some() {
        observations = average_replicates(observations, &ids)?;
    }
    Dataset::new(observations)?.with_names(
        Some(clinical_idx.iter().map(|&i| header[i].clone()).collect()),
        Some(feature_idx.iter().map(|&i| header[i].clone()).collect()),
    )
}

/// Averages covariates over rows sharing a subject id. Outcome fields must
/// agree across a subject's rows. Output order follows first appearance.
pub fn average_replicates<T: Scalar>(
    observations: Vec<CensoredObservation<T>>,
    ids: &[String],
) -> Result<Vec<CensoredObservation<T>>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let g = groups.entry(id.as_str()).or_default();
        if g.is_empty() {
            order.push(id);
        }
        g.push(i);
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let rows = &groups[id];
        let first = &observations[rows[0]];
        for &r in &rows[1..] {
            let o = &observations[r];
            if o.log_time != first.log_time || o.event != first.event {
                return Err(Error::Parse {
                    row: r + 1,
                    message: format!("replicate rows of subject '{id}' disagree on time or status"),
                });
            }
        }
        let k = T::from_usize_lossy(rows.len());
        let mean_of = |get: &dyn Fn(&CensoredObservation<T>) -> &Vec<T>| -> Vec<T> {
            let len = get(first).len();
            (0..len)
                .map(|j| rows.iter().map(|&r| get(&observations[r])[j]).sum::<T>() / k)
                .collect()
        };
        out.push(CensoredObservation {
            log_time: first.log_time,
            event: first.event,
            clinical: mean_of(&|o| &o.clinical),
            features: mean_of(&|o| &o.features),
        });
    }
    Ok(out)
}

/// Writes the dataset with a `log_time` column so that loading it back with
/// `time_is_log = true` reproduces every value bit for bit.
pub fn write_csv<T: Scalar, W: Write>(ds: &Dataset<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["log_time".to_string(), "status".to_string()];
    header.extend((0..ds.q()).map(|j| ds.clinical_name(j)));
    header.extend((0..ds.d()).map(|j| ds.feature_name(j)));
    w.write_record(&header)?;
    for o in ds.observations() {
        let mut rec = vec![o.log_time.to_string(), if o.event { "1" } else { "0" }.to_string()];
        rec.extend(o.clinical.iter().map(|v| v.to_string()));
        rec.extend(o.features.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Schema matching the layout produced by [`write_csv`].
pub fn written_schema<T: Scalar>(ds: &Dataset<T>) -> CsvSchema {
    let clinical = if ds.q() > 0 {
        ColumnSelector(vec![format!("3..{}", 2 + ds.q())])
    } else {
        ColumnSelector::default()
    };
    let features = if ds.d() > 0 {
        ColumnSelector(vec![format!("{}..{}", 3 + ds.q(), 2 + ds.q() + ds.d())])
    } else {
        ColumnSelector::default()
    };
    CsvSchema {
        time_col: "log_time".into(),
        status_col: "status".into(),
        clinical_cols: clinical,
        feature_cols: features,
        time_is_log: true,
        id_col: None,
    }
}
