//! Prediction and selection metrics: censored c statistic, MSPE₁/MSPE₂,
//! SSE, and the selection rates P_C and P_I.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Concordance of risk scores with censored outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concordance {
    /// Twice the concordant count plus the tied-score count.
    pub half_units: u64,
    pub comparable: u64,
}

impl Concordance {
    /// `None` when no pair is comparable.
    pub fn c(&self) -> Option<f64> {
        (self.comparable > 0).then(|| self.half_units as f64 / (2 * self.comparable) as f64)
    }
}

/// Harrell-type c statistic for scores predicting log-survival (higher score,
/// longer survival).
///
/// A pair is comparable when the shorter observed time is an event; at equal
/// times, only when exactly one of the two is an event, which then counts as
/// the shorter. Score ties count one half.
pub fn c_statistic<T: Scalar>(times: &[T], events: &[bool], scores: &[T]) -> Result<Concordance> {
    let n = times.len();
    if events.len() != n || scores.len() != n {
        return Err(Error::Dimension {
            what: "c statistic inputs",
            expected: n,
            found: if events.len() != n { events.len() } else { scores.len() },
        });
    }
    if times.iter().chain(scores).any(|v| v.is_nan()) {
        return Err(Error::Config("c statistic inputs contain NaN".into()));
    }
    // dense ranks of scores, 1-based
    let mut by_score: Vec<usize> = (0..n).collect();
    by_score.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank = vec![0usize; n];
    let mut r = 0;
    for (k, &i) in by_score.iter().enumerate() {
        if k == 0 || scores[i] != scores[by_score[k - 1]] {
            r += 1;
        }
        rank[i] = r;
    }
    let mut tree = Fenwick::new(r);
    let mut inserted = 0u64;

    // walk time groups from the longest down
    let mut by_time: Vec<usize> = (0..n).collect();
    by_time.sort_by(|&a, &b| times[b].partial_cmp(&times[a]).unwrap());
    let mut out = Concordance {
        half_units: 0,
        comparable: 0,
    };
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && times[by_time[end]] == times[by_time[start]] {
            end += 1;
        }
        let group = &by_time[start..end];
        for &i in group.iter().filter(|&&i| !events[i]) {
            tree.add(rank[i]);
            inserted += 1;
        }
        for &i in group.iter().filter(|&&i| events[i]) {
            let le = tree.prefix(rank[i]);
            let lt = tree.prefix(rank[i] - 1);
            let greater = inserted - le;
            let ties = le - lt;
            out.comparable += inserted;
            out.half_units += 2 * greater + ties;
        }
        for &i in group.iter().filter(|&&i| events[i]) {
            tree.add(rank[i]);
            inserted += 1;
        }
        start = end;
    }
    Ok(out)
}

struct Fenwick {
    counts: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            counts: vec![0; n + 1],
        }
    }

    fn add(&mut self, mut i: usize) {
        while i < self.counts.len() {
            self.counts[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `≤ i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.counts[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// `MSPE₁ = mean[φ̂(Xⱼ) − φ(Xⱼ) + (ϑ̂ − ϑ)ᵀZⱼ]²` and
/// `MSPE₂ = mean[(ϑ̂ − ϑ)ᵀZⱼ]²` over a test sample. Both `φ̂` and `φ` must
/// share the anchoring `φ(0) = 0`. `z` is row-major, one row per subject.
pub fn mspe<T: Scalar>(
    phi_hat: &[T],
    phi_true: &[T],
    z: &[T],
    vartheta_hat: &[T],
    vartheta_true: &[T],
) -> Result<(f64, f64)> {
    let n = phi_hat.len();
    let d = vartheta_true.len();
    if phi_true.len() != n || vartheta_hat.len() != d || z.len() != n * d {
        return Err(Error::Dimension {
            what: "MSPE inputs",
            expected: n * d,
            found: z.len(),
        });
    }
    if n == 0 {
        return Err(Error::Config("MSPE needs a nonempty test sample".into()));
    }
    let diff: Vec<f64> = vartheta_hat
        .iter()
        .zip(vartheta_true)
        .map(|(a, b)| a.to_f64_lossy() - b.to_f64_lossy())
        .collect();
    let (mut s1, mut s2) = (0.0, 0.0);
    for j in 0..n {
        let lin: f64 = z[j * d..(j + 1) * d]
            .iter()
            .zip(&diff)
            .map(|(a, b)| a.to_f64_lossy() * b)
            .sum();
        let nl = phi_hat[j].to_f64_lossy() - phi_true[j].to_f64_lossy();
        s1 += (nl + lin) * (nl + lin);
        s2 += lin * lin;
    }
    Ok((s1 / n as f64, s2 / n as f64))
}

/// `(P_C, P_I)`: the share of true zeros estimated as zero, and the share of
/// true nonzeros estimated as zero. Each is `None` when its denominator is.
pub fn selection_rates<T: Scalar>(
    vartheta_hat: &[T],
    vartheta_true: &[T],
) -> Result<(Option<f64>, Option<f64>)> {
    if vartheta_hat.len() != vartheta_true.len() {
        return Err(Error::Dimension {
            what: "coefficient vectors",
            expected: vartheta_true.len(),
            found: vartheta_hat.len(),
        });
    }
    let (mut zeros, mut zero_hits, mut nonzeros, mut nonzero_misses) = (0usize, 0usize, 0usize, 0usize);
    for (&h, &t) in vartheta_hat.iter().zip(vartheta_true) {
        let est_zero = h == T::zero();
        if t == T::zero() {
            zeros += 1;
            zero_hits += est_zero as usize;
        } else {
            nonzeros += 1;
            nonzero_misses += est_zero as usize;
        }
    }
    let rate = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok((rate(zero_hits, zeros), rate(nonzero_misses, nonzeros)))
}

/// `(ϑ̂ − ϑ)ᵀ(ϑ̂ − ϑ)`.
pub fn sse<T: Scalar>(vartheta_hat: &[T], vartheta_true: &[T]) -> Result<f64> {
    if vartheta_hat.len() != vartheta_true.len() {
        return Err(Error::Dimension {
            what: "coefficient vectors",
            expected: vartheta_true.len(),
            found: vartheta_hat.len(),
        });
    }
    Ok(vartheta_hat
        .iter()
        .zip(vartheta_true)
        .map(|(a, b)| {
            let d = a.to_f64_lossy() - b.to_f64_lossy();
            d * d
        })
        .sum())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub c_statistic: Option<f64>,
    pub comparable_pairs: u64,
    pub mspe1: Option<f64>,
    pub mspe2: Option<f64>,
    pub sse: Option<f64>,
    pub p_c: Option<f64>,
    pub p_i: Option<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: [&'static str; 7] =
        ["c_statistic", "comparable_pairs", "mspe1", "mspe2", "sse", "p_c", "p_i"];

    pub fn with_concordance(mut self, c: Concordance) -> Self {
        self.c_statistic = c.c();
        self.comparable_pairs = c.comparable;
        self
    }

    pub fn csv_row(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        vec![
            f(self.c_statistic),
            self.comparable_pairs.to_string(),
            f(self.mspe1),
            f(self.mspe2),
            f(self.sse),
            f(self.p_c),
            f(self.p_i),
        ]
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"));
        writeln!(
            f,
            "c statistic: {} ({} comparable pairs)",
            show(self.c_statistic),
            self.comparable_pairs
        )?;
        for (name, v) in [
            ("MSPE1", self.mspe1),
            ("MSPE2", self.mspe2),
            ("SSE", self.sse),
            ("P_C", self.p_c),
            ("P_I", self.p_i),
        ] {
            if v.is_some() {
                writeln!(f, "{name}: {}", show(v))?;
            }
        }
        Ok(())
    }
}
