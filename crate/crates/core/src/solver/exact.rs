//! Exact L1 regression by descent along the edges of the objective's
//! polyhedral graph (Barrodale–Roberts style). Each step releases one basic
//! row and moves to the weighted median of the breakpoints along the edge.

use std::collections::HashMap;

use super::{SolveOutcome, SolverMethod};
use crate::error::{Error, Result};
use crate::gehan::PseudoProblem;
use crate::scalar::Scalar;

const REFACTOR_EVERY: usize = 32;

pub fn solve_exact_l1<T: Scalar>(pp: &PseudoProblem<T>) -> Result<SolveOutcome<T>> {
    solve_exact_l1_from(pp, None)
}

/// As [`solve_exact_l1`], starting the descent at `theta0`.
pub fn solve_exact_l1_from<T: Scalar>(
    pp: &PseudoProblem<T>,
    theta0: Option<&[T]>,
) -> Result<SolveOutcome<T>> {
    let p = pp.ncols();
    if p + 1 > pp.rows() {
        return Err(Error::Capability(format!(
            "exact L1 solver needs more rows than columns ({} columns, {} rows); use the smoothed method",
            p,
            pp.rows()
        )));
    }
    let start: Vec<f64> = match theta0 {
        Some(t) if t.len() != p => {
            return Err(Error::Dimension {
                what: "initial coefficient vector",
                expected: p,
                found: t.len(),
            })
        }
        Some(t) => t.iter().map(|x| x.to_f64_lossy()).collect(),
        None => vec![0.0; p],
    };
    let rows = Rows::from_problem(pp);
    let mut walk = Walk::new(&rows, start);
    let converged = walk.run();
    let perturbed: Vec<T> = walk.theta.iter().map(|&x| T::c(x)).collect();
    let polished: Vec<T> = walk.polish().iter().map(|&x| T::c(x)).collect();
    let theta_hat = if polished.iter().all(|x| x.is_finite())
        && pp.excess_objective(&polished) <= pp.excess_objective(&perturbed)
    {
        polished
    } else {
        perturbed
    };
    Ok(SolveOutcome {
        objective: pp.objective(&theta_hat),
        theta_hat,
        iterations: walk.pivots,
        converged,
        method_used: SolverMethod::ExactL1,
        stage_objectives: Vec::new(),
    })
}

/// Distinct nonzero rows (up to sign) with multiplicities as weights.
struct Rows {
    p: usize,
    a: Vec<f64>,
    v: Vec<f64>,
    /// `v` with a deterministic tiny perturbation that breaks degeneracy.
    vp: Vec<f64>,
    w: Vec<f64>,
    anorm: Vec<f64>,
}

impl Rows {
    fn from_problem<T: Scalar>(pp: &PseudoProblem<T>) -> Self {
        let p = pp.ncols();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut out = Rows {
            p,
            a: Vec::new(),
            v: Vec::new(),
            vp: Vec::new(),
            w: Vec::new(),
            anorm: Vec::new(),
        };
        let mut row = vec![0.0; p];
        for s in 0..pp.rows() {
            let (v, a) = pp.row(s);
            let mut v = v.to_f64_lossy();
            for (o, x) in row.iter_mut().zip(a) {
                *o = x.to_f64_lossy();
            }
            let Some(first) = row.iter().position(|&x| x != 0.0) else {
                continue;
            };
            if row[first] < 0.0 {
                v = -v;
                row.iter_mut().for_each(|x| *x = -*x);
            }
            let key: Vec<u64> = std::iter::once(v)
                .chain(row.iter().copied())
                .map(|x| (x + 0.0).to_bits())
                .collect();
            match index.get(&key) {
                Some(&k) => out.w[k] += 1.0,
                None => {
                    index.insert(key, out.v.len());
                    out.v.push(v);
                    out.w.push(1.0);
                    out.anorm.push(row.iter().fold(0.0, |m: f64, x| m.max(x.abs())));
                    out.a.extend_from_slice(&row);
                }
            }
        }
        let mut mags: Vec<f64> = out.v.iter().map(|x| x.abs()).filter(|&x| x > 0.0).collect();
        let scale = if mags.is_empty() {
            1.0
        } else {
            let mid = mags.len() / 2;
            *mags.select_nth_unstable_by(mid, f64::total_cmp).1
        };
        let eta = 1e-11 * scale;
        out.vp = out
            .v
            .iter()
            .enumerate()
            .map(|(s, &v)| v + eta * unit_noise(s as u64))
            .collect();
        out
    }

    fn len(&self) -> usize {
        self.v.len()
    }

    fn row(&self, s: usize) -> &[f64] {
        &self.a[s * self.p..(s + 1) * self.p]
    }
}

/// Deterministic value in (−1, 1).
fn unit_noise(s: u64) -> f64 {
    let mut z = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    /// Artificial constraint `θ_k = start_k`, with zero cost.
    Pin(usize),
    Row(usize),
}

#[derive(Debug, Clone, Copy)]
struct Cand {
    t: f64,
    inc: f64,
    s: usize,
}

struct Walk<'a> {
    rows: &'a Rows,
    p: usize,
    start: Vec<f64>,
    basis: Vec<Slot>,
    in_basis: Vec<bool>,
    /// Inverse of the basis matrix, row-major; column `b` is the edge
    /// direction that releases slot `b`.
    ainv: Vec<f64>,
    theta: Vec<f64>,
    r: Vec<f64>,
    sg: Vec<f64>,
    c: Vec<f64>,
    q: Vec<f64>,
    cands: Vec<Cand>,
    pivots: usize,
    /// Upper bound on `Σ wₛ ‖aₛ‖∞`, for tolerances.
    mass: f64,
}

impl<'a> Walk<'a> {
    fn new(rows: &'a Rows, start: Vec<f64>) -> Self {
        let p = rows.p;
        let mut ainv = vec![0.0; p * p];
        for k in 0..p {
            ainv[k * p + k] = 1.0;
        }
        let mass = rows.w.iter().zip(&rows.anorm).map(|(w, a)| w * a).sum::<f64>().max(1.0);
        let mut walk = Walk {
            rows,
            p,
            theta: start.clone(),
            start,
            basis: (0..p).map(Slot::Pin).collect(),
            in_basis: vec![false; rows.len()],
            ainv,
            r: vec![0.0; rows.len()],
            sg: vec![1.0; rows.len()],
            c: vec![0.0; p],
            q: vec![0.0; rows.len()],
            cands: Vec::new(),
            pivots: 0,
            mass,
        };
        walk.refresh_residuals();
        walk
    }

    fn slot_value(&self, slot: Slot, perturbed: bool) -> f64 {
        match slot {
            Slot::Pin(k) => self.start[k],
            Slot::Row(s) if perturbed => self.rows.vp[s],
            Slot::Row(s) => self.rows.v[s],
        }
    }

    fn slot_row(&self, slot: Slot) -> Vec<f64> {
        match slot {
            Slot::Pin(k) => {
                let mut e = vec![0.0; self.p];
                e[k] = 1.0;
                e
            }
            Slot::Row(s) => self.rows.row(s).to_vec(),
        }
    }

    fn solve_basis(&self, perturbed: bool) -> Vec<f64> {
        let p = self.p;
        let vb: Vec<f64> = self.basis.iter().map(|&s| self.slot_value(s, perturbed)).collect();
        (0..p)
            .map(|i| (0..p).map(|b| self.ainv[i * p + b] * vb[b]).sum())
            .collect()
    }

    /// Recomputes residuals, signs and the nonbasic gradient sum from θ.
    fn refresh_residuals(&mut self) {
        let p = self.p;
        self.c.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..self.rows.len() {
            if self.in_basis[s] {
                self.r[s] = 0.0;
                self.sg[s] = 0.0;
                continue;
            }
            let a = self.rows.row(s);
            let r = self.rows.vp[s] - dot(a, &self.theta);
            self.r[s] = r;
            if r > 0.0 {
                self.sg[s] = 1.0;
            } else if r < 0.0 {
                self.sg[s] = -1.0;
            } else if self.sg[s] == 0.0 {
                self.sg[s] = 1.0;
            }
            let f = self.rows.w[s] * self.sg[s];
            for k in 0..p {
                self.c[k] += f * a[k];
            }
        }
    }

    fn refactor(&mut self) {
        let p = self.p;
        let mut m = Vec::with_capacity(p * p);
        for &slot in &self.basis {
            m.extend(self.slot_row(slot));
        }
        if let Some(inv) = invert(p, m) {
            self.ainv = inv;
        }
        self.theta = self.solve_basis(true);
        self.refresh_residuals();
    }

    /// Pivots until no edge descends. Returns false if the pivot budget ran out.
    fn run(&mut self) -> bool {
        let p = self.p;
        let budget = 50 * (self.rows.len() + p) + 1000;
        let mut since_refactor = 0;
        while self.pivots < budget {
            // u = A⁻ᵀ c: directional slopes of the nonbasic part
            let mut best: Option<(usize, f64, f64)> = None;
            for b in 0..p {
                let mut u = 0.0;
                let mut dn2 = 0.0;
                let mut dinf: f64 = 0.0;
                for i in 0..p {
                    let d = self.ainv[i * p + b];
                    u += d * self.c[i];
                    dn2 += d * d;
                    dinf = dinf.max(d.abs());
                }
                let cost = match self.basis[b] {
                    Slot::Pin(_) => 0.0,
                    Slot::Row(s) => self.rows.w[s],
                };
                let viol = u.abs() - cost;
                let tol = 1e-11 * (cost + dinf * self.mass);
                if viol > tol {
                    let score = viol / dn2.sqrt().max(f64::MIN_POSITIVE);
                    if best.map_or(true, |(_, sc, _)| score > sc) {
                        best = Some((b, score, u));
                    }
                }
            }
            let Some((b, _, u)) = best else {
                return true;
            };
            if !self.pivot(b, u) {
                // no breakpoint: only possible through rounding; resync and stop
                self.refactor();
                return true;
            }
            since_refactor += 1;
            if since_refactor >= REFACTOR_EVERY {
                self.refactor();
                since_refactor = 0;
            }
        }
        false
    }

    fn pivot(&mut self, b: usize, u: f64) -> bool {
        let p = self.p;
        let sigma = u.signum();
        let d: Vec<f64> = (0..p).map(|i| sigma * self.ainv[i * p + b]).collect();
        let dnorm: f64 = d.iter().map(|x| x.abs()).sum();
        let cost = match self.basis[b] {
            Slot::Pin(_) => 0.0,
            Slot::Row(s) => self.rows.w[s],
        };
        let need = u.abs() - cost;
        self.cands.clear();
        for s in 0..self.rows.len() {
            if self.in_basis[s] {
                self.q[s] = 0.0;
                continue;
            }
            let q = dot(self.rows.row(s), &d);
            self.q[s] = q;
            if q.abs() <= 1e-13 * self.rows.anorm[s] * dnorm || self.sg[s] * q <= 0.0 {
                continue;
            }
            let t = (self.r[s] / q).max(0.0);
            self.cands.push(Cand {
                t,
                inc: 2.0 * self.rows.w[s] * q.abs(),
                s,
            });
        }
        let Some(at) = weighted_select(&mut self.cands, need) else {
            return false;
        };
        let Cand { t, s: enter, .. } = self.cands[at];
        for (th, &di) in self.theta.iter_mut().zip(&d) {
            *th += t * di;
        }
        for s in 0..self.rows.len() {
            if !self.in_basis[s] {
                self.r[s] -= t * self.q[s];
            }
        }
        for k in 0..at {
            let s = self.cands[k].s;
            let f = 2.0 * self.rows.w[s] * self.sg[s];
            for (ci, &ai) in self.c.iter_mut().zip(self.rows.row(s)) {
                *ci -= f * ai;
            }
            self.sg[s] = -self.sg[s];
        }
        // entering row leaves the nonbasic sum
        let f = self.rows.w[enter] * self.sg[enter];
        for (ci, &ai) in self.c.iter_mut().zip(self.rows.row(enter)) {
            *ci -= f * ai;
        }
        self.in_basis[enter] = true;
        self.r[enter] = 0.0;
        self.sg[enter] = 0.0;
        if let Slot::Row(leave) = self.basis[b] {
            self.in_basis[leave] = false;
            self.r[leave] = -t * sigma;
            self.sg[leave] = -sigma;
            let f = self.rows.w[leave] * self.sg[leave];
            for (ci, &ai) in self.c.iter_mut().zip(self.rows.row(leave)) {
                *ci += f * ai;
            }
        }
        // replace row b of the basis matrix: rank-one update of the inverse
        let a_e = self.rows.row(enter);
        let y: Vec<f64> = (0..p)
            .map(|j| (0..p).map(|i| a_e[i] * self.ainv[i * p + j]).sum())
            .collect();
        let piv = y[b];
        for i in 0..p {
            self.ainv[i * p + b] /= piv;
        }
        for j in (0..p).filter(|&j| j != b) {
            let f = y[j];
            if f != 0.0 {
                for i in 0..p {
                    self.ainv[i * p + j] -= f * self.ainv[i * p + b];
                }
            }
        }
        self.basis[b] = Slot::Row(enter);
        self.theta = self.solve_basis(true);
        self.pivots += 1;
        true
    }

    /// The vertex of the final basis for the unperturbed responses.
    fn polish(&self) -> Vec<f64> {
        self.solve_basis(false)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smallest position, in increasing `t`, at which the running sum of
/// increments reaches `need`. Reorders `c` so that every earlier position
/// holds a candidate with smaller or equal `t`.
fn weighted_select(c: &mut [Cand], mut need: f64) -> Option<usize> {
    let by_t = |a: &Cand, b: &Cand| a.t.total_cmp(&b.t);
    let (mut lo, mut hi) = (0, c.len());
    while hi - lo > 16 {
        let mid = lo + (hi - lo) / 2;
        c[lo..hi].select_nth_unstable_by(mid - lo, by_t);
        let left: f64 = c[lo..mid].iter().map(|x| x.inc).sum();
        if left >= need {
            hi = mid;
        } else if left + c[mid].inc >= need {
            return Some(mid);
        } else {
            need -= left + c[mid].inc;
            lo = mid + 1;
        }
    }
    c[lo..hi].sort_unstable_by(by_t);
    for (i, x) in c[lo..hi].iter().enumerate() {
        if x.inc >= need {
            return Some(lo + i);
        }
        need -= x.inc;
    }
    None
}

/// Gauss–Jordan inverse with partial pivoting.
fn invert(p: usize, mut m: Vec<f64>) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; p * p];
    for k in 0..p {
        inv[k * p + k] = 1.0;
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&a, &b| m[a * p + col].abs().total_cmp(&m[b * p + col].abs()))?;
        if m[piv * p + col] == 0.0 {
            return None;
        }
        if piv != col {
            for k in 0..p {
                m.swap(piv * p + k, col * p + k);
                inv.swap(piv * p + k, col * p + k);
            }
        }
        let d = m[col * p + col];
        for k in 0..p {
            m[col * p + k] /= d;
            inv[col * p + k] /= d;
        }
        for r in (0..p).filter(|&r| r != col) {
            let f = m[r * p + col];
            if f != 0.0 {
                for k in 0..p {
                    m[r * p + k] -= f * m[col * p + k];
                    inv[r * p + k] -= f * inv[col * p + k];
                }
            }
        }
    }
    Some(inv)
}
