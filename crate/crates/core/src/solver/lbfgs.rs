//! Limited-memory BFGS with a strong Wolfe line search.

use std::collections::VecDeque;

use crate::scalar::{dot, max_abs, Scalar};

pub(crate) struct Minimum<T> {
    pub x: Vec<T>,
    pub f: T,
    pub grad_inf: T,
    pub iterations: usize,
    pub converged: bool,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

pub(crate) fn minimize<T, F>(
    mut fg: F,
    x0: Vec<T>,
    memory: usize,
    max_iter: usize,
    gtol: T,
) -> Minimum<T>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]) -> T,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![T::zero(); n];
    let mut f = fg(&x, &mut g);
    let mut hist: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(memory);
    let mut iterations = 0;
    let mut flat_steps = 0;
    let tiny = T::epsilon() * T::c(16.0);
    loop {
        let gi = max_abs(&g);
        if gi < gtol || n == 0 {
            return Minimum { x, f, grad_inf: gi, iterations, converged: true };
        }
        if iterations >= max_iter {
            return Minimum { x, f, grad_inf: gi, iterations, converged: false };
        }
        let mut dir = two_loop(&g, &hist);
        let mut slope = dot(&dir, &g);
        if !(slope < T::zero()) {
            hist.clear();
            dir = g.iter().map(|&v| -v).collect();
            slope = dot(&dir, &g);
        }
        let alpha0 = if hist.is_empty() {
            T::one() / dot(&g, &g).sqrt().max(T::min_positive_value())
        } else {
            T::one()
        };
        iterations += 1;
        let Some((alpha, f_new, g_new)) = wolfe_search(&mut fg, &x, f, slope, &dir, alpha0) else {
            if hist.is_empty() {
                return Minimum { x, f, grad_inf: gi, iterations, converged: false };
            }
            // stale curvature; retry from steepest descent
            hist.clear();
            continue;
        };
        let x_new: Vec<T> = x.iter().zip(&dir).map(|(&xi, &di)| xi + alpha * di).collect();
        let s: Vec<T> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == memory {
                hist.pop_front();
            }
            hist.push_back((s, y, T::one() / sy));
        }
        let decrease = f - f_new;
        x = x_new;
        g = g_new;
        let scale = f.abs().max(f_new.abs()).max(T::one());
        f = f_new;
        if decrease <= tiny * scale {
            flat_steps += 1;
            if flat_steps >= 3 {
                let gi = max_abs(&g);
                return Minimum { x, f, grad_inf: gi, iterations, converged: gi < gtol };
            }
        } else {
            flat_steps = 0;
        }
    }
}

fn two_loop<T: Scalar>(g: &[T], hist: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q: Vec<T> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = *rho * dot(s, &q);
        for (qi, &yi) in q.iter_mut().zip(y) {
            *qi = *qi - a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v = *v * gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        for (qi, &si) in q.iter_mut().zip(s) {
            *qi = *qi + (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Strong Wolfe line search (bracketing followed by zoom). Returns the step,
/// the new value and the new gradient.
fn wolfe_search<T, F>(
    fg: &mut F,
    x: &[T],
    f0: T,
    d0: T,
    dir: &[T],
    alpha0: T,
) -> Option<(T, T, Vec<T>)>
where
    T: Scalar,
    F: FnMut(&[T], &mut [T]) -> T,
{
    let c1 = T::c(C1);
    let c2 = T::c(C2);
    let mut g = vec![T::zero(); x.len()];
    let mut xt = vec![T::zero(); x.len()];
    let mut eval = |alpha: T, g: &mut Vec<T>, xt: &mut Vec<T>| -> (T, T) {
        for ((o, &xi), &di) in xt.iter_mut().zip(x).zip(dir) {
            *o = xi + alpha * di;
        }
        let f = fg(xt, g);
        (f, dot(g, dir))
    };

    let mut a_prev = T::zero();
    let mut f_prev = f0;
    let mut d_prev = d0;
    let mut a = alpha0;
    for i in 0..40 {
        let (f, d) = eval(a, &mut g, &mut xt);
        if !f.is_finite() {
            a = (a_prev + a) / T::c(2.0);
            continue;
        }
        if f > f0 + c1 * a * d0 || (i > 0 && f >= f_prev) {
            return zoom(&mut eval, f0, d0, (a_prev, f_prev, d_prev), (a, f, d), &mut g, &mut xt);
        }
        if d.abs() <= -c2 * d0 {
            return Some((a, f, g));
        }
        if d >= T::zero() {
            return zoom(&mut eval, f0, d0, (a, f, d), (a_prev, f_prev, d_prev), &mut g, &mut xt);
        }
        a_prev = a;
        f_prev = f;
        d_prev = d;
        a = a * T::c(4.0);
    }
    None
}

type Probe<T> = (T, T, T);

fn zoom<T, E>(
    eval: &mut E,
    f0: T,
    d0: T,
    mut lo: Probe<T>,
    mut hi: Probe<T>,
    g: &mut Vec<T>,
    xt: &mut Vec<T>,
) -> Option<(T, T, Vec<T>)>
where
    T: Scalar,
    E: FnMut(T, &mut Vec<T>, &mut Vec<T>) -> (T, T),
{
    let c1 = T::c(C1);
    let c2 = T::c(C2);
    let two = T::c(2.0);
    for _ in 0..60 {
        let a = cubic_min(lo, hi).unwrap_or((lo.0 + hi.0) / two);
        let (a_min, a_max) = if lo.0 < hi.0 { (lo.0, hi.0) } else { (hi.0, lo.0) };
        let width = a_max - a_min;
        let margin = T::c(0.1) * width;
        let a = if a < a_min + margin || a > a_max - margin {
            (lo.0 + hi.0) / two
        } else {
            a
        };
        if width <= T::epsilon() * a_max.abs() {
            break;
        }
        let (f, d) = eval(a, g, xt);
        if f > f0 + c1 * a * d0 || f >= lo.1 {
            hi = (a, f, d);
        } else {
            if d.abs() <= -c2 * d0 {
                return Some((a, f, g.clone()));
            }
            if d * (hi.0 - lo.0) >= T::zero() {
                hi = lo;
            }
            lo = (a, f, d);
        }
    }
    // accept the best sufficient-decrease point found
    if lo.0 > T::zero() && lo.1 < f0 {
        let (f, _) = eval(lo.0, g, xt);
        return Some((lo.0, f, g.clone()));
    }
    None
}

/// Minimizer of the cubic interpolating two probes, if it exists.
fn cubic_min<T: Scalar>(a: Probe<T>, b: Probe<T>) -> Option<T> {
    let (x1, f1, d1) = a;
    let (x2, f2, d2) = b;
    let three = T::c(3.0);
    let d_1 = d1 + d2 - three * (f1 - f2) / (x1 - x2);
    let disc = d_1 * d_1 - d1 * d2;
    if !(disc >= T::zero()) {
        return None;
    }
    let sgn = if x2 > x1 { T::one() } else { -T::one() };
    let d_2 = sgn * disc.sqrt();
    let denom = d2 - d1 + T::c(2.0) * d_2;
    if denom == T::zero() {
        return None;
    }
    let x = x2 - (x2 - x1) * (d2 + d_2 - d_1) / denom;
    x.is_finite().then_some(x)
}
