//! Gauss-Legendre rules and a globally adaptive 1-D integrator.

use crate::error::{Error, Result};
use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
///
/// Roots of P_n are found by Newton iteration from the Tricomi initial guess.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// P_n(z) and P_n'(z) by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Nodes/weights mapped onto [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    (
        x.iter().map(|&t| c + h * t).collect(),
        w.iter().map(|&wi| h * wi).collect(),
    )
}

fn gl15() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(15))
}

fn apply_rule<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> f64 {
    let (x, w) = gl15();
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    let mut s = 0.0;
    for (xi, wi) in x.iter().zip(w) {
        s += wi * f(c + h * xi);
    }
    s * h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
}

const MAX_INTERVALS: usize = 2000;

/// Adaptive Gauss-Legendre integration of `f` over [a, b].
///
/// `breaks` are points inside (a, b) where `f` may be discontinuous; the
/// range is split there before refinement. Each interval is estimated with a
/// 15-point rule on the whole and on both halves; the difference is the error
/// estimate, and the worst interval is bisected until the total error is
/// below `max(abs_tol, rel_tol * |value|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult { value: 0.0, error: 0.0 });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts = vec![lo];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&t| t > lo && t < hi).collect();
    inner.sort_by(|x, y| x.total_cmp(y));
    inner.dedup();
    cuts.extend(inner);
    cuts.push(hi);

    // (a, b, estimate, error)
    let mut work: Vec<(f64, f64, f64, f64)> = Vec::new();
    let eval = |f: &mut F, a: f64, b: f64| {
        let whole = apply_rule(f, a, b);
        let m = 0.5 * (a + b);
        let halves = apply_rule(f, a, m) + apply_rule(f, m, b);
        (a, b, halves, (whole - halves).abs())
    };
    for w in cuts.windows(2) {
        if w[1] > w[0] {
            work.push(eval(&mut f, w[0], w[1]));
        }
    }

    loop {
        let value: f64 = work.iter().map(|t| t.2).sum();
        let error: f64 = work.iter().map(|t| t.3).sum();
        let target = abs_tol.max(rel_tol * value.abs());
        if !(value.is_finite() && error.is_finite()) {
            return Err(Error::Quadrature { achieved: error, requested: target });
        }
        if error <= target {
            return Ok(QuadResult { value: sign * value, error });
        }
        if work.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature {
                achieved: error,
                requested: target,
            });
        }
        let (idx, _) = work
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (a0, b0, _, _) = work.swap_remove(idx);
        let m = 0.5 * (a0 + b0);
        if !(m > a0 && m < b0) {
            return Err(Error::Quadrature {
                achieved: error,
                requested: target,
            });
        }
        work.push(eval(&mut f, a0, m));
        work.push(eval(&mut f, m, b0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 15, 64, 128, 256] {
            let (x, w) = gauss_legendre(n);
            let total: f64 = w.iter().sum();
            assert!((total - 2.0).abs() < 1e-13, "n={n}");
            // degree 2n-1 monomial with even power: int x^{2m} = 2/(2m+1)
            let m = (n - 1).min(20);
            let deg = 2 * m;
            let got: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
            assert!((got - 2.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn nodes_are_sorted_and_symmetric() {
        let (x, _) = gauss_legendre(15);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        for i in 0..15 {
            assert!((x[i] + x[14 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn adaptive_handles_breaks_and_singular_slopes() {
        let r = integrate(|x| if x < 0.3 { 1.0 } else { 2.0 }, 0.0, 1.0, &[0.3], 1e-12, 1e-14)
            .unwrap();
        assert!((r.value - 1.7).abs() < 1e-13);
        let r = integrate(|x: f64| x.sqrt(), 0.0, 1.0, &[], 1e-10, 1e-14).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-10);
        let r = integrate(|x: f64| x.exp(), 1.0, 0.0, &[], 1e-12, 0.0).unwrap();
        assert!((r.value + (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn nonconvergence_reports_achieved_tolerance() {
        let err = integrate(|x: f64| 1.0 / x, 0.0, 1.0, &[], 1e-12, 0.0).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }
}
