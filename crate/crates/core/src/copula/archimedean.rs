//! Clayton (any dimension) and Gumbel (bivariate density) copulas.
//!
//! Coordinates are kept in log space. For Clayton `a = ln u` and
//! `b = u^-theta - 1`; for Gumbel `a = -ln u` and `b = ln(-ln u)`.

use super::{open01, Coord};
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub(crate) struct Clayton {
    pub d: usize,
    pub theta: f64,
    ln_norm: f64,
    frailty: Gamma<f64>,
}

impl Clayton {
    pub fn new(d: usize, theta: f64) -> Self {
        let ln_norm = (0..d).map(|k| (k as f64 * theta).ln_1p()).sum();
        let frailty = Gamma::new(1.0 / theta, 1.0).expect("theta > 0");
        Clayton { d, theta, ln_norm, frailty }
    }

    #[inline]
    pub fn coord(&self, u: f64) -> Coord {
        let a = u.ln();
        Coord { u, a, b: (-self.theta * a).exp_m1() }
    }

    #[inline]
    fn coord_from_b(&self, b: f64) -> Coord {
        let a = -b.ln_1p() / self.theta;
        Coord { u: a.exp(), a, b }
    }

    pub fn log_density(&self, p: &[Coord]) -> f64 {
        let th = self.theta;
        let mut sa = 0.0;
        let mut sb = 0.0;
        for c in p {
            sa += c.a;
            sb += c.b;
        }
        self.ln_norm - (th + 1.0) * sa - (1.0 / th + self.d as f64) * sb.ln_1p()
    }

    pub fn cdf(&self, p: &[Coord]) -> f64 {
        let sb: f64 = p.iter().map(|c| c.b).sum();
        (-sb.ln_1p() / self.theta).exp()
    }

    /// (1 + u^theta * sum_rest b)^{-(1+theta)/theta}; exactly 1 when all v are 1.
    pub fn partial1(&self, c0: &Coord, rest: &[Coord]) -> f64 {
        let th = self.theta;
        let sb: f64 = rest.iter().map(|c| c.b).sum();
        if sb == 0.0 {
            return 1.0;
        }
        let x = (th * c0.a).exp() * sb;
        (-(1.0 + th) / th * x.ln_1p()).exp()
    }

    /// Bivariate conditional quantile given the first coordinate.
    pub fn conditional_quantile(&self, c0: &Coord, w: f64) -> Coord {
        let th = self.theta;
        self.coord_from_b((1.0 + c0.b) * (-th / (1.0 + th) * w.ln()).exp_m1())
    }

    /// Marshall-Olkin frailty construction.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [Coord]) {
        let w = self.frailty.sample(rng).max(f64::MIN_POSITIVE);
        for c in out.iter_mut() {
            let e: f64 = Exp1.sample(rng);
            *c = self.coord_from_b(e / w);
        }
    }

    /// Sequential inversion of the conditional laws, which are closed form.
    pub fn conditional_sample<R: Rng + ?Sized>(&self, c0: &Coord, rng: &mut R, out: &mut [Coord]) {
        let th = self.theta;
        let mut big_a = 1.0 + c0.b;
        for (j, c) in out.iter_mut().enumerate() {
            let m = (j + 1) as f64;
            let w = open01(rng);
            let b = big_a * (-th / (1.0 + m * th) * w.ln()).exp_m1();
            *c = self.coord_from_b(b);
            big_a += b;
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Gumbel {
    pub d: usize,
    pub theta: f64,
}

impl Gumbel {
    pub fn new(d: usize, theta: f64) -> Self {
        Gumbel { d, theta }
    }

    fn need_bivariate(&self, op: &'static str) -> Result<()> {
        if self.d == 2 {
            Ok(())
        } else {
            Err(Error::Unsupported { op, family: "gumbel", dim: self.d })
        }
    }

    #[inline]
    pub fn coord(&self, u: f64) -> Coord {
        let a = -u.ln();
        Coord { u, a, b: a.ln() }
    }

    #[inline]
    fn from_b(b: f64) -> Coord {
        let a = b.exp();
        Coord { u: (-a).exp(), a, b }
    }

    /// ln sum_i x_i^theta, computed stably.
    #[inline]
    fn ln_s(&self, p: &[Coord]) -> f64 {
        let th = self.theta;
        let mx = p.iter().map(|c| th * c.b).fold(f64::NEG_INFINITY, f64::max);
        if mx == f64::NEG_INFINITY {
            return mx;
        }
        let s: f64 = p.iter().map(|c| (th * c.b - mx).exp()).sum();
        mx + s.ln()
    }

    pub fn log_density(&self, p: &[Coord]) -> Result<f64> {
        self.need_bivariate("density")?;
        let th = self.theta;
        let ln_a = self.ln_s(p) / th;
        let a = ln_a.exp();
        Ok(-a + p[0].a + p[1].a + (th - 1.0) * (p[0].b + p[1].b) + (1.0 - 2.0 * th) * ln_a
            + (a + th - 1.0).ln())
    }

    pub fn cdf(&self, p: &[Coord]) -> f64 {
        (-(self.ln_s(p) / self.theta).exp()).exp()
    }

    /// C * S^{1/theta - 1} * x^{theta - 1} / u
    pub fn partial1(&self, c0: &Coord, rest: &[Coord]) -> f64 {
        if rest.iter().any(|c| c.u == 0.0) {
            return 0.0;
        }
        if rest.iter().all(|c| c.u == 1.0) {
            return 1.0;
        }
        let th = self.theta;
        let mut all = Vec::with_capacity(rest.len() + 1);
        all.push(*c0);
        all.extend(rest.iter().copied().filter(|c| c.u < 1.0));
        let ln_s = self.ln_s(&all);
        let a = (ln_s / th).exp();
        (-a + (1.0 / th - 1.0) * ln_s + (th - 1.0) * c0.b + c0.a).exp()
    }

    /// Log of the bivariate conditional CDF at `y = e^s`, and its
    /// derivative in `s`.
    fn ln_partial_s(&self, c0: &Coord, s: f64) -> (f64, f64) {
        let th = self.theta;
        let t0 = th * c0.b;
        let t1 = th * s;
        let mx = t0.max(t1);
        let ln_s = mx + ((t0 - mx).exp() + (t1 - mx).exp()).ln();
        let a = (ln_s / th).exp();
        let f = -a + (1.0 / th - 1.0) * ln_s + (th - 1.0) * c0.b + c0.a;
        let ratio = (t1 - ln_s).exp();
        (f, -ratio * (a + th - 1.0))
    }

    /// Marshall-Olkin with a positive stable mixing variable (Kanter's
    /// representation, index 1/theta).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [Coord]) -> Result<()> {
        self.need_bivariate("sample")?;
        let al = 1.0 / self.theta;
        let ang = PI * open01(rng);
        let w: f64 = Exp1.sample(rng);
        let ln_st = (al * ang).sin().ln() - (ang.sin().ln()) / al
            + (1.0 - al) / al * (((1.0 - al) * ang).sin().ln() - w.ln());
        for c in out.iter_mut() {
            let e: f64 = Exp1.sample(rng);
            *c = Self::from_b((e.ln() - ln_st) * al);
        }
        Ok(())
    }

    /// Inverts `v -> partial1(u0, v)` by safeguarded Newton iteration on
    /// `s = ln(-ln v)`, to 1e-12 in `v`.
    pub fn conditional_sample<R: Rng + ?Sized>(
        &self,
        c0: &Coord,
        rng: &mut R,
        out: &mut [Coord],
    ) -> Result<()> {
        self.need_bivariate("conditional_sample")?;
        out[0] = self.conditional_quantile(c0, open01(rng));
        Ok(())
    }

    pub fn conditional_quantile(&self, c0: &Coord, w: f64) -> Coord {
        let target = w.ln();
        let mut lo = -60.0_f64;
        let mut hi = 8.0_f64;
        while self.ln_partial_s(c0, hi).0 > target {
            hi += 8.0;
        }
        let mut s = c0.b;
        if !(s > lo && s < hi) {
            s = 0.5 * (lo + hi);
        }
        for _ in 0..200 {
            let (f, df) = self.ln_partial_s(c0, s);
            let g = f - target;
            if g > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let mut next = s - g / df;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            let step = (next - s).abs();
            s = next;
            if step < 1e-13 || hi - lo < 1e-13 {
                break;
            }
        }
        Self::from_b(s)
    }
}
