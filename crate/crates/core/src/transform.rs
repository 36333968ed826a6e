//! The ceiling-map transform of a copula and the mixed discrete-continuous
//! model built on it.
//!
//! For a base copula C, a discrete law F and alpha in (0, 1], the transformed
//! density is `c(ceil(u), v)` where `ceil` sends `u` in `(F(n-1), F(n)]` to
//! `F_alpha(n)`. Its distribution function has the closed form
//!
//! ```text
//! E(u, v) = sum_{k<n} d1C(F_alpha(k), v) P[N=k] + d1C(F_alpha(n), v) (u - F(n-1)).
//! ```

use crate::continuous::ContinuousMarginal;
use crate::copula::{Coord, CopulaSpec, Points};
use crate::error::{Error, Result};
use crate::marginal::{check_alpha, DiscreteMarginal};
use crate::quadrature::integrate;
use crate::streams::{derive_seed, run_batches};
use rand::Rng;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct TransformedCopula {
    base: CopulaSpec,
    marginal: DiscreteMarginal,
    alpha: f64,
    /// F_alpha(n) for n = 0..=N*
    fa: Vec<f64>,
    fa_coords: Vec<Coord>,
}

/// Result of checking whether the transformed distribution has uniform
/// margins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopulaCheck {
    pub is_copula: bool,
    pub max_margin_violation: f64,
}

impl TransformedCopula {
    pub fn new(base: CopulaSpec, marginal: DiscreteMarginal, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !base.supports_density() {
            return Err(Error::Unsupported {
                op: "transform",
                family: base.family().name(),
                dim: base.dim(),
            });
        }
        let n_star = marginal.truncation_index();
        let fa: Vec<f64> = (0..=n_star).map(|n| marginal.f_alpha_unchecked(alpha, n)).collect();
        let fa_coords = fa.iter().map(|&x| base.coord_clamped(x)).collect();
        Ok(TransformedCopula { base, marginal, alpha, fa, fa_coords })
    }

    pub fn base(&self) -> &CopulaSpec {
        &self.base
    }
    pub fn marginal(&self) -> &DiscreteMarginal {
        &self.marginal
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    /// Total dimension d + 1.
    pub fn dim(&self) -> usize {
        self.base.dim()
    }
    /// F_alpha(n) for n = 0..=N*.
    pub fn f_alpha_table(&self) -> &[f64] {
        &self.fa
    }

    #[inline]
    pub(crate) fn cell_coord(&self, n: usize) -> &Coord {
        &self.fa_coords[n]
    }

    fn check_v(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() - 1 {
            return Err(Error::DimensionMismatch { expected: self.dim() - 1, got: v.len() });
        }
        if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Domain("v outside [0,1]^d".into()));
        }
        Ok(())
    }

    fn check_u(u: f64) -> Result<()> {
        if (0.0..=1.0).contains(&u) {
            Ok(())
        } else {
            Err(Error::Domain(format!("u = {u} outside [0,1]")))
        }
    }

    /// Log of the transformed density at (u, v).
    pub fn log_density(&self, u: f64, v: &[f64]) -> Result<f64> {
        Self::check_u(u)?;
        self.check_v(v)?;
        let mut p = Vec::with_capacity(self.dim());
        p.push(if u == 0.0 {
            self.base.coord_clamped(0.0)
        } else {
            self.fa_coords[self.marginal.pseudo_inverse_unchecked(u) as usize]
        });
        p.extend(v.iter().map(|&x| self.base.coord_clamped(x)));
        self.base.log_density_coords(&p)
    }

    /// Transformed density c(ceil(u), v).
    pub fn density(&self, u: f64, v: &[f64]) -> Result<f64> {
        self.log_density(u, v).map(f64::exp)
    }

    /// Transformed distribution function E(u, v).
    pub fn cdf(&self, u: f64, v: &[f64]) -> Result<f64> {
        Self::check_u(u)?;
        self.check_v(v)?;
        if u == 0.0 {
            return Ok(0.0);
        }
        let n = self.marginal.pseudo_inverse_unchecked(u) as usize;
        let rest: Vec<Coord> = v.iter().map(|&x| self.base.coord(x)).collect();
        let mass = self.marginal.masses();
        let mut acc = 0.0;
        for k in 0..n {
            if mass[k] > 0.0 {
                acc += self.base.partial1_coords(&self.fa_coords[k], &rest)? * mass[k];
            }
        }
        let left = self.marginal.cdf(n as i64 - 1);
        acc += self.base.partial1_coords(&self.fa_coords[n], &rest)? * (u - left);
        Ok(acc)
    }

    /// E(1, v) = E[d1C(F_alpha(N), v)], the law of the continuous block.
    pub fn second_margin_cdf(&self, v: &[f64]) -> Result<f64> {
        self.check_v(v)?;
        let rest: Vec<Coord> = v.iter().map(|&x| self.base.coord(x)).collect();
        self.second_margin_cdf_coords(&rest)
    }

    pub(crate) fn second_margin_cdf_coords(&self, rest: &[Coord]) -> Result<f64> {
        let mut acc = 0.0;
        for (c, &m) in self.fa_coords.iter().zip(self.marginal.masses()) {
            if m > 0.0 {
                acc += self.base.partial1_coords(c, rest)? * m;
            }
        }
        Ok(acc)
    }

    /// Probes every continuous margin of E on a grid of `probe_count`
    /// interior points and reports the largest deviation from uniformity.
    pub fn is_copula_check(&self, probe_count: usize) -> Result<CopulaCheck> {
        if probe_count == 0 {
            return Err(Error::InvalidParameter("probe_count must be >= 1".into()));
        }
        let d = self.dim() - 1;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 1..=probe_count {
                let x = j as f64 / (probe_count + 1) as f64;
                let mut v = vec![1.0; d];
                v[i] = x;
                worst = worst.max((self.cdf(1.0, &v)? - x).abs());
            }
        }
        Ok(CopulaCheck { is_copula: worst <= 1e-9, max_margin_violation: worst })
    }

    /// Draws (u, n, v) from the transformed law: u uniform, n = F^{<-}(u),
    /// v from the conditional law of C given F_alpha(n).
    pub(crate) fn sample_cell<R: Rng + ?Sized>(&self, rng: &mut R, v: &mut [Coord]) -> Result<(f64, usize)> {
        let u = crate::copula::open01(rng);
        let n = self.marginal.pseudo_inverse_unchecked(u) as usize;
        self.base.conditional_sample_coords(&self.fa_coords[n], rng, v)?;
        Ok((u, n))
    }
}

/// Mixed model: discrete N with law F, continuous Y with margins G_i, joined
/// by the copula C through the transform with parameter alpha.
#[derive(Debug, Clone)]
pub struct MixedModel {
    transformed: TransformedCopula,
    margins: Vec<Arc<dyn ContinuousMarginal>>,
}

impl MixedModel {
    pub fn new(
        marginal: DiscreteMarginal,
        margins: Vec<Arc<dyn ContinuousMarginal>>,
        copula: CopulaSpec,
        alpha: f64,
    ) -> Result<Self> {
        if margins.len() + 1 != copula.dim() {
            return Err(Error::DimensionMismatch { expected: copula.dim() - 1, got: margins.len() });
        }
        Ok(MixedModel { transformed: TransformedCopula::new(copula, marginal, alpha)?, margins })
    }

    pub fn transformed(&self) -> &TransformedCopula {
        &self.transformed
    }
    pub fn margins(&self) -> &[Arc<dyn ContinuousMarginal>] {
        &self.margins
    }

    fn check_y(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.margins.len() {
            return Err(Error::DimensionMismatch { expected: self.margins.len(), got: y.len() });
        }
        Ok(())
    }

    /// (G(y), sum ln g(y)).
    fn push_forward(&self, y: &[f64]) -> (Vec<f64>, f64) {
        let mut v = Vec::with_capacity(y.len());
        let mut ln_g = 0.0;
        for (g, &yi) in self.margins.iter().zip(y) {
            v.push(g.cdf(yi));
            ln_g += g.ln_pdf(yi);
        }
        (v, ln_g)
    }

    /// Untransformed mixed density h(n, y): the integral of c(u, G(y)) over
    /// (F(n-1), F(n)] times the marginal densities. Adaptive quadrature to
    /// relative tolerance 1e-8.
    pub fn mixed_density_h(&self, n: u64, y: &[f64]) -> Result<f64> {
        self.check_y(y)?;
        let (v, ln_g) = self.push_forward(y);
        if ln_g == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        let base = self.transformed.base();
        let f = self.transformed.marginal();
        let (a, b) = (f.cdf(n as i64 - 1), f.cdf(n as i64));
        if b <= a {
            return Ok(0.0);
        }
        let rest: Vec<Coord> = v.iter().map(|&x| base.coord_clamped(x)).collect();
        let mut buf = Vec::with_capacity(rest.len() + 1);
        let mut failure = None;
        let q = integrate(
            |u| {
                buf.clear();
                buf.push(base.coord_clamped(u));
                buf.extend_from_slice(&rest);
                match base.log_density_coords(&buf) {
                    Ok(l) => l.exp(),
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                }
            },
            a,
            b,
            &[],
            1e-8,
            0.0,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(q.value * ln_g.exp())
    }

    fn log_copula_term(&self, n: u64, y: &[f64]) -> Result<(f64, f64)> {
        self.check_y(y)?;
        let (v, ln_g) = self.push_forward(y);
        let t = &self.transformed;
        let base = t.base();
        let mut p = Vec::with_capacity(v.len() + 1);
        let idx = n as usize;
        p.push(if idx < t.fa_coords.len() { t.fa_coords[idx] } else { base.coord_clamped(1.0) });
        p.extend(v.iter().map(|&x| base.coord_clamped(x)));
        Ok((base.log_density_coords(&p)?, ln_g))
    }

    /// Transformed joint density c(F_alpha(n), G(y)) P[N=n] prod g_i(y_i).
    pub fn transformed_joint_density(&self, n: u64, y: &[f64]) -> Result<f64> {
        let pn = self.transformed.marginal().pmf(n);
        if pn == 0.0 {
            self.check_y(y)?;
            return Ok(0.0);
        }
        let (lc, lg) = self.log_copula_term(n, y)?;
        if lg == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        Ok((lc + lg).exp() * pn)
    }

    /// Conditional density of Y given N = n: c(F_alpha(n), G(y)) prod g_i(y_i).
    pub fn conditional_density(&self, n: u64, y: &[f64]) -> Result<f64> {
        if self.transformed.marginal().pmf(n) == 0.0 {
            return Err(Error::ZeroProbability { n });
        }
        let (lc, lg) = self.log_copula_term(n, y)?;
        if lg == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        Ok((lc + lg).exp())
    }

    /// Draws `count` pairs (n, y) from the transformed mixed model.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<(Vec<u64>, Points)> {
        let d = self.margins.len();
        let mut ns = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count * d);
        let mut v = vec![Coord::default(); d];
        for _ in 0..count {
            let (_, n) = self.transformed.sample_cell(rng, &mut v)?;
            ns.push(n as u64);
            for (g, c) in self.margins.iter().zip(&v) {
                ys.push(g.quantile(c.u));
            }
        }
        Ok((ns, Points::new(d, ys)))
    }

    /// Draws from the conditional law of Y given N = n.
    pub fn conditional_sample_with<R: Rng + ?Sized>(&self, n: u64, rng: &mut R, count: usize) -> Result<Points> {
        let t = &self.transformed;
        if t.marginal().pmf(n) == 0.0 {
            return Err(Error::ZeroProbability { n });
        }
        let idx = n as usize;
        let c0 = if idx < t.fa_coords.len() { t.fa_coords[idx] } else { t.base().coord_clamped(1.0) };
        let d = self.margins.len();
        let mut ys = Vec::with_capacity(count * d);
        let mut v = vec![Coord::default(); d];
        for _ in 0..count {
            t.base().conditional_sample_coords(&c0, rng, &mut v)?;
            for (g, c) in self.margins.iter().zip(&v) {
                ys.push(g.quantile(c.u));
            }
        }
        Ok(Points::new(d, ys))
    }
}

/// c(ceil(u), v).
pub fn transformed_density(t: &TransformedCopula, u: f64, v: &[f64]) -> Result<f64> {
    t.density(u, v)
}

/// E(u, v).
pub fn transformed_cdf(t: &TransformedCopula, u: f64, v: &[f64]) -> Result<f64> {
    t.cdf(u, v)
}

/// E(1, v).
pub fn second_margin_cdf(t: &TransformedCopula, v: &[f64]) -> Result<f64> {
    t.second_margin_cdf(v)
}

/// Uniformity check of the continuous margins of E.
pub fn is_copula_check(t: &TransformedCopula, probe_count: usize) -> Result<CopulaCheck> {
    t.is_copula_check(probe_count)
}

/// h(n, y).
pub fn mixed_density_h(m: &MixedModel, n: u64, y: &[f64]) -> Result<f64> {
    m.mixed_density_h(n, y)
}

/// c(F_alpha(n), G(y)) P[N=n] prod g(y).
pub fn transformed_joint_density(m: &MixedModel, n: u64, y: &[f64]) -> Result<f64> {
    m.transformed_joint_density(n, y)
}

/// c(F_alpha(n), G(y)) prod g(y).
pub fn conditional_density(m: &MixedModel, n: u64, y: &[f64]) -> Result<f64> {
    m.conditional_density(n, y)
}

/// `count` draws (n, y) from the transformed mixed model, reproducible for
/// a given seed under any thread count.
pub fn sample_transformed(m: &MixedModel, seed: u64, count: usize) -> Result<(Vec<u64>, Points)> {
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    let parts = run_batches(derive_seed(seed, &[0x7a]), count, |rng, len| m.sample_with(rng, len));
    let d = m.margins().len();
    let mut ns = Vec::with_capacity(count);
    let mut ys = Vec::with_capacity(count * d);
    for p in parts {
        let (n, y) = p?;
        ns.extend(n);
        ys.extend_from_slice(y.as_slice());
    }
    Ok((ns, Points::new(d, ys)))
}
