//! Discrete distribution functions on the nonnegative integers.
//!
//! CDF values are tabulated once at construction and every interval
//! comparison reads the same table, so the ceiling map, the pseudo-inverse
//! and `f_alpha` agree to the bit.

use crate::error::{Error, Result};
use statrs::function::gamma::{gamma_lr, ln_gamma};

pub const DEFAULT_TAIL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum MarginalKind {
    Poisson { mean: f64 },
    Explicit { pmf: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct DiscreteMarginal {
    kind: MarginalKind,
    tail_epsilon: f64,
    /// cdf[n] = F(n) for n <= n_star; cdf[n_star] is exactly 1.
    cdf: Vec<f64>,
    /// mass[n] = cdf[n] - cdf[n-1]; the truncated tail sits in the last atom.
    mass: Vec<f64>,
}

impl DiscreteMarginal {
    pub fn poisson(mean: f64) -> Result<Self> {
        Self::poisson_with_tail(mean, DEFAULT_TAIL_EPSILON)
    }

    /// Poisson law tabulated up to the first `n` with `P[N > n] < tail_epsilon`.
    pub fn poisson_with_tail(mean: f64, tail_epsilon: f64) -> Result<Self> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::InvalidParameter(format!("Poisson mean must be positive, got {mean}")));
        }
        if !(tail_epsilon > 0.0 && tail_epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("tail_epsilon must be in (0,1), got {tail_epsilon}")));
        }
        let mut pmf = Vec::new();
        let mut n = 0u64;
        loop {
            let nf = n as f64;
            pmf.push((nf * mean.ln() - mean - ln_gamma(nf + 1.0)).exp());
            // P[N > n] = P(n+1, mean), the regularized lower incomplete gamma
            if gamma_lr(nf + 1.0, mean) < tail_epsilon {
                break;
            }
            n += 1;
        }
        Ok(Self::tabulate(MarginalKind::Poisson { mean }, tail_epsilon, &pmf))
    }

    /// Finite-support law with `pmf[n] = P[N = n]` for `n = 0..pmf.len()`.
    pub fn explicit(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidParameter("explicit pmf is empty".into()));
        }
        if pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParameter("pmf entries must be finite and nonnegative".into()));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("pmf sums to {total}, not 1")));
        }
        // drop trailing zero atoms so the table ends at the essential supremum
        let last = pmf.iter().rposition(|&p| p > 0.0).unwrap();
        let trimmed = pmf[..=last].to_vec();
        let mut m = Self::tabulate(MarginalKind::Explicit { pmf: trimmed.clone() }, 0.0, &trimmed);
        m.kind = MarginalKind::Explicit { pmf };
        Ok(m)
    }

    /// The three-atom law with mass 1/3 at 1, 2 and 3.
    pub fn three_atom() -> Self {
        Self::explicit(vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap()
    }

    fn tabulate(kind: MarginalKind, tail_epsilon: f64, pmf: &[f64]) -> Self {
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in pmf {
            acc += p;
            cdf.push(acc.min(1.0));
        }
        *cdf.last_mut().unwrap() = 1.0;
        let mass = (0..cdf.len())
            .map(|k| cdf[k] - if k == 0 { 0.0 } else { cdf[k - 1] })
            .collect();
        DiscreteMarginal { kind, tail_epsilon, cdf, mass }
    }

    pub fn kind(&self) -> &MarginalKind {
        &self.kind
    }

    pub fn tail_epsilon(&self) -> f64 {
        self.tail_epsilon
    }

    pub fn has_finite_support(&self) -> bool {
        matches!(self.kind, MarginalKind::Explicit { .. })
    }

    /// Truncation index N*: every sum over n runs over `0..=n_star`.
    /// For finite support this is the essential supremum.
    pub fn truncation_index(&self) -> u64 {
        (self.cdf.len() - 1) as u64
    }

    /// P[N = n].
    pub fn pmf(&self, n: u64) -> f64 {
        match &self.kind {
            MarginalKind::Poisson { mean } => {
                let nf = n as f64;
                (nf * mean.ln() - mean - ln_gamma(nf + 1.0)).exp()
            }
            MarginalKind::Explicit { pmf } => pmf.get(n as usize).copied().unwrap_or(0.0),
        }
    }

    /// Atom masses used in all truncated sums: `cdf(n) - cdf(n-1)`.
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// Tabulated CDF values F(0..=N*).
    pub fn cdf_table(&self) -> &[f64] {
        &self.cdf
    }

    /// F(n) with F(-1) = 0 and F(n) = 1 beyond N*.
    pub fn cdf(&self, n: i64) -> f64 {
        if n < 0 {
            0.0
        } else {
            self.cdf.get(n as usize).copied().unwrap_or(1.0)
        }
    }

    /// F_alpha(n) = (1 - alpha) F(n-1) + alpha F(n).
    pub fn f_alpha(&self, alpha: f64, n: u64) -> Result<f64> {
        check_alpha(alpha)?;
        Ok(self.f_alpha_unchecked(alpha, n))
    }

    #[inline]
    pub(crate) fn f_alpha_unchecked(&self, alpha: f64, n: u64) -> f64 {
        let n = n as i64;
        (1.0 - alpha) * self.cdf(n - 1) + alpha * self.cdf(n)
    }

    /// Smallest n with F(n) >= u.
    pub fn pseudo_inverse(&self, u: f64) -> Result<u64> {
        if !(u > 0.0 && u <= 1.0) {
            return Err(Error::Domain(format!("pseudo-inverse needs u in (0,1], got {u}")));
        }
        Ok(self.pseudo_inverse_unchecked(u))
    }

    #[inline]
    pub(crate) fn pseudo_inverse_unchecked(&self, u: f64) -> u64 {
        let idx = self.cdf.partition_point(|&c| c < u);
        idx.min(self.cdf.len() - 1) as u64
    }

    /// Ceiling map: F_alpha(n) for u in (F(n-1), F(n)], and 0 at u = 0.
    pub fn ceiling(&self, alpha: f64, u: f64) -> Result<f64> {
        check_alpha(alpha)?;
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("ceiling needs u in [0,1], got {u}")));
        }
        if u == 0.0 {
            return Ok(0.0);
        }
        Ok(self.f_alpha_unchecked(alpha, self.pseudo_inverse_unchecked(u)))
    }

    /// E[N] over the truncated support.
    pub fn mean(&self) -> f64 {
        self.mass.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must be in (0,1], got {alpha}")))
    }
}
