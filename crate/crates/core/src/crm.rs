//! Collective risk model with transformed Gaussian copulas: claim count N,
//! normal severities Y_1..Y_N, and the aggregate S = Y_1 + ... + Y_N.

use crate::continuous::{ContinuousMarginal, NormalMarginal};
use crate::copula::{open01, CopulaSpec, Family};
use crate::error::{Error, Result};
use crate::marginal::DiscreteMarginal;
use crate::special::{norm_cdf, norm_quantile};
use crate::streams::{derive_seed, run_batches};
use crate::transform::MixedModel;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureKind {
    /// Constant severity correlation rho2.
    Exchangeable,
    /// Severity correlation rho2^|i-j|.
    Autoregressive,
}

/// Frequency-severity correlation rho1 and severity correlation rho2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStructure {
    pub kind: StructureKind,
    pub rho1: f64,
    pub rho2: f64,
}

fn check_open_unit(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > -1.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {x} outside (-1, 1)")))
    }
}

impl CorrelationStructure {
    /// Exchangeable structure; requires rho1^2 <= rho2 < 1, which makes the
    /// bordered matrix positive definite at every size.
    pub fn exchangeable(rho1: f64, rho2: f64) -> Result<Self> {
        check_open_unit("rho1", rho1)?;
        check_open_unit("rho2", rho2)?;
        if rho1 * rho1 > rho2 {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(CorrelationStructure { kind: StructureKind::Exchangeable, rho1, rho2 })
    }

    /// Autoregressive structure. Positive definiteness depends on the
    /// largest claim count and is checked by `CrmSpec::new`.
    pub fn autoregressive(rho1: f64, rho2: f64) -> Result<Self> {
        check_open_unit("rho1", rho1)?;
        check_open_unit("rho2", rho2)?;
        Ok(CorrelationStructure { kind: StructureKind::Autoregressive, rho1, rho2 })
    }

    pub fn new(kind: StructureKind, rho1: f64, rho2: f64) -> Result<Self> {
        match kind {
            StructureKind::Exchangeable => Self::exchangeable(rho1, rho2),
            StructureKind::Autoregressive => Self::autoregressive(rho1, rho2),
        }
    }

    fn severity_corr(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        match self.kind {
            StructureKind::Exchangeable => self.rho2,
            StructureKind::Autoregressive => self.rho2.powi(i.abs_diff(j) as i32),
        }
    }
}

/// The (k+1)x(k+1) matrix with unit diagonal, first row/column rho1 and the
/// severity block of the structure. No definiteness check.
pub fn assemble_bordered(kind: StructureKind, rho1: f64, rho2: f64, k: usize) -> DMatrix<f64> {
    let s = CorrelationStructure { kind, rho1, rho2 };
    DMatrix::from_fn(k + 1, k + 1, |i, j| match (i, j) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => rho1,
        _ => s.severity_corr(i - 1, j - 1),
    })
}

/// Sum of all entries of the inverse of the k x k severity block.
fn ones_inv_ones(kind: StructureKind, rho2: f64, k: usize) -> f64 {
    let k = k as f64;
    match kind {
        StructureKind::Exchangeable => k / (1.0 + (k - 1.0) * rho2),
        StructureKind::Autoregressive => (k * (1.0 - rho2) + 2.0 * rho2) / (1.0 + rho2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdDiagnostic {
    /// Exact analytic condition at this k (severity block PD and a positive
    /// Schur complement of the frequency entry).
    pub holds: bool,
    /// Schur complement 1 - rho1^2 * 1' S^-1 1, or NaN if the severity
    /// block itself is not PD.
    pub schur_complement: f64,
    /// Outcome of a Cholesky factorization of the assembled matrix.
    pub cholesky_ok: bool,
    /// Simple closed-form conditions: rho1^2 < rho2 < 1 for the
    /// exchangeable case, 1 - rho1^2 (k(1-rho2) + 2 rho2)(1-rho2) > 0 for
    /// the autoregressive one.
    pub simple_condition: bool,
}

/// Positive definiteness of the bordered matrix at size k, analytically and
/// by Cholesky.
pub fn check_pd(kind: StructureKind, rho1: f64, rho2: f64, k: usize) -> PdDiagnostic {
    let in_range = rho1.abs() < 1.0 && rho2.abs() < 1.0;
    let block_pd = match (kind, k) {
        (_, 0 | 1) => true,
        (StructureKind::Exchangeable, _) => rho2 < 1.0 && 1.0 + (k as f64 - 1.0) * rho2 > 0.0,
        (StructureKind::Autoregressive, _) => rho2.abs() < 1.0,
    };
    let schur = if k == 0 {
        1.0
    } else if block_pd {
        1.0 - rho1 * rho1 * ones_inv_ones(kind, rho2, k)
    } else {
        f64::NAN
    };
    let holds = in_range && (k == 0 || (block_pd && schur > 0.0));
    let simple_condition = match kind {
        StructureKind::Exchangeable => rho1 * rho1 < rho2 && rho2 < 1.0,
        StructureKind::Autoregressive => {
            1.0 - rho1 * rho1 * (k as f64 * (1.0 - rho2) + 2.0 * rho2) * (1.0 - rho2) > 0.0
        }
    };
    let cholesky_ok = assemble_bordered(kind, rho1, rho2, k).cholesky().is_some();
    PdDiagnostic { holds, schur_complement: schur, cholesky_ok, simple_condition }
}

/// Bordered correlation matrix at size k; errors unless it is positive
/// definite. k = 0 gives the 1x1 identity.
pub fn build_sigma(structure: &CorrelationStructure, k: usize) -> Result<DMatrix<f64>> {
    let CorrelationStructure { kind, rho1, rho2 } = *structure;
    if !check_pd(kind, rho1, rho2, k).holds {
        return Err(Error::NotPositiveDefinite);
    }
    let m = assemble_bordered(kind, rho1, rho2, k);
    if m.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(m)
}

/// Transformed Gaussian collective risk model.
#[derive(Debug, Clone)]
pub struct CrmSpec {
    marginal: DiscreteMarginal,
    xi: f64,
    sigma: f64,
    structure: CorrelationStructure,
    alpha: f64,
}

impl CrmSpec {
    pub fn new(
        marginal: DiscreteMarginal,
        xi: f64,
        sigma: f64,
        structure: CorrelationStructure,
        alpha: f64,
    ) -> Result<Self> {
        if !xi.is_finite() {
            return Err(Error::InvalidParameter(format!("xi = {xi} must be finite")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma = {sigma} must be > 0")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} outside (0, 1)")));
        }
        // Re-validate in case the struct was built by hand or deserialized.
        let structure = CorrelationStructure::new(structure.kind, structure.rho1, structure.rho2)?;
        if structure.kind == StructureKind::Autoregressive {
            if !marginal.has_finite_support() {
                return Err(Error::InvalidParameter(
                    "autoregressive structure needs a claim-count law with finite support".into(),
                ));
            }
            let k0 = marginal.truncation_index() as usize;
            if !check_pd(structure.kind, structure.rho1, structure.rho2, k0).holds {
                return Err(Error::NotPositiveDefinite);
            }
        }
        Ok(CrmSpec { marginal, xi, sigma, structure, alpha })
    }

    pub fn marginal(&self) -> &DiscreteMarginal {
        &self.marginal
    }
    pub fn xi(&self) -> f64 {
        self.xi
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn structure(&self) -> &CorrelationStructure {
        &self.structure
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Largest claim count carried by the (possibly truncated) law.
    pub fn max_count(&self) -> usize {
        self.marginal.truncation_index() as usize
    }

    fn check_n(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidParameter("claim count must be >= 1".into()));
        }
        if n >= self.marginal.masses().len() || self.marginal.masses()[n] <= 0.0 {
            return Err(Error::ZeroProbability { n: n as u64 });
        }
        Ok(())
    }

    fn mu(&self, n: usize) -> f64 {
        let fa = self.marginal.f_alpha_unchecked(self.alpha, n as u64);
        self.xi + self.sigma * self.structure.rho1 * norm_quantile(fa)
    }
}

/// Conditional law of (Y_1..Y_n) given N = n.
#[derive(Debug, Clone, PartialEq)]
pub struct SeverityLaw {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Multivariate normal law of the severities given N = n: mean
/// (xi + sigma rho1 Phi^-1(F_alpha(n))) 1 and covariance
/// sigma^2 (S - rho1^2 J), S the severity correlation block.
pub fn conditional_severity_law(spec: &CrmSpec, n: usize) -> Result<SeverityLaw> {
    spec.check_n(n)?;
    let s = &spec.structure;
    let var = spec.sigma * spec.sigma;
    let r2 = s.rho1 * s.rho1;
    let covariance = DMatrix::from_fn(n, n, |i, j| var * (s.severity_corr(i, j) - r2));
    if covariance.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(SeverityLaw { mean: DVector::from_element(n, spec.mu(n)), covariance })
}

/// Log density of the closed-form conditional severity law at y.
pub fn severity_log_density(spec: &CrmSpec, n: usize, y: &[f64]) -> Result<f64> {
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    let law = conditional_severity_law(spec, n)?;
    let chol = law.covariance.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let r = DVector::from_column_slice(y) - &law.mean;
    let z = chol.l().solve_lower_triangular(&r).ok_or(Error::NotPositiveDefinite)?;
    let ln_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * (n as f64 * (2.0 * PI).ln() + ln_det + z.norm_squared()))
}

/// Mean mu_n and variance sigma_n^2 of the average severity given N = n.
pub fn average_severity_params(spec: &CrmSpec, n: usize) -> Result<(f64, f64)> {
    spec.check_n(n)?;
    let CorrelationStructure { kind, rho1, rho2 } = spec.structure;
    let nf = n as f64;
    let var = spec.sigma * spec.sigma;
    let s2 = match kind {
        StructureKind::Exchangeable => var * ((nf - 1.0) * rho2 - nf * rho1 * rho1 + 1.0) / nf,
        StructureKind::Autoregressive => {
            // 1' S 1 = n + 2 sum_{d=1}^{n-1} (n - d) rho^d
            let pairs = if rho2 == 0.0 {
                0.0
            } else {
                rho2 * ((nf - 1.0) - nf * rho2 + rho2.powi(n as i32)) / ((1.0 - rho2) * (1.0 - rho2))
            };
            var * ((nf + 2.0 * pairs) / (nf * nf) - rho1 * rho1)
        }
    };
    Ok((spec.mu(n), s2))
}

/// An alternative closed form for the autoregressive sigma_n^2, evaluated as is
/// (it omits sigma^2). Kept for the discrepancy report only.
pub fn ar_variance_alternative(rho1: f64, rho2: f64, n: usize) -> f64 {
    let nf = n as f64;
    (1.0 - nf * rho1 * rho1) / nf
        + 2.0 / (nf * nf) * rho2 * rho2 / (1.0 - rho2 * rho2) * (rho2.powi(n as i32 - 1) - 1.0)
}

fn positive_counts(spec: &CrmSpec) -> impl Iterator<Item = (usize, f64)> + '_ {
    spec.marginal.masses().iter().copied().enumerate().skip(1).filter(|&(_, p)| p > 0.0)
}

/// P[S <= s]: the atom F(0) at zero plus a mixture of normals.
pub fn aggregate_cdf(spec: &CrmSpec, s: f64) -> Result<f64> {
    if s.is_nan() {
        return Err(Error::Domain("s is NaN".into()));
    }
    let mut acc = if s >= 0.0 { spec.marginal.cdf(0) } else { 0.0 };
    for (n, p) in positive_counts(spec) {
        let (mu, s2) = average_severity_params(spec, n)?;
        acc += norm_cdf((s / n as f64 - mu) / s2.sqrt()) * p;
    }
    Ok(acc.min(1.0))
}

pub fn aggregate_mean(spec: &CrmSpec) -> Result<f64> {
    let mut acc = 0.0;
    for (n, p) in positive_counts(spec) {
        acc += n as f64 * average_severity_params(spec, n)?.0 * p;
    }
    Ok(acc)
}

pub fn aggregate_var(spec: &CrmSpec) -> Result<f64> {
    let mut second = 0.0;
    let mut first = 0.0;
    for (n, p) in positive_counts(spec) {
        let (mu, s2) = average_severity_params(spec, n)?;
        let n2 = (n * n) as f64;
        second += n2 * (s2 + mu * mu) * p;
        first += n as f64 * mu * p;
    }
    Ok((second - first * first).max(0.0))
}

/// Smallest s with P[S <= s] >= p, by bisection to 1e-10 in s.
pub fn aggregate_quantile(spec: &CrmSpec, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0,1)")));
    }
    let at_zero = aggregate_cdf(spec, 0.0)?;
    if p <= at_zero && p > at_zero - spec.marginal.cdf(0) {
        return Ok(0.0);
    }
    let sd = aggregate_var(spec)?.sqrt().max(spec.sigma);
    let m = aggregate_mean(spec)?;
    let mut lo = m - sd;
    let mut hi = m + sd;
    while aggregate_cdf(spec, lo)? >= p {
        lo -= 2.0 * (hi - lo);
    }
    while aggregate_cdf(spec, hi)? < p {
        hi += 2.0 * (hi - lo);
    }
    while hi - lo > 1e-10 * (1.0 + hi.abs().max(lo.abs())) {
        let mid = 0.5 * (lo + hi);
        if aggregate_cdf(spec, mid)? >= p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

struct DirectLaw {
    mu: f64,
    chol: DMatrix<f64>,
}

fn draw_count<R: Rng + ?Sized>(f: &DiscreteMarginal, rng: &mut R) -> usize {
    f.pseudo_inverse_unchecked(open01(rng)) as usize
}

/// Direct simulation of S: N from F, then the severities from their
/// closed-form conditional normal law.
pub fn simulate_crm(spec: &CrmSpec, seed: u64, path_count: usize) -> Result<Vec<f64>> {
    let mut laws = Vec::with_capacity(spec.marginal.masses().len());
    laws.push(None);
    for (n, &p) in spec.marginal.masses().iter().enumerate().skip(1) {
        if p > 0.0 {
            let law = conditional_severity_law(spec, n)?;
            let chol = law.covariance.cholesky().ok_or(Error::NotPositiveDefinite)?.l();
            laws.push(Some(DirectLaw { mu: law.mean[0], chol }));
        } else {
            laws.push(None);
        }
    }
    let parts = run_batches(derive_seed(seed, &[0xc51]), path_count, |rng, len| {
        let mut out = Vec::with_capacity(len);
        let mut z = Vec::new();
        for _ in 0..len {
            let n = draw_count(&spec.marginal, rng);
            let Some(law) = &laws[n] else {
                out.push(0.0);
                continue;
            };
            z.clear();
            z.extend((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            // sum_i (L z)_i = sum_j z_j * (column sum of L)_j
            let mut s = n as f64 * law.mu;
            for (j, zj) in z.iter().enumerate() {
                let col: f64 = law.chol.column(j).iter().sum();
                s += zj * col;
            }
            out.push(s);
        }
        out
    });
    Ok(parts.concat())
}

/// The mixed model used for N = n: an (n+1)-dimensional Gaussian copula
/// with the bordered matrix, normal severity margins and the transform.
pub fn mixed_model_for(spec: &CrmSpec, n: usize) -> Result<MixedModel> {
    let sigma = build_sigma(&spec.structure, n)?;
    let copula = CopulaSpec::with_correlation(Family::Gaussian, sigma, None)?;
    let g: Arc<dyn ContinuousMarginal> = Arc::new(NormalMarginal::new(spec.xi, spec.sigma)?);
    MixedModel::new(spec.marginal.clone(), vec![g; n], copula, spec.alpha)
}

/// Simulation of S through the generic transformed-copula sampler, one
/// mixed model per claim count.
pub fn simulate_crm_generic(spec: &CrmSpec, seed: u64, path_count: usize) -> Result<Vec<f64>> {
    let mut models = Vec::with_capacity(spec.marginal.masses().len());
    models.push(None);
    for (n, &p) in spec.marginal.masses().iter().enumerate().skip(1) {
        models.push(if p > 0.0 { Some(mixed_model_for(spec, n)?) } else { None });
    }
    let parts = run_batches(derive_seed(seed, &[0xc52]), path_count, |rng, len| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let n = draw_count(&spec.marginal, rng);
            match &models[n] {
                None => out.push(0.0),
                Some(m) => out.push(m.conditional_sample_with(n as u64, rng, 1)?.row(0).iter().sum()),
            }
        }
        Ok(out)
    });
    let mut all = Vec::with_capacity(path_count);
    for p in parts {
        all.extend(p?);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    /// Conditional severities are i.i.d. for every claim count.
    pub is_equivalent: bool,
    /// Largest absolute off-diagonal conditional covariance over n <= max count.
    pub offdiag_max: f64,
    /// Common conditional severity variance sigma^2 (1 - rho1^2), when equivalent.
    pub sigma0_sq: Option<f64>,
    /// (n, mu_n) for the claim counts carrying mass, when equivalent.
    pub mu: Vec<(usize, f64)>,
}

/// Whether the model reduces to a two-part model with conditionally i.i.d.
/// normal severities, which happens exactly when the conditional covariance
/// is diagonal (rho2 = rho1^2 for the exchangeable structure).
pub fn two_part_equivalence_check(spec: &CrmSpec) -> Result<EquivalenceReport> {
    let CorrelationStructure { kind, rho1, rho2 } = spec.structure;
    let var = spec.sigma * spec.sigma;
    let r2 = rho1 * rho1;
    let kmax = spec.max_count();
    let offdiag_max = if kmax < 2 {
        0.0
    } else {
        match kind {
            StructureKind::Exchangeable => var * (rho2 - r2).abs(),
            StructureKind::Autoregressive => {
                (1..kmax).map(|d| var * (rho2.powi(d as i32) - r2).abs()).fold(0.0, f64::max)
            }
        }
    };
    let is_equivalent = offdiag_max <= 1e-12 * var;
    let (sigma0_sq, mu) = if is_equivalent {
        let mu = positive_counts(spec).map(|(n, _)| (n, spec.mu(n))).collect();
        (Some(var * (1.0 - r2)), mu)
    } else {
        (None, Vec::new())
    };
    Ok(EquivalenceReport { is_equivalent, offdiag_max, sigma0_sq, mu })
}

/// Two-part simulator: N from F, then n i.i.d. Normal(mu_n, sigma0^2).
pub fn simulate_two_part(spec: &CrmSpec, seed: u64, path_count: usize) -> Result<Vec<f64>> {
    let report = two_part_equivalence_check(spec)?;
    let Some(s0) = report.sigma0_sq.map(f64::sqrt) else {
        return Err(Error::InvalidParameter("model is not equivalent to a two-part model".into()));
    };
    let mut mu = vec![0.0; spec.marginal.masses().len()];
    for (n, m) in report.mu {
        mu[n] = m;
    }
    let parts = run_batches(derive_seed(seed, &[0xc53]), path_count, |rng, len| {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let n = draw_count(&spec.marginal, rng);
            let mut s = 0.0;
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                s += mu[n] + s0 * z;
            }
            out.push(s);
        }
        out
    });
    Ok(parts.concat())
}
