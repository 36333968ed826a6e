//! KL divergence and Spearman's rho estimators.

use crate::copula::{Coord, CopulaSpec};
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_on;
use crate::special::{norm_cdf, norm_pdf, norm_quantile};
use crate::streams::{derive_seed, run_batches, Moments};
use crate::transform::TransformedCopula;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    MonteCarlo,
    Quadrature,
    /// Known in closed form (independence), reported without error.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlEstimate {
    pub value: f64,
    pub std_error: f64,
    pub sample_count: u64,
    pub method: EstimateMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoEstimate {
    pub value: f64,
    pub std_error: f64,
    pub sample_count: u64,
    pub method: EstimateMethod,
}

impl KlEstimate {
    pub fn exact(value: f64) -> Self {
        KlEstimate { value, std_error: 0.0, sample_count: 0, method: EstimateMethod::Exact }
    }
}

impl RhoEstimate {
    pub fn exact(value: f64) -> Self {
        RhoEstimate { value, std_error: 0.0, sample_count: 0, method: EstimateMethod::Exact }
    }
}

fn check_count(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidParameter("sample count must be >= 1".into()))
    } else {
        Ok(())
    }
}

fn merge(parts: Vec<Result<Moments>>) -> Result<Moments> {
    let mut acc = Moments::default();
    for p in parts {
        acc.merge(&p?);
    }
    Ok(acc)
}

/// Monte Carlo estimate of D(P, Q) = E_P[ln p - ln q] from draws of P.
///
/// `p_sampler` fills a point of length `dim`. Errors if q is not positive
/// at a sampled point.
pub fn kl_divergence<P, S, Q>(
    p_density: P,
    p_sampler: S,
    q_density: Q,
    dim: usize,
    sample_count: usize,
    seed: u64,
) -> Result<KlEstimate>
where
    P: Fn(&[f64]) -> Result<f64> + Sync,
    S: Fn(&mut ChaCha8Rng, &mut [f64]) -> Result<()> + Sync,
    Q: Fn(&[f64]) -> Result<f64> + Sync,
{
    check_count(sample_count)?;
    let parts = run_batches(derive_seed(seed, &[0x6b1]), sample_count, |rng, len| {
        let mut m = Moments::default();
        let mut x = vec![0.0; dim];
        for _ in 0..len {
            p_sampler(rng, &mut x)?;
            let p = p_density(&x)?;
            let q = q_density(&x)?;
            if !(q > 0.0) {
                return Err(Error::NonPositiveDensity { point: x.clone() });
            }
            m.push(if p == q { 0.0 } else { p.ln() - q.ln() });
        }
        Ok(m)
    });
    let m = merge(parts)?;
    Ok(KlEstimate {
        value: m.mean,
        std_error: m.std_error(),
        sample_count: m.count,
        method: EstimateMethod::MonteCarlo,
    })
}

/// D(C, transformed C) by Monte Carlo, working on cached latent
/// coordinates. Independence bases return an exact zero.
pub fn kl_copula_vs_transformed(t: &TransformedCopula, sample_count: usize, seed: u64) -> Result<KlEstimate> {
    check_count(sample_count)?;
    let base = t.base();
    if base.is_independence() {
        return Ok(KlEstimate::exact(0.0));
    }
    if !base.supports_sampling() {
        return Err(Error::Unsupported { op: "sample", family: base.family().name(), dim: base.dim() });
    }
    let f = t.marginal();
    let d = base.dim();
    let parts = run_batches(derive_seed(seed, &[0x6b2]), sample_count, |rng, len| {
        let mut m = Moments::default();
        let mut p = vec![Coord::default(); d];
        for _ in 0..len {
            base.sample_coords(rng, &mut p)?;
            let lp = base.log_density_coords(&p)?;
            let n = f.pseudo_inverse_unchecked(p[0].u) as usize;
            let keep = p[0];
            p[0] = *t.cell_coord(n);
            let lq = base.log_density_coords(&p)?;
            if !lq.is_finite() {
                p[0] = keep;
                return Err(Error::NonPositiveDensity { point: p.iter().map(|c| c.u).collect() });
            }
            m.push(lp - lq);
        }
        Ok(m)
    });
    let m = merge(parts)?;
    Ok(KlEstimate {
        value: m.mean,
        std_error: m.std_error(),
        sample_count: m.count,
        method: EstimateMethod::MonteCarlo,
    })
}

/// Bivariate D(C, transformed C) by tensor Gauss-Legendre quadrature.
///
/// The outer integral is split at the jump points F(n) of the ceiling map.
/// Both integrals are taken in normal scores (u = Phi(z)), and the inner one
/// runs over the conditional quantile of v given u, so the integrand is the
/// log ratio alone.
pub fn kl_quadrature(t: &TransformedCopula, nodes: usize) -> Result<KlEstimate> {
    let base = t.base();
    if base.dim() != 2 {
        return Err(Error::Unsupported { op: "kl_quadrature", family: base.family().name(), dim: base.dim() });
    }
    if nodes < 2 {
        return Err(Error::InvalidParameter("quadrature needs at least 2 nodes".into()));
    }
    if base.is_independence() {
        return Ok(KlEstimate::exact(0.0));
    }
    // Phi(z) stays below 1 in double precision up to z = 8; the tails
    // beyond carry mass ~1e-15.
    const ZMAX: f64 = 8.0;
    let (zw, ww) = gauss_legendre_on(nodes, -ZMAX, ZMAX);
    let inner: Vec<(f64, f64)> = zw.iter().zip(&ww).map(|(&z, &w)| (norm_cdf(z), w * norm_pdf(z))).collect();
    let f = t.marginal();
    let mut total = 0.0;
    let mut evals = 0u64;
    for (n, &mass) in f.masses().iter().enumerate() {
        if mass <= 0.0 {
            continue;
        }
        let za = norm_quantile(f.cdf(n as i64 - 1)).max(-ZMAX);
        let zb = norm_quantile(f.cdf(n as i64)).min(ZMAX);
        if zb <= za {
            continue;
        }
        let (zo, wo) = gauss_legendre_on(nodes, za, zb);
        let cq = *t.cell_coord(n);
        for (&z, &w) in zo.iter().zip(&wo) {
            let c0 = base.coord_clamped(norm_cdf(z));
            let mut acc = 0.0;
            for &(wv, wt) in &inner {
                let v = base.conditional_quantile_coord(&c0, wv)?;
                let lp = base.log_density_coords(&[c0, v])?;
                let lq = base.log_density_coords(&[cq, v])?;
                acc += wt * (lp - lq);
            }
            evals += inner.len() as u64;
            total += w * norm_pdf(z) * acc;
        }
    }
    Ok(KlEstimate { value: total, std_error: 0.0, sample_count: evals, method: EstimateMethod::Quadrature })
}

/// Spearman's rho of a bivariate copula, 12 E[(U - 1/2)(V - 1/2)].
pub fn spearman_rho_copula(c: &CopulaSpec, sample_count: usize, seed: u64) -> Result<RhoEstimate> {
    check_count(sample_count)?;
    if c.dim() != 2 {
        return Err(Error::Unsupported { op: "spearman_rho", family: c.family().name(), dim: c.dim() });
    }
    if c.is_independence() {
        return Ok(RhoEstimate::exact(0.0));
    }
    let parts = run_batches(derive_seed(seed, &[0x7201]), sample_count, |rng, len| {
        let mut m = Moments::default();
        let mut p = [Coord::default(); 2];
        for _ in 0..len {
            c.sample_coords(rng, &mut p)?;
            m.push(12.0 * (p[0].u - 0.5) * (p[1].u - 0.5));
        }
        Ok(m)
    });
    let m = merge(parts)?;
    Ok(RhoEstimate {
        value: m.mean,
        std_error: m.std_error(),
        sample_count: m.count,
        method: EstimateMethod::MonteCarlo,
    })
}

/// Spearman's rho of the bivariate transformed distribution with its own
/// margins: uniform first margin and F_T = E(1, .) for the second.
///
/// Given the atom n, U is uniform on (F(n-1), F(n)] and independent of V,
/// so U is replaced by its conditional mean; F_T is evaluated analytically.
pub fn spearman_rho_transformed(t: &TransformedCopula, sample_count: usize, seed: u64) -> Result<RhoEstimate> {
    check_count(sample_count)?;
    let base = t.base();
    if base.dim() != 2 {
        return Err(Error::Unsupported { op: "spearman_rho", family: base.family().name(), dim: base.dim() });
    }
    if base.is_independence() {
        return Ok(RhoEstimate::exact(0.0));
    }
    let f = t.marginal();
    let mid: Vec<f64> = (0..f.cdf_table().len())
        .map(|n| 0.5 * (f.cdf(n as i64 - 1) + f.cdf(n as i64)) - 0.5)
        .collect();
    let parts = run_batches(derive_seed(seed, &[0x7202]), sample_count, |rng, len| {
        let mut m = Moments::default();
        let mut v = [Coord::default(); 1];
        for _ in 0..len {
            let (_, n) = t.sample_cell(rng, &mut v)?;
            let ft = t.second_margin_cdf_coords(&v)?;
            m.push(12.0 * mid[n] * (ft - 0.5));
        }
        Ok(m)
    });
    let m = merge(parts)?;
    Ok(RhoEstimate {
        value: m.mean,
        std_error: m.std_error(),
        sample_count: m.count,
        method: EstimateMethod::MonteCarlo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginal::DiscreteMarginal;

    #[test]
    fn kl_of_identical_laws_is_exactly_zero() {
        let c = CopulaSpec::clayton(2, 0.857).unwrap();
        let est = kl_divergence(
            |x| c.density(x),
            |rng, x| {
                let p = c.sample_with(rng, 1)?;
                x.copy_from_slice(p.row(0));
                Ok(())
            },
            |x| c.density(x),
            2,
            5000,
            1,
        )
        .unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn fast_path_agrees_with_generic_route() {
        let t = TransformedCopula::new(
            CopulaSpec::gaussian(2, 0.454).unwrap(),
            DiscreteMarginal::poisson(1.0).unwrap(),
            0.5,
        )
        .unwrap();
        let c = t.base().clone();
        let generic = kl_divergence(
            |x| c.density(x),
            |rng, x| {
                let p = c.sample_with(rng, 1)?;
                x.copy_from_slice(p.row(0));
                Ok(())
            },
            |x| t.density(x[0], &x[1..]),
            2,
            200_000,
            2,
        )
        .unwrap();
        let fast = kl_copula_vs_transformed(&t, 200_000, 3).unwrap();
        let se = (generic.std_error.powi(2) + fast.std_error.powi(2)).sqrt();
        assert!((generic.value - fast.value).abs() < 4.0 * se, "{generic:?} vs {fast:?}");
    }

    #[test]
    fn quadrature_agrees_with_monte_carlo() {
        for (c, lam, alpha) in [
            (CopulaSpec::gaussian(2, -0.951).unwrap(), 0.1, 0.25),
            (CopulaSpec::clayton(2, 0.857).unwrap(), 1.0, 1.0),
            (CopulaSpec::gumbel(2, 1.429).unwrap(), 5.0, 0.5),
        ] {
            let t = TransformedCopula::new(c, DiscreteMarginal::poisson(lam).unwrap(), alpha).unwrap();
            let q = kl_quadrature(&t, 128).unwrap();
            let mc = kl_copula_vs_transformed(&t, 200_000, 4).unwrap();
            assert!((q.value - mc.value).abs() < 4.0 * mc.std_error + 1e-3, "{q:?} vs {mc:?}");
        }
    }

    #[test]
    fn independence_estimates_are_exact() {
        let ind = CopulaSpec::clayton(2, 0.0).unwrap();
        assert_eq!(spearman_rho_copula(&ind, 10, 1).unwrap(), RhoEstimate::exact(0.0));
        let t = TransformedCopula::new(ind, DiscreteMarginal::poisson(1.0).unwrap(), 0.5).unwrap();
        assert_eq!(kl_copula_vs_transformed(&t, 10, 1).unwrap(), KlEstimate::exact(0.0));
        assert_eq!(spearman_rho_transformed(&t, 10, 1).unwrap(), RhoEstimate::exact(0.0));
    }

    #[test]
    fn gaussian_rho_matches_arcsine_law() {
        let c = CopulaSpec::gaussian(2, 0.454).unwrap();
        let r = spearman_rho_copula(&c, 200_000, 9).unwrap();
        let want = 6.0 / std::f64::consts::PI * (0.454f64 / 2.0).asin();
        assert!((r.value - want).abs() < 4.0 * r.std_error);
    }
}
