//! Parametric copula families: densities, CDFs, first-coordinate
//! conditional CDFs, samplers and the Kendall tau parameter map.
//!
//! Coordinate 0 is the one that gets paired with the discrete margin; the
//! remaining coordinates belong to the continuous margins.

mod archimedean;
mod elliptical;

use crate::error::{Error, Result};
use crate::quadrature::integrate;
use crate::streams::{derive_seed, run_batches};
use archimedean::{Clayton, Gumbel};
use elliptical::Elliptical;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Density evaluation clamps coordinates into `[CLAMP_LO, CLAMP_HI]`.
pub const CLAMP_LO: f64 = 1e-12;
pub const CLAMP_HI: f64 = 1.0 - 1e-12;

/// Default Student t degrees of freedom.
pub const DEFAULT_DOF: f64 = 4.0;

#[inline]
pub fn clamp_unit(u: f64) -> f64 {
    u.clamp(CLAMP_LO, CLAMP_HI)
}

/// Uniform draw on the open interval (0, 1).
#[inline]
pub(crate) fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Independence,
    Gaussian,
    StudentT,
    Clayton,
    Gumbel,
    FgmPerturbed,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Independence => "independence",
            Family::Gaussian => "gaussian",
            Family::StudentT => "student-t",
            Family::Clayton => "clayton",
            Family::Gumbel => "gumbel",
            Family::FgmPerturbed => "fgm",
        }
    }

    /// Parameter value that gives the product copula, if any.
    pub fn independence_theta(self) -> Option<f64> {
        match self {
            Family::Independence | Family::Gaussian | Family::Clayton | Family::FgmPerturbed => {
                Some(0.0)
            }
            Family::Gumbel => Some(1.0),
            Family::StudentT => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "independence" | "product" => Ok(Family::Independence),
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "student-t" | "studentt" | "t" => Ok(Family::StudentT),
            "clayton" => Ok(Family::Clayton),
            "gumbel" => Ok(Family::Gumbel),
            "fgm" | "fgm-perturbed" | "fgmperturbed" => Ok(Family::FgmPerturbed),
            other => Err(Error::Config(format!("unknown copula family '{other}'"))),
        }
    }
}

/// Family-specific latent form of a coordinate, cached so that quantile
/// functions are evaluated once per value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Coord {
    pub u: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone)]
enum Kernel {
    Independence,
    Fgm { theta: f64 },
    Elliptical(Box<Elliptical>),
    Clayton(Clayton),
    Gumbel(Gumbel),
}

/// A parametric copula of dimension `dim`.
#[derive(Debug, Clone)]
pub struct CopulaSpec {
    family: Family,
    dim: usize,
    theta: f64,
    dof: Option<f64>,
    correlation: Option<DMatrix<f64>>,
    kernel: Kernel,
}

/// Row-major matrix of sampled points.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim));
        Points { dim, data }
    }
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn exchangeable(dim: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rho })
}

impl CopulaSpec {
    /// Exchangeable member of `family` with scalar parameter `theta`.
    /// `dof` must be given exactly for Student t.
    pub fn new(family: Family, dim: usize, theta: f64, dof: Option<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter(format!("copula dimension must be >= 2, got {dim}")));
        }
        if !theta.is_finite() {
            return Err(Error::InvalidParameter("theta must be finite".into()));
        }
        if dof.is_some() != (family == Family::StudentT) {
            return Err(Error::InvalidParameter(
                "degrees of freedom are required for Student t and only for it".into(),
            ));
        }
        let kernel = match family {
            Family::Independence => Kernel::Independence,
            Family::Gaussian | Family::StudentT => {
                if !(theta > -1.0 && theta < 1.0) {
                    return Err(Error::InvalidParameter(format!("correlation must be in (-1,1), got {theta}")));
                }
                if let Some(nu) = dof {
                    check_dof(nu)?;
                }
                Kernel::Elliptical(Box::new(Elliptical::new(&exchangeable(dim, theta), dof)?))
            }
            Family::Clayton => {
                if theta < 0.0 {
                    return Err(Error::InvalidParameter(format!("Clayton theta must be >= 0, got {theta}")));
                }
                if theta == 0.0 {
                    Kernel::Independence
                } else {
                    Kernel::Clayton(Clayton::new(dim, theta))
                }
            }
            Family::Gumbel => {
                if theta < 1.0 {
                    return Err(Error::InvalidParameter(format!("Gumbel theta must be >= 1, got {theta}")));
                }
                if theta == 1.0 {
                    Kernel::Independence
                } else {
                    Kernel::Gumbel(Gumbel::new(dim, theta))
                }
            }
            Family::FgmPerturbed => {
                if !(-1.0..=1.0).contains(&theta) {
                    return Err(Error::InvalidParameter(format!("FGM theta must be in [-1,1], got {theta}")));
                }
                if theta == 0.0 {
                    Kernel::Independence
                } else {
                    Kernel::Fgm { theta }
                }
            }
        };
        Ok(CopulaSpec { family, dim, theta, dof, correlation: None, kernel })
    }

    pub fn independence(dim: usize) -> Result<Self> {
        Self::new(Family::Independence, dim, 0.0, None)
    }
    pub fn gaussian(dim: usize, theta: f64) -> Result<Self> {
        Self::new(Family::Gaussian, dim, theta, None)
    }
    pub fn student_t(dim: usize, theta: f64, dof: f64) -> Result<Self> {
        Self::new(Family::StudentT, dim, theta, Some(dof))
    }
    pub fn clayton(dim: usize, theta: f64) -> Result<Self> {
        Self::new(Family::Clayton, dim, theta, None)
    }
    pub fn gumbel(dim: usize, theta: f64) -> Result<Self> {
        Self::new(Family::Gumbel, dim, theta, None)
    }
    pub fn fgm(dim: usize, theta: f64) -> Result<Self> {
        Self::new(Family::FgmPerturbed, dim, theta, None)
    }

    /// Gaussian or Student t copula with a full correlation matrix.
    pub fn with_correlation(family: Family, correlation: DMatrix<f64>, dof: Option<f64>) -> Result<Self> {
        if !matches!(family, Family::Gaussian | Family::StudentT) {
            return Err(Error::InvalidParameter(format!(
                "a correlation matrix only applies to elliptical families, not {family}"
            )));
        }
        if dof.is_some() != (family == Family::StudentT) {
            return Err(Error::InvalidParameter(
                "degrees of freedom are required for Student t and only for it".into(),
            ));
        }
        if let Some(nu) = dof {
            check_dof(nu)?;
        }
        let dim = correlation.nrows();
        if dim < 2 {
            return Err(Error::InvalidParameter(format!("copula dimension must be >= 2, got {dim}")));
        }
        let ell = Elliptical::new(&correlation, dof)?;
        let theta = correlation[(1, 0)];
        Ok(CopulaSpec {
            family,
            dim,
            theta,
            dof,
            correlation: Some(correlation),
            kernel: Kernel::Elliptical(Box::new(ell)),
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn dof(&self) -> Option<f64> {
        self.dof
    }
    pub fn correlation(&self) -> Option<&DMatrix<f64>> {
        self.correlation.as_ref()
    }

    /// True when the instance is the product copula.
    pub fn is_independence(&self) -> bool {
        match &self.kernel {
            Kernel::Independence => true,
            Kernel::Elliptical(_) => {
                self.family == Family::Gaussian && self.correlation.is_none() && self.theta == 0.0
            }
            _ => false,
        }
    }

    fn unsupported(&self, op: &'static str) -> Error {
        Error::Unsupported { op, family: self.family.name(), dim: self.dim }
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<()> {
        if got == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }

    // ---- coordinate-level kernels, shared with the transform module ----

    #[inline]
    pub(crate) fn coord(&self, u: f64) -> Coord {
        match &self.kernel {
            Kernel::Independence | Kernel::Fgm { .. } => Coord { u, a: 0.0, b: 0.0 },
            Kernel::Elliptical(e) => e.coord(u),
            Kernel::Clayton(c) => c.coord(u),
            Kernel::Gumbel(g) => g.coord(u),
        }
    }

    /// Coordinate for a value that may sit on the boundary; families with a
    /// latent transform see it clamped into the density band.
    #[inline]
    pub(crate) fn coord_clamped(&self, u: f64) -> Coord {
        match &self.kernel {
            Kernel::Independence | Kernel::Fgm { .. } => Coord { u, a: 0.0, b: 0.0 },
            _ => self.coord(clamp_unit(u)),
        }
    }

    /// Bivariate conditional quantile: the `v` with `partial1(u0, v) = w`.
    pub(crate) fn conditional_quantile_coord(&self, c0: &Coord, w: f64) -> Result<Coord> {
        if self.dim != 2 {
            return Err(self.unsupported("conditional_quantile"));
        }
        Ok(match &self.kernel {
            Kernel::Independence => Coord { u: w, a: 0.0, b: 0.0 },
            Kernel::Fgm { theta } => Coord { u: fgm_conditional_quantile(*theta, c0.u, w), a: 0.0, b: 0.0 },
            Kernel::Elliptical(e) => e.conditional_quantile(c0, w),
            Kernel::Clayton(c) => c.conditional_quantile(c0, w),
            Kernel::Gumbel(g) => g.conditional_quantile(c0, w),
        })
    }

    pub(crate) fn log_density_coords(&self, p: &[Coord]) -> Result<f64> {
        match &self.kernel {
            Kernel::Independence => Ok(0.0),
            Kernel::Fgm { theta } => {
                Ok((theta * (1.0 - 2.0 * p[0].u) * (1.0 - 2.0 * p[1].u)).ln_1p())
            }
            Kernel::Elliptical(e) => Ok(e.log_density(p)),
            Kernel::Clayton(c) => Ok(c.log_density(p)),
            Kernel::Gumbel(g) => g.log_density(p),
        }
    }

    pub(crate) fn partial1_coords(&self, c0: &Coord, rest: &[Coord]) -> Result<f64> {
        if rest.iter().any(|c| c.u == 0.0) {
            return Ok(0.0);
        }
        if rest.iter().all(|c| c.u == 1.0) {
            return Ok(1.0);
        }
        match &self.kernel {
            Kernel::Independence => Ok(rest.iter().map(|c| c.u).product()),
            Kernel::Fgm { theta } => {
                let prod: f64 = rest.iter().map(|c| c.u).product();
                let v1 = rest[0].u;
                let others: f64 = rest[1..].iter().map(|c| c.u).product();
                Ok(prod + theta * (1.0 - 2.0 * c0.u) * v1 * (1.0 - v1) * others)
            }
            Kernel::Elliptical(e) => e.partial1(c0, rest),
            Kernel::Clayton(c) => Ok(c.partial1(c0, rest)),
            Kernel::Gumbel(g) => Ok(g.partial1(c0, rest)),
        }
    }

    pub(crate) fn sample_coords<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [Coord]) -> Result<()> {
        match &self.kernel {
            Kernel::Independence => {
                for c in out.iter_mut() {
                    c.u = open01(rng);
                }
                Ok(())
            }
            Kernel::Fgm { .. } => {
                out[0].u = open01(rng);
                let c0 = out[0];
                self.conditional_sample_coords(&c0, rng, &mut out[1..])
            }
            Kernel::Elliptical(e) => {
                e.sample(rng, out);
                Ok(())
            }
            Kernel::Clayton(c) => {
                c.sample(rng, out);
                Ok(())
            }
            Kernel::Gumbel(g) => g.sample(rng, out),
        }
    }

    pub(crate) fn conditional_sample_coords<R: Rng + ?Sized>(
        &self,
        c0: &Coord,
        rng: &mut R,
        out: &mut [Coord],
    ) -> Result<()> {
        match &self.kernel {
            Kernel::Independence => {
                for c in out.iter_mut() {
                    c.u = open01(rng);
                }
                Ok(())
            }
            Kernel::Fgm { theta } => {
                out[0].u = fgm_conditional_quantile(*theta, c0.u, open01(rng));
                for c in out[1..].iter_mut() {
                    c.u = open01(rng);
                }
                Ok(())
            }
            Kernel::Elliptical(e) => {
                e.conditional_sample(c0, rng, out);
                Ok(())
            }
            Kernel::Clayton(c) => {
                c.conditional_sample(c0, rng, out);
                Ok(())
            }
            Kernel::Gumbel(g) => g.conditional_sample(c0, rng, out),
        }
    }

    /// Whether the density is available for this family and dimension.
    pub fn supports_density(&self) -> bool {
        !matches!(&self.kernel, Kernel::Gumbel(g) if g.d != 2)
    }

    fn coords_clamped(&self, point: &[f64]) -> Result<Vec<Coord>> {
        point
            .iter()
            .map(|&u| {
                if (0.0..=1.0).contains(&u) {
                    Ok(self.coord_clamped(u))
                } else {
                    Err(Error::Domain(format!("coordinate {u} outside [0,1]")))
                }
            })
            .collect()
    }

    fn coords_exact(&self, point: &[f64]) -> Result<Vec<Coord>> {
        point
            .iter()
            .map(|&u| {
                if (0.0..=1.0).contains(&u) {
                    Ok(self.coord(u))
                } else {
                    Err(Error::Domain(format!("coordinate {u} outside [0,1]")))
                }
            })
            .collect()
    }

    // ---- public operations ----

    /// Natural log of the copula density. Coordinates are clamped into the
    /// band `[1e-12, 1 - 1e-12]`.
    pub fn log_density(&self, point: &[f64]) -> Result<f64> {
        self.check_len(point.len(), self.dim)?;
        if !self.supports_density() {
            return Err(self.unsupported("density"));
        }
        let p = self.coords_clamped(point)?;
        self.log_density_coords(&p)
    }

    /// Copula density c(point).
    pub fn density(&self, point: &[f64]) -> Result<f64> {
        self.log_density(point).map(f64::exp)
    }

    /// First-coordinate partial derivative of C: the conditional CDF of the
    /// remaining coordinates given the first equals `u`.
    pub fn partial1(&self, u: f64, v: &[f64]) -> Result<f64> {
        self.check_len(v.len(), self.dim - 1)?;
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("partial1 needs u in (0,1), got {u}")));
        }
        let c0 = self.coord_clamped(u);
        let rest = self.coords_exact(v)?;
        self.partial1_coords(&c0, &rest)
    }

    /// Copula distribution function C(point).
    pub fn cdf(&self, point: &[f64]) -> Result<f64> {
        self.check_len(point.len(), self.dim)?;
        if point.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(Error::Domain("cdf point outside [0,1]^d".into()));
        }
        if point.contains(&0.0) {
            return Ok(0.0);
        }
        let keep: Vec<usize> = (0..self.dim).filter(|&i| point[i] < 1.0).collect();
        match keep.len() {
            0 => return Ok(1.0),
            1 => return Ok(point[keep[0]]),
            _ => {}
        }
        match &self.kernel {
            Kernel::Independence => Ok(point.iter().product()),
            Kernel::Fgm { theta } => {
                let prod: f64 = point.iter().product();
                let (u, v1) = (point[0], point[1]);
                let others: f64 = point[2..].iter().product();
                Ok(prod + theta * u * (1.0 - u) * v1 * (1.0 - v1) * others)
            }
            Kernel::Clayton(c) => Ok(c.cdf(&self.coords_exact(point)?)),
            Kernel::Gumbel(g) => {
                let sub: Vec<f64> = keep.iter().map(|&i| point[i]).collect();
                Ok(g.cdf(&self.coords_exact(&sub)?))
            }
            Kernel::Elliptical(e) => {
                let full = match &self.correlation {
                    Some(m) => m.clone(),
                    None => exchangeable(self.dim, self.theta),
                };
                let sub: Vec<f64> = keep.iter().map(|&i| point[i]).collect();
                let owned;
                let ell: &Elliptical = if keep.len() == self.dim {
                    e
                } else {
                    owned = Elliptical::margin(&full, &keep, self.dof)?;
                    &owned
                };
                elliptical_cdf(ell, &full, &keep, &sub, self)
            }
        }
    }

    /// Draws from C using an explicit generator.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Points> {
        let mut data = Vec::with_capacity(count * self.dim);
        let mut buf = vec![Coord::default(); self.dim];
        for _ in 0..count {
            self.sample_coords(rng, &mut buf)?;
            data.extend(buf.iter().map(|c| c.u));
        }
        Ok(Points::new(self.dim, data))
    }

    /// Draws from the law with density `v -> c(u0, v)`.
    pub fn conditional_sample_with<R: Rng + ?Sized>(&self, u0: f64, rng: &mut R, count: usize) -> Result<Points> {
        if !(u0 > 0.0 && u0 < 1.0) {
            return Err(Error::Domain(format!("conditioning value must be in (0,1), got {u0}")));
        }
        let m = self.dim - 1;
        let c0 = self.coord_clamped(u0);
        let mut data = Vec::with_capacity(count * m);
        let mut buf = vec![Coord::default(); m];
        for _ in 0..count {
            self.conditional_sample_coords(&c0, rng, &mut buf)?;
            data.extend(buf.iter().map(|c| c.u));
        }
        Ok(Points::new(m, data))
    }

    /// Checks sampler support without drawing.
    pub fn supports_sampling(&self) -> bool {
        !matches!(&self.kernel, Kernel::Gumbel(g) if g.d != 2)
    }
}

fn elliptical_cdf(
    ell: &Elliptical,
    full: &DMatrix<f64>,
    keep: &[usize],
    sub: &[f64],
    spec: &CopulaSpec,
) -> Result<f64> {
    if ell.dof.is_none() && ell.d == 2 {
        let z0 = crate::special::norm_quantile(sub[0]);
        let z1 = crate::special::norm_quantile(sub[1]);
        return Ok(crate::special::bvn_cdf(z0, z1, full[(keep[0], keep[1])]));
    }
    // C(u, v) = int_0^u d1C(s, v) ds
    let rest: Vec<Coord> = sub[1..].iter().map(|&v| ell.coord(v)).collect();
    let mut failure = None;
    let res = integrate(
        |s| match ell.partial1(&ell.coord(s), &rest) {
            Ok(x) => x,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        0.0,
        sub[0],
        &[],
        1e-10,
        1e-14,
    )?;
    if let Some(e) = failure {
        return Err(match e {
            Error::Unsupported { op, .. } => Error::Unsupported { op, family: spec.family.name(), dim: spec.dim },
            other => other,
        });
    }
    Ok(res.value.clamp(0.0, 1.0))
}

/// Inverts w = v + a v (1 - v) with a = theta (1 - 2 u0).
fn fgm_conditional_quantile(theta: f64, u0: f64, w: f64) -> f64 {
    let a = theta * (1.0 - 2.0 * u0);
    let disc = ((1.0 + a) * (1.0 + a) - 4.0 * a * w).max(0.0);
    2.0 * w / ((1.0 + a) + disc.sqrt())
}

fn check_dof(nu: f64) -> Result<()> {
    if nu.is_finite() && nu > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("degrees of freedom must be positive, got {nu}")))
    }
}

/// Copula parameter for a given bivariate Kendall tau.
pub fn theta_from_tau(family: Family, tau: f64) -> Result<f64> {
    if !(tau > -1.0 && tau < 1.0) {
        return Err(Error::Domain(format!("Kendall tau must be in (-1,1), got {tau}")));
    }
    match family {
        Family::Gaussian | Family::StudentT => Ok((std::f64::consts::FRAC_PI_2 * tau).sin()),
        Family::Clayton if tau >= 0.0 => Ok(2.0 * tau / (1.0 - tau)),
        Family::Gumbel if tau >= 0.0 => Ok(1.0 / (1.0 - tau)),
        Family::FgmPerturbed if tau.abs() <= 2.0 / 9.0 => Ok(4.5 * tau),
        Family::Independence if tau == 0.0 => Ok(0.0),
        _ => Err(Error::Domain(format!("Kendall tau {tau} is not attainable by the {family} family"))),
    }
}

/// C(point).
pub fn copula_cdf(spec: &CopulaSpec, point: &[f64]) -> Result<f64> {
    spec.cdf(point)
}

/// c(point).
pub fn copula_density(spec: &CopulaSpec, point: &[f64]) -> Result<f64> {
    spec.density(point)
}

/// First-coordinate partial derivative of C at (u, v).
pub fn partial1(spec: &CopulaSpec, u: f64, v: &[f64]) -> Result<f64> {
    spec.partial1(u, v)
}

/// `count` i.i.d. draws from C, reproducible for a given seed and
/// independent of the thread count.
pub fn sample_copula(spec: &CopulaSpec, seed: u64, count: usize) -> Result<Points> {
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    if !spec.supports_sampling() {
        return Err(spec.unsupported("sample"));
    }
    let parts = run_batches(derive_seed(seed, &[0x5a]), count, |rng, len| spec.sample_with(rng, len));
    collect_points(spec.dim, parts)
}

/// `count` draws from the conditional law of the remaining coordinates
/// given that the first equals `u0`.
pub fn conditional_sample(spec: &CopulaSpec, u0: f64, seed: u64, count: usize) -> Result<Points> {
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    if !spec.supports_sampling() {
        return Err(spec.unsupported("conditional_sample"));
    }
    let parts = run_batches(derive_seed(seed, &[0xc0, u0.to_bits()]), count, |rng, len| {
        spec.conditional_sample_with(u0, rng, len)
    });
    collect_points(spec.dim - 1, parts)
}

fn collect_points(dim: usize, parts: Vec<Result<Points>>) -> Result<Points> {
    let mut data = Vec::new();
    for p in parts {
        data.extend_from_slice(p?.as_slice());
    }
    Ok(Points::new(dim, data))
}
