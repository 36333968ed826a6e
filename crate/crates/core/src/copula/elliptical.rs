//! Gaussian and Student t copulas with a full correlation matrix.

use super::Coord;
use crate::error::{Error, Result};
use crate::special::{bvn_cdf, norm_cdf, norm_quantile, student_t_cdf, student_t_quantile};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

#[derive(Debug, Clone)]
pub(crate) struct Elliptical {
    pub d: usize,
    pub dof: Option<f64>,
    /// lower Cholesky factor of R, row-major
    chol: Vec<f64>,
    rinv: Vec<f64>,
    /// -1/2 log det R, plus the gamma-function constant for t
    ln_const: f64,
    /// R[1.., 0]
    r: Vec<f64>,
    /// Cholesky factor of the Schur complement R[1..,1..] - r r^T
    s_chol: Vec<f64>,
    s_sd: Vec<f64>,
    s_rho: f64,
    chi_nu: Option<ChiSquared<f64>>,
    chi_nu1: Option<ChiSquared<f64>>,
}

fn cholesky_flat(m: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let n = m.nrows();
    let ch = nalgebra::Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite)?;
    let l = ch.l();
    let mut flat = vec![0.0; n * n];
    let mut log_det = 0.0;
    for i in 0..n {
        for j in 0..=i {
            flat[i * n + j] = l[(i, j)];
        }
        if !(l[(i, i)] > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        log_det += 2.0 * l[(i, i)].ln();
    }
    Ok((flat, log_det))
}

/// Checks symmetry, unit diagonal and entries in [-1, 1].
pub(crate) fn validate_correlation(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    let n = m.nrows();
    for i in 0..n {
        if (m[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("correlation diagonal entry {i} is {}", m[(i, i)])));
        }
        for j in 0..i {
            let a = m[(i, j)];
            if !a.is_finite() || (a - m[(j, i)]).abs() > 1e-12 || a.abs() > 1.0 {
                return Err(Error::InvalidParameter(format!("correlation entry ({i},{j}) is invalid")));
            }
        }
    }
    Ok(())
}

impl Elliptical {
    pub fn new(r_mat: &DMatrix<f64>, dof: Option<f64>) -> Result<Self> {
        validate_correlation(r_mat)?;
        let d = r_mat.nrows();
        let (chol, log_det) = cholesky_flat(r_mat)?;
        let inv = nalgebra::Cholesky::new(r_mat.clone())
            .ok_or(Error::NotPositiveDefinite)?
            .inverse();
        let rinv: Vec<f64> = (0..d * d).map(|k| inv[(k / d, k % d)]).collect();

        let m = d - 1;
        let r: Vec<f64> = (1..d).map(|i| r_mat[(i, 0)]).collect();
        let mut s = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                s[(i, j)] = r_mat[(i + 1, j + 1)] - r[i] * r[j];
            }
        }
        let (s_chol, _) = cholesky_flat(&s)?;
        let s_sd: Vec<f64> = (0..m).map(|i| s[(i, i)].sqrt()).collect();
        let s_rho = if m == 2 { s[(0, 1)] / (s_sd[0] * s_sd[1]) } else { 0.0 };

        let df = d as f64;
        let ln_const = match dof {
            None => -0.5 * log_det,
            Some(nu) => {
                ln_gamma(0.5 * (nu + df)) + (df - 1.0) * ln_gamma(0.5 * nu)
                    - df * ln_gamma(0.5 * (nu + 1.0))
                    - 0.5 * log_det
            }
        };
        let chi_nu = dof.map(|nu| ChiSquared::new(nu).expect("dof validated"));
        let chi_nu1 = dof.map(|nu| ChiSquared::new(nu + 1.0).expect("dof validated"));
        Ok(Elliptical { d, dof, chol, rinv, ln_const, r, s_chol, s_sd, s_rho, chi_nu, chi_nu1 })
    }

    /// Sub-copula on the given coordinate indices.
    pub fn margin(r_mat: &DMatrix<f64>, keep: &[usize], dof: Option<f64>) -> Result<Self> {
        let k = keep.len();
        let sub = DMatrix::from_fn(k, k, |i, j| r_mat[(keep[i], keep[j])]);
        Elliptical::new(&sub, dof)
    }

    #[inline]
    pub fn coord(&self, u: f64) -> Coord {
        match self.dof {
            None => Coord { u, a: norm_quantile(u), b: 0.0 },
            Some(nu) => {
                let x = student_t_quantile(u, nu);
                Coord { u, a: x, b: (x * x / nu).ln_1p() }
            }
        }
    }

    #[inline]
    fn quad_form(&self, p: &[Coord]) -> f64 {
        let d = self.d;
        let mut q = 0.0;
        for i in 0..d {
            let xi = p[i].a;
            let row = &self.rinv[i * d..(i + 1) * d];
            let mut acc = row[i] * xi;
            for j in 0..i {
                acc += 2.0 * row[j] * p[j].a;
            }
            q += acc * xi;
        }
        q
    }

    pub fn log_density(&self, p: &[Coord]) -> f64 {
        let q = self.quad_form(p);
        match self.dof {
            None => {
                let zz: f64 = p.iter().map(|c| c.a * c.a).sum();
                self.ln_const - 0.5 * (q - zz)
            }
            Some(nu) => {
                let df = self.d as f64;
                let marg: f64 = p.iter().map(|c| c.b).sum();
                self.ln_const - 0.5 * (nu + df) * (q / nu).ln_1p() + 0.5 * (nu + 1.0) * marg
            }
        }
    }

    pub fn partial1(&self, c0: &Coord, rest: &[Coord]) -> Result<f64> {
        let m = self.d - 1;
        match self.dof {
            None => {
                let h = |i: usize| (rest[i].a - self.r[i] * c0.a) / self.s_sd[i];
                match m {
                    1 => Ok(norm_cdf(h(0))),
                    2 => Ok(bvn_cdf(h(0), h(1), self.s_rho)),
                    _ => Err(Error::Unsupported { op: "partial1", family: "gaussian", dim: self.d }),
                }
            }
            Some(nu) => {
                if m != 1 {
                    return Err(Error::Unsupported { op: "partial1", family: "student-t", dim: self.d });
                }
                let scale = ((nu + c0.a * c0.a) / (nu + 1.0)).sqrt() * self.s_sd[0];
                Ok(student_t_cdf((rest[0].a - self.r[0] * c0.a) / scale, nu + 1.0))
            }
        }
    }

    fn finish(&self, x: f64) -> Coord {
        match self.dof {
            None => Coord { u: norm_cdf(x), a: x, b: 0.0 },
            Some(nu) => Coord { u: student_t_cdf(x, nu), a: x, b: (x * x / nu).ln_1p() },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [Coord]) {
        let d = self.d;
        let mut buf = [0.0f64; 16];
        let mut heap = Vec::new();
        let e = scratch(&mut buf, &mut heap, d);
        for x in e.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let w = match &self.chi_nu {
            None => 1.0,
            Some(chi) => (self.dof.unwrap() / chi.sample(rng).max(f64::MIN_POSITIVE)).sqrt(),
        };
        for i in 0..d {
            let row = &self.chol[i * d..i * d + i + 1];
            let z: f64 = row.iter().zip(e.iter()).map(|(l, x)| l * x).sum();
            out[i] = self.finish(z * w);
        }
    }

    pub fn conditional_sample<R: Rng + ?Sized>(&self, c0: &Coord, rng: &mut R, out: &mut [Coord]) {
        let m = self.d - 1;
        let mut buf = [0.0f64; 16];
        let mut heap = Vec::new();
        let e = scratch(&mut buf, &mut heap, m);
        for x in e.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let w = match (&self.chi_nu1, self.dof) {
            (Some(chi), Some(nu)) => ((nu + c0.a * c0.a) / chi.sample(rng).max(f64::MIN_POSITIVE)).sqrt(),
            _ => 1.0,
        };
        for i in 0..m {
            let row = &self.s_chol[i * m..i * m + i + 1];
            let y: f64 = row.iter().zip(e.iter()).map(|(l, x)| l * x).sum();
            out[i] = self.finish(self.r[i] * c0.a + w * y);
        }
    }
}

impl Elliptical {
    /// Bivariate conditional quantile given the first coordinate.
    pub fn conditional_quantile(&self, c0: &Coord, w: f64) -> Coord {
        match self.dof {
            None => self.finish(self.r[0] * c0.a + self.s_sd[0] * norm_quantile(w)),
            Some(nu) => {
                let scale = ((nu + c0.a * c0.a) / (nu + 1.0)).sqrt() * self.s_sd[0];
                self.finish(self.r[0] * c0.a + scale * student_t_quantile(w, nu + 1.0))
            }
        }
    }
}

fn scratch<'a>(buf: &'a mut [f64; 16], heap: &'a mut Vec<f64>, n: usize) -> &'a mut [f64] {
    if n <= buf.len() {
        &mut buf[..n]
    } else {
        heap.resize(n, 0.0);
        &mut heap[..]
    }
}
