//! Continuous marginals G for the mixed model.

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_ln_pdf, norm_quantile};

/// An absolutely continuous law with strictly increasing CDF on its support.
pub trait ContinuousMarginal: Send + Sync + std::fmt::Debug {
    fn cdf(&self, y: f64) -> f64;
    fn quantile(&self, p: f64) -> f64;
    fn ln_pdf(&self, y: f64) -> f64;
    fn pdf(&self, y: f64) -> f64 {
        self.ln_pdf(y).exp()
    }
    /// Interval carrying the mass, possibly infinite.
    fn support(&self) -> (f64, f64);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMarginal {
    pub mean: f64,
    pub sd: f64,
}

impl NormalMarginal {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
            return Err(Error::InvalidParameter(format!("normal needs finite mean and sd > 0, got ({mean}, {sd})")));
        }
        Ok(NormalMarginal { mean, sd })
    }
}

impl ContinuousMarginal for NormalMarginal {
    fn cdf(&self, y: f64) -> f64 {
        norm_cdf((y - self.mean) / self.sd)
    }
    fn quantile(&self, p: f64) -> f64 {
        self.mean + self.sd * norm_quantile(p)
    }
    fn ln_pdf(&self, y: f64) -> f64 {
        norm_ln_pdf((y - self.mean) / self.sd) - self.sd.ln()
    }
    fn support(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformMarginal {
    pub lo: f64,
    pub hi: f64,
}

impl UniformMarginal {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!("uniform needs lo < hi, got ({lo}, {hi})")));
        }
        Ok(UniformMarginal { lo, hi })
    }

    pub fn standard() -> Self {
        UniformMarginal { lo: 0.0, hi: 1.0 }
    }
}

impl ContinuousMarginal for UniformMarginal {
    fn cdf(&self, y: f64) -> f64 {
        ((y - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
    fn quantile(&self, p: f64) -> f64 {
        self.lo + p * (self.hi - self.lo)
    }
    fn ln_pdf(&self, y: f64) -> f64 {
        if y >= self.lo && y <= self.hi {
            -(self.hi - self.lo).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
    fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}
