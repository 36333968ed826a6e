//! Ceiling-map transform of copulas for mixed discrete-continuous models,
//! divergence and rank-correlation experiments, and a transformed Gaussian
//! collective risk model.

pub mod continuous;
pub mod copula;
pub mod crm;
pub mod error;
pub mod experiments;
pub mod marginal;
pub mod metrics;
pub mod quadrature;
pub mod special;
pub mod streams;
pub mod transform;
