//! Direct policy optimization for output-feedback H∞ control.

// `!(x <= tol)` is used on purpose so that NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brl;
pub mod error;
pub mod lift;
pub mod linalg;
pub mod lmi;
pub mod lti;
pub mod norm;
pub mod sample;
pub mod scan;
pub mod synth;
pub mod scalar;
pub mod search;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases.
pub type Plant = lti::Plant<f64>;
pub type Controller = lti::Controller<f64>;
pub type ClosedLoop = lti::ClosedLoop<f64>;
pub type Certificate = brl::Certificate<f64>;
pub type CertifiedTriple = lift::CertifiedTriple<f64>;
pub type NormResult = norm::NormResult<f64>;
pub type SearchTrace = search::SearchTrace<f64>;
pub type SynthesisResult = synth::SynthesisResult<f64>;

/// Single-precision aliases.
pub type Plant32 = lti::Plant<f32>;
pub type Controller32 = lti::Controller<f32>;
pub type ClosedLoop32 = lti::ClosedLoop<f32>;
pub type Certificate32 = brl::Certificate<f32>;
pub type CertifiedTriple32 = lift::CertifiedTriple<f32>;
pub type NormResult32 = norm::NormResult<f32>;
