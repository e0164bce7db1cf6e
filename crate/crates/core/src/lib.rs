//! Clue-conditioned score-based diffusion for target source extraction.
//!
//! Numerical code is generic over the scalar through [`scalar::Real`]; the
//! aliases below fix the two precisions in use. Training runs at `f64`,
//! inference may run at `f32`.

// `!(x > 0)` style checks deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod models;
pub mod net;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod sde;
pub mod signal;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};

pub type Spec64 = tensor::SpecTensor<f64>;
pub type Spec32 = tensor::SpecTensor<f32>;
pub type Sde64 = sde::SdeParams<f64>;
pub type Sde32 = sde::SdeParams<f32>;
pub type Model64 = models::TseModel<f64>;
pub type Model32 = models::TseModel<f32>;
pub type Clue64 = models::EnrollmentClue<f64>;
pub type Clue32 = models::EnrollmentClue<f32>;
