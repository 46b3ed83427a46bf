//! Multimodal item response theory: IRT, MIRT, M2IRT and M3IRT models,
//! fitting, adaptive subset selection and evaluation harnesses.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, with `*32` variants for single precision.

pub mod cat;
pub mod cli;
pub mod error;
pub mod eval;
pub mod models;
pub mod scalar;
pub mod seed;
pub mod simulate;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use models::{Family, SignConvention};
pub use scalar::Scalar;
pub use tensor::{Format, QualityLabel, ResponseRecord, ResponseTensor};

pub type Model = training::FittedModel<f64>;
pub type Model32 = training::FittedModel<f32>;
pub type FitConfig = training::FitConfig<f64>;
pub type FitConfig32 = training::FitConfig<f32>;
pub type Subject = models::SubjectParams<f64>;
pub type Subject32 = models::SubjectParams<f32>;
pub type Item = models::ItemParams<f64>;
pub type Item32 = models::ItemParams<f32>;
pub type GroundTruth = simulate::GroundTruth<f64>;
pub type GroundTruth32 = simulate::GroundTruth<f32>;
pub type InfoMatrix = cat::InfoMatrix<f64>;
pub type CatSession = cat::CatSession<f64>;
