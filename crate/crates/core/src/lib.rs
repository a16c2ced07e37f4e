//! Alternating Updates for transformers: a small reverse-mode autodiff engine,
//! a pre-LN transformer, width-wise and sequence-wise AltUp layers, memory
//! lookup layers, a closed-form cost model, collision analysis for the lookup
//! hashes and a training harness.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (implemented for
//! `f32` and `f64`). The aliases below fix the precision for common use.

pub mod autodiff;
pub mod error;
pub mod scalar;
pub mod tensor;
pub mod params;
pub mod transformer;
pub mod altup;
pub mod seq_altup;
pub mod memory;
pub mod lsh_analysis;
pub mod model;
pub mod cost;
pub mod harness;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
