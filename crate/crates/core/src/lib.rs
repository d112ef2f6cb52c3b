//! Bounds on treatment-effect parameters when selection into treatment is
//! driven by multidimensional unobserved heterogeneity.
//!
//! Unknown functions are discretized on constant splines over a partition of
//! `[0,1]^K`, bilinear moment conditions are relaxed with McCormick envelopes,
//! and the resulting linear programs give outer bounds. Sample versions come
//! with regularized support-function confidence intervals.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the `*64` aliases
//! fix the scalar to `f64`.

// Dense kernels index several arrays in lockstep; `!(x > 0)` checks are
// meant to reject NaN as well.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod assemble;
pub mod bernstein;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod model;
pub mod normal;
pub mod quadrature;
pub mod scalar;
pub mod solver;
pub mod tables;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DgpSpec64 = dgp::DgpSpec<f64>;
pub type MomentSet64 = dgp::MomentSet<f64>;
pub type Dataset64 = dgp::Dataset<f64>;
pub type VPartition64 = model::VPartition<f64>;
pub type InstrumentSpace64 = model::InstrumentSpace<f64>;
pub type ConstraintSystem64 = model::ConstraintSystem<f64>;
pub type BoundsResult64 = model::BoundsResult<f64>;
pub type TargetSpec64 = weights::TargetSpec<f64>;
pub type SampleSystem64 = assemble::SampleSystem<f64>;
pub type InferenceResult64 = inference::InferenceResult<f64>;
