//! Inverse models for the two-term exponential hardening law.
//!
//! The law `R(eps, p)` is invariant under swapping its two terms, so the
//! inverse map from a stress curve to parameters is two-valued. This crate
//! generates space-filling datasets, trains three inverse networks
//! (plain MSE regression, a forward-model residual loss, and a two-expert
//! mixture-density network) from scratch, and benchmarks them in curve space.

pub mod benchmark;
pub mod cli;
pub mod curve_metric;
pub mod dataset;
pub mod error;
pub mod material_model;
pub mod models;
pub mod nn_core;

pub use error::{Error, Result};
pub use material_model::{evaluate_curve, grad_params, hardening_stress, permute, MaterialParams, StrainGrid, StressCurve};
pub use models::{InverseMap, InverseModel, InverseModelKind};
