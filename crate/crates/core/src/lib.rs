//! Mild solutions of bilinear control systems in Banach spaces and numerical
//! compactness tests for their reachable sets.
//!
//! The crate solves the integral equation
//! `x(t) = e^{At}ξ0 + Σ_i ∫_0^t e^{(t-s)A} u_i(s) f_i(s, x(s)) ds`
//! by certified Picard iteration, then probes the reachable set
//! `{x(T; ξ0, u) : ‖u‖_p ≤ r}` with ε-nets, packing numbers and Hausdorff
//! distances.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod expm;

pub mod cli;
pub mod compactness;
pub mod config;
pub mod controls;
pub mod error;
pub mod operator;
pub mod reachset;
pub mod solver;
pub mod spaces;

pub use error::{Error, Result};
