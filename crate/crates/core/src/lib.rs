//! Outlier-immune data-driven linear power flow (DD-LPF) model construction.
//!
//! Pipeline: parse a network case ([`netcase`]), generate power-flow samples
//! and corrupt them with gross errors ([`datagen`]), fit affine models with
//! baseline robust estimators ([`estimators`]) or the trimmed mixed-integer
//! fit and its accelerations ([`trimmed`]), and score them ([`eval`]).

pub mod datagen;
pub mod estimators;
pub mod eval;
pub mod linalg;
pub mod netcase;
pub mod powerflow;
pub mod trimmed;
