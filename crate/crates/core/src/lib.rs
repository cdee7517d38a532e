//! Conditioned U-Net for multi-instrument source separation.
//!
//! One masking network separates any of several instruments. A small
//! generator maps a one-hot instrument vector to FiLM coefficients that
//! modulate each encoder block.

pub mod audio;
pub mod conditioning;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod matrix;
pub mod model;
pub mod nn;
pub mod real;
pub mod training;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use real::Real;
