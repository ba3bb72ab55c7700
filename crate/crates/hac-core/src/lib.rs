//! Core kernels for a desk-scale concept-unlearning lab on dual-encoder
//! contrastive models.
//!
//! Everything in this crate is pure computation over `f64` tensors: a
//! reverse-mode autodiff graph, Lorentz-model hyperbolic geometry with
//! entailment cones, the retain/forget loss family, a seeded synthetic
//! corpus generator, the Adam trainer, and zero-shot / linear-probe
//! evaluation. No files, no threads, no global state; identical inputs
//! produce bitwise-identical outputs.
//!
//! The crate is `no_std + alloc` compatible (the default `std` feature just
//! switches transcendentals from libm to the platform ones). IO, file
//! formats, and the CLI live in the companion `hac-lab` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod math;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
