//! Core of the OSSL trainer.
//!
//! A convolutional backbone feeds three linear heads (semantic, rotation,
//! auxiliary). Training alternates an upper SGD step on `L_ch + L_rh` over
//! the backbone, semantic and rotation parameters with a lower SGD step on
//! `L_ch - L_ah` over the backbone and auxiliary parameters, the semantic
//! head held fixed. Two baselines (`L_ch` alone, `L_ch + L_rh`) share the
//! same machinery.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! clocks or the command line lives in the `ossl-cli` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bilevel;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod rotation;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Tape, Tensor, Var};
