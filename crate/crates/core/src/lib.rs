//! Temporal GAN video generation with Wasserstein training and singular
//! value clipping.
//!
//! This crate is the pure computational core: dense tensors with a
//! reverse-mode tape, the layer vocabulary (linear, transposed 1D/2D/3D
//! convolution, 3D convolution, batch normalization, activations), the
//! Lipschitz machinery (Jacobi SVD, clipping, certificates), the temporal and
//! image generators plus the 3D critic, the WGAN training loop, a bouncing
//! shapes video synthesizer and the generative adversarial metric.
//!
//! It is `no_std` with `alloc`. File formats, the dataset directory layout and
//! the command line live in the `tgan` companion crate. Enable the `std`
//! feature for runtime SIMD detection in the matrix kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autograd;
pub mod conv;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod lipschitz;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use scalar::{DType, Real};
pub use tensor::{Init, Tensor};
