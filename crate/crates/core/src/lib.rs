//! Core library for learned LLVM pass ordering.
//!
//! The crate is organised around the training loop's data flow: IR parsing
//! and feature extraction (`ir`), the pass-application environment (`env`),
//! experience storage (`replay`), the latent world model (`model`) and the
//! actor-critic trained inside it (`agent`), plus evaluation utilities
//! (`eval`). `nn` holds the self-contained autodiff these models run on.

pub mod agent;
pub mod env;
pub mod eval;
pub mod ir;
pub mod model;
pub mod nn;
pub mod replay;
pub mod util;
