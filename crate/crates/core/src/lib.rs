//! Sufficient dimension reduction for matrix- and tensor-valued predictors
//! with principal support matrix machines (PSMM) and their tensor extension
//! (PSTM).
//!
//! The estimation pipeline is:
//!
//! 1. fit the matrix-normal mean and Kronecker covariance factors ([`matnorm`]);
//! 2. slice the response at its empirical quantiles ([`pipeline::slice_labels`]);
//! 3. fit one rank-1 support matrix machine per slice ([`smm`]), each half-step
//!    solved as an SVM dual by SMO ([`qp`]);
//! 4. sum the per-slice direction outer products and take leading
//!    eigenvectors, optionally choosing the dimension by a penalized
//!    eigenvalue criterion ([`pipeline`]).
//!
//! [`synth`] generates the synthetic benchmark models and measures subspace
//! distances; [`io`] implements the on-disk formats used by the `psmm` CLI.

pub mod cli;
pub mod data;
pub mod error;
pub mod io;
pub mod linalg;
pub mod matnorm;
pub mod pipeline;
pub mod qp;
pub mod smm;
pub mod synth;
pub mod tensor;

pub use data::{MatrixDataset, TensorDataset};
pub use error::{Error, Result};
pub use matnorm::{MatNormParams, TensorNormParams};
pub use pipeline::{PsmmConfig, SubspaceEstimate};
pub use tensor::Tensor;
