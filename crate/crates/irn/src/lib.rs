//! Interaction relational networks for two-person skeleton action
//! recognition.
//!
//! The crate is organised as a pipeline:
//!
//! * [`autodiff`] — dense f64 tensors, a reverse-mode tape, Adam, an LSTM
//!   cell and a finite-difference gradient checker;
//! * [`skeleton`] — dataset ingestion (native formats, per-frame pose
//!   streams, a canonical JSON interchange), joint subsampling, temporal
//!   windowing, body-identity tracking, synthetic data and fold splits;
//! * [`pairing`] — enumeration of joint pairs between and within the two
//!   people and assembly of the pair-wise network inputs;
//! * [`model`] — the relational network variants and their checkpoints;
//! * [`train`] — initialization, augmentation, the training loop, staged
//!   pre-training and evaluation;
//! * [`report`] — confusion matrices and deterministic result files;
//! * [`cli`] — configuration files and the command-line entry points.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod model;
pub mod pairing;
pub mod report;
pub mod skeleton;
pub mod train;

pub use error::{Error, Result};
