//! Skeletal-landmark sign recognition.
//!
//! The crate covers the whole pipeline for isolated-sign classification from
//! per-frame body and hand landmarks:
//!
//! - [`landmark`]: the landmark CSV format, clip grouping, imputation, frame
//!   sampling and fixed-length clip tensors with an end-of-sequence frame.
//! - [`tensor`]: a small dense tensor engine with reverse-mode differentiation.
//! - [`model`]: a transformer encoder classifier over clip tensors.
//! - [`training`]: loss, Adam, plateau scheduling, stratified splits and metrics.
//! - [`checkpoint`], [`segment`], [`infer`]: model files, motion-triggered clip
//!   segmentation and streaming top-k inference.
//! - [`config`], [`cli`]: the flat run-configuration file and the `skelsign`
//!   command line.
//! - [`synthetic`]: seeded drift and motion-burst generators used by tests and
//!   the demo.

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod infer;
pub mod landmark;
pub mod model;
pub mod segment;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
