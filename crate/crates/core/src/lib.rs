#![no_std]
//! Speaker recognition with attentive statistics pooling.
//!
//! The crate covers the numerical core of a small speaker-verification
//! toolkit: acoustic front end, an x-vector style embedding network with
//! attentive statistics pooling, a diagonal GMM-UBM, i-vector extraction from
//! (optionally attention-weighted) Baum-Welch statistics, a PLDA back end,
//! detection metrics and a synthetic corpus generator. It needs only `alloc`;
//! file formats and the command line live in the `attnspk` crate.

extern crate alloc;

pub mod backend;
pub mod embednet;
mod error;
pub mod eval;
pub mod features;
pub mod ivector;
pub mod linalg;
pub mod math;
pub mod synth;
pub mod ubm;

pub use error::{Error, Result};
