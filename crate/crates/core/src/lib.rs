//! Progressive dual-head graph convolution for multichannel EEG emotion
//! classification.
//!
//! Pipeline: raw recordings are cut into 1-s segments and reduced to
//! `n × d` band-feature matrices ([`features`]); each matrix is convolved
//! over a fixed spatial graph built from the electrode layout
//! ([`montage`]) and over per-sample learned graphs ([`graphgen`],
//! [`chebconv`]). A coarse head classifies emotion polarity, and its
//! features (gradient-detached) feed the fine head that predicts the
//! target emotion ([`model`]). [`trainer`] runs the staggered two-head
//! optimization and [`eval`] the subject-dependent and leave-one-subject-out
//! protocols.

pub mod chebconv;
pub mod container;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod features;
pub mod graphgen;
pub mod model;
pub mod montage;
pub mod numkit;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
