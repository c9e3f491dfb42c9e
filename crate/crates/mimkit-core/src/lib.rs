//! Core library for learning disentangled motion representations from 2D
//! pose sequences and scoring how well one sequence imitates another.
//!
//! The pipeline has four stages, each owned by a module:
//!
//! 1. [`synth`] generates pose sequences by driving parametric motion
//!    templates through forward kinematics over configurable skeletons and
//!    projecting them to 2D under configurable viewpoints.
//! 2. [`train`] fits one encoder-decoder per body segment so that motion,
//!    body shape, and camera viewpoint end up in separate encodings.
//! 3. [`score`] compares two sequences by refining their motion encodings
//!    against the frozen decoder, aligning them with dynamic time warping,
//!    and averaging per-segment cosine similarities.
//! 4. [`eval`] measures cohorts of scores with ROC/AUC and rank statistics.
//!
//! [`autodiff`] is the small reverse-mode engine underneath the networks,
//! [`pose`] holds the shared domain types, [`loss`] the training objectives,
//! and [`dtw`] the alignment primitive.

pub mod autodiff;
pub mod config;
pub mod dtw;
pub mod error;
pub mod eval;
pub mod loss;
pub mod manifest;
pub mod net;
pub mod pose;
pub mod score;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use pose::{BodySegmentation, NormalizationStats, PoseSequence, Skeleton};
