//! Synthetic cardiac-MR motion artefacts, ROI extraction, and curriculum
//! training of small spatio-temporal quality classifiers.
//!
//! The crate covers a desk-scale quality-assessment pipeline end to end:
//!
//! * [`phantom`] — seeded beating-heart cine phantoms with exact ground truth;
//! * [`kspace`] / [`corrupt`] — Fourier transforms and graded mistriggering /
//!   breathing k-space corruption, plus translation augmentation;
//! * [`roi`] — temporal-frequency + Hough-circle localisation of the left
//!   ventricle and fixed 80x80 cropping;
//! * [`net`] — from-scratch 3D-CNN and LRCN classifiers with exact
//!   backpropagation, SGD with momentum, early stopping, and a
//!   finite-difference gradient checker;
//! * [`curriculum`] — severity-ordered baby-step curriculum training with
//!   anti- and control-curriculum baselines;
//! * [`metrics`] — confusion metrics, ROC/AUC, paired DeLong tests,
//!   stratified k-fold splits, and a variance-of-Laplacian blur baseline;
//! * [`cli`] — the `forge` command-line pipeline gluing it all together.
//!
//! Every stochastic step draws from an explicit [`rng::RngStream`], so whole
//! experiments are reproducible bit for bit from one master seed.
//!
//! See `examples/` for one runnable walk-through per capability.

pub mod cine;
pub mod cli;
pub mod corrupt;
pub mod curriculum;
pub mod error;
pub mod io;
pub mod kspace;
pub mod metrics;
pub mod net;
pub mod phantom;
pub mod rng;
pub mod roi;

pub use cine::{normalize, ArtefactType, CineSequence, LabeledDataset, Provenance, QualityLabel};
pub use error::{Error, Result};
pub use rng::RngStream;
