//! Micro-scale localization and six-class classification of bright regions
//! on scanned glass surfaces.
//!
//! The pipeline runs in four stages:
//!
//! 1. **Region selection** — Sobel gradients, binary thresholding, dilation,
//!    connected components and greedy non-maximum suppression turn a raw
//!    grayscale frame into square 224×224 crops ([`imaging`], [`proposals`]).
//! 2. **Embedding** — each crop becomes a fixed-dimension feature vector via
//!    a pluggable provider: a deterministic built-in descriptor or an
//!    external pre-trained network ([`embedding`]).
//! 3. **Cluster filtering** — seeded k-means over all crop features,
//!    iteratively dropping clusters with a low proportion of labeled defects
//!    until few points are dropped per round; survivors become pseudo-labels
//!    for a binary background/defect classifier ([`semisup`], [`forest`]).
//! 4. **Classification** — a six-class random forest assigns each surviving
//!    region to scratch, pit, crack, dust, sensor region or light
//!    reflection, and an inspection report is emitted ([`classify`]).
//!
//! [`synth`] generates seeded glass images with exact ground truth, and
//! [`eval`] scores reports against that truth with the usual confusion
//! metrics. [`cli`] wires everything into the `glass-inspect` binary.

pub mod classify;
pub mod cli;
pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod forest;
mod guide;
pub mod imaging;
pub mod pipeline;
pub mod proposals;
pub mod semisup;
pub mod synth;

pub use error::{Error, Result};
