//! Semantically consistent CutMix for long-tailed classification.
//!
//! Cut-and-paste augmentation labels a mixed image by pixel share: paste a patch
//! covering 30% of another image and the label says 0.3/0.7. On long-tailed data
//! that bookkeeping is often semantically wrong — a small patch of a well-learned
//! class can dominate what the image actually shows. This crate rebuilds the label
//! from a learned semantic space and blends the two views by how much the space
//! can be trusted for the classes involved:
//!
//! 1. [`cutmix`] pastes a random patch of a foreground image onto a background
//!    image and computes the area-based label from the clipped box.
//! 2. [`semantic`] trains a shared backbone with a contrastive loss that pulls
//!    each embedding toward a learnable per-class prototype, making prototypes
//!    usable as class centers.
//! 3. [`rectify`] scores a mixed image's embedding against all centers, keeps the
//!    top-K classes (the mix's two source classes always included), normalizes
//!    that into a semantic label, and blends it with the area label. The blend
//!    weight grows with the effective number of training samples behind the mix,
//!    so tail classes the space barely knows keep their area labels.
//! 4. [`trainer`] runs both branches jointly on long-tailed data with seeded
//!    determinism: same config and data, bit-identical parameters.
//! 5. [`metrics`] evaluates accuracy by many/medium/few shot groups and
//!    calibration (reliability bins, expected calibration error).
//! 6. [`dataset`] builds exponentially long-tailed splits from balanced sources
//!    and provides frequency, balanced, and reversed batch samplers.
//! 7. [`experiment`] wraps it all in manifest-driven runs (train, evaluate,
//!    ablation grids) whose outputs replay byte-identically; [`oracle`] re-derives
//!    every numeric contract with independent brute-force code.
//!
//! The `ccmx` binary exposes the same surface as subcommands (`make-dataset`,
//! `train`, `evaluate`, `grid`, `rerun`, `oracle-check`).
//!
//! Each major capability has a runnable walkthrough under `examples/`:
//!
//! * `build_longtailed` — exponential class profiles and shot groups
//! * `cutmix_basics` — boxes, effective area, mixed labels
//! * `sampler_stats` — empirical vs analytic sampler distributions
//! * `semantic_space` — contrastive training organizing embeddings around prototypes
//! * `label_rectification` — one sample walked through the whole label pipeline
//! * `train_eval` — a full training run with the per-epoch report
//! * `calibration_report` — reliability bins behind the calibration number
//! * `ablation_grid` — a paired rectification-on/off sweep

pub mod cutmix;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod rectify;
pub mod semantic;
pub mod trainer;

pub use error::{Error, Result};
