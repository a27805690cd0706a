//! Hierarchical selective classification toolkit.
//!
//! Turns a flat classifier's exported leaf probabilities plus a
//! class-hierarchy tree into hierarchical selective predictions,
//! risk/coverage/calibration curves, and a confidence threshold calibrated
//! to a user-specified accuracy with a distribution-free guarantee.
//!
//! Modules:
//! - [`hierarchy`]: tree parsing, validation, ancestor/LCA queries, and
//!   entropy-based node coverage.
//! - [`scores`]: score-table ingestion, temperature scaling, and lifting
//!   leaf probabilities to internal-node confidences.
//! - [`rules`]: the selective, climbing, max-coverage, and jumping inference
//!   rules, plus the inverse traversal recovering per-sample minimal correct
//!   thresholds.
//! - [`metrics`]: hierarchical risk, severity loss, ECE, risk-coverage and
//!   calibration-coverage curves, hAURC, and hierarchical gain.
//! - [`guarantee`]: Beta-distribution numerics and threshold calibration
//!   with the `(n, α, ε, δ)` guarantee.
//! - [`synth`]: seeded generators and Monte Carlo harnesses for validating
//!   the above.

pub mod guarantee;
pub mod hierarchy;
pub mod metrics;
pub mod rules;
pub mod scores;
pub mod synth;
