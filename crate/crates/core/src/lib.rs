//! Desk-scale simulator and scoring toolkit for federated brain-tumor
//! segmentation.
//!
//! The crate covers two halves of the workflow:
//!
//! * **Federated training** ([`fedcore`], [`aggregation`], [`reftrain`]): a
//!   round-synchronous aggregator/collaborator protocol with pluggable
//!   aggregation strategies, straggler handling and an exact communication
//!   ledger, driven by a small reference trainer on synthetic data.
//! * **Evaluation** ([`volumes`], [`metrics`], [`ranking`]): label volumes and
//!   NIfTI-1 I/O, Dice and 95th-percentile Hausdorff distance per tumor
//!   region, and rank-then-aggregate challenge ranking across institutions.
//!
//! The [`cli`] module backs the `fets` binary.

pub mod aggregation;
pub mod cli;
pub mod error;
pub mod fedcore;
pub mod metrics;
pub mod ranking;
pub mod reftrain;
pub mod seed;
pub mod volumes;

pub use error::{Error, Result};
