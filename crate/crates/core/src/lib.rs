//! Multi-objective AutoML for network intrusion detection.
//!
//! The pipeline runs in stages over a [`DataTable`] of flow features:
//!
//! 1. [`autodp`] picks a normalization per feature (Shapiro–Wilk gated z-score or
//!    min-max) and rebalances minority classes with a SMOTE + ADASYN hybrid.
//! 2. [`feature_scoring`] computes information-gain importances.
//! 3. [`autofs`] runs a binary multi-objective particle swarm that trades accumulated
//!    importance against the fraction of features kept.
//! 4. [`cash`] searches learner kind and hyperparameters of the two [`gbdt`] learners
//!    with the same swarm engine, scoring F1, confidence and prediction latency.
//! 5. [`evaluation`] produces the final metric report.
//!
//! [`pipeline`] chains the stages and manages artifacts on disk.

pub mod autodp;
pub mod autofs;
pub mod cash;
pub mod dataset;
mod error;
pub mod evaluation;
pub mod feature_scoring;
pub mod gbdt;
pub mod mopso;
pub mod pipeline;
pub(crate) mod util;

pub use dataset::{ClassDistribution, DataTable, FoldAssignment};
pub use error::{Error, Result};
pub use gbdt::{GbdtModel, Hyperparams, LearnerKind};
pub use mopso::{Archive, ObjectiveSpec, SwarmConfig};
