//! Model-based learning on point-pattern ("bag") data with finite
//! point-process likelihoods.
//!
//! A point pattern is a finite multiset of feature vectors. Its likelihood
//! under an IID-cluster model combines a cardinality distribution, a feature
//! density and the unit hyper-volume `U` of the reference measure, which makes
//! the density dimensionless and comparable across cardinalities.
//!
//! Modules:
//! - [`pattern`]: point patterns and datasets.
//! - [`models`]: cardinality distributions, feature densities, IID-cluster
//!   and Poisson point-process densities, sampling and L2 energies.
//! - [`learn`]: maximum-likelihood fitting.
//! - [`classify`]: Bayes classifier with a naive-Bayes baseline.
//! - [`novelty`]: cardinality-consistent ranking and thresholded detection.
//! - [`cluster_em`]: finite-mixture EM clustering.
//! - [`cluster_dp`]: Dirichlet-process Poisson mixture, collapsed Gibbs.
//! - [`metrics`]: accuracy, detection and partition-agreement scores.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classify;
pub mod cluster_dp;
pub mod cluster_em;
pub mod error;
pub mod learn;
pub mod math;
pub mod metrics;
pub mod models;
pub mod novelty;
pub mod pattern;
pub mod rng;

pub use error::{Error, Result};
pub use models::{CardinalityDist, FeatureDensity, Gaussian, GaussianMixture, PointProcessModel, UniformBox};
pub use pattern::{Dataset, LabeledPattern, PointPattern};
