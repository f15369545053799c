//! Bayesian peaks-over-threshold modelling of multivariate extremes with
//! censored and missing historical data.
//!
//! The crate is organized along the inference pipeline: daily panels of
//! possibly-censored observations ([`data_model`]), run declustering with
//! censored semantics ([`decluster`]), generalized Pareto margins and the
//! Fréchet standardization ([`margins`]), a Dirichlet mixture angular measure
//! ([`angular`]), the censored Poisson-process likelihood ([`likelihood`]),
//! trans-dimensional MCMC with data augmentation ([`mcmc`]), and a synthetic
//! data generator ([`simulate`]).

pub mod angular;
pub mod data_model;
pub mod decluster;
pub mod error;
pub mod likelihood;
pub mod margins;
pub mod mcmc;
pub mod numeric;
pub mod simulate;
pub mod stats;

pub use angular::{DMParams, DirichletComponent, QuadratureSpec};
pub use data_model::{CensorKind, Observation, Position, SeriesPanel, ThresholdConfig};
pub use decluster::{Cluster, ClusterMaximum, DeclusterSummary, UndeterminedBlock};
pub use error::{Error, Result};
pub use margins::{ExceedanceRates, MarginalModel, MarginalParams};
