//! Joint Bayesian nonparametric modeling of medical costs and right-censored
//! survival, with posterior causal cost-effectiveness estimands and adaptive
//! subgroup discovery.
//!
//! The model couples two nested nonparametric layers:
//!
//! * an enriched Dirichlet process mixture over subject-level regression
//!   parameters — outer clusters carry cost-model coefficients, nested
//!   subclusters carry proportional-hazards coefficients — so the cost and
//!   survival partitions can differ in resolution ([`edp`]);
//! * a dependent (autoregressive) gamma process prior on a piecewise-constant
//!   baseline hazard, centered on a named parametric hazard ([`hazard`]).
//!
//! Posterior draws feed a g-computation layer that standardizes treatment
//! contrasts in net monetary benefit over the observed confounder
//! distribution via the Bayesian bootstrap ([`gcomp`]), and a co-clustering
//! layer that summarizes discovered subgroups and how much between-group
//! structure the benefit surface carries ([`subgroups`]).
//!
//! [`sim`] provides the synthetic data generator and its potential-outcome
//! oracle used by the evaluation harness; [`draws`] defines the JSON-lines
//! posterior draw store every downstream consumer reads.

pub mod config;
pub mod data;
pub mod diag;
pub mod draws;
pub mod edp;
pub mod error;
pub mod gcomp;
pub mod hazard;
pub mod likelihood;
pub mod sampler;
pub mod sim;
pub mod subgroups;
pub mod tuner;

pub use data::{load_dataset, save_dataset, CostModel, Dataset, Subject};
pub use error::{Error, Result};
