//! Active collaborative filtering.
//!
//! Query selection by myopic expected value of information (EVOI) over
//! explicit probabilistic rating models, with offline bound tables and query
//! prototypes that cut down the online work.
//!
//! * [`mcvq`] and [`naive_bayes`] implement the [`RatingModel`] interface.
//! * [`training`] fits both models by EM.
//! * [`strategies`] holds belief value, EVOI and the query strategies.
//! * [`bounds`] precomputes attitude-shift and mean-change bounds and applies
//!   the online pruning test.
//! * [`prototypes`] builds beta-spaced query prototype sets.
//! * [`eval`] runs the replay experiments.

// `!(x >= 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod data;
pub mod error;
pub mod eval;
pub mod format;
pub mod lp;
pub mod mcvq;
pub mod model;
pub mod naive_bayes;
pub mod par;
pub mod prototypes;
pub mod stats;
pub mod strategies;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use model::{BeliefState, RatingModel, RatingPosterior};
pub use par::Execution;
