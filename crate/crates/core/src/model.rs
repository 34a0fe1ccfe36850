//! The interface shared by every rating model the query strategies run on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Predictive distribution over the ratings `1..=rho` of one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingPosterior {
    /// `probs[r - 1]` is the probability of rating `r`.
    pub probs: Vec<f64>,
    pub mean: f64,
}

impl RatingPosterior {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let mean = expected_rating(&probs);
        Self { probs, mean }
    }

    pub fn rho(&self) -> usize {
        self.probs.len()
    }
}

pub fn expected_rating(probs: &[f64]) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(i, p)| (i + 1) as f64 * p)
        .sum()
}

/// What a model knows about one user: the ratings seen so far plus whatever
/// latent posterior the model keeps.
pub trait BeliefState: Clone + Send + Sync {
    fn ratings(&self) -> &BTreeMap<usize, u8>;

    fn is_observed(&self, item: usize) -> bool {
        self.ratings().contains_key(&item)
    }

    fn n_observed(&self) -> usize {
        self.ratings().len()
    }
}

/// A probabilistic CF model: predictive rating distributions for a user state
/// and the state transition on a new (item, rating) observation.
pub trait RatingModel: Send + Sync {
    type State: BeliefState;

    fn n_items(&self) -> usize;

    /// Size of the rating scale; ratings are `1..=rho`.
    fn rho(&self) -> usize;

    /// The state of a user with no observed ratings.
    fn prior_state(&self) -> Self::State;

    /// Posterior state after additionally observing `rating` for `item`.
    fn observe(&self, state: &Self::State, item: usize, rating: u8) -> Result<Self::State>;

    /// Predictive distribution of an unobserved item's rating.
    fn predict(&self, state: &Self::State, item: usize) -> Result<RatingPosterior>;

    /// Predictive mean only. Models override this when the mean is cheaper
    /// than the full distribution.
    fn predict_mean(&self, state: &Self::State, item: usize) -> Result<f64> {
        Ok(self.predict(state, item)?.mean)
    }

    /// Builds a state from scratch by observing every rating in item order.
    fn state_from_ratings(&self, ratings: &BTreeMap<usize, u8>) -> Result<Self::State> {
        let mut state = self.prior_state();
        for (&item, &rating) in ratings {
            state = self.observe(&state, item, rating)?;
        }
        Ok(state)
    }
}
