//! Latent-class (naive Bayes) CF model: a mixture over user classes with
//! per-item multinomial rating distributions per class.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcvq::{PROB_FLOOR, SIMPLEX_TOL};
use crate::model::{BeliefState, RatingModel, RatingPosterior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesParams {
    pub n_items: usize,
    pub n_components: usize,
    pub rho: usize,
    /// `P(c)`, length `C`.
    pub mixing: Vec<f64>,
    /// `P(R_j = r | c)`, shape `M x C x rho`.
    pub rating_multinomial: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayesModel {
    params: NaiveBayesParams,
    log_phi: Vec<f64>,
    phi_mean: Vec<f64>,
}

impl NaiveBayesModel {
    pub fn new(params: NaiveBayesParams) -> Result<Self> {
        let NaiveBayesParams { n_items: m, n_components: c, rho, .. } = params;
        if m == 0 || c == 0 || rho == 0 {
            return Err(Error::Validation("model dimensions must be positive".into()));
        }
        if rho > u8::MAX as usize {
            return Err(Error::Validation(format!("rating scale {rho} too large")));
        }
        if params.mixing.len() != c {
            return Err(Error::Validation(format!("mixing has length {}, expected {c}", params.mixing.len())));
        }
        if params.rating_multinomial.len() != m * c * rho {
            return Err(Error::Validation(format!(
                "rating_multinomial has length {}, expected {}",
                params.rating_multinomial.len(),
                m * c * rho
            )));
        }
        let rows = std::iter::once(params.mixing.as_slice()).chain(params.rating_multinomial.chunks(rho));
        for row in rows {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Validation("negative or non-finite probability".into()));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Validation(format!("probability row sums to {s}")));
            }
        }
        let log_phi = params.rating_multinomial.iter().map(|p| p.max(PROB_FLOOR).ln()).collect();
        let phi_mean = params.rating_multinomial.chunks(rho).map(crate::model::expected_rating).collect();
        Ok(Self { params, log_phi, phi_mean })
    }

    pub fn params(&self) -> &NaiveBayesParams {
        &self.params
    }

    pub fn n_components(&self) -> usize {
        self.params.n_components
    }

    pub fn mixing(&self) -> &[f64] {
        &self.params.mixing
    }

    /// `P(R_j = r | c)` for `r = 1..=rho`.
    pub fn phi(&self, item: usize, c: usize) -> &[f64] {
        let rho = self.params.rho;
        let start = (item * self.params.n_components + c) * rho;
        &self.params.rating_multinomial[start..start + rho]
    }

    fn log_phi(&self, item: usize, c: usize, rating: u8) -> f64 {
        self.log_phi[(item * self.params.n_components + c) * self.params.rho + rating as usize - 1]
    }

    fn check(&self, item: usize, rating: Option<u8>) -> Result<()> {
        if item >= self.params.n_items {
            return Err(Error::InvalidArgument(format!("item {item} out of range")));
        }
        if let Some(r) = rating {
            if r == 0 || r as usize > self.params.rho {
                return Err(Error::Validation(format!("rating {r} outside 1..={}", self.params.rho)));
            }
        }
        Ok(())
    }

    /// `P(c | r_kappa) ∝ P(c) prod_j phi^{r_j}_jc`, in log space.
    pub fn nb_update(&self, ratings: &BTreeMap<usize, u8>) -> Result<NbUserState> {
        let mut log_post: Vec<f64> = self.params.mixing.iter().map(|p| p.ln()).collect();
        for (&item, &rating) in ratings {
            self.check(item, Some(rating))?;
            for (c, lp) in log_post.iter_mut().enumerate() {
                *lp += self.log_phi(item, c, rating);
            }
        }
        let component_posterior = normalize(&log_post)?;
        Ok(NbUserState { ratings: ratings.clone(), log_post, component_posterior })
    }

    pub fn nb_incremental(&self, state: &NbUserState, item: usize, rating: u8) -> Result<NbUserState> {
        self.check(item, Some(rating))?;
        if state.ratings.contains_key(&item) {
            return Err(Error::ContractViolation(format!("item {item} is already observed")));
        }
        let mut log_post = state.log_post.clone();
        for (c, lp) in log_post.iter_mut().enumerate() {
            *lp += self.log_phi(item, c, rating);
        }
        let component_posterior = normalize(&log_post)?;
        let mut ratings = state.ratings.clone();
        ratings.insert(item, rating);
        Ok(NbUserState { ratings, log_post, component_posterior })
    }

    /// `probs[r] = sum_c P(c | r_kappa) phi^r_jc`.
    pub fn nb_rating_posterior(&self, state: &NbUserState, item: usize) -> Result<RatingPosterior> {
        self.check(item, None)?;
        if state.ratings.contains_key(&item) {
            return Err(Error::ContractViolation(format!("item {item} is already observed")));
        }
        let mut probs = vec![0.0; self.params.rho];
        for (c, &w) in state.component_posterior.iter().enumerate() {
            for (p, f) in probs.iter_mut().zip(self.phi(item, c)) {
                *p += w * f;
            }
        }
        Ok(RatingPosterior::from_probs(probs))
    }
}

fn normalize(log_post: &[f64]) -> Result<Vec<f64>> {
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateMixture);
    }
    let mut out: Vec<f64> = log_post.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NbUserState {
    ratings: BTreeMap<usize, u8>,
    log_post: Vec<f64>,
    component_posterior: Vec<f64>,
}

impl NbUserState {
    pub fn component_posterior(&self) -> &[f64] {
        &self.component_posterior
    }
}

impl BeliefState for NbUserState {
    fn ratings(&self) -> &BTreeMap<usize, u8> {
        &self.ratings
    }
}

impl RatingModel for NaiveBayesModel {
    type State = NbUserState;

    fn n_items(&self) -> usize {
        self.params.n_items
    }

    fn rho(&self) -> usize {
        self.params.rho
    }

    fn prior_state(&self) -> NbUserState {
        NbUserState {
            ratings: BTreeMap::new(),
            log_post: self.params.mixing.iter().map(|p| p.ln()).collect(),
            component_posterior: self.params.mixing.clone(),
        }
    }

    fn observe(&self, state: &NbUserState, item: usize, rating: u8) -> Result<NbUserState> {
        self.nb_incremental(state, item, rating)
    }

    fn predict(&self, state: &NbUserState, item: usize) -> Result<RatingPosterior> {
        self.nb_rating_posterior(state, item)
    }

    fn predict_mean(&self, state: &NbUserState, item: usize) -> Result<f64> {
        self.check(item, None)?;
        if state.ratings.contains_key(&item) {
            return Err(Error::ContractViolation(format!("item {item} is already observed")));
        }
        let c = self.params.n_components;
        Ok(state
            .component_posterior
            .iter()
            .enumerate()
            .map(|(ci, w)| w * self.phi_mean[item * c + ci])
            .sum())
    }

    fn state_from_ratings(&self, ratings: &BTreeMap<usize, u8>) -> Result<NbUserState> {
        self.nb_update(ratings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_component() -> NaiveBayesModel {
        NaiveBayesModel::new(NaiveBayesParams {
            n_items: 2,
            n_components: 2,
            rho: 3,
            mixing: vec![0.25, 0.75],
            rating_multinomial: vec![0.7, 0.2, 0.1, 0.1, 0.3, 0.6, 0.2, 0.2, 0.6, 0.5, 0.4, 0.1],
        })
        .unwrap()
    }

    #[test]
    fn empty_history_is_the_mixing_distribution() {
        let m = two_component();
        let s = m.nb_update(&BTreeMap::new()).unwrap();
        let post = s.component_posterior();
        assert!((post[0] - 0.25).abs() < 1e-15 && (post[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_posterior() {
        let m = two_component();
        // P(c | R_0 = 1) ∝ (0.25 * 0.7, 0.75 * 0.1)
        let s = m.nb_update(&BTreeMap::from([(0, 1)])).unwrap();
        let z = 0.25 * 0.7 + 0.75 * 0.1;
        assert!((s.component_posterior()[0] - 0.175 / z).abs() < 1e-15);
        let post = m.nb_rating_posterior(&s, 1).unwrap();
        let w0 = 0.175 / z;
        let expect = [w0 * 0.2 + (1.0 - w0) * 0.5, w0 * 0.2 + (1.0 - w0) * 0.4, w0 * 0.6 + (1.0 - w0) * 0.1];
        for (a, b) in post.probs.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_posterior_averages_component_rows() {
        let mut p = two_component().params().clone();
        p.mixing = vec![0.5, 0.5];
        let m = NaiveBayesModel::new(p).unwrap();
        let post = m.nb_rating_posterior(&m.prior_state(), 0).unwrap();
        for (r, got) in post.probs.iter().enumerate() {
            assert!((got - 0.5 * (m.phi(0, 0)[r] + m.phi(0, 1)[r])).abs() < 1e-15);
        }
    }

    #[test]
    fn single_component_posterior_is_one() {
        let m = NaiveBayesModel::new(NaiveBayesParams {
            n_items: 1,
            n_components: 1,
            rho: 2,
            mixing: vec![1.0],
            rating_multinomial: vec![0.4, 0.6],
        })
        .unwrap();
        let s = m.nb_update(&BTreeMap::from([(0, 2)])).unwrap();
        assert_eq!(s.component_posterior(), &[1.0]);
    }

    #[test]
    fn incremental_matches_batch_and_checks_contract() {
        let m = two_component();
        let inc = m.nb_incremental(&m.prior_state(), 1, 3).unwrap();
        let inc = m.nb_incremental(&inc, 0, 2).unwrap();
        let batch = m.nb_update(&BTreeMap::from([(0, 2), (1, 3)])).unwrap();
        for (a, b) in inc.component_posterior().iter().zip(batch.component_posterior()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(m.nb_incremental(&inc, 0, 1), Err(Error::ContractViolation(_))));
        assert!(matches!(m.nb_update(&BTreeMap::from([(0, 4)])), Err(Error::Validation(_))));
        assert!(matches!(m.nb_rating_posterior(&inc, 1), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn rejects_invalid_parameters() {
        let mut p = two_component().params().clone();
        p.mixing = vec![0.5, 0.6];
        assert!(NaiveBayesModel::new(p).is_err());
    }
}
