//! Multiple-cause vector quantization (MCVQ) rating model.
//!
//! Each item `j` has a distribution over `K` types (VQs). A user holds, for
//! every VQ `k`, a distribution over `L` attitudes. The rating of item `j` by a
//! user whose VQ-`k` attitude is `l`, given the item is of type `k`, follows a
//! Gaussian `N(mean_jkl, var_jkl)` binned onto the integer scale `1..=rho`.
//!
//! Attitude posteriors are updated per VQ with the bracket factor
//!
//! ```text
//! b_jkl(r) = sum_{k' != k} P(T_j = k') sum_{l'} w_k'l' theta^r_jk'l'  +  P(T_j = k) theta^r_jkl
//! ```
//!
//! where `w` is the attitude prior under [`AttitudeConvention::Prior`] (the
//! default). Under that convention updates commute and a batch update equals
//! any sequence of incremental updates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{BeliefState, RatingModel, RatingPosterior};

/// Likelihood floor applied to `theta` inside posterior products.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on probability rows supplied to [`McvqModel::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Which attitude distribution mixes the other VQs inside the bracket factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttitudeConvention {
    /// Other VQs enter at the model's attitude prior.
    #[default]
    Prior,
    /// Other VQs enter at the current posterior; iterated to a fixed point.
    FixedPoint { max_iters: usize, tol: f64 },
}

/// Multinomial over `1..=rho` obtained by integrating `N(mean, var)` over
/// half-integer bins. The outer bins absorb the tails. `var == 0` gives a
/// point mass at the rounded, clamped mean.
pub fn bin_gaussian(mean: f64, var: f64, rho: usize) -> Result<Vec<f64>> {
    if rho == 0 {
        return Err(Error::InvalidArgument("rho must be positive".into()));
    }
    if !(var >= 0.0) || !var.is_finite() {
        return Err(Error::InvalidArgument(format!("variance must be >= 0, got {var}")));
    }
    if !mean.is_finite() {
        return Err(Error::InvalidArgument(format!("mean must be finite, got {mean}")));
    }
    let mut probs = vec![0.0; rho];
    if var == 0.0 {
        let r = mean.round().clamp(1.0, rho as f64) as usize;
        probs[r - 1] = 1.0;
        return Ok(probs);
    }
    let sd = var.sqrt();
    // Upper-tail mass Q(x) = P(X > x), evaluated through erfc for accuracy in
    // both tails.
    let upper_tail = |x: f64| 0.5 * erfc((x - mean) / (sd * std::f64::consts::SQRT_2));
    for (i, p) in probs.iter_mut().enumerate() {
        let r = (i + 1) as f64;
        let lo = if i == 0 { f64::NEG_INFINITY } else { r - 0.5 };
        let hi = if i + 1 == rho { f64::INFINITY } else { r + 0.5 };
        let q_lo = if lo.is_infinite() { 1.0 } else { upper_tail(lo) };
        let q_hi = if hi.is_infinite() { 0.0 } else { upper_tail(hi) };
        *p = (q_lo - q_hi).max(0.0);
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gaussian N({mean}, {var}) has no mass on the rating scale"
        )));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Raw MCVQ parameters, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McvqParams {
    pub n_items: usize,
    pub n_types: usize,
    pub n_attitudes: usize,
    pub rho: usize,
    /// `P(T_j = k)`, shape `M x K`.
    pub type_dist: Vec<f64>,
    /// `P(A_k = l)`, shape `K x L`.
    pub attitude_prior: Vec<f64>,
    /// Gaussian means, shape `M x K x L`.
    pub rating_mean: Vec<f64>,
    /// Gaussian variances, shape `M x K x L`.
    pub rating_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McvqModel {
    params: McvqParams,
    /// Binned multinomials, shape `M x K x L x rho`.
    theta: Vec<f64>,
    /// `max(theta, PROB_FLOOR)`, used in likelihood products.
    theta_floored: Vec<f64>,
    /// `sum_r r * theta^r_jkl`, shape `M x K x L`.
    theta_mean: Vec<f64>,
    /// `sum_l P(A_k = l) theta_floored^r_jkl`, shape `M x K x rho`.
    prior_mix: Vec<f64>,
    convention: AttitudeConvention,
}

fn check_simplex_rows(name: &str, data: &[f64], width: usize) -> Result<()> {
    for (row_idx, row) in data.chunks(width).enumerate() {
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Validation(format!("{name} row {row_idx} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Validation(format!("{name} row {row_idx} sums to {s}, expected 1")));
        }
    }
    Ok(())
}

impl McvqModel {
    pub fn new(params: McvqParams) -> Result<Self> {
        let McvqParams { n_items: m, n_types: k, n_attitudes: l, rho, .. } = params;
        if m == 0 || k == 0 || l == 0 || rho == 0 {
            return Err(Error::Validation("model dimensions must be positive".into()));
        }
        if rho > u8::MAX as usize {
            return Err(Error::Validation(format!("rating scale {rho} too large")));
        }
        let expect = |name: &str, got: usize, want: usize| {
            if got != want {
                Err(Error::Validation(format!("{name} has length {got}, expected {want}")))
            } else {
                Ok(())
            }
        };
        expect("type_dist", params.type_dist.len(), m * k)?;
        expect("attitude_prior", params.attitude_prior.len(), k * l)?;
        expect("rating_mean", params.rating_mean.len(), m * k * l)?;
        expect("rating_var", params.rating_var.len(), m * k * l)?;
        check_simplex_rows("type_dist", &params.type_dist, k)?;
        check_simplex_rows("attitude_prior", &params.attitude_prior, l)?;
        for (i, (&mu, &var)) in params.rating_mean.iter().zip(&params.rating_var).enumerate() {
            if !(mu >= 1.0 && mu <= rho as f64) {
                return Err(Error::Validation(format!("rating_mean[{i}] = {mu} outside [1, {rho}]")));
            }
            if !(var >= 0.0) || !var.is_finite() {
                return Err(Error::Validation(format!("rating_var[{i}] = {var} is not a valid variance")));
            }
        }

        let mut theta = Vec::with_capacity(m * k * l * rho);
        for (&mu, &var) in params.rating_mean.iter().zip(&params.rating_var) {
            theta.extend(bin_gaussian(mu, var, rho)?);
        }
        let theta_floored: Vec<f64> = theta.iter().map(|&p| p.max(PROB_FLOOR)).collect();
        let theta_mean = theta.chunks(rho).map(crate::model::expected_rating).collect();

        let mut model = Self {
            params,
            theta,
            theta_floored,
            theta_mean,
            prior_mix: Vec::new(),
            convention: AttitudeConvention::Prior,
        };
        model.prior_mix = model.mix_table(&model.params.attitude_prior.clone());
        Ok(model)
    }

    pub fn with_convention(mut self, convention: AttitudeConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn convention(&self) -> AttitudeConvention {
        self.convention
    }

    pub fn params(&self) -> &McvqParams {
        &self.params
    }

    pub fn n_items(&self) -> usize {
        self.params.n_items
    }

    pub fn n_types(&self) -> usize {
        self.params.n_types
    }

    pub fn n_attitudes(&self) -> usize {
        self.params.n_attitudes
    }

    pub fn rho(&self) -> usize {
        self.params.rho
    }

    pub fn type_prob(&self, item: usize, k: usize) -> f64 {
        self.params.type_dist[item * self.params.n_types + k]
    }

    pub fn type_row(&self, item: usize) -> &[f64] {
        let k = self.params.n_types;
        &self.params.type_dist[item * k..(item + 1) * k]
    }

    pub fn attitude_prior(&self) -> &[f64] {
        &self.params.attitude_prior
    }

    pub fn attitude_prior_row(&self, k: usize) -> &[f64] {
        let l = self.params.n_attitudes;
        &self.params.attitude_prior[k * l..(k + 1) * l]
    }

    fn kl_index(&self, item: usize, k: usize, l: usize) -> usize {
        (item * self.params.n_types + k) * self.params.n_attitudes + l
    }

    pub fn rating_mean(&self, item: usize, k: usize, l: usize) -> f64 {
        self.params.rating_mean[self.kl_index(item, k, l)]
    }

    pub fn rating_var(&self, item: usize, k: usize, l: usize) -> f64 {
        self.params.rating_var[self.kl_index(item, k, l)]
    }

    /// `theta^r_jkl` for `r = 1..=rho`.
    pub fn theta(&self, item: usize, k: usize, l: usize) -> &[f64] {
        let start = self.kl_index(item, k, l) * self.params.rho;
        &self.theta[start..start + self.params.rho]
    }

    pub fn theta_floored(&self, item: usize, k: usize, l: usize) -> &[f64] {
        let start = self.kl_index(item, k, l) * self.params.rho;
        &self.theta_floored[start..start + self.params.rho]
    }

    /// Expected rating of item `j` under type `k`, attitude `l`.
    pub fn theta_mean(&self, item: usize, k: usize, l: usize) -> f64 {
        self.theta_mean[self.kl_index(item, k, l)]
    }

    /// The full binned multinomial table, shape `M x K x L x rho`.
    pub fn rating_multinomial(&self) -> &[f64] {
        &self.theta
    }

    /// `sum_l w_kl theta_floored^r_jkl` for every `(j, k, r)`.
    fn mix_table(&self, weights: &[f64]) -> Vec<f64> {
        let (m, kk, ll, rho) = self.dims();
        let mut out = vec![0.0; m * kk * rho];
        for j in 0..m {
            for k in 0..kk {
                let dst = &mut out[(j * kk + k) * rho..(j * kk + k + 1) * rho];
                for l in 0..ll {
                    let w = weights[k * ll + l];
                    for (d, t) in dst.iter_mut().zip(self.theta_floored(j, k, l)) {
                        *d += w * t;
                    }
                }
            }
        }
        out
    }

    /// `sum_l P(A_k = l) theta_floored^r_jkl`.
    pub fn prior_mix(&self, item: usize, k: usize, rating: u8) -> f64 {
        let rho = self.params.rho;
        self.prior_mix[(item * self.params.n_types + k) * rho + rating as usize - 1]
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        (self.params.n_items, self.params.n_types, self.params.n_attitudes, self.params.rho)
    }

    fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.params.n_items {
            return Err(Error::InvalidArgument(format!(
                "item {item} out of range (model has {} items)",
                self.params.n_items
            )));
        }
        Ok(())
    }

    fn check_rating(&self, rating: u8) -> Result<()> {
        if rating == 0 || rating as usize > self.params.rho {
            return Err(Error::Validation(format!("rating {rating} outside 1..={}", self.params.rho)));
        }
        Ok(())
    }

    /// `F_jk(r) = sum_{k' != k} P(T_j = k') mix_jk'(r)` with the supplied
    /// per-VQ mixtures `mix[k']`.
    fn cross_vq_term(&self, item: usize, k: usize, mix: impl Fn(usize) -> f64) -> f64 {
        let mut f = 0.0;
        for kp in 0..self.params.n_types {
            if kp != k {
                f += self.type_prob(item, kp) * mix(kp);
            }
        }
        f
    }

    /// Adds `ln b_jkl(r)` for observation `(item, rating)` to every entry of
    /// `log_rows`, using `mix(k')` for the cross-VQ mixtures.
    fn add_log_factor(&self, log_rows: &mut [f64], item: usize, rating: u8, mix: impl Fn(usize) -> f64) {
        let (_, kk, ll, _) = self.dims();
        let r = rating as usize - 1;
        for k in 0..kk {
            let f = self.cross_vq_term(item, k, &mix);
            let t = self.type_prob(item, k);
            for l in 0..ll {
                let b = f + t * self.theta_floored(item, k, l)[r];
                log_rows[k * ll + l] += b.ln();
            }
        }
    }

    /// The bracket factor `b_jkl(r)` for VQ `k` under the prior convention.
    pub fn bracket_factor(&self, item: usize, rating: u8, k: usize, l: usize) -> f64 {
        let f = self.cross_vq_term(item, k, |kp| self.prior_mix(item, kp, rating));
        f + self.type_prob(item, k) * self.theta_floored(item, k, l)[rating as usize - 1]
    }

    /// Per-VQ normalizer of a prior-convention update on `(q, r)`:
    /// `Z_k(r) = sum_l b_qkl(r) P(A_k = l | r_kappa)` for every `r`.
    ///
    /// Under the prior convention these are the response probabilities that
    /// make the update exactly coherent for VQ `k`; they coincide with the
    /// predictive `P(R_q = r)` when the user's attitudes equal the prior.
    pub fn response_normalizer(&self, state: &UserState, q: usize, k: usize) -> Vec<f64> {
        let ll = self.params.n_attitudes;
        (1..=self.params.rho as u8)
            .map(|r| {
                (0..ll)
                    .map(|l| self.bracket_factor(q, r, k, l) * state.attitude_posterior[k * ll + l])
                    .sum()
            })
            .collect()
    }

    fn prior_log_rows(&self) -> Vec<f64> {
        self.params.attitude_prior.iter().map(|p| p.ln()).collect()
    }

    /// Attitude posteriors `P(A_k = l | r_kappa)` for a batch of ratings.
    pub fn update_attitudes(&self, ratings: &BTreeMap<usize, u8>) -> Result<UserState> {
        for (&item, &rating) in ratings {
            self.check_item(item)?;
            self.check_rating(rating)?;
        }
        match self.convention {
            AttitudeConvention::Prior => {
                let mut log_rows = self.prior_log_rows();
                for (&item, &rating) in ratings {
                    self.add_log_factor(&mut log_rows, item, rating, |kp| self.prior_mix(item, kp, rating));
                }
                let attitude_posterior = normalize_log_rows(&log_rows, self.params.n_attitudes)?;
                Ok(UserState { ratings: ratings.clone(), log_rows, attitude_posterior, width: self.params.n_attitudes })
            }
            AttitudeConvention::FixedPoint { max_iters, tol } => self.fixed_point_update(ratings, max_iters, tol),
        }
    }

    fn fixed_point_update(&self, ratings: &BTreeMap<usize, u8>, max_iters: usize, tol: f64) -> Result<UserState> {
        let (_, kk, ll, rho) = self.dims();
        let mut posterior = self.params.attitude_prior.clone();
        let mut log_rows = self.prior_log_rows();
        for _ in 0..max_iters.max(1) {
            let mix = self.mix_table(&posterior);
            log_rows = self.prior_log_rows();
            for (&item, &rating) in ratings {
                let r = rating as usize - 1;
                self.add_log_factor(&mut log_rows, item, rating, |kp| mix[(item * kk + kp) * rho + r]);
            }
            let next = normalize_log_rows(&log_rows, ll)?;
            let delta = next.iter().zip(&posterior).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            posterior = next;
            if delta < tol {
                break;
            }
        }
        Ok(UserState { ratings: ratings.clone(), log_rows, attitude_posterior: posterior, width: ll })
    }

    /// Observes `rating` for `item` on top of `state`.
    pub fn incremental_update(&self, state: &UserState, item: usize, rating: u8) -> Result<UserState> {
        self.check_item(item)?;
        self.check_rating(rating)?;
        if state.ratings.contains_key(&item) {
            return Err(Error::ContractViolation(format!("item {item} is already observed")));
        }
        match self.convention {
            AttitudeConvention::Prior => {
                let mut log_rows = state.log_rows.clone();
                self.add_log_factor(&mut log_rows, item, rating, |kp| self.prior_mix(item, kp, rating));
                let attitude_posterior = normalize_log_rows(&log_rows, self.params.n_attitudes)?;
                let mut ratings = state.ratings.clone();
                ratings.insert(item, rating);
                Ok(UserState { ratings, log_rows, attitude_posterior, width: self.params.n_attitudes })
            }
            AttitudeConvention::FixedPoint { .. } => {
                let mut ratings = state.ratings.clone();
                ratings.insert(item, rating);
                self.update_attitudes(&ratings)
            }
        }
    }

    /// `P(R_j = r | r_kappa) = sum_k P(T_j = k) sum_l P(A_k = l | r_kappa) theta^r_jkl`.
    pub fn rating_posterior(&self, state: &UserState, item: usize) -> Result<RatingPosterior> {
        self.check_item(item)?;
        if state.ratings.contains_key(&item) {
            return Err(Error::ContractViolation(format!("item {item} is already observed")));
        }
        let (_, kk, ll, rho) = self.dims();
        let mut probs = vec![0.0; rho];
        for k in 0..kk {
            let t = self.type_prob(item, k);
            if t == 0.0 {
                continue;
            }
            for l in 0..ll {
                let w = t * state.attitude_posterior[k * ll + l];
                for (p, th) in probs.iter_mut().zip(self.theta(item, k, l)) {
                    *p += w * th;
                }
            }
        }
        Ok(RatingPosterior::from_probs(probs))
    }

    /// Posterior of target `j` after a hypothesized response `r_q` to query `q`.
    pub fn posterior_after_response(&self, state: &UserState, q: usize, r_q: u8, j: usize) -> Result<RatingPosterior> {
        if q == j {
            return Err(Error::ContractViolation("query and target must differ".into()));
        }
        self.check_item(j)?;
        if state.ratings.contains_key(&j) {
            return Err(Error::ContractViolation(format!("target {j} is already observed")));
        }
        let updated = self.incremental_update(state, q, r_q)?;
        self.rating_posterior(&updated, j)
    }

    fn posterior_mean(&self, state: &UserState, item: usize) -> f64 {
        let (_, kk, ll, _) = self.dims();
        let mut mean = 0.0;
        for k in 0..kk {
            let t = self.type_prob(item, k);
            if t == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for l in 0..ll {
                inner += state.attitude_posterior[k * ll + l] * self.theta_mean(item, k, l);
            }
            mean += t * inner;
        }
        mean
    }
}

/// Per-row softmax of log weights with max subtraction. A row whose entries
/// are all `-inf` (or NaN) is a degeneracy error.
fn normalize_log_rows(log_rows: &[f64], width: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; log_rows.len()];
    for (k, (row, dst)) in log_rows.chunks(width).zip(out.chunks_mut(width)).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Degenerate { vq: k });
        }
        let mut total = 0.0;
        for (d, &x) in dst.iter_mut().zip(row) {
            *d = (x - max).exp();
            total += *d;
        }
        dst.iter_mut().for_each(|d| *d /= total);
    }
    Ok(out)
}

/// One user's observed ratings and attitude posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    ratings: BTreeMap<usize, u8>,
    /// Unnormalized log posterior, `K x L`.
    log_rows: Vec<f64>,
    /// `P(A_k = l | r_kappa)`, `K x L`.
    attitude_posterior: Vec<f64>,
    width: usize,
}

impl UserState {
    /// A state with no observations and the given attitude distributions,
    /// for exploring arbitrary points of the attitude simplex.
    pub fn from_attitudes(model: &McvqModel, attitudes: Vec<f64>) -> Result<Self> {
        let (kk, ll) = (model.n_types(), model.n_attitudes());
        if attitudes.len() != kk * ll {
            return Err(Error::InvalidArgument(format!(
                "attitude table has length {}, expected {}",
                attitudes.len(),
                kk * ll
            )));
        }
        check_simplex_rows("attitudes", &attitudes, ll)?;
        let log_rows = attitudes.iter().map(|p| p.ln()).collect();
        Ok(Self { ratings: BTreeMap::new(), log_rows, attitude_posterior: attitudes, width: ll })
    }

    pub fn attitude_posterior(&self) -> &[f64] {
        &self.attitude_posterior
    }

    pub fn attitude_row(&self, k: usize) -> &[f64] {
        &self.attitude_posterior[k * self.width..(k + 1) * self.width]
    }

    pub fn n_attitudes(&self) -> usize {
        self.width
    }
}

impl BeliefState for UserState {
    fn ratings(&self) -> &BTreeMap<usize, u8> {
        &self.ratings
    }
}

impl RatingModel for McvqModel {
    type State = UserState;

    fn n_items(&self) -> usize {
        self.params.n_items
    }

    fn rho(&self) -> usize {
        self.params.rho
    }

    fn prior_state(&self) -> UserState {
        UserState {
            ratings: BTreeMap::new(),
            log_rows: self.prior_log_rows(),
            attitude_posterior: self.params.attitude_prior.clone(),
            width: self.params.n_attitudes,
        }
    }

    fn observe(&self, state: &UserState, item: usize, rating: u8) -> Result<UserState> {
        self.incremental_update(state, item, rating)
    }

    fn predict(&self, state: &UserState, item: usize) -> Result<RatingPosterior> {
        self.rating_posterior(state, item)
    }

    fn predict_mean(&self, state: &UserState, item: usize) -> Result<f64> {
        self.check_item(item)?;
        if state.ratings.contains_key(&item) {
            return Err(Error::ContractViolation(format!("item {item} is already observed")));
        }
        Ok(self.posterior_mean(state, item))
    }

    fn state_from_ratings(&self, ratings: &BTreeMap<usize, u8>) -> Result<UserState> {
        self.update_attitudes(ratings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    }

    fn random_model(seed: u64, m: usize, kk: usize, ll: usize, rho: usize) -> McvqModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let type_dist = (0..m).flat_map(|_| simplex(&mut rng, kk)).collect();
        let attitude_prior = (0..kk).flat_map(|_| simplex(&mut rng, ll)).collect();
        let n = m * kk * ll;
        let rating_mean = (0..n).map(|_| rng.random_range(1.0..=rho as f64)).collect();
        let rating_var = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        McvqModel::new(McvqParams { n_items: m, n_types: kk, n_attitudes: ll, rho, type_dist, attitude_prior, rating_mean, rating_var })
            .unwrap()
    }

    #[test]
    fn binning_point_mass_and_symmetry() {
        assert_eq!(bin_gaussian(3.0, 0.0, 6).unwrap(), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(bin_gaussian(9.0, 0.0, 6).unwrap()[5], 1.0);
        for var in [0.01, 0.3, 2.0, 50.0] {
            let p = bin_gaussian(3.5, var, 6).unwrap();
            for r in 0..3 {
                assert!((p[r] - p[5 - r]).abs() < 1e-14, "var {var}: {p:?}");
            }
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(bin_gaussian(3.0, -1.0, 6).is_err());
    }

    #[test]
    fn tiny_variance_concentrates_on_the_rounded_mean() {
        let p = bin_gaussian(3.0, 1e-9, 6).unwrap();
        assert!((p[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rows() {
        let mut params = random_model(1, 2, 2, 2, 4).params().clone();
        params.type_dist[0] += 0.1;
        assert!(matches!(McvqModel::new(params), Err(Error::Validation(_))));
        let mut params = random_model(1, 2, 2, 2, 4).params().clone();
        params.rating_mean[0] = 0.5;
        assert!(McvqModel::new(params).is_err());
    }

    #[test]
    fn single_type_single_attitude_posterior_is_theta() {
        let m = random_model(2, 3, 1, 1, 5);
        let state = m.update_attitudes(&BTreeMap::from([(0, 2)])).unwrap();
        let post = m.rating_posterior(&state, 1).unwrap();
        for (a, b) in post.probs.iter().zip(m.theta(1, 0, 0)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_history_gives_the_prior() {
        let m = random_model(3, 4, 2, 3, 6);
        let state = m.update_attitudes(&BTreeMap::new()).unwrap();
        assert_eq!(state.attitude_posterior(), m.attitude_prior());
    }

    #[test]
    fn item_outside_a_vq_leaves_its_row_unchanged() {
        let mut params = random_model(4, 3, 2, 2, 6).params().clone();
        params.type_dist[0..2].copy_from_slice(&[1.0, 0.0]);
        let m = McvqModel::new(params).unwrap();
        let state = m.update_attitudes(&BTreeMap::from([(0, 5)])).unwrap();
        for (a, b) in state.attitude_row(1).iter().zip(m.attitude_prior_row(1)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn incremental_matches_batch_and_commutes() {
        let m = random_model(5, 6, 3, 3, 6);
        let a = m.incremental_update(&m.prior_state(), 1, 4).unwrap();
        let ab = m.incremental_update(&a, 3, 2).unwrap();
        let b = m.incremental_update(&m.prior_state(), 3, 2).unwrap();
        let ba = m.incremental_update(&b, 1, 4).unwrap();
        let batch = m.update_attitudes(&BTreeMap::from([(1, 4), (3, 2)])).unwrap();
        for ((x, y), z) in ab.attitude_posterior().iter().zip(ba.attitude_posterior()).zip(batch.attitude_posterior()) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
        let single = m.update_attitudes(&BTreeMap::from([(1, 4)])).unwrap();
        assert_eq!(single.attitude_posterior(), a.attitude_posterior());
    }

    #[test]
    fn contract_violations() {
        let m = random_model(6, 4, 2, 2, 6);
        let s = m.update_attitudes(&BTreeMap::from([(0, 3)])).unwrap();
        assert!(matches!(m.rating_posterior(&s, 0), Err(Error::ContractViolation(_))));
        assert!(matches!(m.incremental_update(&s, 0, 1), Err(Error::ContractViolation(_))));
        assert!(matches!(m.posterior_after_response(&s, 1, 2, 1), Err(Error::ContractViolation(_))));
        assert!(matches!(m.update_attitudes(&BTreeMap::from([(1, 7)])), Err(Error::Validation(_))));
        assert!(m.update_attitudes(&BTreeMap::from([(9, 1)])).is_err());
    }

    #[test]
    fn degenerate_row_is_reported() {
        let rows = vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert!(matches!(normalize_log_rows(&rows, 2), Err(Error::Degenerate { vq: 1 })));
    }

    #[test]
    fn posterior_after_response_equals_update_then_predict() {
        let m = random_model(7, 5, 2, 3, 4);
        let s = m.update_attitudes(&BTreeMap::from([(0, 1)])).unwrap();
        let direct = m.posterior_after_response(&s, 2, 3, 4).unwrap();
        let via = m.rating_posterior(&m.incremental_update(&s, 2, 3).unwrap(), 4).unwrap();
        assert_eq!(direct, via);
    }

    #[test]
    fn mean_shortcut_matches_distribution_mean() {
        let m = random_model(8, 5, 3, 2, 6);
        let s = m.update_attitudes(&BTreeMap::from([(0, 6), (2, 1)])).unwrap();
        for j in [1, 3, 4] {
            let full = m.rating_posterior(&s, j).unwrap().mean;
            assert!((m.predict_mean(&s, j).unwrap() - full).abs() < 1e-12);
            assert!((1.0..=6.0).contains(&full));
        }
    }

    #[test]
    fn fixed_point_convention_is_normalized() {
        let m = random_model(9, 5, 3, 2, 6).with_convention(AttitudeConvention::FixedPoint { max_iters: 50, tol: 1e-12 });
        let s = m.update_attitudes(&BTreeMap::from([(0, 6), (2, 1), (3, 4)])).unwrap();
        for k in 0..3 {
            assert!((s.attitude_row(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
