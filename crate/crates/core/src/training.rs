//! EM fitting for both rating models.
//!
//! MCVQ is fitted by mean-field variational EM. Per user the variational
//! posterior factorizes into attitude distributions `q_k(l)` per VQ and type
//! responsibilities `rho_j(k)` per observed item. An integer rating `r` is
//! scored as a rating spread uniformly over `[r - 1/2, r + 1/2]`: the expected
//! Gaussian log density over that interval, `ln N(r; mu, s2) - 1 / (24 s2)`,
//! lower-bounds the log of the binned probability and stops components from
//! collapsing onto single integers. The objective is the evidence lower bound
//! plus the log Dirichlet smoothing prior, so every E and M step is a
//! coordinate ascent step and the trace is non-decreasing.
//!
//! Each E-step starts every user from the better (by ELBO) of the previous
//! iteration's posterior and a fresh `update_attitudes` posterior under the
//! current parameters, then runs a few coordinate sweeps.
//!
//! Naive Bayes uses standard EM for a multinomial mixture; its trace is the
//! smoothed (MAP) log-likelihood.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::data::RatingsDataset;
use crate::error::{Error, Result};
use crate::mcvq::{McvqModel, McvqParams};
use crate::naive_bayes::{NaiveBayesModel, NaiveBayesParams};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of VQs (MCVQ).
    pub n_types: usize,
    /// Attitudes per VQ (MCVQ).
    pub n_attitudes: usize,
    /// Mixture components (naive Bayes).
    pub n_components: usize,
    pub max_iters: usize,
    /// Stop once the relative objective improvement drops below this.
    pub tol: f64,
    pub seed: u64,
    /// Dirichlet pseudo-count on every categorical parameter.
    pub smoothing: f64,
    pub var_floor: f64,
    /// Coordinate-ascent sweeps per user per MCVQ E-step.
    pub e_sweeps: usize,
    /// Standard deviation of the initial noise on item rating means.
    pub init_noise: f64,
    /// Independent MCVQ initializations; the one with the highest final
    /// objective is kept.
    pub restarts: usize,
    #[serde(skip, default)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_types: 12,
            n_attitudes: 4,
            n_components: 40,
            max_iters: 15,
            tol: 1e-6,
            seed: 0,
            smoothing: 0.1,
            var_floor: 0.05,
            e_sweeps: 3,
            init_noise: 0.5,
            restarts: 3,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.n_types == 0 || self.n_attitudes == 0 || self.n_components == 0 {
            return Err(Error::InvalidArgument("model sizes must be positive".into()));
        }
        if self.max_iters == 0 || self.restarts == 0 {
            return Err(Error::InvalidArgument("max_iters and restarts must be positive".into()));
        }
        if !(self.tol >= 0.0) || !(self.smoothing > 0.0) || !(self.var_floor > 0.0) {
            return Err(Error::InvalidArgument("tol must be >= 0, smoothing and var_floor > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective after each iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// False if any iteration decreased the objective by more than the
    /// monotonicity tolerance.
    pub monotone: bool,
    pub warnings: Vec<String>,
}

/// Tolerance used to flag a decreasing MCVQ objective.
pub const MCVQ_MONOTONE_TOL: f64 = 1e-6;
/// Tolerance used to flag a decreasing naive Bayes objective.
pub const NB_MONOTONE_TOL: f64 = 1e-9;

fn relative_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / prev.abs().max(1e-300)
}

fn is_monotone(trace: &[f64], tol: f64) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - tol * w[0].abs().max(1.0))
}

fn dirichlet_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    // Normalized unit exponentials are a flat Dirichlet draw.
    let row: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    // Keep strictly inside the simplex so every log term stays finite.
    let row: Vec<f64> = row.iter().map(|p| p.max(1e-6)).collect();
    let s: f64 = row.iter().sum();
    row.into_iter().map(|p| p / s).collect()
}

fn xlogy_over(x: f64, y: f64) -> f64 {
    // x * ln(y / x) with the 0 * ln 0 = 0 convention.
    if x > 0.0 {
        x * (y.ln() - x.ln())
    } else {
        0.0
    }
}

/// Variance of a unit-width uniform, the spread given to each integer rating.
const BIN_VAR: f64 = 1.0 / 12.0;

/// `E[ln N(x; mean, var)]` for `x` uniform on `[r - 1/2, r + 1/2]`.
fn binned_logpdf(r: f64, mean: f64, var: f64) -> f64 {
    let d = r - mean;
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (d * d + BIN_VAR) / (2.0 * var)
}

fn log_normalize(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

/// Continuous-rating parameters being fitted.
struct McvqState {
    m: usize,
    rho: usize,
    kk: usize,
    ll: usize,
    type_dist: Vec<f64>,
    attitude_prior: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl McvqState {
    fn idx(&self, j: usize, k: usize, l: usize) -> usize {
        (j * self.kk + k) * self.ll + l
    }

    fn logpdf(&self, j: usize, k: usize, l: usize, r: f64) -> f64 {
        let i = self.idx(j, k, l);
        binned_logpdf(r, self.mean[i], self.var[i])
    }

    fn model(&self) -> Result<McvqModel> {
        McvqModel::new(McvqParams {
            n_items: self.m,
            n_types: self.kk,
            n_attitudes: self.ll,
            rho: self.rho,
            type_dist: self.type_dist.clone(),
            attitude_prior: self.attitude_prior.clone(),
            rating_mean: self.mean.clone(),
            rating_var: self.var.clone(),
        })
    }
}

/// Per-user variational posterior.
#[derive(Clone)]
struct UserPosterior {
    /// `q_k(l)`, `K x L`.
    attitudes: Vec<f64>,
    /// `rho_j(k)` per observation, `n_obs x K`.
    types: Vec<f64>,
}

/// Optimal type responsibilities given attitudes.
fn update_types(st: &McvqState, obs: &[(usize, f64)], attitudes: &[f64]) -> Vec<f64> {
    let (kk, ll) = (st.kk, st.ll);
    let mut types = vec![0.0; obs.len() * kk];
    for (o, &(j, r)) in obs.iter().enumerate() {
        let row = &mut types[o * kk..(o + 1) * kk];
        for (k, x) in row.iter_mut().enumerate() {
            let mut s = st.type_dist[j * kk + k].ln();
            for l in 0..ll {
                s += attitudes[k * ll + l] * st.logpdf(j, k, l, r);
            }
            *x = s;
        }
        log_normalize(row);
    }
    types
}

/// Optimal attitudes given type responsibilities.
fn update_attitude_factors(st: &McvqState, obs: &[(usize, f64)], types: &[f64]) -> Vec<f64> {
    let (kk, ll) = (st.kk, st.ll);
    let mut att: Vec<f64> = st.attitude_prior.iter().map(|p| p.ln()).collect();
    for (o, &(j, r)) in obs.iter().enumerate() {
        for k in 0..kk {
            let w = types[o * kk + k];
            if w == 0.0 {
                continue;
            }
            for l in 0..ll {
                att[k * ll + l] += w * st.logpdf(j, k, l, r);
            }
        }
    }
    for row in att.chunks_mut(ll) {
        log_normalize(row);
    }
    att
}

fn user_elbo(st: &McvqState, obs: &[(usize, f64)], post: &UserPosterior) -> f64 {
    let (kk, ll) = (st.kk, st.ll);
    let mut e = 0.0;
    for (q, p) in post.attitudes.iter().zip(&st.attitude_prior) {
        e += xlogy_over(*q, *p);
    }
    for (o, &(j, r)) in obs.iter().enumerate() {
        for k in 0..kk {
            let w = post.types[o * kk + k];
            if w == 0.0 {
                continue;
            }
            e += xlogy_over(w, st.type_dist[j * kk + k]);
            let mut inner = 0.0;
            for l in 0..ll {
                let q = post.attitudes[k * ll + l];
                if q > 0.0 {
                    inner += q * st.logpdf(j, k, l, r);
                }
            }
            e += w * inner;
        }
    }
    e
}

fn prior_penalty(st: &McvqState, smoothing: f64) -> f64 {
    smoothing * (st.type_dist.iter().map(|p| p.ln()).sum::<f64>() + st.attitude_prior.iter().map(|p| p.ln()).sum::<f64>())
}

/// Fits an MCVQ model by mean-field variational EM. Restart `i` uses seed
/// `cfg.seed + i`.
pub fn fit_mcvq(d: &RatingsDataset, cfg: &TrainConfig) -> Result<(McvqModel, FitReport)> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let mut best: Option<(McvqModel, FitReport)> = None;
    for i in 0..cfg.restarts {
        let run_cfg = TrainConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
        let (model, report) = fit_mcvq_once(d, &run_cfg)?;
        let score = report.trace.last().copied().unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((_, b)) => score > b.trace.last().copied().unwrap_or(f64::NEG_INFINITY),
        };
        if better {
            best = Some((model, report));
        }
    }
    Ok(best.expect("at least one restart"))
}

fn fit_mcvq_once(d: &RatingsDataset, cfg: &TrainConfig) -> Result<(McvqModel, FitReport)> {
    let (m, kk, ll, rho) = (d.n_items(), cfg.n_types, cfg.n_attitudes, d.rho());
    let mut warnings = Vec::new();
    if kk * ll > rho * m {
        warnings.push(format!("K*L = {} exceeds the distinct rating support {}", kk * ll, rho * m));
    }
    let users: Vec<Vec<(usize, f64)>> = d
        .by_user()
        .into_iter()
        .map(|v| v.into_iter().map(|(j, r)| (j, r as f64)).collect())
        .collect();

    let mut st = init_mcvq(d, cfg);
    let mut posts: Vec<Option<UserPosterior>> = vec![None; users.len()];
    let mut trace = Vec::new();
    let mut converged = false;

    // Initial E-step so the first M-step has responsibilities to work with.
    let mut objective;
    (posts, _) = mcvq_e_step(&st, &users, &posts, cfg)?;
    for _ in 0..cfg.max_iters {
        mcvq_m_step(&mut st, &users, &posts, cfg);
        (posts, objective) = mcvq_e_step(&st, &users, &posts, cfg)?;
        let prev = trace.last().copied();
        trace.push(objective);
        if let Some(prev) = prev {
            if relative_change(prev, objective) < cfg.tol {
                converged = true;
                break;
            }
        }
    }
    let monotone = is_monotone(&trace, MCVQ_MONOTONE_TOL);
    if !monotone {
        warnings.push("variational objective decreased during training".into());
    }
    Ok((st.model()?, FitReport { trace, converged, monotone, warnings }))
}

fn init_mcvq(d: &RatingsDataset, cfg: &TrainConfig) -> McvqState {
    let (m, kk, ll, rho) = (d.n_items(), cfg.n_types, cfg.n_attitudes, d.rho());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let type_dist: Vec<f64> = (0..m).flat_map(|_| dirichlet_row(&mut rng, kk)).collect();
    let attitude_prior: Vec<f64> = (0..kk).flat_map(|_| dirichlet_row(&mut rng, ll)).collect();

    let n = d.len() as f64;
    let global_mean = d.observations().iter().map(|o| o.rating as f64).sum::<f64>() / n;
    let global_var = (d.observations().iter().map(|o| (o.rating as f64 - global_mean).powi(2)).sum::<f64>() / n)
        .max(cfg.var_floor);
    let mut sums = vec![(0.0, 0usize); m];
    for o in d.observations() {
        sums[o.item].0 += o.rating as f64;
        sums[o.item].1 += 1;
    }
    let noise = Normal::new(0.0, cfg.init_noise.max(0.0)).expect("valid noise");
    let mut mean = Vec::with_capacity(m * kk * ll);
    for &(s, c) in &sums {
        let base = if c > 0 { s / c as f64 } else { global_mean };
        for _ in 0..kk * ll {
            mean.push((base + noise.sample(&mut rng)).clamp(1.0, rho as f64));
        }
    }
    let var = vec![global_var; m * kk * ll];
    McvqState { m, rho, kk, ll, type_dist, attitude_prior, mean, var }
}

fn mcvq_e_step(
    st: &McvqState,
    users: &[Vec<(usize, f64)>],
    prev: &[Option<UserPosterior>],
    cfg: &TrainConfig,
) -> Result<(Vec<Option<UserPosterior>>, f64)> {
    let binned = st.model()?;
    let results = par::try_map_range(cfg.execution, users.len(), |i| -> Result<(UserPosterior, f64)> {
        let obs = &users[i];
        let ratings = obs.iter().map(|&(j, r)| (j, r as u8)).collect();
        let fresh_att = binned.update_attitudes(&ratings)?.attitude_posterior().to_vec();
        let fresh_types = update_types(st, obs, &fresh_att);
        let mut post = UserPosterior { attitudes: fresh_att, types: fresh_types };
        let mut best = user_elbo(st, obs, &post);
        if let Some(old) = &prev[i] {
            let warm = UserPosterior { attitudes: old.attitudes.clone(), types: update_types(st, obs, &old.attitudes) };
            let e = user_elbo(st, obs, &warm);
            if e > best {
                post = warm;
                best = e;
            }
        }
        for _ in 0..cfg.e_sweeps {
            let attitudes = update_attitude_factors(st, obs, &post.types);
            let types = update_types(st, obs, &attitudes);
            let cand = UserPosterior { attitudes, types };
            let e = user_elbo(st, obs, &cand);
            // Exact coordinate steps cannot lower the bound; the guard only
            // absorbs rounding.
            if e >= best {
                post = cand;
                best = e;
            } else {
                break;
            }
        }
        Ok((post, best))
    })?;
    let mut total = prior_penalty(st, cfg.smoothing);
    let mut posts = Vec::with_capacity(results.len());
    for (p, e) in results {
        total += e;
        posts.push(Some(p));
    }
    Ok((posts, total))
}

fn mcvq_m_step(st: &mut McvqState, users: &[Vec<(usize, f64)>], posts: &[Option<UserPosterior>], cfg: &TrainConfig) {
    let (m, kk, ll) = (st.m, st.kk, st.ll);
    let s = cfg.smoothing;
    let mut type_counts = vec![0.0; m * kk];
    let mut att_counts = vec![0.0; kk * ll];
    let mut w_sum = vec![0.0; m * kk * ll];
    let mut wr_sum = vec![0.0; m * kk * ll];
    let mut wrr_sum = vec![0.0; m * kk * ll];
    for (obs, post) in users.iter().zip(posts) {
        let post = post.as_ref().expect("e-step ran");
        for (c, q) in att_counts.iter_mut().zip(&post.attitudes) {
            *c += q;
        }
        for (o, &(j, r)) in obs.iter().enumerate() {
            for k in 0..kk {
                let w_t = post.types[o * kk + k];
                type_counts[j * kk + k] += w_t;
                for l in 0..ll {
                    let w = w_t * post.attitudes[k * ll + l];
                    let i = st.idx(j, k, l);
                    w_sum[i] += w;
                    wr_sum[i] += w * r;
                    wrr_sum[i] += w * r * r;
                }
            }
        }
    }
    for (row_out, row_in) in st.type_dist.chunks_mut(kk).zip(type_counts.chunks(kk)) {
        let total: f64 = row_in.iter().sum::<f64>() + kk as f64 * s;
        for (o, c) in row_out.iter_mut().zip(row_in) {
            *o = (c + s) / total;
        }
    }
    for (row_out, row_in) in st.attitude_prior.chunks_mut(ll).zip(att_counts.chunks(ll)) {
        let total: f64 = row_in.iter().sum::<f64>() + ll as f64 * s;
        for (o, c) in row_out.iter_mut().zip(row_in) {
            *o = (c + s) / total;
        }
    }
    for i in 0..m * kk * ll {
        let w = w_sum[i];
        if w > 1e-12 {
            let mu = wr_sum[i] / w;
            // Variance about the new mean, from the weighted moments, plus
            // the within-bin spread.
            let v = (wrr_sum[i] / w - mu * mu).max(0.0) + BIN_VAR;
            st.mean[i] = mu.clamp(1.0, st.rho as f64);
            st.var[i] = v.max(cfg.var_floor);
        }
    }
}

/// Fits a naive Bayes (latent-class) model by EM.
pub fn fit_naive_bayes(d: &RatingsDataset, cfg: &TrainConfig) -> Result<(NaiveBayesModel, FitReport)> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let (m, c, rho) = (d.n_items(), cfg.n_components, d.rho());
    let users = d.by_user();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut resp: Vec<Vec<f64>> = users.iter().map(|_| dirichlet_row(&mut rng, c)).collect();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut params = NaiveBayesParams {
        n_items: m,
        n_components: c,
        rho,
        mixing: vec![1.0 / c as f64; c],
        rating_multinomial: vec![1.0 / rho as f64; m * c * rho],
    };
    for _ in 0..cfg.max_iters {
        nb_m_step(&mut params, &users, &resp, cfg.smoothing);
        let (next, objective) = nb_e_step(&params, &users, cfg);
        resp = next;
        let prev = trace.last().copied();
        trace.push(objective);
        if let Some(prev) = prev {
            if relative_change(prev, objective) < cfg.tol {
                converged = true;
                break;
            }
        }
    }
    let monotone = is_monotone(&trace, NB_MONOTONE_TOL);
    let mut warnings = Vec::new();
    if !monotone {
        warnings.push("log-likelihood decreased during training".into());
    }
    Ok((NaiveBayesModel::new(params)?, FitReport { trace, converged, monotone, warnings }))
}

fn nb_m_step(params: &mut NaiveBayesParams, users: &[Vec<(usize, u8)>], resp: &[Vec<f64>], s: f64) {
    let (c, rho) = (params.n_components, params.rho);
    let mut mix = vec![0.0; c];
    let mut counts = vec![0.0; params.n_items * c * rho];
    for (obs, g) in users.iter().zip(resp) {
        for (mc, gc) in mix.iter_mut().zip(g) {
            *mc += gc;
        }
        for &(j, r) in obs {
            for (ci, gc) in g.iter().enumerate() {
                counts[(j * c + ci) * rho + r as usize - 1] += gc;
            }
        }
    }
    let total: f64 = mix.iter().sum::<f64>() + c as f64 * s;
    for (p, mc) in params.mixing.iter_mut().zip(&mix) {
        *p = (mc + s) / total;
    }
    for (out, row) in params.rating_multinomial.chunks_mut(rho).zip(counts.chunks(rho)) {
        let total: f64 = row.iter().sum::<f64>() + rho as f64 * s;
        for (o, n) in out.iter_mut().zip(row) {
            *o = (n + s) / total;
        }
    }
}

/// Responsibilities and the smoothed log-likelihood at `params`.
fn nb_e_step(params: &NaiveBayesParams, users: &[Vec<(usize, u8)>], cfg: &TrainConfig) -> (Vec<Vec<f64>>, f64) {
    let (c, rho) = (params.n_components, params.rho);
    let log_mix: Vec<f64> = params.mixing.iter().map(|p| p.ln()).collect();
    let log_phi: Vec<f64> = params.rating_multinomial.iter().map(|p| p.ln()).collect();
    let results = par::map_range(cfg.execution, users.len(), |i| {
        let mut lp = log_mix.clone();
        for &(j, r) in &users[i] {
            for (ci, x) in lp.iter_mut().enumerate() {
                *x += log_phi[(j * c + ci) * rho + r as usize - 1];
            }
        }
        let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = lp.iter().map(|x| (x - max).exp()).sum();
        let ll = max + sum.ln();
        let g: Vec<f64> = lp.iter().map(|x| (x - ll).exp()).collect();
        (g, ll)
    });
    let penalty = cfg.smoothing * (log_mix.iter().sum::<f64>() + log_phi.iter().sum::<f64>());
    let mut total = penalty;
    let mut resp = Vec::with_capacity(results.len());
    for (g, ll) in results {
        total += ll;
        resp.push(g);
    }
    (resp, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Observation};
    use crate::synthetic::{separated_mcvq, SeparatedSpec};

    fn small_config() -> TrainConfig {
        TrainConfig { n_types: 2, n_attitudes: 2, n_components: 3, max_iters: 8, seed: 5, ..Default::default() }
    }

    fn toy() -> RatingsDataset {
        let gt = separated_mcvq(&SeparatedSpec { n_items: 8, n_types: 2, seed: 1, ..Default::default() }).unwrap();
        generate_synthetic(&gt, 60, 0.7, 2).unwrap()
    }

    #[test]
    fn one_component_naive_bayes_is_the_smoothed_histogram() {
        let obs = vec![
            Observation { user: 0, item: 0, rating: 1 },
            Observation { user: 1, item: 0, rating: 1 },
            Observation { user: 2, item: 0, rating: 3 },
            Observation { user: 0, item: 1, rating: 2 },
        ];
        let d = RatingsDataset::new(3, 2, 3, obs, None, None).unwrap();
        let cfg = TrainConfig { n_components: 1, smoothing: 0.5, ..small_config() };
        let (m, report) = fit_naive_bayes(&d, &cfg).unwrap();
        let expect0 = [2.5 / 4.5, 0.5 / 4.5, 1.5 / 4.5];
        let expect1 = [0.5 / 2.5, 1.5 / 2.5, 0.5 / 2.5];
        for (got, want) in m.phi(0, 0).iter().zip(expect0).chain(m.phi(1, 0).iter().zip(expect1)) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(report.converged);
    }

    #[test]
    fn traces_are_monotone() {
        let d = toy();
        let (_, nb) = fit_naive_bayes(&d, &small_config()).unwrap();
        assert!(nb.monotone, "{:?}", nb.trace);
        let (_, mc) = fit_mcvq(&d, &small_config()).unwrap();
        assert!(mc.monotone, "{:?}", mc.trace);
        assert!(mc.trace.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn fitting_is_deterministic_across_execution_modes() {
        let d = toy();
        let seq = TrainConfig { execution: Execution::Sequential, ..small_config() };
        let (a, ra) = fit_mcvq(&d, &seq).unwrap();
        let (b, rb) = fit_mcvq(&d, &small_config()).unwrap();
        assert_eq!(ra.trace, rb.trace);
        assert_eq!(a.params(), b.params());
        let (c, _) = fit_naive_bayes(&d, &seq).unwrap();
        let (e, _) = fit_naive_bayes(&d, &small_config()).unwrap();
        assert_eq!(c.params(), e.params());
    }

    #[test]
    fn restarts_never_lower_the_final_objective() {
        let d = toy();
        let (_, one) = fit_mcvq(&d, &TrainConfig { restarts: 1, ..small_config() }).unwrap();
        let (_, three) = fit_mcvq(&d, &TrainConfig { restarts: 3, ..small_config() }).unwrap();
        assert!(three.trace.last().unwrap() >= one.trace.last().unwrap());
    }

    #[test]
    fn fitted_means_stay_on_the_scale() {
        let (m, _) = fit_mcvq(&toy(), &small_config()).unwrap();
        assert!(m.params().rating_mean.iter().all(|&x| (1.0..=6.0).contains(&x)));
        assert!(m.params().rating_var.iter().all(|&v| v >= 0.05));
    }

    #[test]
    fn rejects_bad_configs_and_empty_data() {
        let d = toy();
        for cfg in [
            TrainConfig { n_types: 0, ..small_config() },
            TrainConfig { max_iters: 0, ..small_config() },
            TrainConfig { smoothing: 0.0, ..small_config() },
            TrainConfig { restarts: 0, ..small_config() },
        ] {
            assert!(fit_mcvq(&d, &cfg).is_err());
        }
        let empty = RatingsDataset::new(1, 1, 6, vec![], None, None).unwrap();
        assert!(fit_mcvq(&empty, &small_config()).is_err());
        assert!(fit_naive_bayes(&empty, &small_config()).is_err());
    }

    #[test]
    fn xlogy_handles_zero_and_denormals() {
        assert_eq!(xlogy_over(0.0, 0.5), 0.0);
        assert!(xlogy_over(1e-310, 0.5).is_finite());
    }
}
