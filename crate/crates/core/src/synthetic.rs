//! Ground-truth models with well-separated parameters, for tests, demos and
//! the replay experiments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_categorical, Observation, RatingsDataset};
use crate::error::{Error, Result};
use crate::mcvq::{McvqModel, McvqParams};
use crate::naive_bayes::{NaiveBayesModel, NaiveBayesParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparatedSpec {
    pub n_items: usize,
    pub n_types: usize,
    pub n_attitudes: usize,
    pub rho: usize,
    /// Probability mass on each item's primary type; the rest is spread
    /// evenly over the other types.
    pub primary_weight: f64,
    /// Item base quality is drawn uniformly from this range.
    pub base_range: (f64, f64),
    /// Share of items whose rating depends on the user's attitude.
    pub informative_fraction: f64,
    /// Informative items place the `L` attitudes at evenly spaced offsets in
    /// `[-spread, spread]`, in random order.
    pub spread: f64,
    pub informative_var: f64,
    /// Rating variance of the attitude-independent items.
    pub distractor_var: f64,
    pub seed: u64,
}

impl Default for SeparatedSpec {
    fn default() -> Self {
        Self {
            n_items: 50,
            n_types: 3,
            n_attitudes: 2,
            rho: 6,
            primary_weight: 0.94,
            base_range: (3.0, 4.0),
            informative_fraction: 0.5,
            spread: 2.0,
            informative_var: 0.2,
            distractor_var: 1.5,
            seed: 0,
        }
    }
}

/// Builds an MCVQ model where item `j` belongs mostly to type `j mod K`.
/// Informative items split their ratings sharply by attitude; the others are
/// noisy and attitude-independent. Attitude priors are uniform.
pub fn separated_mcvq(spec: &SeparatedSpec) -> Result<McvqModel> {
    let SeparatedSpec { n_items: m, n_types: kk, n_attitudes: ll, rho, .. } = *spec;
    if m == 0 || kk == 0 || ll == 0 || rho < 2 {
        return Err(Error::InvalidArgument("separated model needs M, K, L >= 1 and rho >= 2".into()));
    }
    if !(spec.primary_weight > 0.0 && spec.primary_weight <= 1.0) {
        return Err(Error::InvalidArgument("primary_weight must be in (0, 1]".into()));
    }
    if !(0.0..=1.0).contains(&spec.informative_fraction) {
        return Err(Error::InvalidArgument("informative_fraction must be in [0, 1]".into()));
    }
    if !(spec.informative_var >= 0.0 && spec.distractor_var >= 0.0 && spec.spread >= 0.0) {
        return Err(Error::InvalidArgument("variances and spread must be >= 0".into()));
    }
    let (lo, hi) = spec.base_range;
    if !(lo <= hi) {
        return Err(Error::InvalidArgument("base_range must be ordered".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rest = if kk > 1 { (1.0 - spec.primary_weight) / (kk - 1) as f64 } else { 0.0 };
    let mut type_dist = Vec::with_capacity(m * kk);
    for j in 0..m {
        for k in 0..kk {
            type_dist.push(if kk == 1 { 1.0 } else if k == j % kk { spec.primary_weight } else { rest });
        }
    }
    let attitude_prior = vec![1.0 / ll as f64; kk * ll];
    let offsets: Vec<f64> = (0..ll)
        .map(|l| if ll == 1 { 0.0 } else { -spec.spread + 2.0 * spec.spread * l as f64 / (ll - 1) as f64 })
        .collect();
    let mut rating_mean = Vec::with_capacity(m * kk * ll);
    let mut rating_var = Vec::with_capacity(m * kk * ll);
    for _ in 0..m {
        let base = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let informative = rng.random::<f64>() < spec.informative_fraction;
        for _ in 0..kk {
            let mut order = offsets.clone();
            order.shuffle(&mut rng);
            for &dev in &order {
                if informative {
                    rating_mean.push((base + dev).clamp(1.0, rho as f64));
                    rating_var.push(spec.informative_var);
                } else {
                    rating_mean.push(base.clamp(1.0, rho as f64));
                    rating_var.push(spec.distractor_var);
                }
            }
        }
    }
    McvqModel::new(McvqParams {
        n_items: m,
        n_types: kk,
        n_attitudes: ll,
        rho,
        type_dist,
        attitude_prior,
        rating_mean,
        rating_var,
    })
}

/// A naive Bayes model whose components have distinct, sharply peaked rating
/// distributions per item.
pub fn separated_naive_bayes(n_items: usize, n_components: usize, rho: usize, seed: u64) -> Result<NaiveBayesModel> {
    if n_items == 0 || n_components == 0 || rho < 2 {
        return Err(Error::InvalidArgument("separated model needs M, C >= 1 and rho >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = Vec::with_capacity(n_items * n_components * rho);
    for _ in 0..n_items {
        for _ in 0..n_components {
            let peak = rng.random_range(0..rho);
            let weights: Vec<f64> = (0..rho)
                .map(|r| 0.5f64.powi((r as i32 - peak as i32).abs() * 2))
                .collect();
            let total: f64 = weights.iter().sum();
            phi.extend(weights.iter().map(|w| w / total));
        }
    }
    NaiveBayesModel::new(NaiveBayesParams {
        n_items,
        n_components,
        rho,
        mixing: vec![1.0 / n_components as f64; n_components],
        rating_multinomial: phi,
    })
}

/// Samples users from a naive Bayes model: one component per user, then each
/// present item's rating from that component's distribution.
pub fn generate_naive_bayes(gt: &NaiveBayesModel, n_users: usize, density: f64, seed: u64) -> Result<RatingsDataset> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!("density must be in (0, 1], got {density}")));
    }
    let p = gt.params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observations = Vec::new();
    for user in 0..n_users {
        let c = sample_categorical(&mut rng, &p.mixing);
        for item in 0..p.n_items {
            if density < 1.0 && rng.random::<f64>() >= density {
                continue;
            }
            let r = sample_categorical(&mut rng, gt.phi(item, c)) + 1;
            observations.push(Observation { user, item, rating: r as u8 });
        }
    }
    RatingsDataset::new(n_users, p.n_items, p.rho, observations, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    #[test]
    fn separated_model_has_the_requested_shape() {
        let spec = SeparatedSpec { n_items: 9, seed: 3, ..Default::default() };
        let m = separated_mcvq(&spec).unwrap();
        assert_eq!((m.n_items(), m.n_types(), m.n_attitudes(), m.rho()), (9, 3, 2, 6));
        for j in 0..9 {
            assert!((m.type_prob(j, j % 3) - 0.94).abs() < 1e-12);
        }
        assert_eq!(separated_mcvq(&spec).unwrap(), m);
    }

    #[test]
    fn full_density_rates_every_pair() {
        let m = separated_mcvq(&SeparatedSpec { n_items: 7, seed: 1, ..Default::default() }).unwrap();
        let d = generate_synthetic(&m, 11, 1.0, 4).unwrap();
        assert_eq!(d.len(), 77);
        let nb = separated_naive_bayes(5, 2, 4, 1).unwrap();
        assert_eq!(generate_naive_bayes(&nb, 6, 1.0, 2).unwrap().len(), 30);
        assert!(generate_naive_bayes(&nb, 6, 0.0, 2).is_err());
    }

    #[test]
    fn point_mass_types_round_the_mean() {
        let p = McvqParams {
            n_items: 2,
            n_types: 1,
            n_attitudes: 1,
            rho: 6,
            type_dist: vec![1.0, 1.0],
            attitude_prior: vec![1.0],
            rating_mean: vec![2.2, 4.8],
            rating_var: vec![1e-4, 1e-4],
        };
        let d = generate_synthetic(&McvqModel::new(p).unwrap(), 50, 1.0, 0).unwrap();
        for o in d.observations() {
            assert_eq!(o.rating, if o.item == 0 { 2 } else { 5 });
        }
    }
}
