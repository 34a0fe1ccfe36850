#![allow(dead_code)]

pub mod recovery;

use std::collections::BTreeMap;

use acf_core::mcvq::{McvqModel, McvqParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// A random MCVQ with the given dimensions. Some type rows are sparse so the
/// zero-probability paths get exercised.
pub fn random_mcvq(rng: &mut ChaCha8Rng, m: usize, kk: usize, ll: usize, rho: usize) -> McvqModel {
    let mut type_dist = Vec::new();
    for _ in 0..m {
        let mut row = simplex(rng, kk);
        if kk > 1 && rng.random_bool(0.2) {
            let z = rng.random_range(0..kk);
            let lost = row[z];
            row[z] = 0.0;
            let keep = (z + 1) % kk;
            row[keep] += lost;
        }
        type_dist.extend(row);
    }
    let attitude_prior = (0..kk).flat_map(|_| simplex(rng, ll)).collect();
    let n = m * kk * ll;
    McvqModel::new(McvqParams {
        n_items: m,
        n_types: kk,
        n_attitudes: ll,
        rho,
        type_dist,
        attitude_prior,
        rating_mean: (0..n).map(|_| rng.random_range(1.0..=rho as f64)).collect(),
        rating_var: (0..n).map(|_| rng.random_range(0.1..2.0)).collect(),
    })
    .unwrap()
}

pub fn random_ratings(rng: &mut ChaCha8Rng, m: usize, rho: usize, max: usize) -> BTreeMap<usize, u8> {
    let n = rng.random_range(0..=max.min(m - 1));
    let mut out = BTreeMap::new();
    while out.len() < n {
        out.insert(rng.random_range(0..m), rng.random_range(1..=rho as u8));
    }
    out
}

/// Half-integer binning of a Gaussian through the normal CDF.
pub fn oracle_bins(mean: f64, var: f64, rho: usize) -> Vec<f64> {
    let n = Normal::new(mean, var.sqrt()).unwrap();
    let mut p: Vec<f64> = (1..=rho)
        .map(|r| {
            let lo = if r == 1 { f64::NEG_INFINITY } else { r as f64 - 0.5 };
            let hi = if r == rho { f64::INFINITY } else { r as f64 + 0.5 };
            // Difference on whichever side of the mean avoids cancellation.
            if lo >= mean {
                n.sf(lo) - if hi.is_infinite() { 0.0 } else { n.sf(hi) }
            } else {
                (if hi.is_infinite() { 1.0 } else { n.cdf(hi) }) - if lo.is_infinite() { 0.0 } else { n.cdf(lo) }
            }
        })
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Plain-array copy of a model's parameters with independently binned
/// multinomials.
pub struct Oracle {
    pub m: usize,
    pub kk: usize,
    pub ll: usize,
    pub rho: usize,
    pub t: Vec<Vec<f64>>,
    pub prior: Vec<Vec<f64>>,
    pub theta: Vec<Vec<Vec<Vec<f64>>>>,
}

impl Oracle {
    pub fn new(model: &McvqModel) -> Self {
        let p = model.params();
        let (m, kk, ll, rho) = (p.n_items, p.n_types, p.n_attitudes, p.rho);
        let t = (0..m).map(|j| p.type_dist[j * kk..(j + 1) * kk].to_vec()).collect();
        let prior = (0..kk).map(|k| p.attitude_prior[k * ll..(k + 1) * ll].to_vec()).collect();
        let theta = (0..m)
            .map(|j| {
                (0..kk)
                    .map(|k| {
                        (0..ll)
                            .map(|l| {
                                let i = (j * kk + k) * ll + l;
                                oracle_bins(p.rating_mean[i], p.rating_var[i], rho)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { m, kk, ll, rho, t, prior, theta }
    }

    fn floored(&self, j: usize, k: usize, l: usize, r: usize) -> f64 {
        self.theta[j][k][l][r].max(1e-12)
    }

    /// `P(A_k = l | ratings)` as a direct product of bracket factors.
    pub fn attitudes(&self, ratings: &BTreeMap<usize, u8>) -> Vec<Vec<f64>> {
        (0..self.kk)
            .map(|k| {
                let mut row: Vec<f64> = (0..self.ll)
                    .map(|l| {
                        let mut w = self.prior[k][l];
                        for (&j, &r) in ratings {
                            let r = r as usize - 1;
                            let mut f = 0.0;
                            for kp in (0..self.kk).filter(|&kp| kp != k) {
                                let mix: f64 = (0..self.ll).map(|lp| self.prior[kp][lp] * self.floored(j, kp, lp, r)).sum();
                                f += self.t[j][kp] * mix;
                            }
                            w *= f + self.t[j][k] * self.floored(j, k, l, r);
                        }
                        w
                    })
                    .collect();
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
                row
            })
            .collect()
    }

    pub fn rating_posterior(&self, att: &[Vec<f64>], j: usize) -> Vec<f64> {
        (0..self.rho)
            .map(|r| {
                (0..self.kk)
                    .map(|k| self.t[j][k] * (0..self.ll).map(|l| att[k][l] * self.theta[j][k][l][r]).sum::<f64>())
                    .sum()
            })
            .collect()
    }

    pub fn mean(&self, att: &[Vec<f64>], j: usize) -> f64 {
        self.rating_posterior(att, j).iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum()
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
