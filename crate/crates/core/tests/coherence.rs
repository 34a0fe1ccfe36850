mod common;

use std::collections::BTreeMap;

use acf_core::model::RatingModel;
use acf_core::naive_bayes::{NaiveBayesModel, NaiveBayesParams};
use acf_core::strategies::{evoi, BeliefSnapshot};
use common::*;
use rand::Rng;

fn random_nb(r: &mut rand_chacha::ChaCha8Rng, m: usize, c: usize, rho: usize) -> NaiveBayesModel {
    NaiveBayesModel::new(NaiveBayesParams {
        n_items: m,
        n_components: c,
        rho,
        mixing: simplex(r, c),
        rating_multinomial: (0..m * c).flat_map(|_| simplex(r, rho)).collect(),
    })
    .unwrap()
}

#[test]
fn naive_bayes_tower_property() {
    let mut r = rng(21);
    for _ in 0..50 {
        let (m, c, rho) = (r.random_range(3..=10), r.random_range(1..=5), r.random_range(2..=6));
        let model = random_nb(&mut r, m, c, rho);
        let ratings = random_ratings(&mut r, m, rho, m - 2);
        let s = model.state_from_ratings(&ratings).unwrap();
        let free: Vec<usize> = (0..m).filter(|j| !ratings.contains_key(j)).collect();
        for &q in &free {
            let pq = model.predict(&s, q).unwrap().probs;
            for &j in free.iter().filter(|&&j| j != q) {
                let now = model.predict(&s, j).unwrap().probs;
                let mut mixed = vec![0.0; rho];
                for (i, p) in pq.iter().enumerate() {
                    let after = model.observe(&s, q, (i + 1) as u8).unwrap();
                    for (x, y) in mixed.iter_mut().zip(model.predict(&after, j).unwrap().probs) {
                        *x += p * y;
                    }
                }
                assert!(max_abs_diff(&mixed, &now) < 1e-12);
            }
        }
    }
}

#[test]
fn mcvq_total_probability_from_the_prior() {
    let mut r = rng(22);
    for _ in 0..50 {
        let (m, kk, ll, rho) =
            (r.random_range(2..=8), r.random_range(1..=3), r.random_range(1..=3), r.random_range(2..=6));
        let model = random_mcvq(&mut r, m, kk, ll, rho);
        let s = model.prior_state();
        for q in 0..m {
            let pq = model.predict(&s, q).unwrap().probs;
            let mut mixed = vec![0.0; kk * ll];
            for (i, p) in pq.iter().enumerate() {
                let after = model.observe(&s, q, (i + 1) as u8).unwrap();
                for (x, y) in mixed.iter_mut().zip(after.attitude_posterior()) {
                    *x += p * y;
                }
            }
            assert!(max_abs_diff(&mixed, model.attitude_prior()) < 1e-9);
        }
    }
}

#[test]
fn mcvq_total_probability_with_per_vq_normalizers() {
    let mut r = rng(23);
    for _ in 0..50 {
        let (m, kk, ll, rho) =
            (r.random_range(3..=8), r.random_range(1..=3), r.random_range(1..=3), r.random_range(2..=6));
        let model = random_mcvq(&mut r, m, kk, ll, rho);
        let ratings = random_ratings(&mut r, m, rho, m - 1);
        let s = model.update_attitudes(&ratings).unwrap();
        for q in (0..m).filter(|j| !ratings.contains_key(j)) {
            for k in 0..kk {
                let z = model.response_normalizer(&s, q, k);
                assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let mut mixed = vec![0.0; ll];
                for (i, w) in z.iter().enumerate() {
                    let after = model.incremental_update(&s, q, (i + 1) as u8).unwrap();
                    for (x, y) in mixed.iter_mut().zip(after.attitude_row(k)) {
                        *x += w * y;
                    }
                }
                assert!(max_abs_diff(&mixed, s.attitude_row(k)) < 1e-9);
            }
        }
    }
}

#[test]
fn naive_bayes_evoi_is_nonnegative_off_the_argmax() {
    let mut r = rng(24);
    for _ in 0..100 {
        let (m, c, rho) = (r.random_range(3..=10), r.random_range(1..=5), r.random_range(2..=6));
        let model = random_nb(&mut r, m, c, rho);
        let ratings: BTreeMap<usize, u8> = random_ratings(&mut r, m, rho, m - 3);
        let s = model.state_from_ratings(&ratings).unwrap();
        let free: Vec<usize> = (0..m).filter(|j| !ratings.contains_key(j)).collect();
        let snap = BeliefSnapshot::new(&model, &s, &free).unwrap();
        for &q in free.iter().filter(|&&q| q != snap.best_item()) {
            assert!(evoi(&model, &s, &snap, q, None).unwrap().value >= -1e-10);
        }
    }
}
