//! Query prototypes: a beta-spaced subset of items, chosen greedily in order
//! of popularity, that stands in for the full query set during EVOI.

use serde::{Deserialize, Serialize};

use crate::data::RatingsDataset;
use crate::error::{Error, Result};
use crate::mcvq::McvqModel;
use crate::par::{self, Execution};

/// `v_q[(k * L + l) * rho + r - 1] = P(T_q = k) theta^r_qkl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySignature(pub Vec<f64>);

pub fn signature(model: &McvqModel, q: usize) -> QuerySignature {
    let (kk, ll) = (model.n_types(), model.n_attitudes());
    let mut v = Vec::with_capacity(kk * ll * model.rho());
    for k in 0..kk {
        let t = model.type_prob(q, k);
        for l in 0..ll {
            v.extend(model.theta(q, k, l).iter().map(|th| t * th));
        }
    }
    QuerySignature(v)
}

pub fn l1_distance(a: &QuerySignature, b: &QuerySignature) -> Result<f64> {
    if a.0.len() != b.0.len() {
        return Err(Error::InvalidArgument(format!(
            "signature lengths differ: {} vs {}",
            a.0.len(),
            b.0.len()
        )));
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs()).sum())
}

/// All pairwise signature distances, row-major `M x M`.
pub fn distance_matrix(model: &McvqModel, exec: Execution) -> Vec<f64> {
    let m = model.n_items();
    let sigs: Vec<QuerySignature> = (0..m).map(|q| signature(model, q)).collect();
    par::map_range(exec, m, |i| {
        (0..m).map(|j| l1_distance(&sigs[i], &sigs[j]).expect("equal lengths")).collect::<Vec<f64>>()
    })
    .concat()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    /// Retained items, in the order they were added.
    pub members: Vec<usize>,
    pub beta: f64,
    /// Covering radius: the largest distance from any item to its nearest member.
    pub epsilon: f64,
    /// Training rating count per item, used for the selection order.
    pub popularity: Vec<usize>,
}

impl PrototypeSet {
    pub fn contains(&self, item: usize) -> bool {
        self.members.contains(&item)
    }

    pub fn n_items(&self) -> usize {
        self.popularity.len()
    }

    pub fn retained_fraction(&self) -> f64 {
        self.members.len() as f64 / self.n_items().max(1) as f64
    }
}

/// Items by descending rating count, ties by index.
pub fn popularity_order(counts: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order
}

/// Greedy selection over a precomputed distance matrix: walk items in
/// popularity order and keep one when its distance to every kept item is at
/// least `beta`.
pub fn select_prototypes_with(distances: &[f64], counts: &[usize], beta: f64) -> Result<PrototypeSet> {
    let m = counts.len();
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be >= 0, got {beta}")));
    }
    if distances.len() != m * m {
        return Err(Error::InvalidArgument("distance matrix does not match item count".into()));
    }
    let mut members: Vec<usize> = Vec::new();
    for q in popularity_order(counts) {
        if members.iter().all(|&p| distances[q * m + p] >= beta) {
            members.push(q);
        }
    }
    let epsilon = (0..m)
        .map(|j| members.iter().map(|&p| distances[j * m + p]).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    Ok(PrototypeSet { members, beta, epsilon, popularity: counts.to_vec() })
}

pub fn select_prototypes(model: &McvqModel, d: &RatingsDataset, beta: f64) -> Result<PrototypeSet> {
    if d.n_items() != model.n_items() {
        return Err(Error::InvalidArgument("dataset and model disagree on item count".into()));
    }
    let distances = distance_matrix(model, Execution::default());
    select_prototypes_with(&distances, &d.item_counts(), beta)
}

/// Searches the distinct pairwise distances for the `beta` whose prototype set
/// retains the number of items closest to `fraction * M` (ties to the smaller
/// `beta`). The greedy member count is not monotone in `beta` in general, so
/// this scans rather than bisects.
pub fn prototypes_for_fraction(model: &McvqModel, d: &RatingsDataset, fraction: f64) -> Result<PrototypeSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let m = model.n_items();
    let distances = distance_matrix(model, Execution::default());
    let counts = d.item_counts();
    let target = (fraction * m as f64).round().max(1.0) as usize;
    let mut betas: Vec<f64> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).map(|(i, j)| distances[i * m + j]).collect();
    betas.push(0.0);
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let mut best: Option<PrototypeSet> = None;
    for beta in betas {
        let set = select_prototypes_with(&distances, &counts, beta)?;
        let better = match &best {
            None => true,
            Some(b) => set.members.len().abs_diff(target) < b.members.len().abs_diff(target),
        };
        if better {
            best = Some(set);
        }
        if best.as_ref().is_some_and(|b| b.members.len() == target) {
            break;
        }
    }
    Ok(best.expect("at least beta = 0 was tried"))
}

/// Approximate bound on how much the EVOI-relevant quantities of two queries
/// at signature distance `epsilon` can differ.
///
/// `per_response[r - 1] = 12 epsilon / P(r)` and `aggregate = 12 epsilon`.
/// Note the aggregate is the headline figure, not `sum_r P(r) * per_response`,
/// which would be `12 epsilon rho`. This is a heuristic approximation, not a
/// proven bound; [`audit_difference_bound`] measures it.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceBound {
    pub per_response: Vec<f64>,
    pub aggregate: f64,
}

pub const DIFFERENCE_BOUND_FACTOR: f64 = 12.0;

pub fn evoi_difference_bound(epsilon: f64, response_probs: &[f64]) -> Result<DifferenceBound> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
    }
    let mut per_response = Vec::with_capacity(response_probs.len());
    for &p in response_probs {
        if !(p > 0.0) {
            return Err(Error::InvalidArgument("response probability must be > 0".into()));
        }
        per_response.push(DIFFERENCE_BOUND_FACTOR * epsilon / p);
    }
    let aggregate = DIFFERENCE_BOUND_FACTOR * epsilon;
    Ok(DifferenceBound { per_response, aggregate })
}

/// One row of the empirical audit of the `12 epsilon` approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub q: usize,
    pub q_prime: usize,
    pub target: usize,
    pub distance: f64,
    /// `|V^q_j - V^q'_j|`, where `V^q_j` is the response-weighted absolute
    /// change of the target's posterior mean after query `q`.
    pub observed_value_gap: f64,
    pub bound: f64,
    pub violated: bool,
}

/// Records, for every target and every pair of distinct queries, the gap in
/// the target's expected absolute mean change against `12 d(q, q')`.
/// Violations are findings, not errors.
///
/// The expected post-response mean itself is not audited: it equals the
/// current mean for a coherent model, whatever the query.
pub fn audit_difference_bound(
    model: &McvqModel,
    state: &crate::mcvq::UserState,
    queries: &[usize],
) -> Result<Vec<AuditFinding>> {
    use crate::model::{BeliefState, RatingModel};
    let mut out = Vec::new();
    let expected_change = |q: usize, j: usize| -> Result<f64> {
        let pred = model.rating_posterior(state, q)?;
        let now = model.predict_mean(state, j)?;
        let mut v = 0.0;
        for (idx, &p) in pred.probs.iter().enumerate() {
            if p > 0.0 {
                let after = model.predict_mean(&model.incremental_update(state, q, (idx + 1) as u8)?, j)?;
                v += p * (after - now).abs();
            }
        }
        Ok(v)
    };
    for (a, &q) in queries.iter().enumerate() {
        for &qp in &queries[a + 1..] {
            let distance = l1_distance(&signature(model, q), &signature(model, qp))?;
            let bound = DIFFERENCE_BOUND_FACTOR * distance;
            for j in 0..model.n_items() {
                if j == q || j == qp || state.is_observed(j) {
                    continue;
                }
                let gap = (expected_change(q, j)? - expected_change(qp, j)?).abs();
                out.push(AuditFinding {
                    q,
                    q_prime: qp,
                    target: j,
                    distance,
                    observed_value_gap: gap,
                    bound,
                    violated: gap > bound,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Distances for four items where greedy selection is not monotone in
    /// `beta`: d(a,b) = 1.05, d(b,c) = d(b,d) = 0.99, everything else 2.
    fn counterexample() -> (Vec<f64>, Vec<usize>) {
        let m = 4;
        let mut d = vec![2.0; m * m];
        for i in 0..m {
            d[i * m + i] = 0.0;
        }
        let mut set = |i: usize, j: usize, v: f64| {
            d[i * m + j] = v;
            d[j * m + i] = v;
        };
        set(0, 1, 1.05);
        set(1, 2, 0.99);
        set(1, 3, 0.99);
        // popularity order a, b, c, d
        (d, vec![40, 30, 20, 10])
    }

    #[test]
    fn beta_zero_keeps_every_item() {
        let (d, counts) = counterexample();
        let p = select_prototypes_with(&d, &counts, 0.0).unwrap();
        assert_eq!(p.members, vec![0, 1, 2, 3]);
        assert_eq!(p.epsilon, 0.0);
        assert_eq!(p.retained_fraction(), 1.0);
    }

    #[test]
    fn members_are_pairwise_at_least_beta_apart_and_cover_within_epsilon() {
        let (d, counts) = counterexample();
        for beta in [0.5, 1.0, 1.1, 3.0] {
            let p = select_prototypes_with(&d, &counts, beta).unwrap();
            for (x, &a) in p.members.iter().enumerate() {
                for &b in &p.members[x + 1..] {
                    assert!(d[a * 4 + b] >= beta);
                }
            }
            for j in 0..4 {
                let nearest = p.members.iter().map(|&q| d[j * 4 + q]).fold(f64::INFINITY, f64::min);
                assert!(nearest <= p.epsilon);
            }
        }
    }

    #[test]
    fn member_count_is_not_monotone_in_beta() {
        let (d, counts) = counterexample();
        // beta = 1: {a, b} then c and d are within 0.99 of b -> 2 members.
        assert_eq!(select_prototypes_with(&d, &counts, 1.0).unwrap().members, vec![0, 1]);
        // beta = 1.1: b is dropped, so c and d both join -> 3 members.
        assert_eq!(select_prototypes_with(&d, &counts, 1.1).unwrap().members, vec![0, 2, 3]);
    }

    #[test]
    fn popularity_ties_break_by_index() {
        assert_eq!(popularity_order(&[3, 5, 3, 5]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn difference_bound_aggregates_to_twelve_epsilon() {
        let b = evoi_difference_bound(0.1, &[0.2, 0.3, 0.5]).unwrap();
        assert!((b.aggregate - 1.2).abs() < 1e-12);
        assert!((b.per_response[0] - 6.0).abs() < 1e-12);
        assert!(evoi_difference_bound(0.1, &[0.0, 1.0]).is_err());
        assert!(evoi_difference_bound(-1.0, &[1.0]).is_err());
    }

    #[test]
    fn rejects_bad_arguments() {
        let (d, counts) = counterexample();
        assert!(select_prototypes_with(&d, &counts, -1.0).is_err());
        assert!(select_prototypes_with(&d[..4], &counts, 1.0).is_err());
    }
}
