//! Belief value, myopic EVOI, recommendation, and the EVOI / entropy / random
//! query strategies, written once against [`RatingModel`].
//!
//! EVOI of query `q` over a target set `T` (the items a recommendation may be
//! drawn from) is
//!
//! ```text
//! EVOI(q) = sum_r P(R_q = r) max_{j in T \ {q}} E[R_j | r_kappa, R_q = r]  -  max_{j in T} E[R_j | r_kappa]
//! ```
//!
//! The post-response maximum excludes `q`, so asking about the current
//! best item can have negative EVOI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{prune_targets, MeanChangeBounds, PruneMode};
use crate::data::RatingsDataset;
use crate::error::{Error, Result};
use crate::model::RatingModel;
use crate::par::{self, Execution};

/// Index of the largest score; ties go to the lowest item index.
pub fn argmax_lowest_index(items: &[usize], scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..items.len() {
        best = match best {
            None => Some(i),
            Some(b) if scores[i] > scores[b] || (scores[i] == scores[b] && items[i] < items[b]) => Some(i),
            keep => keep,
        };
    }
    best
}

/// Posterior means of `items`, in order.
pub fn posterior_means<M: RatingModel>(model: &M, state: &M::State, items: &[usize]) -> Result<Vec<f64>> {
    items.iter().map(|&j| model.predict_mean(state, j)).collect()
}

/// `V(P) = max_j E[R_j]` over `candidates`, with the argmax item.
pub fn belief_value<M: RatingModel>(model: &M, state: &M::State, candidates: &[usize]) -> Result<(f64, usize)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("belief value over an empty candidate set".into()));
    }
    let means = posterior_means(model, state, candidates)?;
    let best = argmax_lowest_index(candidates, &means).expect("non-empty");
    Ok((means[best], candidates[best]))
}

/// The item with the highest posterior mean among `candidates`.
pub fn recommend<M: RatingModel>(model: &M, state: &M::State, candidates: &[usize]) -> Result<usize> {
    belief_value(model, state, candidates).map(|(_, item)| item)
}

/// Current posterior means over a target set, computed once and shared by
/// every query scored against it.
#[derive(Debug, Clone)]
pub struct BeliefSnapshot {
    pub targets: Vec<usize>,
    pub means: Vec<f64>,
    /// Position in `targets` of the current argmax.
    pub best: usize,
}

impl BeliefSnapshot {
    pub fn new<M: RatingModel>(model: &M, state: &M::State, targets: &[usize]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument("empty target set".into()));
        }
        let mut targets = targets.to_vec();
        targets.sort_unstable();
        targets.dedup();
        let means = posterior_means(model, state, &targets)?;
        let best = argmax_lowest_index(&targets, &means).expect("non-empty");
        Ok(Self { targets, means, best })
    }

    pub fn value(&self) -> f64 {
        self.means[self.best]
    }

    pub fn best_item(&self) -> usize {
        self.targets[self.best]
    }
}

/// Optional target pruning during EVOI.
#[derive(Debug, Clone, Copy)]
pub struct Pruning<'a> {
    pub tables: &'a MeanChangeBounds,
    pub mode: PruneMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvoiScore {
    pub value: f64,
    /// Targets skipped by the pruning test for this query.
    pub pruned: usize,
    /// Targets whose post-response posterior was computed (per response).
    pub evaluated: usize,
}

/// EVOI of query `q` against the snapshot's target set.
pub fn evoi<M: RatingModel>(
    model: &M,
    state: &M::State,
    snapshot: &BeliefSnapshot,
    q: usize,
    pruning: Option<Pruning<'_>>,
) -> Result<EvoiScore> {
    if snapshot.targets.len() < 2 {
        return Err(Error::InvalidArgument("EVOI needs at least two targets".into()));
    }
    let predictive = model.predict(state, q)?;
    let pruned = match pruning {
        Some(p) => prune_targets(
            &snapshot.targets,
            &snapshot.means,
            snapshot.best,
            q,
            &predictive.probs,
            p.tables,
            p.mode,
        ),
        None => vec![false; snapshot.targets.len()],
    };
    let live: Vec<usize> = snapshot
        .targets
        .iter()
        .zip(&pruned)
        .filter(|(&j, &p)| j != q && !p)
        .map(|(&j, _)| j)
        .collect();
    if live.is_empty() {
        return Err(Error::InvalidArgument(format!("query {q} leaves no target to recommend")));
    }
    let mut expected = 0.0;
    for (idx, &p_r) in predictive.probs.iter().enumerate() {
        if p_r == 0.0 {
            continue;
        }
        let after = model.observe(state, q, (idx + 1) as u8)?;
        let mut best = f64::NEG_INFINITY;
        for &j in &live {
            best = best.max(model.predict_mean(&after, j)?);
        }
        expected += p_r * best;
    }
    Ok(EvoiScore {
        value: expected - snapshot.value(),
        pruned: pruned.iter().filter(|&&p| p).count(),
        evaluated: live.len(),
    })
}

/// Scores every candidate query, in candidate order.
pub fn evoi_scores<M: RatingModel>(
    model: &M,
    state: &M::State,
    snapshot: &BeliefSnapshot,
    candidates: &[usize],
    pruning: Option<Pruning<'_>>,
    exec: Execution,
) -> Result<Vec<EvoiScore>> {
    par::try_map_range(exec, candidates.len(), |i| evoi(model, state, snapshot, candidates[i], pruning))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Evoi,
    Entropy,
    Random,
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evoi" => Ok(Self::Evoi),
            "entropy" => Ok(Self::Entropy),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidArgument(format!("unknown strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Evoi => "evoi",
            Self::Entropy => "entropy",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Stop querying once the best EVOI falls below this.
    pub evoi_threshold: f64,
    /// Target pruning for EVOI; needs bound tables at selection time.
    pub pruning: Option<PruneMode>,
    pub seed: u64,
    #[serde(skip, default)]
    pub execution: Execution,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self { kind, evoi_threshold: 0.0, pruning: None, seed: 0, execution: Execution::default() }
    }
}

/// Per-item Shannon entropy (nats) of the add-one smoothed training rating
/// histogram.
pub fn item_entropies(d: &RatingsDataset) -> Vec<f64> {
    d.item_histograms()
        .into_iter()
        .map(|hist| {
            let total: f64 = hist.iter().map(|&c| c as f64 + 1.0).sum();
            hist.iter()
                .map(|&c| {
                    let p = (c as f64 + 1.0) / total;
                    -p * p.ln()
                })
                .sum()
        })
        .collect()
}

/// Everything a strategy may need beyond the model and state.
#[derive(Debug, Clone, Copy, Default)]
pub struct SelectionContext<'a> {
    pub entropies: Option<&'a [f64]>,
    pub bounds: Option<&'a MeanChangeBounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDecision {
    pub chosen_query: Option<usize>,
    /// `(item, score)` per candidate, in candidate order.
    pub scores: Vec<(usize, f64)>,
    pub stop: bool,
    pub pruned_targets: usize,
}

impl QueryDecision {
    /// Candidates ranked by score, ties by lowest index.
    pub fn ranked(&self) -> Vec<(usize, f64)> {
        let mut r = self.scores.clone();
        r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        r
    }
}

/// Picks the next query among `candidates`; `targets` is the set the eventual
/// recommendation is drawn from (it should contain the candidates).
pub fn select_query<M: RatingModel>(
    model: &M,
    state: &M::State,
    cfg: &StrategyConfig,
    candidates: &[usize],
    targets: &[usize],
    ctx: SelectionContext<'_>,
) -> Result<QueryDecision> {
    if cfg.evoi_threshold < 0.0 || !cfg.evoi_threshold.is_finite() {
        return Err(Error::InvalidArgument("evoi_threshold must be finite and >= 0".into()));
    }
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() {
        return Ok(QueryDecision { chosen_query: None, scores: vec![], stop: true, pruned_targets: 0 });
    }
    match cfg.kind {
        StrategyKind::Evoi => {
            let mut all_targets: Vec<usize> = targets.to_vec();
            all_targets.extend(&candidates);
            all_targets.sort_unstable();
            all_targets.dedup();
            if all_targets.len() < 2 {
                return Ok(QueryDecision {
                    chosen_query: None,
                    scores: vec![],
                    stop: true,
                    pruned_targets: 0,
                });
            }
            let snapshot = BeliefSnapshot::new(model, state, &all_targets)?;
            let pruning = match (cfg.pruning, ctx.bounds) {
                (Some(mode), Some(tables)) => Some(Pruning { tables, mode }),
                (Some(_), None) => {
                    return Err(Error::InvalidArgument("pruning requested without bound tables".into()))
                }
                _ => None,
            };
            let scores = evoi_scores(model, state, &snapshot, &candidates, pruning, cfg.execution)?;
            let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
            let best = argmax_lowest_index(&candidates, &values).expect("non-empty");
            Ok(QueryDecision {
                chosen_query: Some(candidates[best]),
                scores: candidates.iter().copied().zip(values.iter().copied()).collect(),
                stop: values[best] < cfg.evoi_threshold,
                pruned_targets: scores.iter().map(|s| s.pruned).sum(),
            })
        }
        StrategyKind::Entropy => {
            let entropies = ctx
                .entropies
                .ok_or_else(|| Error::InvalidArgument("entropy strategy needs item entropies".into()))?;
            let values: Vec<f64> = candidates.iter().map(|&j| entropies[j]).collect();
            let best = argmax_lowest_index(&candidates, &values).expect("non-empty");
            Ok(QueryDecision {
                chosen_query: Some(candidates[best]),
                scores: candidates.iter().copied().zip(values).collect(),
                stop: false,
                pruned_targets: 0,
            })
        }
        StrategyKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let pick = rng.random_range(0..candidates.len());
            Ok(QueryDecision {
                chosen_query: Some(candidates[pick]),
                scores: candidates.iter().map(|&j| (j, if j == candidates[pick] { 1.0 } else { 0.0 })).collect(),
                stop: false,
                pruned_targets: 0,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::MeanChangeBounds;
    use crate::model::RatingModel;
    use crate::naive_bayes::{NaiveBayesModel, NaiveBayesParams};

    fn nb() -> NaiveBayesModel {
        NaiveBayesModel::new(NaiveBayesParams {
            n_items: 3,
            n_components: 2,
            rho: 3,
            mixing: vec![0.4, 0.6],
            rating_multinomial: vec![
                0.8, 0.1, 0.1, 0.1, 0.1, 0.8, // item 0
                0.1, 0.2, 0.7, 0.6, 0.3, 0.1, // item 1
                0.3, 0.4, 0.3, 0.3, 0.4, 0.3, // item 2
            ],
        })
        .unwrap()
    }

    fn mean(row: &[f64]) -> f64 {
        row.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum()
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax_lowest_index(&[4, 2, 7], &[1.0, 1.0, 0.5]), Some(1));
        assert_eq!(argmax_lowest_index(&[], &[]), None);
    }

    #[test]
    fn evoi_matches_explicit_bayes() {
        let m = nb();
        let s = m.prior_state();
        let snap = BeliefSnapshot::new(&m, &s, &[0, 1, 2]).unwrap();
        let phi = |j: usize, c: usize| &m.params().rating_multinomial[(j * 2 + c) * 3..(j * 2 + c) * 3 + 3];
        let prior = [0.4, 0.6];
        let now = [1, 2].iter().chain(&[0]).map(|&j| prior[0] * mean(phi(j, 0)) + prior[1] * mean(phi(j, 1))).fold(f64::MIN, f64::max);
        let mut expected = 0.0;
        for r in 0..3 {
            let joint = [prior[0] * phi(0, 0)[r], prior[1] * phi(0, 1)[r]];
            let pr = joint[0] + joint[1];
            let post = [joint[0] / pr, joint[1] / pr];
            let best = [1, 2].iter().map(|&j| post[0] * mean(phi(j, 0)) + post[1] * mean(phi(j, 1))).fold(f64::MIN, f64::max);
            expected += pr * best;
        }
        let got = evoi(&m, &s, &snap, 0, None).unwrap();
        assert!((got.value - (expected - now)).abs() < 1e-12);
        assert_eq!(got.evaluated, 2);
    }

    #[test]
    fn querying_the_best_of_two_costs_the_gap() {
        let m = nb();
        let s = m.prior_state();
        let snap = BeliefSnapshot::new(&m, &s, &[0, 1]).unwrap();
        let m0 = m.predict_mean(&s, 0).unwrap();
        let m1 = m.predict_mean(&s, 1).unwrap();
        let best = if m0 >= m1 { 0 } else { 1 };
        let v = evoi(&m, &s, &snap, best, None).unwrap().value;
        assert!((v + (m0 - m1).abs()).abs() < 1e-12);
    }

    #[test]
    fn evoi_is_nonnegative_for_queries_outside_the_targets() {
        let m = nb();
        let s = m.prior_state();
        let snap = BeliefSnapshot::new(&m, &s, &[1, 2]).unwrap();
        let v = evoi(&m, &s, &snap, 0, None).unwrap();
        assert!(v.value >= -1e-12);
        assert_eq!(v.evaluated, 2);
    }

    #[test]
    fn generous_tables_leave_evoi_unchanged() {
        let m = nb();
        let s = m.prior_state();
        let snap = BeliefSnapshot::new(&m, &s, &[0, 1, 2]).unwrap();
        let tables = MeanChangeBounds::uniform(3, 3, 10.0);
        for q in 0..3 {
            let plain = evoi(&m, &s, &snap, q, None).unwrap();
            let pruned = evoi(&m, &s, &snap, q, Some(Pruning { tables: &tables, mode: PruneMode::Expected })).unwrap();
            assert_eq!(plain.value, pruned.value);
            assert_eq!(pruned.pruned, 0);
        }
    }

    #[test]
    fn entropy_strategy_picks_the_flattest_item() {
        let m = nb();
        let s = m.prior_state();
        let ent = [0.1, 0.9, 0.9];
        let ctx = SelectionContext { entropies: Some(&ent), bounds: None };
        let d = select_query(&m, &s, &StrategyConfig::new(StrategyKind::Entropy), &[2, 0, 1], &[0, 1, 2], ctx).unwrap();
        assert_eq!(d.chosen_query, Some(1));
        assert!(select_query(&m, &s, &StrategyConfig::new(StrategyKind::Entropy), &[0], &[0, 1], Default::default()).is_err());
    }

    #[test]
    fn random_strategy_is_seeded() {
        let m = nb();
        let s = m.prior_state();
        let mut cfg = StrategyConfig::new(StrategyKind::Random);
        let picks: Vec<_> = (0..20)
            .map(|seed| {
                cfg.seed = seed;
                select_query(&m, &s, &cfg, &[0, 1, 2], &[0, 1, 2], Default::default()).unwrap().chosen_query.unwrap()
            })
            .collect();
        cfg.seed = 7;
        let again = select_query(&m, &s, &cfg, &[0, 1, 2], &[0, 1, 2], Default::default()).unwrap();
        assert_eq!(again.chosen_query, Some(picks[7]));
        assert!(picks.iter().any(|&p| p != picks[0]));
    }

    #[test]
    fn evoi_strategy_threshold_and_edge_cases() {
        let m = nb();
        let s = m.prior_state();
        let mut cfg = StrategyConfig::new(StrategyKind::Evoi);
        let d = select_query(&m, &s, &cfg, &[0, 1, 2], &[0, 1, 2], Default::default()).unwrap();
        let best = d.ranked()[0];
        assert_eq!(d.chosen_query, Some(best.0));
        assert!(!d.stop);
        cfg.evoi_threshold = best.1 + 1.0;
        assert!(select_query(&m, &s, &cfg, &[0, 1, 2], &[0, 1, 2], Default::default()).unwrap().stop);
        assert!(select_query(&m, &s, &cfg, &[], &[0, 1], Default::default()).unwrap().stop);
        cfg.pruning = Some(PruneMode::Expected);
        assert!(select_query(&m, &s, &cfg, &[0, 1], &[0, 1], Default::default()).is_err());
        cfg.evoi_threshold = -1.0;
        assert!(select_query(&m, &s, &cfg, &[0, 1], &[0, 1], Default::default()).is_err());
    }

    #[test]
    fn sequential_and_parallel_scores_agree() {
        let m = nb();
        let s = m.prior_state();
        let snap = BeliefSnapshot::new(&m, &s, &[0, 1, 2]).unwrap();
        let a = evoi_scores(&m, &s, &snap, &[0, 1, 2], None, Execution::Sequential).unwrap();
        let b = evoi_scores(&m, &s, &snap, &[0, 1, 2], None, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
