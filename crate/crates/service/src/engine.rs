//! The model-facing half of the service: everything a session needs that does
//! not involve HTTP or persistence.

use acf_core::bounds::{BoundTables, MeanChangeBounds, PruneMode};
use acf_core::format::{AnyModel, ModelKind};
use acf_core::mcvq::UserState;
use acf_core::naive_bayes::NbUserState;
use acf_core::prototypes::PrototypeSet;
use acf_core::strategies::{
    argmax_lowest_index, evoi, posterior_means, select_query, BeliefSnapshot, Pruning, QueryDecision,
    SelectionContext, StrategyConfig, StrategyKind,
};
use acf_core::{BeliefState, RatingModel};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruningChoice {
    None,
    Expected,
    #[default]
    PerResponse,
}

impl PruningChoice {
    pub fn mode(self) -> Option<PruneMode> {
        match self {
            Self::None => None,
            Self::Expected => Some(PruneMode::Expected),
            Self::PerResponse => Some(PruneMode::PerResponse),
        }
    }
}

/// Per-session query settings. Pruning only applies when bound tables are
/// loaded, and prototypes only when a prototype set is loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub strategy: StrategyKind,
    pub evoi_threshold: f64,
    pub pruning: PruningChoice,
    pub use_prototypes: bool,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Evoi,
            evoi_threshold: 0.0,
            pruning: PruningChoice::PerResponse,
            use_prototypes: false,
            seed: 0,
        }
    }
}

/// Body of `POST /sessions`; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionOverrides {
    pub model_kind: Option<String>,
    pub strategy: Option<StrategyKind>,
    pub evoi_threshold: Option<f64>,
    pub pruning: Option<PruningChoice>,
    pub use_prototypes: Option<bool>,
    pub seed: Option<u64>,
}

/// A user's belief state under whichever model the service runs.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionState {
    Mcvq(UserState),
    NaiveBayes(NbUserState),
}

impl SessionState {
    pub fn n_observed(&self) -> usize {
        match self {
            Self::Mcvq(s) => s.n_observed(),
            Self::NaiveBayes(s) => s.n_observed(),
        }
    }

    pub fn is_observed(&self, item: usize) -> bool {
        match self {
            Self::Mcvq(s) => s.is_observed(item),
            Self::NaiveBayes(s) => s.is_observed(item),
        }
    }

    /// `K x L` attitude rows for MCVQ, or a single row of component
    /// probabilities for naive Bayes.
    pub fn latent_posterior(&self) -> Vec<Vec<f64>> {
        match self {
            Self::Mcvq(s) => s.attitude_posterior().chunks(s.n_attitudes()).map(<[f64]>::to_vec).collect(),
            Self::NaiveBayes(s) => vec![s.component_posterior().to_vec()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub item: usize,
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub item: Option<usize>,
    pub label: Option<String>,
    /// EVOI of the chosen item; absent for the non-EVOI strategies.
    pub expected_evoi: Option<f64>,
    pub stop: bool,
    pub reason: Option<String>,
    pub candidates: usize,
    pub candidates_pruned: usize,
    /// The best `top_k` candidates by score, for clients that let the user
    /// skip ahead.
    pub ranked: Vec<RankedQuery>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub item: usize,
    pub label: String,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemInfo {
    pub item: usize,
    pub label: String,
}

pub struct Engine {
    model: AnyModel,
    tables: Option<BoundTables>,
    prototypes: Option<PrototypeSet>,
    entropies: Option<Vec<f64>>,
    labels: Vec<String>,
    defaults: SessionConfig,
}

impl Engine {
    pub fn new(model: AnyModel) -> Self {
        let labels = (0..model.n_items()).map(|j| format!("item {j}")).collect();
        Self { model, tables: None, prototypes: None, entropies: None, labels, defaults: SessionConfig::default() }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> ApiResult<Self> {
        if labels.len() != self.model.n_items() {
            return Err(ApiError::Validation(format!(
                "{} item labels for a model with {} items",
                labels.len(),
                self.model.n_items()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn with_tables(mut self, tables: BoundTables) -> ApiResult<Self> {
        let AnyModel::Mcvq(m) = &self.model else {
            return Err(ApiError::Validation("bound tables apply only to MCVQ models".into()));
        };
        if tables.mean_change.n_items != m.n_items() || tables.mean_change.rho != m.rho() {
            return Err(ApiError::Validation("bound tables do not match the model dimensions".into()));
        }
        self.tables = Some(tables);
        Ok(self)
    }

    pub fn with_prototypes(mut self, prototypes: PrototypeSet) -> ApiResult<Self> {
        if prototypes.n_items() != self.model.n_items() || prototypes.members.iter().any(|&j| j >= self.model.n_items())
        {
            return Err(ApiError::Validation("prototype set does not match the model".into()));
        }
        self.prototypes = Some(prototypes);
        Ok(self)
    }

    pub fn with_entropies(mut self, entropies: Vec<f64>) -> ApiResult<Self> {
        if entropies.len() != self.model.n_items() {
            return Err(ApiError::Validation("entropy table does not match the model".into()));
        }
        self.entropies = Some(entropies);
        Ok(self)
    }

    pub fn with_defaults(mut self, defaults: SessionConfig) -> ApiResult<Self> {
        validate_config(&defaults)?;
        self.defaults = defaults;
        Ok(self)
    }

    pub fn model(&self) -> &AnyModel {
        &self.model
    }

    pub fn model_kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn n_items(&self) -> usize {
        self.model.n_items()
    }

    pub fn rho(&self) -> usize {
        self.model.rho()
    }

    pub fn tables(&self) -> Option<&BoundTables> {
        self.tables.as_ref()
    }

    pub fn label(&self, item: usize) -> &str {
        &self.labels[item]
    }

    pub fn items(&self) -> Vec<ItemInfo> {
        self.labels.iter().enumerate().map(|(item, l)| ItemInfo { item, label: l.clone() }).collect()
    }

    pub fn defaults(&self) -> &SessionConfig {
        &self.defaults
    }

    /// Applies request overrides to the service defaults.
    pub fn resolve_config(&self, o: &SessionOverrides) -> ApiResult<SessionConfig> {
        if let Some(kind) = &o.model_kind {
            let known = kind.parse::<ModelKind>().ok() == Some(self.model.kind());
            if !known {
                return Err(ApiError::UnknownModel(format!(
                    "model {kind:?} is not loaded (this service runs {})",
                    self.model.kind()
                )));
            }
        }
        let d = &self.defaults;
        let cfg = SessionConfig {
            strategy: o.strategy.unwrap_or(d.strategy),
            evoi_threshold: o.evoi_threshold.unwrap_or(d.evoi_threshold),
            pruning: o.pruning.unwrap_or(d.pruning),
            use_prototypes: o.use_prototypes.unwrap_or(d.use_prototypes),
            seed: o.seed.unwrap_or(d.seed),
        };
        validate_config(&cfg)?;
        if cfg.strategy == StrategyKind::Entropy && self.entropies.is_none() {
            return Err(ApiError::Validation("entropy strategy needs item entropies, none are loaded".into()));
        }
        if cfg.use_prototypes && self.prototypes.is_none() {
            return Err(ApiError::Validation("no prototype set is loaded".into()));
        }
        Ok(cfg)
    }

    pub fn prior_state(&self) -> SessionState {
        match &self.model {
            AnyModel::Mcvq(m) => SessionState::Mcvq(m.prior_state()),
            AnyModel::NaiveBayes(m) => SessionState::NaiveBayes(m.prior_state()),
        }
    }

    /// The state after rating `item`, with the service's error mapping.
    pub fn observe(&self, state: &SessionState, item: usize, rating: u8) -> ApiResult<SessionState> {
        if item >= self.n_items() {
            return Err(ApiError::Validation(format!("item {item} out of range 0..{}", self.n_items())));
        }
        if rating == 0 || rating as usize > self.rho() {
            return Err(ApiError::Validation(format!("rating {rating} outside 1..={}", self.rho())));
        }
        if state.is_observed(item) {
            return Err(ApiError::Conflict(format!("item {item} is already rated in this session")));
        }
        Ok(match (&self.model, state) {
            (AnyModel::Mcvq(m), SessionState::Mcvq(s)) => SessionState::Mcvq(m.observe(s, item, rating)?),
            (AnyModel::NaiveBayes(m), SessionState::NaiveBayes(s)) => {
                SessionState::NaiveBayes(m.observe(s, item, rating)?)
            }
            _ => return Err(ApiError::Internal("session state does not match the model".into())),
        })
    }

    /// Rebuilds a state from its rating history, in order.
    pub fn replay(&self, history: impl IntoIterator<Item = (usize, u8)>) -> ApiResult<SessionState> {
        let mut state = self.prior_state();
        for (item, rating) in history {
            state = self.observe(&state, item, rating)?;
        }
        Ok(state)
    }

    fn unobserved(&self, state: &SessionState) -> Vec<usize> {
        (0..self.n_items()).filter(|&j| !state.is_observed(j)).collect()
    }

    fn strategy_config(&self, cfg: &SessionConfig, state: &SessionState) -> StrategyConfig {
        let mut s = StrategyConfig::new(cfg.strategy);
        s.evoi_threshold = cfg.evoi_threshold;
        s.pruning = if self.tables.is_some() { cfg.pruning.mode() } else { None };
        s.seed = cfg.seed.wrapping_add((state.n_observed() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        s
    }

    fn bounds(&self) -> Option<&MeanChangeBounds> {
        self.tables.as_ref().map(|t| &t.mean_change)
    }

    /// Runs the session's strategy on the current state. Candidates are the
    /// unrated items (restricted to the prototype set when asked, falling
    /// back to all unrated items once the prototypes are used up); targets
    /// are all unrated items.
    pub fn next_query(&self, state: &SessionState, cfg: &SessionConfig, top_k: usize) -> ApiResult<QueryResponse> {
        let targets = self.unobserved(state);
        let mut candidates = targets.clone();
        if let (true, Some(p)) = (cfg.use_prototypes, &self.prototypes) {
            let restricted: Vec<usize> = candidates.iter().copied().filter(|&j| p.contains(j)).collect();
            if !restricted.is_empty() {
                candidates = restricted;
            }
        }
        let scfg = self.strategy_config(cfg, state);
        let ctx = SelectionContext { entropies: self.entropies.as_deref(), bounds: self.bounds() };
        let decision: QueryDecision = match (&self.model, state) {
            (AnyModel::Mcvq(m), SessionState::Mcvq(s)) => select_query(m, s, &scfg, &candidates, &targets, ctx)?,
            (AnyModel::NaiveBayes(m), SessionState::NaiveBayes(s)) => {
                select_query(m, s, &scfg, &candidates, &targets, ctx)?
            }
            _ => return Err(ApiError::Internal("session state does not match the model".into())),
        };
        let reason = match (&decision.chosen_query, decision.stop) {
            (None, _) if targets.is_empty() => Some("no_unobserved_items".to_string()),
            (None, _) => Some("too_few_items".to_string()),
            (Some(_), true) => Some("below_threshold".to_string()),
            _ => None,
        };
        let score_of = |j: usize| decision.scores.iter().find(|(i, _)| *i == j).map(|&(_, s)| s);
        let ranked = decision
            .ranked()
            .into_iter()
            .take(top_k)
            .map(|(item, score)| RankedQuery { item, label: self.labels[item].clone(), score })
            .collect();
        Ok(QueryResponse {
            item: decision.chosen_query,
            label: decision.chosen_query.map(|j| self.labels[j].clone()),
            expected_evoi: match cfg.strategy {
                StrategyKind::Evoi => decision.chosen_query.and_then(score_of),
                _ => None,
            },
            stop: decision.stop,
            reason,
            candidates: candidates.len(),
            candidates_pruned: decision.pruned_targets,
            ranked,
        })
    }

    /// EVOI of querying `item` from `state`, over all unrated items. `None`
    /// when fewer than two items are unrated.
    pub fn evoi_of(&self, state: &SessionState, item: usize) -> ApiResult<Option<f64>> {
        let targets = self.unobserved(state);
        if targets.len() < 2 || !targets.contains(&item) {
            return Ok(None);
        }
        fn run<M: RatingModel>(m: &M, s: &M::State, targets: &[usize], q: usize, p: Option<Pruning<'_>>) -> ApiResult<f64> {
            let snap = BeliefSnapshot::new(m, s, targets)?;
            Ok(evoi(m, s, &snap, q, p)?.value)
        }
        let value = match (&self.model, state) {
            (AnyModel::Mcvq(m), SessionState::Mcvq(s)) => {
                let p = self.bounds().map(|tables| Pruning { tables, mode: PruneMode::PerResponse });
                run(m, s, &targets, item, p)?
            }
            (AnyModel::NaiveBayes(m), SessionState::NaiveBayes(s)) => run(m, s, &targets, item, None)?,
            _ => return Err(ApiError::Internal("session state does not match the model".into())),
        };
        Ok(Some(value))
    }

    /// Unrated items by posterior mean, highest first, ties to the lower
    /// index.
    pub fn recommendations(&self, state: &SessionState, top_n: usize) -> ApiResult<Vec<Recommendation>> {
        let items = self.unobserved(state);
        let means = match (&self.model, state) {
            (AnyModel::Mcvq(m), SessionState::Mcvq(s)) => posterior_means(m, s, &items)?,
            (AnyModel::NaiveBayes(m), SessionState::NaiveBayes(s)) => posterior_means(m, s, &items)?,
            _ => return Err(ApiError::Internal("session state does not match the model".into())),
        };
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(items[a].cmp(&items[b])));
        debug_assert!(order.first() == argmax_lowest_index(&items, &means).as_ref());
        Ok(order
            .into_iter()
            .take(top_n)
            .map(|i| Recommendation { item: items[i], label: self.labels[items[i]].clone(), mean: means[i] })
            .collect())
    }
}

fn validate_config(cfg: &SessionConfig) -> ApiResult<()> {
    if !(cfg.evoi_threshold.is_finite() && cfg.evoi_threshold >= 0.0) {
        return Err(ApiError::Validation("evoi_threshold must be finite and >= 0".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use acf_core::synthetic::{separated_naive_bayes, separated_mcvq, SeparatedSpec};

    fn mcvq_engine() -> Engine {
        Engine::new(AnyModel::Mcvq(separated_mcvq(&SeparatedSpec { n_items: 12, ..Default::default() }).unwrap()))
    }

    #[test]
    fn overrides_merge_with_defaults() {
        let e = mcvq_engine();
        let cfg = e
            .resolve_config(&SessionOverrides { evoi_threshold: Some(0.5), ..Default::default() })
            .unwrap();
        assert_eq!(cfg.evoi_threshold, 0.5);
        assert_eq!(cfg.strategy, StrategyKind::Evoi);
        let wrong = SessionOverrides { model_kind: Some("naive_bayes".into()), ..Default::default() };
        assert!(matches!(e.resolve_config(&wrong), Err(ApiError::UnknownModel(_))));
        let bad = SessionOverrides { evoi_threshold: Some(-1.0), ..Default::default() };
        assert!(matches!(e.resolve_config(&bad), Err(ApiError::Validation(_))));
        let entropy = SessionOverrides { strategy: Some(StrategyKind::Entropy), ..Default::default() };
        assert!(e.resolve_config(&entropy).is_err());
    }

    #[test]
    fn observe_maps_errors() {
        let e = mcvq_engine();
        let s = e.observe(&e.prior_state(), 3, 4).unwrap();
        assert!(matches!(e.observe(&s, 3, 2), Err(ApiError::Conflict(_))));
        assert!(matches!(e.observe(&s, 4, 0), Err(ApiError::Validation(_))));
        assert!(matches!(e.observe(&s, 4, 7), Err(ApiError::Validation(_))));
        assert!(matches!(e.observe(&s, 99, 1), Err(ApiError::Validation(_))));
    }

    #[test]
    fn exhausted_sessions_stop_with_a_reason() {
        let e = Engine::new(AnyModel::NaiveBayes(separated_naive_bayes(3, 2, 5, 1).unwrap()));
        let cfg = SessionConfig::default();
        let s = e.replay([(0, 1), (1, 2)]).unwrap();
        let q = e.next_query(&s, &cfg, 5).unwrap();
        assert!(q.stop && q.item.is_none());
        assert_eq!(q.reason.as_deref(), Some("too_few_items"));
        let s = e.observe(&s, 2, 3).unwrap();
        let q = e.next_query(&s, &cfg, 5).unwrap();
        assert_eq!(q.reason.as_deref(), Some("no_unobserved_items"));
        assert!(e.recommendations(&s, 3).unwrap().is_empty());
    }

    #[test]
    fn labels_must_match_the_model() {
        assert!(mcvq_engine().with_labels(vec!["a".into()]).is_err());
    }
}
