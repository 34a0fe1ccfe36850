//! Replay experiments: model-loss improvement per query strategy, pruning
//! fractions, and prototype-restricted EVOI.
//!
//! For a test user at `kappa`, the first `kappa` items of the user's reveal
//! schedule are known and the rest are held out. Every strategy queries one
//! held-out item, observes its true rating, and the loss is recomputed over
//! the held-out items minus the query. All strategies see the same known
//! ratings at every `kappa`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{prune_targets, MeanChangeBounds, PruneMode};
use crate::data::{RatingsDataset, ReplayMask};
use crate::error::{Error, Result};
use crate::model::RatingModel;
use crate::par::{self, Execution};
use crate::prototypes::PrototypeSet;
use crate::stats;
use crate::strategies::{argmax_lowest_index, posterior_means, select_query, SelectionContext, StrategyConfig, StrategyKind};

/// True rating of the user's best held-out item minus the true rating of the
/// held-out item with the highest posterior mean.
pub fn model_loss<M: RatingModel>(model: &M, state: &M::State, held_out: &[(usize, u8)]) -> Result<f64> {
    if held_out.is_empty() {
        return Err(Error::InvalidArgument("model loss over an empty held-out set".into()));
    }
    let items: Vec<usize> = held_out.iter().map(|&(j, _)| j).collect();
    let means = posterior_means(model, state, &items)?;
    let pick = argmax_lowest_index(&items, &means).expect("non-empty");
    let best = held_out.iter().map(|&(_, r)| r).max().expect("non-empty");
    Ok((best - held_out[pick].1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub strategies: Vec<StrategyKind>,
    pub kappa_sizes: Vec<usize>,
    pub n_runs: usize,
    /// Target pruning used by EVOI during the query experiments.
    pub pruning: Option<PruneMode>,
    /// Pruning test used by the pruning-fraction experiment.
    pub pruning_experiment_mode: PruneMode,
    pub seed: u64,
    /// Keep per-user improvements in the results.
    pub keep_per_user: bool,
    #[serde(skip, default)]
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategies: vec![StrategyKind::Evoi, StrategyKind::Entropy, StrategyKind::Random],
            kappa_sizes: vec![1, 2, 3, 5, 10, 20],
            n_runs: 5,
            pruning: None,
            pruning_experiment_mode: PruneMode::Expected,
            seed: 0,
            keep_per_user: true,
            execution: Execution::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kappa_sizes.is_empty() || self.kappa_sizes[0] == 0 {
            return Err(Error::InvalidArgument("kappa sizes must be positive".into()));
        }
        if self.kappa_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("kappa sizes must be strictly ascending".into()));
        }
        if self.n_runs == 0 {
            return Err(Error::InvalidArgument("n_runs must be positive".into()));
        }
        Ok(())
    }
}

/// One query strategy restricted (optionally) to a prototype set.
#[derive(Debug, Clone)]
pub struct Series<'a> {
    pub name: String,
    pub strategy: StrategyKind,
    pub prototypes: Option<&'a PrototypeSet>,
}

impl Series<'_> {
    pub fn plain(strategy: StrategyKind) -> Self {
        Self { name: strategy.to_string(), strategy, prototypes: None }
    }
}

/// Results of one series at one `kappa` in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub series: String,
    pub kappa: usize,
    pub run: usize,
    pub n_users: usize,
    pub mean_improvement: f64,
    pub stderr: f64,
    pub mean_prior_loss: f64,
    /// Total improvement divided by total prior loss.
    pub normalized_total: f64,
    /// Users whose prototype candidates were empty and fell back to all
    /// held-out items.
    pub fallbacks: usize,
    /// Hash of every user's known set, identical across series.
    pub revealed_hash: String,
    pub users: Vec<usize>,
    pub per_user: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub points: Vec<LossPoint>,
    /// `(kappa, user)` pairs skipped for lack of held-out items.
    pub skipped: Vec<(usize, usize)>,
}

impl LossRecord {
    pub fn extend(&mut self, other: LossRecord) {
        self.points.extend(other.points);
        self.skipped.extend(other.skipped);
    }

    pub fn point(&self, series: &str, kappa: usize, run: usize) -> Option<&LossPoint> {
        self.points.iter().find(|p| p.series == series && p.kappa == kappa && p.run == run)
    }

    /// Per-user improvements pooled over runs, keyed by `(run, user)` so two
    /// series can be paired.
    pub fn pooled(&self, series: &str, kappa: usize) -> BTreeMap<(usize, usize), f64> {
        let mut out = BTreeMap::new();
        for p in self.points.iter().filter(|p| p.series == series && p.kappa == kappa) {
            for (&u, &v) in p.users.iter().zip(&p.per_user) {
                out.insert((p.run, u), v);
            }
        }
        out
    }

    pub fn series_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for p in &self.points {
            if !names.contains(&p.series) {
                names.push(p.series.clone());
            }
        }
        names
    }

    pub fn kappas(&self) -> Vec<usize> {
        let mut k: Vec<usize> = self.points.iter().map(|p| p.kappa).collect();
        k.sort_unstable();
        k.dedup();
        k
    }
}

fn user_seed(seed: u64, run: usize, kappa: usize, user: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((run as u64).to_le_bytes());
    h.update((kappa as u64).to_le_bytes());
    h.update((user as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Hash of the known sets of `users` at `kappa`.
pub fn revealed_hash(mask: &ReplayMask, users: &[usize], kappa: usize) -> String {
    let mut h = Sha256::new();
    for &u in users {
        h.update((u as u64).to_le_bytes());
        for &j in mask.known(u, kappa) {
            h.update((j as u64).to_le_bytes());
        }
        h.update(u64::MAX.to_le_bytes());
    }
    hex::encode(h.finalize())
}

struct UserOutcome {
    prior: f64,
    improvements: Vec<f64>,
    fallbacks: Vec<bool>,
}

/// Runs every series over the test users at every `kappa`. `run` labels the
/// results and feeds the per-user random seeds.
pub fn run_series<M: RatingModel>(
    model: &M,
    test: &RatingsDataset,
    mask: &ReplayMask,
    series: &[Series<'_>],
    cfg: &ExperimentConfig,
    ctx: SelectionContext<'_>,
    run: usize,
) -> Result<LossRecord> {
    cfg.validate()?;
    if test.n_items() != model.n_items() {
        return Err(Error::InvalidArgument("test data and model disagree on item count".into()));
    }
    let truth: Vec<BTreeMap<usize, u8>> = (0..test.n_users()).map(|u| test.user_ratings(u)).collect();
    let mut record = LossRecord::default();
    for &kappa in &cfg.kappa_sizes {
        let eligible: Vec<usize> = (0..test.n_users()).filter(|&u| mask.held_out(u, kappa).len() >= 2).collect();
        for u in 0..test.n_users() {
            if mask.held_out(u, kappa).len() < 2 {
                record.skipped.push((kappa, u));
            }
        }
        let hash = revealed_hash(mask, &eligible, kappa);
        let outcomes = par::try_map_range(cfg.execution, eligible.len(), |i| {
            let u = eligible[i];
            replay_user(model, &truth[u], mask, u, kappa, series, cfg, ctx, run)
        })?;
        for (s_idx, s) in series.iter().enumerate() {
            let per_user: Vec<f64> = outcomes.iter().map(|o| o.improvements[s_idx]).collect();
            let priors: Vec<f64> = outcomes.iter().map(|o| o.prior).collect();
            let total_prior: f64 = priors.iter().sum();
            record.points.push(LossPoint {
                series: s.name.clone(),
                kappa,
                run,
                n_users: per_user.len(),
                mean_improvement: stats::mean(&per_user),
                stderr: stats::std_error(&per_user),
                mean_prior_loss: stats::mean(&priors),
                normalized_total: if total_prior > 0.0 { per_user.iter().sum::<f64>() / total_prior } else { 0.0 },
                fallbacks: outcomes.iter().filter(|o| o.fallbacks[s_idx]).count(),
                revealed_hash: hash.clone(),
                users: if cfg.keep_per_user { eligible.clone() } else { vec![] },
                per_user: if cfg.keep_per_user { per_user } else { vec![] },
            });
        }
    }
    Ok(record)
}

#[allow(clippy::too_many_arguments)]
fn replay_user<M: RatingModel>(
    model: &M,
    truth: &BTreeMap<usize, u8>,
    mask: &ReplayMask,
    user: usize,
    kappa: usize,
    series: &[Series<'_>],
    cfg: &ExperimentConfig,
    ctx: SelectionContext<'_>,
    run: usize,
) -> Result<UserOutcome> {
    let known: BTreeMap<usize, u8> = mask.known(user, kappa).iter().map(|&j| (j, truth[&j])).collect();
    let held: Vec<usize> = mask.held_out(user, kappa).to_vec();
    let held_pairs: Vec<(usize, u8)> = held.iter().map(|&j| (j, truth[&j])).collect();
    let state = model.state_from_ratings(&known)?;
    let prior = model_loss(model, &state, &held_pairs)?;
    let seed = user_seed(cfg.seed, run, kappa, user);
    let mut improvements = Vec::with_capacity(series.len());
    let mut fallbacks = Vec::with_capacity(series.len());
    for s in series {
        let (candidates, fell_back) = match s.prototypes {
            Some(p) => {
                let restricted: Vec<usize> = held.iter().copied().filter(|&j| p.contains(j)).collect();
                if restricted.is_empty() {
                    (held.clone(), true)
                } else {
                    (restricted, false)
                }
            }
            None => (held.clone(), false),
        };
        let mut scfg = StrategyConfig::new(s.strategy);
        scfg.seed = seed;
        scfg.pruning = cfg.pruning;
        // Users already run in parallel.
        scfg.execution = Execution::Sequential;
        let decision = select_query(model, &state, &scfg, &candidates, &held, ctx)?;
        let q = decision
            .chosen_query
            .ok_or_else(|| Error::InvalidArgument(format!("no query chosen for user {user}")))?;
        let after = model.observe(&state, q, truth[&q])?;
        let rest: Vec<(usize, u8)> = held_pairs.iter().copied().filter(|&(j, _)| j != q).collect();
        let posterior = model_loss(model, &after, &rest)?;
        improvements.push(prior - posterior);
        fallbacks.push(fell_back);
    }
    Ok(UserOutcome { prior, improvements, fallbacks })
}

/// Query-strategy comparison over `cfg.strategies`.
pub fn run_query_experiment<M: RatingModel>(
    model: &M,
    test: &RatingsDataset,
    mask: &ReplayMask,
    cfg: &ExperimentConfig,
    ctx: SelectionContext<'_>,
    run: usize,
) -> Result<LossRecord> {
    let series: Vec<Series<'_>> = cfg.strategies.iter().map(|&s| Series::plain(s)).collect();
    run_series(model, test, mask, &series, cfg, ctx, run)
}

/// Name of the EVOI series restricted to a prototype set.
pub fn prototype_series_name(p: &PrototypeSet) -> String {
    format!("evoi@{:.0}%", 100.0 * p.retained_fraction())
}

/// Unrestricted EVOI, random, and EVOI restricted to each prototype set.
pub fn run_prototype_experiment<M: RatingModel>(
    model: &M,
    test: &RatingsDataset,
    mask: &ReplayMask,
    protosets: &[PrototypeSet],
    cfg: &ExperimentConfig,
    ctx: SelectionContext<'_>,
    run: usize,
) -> Result<LossRecord> {
    let mut series = vec![Series::plain(StrategyKind::Evoi), Series::plain(StrategyKind::Random)];
    for p in protosets {
        series.push(Series { name: prototype_series_name(p), strategy: StrategyKind::Evoi, prototypes: Some(p) });
    }
    run_series(model, test, mask, &series, cfg, ctx, run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningPoint {
    pub kappa: usize,
    pub n_users: usize,
    /// Mean over users of the per-user mean over queries.
    pub fraction: f64,
    pub stderr: f64,
}

/// Fraction of potential targets `M - |kappa| - 1` the pruning test removes,
/// averaged over every query other than the current best item and then over
/// users. Targets are all of the user's unobserved items.
pub fn run_pruning_experiment<M: RatingModel>(
    model: &M,
    test: &RatingsDataset,
    mask: &ReplayMask,
    tables: &MeanChangeBounds,
    cfg: &ExperimentConfig,
) -> Result<Vec<PruningPoint>> {
    cfg.validate()?;
    let m = model.n_items();
    if tables.n_items != m || tables.rho != model.rho() {
        return Err(Error::InvalidArgument("bound tables do not match the model".into()));
    }
    let mut out = Vec::new();
    for &kappa in &cfg.kappa_sizes {
        let users: Vec<usize> = (0..test.n_users())
            .filter(|&u| mask.schedules[u].len() >= kappa && m >= kappa + 2)
            .collect();
        let fractions = par::try_map_range(cfg.execution, users.len(), |i| -> Result<f64> {
            let u = users[i];
            let truth = test.user_ratings(u);
            let known: BTreeMap<usize, u8> = mask.known(u, kappa).iter().map(|&j| (j, truth[&j])).collect();
            let state = model.state_from_ratings(&known)?;
            let targets: Vec<usize> = (0..m).filter(|j| !known.contains_key(j)).collect();
            let means = posterior_means(model, &state, &targets)?;
            let best = argmax_lowest_index(&targets, &means).expect("non-empty");
            let potential = (m - known.len() - 1) as f64;
            let mut total = 0.0;
            let mut n = 0usize;
            for &q in &targets {
                if q == targets[best] {
                    continue;
                }
                let probs = model.predict(&state, q)?.probs;
                let pruned = prune_targets(&targets, &means, best, q, &probs, tables, cfg.pruning_experiment_mode);
                total += pruned.iter().filter(|&&p| p).count() as f64 / potential;
                n += 1;
            }
            Ok(if n > 0 { total / n as f64 } else { 0.0 })
        })?;
        out.push(PruningPoint {
            kappa,
            n_users: fractions.len(),
            fraction: stats::mean(&fractions),
            stderr: stats::std_error(&fractions),
        });
    }
    Ok(out)
}

/// Aggregate of one series at one `kappa`, pooled over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub series: String,
    pub kappa: usize,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub normalized_total: f64,
}

pub fn summarize(record: &LossRecord) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for series in record.series_names() {
        for kappa in record.kappas() {
            let pts: Vec<&LossPoint> =
                record.points.iter().filter(|p| p.series == series && p.kappa == kappa).collect();
            if pts.is_empty() {
                continue;
            }
            let pooled: Vec<f64> = record.pooled(&series, kappa).into_values().collect();
            let (mean, stderr, n) = if pooled.is_empty() {
                // Per-user values were not kept: fall back to run means.
                let run_means: Vec<f64> = pts.iter().map(|p| p.mean_improvement).collect();
                (stats::mean(&run_means), stats::std_error(&run_means), pts.iter().map(|p| p.n_users).sum())
            } else {
                (stats::mean(&pooled), stats::std_error(&pooled), pooled.len())
            };
            let total_imp: f64 = pts.iter().map(|p| p.mean_improvement * p.n_users as f64).sum();
            let total_prior: f64 = pts.iter().map(|p| p.mean_prior_loss * p.n_users as f64).sum();
            rows.push(SummaryRow {
                series: series.clone(),
                kappa,
                n,
                mean,
                stderr,
                normalized_total: if total_prior > 0.0 { total_imp / total_prior } else { 0.0 },
            });
        }
    }
    rows
}

/// One-sided paired comparison of two series at `kappa`, over the `(run, user)`
/// pairs both contain.
pub fn compare_series(record: &LossRecord, a: &str, b: &str, kappa: usize) -> Option<stats::PairedTest> {
    let pa = record.pooled(a, kappa);
    let pb = record.pooled(b, kappa);
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    for (key, va) in &pa {
        if let Some(vb) = pb.get(key) {
            xa.push(*va);
            xb.push(*vb);
        }
    }
    stats::paired_t_test_greater(&xa, &xb)
}

pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>6} {:>6} {:>10} {:>10} {:>10}", "series", "kappa", "n", "mean", "stderr", "norm_total");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>6} {:>10.4} {:>10.4} {:>10.4}",
            r.series, r.kappa, r.n, r.mean, r.stderr, r.normalized_total
        );
    }
    s
}

pub fn render_pruning_table(points: &[PruningPoint]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>6} {:>6} {:>10} {:>10}", "kappa", "n", "fraction", "stderr");
    for p in points {
        let _ = writeln!(s, "{:>6} {:>6} {:>10.4} {:>10.4}", p.kappa, p.n_users, p.fraction, p.stderr);
    }
    s
}

/// Plot data: one row per (series, kappa) with mean and standard error.
pub fn write_plot_csv(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "kappa", "n", "mean", "stderr", "normalized_total"])?;
    for r in rows {
        w.write_record([
            r.series.clone(),
            r.kappa.to_string(),
            r.n.to_string(),
            format!("{}", r.mean),
            format!("{}", r.stderr),
            format!("{}", r.normalized_total),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pruning_csv(points: &[PruningPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kappa", "n", "fraction", "stderr"])?;
    for p in points {
        w.write_record([p.kappa.to_string(), p.n_users.to_string(), format!("{}", p.fraction), format!("{}", p.stderr)])?;
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// A static line plot of mean improvement against `kappa` with standard
/// error bars.
pub fn render_svg(rows: &[SummaryRow], title: &str) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.series.as_str()) {
            names.push(&r.series);
        }
    }
    let kmax = rows.iter().map(|r| r.kappa).max().unwrap_or(1).max(1) as f64;
    let finite = |x: f64| if x.is_finite() { x } else { 0.0 };
    let ymin = rows.iter().map(|r| finite(r.mean) - finite(r.stderr)).fold(0.0, f64::min);
    let ymax = rows.iter().map(|r| finite(r.mean) + finite(r.stderr)).fold(0.0, f64::max).max(ymin + 1e-6);
    let sx = |k: f64| pad + (k / kmax) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - ymin) / (ymax - ymin) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">|kappa|</text>"#, w / 2.0, h - 20.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">mean improvement</text>"#, h / 2.0, h / 2.0);
    for (i, name) in names.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<&SummaryRow> = rows.iter().filter(|r| r.series == *name).collect();
        pts.sort_by_key(|r| r.kappa);
        let path: Vec<String> =
            pts.iter().map(|r| format!("{:.2},{:.2}", sx(r.kappa as f64), sy(finite(r.mean)))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for r in &pts {
            let (x, m, e) = (sx(r.kappa as f64), finite(r.mean), finite(r.stderr));
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/><circle cx="{x:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sy(m - e),
                sy(m + e),
                sy(m)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            w - pad - 100.0,
            pad + 16.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::naive_bayes::{NaiveBayesModel, NaiveBayesParams};
    use crate::strategies::item_entropies;
    use crate::synthetic::{separated_mcvq, SeparatedSpec};

    fn fixture() -> (crate::mcvq::McvqModel, RatingsDataset, ReplayMask) {
        let gt = separated_mcvq(&SeparatedSpec { n_items: 12, seed: 2, ..Default::default() }).unwrap();
        let test = generate_synthetic(&gt, 25, 0.6, 3).unwrap();
        let mask = ReplayMask::shuffled(&test, 4);
        (gt, test, mask)
    }

    fn cfg() -> ExperimentConfig {
        ExperimentConfig { kappa_sizes: vec![1, 3], n_runs: 1, seed: 9, ..Default::default() }
    }

    #[test]
    fn loss_is_the_gap_to_the_best_held_out_rating() {
        let m = NaiveBayesModel::new(NaiveBayesParams {
            n_items: 2,
            n_components: 1,
            rho: 6,
            mixing: vec![1.0],
            rating_multinomial: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        })
        .unwrap();
        let s = m.prior_state();
        assert_eq!(model_loss(&m, &s, &[(0, 6), (1, 2)]).unwrap(), 4.0);
        assert_eq!(model_loss(&m, &s, &[(0, 2), (1, 6)]).unwrap(), 0.0);
        assert!(model_loss(&m, &s, &[]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig { kappa_sizes: vec![], ..cfg() }.validate().is_err());
        assert!(ExperimentConfig { kappa_sizes: vec![0, 1], ..cfg() }.validate().is_err());
        assert!(ExperimentConfig { kappa_sizes: vec![2, 1], ..cfg() }.validate().is_err());
        assert!(ExperimentConfig { n_runs: 0, ..cfg() }.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn query_experiment_is_deterministic_and_shares_reveals() {
        let (m, test, mask) = fixture();
        let ent = item_entropies(&test);
        let ctx = SelectionContext { entropies: Some(&ent), bounds: None };
        let seq = ExperimentConfig { execution: Execution::Sequential, ..cfg() };
        let a = run_query_experiment(&m, &test, &mask, &seq, ctx, 0).unwrap();
        let b = run_query_experiment(&m, &test, &mask, &cfg(), ctx, 0).unwrap();
        assert_eq!(a, b);
        for kappa in [1, 3] {
            let hashes: Vec<&str> =
                a.points.iter().filter(|p| p.kappa == kappa).map(|p| p.revealed_hash.as_str()).collect();
            assert_eq!(hashes.len(), 3);
            assert!(hashes.iter().all(|h| *h == hashes[0]));
        }
        for &(kappa, u) in &a.skipped {
            assert!(mask.held_out(u, kappa).len() < 2);
        }
        let c = run_query_experiment(&m, &test, &mask, &seq, ctx, 1).unwrap();
        assert_ne!(a.point("random", 1, 0).unwrap().per_user, c.point("random", 1, 1).unwrap().per_user);
    }

    #[test]
    fn full_prototype_set_reproduces_plain_evoi() {
        let (m, test, mask) = fixture();
        let all = PrototypeSet { members: (0..12).collect(), beta: 0.0, epsilon: 0.0, popularity: test.item_counts() };
        let rec = run_prototype_experiment(&m, &test, &mask, std::slice::from_ref(&all), &cfg(), Default::default(), 0).unwrap();
        let name = prototype_series_name(&all);
        assert_eq!(name, "evoi@100%");
        for kappa in [1, 3] {
            assert_eq!(rec.point("evoi", kappa, 0).unwrap().per_user, rec.point(&name, kappa, 0).unwrap().per_user);
            assert_eq!(rec.point(&name, kappa, 0).unwrap().fallbacks, 0);
        }
    }

    #[test]
    fn pruning_fraction_extremes() {
        let (m, test, mask) = fixture();
        let zero = run_pruning_experiment(&m, &test, &mask, &MeanChangeBounds::uniform(12, 6, 0.0), &cfg()).unwrap();
        for p in &zero {
            // Everything but the best and the query goes, barring exact ties.
            let want = (12 - p.kappa - 2) as f64 / (12 - p.kappa - 1) as f64;
            assert!((p.fraction - want).abs() < 1e-9, "{} vs {want}", p.fraction);
        }
        let none = run_pruning_experiment(&m, &test, &mask, &MeanChangeBounds::uniform(12, 6, 10.0), &cfg()).unwrap();
        assert!(none.iter().all(|p| p.fraction == 0.0));
        assert!(run_pruning_experiment(&m, &test, &mask, &MeanChangeBounds::uniform(5, 6, 0.0), &cfg()).is_err());
    }

    #[test]
    fn summary_pools_runs_and_compares_pairs() {
        let (m, test, mask) = fixture();
        let ent = item_entropies(&test);
        let ctx = SelectionContext { entropies: Some(&ent), bounds: None };
        let mut rec = run_query_experiment(&m, &test, &mask, &cfg(), ctx, 0).unwrap();
        rec.extend(run_query_experiment(&m, &test, &mask, &cfg(), ctx, 1).unwrap());
        let rows = summarize(&rec);
        assert_eq!(rows.len(), 6);
        let r = rows.iter().find(|r| r.series == "evoi" && r.kappa == 1).unwrap();
        assert_eq!(r.n, rec.pooled("evoi", 1).len());
        let t = compare_series(&rec, "evoi", "random", 1).unwrap();
        assert_eq!(t.n, r.n);
        let table = render_table(&rows);
        assert!(table.contains("evoi") && table.contains("entropy"));
        assert!(render_svg(&rows, "loss").starts_with("<svg"));
    }
}
