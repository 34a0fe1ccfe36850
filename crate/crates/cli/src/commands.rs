use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use acf_core::bounds::{precompute_bound_tables, BoundTables};
use acf_core::data::{
    density_filter, generate_synthetic, load_csv, load_csv_indexed, make_split, write_csv, CsvSchema, RatingsDataset,
    SplitManifest,
};
use acf_core::eval::{
    compare_series, render_pruning_table, render_svg, render_table, run_pruning_experiment, run_prototype_experiment,
    run_query_experiment, summarize, write_plot_csv, write_pruning_csv, LossRecord, PruningPoint, SummaryRow,
};
use acf_core::format::{load_bounds, load_model, load_prototypes, save_bounds, save_model, save_prototypes, AnyModel, ModelKind};
use acf_core::prototypes::{prototypes_for_fraction, select_prototypes, PrototypeSet};
use acf_core::strategies::{item_entropies, SelectionContext, StrategyKind};
use acf_core::synthetic::separated_mcvq;
use acf_core::training::{fit_mcvq, fit_naive_bayes, FitReport};
use acf_core::data::ReplayMask;
use acf_core::mcvq::McvqModel;
use acf_service::engine::SessionConfig;
use acf_service::Engine;
use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::{Config, Experiment};
use crate::{BoundsArgs, DemoArgs, EvaluateArgs, IngestArgs, PrototypeArgs, ServeArgs, TrainArgs};

pub const RATINGS_FILE: &str = "ratings.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.acf";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const SPLIT_FILE: &str = "split.json";

/// Mixes a stream tag into the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

fn read_model(path: &Path) -> Result<AnyModel> {
    require(path, "model")?;
    load_model(path).with_context(|| format!("cannot read model {}", path.display()))
}

fn read_bounds(path: &Path) -> Result<BoundTables> {
    require(path, "bound tables")?;
    load_bounds(path).with_context(|| format!("cannot read bound tables {}", path.display()))
}

fn read_prototypes(path: &Path) -> Result<PrototypeSet> {
    require(path, "prototype set")?;
    load_prototypes(path).with_context(|| format!("cannot read prototype set {}", path.display()))
}

/// The train and test sets of an `ingest` output directory, indexed as the
/// split manifest records them.
pub struct DataDir {
    pub manifest: SplitManifest,
    pub train: RatingsDataset,
    pub test: RatingsDataset,
}

impl DataDir {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(SPLIT_FILE);
        require(&manifest_path, "split manifest")?;
        let manifest = SplitManifest::load(&manifest_path)
            .with_context(|| format!("cannot read split manifest {}", manifest_path.display()))?;
        let schema = CsvSchema { rho: manifest.rho, ..CsvSchema::default() };
        let read = |file: &str, users: &[String]| -> Result<RatingsDataset> {
            let p = dir.join(file);
            require(&p, "ratings file")?;
            load_csv_indexed(&p, &schema, Some(users), Some(&manifest.item_labels))
                .with_context(|| format!("cannot read {}", p.display()))
        };
        let train = read(TRAIN_FILE, &manifest.train_user_labels)?;
        let test = read(TEST_FILE, &manifest.test_user_labels)?;
        if manifest.mask.schedules.len() != test.n_users() {
            bail!("split manifest and {TEST_FILE} disagree on the number of test users");
        }
        Ok(Self { manifest, train, test })
    }
}

pub fn demo_data(cfg: &Config, a: &DemoArgs) -> Result<()> {
    let mut spec = cfg.demo.model.clone();
    spec.seed = derive_seed(cfg.seed, 1);
    let gt = separated_mcvq(&spec)?;
    let d = generate_synthetic(&gt, cfg.demo.n_users, cfg.demo.density, derive_seed(cfg.seed, 2))?;
    create_dir(&a.out_dir)?;
    write_csv(&d, a.out_dir.join(RATINGS_FILE))?;
    save_model(&AnyModel::Mcvq(gt), a.out_dir.join(GROUND_TRUTH_FILE))?;
    println!(
        "wrote {} ratings from {} users over {} items to {}",
        d.len(),
        d.n_users(),
        d.n_items(),
        a.out_dir.display()
    );
    Ok(())
}

pub fn ingest(cfg: &Config, a: &IngestArgs) -> Result<()> {
    require(&a.input, "ratings file")?;
    let schema = cfg.ingest.schema()?;
    let raw = load_csv(&a.input, &schema).with_context(|| format!("cannot read {}", a.input.display()))?;
    let spec = cfg.ingest.split_spec(cfg.seed);
    let filtered = density_filter(&raw, &spec)?;
    let split = make_split(&filtered, &spec)?;
    create_dir(&a.out_dir)?;
    write_csv(&split.train, a.out_dir.join(TRAIN_FILE))?;
    write_csv(&split.test, a.out_dir.join(TEST_FILE))?;
    SplitManifest::new(&split, &spec).save(a.out_dir.join(SPLIT_FILE))?;
    println!(
        "read {} ratings ({} users, {} items); kept {} users and {} items",
        raw.len(),
        raw.n_users(),
        raw.n_items(),
        filtered.n_users(),
        filtered.n_items()
    );
    println!(
        "train: {} users, {} ratings; test: {} users, {} ratings",
        split.train.n_users(),
        split.train.len(),
        split.test.n_users(),
        split.test.len()
    );
    Ok(())
}

fn trace_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".trace.json");
    PathBuf::from(s)
}

pub fn train(cfg: &Config, a: &TrainArgs) -> Result<()> {
    let data = DataDir::load(&a.data_dir)?;
    let mut params = cfg.train.params.clone();
    params.seed = cfg.seed;
    let (model, report): (AnyModel, FitReport) = match cfg.train.model_kind {
        ModelKind::Mcvq => {
            let (m, r) = fit_mcvq(&data.train, &params)?;
            (AnyModel::Mcvq(m), r)
        }
        ModelKind::NaiveBayes => {
            let (m, r) = fit_naive_bayes(&data.train, &params)?;
            (AnyModel::NaiveBayes(m), r)
        }
    };
    for w in &report.warnings {
        tracing::warn!("{w}");
    }
    save_model(&model, &a.out)?;
    write_json(&report, &trace_path(&a.out))?;
    println!(
        "{} model: {} iterations, final objective {:.6}, converged {}, monotone {}",
        model.kind(),
        report.trace.len(),
        report.trace.last().copied().unwrap_or(f64::NAN),
        report.converged,
        report.monotone
    );
    Ok(())
}

fn mcvq_only<'a>(model: &'a AnyModel, what: &str) -> Result<&'a McvqModel> {
    match model {
        AnyModel::Mcvq(m) => Ok(m),
        AnyModel::NaiveBayes(_) => bail!("{what} require an MCVQ model"),
    }
}

pub fn bounds(cfg: &Config, a: &BoundsArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let m = mcvq_only(&model, "bound tables")?;
    let tables = precompute_bound_tables(m, &cfg.bounds)?;
    save_bounds(&tables, &a.out)?;
    let data = &tables.mean_change.data;
    let mean = data.iter().sum::<f64>() / data.len().max(1) as f64;
    println!("wrote {} mean-change bounds (mean {:.4}) to {}", data.len(), mean, a.out.display());
    Ok(())
}

pub fn prototypes(cfg: &Config, a: &PrototypeArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let m = mcvq_only(&model, "prototype sets")?;
    let data = DataDir::load(&a.data_dir)?;
    let set = match cfg.prototypes.beta {
        Some(beta) => select_prototypes(m, &data.train, beta)?,
        None => prototypes_for_fraction(m, &data.train, cfg.prototypes.fraction)?,
    };
    save_prototypes(&set, &a.out)?;
    println!(
        "kept {} of {} items (beta {:.4}, covering radius {:.4})",
        set.members.len(),
        set.n_items(),
        set.beta,
        set.epsilon
    );
    Ok(())
}

/// Replay schedule for run `run`: the manifest's for run 0, fresh ones after.
pub fn run_mask(data: &DataDir, seed: u64, run: usize) -> ReplayMask {
    if run == 0 {
        data.manifest.mask.clone()
    } else {
        ReplayMask::shuffled(&data.test, derive_seed(seed, 100 + run as u64))
    }
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub kappa: usize,
    pub better: String,
    pub worse: String,
    pub mean_difference: f64,
    pub t: f64,
    pub p_value: f64,
    pub n: usize,
}

#[derive(Debug, Serialize)]
pub struct QueryResults {
    pub summary: Vec<SummaryRow>,
    pub comparisons: Vec<Comparison>,
    pub record: LossRecord,
}

#[derive(Debug, Serialize)]
pub struct PrototypeResults {
    pub sets: Vec<PrototypeSet>,
    pub summary: Vec<SummaryRow>,
    pub record: LossRecord,
}

#[derive(Debug, Default, Serialize)]
pub struct EvaluateResults {
    pub model_kind: String,
    pub seed: u64,
    pub n_runs: usize,
    pub query: Option<QueryResults>,
    pub pruning: Option<Vec<PruningPoint>>,
    pub prototype: Option<PrototypeResults>,
}

fn comparisons(record: &LossRecord, better: &str, others: &[String]) -> Vec<Comparison> {
    let mut out = Vec::new();
    for kappa in record.kappas() {
        for worse in others {
            if worse == better {
                continue;
            }
            if let Some(t) = compare_series(record, better, worse, kappa) {
                out.push(Comparison {
                    kappa,
                    better: better.into(),
                    worse: worse.clone(),
                    mean_difference: t.mean_diff,
                    t: t.t,
                    p_value: t.p_value,
                    n: t.n,
                });
            }
        }
    }
    out
}

fn query_experiment(cfg: &Config, model: &AnyModel, data: &DataDir, ctx: SelectionContext<'_>) -> Result<QueryResults> {
    let params = &cfg.evaluate.params;
    let mut record = LossRecord::default();
    for run in 0..params.n_runs {
        let mask = run_mask(data, cfg.seed, run);
        let r = match model {
            AnyModel::Mcvq(m) => run_query_experiment(m, &data.test, &mask, params, ctx, run)?,
            AnyModel::NaiveBayes(m) => run_query_experiment(m, &data.test, &mask, params, ctx, run)?,
        };
        record.extend(r);
        tracing::info!(run, "query experiment run finished");
    }
    let names: Vec<String> = params.strategies.iter().map(StrategyKind::to_string).collect();
    let comparisons = if params.strategies.contains(&StrategyKind::Evoi) {
        comparisons(&record, "evoi", &names)
    } else {
        Vec::new()
    };
    Ok(QueryResults { summary: summarize(&record), comparisons, record })
}

fn prototype_experiment(
    cfg: &Config,
    model: &McvqModel,
    data: &DataDir,
    sets: Vec<PrototypeSet>,
    ctx: SelectionContext<'_>,
) -> Result<PrototypeResults> {
    let params = &cfg.evaluate.params;
    let mut record = LossRecord::default();
    for run in 0..params.n_runs {
        let mask = run_mask(data, cfg.seed, run);
        record.extend(run_prototype_experiment(model, &data.test, &mask, &sets, params, ctx, run)?);
        tracing::info!(run, "prototype experiment run finished");
    }
    Ok(PrototypeResults { sets, summary: summarize(&record), record })
}

pub fn evaluate(cfg: &Config, a: &EvaluateArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let data = DataDir::load(&a.data_dir)?;
    if data.test.n_items() != model.n_items() {
        bail!("model has {} items but the data directory has {}", model.n_items(), data.test.n_items());
    }
    let mut params = cfg.evaluate.params.clone();
    params.seed = cfg.seed;
    params.validate()?;
    let cfg = &Config { evaluate: crate::config::EvaluateConfig { params, ..cfg.evaluate.clone() }, ..cfg.clone() };
    let wants = |e: Experiment| cfg.evaluate.experiments.contains(&e);

    let tables = match (&model, &a.bounds) {
        (_, Some(p)) => Some(read_bounds(p)?),
        (AnyModel::Mcvq(m), None) if wants(Experiment::Pruning) || cfg.evaluate.params.pruning.is_some() => {
            tracing::info!("computing bound tables");
            Some(precompute_bound_tables(m, &cfg.bounds)?)
        }
        _ => None,
    };
    if let Some(t) = &tables {
        if t.mean_change.n_items != model.n_items() || t.mean_change.rho != model.rho() {
            bail!("bound tables do not match the model");
        }
    }
    let entropies = item_entropies(&data.train);
    let ctx = SelectionContext { entropies: Some(&entropies), bounds: tables.as_ref().map(|t| &t.mean_change) };

    create_dir(&a.out_dir)?;
    let mut results = EvaluateResults {
        model_kind: model.kind().to_string(),
        seed: cfg.seed,
        n_runs: cfg.evaluate.params.n_runs,
        ..Default::default()
    };
    let mut summary = String::new();

    if wants(Experiment::Query) {
        let q = query_experiment(cfg, &model, &data, ctx)?;
        summary.push_str("query strategies: mean model-loss improvement\n");
        summary.push_str(&render_table(&q.summary));
        for c in &q.comparisons {
            summary.push_str(&format!(
                "kappa {:>3}: {} vs {}: diff {:+.4}, p = {:.3e} (n = {})\n",
                c.kappa, c.better, c.worse, c.mean_difference, c.p_value, c.n
            ));
        }
        write_plot_csv(&q.summary, a.out_dir.join("plot.csv"))?;
        if cfg.evaluate.svg {
            fs::write(a.out_dir.join("plot.svg"), render_svg(&q.summary, "model-loss improvement"))?;
        }
        results.query = Some(q);
    }

    if wants(Experiment::Pruning) {
        match (&model, &tables) {
            (AnyModel::Mcvq(m), Some(t)) => {
                let mask = run_mask(&data, cfg.seed, 0);
                let points = run_pruning_experiment(m, &data.test, &mask, &t.mean_change, &cfg.evaluate.params)?;
                summary.push_str("\npruned share of potential targets\n");
                summary.push_str(&render_pruning_table(&points));
                write_pruning_csv(&points, a.out_dir.join("pruning.csv"))?;
                results.pruning = Some(points);
            }
            _ => tracing::warn!("skipping the pruning experiment: it needs an MCVQ model"),
        }
    }

    if wants(Experiment::Prototype) {
        match &model {
            AnyModel::Mcvq(m) => {
                let sets = if a.prototypes.is_empty() {
                    vec![prototypes_for_fraction(m, &data.train, 0.4)?, prototypes_for_fraction(m, &data.train, 0.2)?]
                } else {
                    a.prototypes.iter().map(|p| read_prototypes(p)).collect::<Result<_>>()?
                };
                let p = prototype_experiment(cfg, m, &data, sets, ctx)?;
                summary.push_str("\nprototype-restricted EVOI: mean model-loss improvement\n");
                summary.push_str(&render_table(&p.summary));
                write_plot_csv(&p.summary, a.out_dir.join("prototype_plot.csv"))?;
                if cfg.evaluate.svg {
                    fs::write(
                        a.out_dir.join("prototype_plot.svg"),
                        render_svg(&p.summary, "prototype-restricted EVOI"),
                    )?;
                }
                results.prototype = Some(p);
            }
            AnyModel::NaiveBayes(_) => tracing::warn!("skipping the prototype experiment: it needs an MCVQ model"),
        }
    }

    write_json(&results, &a.out_dir.join("results.json"))?;
    fs::write(a.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn serve(cfg: &Config, a: &ServeArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let mut engine = Engine::new(model);
    if let Some(dir) = &a.data_dir {
        let data = DataDir::load(dir)?;
        engine = engine.with_labels(data.manifest.item_labels.clone())?.with_entropies(item_entropies(&data.train))?;
    }
    if let Some(p) = &a.bounds {
        engine = engine.with_tables(read_bounds(p)?)?;
    }
    if let Some(p) = &a.prototypes {
        engine = engine.with_prototypes(read_prototypes(p)?)?;
    }
    let s = &cfg.serve;
    engine = engine.with_defaults(SessionConfig {
        strategy: StrategyKind::Evoi,
        evoi_threshold: s.evoi_threshold,
        pruning: s.pruning,
        use_prototypes: s.use_prototypes,
        seed: cfg.seed,
    })?;
    let addr: SocketAddr = s.addr.parse().with_context(|| format!("invalid listen address {:?}", s.addr))?;
    let store = s.store.as_ref().map(PathBuf::from);
    let sessions = acf_service::open_sessions(engine, store.as_deref())?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(acf_service::serve(sessions, addr))?;
    Ok(())
}
