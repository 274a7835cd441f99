use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use hetlink::eval::{compare_reports, evaluate, EvalReport, ReportMeta};
use hetlink::features::{gaussian_features, FeatureMatrix};
use hetlink::graph::{split_edges, EdgeSplit, Graph};
use hetlink::heuristics::{HeuristicKind, HeuristicScorer};
use hetlink::model::{Model, ParamStore};
use hetlink::similarity::{build_profile, classify_task, histogram, TaskKind};
use hetlink::sweep::{run_sweep, FeatureInput, Method, SweepConfig};
use hetlink::synthgen::{generate_quantile_graphs, QuantileGenSpec, QuantileGraphMeta, ThresholdMode, DEFAULT_SWEEP_INDICES};
use hetlink::theory::{self, Check};
use log::info;
use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use crate::config::{load_graph, read_json, write_json, RunConfig};
use crate::Global;

/// Worker count: available cores, capped by `HETLINK_THREADS`.
fn threads() -> Result<usize> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("HETLINK_THREADS") {
        Ok(v) => {
            let cap: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&c| c >= 1)
                .ok_or_else(|| hetlink::Error::Input(format!("HETLINK_THREADS must be a positive integer, got {v:?}")))?;
            Ok(cores.min(cap))
        }
        Err(_) => Ok(cores),
    }
}

fn out_dir(g: &Global, configured: Option<&Path>, fallback: &str) -> Result<PathBuf> {
    let dir = g
        .out
        .clone()
        .or_else(|| configured.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from(fallback));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthgenArgs {
    /// Number of nodes.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Number of similarity quantiles.
    #[arg(long, default_value_t = 50)]
    quantiles: usize,
    /// Quantile index to wire; repeatable. Defaults to the 10-graph sweep.
    #[arg(long = "index")]
    index: Vec<usize>,
    /// Keep-probability for pairs inside the chosen quantile.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Output path prefix.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Serialize)]
struct SynthMeta<'a> {
    #[serde(flatten)]
    meta: &'a QuantileGraphMeta,
    feature_dim: usize,
    seed: u64,
    features: String,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn synthgen(g: &Global, a: SynthgenArgs) -> Result<()> {
    let seed = g.seed.unwrap_or(0);
    let indices = if a.index.is_empty() { DEFAULT_SWEEP_INDICES.to_vec() } else { a.index.clone() };
    let spec = QuantileGenSpec {
        n_quantiles: a.quantiles,
        selected_quantiles: indices.clone(),
        edge_subsample_rate: a.rate,
        seed,
        ..QuantileGenSpec::default()
    };
    if let Some(parent) = a.out_prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let fm = gaussian_features(a.n, a.dim, seed)?;
    let graphs = generate_quantile_graphs(&fm, &spec)?;
    let feat_path = with_suffix(&a.out_prefix, ".featb");
    fm.save_binary(&feat_path)?;
    let single = graphs.len() == 1;
    let mut written = Vec::new();
    for qg in &graphs {
        let stem = if single {
            a.out_prefix.clone()
        } else {
            with_suffix(&a.out_prefix, &format!("_q{}", qg.meta.quantile_index))
        };
        let graph_path = with_suffix(&stem, ".graph");
        qg.graph.write_text(BufWriter::new(File::create(&graph_path)?))?;
        let meta = SynthMeta {
            meta: &qg.meta,
            feature_dim: a.dim,
            seed,
            features: feat_path.display().to_string(),
        };
        write_json(&with_suffix(&stem, ".meta.json"), &meta)?;
        written.push(json!({
            "quantile_index": qg.meta.quantile_index,
            "graph": graph_path.display().to_string(),
            "edges": qg.meta.edge_count,
            "k_graph": qg.meta.k_graph,
        }));
    }
    print_json(&json!({ "features": feat_path.display().to_string(), "graphs": written }))
}

#[derive(Args, Debug)]
pub struct SimstatsArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Random non-edge pairs to sample.
    #[arg(long, default_value_t = 100_000)]
    negatives: usize,
    /// Fraction of samples allowed on the wrong side of a threshold.
    #[arg(long)]
    epsilon: Option<f64>,
}

const SIMSTATS_BINS: usize = 64;

pub fn simstats(g: &Global, a: SimstatsArgs) -> Result<()> {
    let graph = load_graph(&a.graph)?;
    let fm = FeatureMatrix::load(&a.features).with_context(|| format!("reading {}", a.features.display()))?;
    let mut profile = build_profile(&fm, &graph, a.negatives, g.seed.unwrap_or(0))?;
    if let Some(eps) = a.epsilon {
        if !(0.0..0.5).contains(&eps) {
            bail!(hetlink::Error::Input(format!("epsilon must lie in [0, 0.5), got {eps}")));
        }
        profile.epsilon = eps;
    }
    let task = classify_task(&profile)?;
    let pos_h = histogram(&profile.pos_samples, SIMSTATS_BINS);
    let neg_h = histogram(&profile.neg_samples, SIMSTATS_BINS);
    let out = out_dir(g, None, "simstats_out")?;
    let stats = json!({
        "K": profile.k_graph,
        "kind": task.kind,
        "M": task.m,
        "M1": task.m1,
        "M2": task.m2,
        "epsilon": profile.epsilon,
        "n_pos_samples": profile.pos_samples.len(),
        "n_neg_samples": profile.neg_samples.len(),
        "pos_histogram": pos_h,
        "neg_histogram": neg_h,
    });
    write_json(&out.join("simstats.json"), &stats)?;
    let mut csv = String::from("bin_lo,bin_hi,pos,neg\n");
    let width = 2.0 / SIMSTATS_BINS as f64;
    for b in 0..SIMSTATS_BINS {
        let lo = -1.0 + b as f64 * width;
        writeln!(csv, "{lo:.6},{:.6},{},{}", lo + width, pos_h[b], neg_h[b])?;
    }
    std::fs::write(out.join("histograms.csv"), csv)?;
    print_json(&json!({ "K": profile.k_graph, "kind": task.kind, "M": task.m, "M1": task.m1, "M2": task.m2 }))
}

#[derive(Args, Debug)]
pub struct TrainArgs {}

fn load_run_config(g: &Global) -> Result<RunConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| hetlink::Error::Input("--config <run config JSON> is required".into()))?;
    let mut cfg: RunConfig = read_json(path)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Prepared {
    graph: Graph,
    features: FeatureMatrix,
    input: Array2<f64>,
    split: EdgeSplit,
    g_train: Graph,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (graph, features) = cfg.load_data()?;
    let input = match cfg.feature_input {
        FeatureInput::Raw => features.rows().to_owned(),
        FeatureInput::CenteredUnit => features.centered_unit().to_owned(),
    };
    let split = split_edges(&graph, cfg.split, cfg.seed)?;
    let g_train = split.train_graph(graph.n_nodes())?;
    Ok(Prepared { graph, features, input, split, g_train })
}

pub fn train(g: &Global, _a: TrainArgs) -> Result<()> {
    let cfg = load_run_config(g)?;
    let out = out_dir(g, cfg.out_dir.as_deref(), "run_out")?;
    let p = prepare(&cfg)?;
    let mut model = Model::new(cfg.model, p.input.ncols(), cfg.seed)?;
    let train_cfg = hetlink::train::TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
    info!("training {} on {} edges", cfg.model.label(), p.split.train.len());
    let trace = hetlink::train::train(&mut model, &p.g_train, p.input.view(), &p.split, &train_cfg)?;

    model.params().write_checkpoint(BufWriter::new(File::create(out.join("model.ckpt"))?))?;
    write_json(&out.join("trace.json"), &trace)?;
    trace.write_csv(BufWriter::new(File::create(out.join("trace.csv"))?))?;
    write_json(&out.join("run_config.json"), &cfg)?;
    print_json(&json!({
        "model": cfg.model.label(),
        "epochs": trace.losses.len(),
        "final_loss": trace.losses.last(),
        "best_epoch": trace.best_epoch,
        "best_val_mrr": trace.best_val_mrr,
        "final_checksum": trace.final_checksum,
        "out_dir": out.display().to_string(),
    }))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to load; defaults to `<out>/model.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    write_json(&out.join("report.json"), report)?;
    std::fs::write(out.join("buckets.csv"), report.buckets_csv())?;
    print_json(&json!({
        "model": report.metadata.model,
        "metric": report.metric,
        "overall": report.overall,
        "n_test": report.n_test,
        "report": out.join("report.json").display().to_string(),
    }))
}

pub fn eval(g: &Global, a: EvalArgs) -> Result<()> {
    let cfg = load_run_config(g)?;
    let out = out_dir(g, cfg.out_dir.as_deref(), "run_out")?;
    let ckpt = a.checkpoint.unwrap_or_else(|| out.join("model.ckpt"));
    let file = File::open(&ckpt).with_context(|| format!("opening checkpoint {}", ckpt.display()))?;
    let store = ParamStore::read_checkpoint(BufReader::new(file))
        .with_context(|| format!("reading checkpoint {}", ckpt.display()))?;
    let p = prepare(&cfg)?;
    let model = Model::with_params(cfg.model, p.input.ncols(), store)?;
    let scorer = model.scorer_for(&p.g_train, p.input.view())?;
    let eval_cfg = hetlink::eval::EvalConfig { threads: threads()?, seed: cfg.eval.seed.wrapping_add(cfg.seed), ..cfg.eval.clone() };
    let meta = ReportMeta {
        model: cfg.model.label(),
        seed: cfg.seed,
        data_checksum: hetlink::eval::data_checksum(&p.graph, &p.features),
    };
    let report = evaluate(&scorer, &p.graph, &p.g_train, &p.features, &p.split.test, &eval_cfg, meta)?;
    write_report(&out, &report)
}

#[derive(Args, Debug)]
pub struct HeuristicArgs {
    /// One of cn, aa, ra, ppr.
    #[arg(long)]
    method: HeuristicKind,
}

pub fn heuristic(g: &Global, a: HeuristicArgs) -> Result<()> {
    let cfg = load_run_config(g)?;
    let out = out_dir(g, cfg.out_dir.as_deref(), "run_out")?;
    let p = prepare(&cfg)?;
    let scorer = HeuristicScorer::new(&p.g_train, a.method, Default::default())?;
    scorer.warm(p.split.test.iter().flat_map(|&(u, v)| [u, v]))?;
    let eval_cfg = hetlink::eval::EvalConfig { threads: threads()?, seed: cfg.eval.seed.wrapping_add(cfg.seed), ..cfg.eval.clone() };
    let meta = ReportMeta {
        model: a.method.to_string(),
        seed: cfg.seed,
        data_checksum: hetlink::eval::data_checksum(&p.graph, &p.features),
    };
    let report = evaluate(&scorer, &p.graph, &p.g_train, &p.features, &p.split.test, &eval_cfg, meta)?;
    write_report(&out, &report)
}

#[derive(Args, Debug)]
pub struct BucketsArgs {
    /// Evaluation report to tabulate.
    #[arg(long)]
    report: PathBuf,
    /// Second report; writes the cellwise difference `report - against`.
    #[arg(long)]
    against: Option<PathBuf>,
}

pub fn buckets(g: &Global, a: BucketsArgs) -> Result<()> {
    let ra: EvalReport = read_json(&a.report)?;
    let out = out_dir(g, None, "buckets_out")?;
    std::fs::write(out.join("buckets.csv"), ra.buckets_csv())?;
    match a.against {
        None => print_json(&json!({ "model": ra.metadata.model, "per_bucket": ra.per_bucket })),
        Some(path) => {
            let rb: EvalReport = read_json(&path)?;
            let diff = compare_reports(&ra, &rb)?;
            std::fs::write(out.join("diff.csv"), diff.to_csv())?;
            write_json(&out.join("diff.json"), &diff)?;
            print_json(&json!({ "a": ra.metadata.model, "b": rb.metadata.model, "zero": diff.is_zero(), "cells": diff.cells }))
        }
    }
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Which theorem: 1 (threshold solutions), 2 (gated tasks), 3 (degree shift).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    theorem: u8,
    /// Threshold M for theorem 1.
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    threshold: f64,
    /// Gate bounds for theorem 2.
    #[arg(long, default_value_t = -0.3, allow_hyphen_values = true)]
    m1: f64,
    #[arg(long, default_value_t = 0.3, allow_hyphen_values = true)]
    m2: f64,
    /// Nodes on the unit circle for theorems 1 and 2.
    #[arg(long, default_value_t = 400)]
    n: usize,
}

#[derive(Debug)]
struct VerificationFailed(u8, Vec<String>);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "theorem {} checks failed: {}", self.0, self.1.join(", "))
    }
}

impl std::error::Error for VerificationFailed {}

pub fn verification_failed(err: &anyhow::Error) -> bool {
    err.downcast_ref::<VerificationFailed>().is_some()
}

pub fn verify(g: &Global, a: VerifyArgs) -> Result<()> {
    let out = out_dir(g, None, "verify_out")?;
    let seed = g.seed.unwrap_or(1);
    let (checks, evidence): (Vec<Check>, serde_json::Value) = match a.theorem {
        1 => {
            let mut checks = Vec::new();
            let mut closed = Vec::new();
            for mode in [ThresholdMode::Homophilic, ThresholdMode::Heterophilic] {
                let s = theory::thm1_closed_form(mode, a.threshold)?;
                let ok = s.predict(a.threshold).abs() <= 1e-12;
                checks.push(Check::new(&format!("{mode:?}_zero_at_threshold"), ok, format!("{:.3e}", s.predict(a.threshold))));
                closed.push(s);
            }
            let mut runs = Vec::new();
            for mode in [ThresholdMode::Homophilic, ThresholdMode::Heterophilic] {
                for s in seed..seed + 3 {
                    let r = theory::verify_thm1_by_training(mode, a.threshold, a.n, s)?;
                    checks.extend(r.checks.iter().map(|c| Check {
                        name: format!("{mode:?}_seed{s}_{}", c.name),
                        ..c.clone()
                    }));
                    runs.push(r);
                }
            }
            std::fs::write(out.join("fig2.csv"), theory::fig2_csv(a.threshold, 201)?)?;
            (checks, json!({ "closed_form": closed, "training": runs }))
        }
        2 => {
            let r = theory::verify_thm2(a.n, a.m1, a.m2, seed)?;
            (r.checks.clone(), serde_json::to_value(&r)?)
        }
        _ => {
            let ds = [0, 2, 3, 4, 5, 6, 7, 8];
            let dps: Vec<usize> = (0..=8).collect();
            let grid = theory::verify_thm3_grid(
                &ds,
                &dps,
                &[-0.5, -1.0, -2.0],
                std::f64::consts::PI / 6.0,
                2.0 * std::f64::consts::PI / 3.0,
            )?;
            (grid.checks.clone(), serde_json::to_value(&grid.rows)?)
        }
    };
    let passed = checks.iter().all(|c| c.pass);
    let path = out.join(format!("thm{}_report.json", a.theorem));
    write_json(&path, &json!({ "theorem": a.theorem, "passed": passed, "checks": checks, "evidence": evidence }))?;
    print_json(&json!({ "theorem": a.theorem, "passed": passed, "checks": checks, "report": path.display().to_string() }))?;
    if !passed {
        let failed = checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
        return Err(VerificationFailed(a.theorem, failed).into());
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Run seeds, comma separated; overrides the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Methods such as SAGE+MLP or CN, comma separated.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
    /// Number of nodes.
    #[arg(long)]
    n: Option<usize>,
    /// Training epochs per learned cell.
    #[arg(long)]
    epochs: Option<usize>,
}

pub fn sweep(g: &Global, a: SweepArgs) -> Result<()> {
    let mut cfg: SweepConfig = match &g.config {
        Some(p) => read_json(p)?,
        None => SweepConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.feature_seed = seed;
        cfg.quantiles.seed = seed;
    }
    if !a.seeds.is_empty() {
        cfg.seeds = a.seeds;
    }
    if !a.methods.is_empty() {
        cfg.methods = a.methods;
    }
    if let Some(n) = a.n {
        cfg.n_nodes = n;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.threads = threads()?;
    let out = out_dir(g, None, "sweep_out")?;
    let report = run_sweep(&cfg)?;
    report.write_outputs(&out)?;
    let kinds: Vec<TaskKind> = report.graphs.iter().map(|s| s.task.kind).collect();
    print_json(&json!({
        "graphs": report.graphs.len(),
        "cells": report.cells.len(),
        "tasks": kinds,
        "out_dir": out.display().to_string(),
    }))
}
