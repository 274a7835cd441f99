//! Quantile-graph sweep: every selected similarity quantile × method × seed,
//! aggregated into table and curve outputs.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::eval::{data_checksum, evaluate, EvalConfig, EvalReport, ReportMeta};
use crate::features::{gaussian_features, FeatureMatrix};
use crate::graph::split_edges;
use crate::heuristics::{HeuristicKind, HeuristicScorer, PprConfig};
use crate::model::{DecoderKind, EncoderKind, Model, ModelSpec};
use crate::similarity::{build_profile, classify_task, TaskClassification};
use crate::synthgen::{generate_quantile_graphs, QuantileGenSpec, QuantileGraph};
use crate::train::{train, TrainConfig};

/// What the encoders see as node input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureInput {
    #[default]
    Raw,
    /// Mean-centered rows scaled to unit norm, the geometry the graphs
    /// were wired by.
    CenteredUnit,
}

/// One column of the results table: a learned encoder/decoder pair or a
/// heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Learned(EncoderKind, DecoderKind),
    Heuristic(HeuristicKind),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Learned(e, d) => write!(f, "{e}+{d}"),
            Method::Heuristic(h) => write!(f, "{h}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('+') {
            Some((e, d)) => Ok(Method::Learned(e.parse()?, d.parse()?)),
            None => s.parse().map(Method::Heuristic),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

pub fn default_methods() -> Vec<Method> {
    use DecoderKind::*;
    use EncoderKind::*;
    let mut m = vec![
        Method::Learned(Sage, Mlp),
        Method::Learned(Sage, DistMult),
        Method::Learned(Sage, Dot),
        Method::Learned(Gcn, Mlp),
    ];
    m.extend(HeuristicKind::ALL.map(Method::Heuristic));
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub n_nodes: usize,
    pub feature_dim: usize,
    pub feature_seed: u64,
    pub feature_input: FeatureInput,
    pub quantiles: QuantileGenSpec,
    pub split: [f64; 3],
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub layers: usize,
    pub hidden: usize,
    pub decoder_hidden: Option<usize>,
    /// Its `seed` is replaced by each run's seed.
    pub train: TrainConfig,
    /// Its `seed` is offset by each run's seed.
    pub eval: EvalConfig,
    pub ppr: PprConfig,
    /// Random non-edge pairs drawn for task classification.
    pub profile_negatives: usize,
    /// Cells evaluated concurrently; results do not depend on it.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n_nodes: 2000,
            feature_dim: 32,
            feature_seed: 0,
            feature_input: FeatureInput::Raw,
            quantiles: QuantileGenSpec::default(),
            split: [0.8, 0.1, 0.1],
            seeds: vec![1, 2, 3],
            methods: default_methods(),
            layers: 2,
            hidden: 64,
            decoder_hidden: None,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            ppr: PprConfig::default(),
            profile_negatives: 20_000,
            threads: 1,
        }
    }
}

impl SweepConfig {
    /// Collects every violated field into one error.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        if self.n_nodes < 2 {
            bad.push("n_nodes must be >= 2".into());
        }
        if self.feature_dim == 0 {
            bad.push("feature_dim must be >= 1".into());
        }
        if self.seeds.is_empty() {
            bad.push("seeds must be non-empty".into());
        }
        if self.methods.is_empty() {
            bad.push("methods must be non-empty".into());
        }
        if self.quantiles.selected_quantiles.is_empty() {
            bad.push("quantiles.selected_quantiles must be non-empty".into());
        }
        if self.hidden == 0 {
            bad.push("hidden must be >= 1".into());
        }
        if self.profile_negatives == 0 {
            bad.push("profile_negatives must be >= 1".into());
        }
        for (what, r) in [("train", self.train.validate()), ("eval", self.eval.validate()), ("ppr", self.ppr.validate())] {
            if let Err(e) = r {
                bad.push(format!("{what}: {e}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(input_err!("{}", bad.join("; ")))
        }
    }

    pub fn model_spec(&self, encoder: EncoderKind, decoder: DecoderKind) -> ModelSpec {
        let mut spec = ModelSpec::new(encoder, decoder).with_width(self.hidden).with_layers(self.layers);
        spec.decoder_hidden = self.decoder_hidden;
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    /// Position in the sweep, 0-based.
    pub graph_index: usize,
    pub quantile_index: usize,
    pub n_edges: usize,
    pub k_graph: f64,
    pub task: TaskClassification,
    pub data_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub graph_index: usize,
    pub method: Method,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub runs: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std, runs: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: Method,
    /// One entry per swept graph.
    pub cells: Vec<MeanStd>,
}

/// Everything a sweep produces. Contains no timings, so reruns with the
/// same config serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub metric: String,
    pub graphs: Vec<GraphSummary>,
    pub table: Vec<TableRow>,
    pub cells: Vec<CellResult>,
}

impl SweepReport {
    pub fn row(&self, method: Method) -> Option<&TableRow> {
        self.table.iter().find(|r| r.method == method)
    }

    /// Mean metric of `method` on each swept graph.
    pub fn means(&self, method: Method) -> Option<Vec<f64>> {
        self.row(method).map(|r| r.cells.iter().map(|c| c.mean).collect())
    }

    /// Wide results table: a quantile row, a similarity row,
    /// then `mean±std` (×100) per method.
    pub fn table2_csv(&self) -> String {
        let mut s = String::from("row");
        for g in &self.graphs {
            write!(s, ",g{}", g.graph_index).expect("string write");
        }
        s.push_str("\nquantile");
        for g in &self.graphs {
            write!(s, ",{}", g.quantile_index).expect("string write");
        }
        s.push_str("\nfeat_sim_k");
        for g in &self.graphs {
            write!(s, ",{:.4}", g.k_graph).expect("string write");
        }
        s.push('\n');
        for row in &self.table {
            s.push_str(&row.method.to_string());
            for c in &row.cells {
                write!(s, ",{:.2}±{:.2}", 100.0 * c.mean, 100.0 * c.std).expect("string write");
            }
            s.push('\n');
        }
        s
    }

    /// Long-format curve data: one line per graph and method, metric ×100.
    pub fn ucurve_csv(&self) -> String {
        let mut s = String::from("graph_index,quantile_index,k_graph,method,mean,std\n");
        for row in &self.table {
            for (g, c) in self.graphs.iter().zip(&row.cells) {
                writeln!(
                    s,
                    "{},{},{:.6},{},{:.2},{:.2}",
                    g.graph_index,
                    g.quantile_index,
                    g.k_graph,
                    row.method,
                    100.0 * c.mean,
                    100.0 * c.std
                )
                .expect("string write");
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.json`, `table2_style.csv` and `ucurve.csv` into `dir`,
    /// creating it if needed.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("table2_style.csv"), self.table2_csv())?;
        std::fs::write(dir.join("ucurve.csv"), self.ucurve_csv())?;
        Ok(())
    }
}

/// Synthetic data shared by every cell of a sweep.
pub struct SweepData {
    pub features: FeatureMatrix,
    pub input: Array2<f64>,
    pub graphs: Vec<QuantileGraph>,
    pub summaries: Vec<GraphSummary>,
}

pub fn prepare_data(cfg: &SweepConfig) -> Result<SweepData> {
    cfg.validate()?;
    let features = gaussian_features(cfg.n_nodes, cfg.feature_dim, cfg.feature_seed)?;
    let input = match cfg.feature_input {
        FeatureInput::Raw => features.rows().to_owned(),
        FeatureInput::CenteredUnit => features.centered_unit().to_owned(),
    };
    let graphs = generate_quantile_graphs(&features, &cfg.quantiles)?;
    let mut summaries = Vec::with_capacity(graphs.len());
    for (i, qg) in graphs.iter().enumerate() {
        let profile = build_profile(&features, &qg.graph, cfg.profile_negatives, cfg.quantiles.seed ^ i as u64)?;
        let task = classify_task(&profile)?;
        summaries.push(GraphSummary {
            graph_index: i,
            quantile_index: qg.meta.quantile_index,
            n_edges: qg.graph.n_edges(),
            k_graph: profile.k_graph,
            task,
            data_checksum: data_checksum(&qg.graph, &features),
        });
    }
    Ok(SweepData { features, input, graphs, summaries })
}

/// Trains (or scores, for heuristics) and evaluates one cell.
pub fn run_cell(cfg: &SweepConfig, data: &SweepData, graph_index: usize, method: Method, seed: u64) -> Result<CellResult> {
    let g = &data.graphs[graph_index].graph;
    let split = split_edges(g, cfg.split, seed)?;
    if split.test.is_empty() {
        return Err(Error::Domain(format!("graph {graph_index} has no test edges")));
    }
    let g_train = split.train_graph(g.n_nodes())?;
    let eval_cfg = EvalConfig {
        seed: cfg.eval.seed.wrapping_add(seed),
        ..cfg.eval.clone()
    };
    let meta = ReportMeta {
        model: method.to_string(),
        seed,
        data_checksum: data.summaries[graph_index].data_checksum.clone(),
    };
    let (report, best_epoch) = match method {
        Method::Learned(enc, dec) => {
            let mut model = Model::new(cfg.model_spec(enc, dec), data.input.ncols(), seed)?;
            let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
            let trace = train(&mut model, &g_train, data.input.view(), &split, &train_cfg)?;
            let scorer = model.scorer_for(&g_train, data.input.view())?;
            let r = evaluate(&scorer, g, &g_train, &data.features, &split.test, &eval_cfg, meta)?;
            (r, trace.best_epoch)
        }
        Method::Heuristic(kind) => {
            let scorer = HeuristicScorer::new(&g_train, kind, cfg.ppr)?;
            scorer.warm(split.test.iter().flat_map(|&(u, v)| [u, v]))?;
            let r = evaluate(&scorer, g, &g_train, &data.features, &split.test, &eval_cfg, meta)?;
            (r, None)
        }
    };
    info!(
        "graph {graph_index} (q{}) {method} seed {seed}: {} {:.4}",
        data.summaries[graph_index].quantile_index, report.metric, report.overall
    );
    Ok(CellResult { graph_index, method, seed, best_epoch, report })
}

/// Runs every graph × method × seed cell and aggregates mean±std per
/// graph and method.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    let data = prepare_data(cfg)?;
    run_sweep_on(cfg, &data)
}

pub fn run_sweep_on(cfg: &SweepConfig, data: &SweepData) -> Result<SweepReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, Method, u64)> = (0..data.graphs.len())
        .flat_map(|gi| cfg.methods.iter().flat_map(move |&m| cfg.seeds.iter().map(move |&s| (gi, m, s))))
        .collect();
    let results: Vec<Mutex<Option<Result<CellResult>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.threads.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(gi, m, s)) = jobs.get(i) else { break };
                let r = run_cell(cfg, data, gi, m, s);
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    let cells: Vec<CellResult> = results
        .into_iter()
        .map(|slot| slot.into_inner().expect("result slot").expect("every job ran"))
        .collect::<Result<_>>()?;

    let table = cfg
        .methods
        .iter()
        .map(|&method| {
            let cells = (0..data.graphs.len())
                .map(|gi| {
                    let vals: Vec<f64> = cells
                        .iter()
                        .filter(|c| c.graph_index == gi && c.method == method)
                        .map(|c| c.report.overall)
                        .collect();
                    MeanStd::of(&vals).expect("at least one seed")
                })
                .collect();
            TableRow { method, cells }
        })
        .collect();
    Ok(SweepReport {
        config: cfg.clone(),
        metric: cfg.eval.metric_name(),
        graphs: data.summaries.clone(),
        table,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::TaskKind;

    fn tiny() -> SweepConfig {
        SweepConfig {
            n_nodes: 120,
            feature_dim: 8,
            quantiles: QuantileGenSpec {
                n_quantiles: 10,
                selected_quantiles: vec![0, 5, 9],
                ..QuantileGenSpec::default()
            },
            seeds: vec![1, 2],
            methods: vec![Method::Learned(EncoderKind::Sage, DecoderKind::Mlp), Method::Heuristic(HeuristicKind::Cn)],
            hidden: 8,
            train: TrainConfig { epochs: 5, ..TrainConfig::default() },
            eval: EvalConfig { n_neg: 20, ..EvalConfig::default() },
            profile_negatives: 500,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn method_labels_round_trip() {
        for m in default_methods() {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!("sage+distmult".parse::<Method>().unwrap().to_string(), "SAGE+DistMult");
        assert!("sage+nope".parse::<Method>().is_err());
        let js = serde_json::to_string(&Method::Heuristic(HeuristicKind::Ppr)).unwrap();
        assert_eq!(js, "\"PPR\"");
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mean, m.std, m.runs), (2.0, 1.0, 3));
        assert_eq!(MeanStd::of(&[4.0]).unwrap().std, 0.0);
        assert!(MeanStd::of(&[]).is_none());
    }

    #[test]
    fn validation_lists_every_problem() {
        let cfg = SweepConfig { seeds: vec![], hidden: 0, ..tiny() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("seeds") && msg.contains("hidden"), "{msg}");
    }

    #[test]
    fn tiny_sweep_shapes_and_determinism() {
        let cfg = tiny();
        let a = run_sweep(&cfg).unwrap();
        assert_eq!(a.graphs.len(), 3);
        assert_eq!(a.cells.len(), 3 * 2 * 2);
        assert_eq!(a.table.len(), 2);
        assert!(a.table.iter().all(|r| r.cells.len() == 3 && r.cells.iter().all(|c| c.runs == 2)));
        assert!(a.graphs.windows(2).all(|w| w[0].k_graph < w[1].k_graph));
        assert_eq!(a.graphs[0].task.kind, TaskKind::Heterophilic);
        let b = run_sweep(&SweepConfig { threads: 3, ..cfg }).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());

        let csv = a.table2_csv();
        assert_eq!(csv.lines().count(), 3 + 2);
        assert!(csv.lines().nth(3).unwrap().starts_with("SAGE+MLP,"));
        assert_eq!(a.ucurve_csv().lines().count(), 1 + 2 * 3);

        let dir = tempfile::tempdir().unwrap();
        a.write_outputs(&dir.path().join("out")).unwrap();
        let back: SweepReport =
            serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
        assert_eq!(back.to_json().unwrap(), a.to_json().unwrap());
        assert!(dir.path().join("out/table2_style.csv").exists() && dir.path().join("out/ucurve.csv").exists());
    }

    #[test]
    fn config_json_round_trips_without_threads() {
        let cfg = SweepConfig { threads: 4, ..tiny() };
        let back: SweepConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, SweepConfig { threads: 1, ..cfg });
        let partial: SweepConfig = serde_json::from_str(r#"{"seeds":[7],"methods":["GCN+DOT","ra"]}"#).unwrap();
        assert_eq!(partial.seeds, vec![7]);
        assert_eq!(partial.methods[1], Method::Heuristic(HeuristicKind::Ra));
    }
}
