use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hetlink::eval::EvalConfig;
use hetlink::features::FeatureMatrix;
use hetlink::graph::Graph;
use hetlink::model::{DecoderKind, EncoderKind, ModelSpec};
use hetlink::sweep::FeatureInput;
use hetlink::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub graph: PathBuf,
    pub features: PathBuf,
}

/// Config shared by `train`, `eval` and `heuristic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub data: DataPaths,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Seeds the split, the model init, training and evaluation negatives.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub feature_input: FeatureInput,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_model() -> ModelSpec {
    ModelSpec::new(EncoderKind::Sage, DecoderKind::Mlp).with_width(64)
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

impl RunConfig {
    /// Lists every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (what, p) in [("data.graph", &self.data.graph), ("data.features", &self.data.features)] {
            if !p.is_file() {
                bad.push(format!("{what}: {} does not exist", p.display()));
            }
        }
        if let Err(e) = self.model.validate() {
            bad.push(format!("model: {e}"));
        }
        if let Err(e) = self.train.validate() {
            bad.push(format!("train: {e}"));
        }
        if let Err(e) = self.eval.validate() {
            bad.push(format!("eval: {e}"));
        }
        if self.split.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || self.split.iter().sum::<f64>() <= 0.0 {
            bad.push(format!("split: ratios must be finite, non-negative and not all zero, got {:?}", self.split));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            bail!(hetlink::Error::Input(bad.join("; ")))
        }
    }

    pub fn load_data(&self) -> Result<(Graph, FeatureMatrix)> {
        let g = load_graph(&self.data.graph)?;
        let fm = FeatureMatrix::load(&self.data.features)
            .with_context(|| format!("reading features {}", self.data.features.display()))?;
        if fm.n() != g.n_nodes() {
            bail!(hetlink::Error::Input(format!(
                "graph has {} nodes but features have {} rows",
                g.n_nodes(),
                fm.n()
            )));
        }
        Ok((g, fm))
    }
}

pub fn load_graph(path: &Path) -> Result<Graph> {
    let f = File::open(path).with_context(|| format!("opening graph {}", path.display()))?;
    Graph::read_text(BufReader::new(f)).with_context(|| format!("reading graph {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
