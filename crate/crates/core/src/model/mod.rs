//! Graph encoders and pair decoders over a shared parameter store.

mod decoder;
mod encoder;
pub mod params;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::params::{ParamEntry, ParamId, ParamStore};
use self::decoder::{Decoder, Projection};
use self::encoder::{Encoder, EncoderTape};
use crate::error::{input_err, Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    NoGnn,
    Gcn,
    Sage,
    Sign,
    LinearGnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Dot,
    DistMult,
    Mlp,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::NoGnn => "NoGNN",
            EncoderKind::Gcn => "GCN",
            EncoderKind::Sage => "SAGE",
            EncoderKind::Sign => "SIGN",
            EncoderKind::LinearGnn => "LinearGNN",
        })
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Dot => "DOT",
            DecoderKind::DistMult => "DistMult",
            DecoderKind::Mlp => "MLP",
        })
    }
}

fn normalize(s: &str) -> String {
    s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase()
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize(s).as_str() {
            "nognn" | "none" => Ok(EncoderKind::NoGnn),
            "gcn" => Ok(EncoderKind::Gcn),
            "sage" | "graphsage" => Ok(EncoderKind::Sage),
            "sign" => Ok(EncoderKind::Sign),
            "lineargnn" | "linear" => Ok(EncoderKind::LinearGnn),
            _ => Err(input_err!("unknown encoder {s:?}")),
        }
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize(s).as_str() {
            "dot" => Ok(DecoderKind::Dot),
            "distmult" => Ok(DecoderKind::DistMult),
            "mlp" => Ok(DecoderKind::Mlp),
            _ => Err(input_err!("unknown decoder {s:?}")),
        }
    }
}

fn default_layers() -> usize {
    2
}
fn default_width() -> usize {
    256
}
fn default_powers() -> usize {
    2
}

/// Architecture description. `embed_dim` is ignored by the weight-free
/// encoders (NoGNN, LinearGNN), whose output width is the input width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderKind,
    pub decoder: DecoderKind,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_width")]
    pub hidden: usize,
    #[serde(default = "default_powers")]
    pub powers: usize,
    #[serde(default = "default_width")]
    pub embed_dim: usize,
    /// MLP decoder width; `None` means `embed_dim`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_hidden: Option<usize>,
}

impl ModelSpec {
    pub fn new(encoder: EncoderKind, decoder: DecoderKind) -> Self {
        ModelSpec {
            encoder,
            decoder,
            layers: default_layers(),
            hidden: default_width(),
            powers: default_powers(),
            embed_dim: default_width(),
            decoder_hidden: None,
        }
    }

    /// Sets both the hidden width and the embedding width.
    pub fn with_width(mut self, width: usize) -> Self {
        self.hidden = width;
        self.embed_dim = width;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_decoder_hidden(mut self, width: usize) -> Self {
        self.decoder_hidden = Some(width);
        self
    }

    /// Table label such as `SAGE+MLP`.
    pub fn label(&self) -> String {
        format!("{}+{}", self.encoder, self.decoder)
    }

    pub fn validate(&self) -> Result<()> {
        match self.encoder {
            EncoderKind::Gcn | EncoderKind::Sage if self.layers == 0 => {
                return Err(input_err!("{} needs at least one layer", self.encoder))
            }
            EncoderKind::Sign if self.powers == 0 => return Err(input_err!("SIGN needs powers >= 1")),
            _ => {}
        }
        if self.hidden == 0 || self.embed_dim == 0 || self.decoder_hidden == Some(0) {
            return Err(input_err!("hidden, embed_dim and decoder_hidden must be positive"));
        }
        Ok(())
    }

    /// Output width of the encoder for a given input width.
    pub fn resolved_embed_dim(&self, input_dim: usize) -> usize {
        match self.encoder {
            EncoderKind::NoGnn | EncoderKind::LinearGnn => input_dim,
            _ => self.embed_dim,
        }
    }
}

/// Encoder/decoder pair with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    input_dim: usize,
    embed_dim: usize,
    params: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
}

/// Activations of one forward pass, reusable for scoring and backward.
#[derive(Debug)]
pub struct Forward {
    z: Array2<f64>,
    tape: EncoderTape,
    proj: Option<Projection>,
}

impl Forward {
    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }
}

impl Model {
    pub fn new(spec: ModelSpec, input_dim: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if input_dim == 0 {
            return Err(input_err!("input dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let embed_dim = spec.resolved_embed_dim(input_dim);
        let encoder = match spec.encoder {
            EncoderKind::NoGnn => Encoder::Identity,
            EncoderKind::LinearGnn => Encoder::SelfLoopMean,
            EncoderKind::Gcn => Encoder::gcn(&mut params, &mut rng, input_dim, spec.hidden, embed_dim, spec.layers),
            EncoderKind::Sage => Encoder::sage(&mut params, &mut rng, input_dim, spec.hidden, embed_dim, spec.layers),
            EncoderKind::Sign => Encoder::sign(&mut params, &mut rng, input_dim, spec.hidden, embed_dim, spec.powers),
        };
        let decoder = match spec.decoder {
            DecoderKind::Dot => Decoder::Dot,
            DecoderKind::DistMult => Decoder::distmult(&mut params, embed_dim),
            DecoderKind::Mlp => {
                Decoder::mlp(&mut params, &mut rng, embed_dim, spec.decoder_hidden.unwrap_or(embed_dim))
            }
        };
        Ok(Model {
            spec,
            input_dim,
            embed_dim,
            params,
            encoder,
            decoder,
        })
    }

    /// Rebuilds a model and loads checkpointed values; layouts must match.
    pub fn with_params(spec: ModelSpec, input_dim: usize, store: ParamStore) -> Result<Self> {
        let mut m = Model::new(spec, input_dim, 0)?;
        if m.params.entries() != store.entries() {
            return Err(input_err!("checkpoint layout does not match {}", spec.label()));
        }
        m.params = store;
        Ok(m)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_inputs(&self, g: &Graph, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(input_err!("features have {} columns, model expects {}", x.ncols(), self.input_dim));
        }
        if x.nrows() != g.n_nodes() {
            return Err(input_err!("features have {} rows, graph has {} nodes", x.nrows(), g.n_nodes()));
        }
        Ok(())
    }

    pub fn encode(&self, g: &Graph, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_inputs(g, x)?;
        Ok(self.encoder.forward(self.params.params(), g, x, false)?.0)
    }

    pub fn decode(&self, zi: ArrayView1<'_, f64>, zj: ArrayView1<'_, f64>) -> Result<f64> {
        if zi.len() != self.embed_dim || zj.len() != self.embed_dim {
            return Err(input_err!(
                "embedding lengths {} and {} do not match embed_dim {}",
                zi.len(),
                zj.len(),
                self.embed_dim
            ));
        }
        Ok(self.decoder.decode(self.params.params(), zi, zj))
    }

    /// Wraps precomputed embeddings for repeated pair scoring.
    pub fn scorer(&self, z: Array2<f64>) -> Result<EmbeddingScorer<'_>> {
        if z.ncols() != self.embed_dim {
            return Err(input_err!("embeddings have {} columns, expected {}", z.ncols(), self.embed_dim));
        }
        let proj = self.decoder.project(self.params.params(), z.view());
        Ok(EmbeddingScorer { model: self, z, proj })
    }

    /// Encodes once and returns a scorer over the resulting embeddings.
    pub fn scorer_for(&self, g: &Graph, x: ArrayView2<'_, f64>) -> Result<EmbeddingScorer<'_>> {
        self.scorer(self.encode(g, x)?)
    }

    pub fn score_pairs(&self, g: &Graph, x: ArrayView2<'_, f64>, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        self.scorer_for(g, x)?.score_pairs(pairs)
    }

    /// Forward pass that keeps what backward needs.
    pub fn forward(&self, g: &Graph, x: ArrayView2<'_, f64>) -> Result<Forward> {
        self.check_inputs(g, x)?;
        let (z, tape) = self.encoder.forward(self.params.params(), g, x, true)?;
        let proj = self.decoder.project(self.params.params(), z.view());
        Ok(Forward { z, tape, proj })
    }

    /// Scores from a kept forward pass. Ids must be in range.
    pub fn forward_scores(&self, fwd: &Forward, pairs: &[(usize, usize)]) -> Vec<f64> {
        let p = self.params.params();
        pairs
            .iter()
            .map(|&(i, j)| self.decoder.score(p, fwd.z.view(), fwd.proj.as_ref(), i, j))
            .collect()
    }

    /// Accumulates `Σ ds[k] · ∂score(pairs[k])/∂θ` into the gradient buffer.
    pub fn backward(&mut self, g: &Graph, fwd: &Forward, pairs: &[(usize, usize)], ds: &[f64]) -> Result<()> {
        if pairs.len() != ds.len() {
            return Err(input_err!("{} pairs but {} upstream gradients", pairs.len(), ds.len()));
        }
        let (p, mut grads) = self.params.split_mut();
        let dz = self.decoder.backward(p, &mut grads, fwd.z.view(), fwd.proj.as_ref(), pairs, ds);
        self.encoder.backward(p, &mut grads, g, &fwd.tape, dz)
    }
}

/// Scores node pairs from fixed embeddings.
#[derive(Debug)]
pub struct EmbeddingScorer<'m> {
    model: &'m Model,
    z: Array2<f64>,
    proj: Option<Projection>,
}

impl EmbeddingScorer<'_> {
    pub fn n_nodes(&self) -> usize {
        self.z.nrows()
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    /// Unchecked score; panics on out-of-range ids.
    #[inline]
    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.model
            .decoder
            .score(self.model.params.params(), self.z.view(), self.proj.as_ref(), i, j)
    }

    pub fn score_pairs(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let n = self.n_nodes();
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n) {
            return Err(input_err!("pair ({i}, {j}) out of range for {n} nodes"));
        }
        Ok(pairs.iter().map(|&(i, j)| self.score(i, j)).collect())
    }
}
