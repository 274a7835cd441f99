//! Losses, exact gradients, optimizers, negative sampling and the
//! full-batch training loop.

mod loss;
mod optim;

use std::io::Write;
use std::time::Instant;

use log::debug;
use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use self::loss::{hinge_loss, logistic_loss, LossKind};
pub use self::optim::{Optimizer, OptimizerKind};
use crate::error::{input_err, Error, Result};
use crate::eval::{self, draw_corruption, Corruption, EvalConfig};
use crate::graph::{Edge, EdgeSplit, Graph};
use crate::model::Model;

/// Training loss above this aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub neg_per_pos: usize,
    pub l2_weight: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Corruption negatives per validation positive for model selection.
    pub valid_negatives: usize,
    /// Draw fresh negatives each epoch; when false the epoch-0 set is reused.
    pub resample_negatives: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Logistic,
            epochs: 200,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam(),
            neg_per_pos: 1,
            l2_weight: 0.0,
            seed: 0,
            eval_every: 10,
            valid_negatives: 100,
            resample_negatives: true,
        }
    }
}

impl TrainConfig {
    /// Collects every violated field into one error.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.epochs == 0 {
            bad.push("epochs must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            bad.push("learning_rate must be finite and >= 0");
        }
        if self.neg_per_pos == 0 {
            bad.push("neg_per_pos must be >= 1");
        }
        if self.eval_every == 0 {
            bad.push("eval_every must be >= 1");
        }
        if self.valid_negatives == 0 {
            bad.push("valid_negatives must be >= 1");
        }
        if !(self.l2_weight >= 0.0) {
            bad.push("l2_weight must be >= 0");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(input_err!("{}", bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub epoch: usize,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean batch loss per epoch, measured before that epoch's step.
    pub losses: Vec<f64>,
    pub validation: Vec<ValidationPoint>,
    pub best_epoch: Option<usize>,
    pub best_val_mrr: Option<f64>,
    /// Checksum of the returned parameters.
    pub final_checksum: String,
    /// Seconds since the start of training at the end of each epoch.
    pub wall_seconds: Vec<f64>,
}

impl TrainTrace {
    /// Equality ignoring wall-clock timings.
    pub fn same_run(&self, other: &TrainTrace) -> bool {
        self.losses == other.losses
            && self.validation == other.validation
            && self.best_epoch == other.best_epoch
            && self.best_val_mrr == other.best_val_mrr
            && self.final_checksum == other.final_checksum
    }

    /// `epoch,loss,val_mrr,wall_seconds`; val_mrr is empty on epochs
    /// without validation.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,loss,val_mrr,wall_seconds")?;
        let mut vals = self.validation.iter().peekable();
        for (e, loss) in self.losses.iter().enumerate() {
            let v = match vals.peek() {
                Some(p) if p.epoch == e => {
                    let m = p.mrr;
                    vals.next();
                    format!("{m}")
                }
                _ => String::new(),
            };
            let t = self.wall_seconds.get(e).copied().unwrap_or(f64::NAN);
            writeln!(w, "{e},{loss},{v},{t:.6}")?;
        }
        Ok(())
    }
}

fn sample_negatives_with(
    rng: &mut ChaCha8Rng,
    g: &Graph,
    positives: &[Edge],
    k_neg: usize,
) -> Result<Vec<Edge>> {
    let mut out = Vec::with_capacity(positives.len() * k_neg);
    for &p in positives {
        for _ in 0..k_neg {
            out.push(draw_corruption(rng, g, p, Corruption::Second)?);
        }
    }
    Ok(out)
}

/// `k_neg` corruptions `(u, v′)` per positive `(u, v)`, with `v′ ≠ u` and
/// `(u, v′)` not an edge of `g`.
pub fn sample_negatives(g: &Graph, positives: &[Edge], k_neg: usize, seed: u64) -> Result<Vec<Edge>> {
    let n = g.n_nodes();
    if let Some(&(u, v)) = positives.iter().find(|&&(u, v)| u >= n || v >= n) {
        return Err(input_err!("positive ({u}, {v}) out of range for {n} nodes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_negatives_with(&mut rng, g, positives, k_neg)
}

/// Mean loss over `pairs` plus `l2·‖θ‖²`; adds its gradient to the
/// model's gradient buffer and returns the loss.
pub fn backward(
    model: &mut Model,
    g: &Graph,
    x: ArrayView2<'_, f64>,
    pairs: &[Edge],
    labels: &[f64],
    loss: LossKind,
    l2_weight: f64,
) -> Result<f64> {
    if pairs.len() != labels.len() {
        return Err(input_err!("{} pairs but {} labels", pairs.len(), labels.len()));
    }
    if pairs.is_empty() {
        return Err(input_err!("empty batch"));
    }
    let n = g.n_nodes();
    if let Some(&(u, v)) = pairs.iter().find(|&&(u, v)| u >= n || v >= n) {
        return Err(input_err!("pair ({u}, {v}) out of range for {n} nodes"));
    }
    let fwd = model.forward(g, x)?;
    let scores = model.forward_scores(&fwd, pairs);
    let inv = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    let ds: Vec<f64> = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let (l, d) = loss.eval(s, y);
            total += l;
            d * inv
        })
        .collect();
    let mut value = total * inv;
    if l2_weight > 0.0 {
        let store = model.params_mut();
        value += l2_weight * store.values().iter().map(|v| v * v).sum::<f64>();
        let vals = store.values().to_vec();
        for (g, v) in store.grad_mut().iter_mut().zip(vals) {
            *g += 2.0 * l2_weight * v;
        }
    }
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {value} over {} pairs", pairs.len())));
    }
    model.backward(g, &fwd, pairs, &ds)?;
    Ok(value)
}

/// Loss without touching gradients.
pub fn batch_loss(
    model: &Model,
    g: &Graph,
    x: ArrayView2<'_, f64>,
    pairs: &[Edge],
    labels: &[f64],
    loss: LossKind,
    l2_weight: f64,
) -> Result<f64> {
    let scores = model.score_pairs(g, x, pairs)?;
    let data: f64 = scores.iter().zip(labels).map(|(&s, &y)| loss.eval(s, y).0).sum::<f64>();
    let reg = l2_weight * model.params().values().iter().map(|v| v * v).sum::<f64>();
    Ok(data / pairs.len().max(1) as f64 + reg)
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h`, using `max(|a|, |f|, floor)` as denominator.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    model: &mut Model,
    g: &Graph,
    x: ArrayView2<'_, f64>,
    pairs: &[Edge],
    labels: &[f64],
    loss: LossKind,
    l2_weight: f64,
    h: f64,
    floor: f64,
) -> Result<f64> {
    model.params_mut().zero_grad();
    backward(model, g, x, pairs, labels, loss, l2_weight)?;
    let analytic = model.params().grad().to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..analytic.len() {
        let orig = model.params().values()[k];
        model.params_mut().values_mut()[k] = orig + h;
        let up = batch_loss(model, g, x, pairs, labels, loss, l2_weight)?;
        model.params_mut().values_mut()[k] = orig - h;
        let down = batch_loss(model, g, x, pairs, labels, loss, l2_weight)?;
        model.params_mut().values_mut()[k] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(floor);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Full-batch training on fixed labelled pairs (no negative sampling).
/// Stops once the loss drops to `target_loss` or below. Returns per-epoch
/// losses measured before each step.
pub fn fit_pairs(
    model: &mut Model,
    g: &Graph,
    x: ArrayView2<'_, f64>,
    pairs: &[Edge],
    labels: &[f64],
    cfg: &TrainConfig,
    target_loss: f64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params().len());
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        model.params_mut().zero_grad();
        let l = backward(model, g, x, pairs, labels, cfg.loss, cfg.l2_weight)
            .map_err(|e| with_epoch(e, epoch))?;
        check_divergence(l, epoch)?;
        losses.push(l);
        if l <= target_loss {
            return Ok(losses);
        }
        opt.step(model.params_mut());
    }
    losses.push(batch_loss(model, g, x, pairs, labels, cfg.loss, cfg.l2_weight)?);
    Ok(losses)
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
        other => other,
    }
}

fn check_divergence(loss: f64, epoch: usize) -> Result<()> {
    if loss > DIVERGENCE_LIMIT {
        return Err(Error::Numeric(format!(
            "epoch {epoch}: loss {loss:.3e} exceeds {DIVERGENCE_LIMIT:.0e}; lower the learning rate"
        )));
    }
    Ok(())
}

/// Trains on `split.train` with message passing over `g_train`, drawing
/// fresh corruption negatives every epoch. Validation MRR (negatives
/// exclude every split's edges) is computed every `eval_every` epochs and
/// on the last epoch; the best-scoring parameters are restored at the end.
pub fn train(
    model: &mut Model,
    g_train: &Graph,
    x: ArrayView2<'_, f64>,
    split: &EdgeSplit,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(input_err!("no training edges"));
    }
    let n = g_train.n_nodes();
    let all_edges: Vec<Edge> = split
        .train
        .iter()
        .chain(&split.valid)
        .chain(&split.test)
        .copied()
        .collect();
    let known = Graph::new(n, &all_edges)?;
    let val_cfg = EvalConfig {
        n_neg: cfg.valid_negatives,
        seed: cfg.seed ^ 0x05ee_d0f7_a11d,
        ..EvalConfig::default()
    };

    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params().len());
    let start = Instant::now();
    let mut trace = TrainTrace {
        losses: Vec::with_capacity(cfg.epochs),
        validation: Vec::new(),
        best_epoch: None,
        best_val_mrr: None,
        final_checksum: String::new(),
        wall_seconds: Vec::with_capacity(cfg.epochs),
    };
    let mut best: Option<Vec<f64>> = None;
    let mut pairs: Vec<Edge> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();

    for epoch in 0..cfg.epochs {
        if epoch == 0 || cfg.resample_negatives {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            let negs = sample_negatives_with(&mut rng, g_train, &split.train, cfg.neg_per_pos)?;
            pairs.clear();
            pairs.extend_from_slice(&split.train);
            pairs.extend_from_slice(&negs);
            labels.clear();
            labels.resize(split.train.len(), 1.0);
            labels.resize(pairs.len(), 0.0);
        }
        model.params_mut().zero_grad();
        let l = backward(model, g_train, x, &pairs, &labels, cfg.loss, cfg.l2_weight)
            .map_err(|e| with_epoch(e, epoch))?;
        check_divergence(l, epoch)?;
        trace.losses.push(l);
        opt.step(model.params_mut());

        let last = epoch + 1 == cfg.epochs;
        if !split.valid.is_empty() && ((epoch + 1) % cfg.eval_every == 0 || last) {
            let scorer = model.scorer_for(g_train, x)?;
            let m = eval::mrr(&scorer, &known, &split.valid, &val_cfg)?;
            debug!("epoch {epoch}: loss {l:.5} val mrr {m:.4}");
            trace.validation.push(ValidationPoint { epoch, mrr: m });
            if trace.best_val_mrr.is_none_or(|b| m > b) {
                trace.best_val_mrr = Some(m);
                trace.best_epoch = Some(epoch);
                best = Some(model.params().values().to_vec());
            }
        }
        trace.wall_seconds.push(start.elapsed().as_secs_f64());
    }
    if let Some(vals) = best {
        model.params_mut().set_values(&vals)?;
    }
    trace.final_checksum = format!("{:016x}", model.params().checksum());
    Ok(trace)
}
