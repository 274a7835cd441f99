use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Grads, ParamId, ParamStore, Params};
use crate::graph::Graph;
use crate::Result;

/// Glorot-uniform weight matrix plus a zero bias row.
#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

pub(crate) fn glorot(store: &mut ParamStore, id: ParamId, rng: &mut ChaCha8Rng) {
    let e = store.entry(id).clone();
    let s = (6.0 / (e.rows + e.cols) as f64).sqrt();
    for v in store.view_mut(id).iter_mut() {
        *v = rng.random_range(-s..=s);
    }
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add(format!("{name}.w"), fan_in, fan_out);
        glorot(store, w, rng);
        let b = store.add(format!("{name}.b"), 1, fan_out);
        Dense { w, b }
    }

    fn forward(&self, p: Params<'_>, h: ArrayView2<'_, f64>) -> Array2<f64> {
        h.dot(&p.get(self.w)) + p.get(self.b).row(0)
    }

    /// Accumulates weight/bias gradients for `out = h·W + b`.
    fn backward(&self, grads: &mut Grads<'_>, h: ArrayView2<'_, f64>, dout: ArrayView2<'_, f64>) {
        grads.get_mut(self.w).scaled_add(1.0, &h.t().dot(&dout));
        let mut gb = grads.get_mut(self.b);
        let mut row = gb.row_mut(0);
        row += &dout.sum_axis(Axis(0));
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SageLayer {
    w_self: ParamId,
    w_nb: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) enum Encoder {
    Identity,
    SelfLoopMean,
    Gcn(Vec<Dense>),
    Sage(Vec<SageLayer>),
    Sign { maps: Vec<Dense>, out: Dense, hidden: usize },
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug)]
pub(crate) enum EncoderTape {
    Empty,
    Gcn(Vec<(Array2<f64>, Array2<f64>)>),
    Sage(Vec<(Array2<f64>, Array2<f64>, Array2<f64>)>),
    Sign { powers: Vec<Array2<f64>>, hidden: Array2<f64> },
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

fn mask_inplace(d: &mut Array2<f64>, pre: &Array2<f64>) {
    d.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

fn layer_dims(input: usize, hidden: usize, output: usize, layers: usize) -> Vec<(usize, usize)> {
    (0..layers)
        .map(|l| {
            let i = if l == 0 { input } else { hidden };
            let o = if l + 1 == layers { output } else { hidden };
            (i, o)
        })
        .collect()
}

impl Encoder {
    pub fn gcn(store: &mut ParamStore, rng: &mut ChaCha8Rng, input: usize, hidden: usize, output: usize, layers: usize) -> Self {
        let dense = layer_dims(input, hidden, output, layers)
            .into_iter()
            .enumerate()
            .map(|(l, (i, o))| Dense::new(store, &format!("enc.gcn{l}"), i, o, rng))
            .collect();
        Encoder::Gcn(dense)
    }

    pub fn sage(store: &mut ParamStore, rng: &mut ChaCha8Rng, input: usize, hidden: usize, output: usize, layers: usize) -> Self {
        let ls = layer_dims(input, hidden, output, layers)
            .into_iter()
            .enumerate()
            .map(|(l, (i, o))| {
                let w_self = store.add(format!("enc.sage{l}.w_self"), i, o);
                glorot(store, w_self, rng);
                let w_nb = store.add(format!("enc.sage{l}.w_nb"), i, o);
                glorot(store, w_nb, rng);
                let b = store.add(format!("enc.sage{l}.b"), 1, o);
                SageLayer { w_self, w_nb, b }
            })
            .collect();
        Encoder::Sage(ls)
    }

    pub fn sign(store: &mut ParamStore, rng: &mut ChaCha8Rng, input: usize, hidden: usize, output: usize, powers: usize) -> Self {
        let maps = (0..=powers)
            .map(|p| Dense::new(store, &format!("enc.sign{p}"), input, hidden, rng))
            .collect();
        let out = Dense::new(store, "enc.sign_out", (powers + 1) * hidden, output, rng);
        Encoder::Sign { maps, out, hidden }
    }

    pub fn forward(&self, p: Params<'_>, g: &Graph, x: ArrayView2<'_, f64>, keep: bool) -> Result<(Array2<f64>, EncoderTape)> {
        match self {
            Encoder::Identity => Ok((x.to_owned(), EncoderTape::Empty)),
            Encoder::SelfLoopMean => Ok((g.selfloop_mean_apply(x)?, EncoderTape::Empty)),
            Encoder::Gcn(layers) => {
                let mut h = x.to_owned();
                let mut tape = Vec::new();
                for (l, d) in layers.iter().enumerate() {
                    let agg = g.normalized_adjacency_apply(h.view())?;
                    let pre = d.forward(p, agg.view());
                    h = pre.clone();
                    if l + 1 < layers.len() {
                        relu_inplace(&mut h);
                    }
                    if keep {
                        tape.push((agg, pre));
                    }
                }
                Ok((h, EncoderTape::Gcn(tape)))
            }
            Encoder::Sage(layers) => {
                let mut h = x.to_owned();
                let mut tape = Vec::new();
                for (l, sl) in layers.iter().enumerate() {
                    let agg = g.mean_neighbor_apply(h.view())?;
                    let pre = h.dot(&p.get(sl.w_self)) + agg.dot(&p.get(sl.w_nb)) + p.get(sl.b).row(0);
                    let mut next = pre.clone();
                    if l + 1 < layers.len() {
                        relu_inplace(&mut next);
                    }
                    if keep {
                        tape.push((h, agg, pre));
                    }
                    h = next;
                }
                Ok((h, EncoderTape::Sage(tape)))
            }
            Encoder::Sign { maps, out, hidden } => {
                let mut powers = vec![x.to_owned()];
                for _ in 1..maps.len() {
                    let next = g.normalized_adjacency_apply(powers.last().expect("nonempty").view())?;
                    powers.push(next);
                }
                let mut hid = Array2::zeros((x.nrows(), maps.len() * hidden));
                for (k, (m, zp)) in maps.iter().zip(&powers).enumerate() {
                    hid.slice_mut(s![.., k * hidden..(k + 1) * hidden]).assign(&m.forward(p, zp.view()));
                }
                relu_inplace(&mut hid);
                let z = out.forward(p, hid.view());
                let tape = if keep {
                    EncoderTape::Sign { powers, hidden: hid }
                } else {
                    EncoderTape::Empty
                };
                Ok((z, tape))
            }
        }
    }

    /// Accumulates parameter gradients given `dz = ∂loss/∂Z`.
    pub fn backward(&self, p: Params<'_>, grads: &mut Grads<'_>, g: &Graph, tape: &EncoderTape, dz: Array2<f64>) -> Result<()> {
        match (self, tape) {
            (Encoder::Identity | Encoder::SelfLoopMean, _) => Ok(()),
            (Encoder::Gcn(layers), EncoderTape::Gcn(t)) => {
                let mut d = dz;
                for l in (0..layers.len()).rev() {
                    let (agg, pre) = &t[l];
                    if l + 1 < layers.len() {
                        mask_inplace(&mut d, pre);
                    }
                    layers[l].backward(grads, agg.view(), d.view());
                    if l > 0 {
                        let back = d.dot(&p.get(layers[l].w).t());
                        d = g.normalized_adjacency_apply(back.view())?;
                    }
                }
                Ok(())
            }
            (Encoder::Sage(layers), EncoderTape::Sage(t)) => {
                let mut d = dz;
                for l in (0..layers.len()).rev() {
                    let (h, agg, pre) = &t[l];
                    let sl = &layers[l];
                    if l + 1 < layers.len() {
                        mask_inplace(&mut d, pre);
                    }
                    grads.get_mut(sl.w_self).scaled_add(1.0, &h.t().dot(&d));
                    grads.get_mut(sl.w_nb).scaled_add(1.0, &agg.t().dot(&d));
                    {
                        let mut gb = grads.get_mut(sl.b);
                        let mut row = gb.row_mut(0);
                        row += &d.sum_axis(Axis(0));
                    }
                    if l > 0 {
                        let via_nb = d.dot(&p.get(sl.w_nb).t());
                        let mut next = d.dot(&p.get(sl.w_self).t());
                        next += &g.mean_neighbor_apply_transpose(via_nb.view())?;
                        d = next;
                    }
                }
                Ok(())
            }
            (Encoder::Sign { maps, out, hidden }, EncoderTape::Sign { powers, hidden: hid }) => {
                out.backward(grads, hid.view(), dz.view());
                let mut dh = dz.dot(&p.get(out.w).t());
                mask_inplace(&mut dh, hid);
                for (k, (m, zp)) in maps.iter().zip(powers).enumerate() {
                    let block = dh.slice(s![.., k * hidden..(k + 1) * hidden]);
                    m.backward(grads, zp.view(), block);
                }
                Ok(())
            }
            _ => unreachable!("tape does not match encoder"),
        }
    }
}
