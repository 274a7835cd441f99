use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use super::encoder::glorot;
use super::params::{Grads, ParamId, ParamStore, Params};

#[derive(Debug, Clone)]
pub(crate) enum Decoder {
    Dot,
    DistMult { w: ParamId, b: ParamId },
    Mlp { w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId },
}

/// Per-node halves of the MLP first layer: `left = Z·W1[..e] + b1`,
/// `right = Z·W1[e..]`, so a concatenated pair costs one add per unit.
#[derive(Debug, Clone)]
pub(crate) struct Projection {
    left: Array2<f64>,
    right: Array2<f64>,
}

impl Projection {
    fn row(m: &Array2<f64>, i: usize) -> &[f64] {
        let h = m.ncols();
        &m.as_slice().expect("projection is contiguous")[i * h..(i + 1) * h]
    }

    /// `w2 · relu(left[a] + right[c])`.
    #[inline]
    fn half(&self, w2: &[f64], a: usize, c: usize) -> f64 {
        let l = Self::row(&self.left, a);
        let r = Self::row(&self.right, c);
        l.iter().zip(r).zip(w2).map(|((x, y), wk)| (x + y).max(0.0) * wk).sum()
    }
}

impl Decoder {
    pub fn distmult(store: &mut ParamStore, embed: usize) -> Self {
        let w = store.add("dec.distmult.w", 1, embed);
        store.view_mut(w).fill(1.0 / embed as f64);
        let b = store.add("dec.distmult.b", 1, 1);
        Decoder::DistMult { w, b }
    }

    pub fn mlp(store: &mut ParamStore, rng: &mut ChaCha8Rng, embed: usize, hidden: usize) -> Self {
        let w1 = store.add("dec.mlp.w1", 2 * embed, hidden);
        glorot(store, w1, rng);
        let b1 = store.add("dec.mlp.b1", 1, hidden);
        let w2 = store.add("dec.mlp.w2", hidden, 1);
        glorot(store, w2, rng);
        let b2 = store.add("dec.mlp.b2", 1, 1);
        Decoder::Mlp { w1, b1, w2, b2 }
    }

    pub fn project(&self, p: Params<'_>, z: ArrayView2<'_, f64>) -> Option<Projection> {
        match self {
            Decoder::Mlp { w1, b1, .. } => {
                let w1 = p.get(*w1);
                let e = z.ncols();
                let left = z.dot(&w1.slice(s![..e, ..])) + p.get(*b1).row(0);
                let right = z.dot(&w1.slice(s![e.., ..]));
                Some(Projection { left, right })
            }
            _ => None,
        }
    }

    /// Score of a single embedding pair, evaluated directly.
    pub fn decode(&self, p: Params<'_>, zi: ArrayView1<'_, f64>, zj: ArrayView1<'_, f64>) -> f64 {
        match self {
            Decoder::Dot => zi.iter().zip(zj).map(|(a, b)| a * b).sum(),
            Decoder::DistMult { w, b } => {
                let w = p.get(*w);
                let s: f64 = w.row(0).iter().zip(zi.iter().zip(zj)).map(|(wd, (a, b))| wd * (a * b)).sum();
                s + p.get(*b)[[0, 0]]
            }
            Decoder::Mlp { w1, b1, w2, b2 } => {
                let w1 = p.get(*w1);
                let e = zi.len();
                let (top, bottom) = (w1.slice(s![..e, ..]), w1.slice(s![e.., ..]));
                let b1 = p.get(*b1);
                let w2 = p.get(*w2);
                let f = |a: ArrayView1<'_, f64>, c: ArrayView1<'_, f64>| -> f64 {
                    let h = a.dot(&top) + c.dot(&bottom) + b1.row(0);
                    h.iter().zip(w2.column(0)).map(|(hk, wk)| hk.max(0.0) * wk).sum()
                };
                0.5 * (f(zi, zj) + f(zj, zi)) + p.get(*b2)[[0, 0]]
            }
        }
    }

    /// Score of `(i, j)` using rows of `z` and a precomputed projection.
    #[inline]
    pub fn score(&self, p: Params<'_>, z: ArrayView2<'_, f64>, proj: Option<&Projection>, i: usize, j: usize) -> f64 {
        match self {
            Decoder::Mlp { w2, b2, .. } => {
                let pr = proj.expect("MLP decoder needs a projection");
                let w2 = p.slice(*w2);
                0.5 * (pr.half(w2, i, j) + pr.half(w2, j, i)) + p.slice(*b2)[0]
            }
            Decoder::Dot | Decoder::DistMult { .. } => {
                let Some(zs) = z.as_slice() else {
                    return self.decode(p, z.row(i), z.row(j));
                };
                let e = z.ncols();
                let (zi, zj) = (&zs[i * e..(i + 1) * e], &zs[j * e..(j + 1) * e]);
                match self {
                    Decoder::DistMult { w, b } => {
                        let w = p.slice(*w);
                        let s: f64 = w.iter().zip(zi.iter().zip(zj)).map(|(wd, (a, b))| wd * (a * b)).sum();
                        s + p.slice(*b)[0]
                    }
                    _ => zi.iter().zip(zj).map(|(a, b)| a * b).sum(),
                }
            }
        }
    }

    /// Accumulates parameter gradients and returns `∂loss/∂Z` for
    /// per-pair upstream gradients `ds`.
    pub fn backward(
        &self,
        p: Params<'_>,
        grads: &mut Grads<'_>,
        z: ArrayView2<'_, f64>,
        proj: Option<&Projection>,
        pairs: &[(usize, usize)],
        ds: &[f64],
    ) -> Array2<f64> {
        let mut dz = Array2::<f64>::zeros(z.raw_dim());
        match self {
            Decoder::Dot => {
                for (&(i, j), &d) in pairs.iter().zip(ds) {
                    if d == 0.0 {
                        continue;
                    }
                    dz.row_mut(i).scaled_add(d, &z.row(j));
                    dz.row_mut(j).scaled_add(d, &z.row(i));
                }
            }
            Decoder::DistMult { w, b } => {
                let wv = p.get(*w).row(0).to_owned();
                let mut gw = ndarray::Array1::<f64>::zeros(wv.len());
                let mut gb = 0.0;
                for (&(i, j), &d) in pairs.iter().zip(ds) {
                    if d == 0.0 {
                        continue;
                    }
                    gb += d;
                    let (zi, zj) = (z.row(i), z.row(j));
                    for k in 0..wv.len() {
                        gw[k] += d * zi[k] * zj[k];
                        dz[[i, k]] += d * wv[k] * zj[k];
                        dz[[j, k]] += d * wv[k] * zi[k];
                    }
                }
                let mut gwv = grads.get_mut(*w);
                let mut row = gwv.row_mut(0);
                row += &gw;
                grads.get_mut(*b)[[0, 0]] += gb;
            }
            Decoder::Mlp { w1, b1, w2, b2 } => {
                let pr = proj.expect("MLP decoder needs a projection");
                let w2v = p.slice(*w2);
                let hd = w2v.len();
                let mut dl = Array2::<f64>::zeros(pr.left.raw_dim());
                let mut dr = Array2::<f64>::zeros(pr.right.raw_dim());
                let mut gw2 = vec![0.0; hd];
                let mut gb2 = 0.0;
                {
                    let dl_s = dl.as_slice_mut().expect("contiguous");
                    let dr_s = dr.as_slice_mut().expect("contiguous");
                    for (&(i, j), &d) in pairs.iter().zip(ds) {
                        if d == 0.0 {
                            continue;
                        }
                        gb2 += d;
                        let half = 0.5 * d;
                        for (a, c) in [(i, j), (j, i)] {
                            let l = Projection::row(&pr.left, a);
                            let r = Projection::row(&pr.right, c);
                            let dla = &mut dl_s[a * hd..(a + 1) * hd];
                            let drc = &mut dr_s[c * hd..(c + 1) * hd];
                            // Branch-free ReLU gate; the sign pattern is
                            // unpredictable so a branch costs more than it saves.
                            let lanes = l.iter().zip(r).zip(w2v).zip(gw2.iter_mut()).zip(dla.iter_mut().zip(drc.iter_mut()));
                            for ((((&x, &y), &wk), gw), (da, dc)) in lanes {
                                let h = x + y;
                                let g = half * wk * f64::from(u8::from(h > 0.0));
                                *gw += half * h.max(0.0);
                                *da += g;
                                *dc += g;
                            }
                        }
                    }
                }
                let e = z.ncols();
                {
                    let mut gw1 = grads.get_mut(*w1);
                    gw1.slice_mut(s![..e, ..]).scaled_add(1.0, &z.t().dot(&dl));
                    gw1.slice_mut(s![e.., ..]).scaled_add(1.0, &z.t().dot(&dr));
                }
                {
                    let mut gb1 = grads.get_mut(*b1);
                    let mut row = gb1.row_mut(0);
                    row += &dl.sum_axis(Axis(0));
                }
                {
                    let mut g2 = grads.get_mut(*w2);
                    for k in 0..hd {
                        g2[[k, 0]] += gw2[k];
                    }
                }
                grads.get_mut(*b2)[[0, 0]] += gb2;
                let w1v = p.get(*w1);
                dz = dl.dot(&w1v.slice(s![..e, ..]).t()) + dr.dot(&w1v.slice(s![e.., ..]).t());
            }
        }
        dz
    }
}
