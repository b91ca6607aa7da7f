//! Layer-wise relevance propagation with the alpha-beta rule.
//!
//! For a layer with inputs `a_i`, weights `w_ij` and relevance `R_j` on its
//! outputs, every contribution `z_ij = a_i * w_ij` is split into its positive
//! and negative part and
//!
//! ```text
//! R_i = sum_j ( alpha * z_ij+ / sum_i z_ij+  +  beta * z_ij- / sum_i z_ij- ) * R_j
//! ```
//!
//! With `alpha + beta = 1` each `R_j` is redistributed exactly. When one of
//! the two sums is zero for an output, that term is dropped and the other
//! gets coefficient 1. Biases take part in the sums as one more contribution
//! whose share is absorbed (recorded in [`RelevanceLedger`], not propagated).
//! Max pooling routes relevance to the forward winner; ReLU and flatten pass
//! it through unchanged.

use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::nn::{ConvGeometry, LayerSpec, Network, Padding, Trace};
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaBeta {
    alpha: f64,
    beta: f64,
}

impl AlphaBeta {
    const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        ensure!(alpha.is_finite() && beta.is_finite(), "alpha and beta must be finite");
        ensure!(
            (alpha + beta - 1.0).abs() <= Self::SUM_TOLERANCE,
            "alpha + beta must equal 1 (got alpha={alpha}, beta={beta})"
        );
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for AlphaBeta {
    /// alpha = 2, beta = -1.
    fn default() -> Self {
        Self { alpha: 2.0, beta: -1.0 }
    }
}

/// Relevance that left the layer-by-layer flow before reaching the input.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RelevanceLedger {
    /// Share assigned to bias terms.
    pub absorbed_bias: f64,
    /// Share assigned to zero-padding cells. Padding activations are zero,
    /// so under alpha-beta this stays at zero.
    pub padding_loss: f64,
    /// Relevance of outputs whose contributions were all exactly zero.
    pub unassigned: f64,
}

impl RelevanceLedger {
    pub fn total(&self) -> f64 {
        self.absorbed_bias + self.padding_loss + self.unassigned
    }

    fn add(&mut self, other: &RelevanceLedger) {
        self.absorbed_bias += other.absorbed_bias;
        self.padding_loss += other.padding_loss;
        self.unassigned += other.unassigned;
    }
}

#[derive(Debug, Clone)]
pub struct RelevanceMap<T = f32> {
    /// Relevance per input element, same shape as the explained input.
    pub values: Tensor<T>,
    pub target_class: usize,
    /// The explained logit.
    pub start_score: f64,
    pub ledger: RelevanceLedger,
}

impl<T: Scalar> RelevanceMap<T> {
    pub fn total(&self) -> f64 {
        self.values.sum_f64()
    }
}

/// Relevance of one layer's inputs together with what that layer absorbed.
#[derive(Debug, Clone)]
pub struct LayerRelevance<T> {
    pub relevance: Tensor<T>,
    pub ledger: RelevanceLedger,
}

/// Per-output coefficients `(c+, c-)` such that `R_i = sum_j (c+_j z_ij+ + c-_j z_ij-)`.
#[inline]
fn split_coefficients<T: Scalar>(pos: T, neg: T, r: T, ab: &AlphaBeta) -> (T, T) {
    let zero = T::zero();
    let (alpha, beta) = (T::from_f64(ab.alpha), T::from_f64(ab.beta));
    match (pos > zero, neg < zero) {
        (true, true) => (alpha * r / pos, beta * r / neg),
        (true, false) => (r / pos, zero),
        (false, true) => (zero, r / neg),
        (false, false) => (zero, zero),
    }
}

#[inline]
fn parts<T: Scalar>(z: T) -> (T, T) {
    if z > T::zero() {
        (z, T::zero())
    } else {
        (T::zero(), z)
    }
}

/// Alpha-beta redistribution through a dense layer without bias.
pub fn relevance_dense<T: Scalar>(a: &Tensor<T>, weights: &Tensor<T>, r_out: &Tensor<T>, ab: &AlphaBeta) -> Result<Tensor<T>> {
    Ok(relevance_dense_biased(a, weights, None, r_out, ab)?.relevance)
}

pub fn relevance_dense_biased<T: Scalar>(
    a: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    r_out: &Tensor<T>,
    ab: &AlphaBeta,
) -> Result<LayerRelevance<T>> {
    ensure!(weights.rank() == 2, "dense weights must be n×m, got {:?}", weights.shape());
    let (n, m) = (weights.shape()[0], weights.shape()[1]);
    ensure!(a.len() == n, "dense relevance: input length {} != weight rows {n}", a.len());
    ensure!(r_out.len() == m, "dense relevance: output relevance length {} != weight columns {m}", r_out.len());
    if let Some(b) = bias {
        ensure!(b.len() == m, "dense relevance: bias length {} != {m}", b.len());
    }
    let w = weights.data();
    let x = a.data();

    let mut pos = vec![T::zero(); m];
    let mut neg = vec![T::zero(); m];
    if let Some(b) = bias {
        for (j, &bj) in b.data().iter().enumerate() {
            let (p, q) = parts(bj);
            pos[j] += p;
            neg[j] += q;
        }
    }
    for (i, &ai) in x.iter().enumerate() {
        for (j, &wij) in w[i * m..(i + 1) * m].iter().enumerate() {
            let (p, q) = parts(ai * wij);
            pos[j] += p;
            neg[j] += q;
        }
    }

    let mut ledger = RelevanceLedger::default();
    let coef: Vec<(T, T)> = (0..m)
        .map(|j| {
            let r = r_out.data()[j];
            let c = split_coefficients(pos[j], neg[j], r, ab);
            if pos[j] <= T::zero() && neg[j] >= T::zero() {
                ledger.unassigned += r.as_f64();
            }
            if let Some(b) = bias {
                let (p, q) = parts(b.data()[j]);
                ledger.absorbed_bias += (c.0 * p + c.1 * q).as_f64();
            }
            c
        })
        .collect();

    let out = x
        .iter()
        .enumerate()
        .map(|(i, &ai)| {
            let mut ri = T::zero();
            for (&wij, &(cp, cn)) in w[i * m..(i + 1) * m].iter().zip(&coef) {
                let (p, q) = parts(ai * wij);
                ri += cp * p + cn * q;
            }
            ri
        })
        .collect();
    Ok(LayerRelevance { relevance: Tensor::new(a.shape().to_vec(), out)?, ledger })
}

/// Alpha-beta redistribution through a convolution without bias; the same
/// result as [`relevance_dense`] on the unrolled convolution matrix.
pub fn relevance_conv<T: Scalar>(
    a: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: Padding,
    r_out: &Tensor<T>,
    ab: &AlphaBeta,
) -> Result<Tensor<T>> {
    ensure!(a.rank() == 3, "conv relevance: input must be H×W×C, got {:?}", a.shape());
    ensure!(weights.rank() == 4, "conv relevance: weights must be kh×kw×C×F, got {:?}", weights.shape());
    let ws = weights.shape();
    let geo = ConvGeometry::new(a.shape(), ws[0], ws[1], ws[3], stride, padding)?;
    Ok(relevance_conv_biased(a, weights, None, &geo, r_out, ab)?.relevance)
}

pub fn relevance_conv_biased<T: Scalar>(
    a: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geo: &ConvGeometry,
    r_out: &Tensor<T>,
    ab: &AlphaBeta,
) -> Result<LayerRelevance<T>> {
    geo.check(a.shape(), weights.shape(), bias.map_or(geo.filters, |b| b.len()))?;
    ensure!(
        r_out.shape() == geo.output_shape(),
        "conv relevance: output relevance shape {:?} != {:?}",
        r_out.shape(),
        geo.output_shape()
    );
    let (c, f) = (geo.in_c, geo.filters);
    let x = a.data();
    let w = weights.data();
    let n_out = geo.out_h * geo.out_w;

    let mut pos = vec![T::zero(); n_out * f];
    let mut neg = vec![T::zero(); n_out * f];
    for oy in 0..geo.out_h {
        for ox in 0..geo.out_w {
            let o = (oy * geo.out_w + ox) * f;
            let (pos, neg) = (&mut pos[o..o + f], &mut neg[o..o + f]);
            if let Some(b) = bias {
                for (fi, &bf) in b.data().iter().enumerate() {
                    let (p, q) = parts(bf);
                    pos[fi] += p;
                    neg[fi] += q;
                }
            }
            for ky in 0..geo.kernel_h {
                let Some(iy) = geo.input_row(oy, ky) else { continue };
                for kx in 0..geo.kernel_w {
                    let Some(ix) = geo.input_col(ox, kx) else { continue };
                    let base = (iy * geo.in_w + ix) * c;
                    let tap = (ky * geo.kernel_w + kx) * c * f;
                    for ci in 0..c {
                        let ai = x[base + ci];
                        let row = &w[tap + ci * f..tap + (ci + 1) * f];
                        for fi in 0..f {
                            let (p, q) = parts(ai * row[fi]);
                            pos[fi] += p;
                            neg[fi] += q;
                        }
                    }
                }
            }
        }
    }

    let mut ledger = RelevanceLedger::default();
    let mut coef = Vec::with_capacity(n_out * f);
    for (idx, &r) in r_out.data().iter().enumerate() {
        let cpn = split_coefficients(pos[idx], neg[idx], r, ab);
        if pos[idx] <= T::zero() && neg[idx] >= T::zero() {
            ledger.unassigned += r.as_f64();
        }
        if let Some(b) = bias {
            let (p, q) = parts(b.data()[idx % f]);
            ledger.absorbed_bias += (cpn.0 * p + cpn.1 * q).as_f64();
        }
        coef.push(cpn);
    }

    let mut r_in = vec![T::zero(); a.len()];
    for oy in 0..geo.out_h {
        for ox in 0..geo.out_w {
            let o = (oy * geo.out_w + ox) * f;
            let coef = &coef[o..o + f];
            for ky in 0..geo.kernel_h {
                let Some(iy) = geo.input_row(oy, ky) else { continue };
                for kx in 0..geo.kernel_w {
                    let Some(ix) = geo.input_col(ox, kx) else { continue };
                    let base = (iy * geo.in_w + ix) * c;
                    let tap = (ky * geo.kernel_w + kx) * c * f;
                    for ci in 0..c {
                        let ai = x[base + ci];
                        let row = &w[tap + ci * f..tap + (ci + 1) * f];
                        let mut ri = T::zero();
                        for (&wv, &(cp, cn)) in row.iter().zip(coef) {
                            let (p, q) = parts(ai * wv);
                            ri += cp * p + cn * q;
                        }
                        r_in[base + ci] += ri;
                    }
                }
            }
        }
    }
    Ok(LayerRelevance { relevance: Tensor::new(a.shape().to_vec(), r_in)?, ledger })
}

/// Winner-take-all: each pooled relevance goes to the input element that won
/// the forward max.
pub fn relevance_maxpool<T: Scalar>(argmax: &[usize], input_shape: &[usize], r_out: &Tensor<T>) -> Result<Tensor<T>> {
    ensure!(
        argmax.len() == r_out.len(),
        "maxpool relevance: {} winner indices for {} outputs",
        argmax.len(),
        r_out.len()
    );
    let mut r_in = Tensor::zeros(input_shape);
    let len = r_in.len();
    for (&src, &r) in argmax.iter().zip(r_out.data()) {
        ensure!(src < len, "maxpool relevance: winner index {src} outside input of {len}");
        r_in.data_mut()[src] += r;
    }
    Ok(r_in)
}

/// ReLU passes relevance through unchanged.
pub fn relevance_relu<T: Scalar>(r_out: &Tensor<T>) -> Tensor<T> {
    r_out.clone()
}

/// Relevance seeded at the logits (`seed` has the logit shape) propagated
/// back to the input of the network, using a recorded forward trace.
pub fn propagate<T: Scalar>(
    net: &Network<T>,
    trace: &Trace<T>,
    seed: Tensor<T>,
    ab: &AlphaBeta,
) -> Result<(Tensor<T>, RelevanceLedger)> {
    let layers = net.layers();
    ensure!(trace.len() == layers.len(), "trace has {} entries for {} layers", trace.len(), layers.len());
    ensure!(
        seed.shape() == trace.logits().shape(),
        "relevance seed shape {:?} != logit shape {:?}",
        seed.shape(),
        trace.logits().shape()
    );
    let mut ledger = RelevanceLedger::default();
    let mut r = seed;
    for k in (0..layers.len()).rev() {
        let input = &trace.inputs[k];
        r = match layers[k].spec {
            LayerSpec::Softmax => r,
            LayerSpec::Dense { .. } => {
                let p = layers[k].params.as_ref().unwrap();
                let step = relevance_dense_biased(input, &p.weights, Some(&p.bias), &r, ab)?;
                ledger.add(&step.ledger);
                step.relevance
            }
            LayerSpec::Conv2d { .. } => {
                let p = layers[k].params.as_ref().unwrap();
                let geo = layers[k].spec.conv_geometry(input.shape())?.unwrap();
                let step = relevance_conv_biased(input, &p.weights, Some(&p.bias), &geo, &r, ab)?;
                ledger.add(&step.ledger);
                step.relevance
            }
            LayerSpec::Relu => relevance_relu(&r),
            LayerSpec::Flatten => r.reshape(input.shape())?,
            LayerSpec::MaxPool2d => {
                let argmax = trace.pool_argmax[k].as_deref().expect("pool layer records its winners");
                relevance_maxpool(argmax, input.shape(), &r)?
            }
        };
    }
    Ok((r, ledger))
}

/// Explains `target_class` for `input`: relevance starts as the class logit
/// (all other logits get zero) and is propagated down to the input.
pub fn explain<T: Scalar>(net: &Network<T>, input: &Tensor<T>, target_class: usize, ab: &AlphaBeta) -> Result<RelevanceMap<T>> {
    ensure!(
        target_class < net.num_classes(),
        "target class {target_class} out of range for {} classes",
        net.num_classes()
    );
    let (_, trace) = net.forward(input)?;
    let logits = trace.logits();
    let start = logits.data()[target_class];
    let mut seed = Tensor::zeros(logits.shape());
    seed.data_mut()[target_class] = start;
    let (values, ledger) = propagate(net, &trace, seed, ab)?;
    Ok(RelevanceMap { values, target_class, start_score: start.as_f64(), ledger })
}

/// [`explain`] over many inputs in parallel; output order follows `inputs`.
pub fn explain_batch<T: Scalar>(
    net: &Network<T>,
    inputs: &[Tensor<T>],
    target_class: usize,
    ab: &AlphaBeta,
) -> Result<Vec<RelevanceMap<T>>> {
    inputs.par_iter().map(|x| explain(net, x, target_class, ab)).collect()
}

/// Sums an `H×W×C` map over channels into `H×W`.
pub fn channel_collapse<T: Scalar>(values: &Tensor<T>) -> Result<Tensor<T>> {
    match values.rank() {
        2 => Ok(values.clone()),
        3 => {
            let (h, w, c) = (values.shape()[0], values.shape()[1], values.shape()[2]);
            let data = values.data().chunks_exact(c).map(|px| px.iter().copied().sum()).collect();
            Tensor::new(vec![h, w], data)
        }
        _ => Err(crate::Error::invalid(format!("cannot collapse channels of shape {:?}", values.shape()))),
    }
}
