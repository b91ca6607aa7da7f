//! Softmax cross-entropy, exact reverse-mode gradients and plain SGD.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::nn::{ConvGeometry, LayerSpec, Network, Params, Trace};
use crate::rng::XorShiftRng;
use crate::{Scalar, Tensor};

/// Probability floor inside the log of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 25, learning_rate: 0.001, iterations: 50_000, rng_seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch size must be at least 1, got {}", self.batch_size);
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning rate must be positive, got {}",
            self.learning_rate
        );
        ensure!(self.iterations >= 1, "iteration count must be at least 1, got {}", self.iterations);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LabeledExample<T = f32> {
    pub input: Tensor<T>,
    pub label: usize,
}

/// Per-layer gradients, `None` for layers without parameters.
pub type Gradients<T> = Vec<Option<Params<T>>>;

pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, label: usize) -> Result<f64> {
    ensure!(label < probs.len(), "label {label} out of range for {} classes", probs.len());
    Ok(-probs.data()[label].as_f64().max(PROB_FLOOR).ln())
}

/// Gradient of the cross-entropy of one example with respect to every
/// parameter, from the trace of its forward pass.
pub fn backward<T: Scalar>(net: &Network<T>, trace: &Trace<T>, label: usize) -> Result<Gradients<T>> {
    let layers = net.layers();
    ensure!(trace.len() == layers.len(), "trace has {} entries for {} layers", trace.len(), layers.len());
    ensure!(label < net.num_classes(), "label {label} out of range for {} classes", net.num_classes());

    // Softmax followed by cross-entropy: d/dlogits = probs - onehot.
    let mut grad = trace.output.clone();
    grad.data_mut()[label] -= T::one();

    let mut grads: Gradients<T> = vec![None; layers.len()];
    for k in (0..layers.len() - 1).rev() {
        let input = &trace.inputs[k];
        let need_input_grad = k > 0;
        grad = match layers[k].spec {
            LayerSpec::Softmax => unreachable!("softmax is last"),
            LayerSpec::Dense { .. } => {
                let p = layers[k].params.as_ref().unwrap();
                let (g, dp) = dense_backward(input, &p.weights, &grad);
                grads[k] = Some(dp);
                g
            }
            LayerSpec::Conv2d { .. } => {
                let geo = layers[k].spec.conv_geometry(input.shape())?.unwrap();
                let p = layers[k].params.as_ref().unwrap();
                let (g, dp) = conv_backward(&geo, input, &p.weights, &grad, need_input_grad);
                grads[k] = Some(dp);
                g
            }
            LayerSpec::Relu => {
                let mut g = grad;
                for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
                    if x <= T::zero() {
                        *gv = T::zero();
                    }
                }
                g
            }
            LayerSpec::Flatten => grad.reshape(input.shape())?,
            LayerSpec::MaxPool2d => {
                let argmax = trace.pool_argmax[k].as_ref().ok_or_else(|| Error::invalid("pool layer without argmax"))?;
                let mut g = Tensor::zeros(input.shape());
                for (&src, &gv) in argmax.iter().zip(grad.data()) {
                    g.data_mut()[src] += gv;
                }
                g
            }
        };
    }
    Ok(grads)
}

fn dense_backward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, grad: &Tensor<T>) -> (Tensor<T>, Params<T>) {
    let m = grad.len();
    let g = grad.data();
    let w = weights.data();
    let mut dw = Vec::with_capacity(weights.len());
    let mut gin = Vec::with_capacity(input.len());
    for (i, &a) in input.data().iter().enumerate() {
        dw.extend(g.iter().map(|&gj| a * gj));
        gin.push(w[i * m..(i + 1) * m].iter().zip(g).map(|(&wv, &gj)| wv * gj).sum());
    }
    let params = Params {
        weights: Tensor::new(weights.shape().to_vec(), dw).expect("weight shape"),
        bias: grad.clone(),
    };
    (Tensor::new(input.shape().to_vec(), gin).expect("input shape"), params)
}

fn conv_backward<T: Scalar>(
    geo: &ConvGeometry,
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad: &Tensor<T>,
    need_input_grad: bool,
) -> (Tensor<T>, Params<T>) {
    let (c, f) = (geo.in_c, geo.filters);
    let x = input.data();
    let w = weights.data();
    let g = grad.data();
    let mut dw = vec![T::zero(); weights.len()];
    let mut db = vec![T::zero(); f];
    let mut gin = vec![T::zero(); if need_input_grad { input.len() } else { 0 }];
    for oy in 0..geo.out_h {
        for ox in 0..geo.out_w {
            let go = &g[(oy * geo.out_w + ox) * f..][..f];
            for (d, &gv) in db.iter_mut().zip(go) {
                *d += gv;
            }
            for ky in 0..geo.kernel_h {
                let Some(iy) = geo.input_row(oy, ky) else { continue };
                for kx in 0..geo.kernel_w {
                    let Some(ix) = geo.input_col(ox, kx) else { continue };
                    let base = (iy * geo.in_w + ix) * c;
                    let tap = (ky * geo.kernel_w + kx) * c * f;
                    for ci in 0..c {
                        let a = x[base + ci];
                        let row = tap + ci * f;
                        for (d, &gv) in dw[row..row + f].iter_mut().zip(go) {
                            *d += a * gv;
                        }
                        if need_input_grad {
                            gin[base + ci] += w[row..row + f].iter().zip(go).map(|(&wv, &gv)| wv * gv).sum();
                        }
                    }
                }
            }
        }
    }
    let params = Params {
        weights: Tensor::new(weights.shape().to_vec(), dw).expect("weight shape"),
        bias: Tensor::vector(db).expect("bias shape"),
    };
    let gin = if need_input_grad {
        Tensor::new(input.shape().to_vec(), gin).expect("input shape")
    } else {
        Tensor::zeros(input.shape())
    };
    (gin, params)
}

fn add_into<T: Scalar>(acc: &mut Gradients<T>, other: &Gradients<T>) {
    for (a, o) in acc.iter_mut().zip(other) {
        match (a, o) {
            (Some(a), Some(o)) => {
                for (x, y) in a.weights.data_mut().iter_mut().zip(o.weights.data()) {
                    *x += *y;
                }
                for (x, y) in a.bias.data_mut().iter_mut().zip(o.bias.data()) {
                    *x += *y;
                }
            }
            (a @ None, Some(o)) => *a = Some(o.clone()),
            _ => {}
        }
    }
}

/// Summed loss gradient over a batch. Per-example gradients are computed in
/// parallel and reduced in batch order, so the result does not depend on
/// thread scheduling.
pub fn batch_gradient<T: Scalar>(net: &Network<T>, batch: &[&LabeledExample<T>]) -> Result<(Gradients<T>, f64)> {
    ensure!(!batch.is_empty(), "empty batch");
    let per_example: Vec<(Gradients<T>, f64)> = batch
        .par_iter()
        .map(|ex| {
            let (probs, trace) = net.forward(&ex.input)?;
            let loss = cross_entropy(&probs, ex.label)?;
            Ok((backward(net, &trace, ex.label)?, loss))
        })
        .collect::<Result<_>>()?;
    let mut total: Gradients<T> = vec![None; net.layers().len()];
    let mut loss = 0.0;
    for (g, l) in &per_example {
        add_into(&mut total, g);
        loss += l;
    }
    Ok((total, loss))
}

/// `w <- w - lr * grad` for every parameter.
pub fn apply_update<T: Scalar>(net: &mut Network<T>, grads: &Gradients<T>, learning_rate: f64) {
    let lr = T::from_f64(learning_rate);
    for (layer, g) in net.layers_mut().zip(grads) {
        if let (Some(p), Some(g)) = (layer.params.as_mut(), g) {
            for (w, &d) in p.weights.data_mut().iter_mut().zip(g.weights.data()) {
                *w -= lr * d;
            }
            for (b, &d) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                *b -= lr * d;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained<T = f32> {
    pub network: Network<T>,
    /// Mean batch cross-entropy before each update, one entry per iteration.
    pub losses: Vec<f64>,
}

pub fn sgd_train<T: Scalar>(net: Network<T>, data: &[LabeledExample<T>], cfg: &TrainConfig) -> Result<Trained<T>> {
    sgd_train_with(net, data, cfg, |_, _, _| Ok(()))
}

/// SGD over seeded per-epoch shuffles of `data`. The batch gradient is the
/// sum of per-example gradients. `on_iteration(iteration, network, loss)`
/// runs after every update (1-based iteration).
pub fn sgd_train_with<T: Scalar>(
    mut net: Network<T>,
    data: &[LabeledExample<T>],
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(usize, &Network<T>, f64) -> Result<()>,
) -> Result<Trained<T>> {
    ensure!(!data.is_empty(), "training data is empty");
    cfg.validate()?;
    for (i, ex) in data.iter().enumerate() {
        ensure!(ex.label < net.num_classes(), "example {i}: label {} out of range", ex.label);
    }

    let mut epoch = 0u64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    XorShiftRng::derive(cfg.rng_seed, epoch).shuffle(&mut order);
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(cfg.iterations);

    for iteration in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                epoch += 1;
                XorShiftRng::derive(cfg.rng_seed, epoch).shuffle(&mut order);
                cursor = 0;
            }
            batch.push(&data[order[cursor]]);
            cursor += 1;
        }
        let (grads, loss) = batch_gradient(&net, &batch)?;
        apply_update(&mut net, &grads, cfg.learning_rate);
        let mean_loss = loss / batch.len() as f64;
        losses.push(mean_loss);
        on_iteration(iteration, &net, mean_loss)?;
    }
    Ok(Trained { network: net, losses })
}

pub fn accuracy<T: Scalar>(net: &Network<T>, data: &[LabeledExample<T>]) -> Result<f64> {
    ensure!(!data.is_empty(), "no examples to evaluate");
    let correct: Vec<bool> = data
        .par_iter()
        .map(|ex| Ok(net.predict(&ex.input)? == ex.label))
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / data.len() as f64)
}

/// `iteration,loss` CSV, iterations counted from 1.
pub fn write_loss_history<W: Write>(out: W, losses: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "loss"])?;
    for (i, loss) in losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
