//! Shared helpers for the integration tests: random networks, oracles that
//! do not go through the library's kernels, and the synthetic quadrant task.
#![allow(dead_code)]

use relprop::imaging::{preprocess_to, RasterImage};
use relprop::nn::{LayerSpec, Network, Padding};
use relprop::rng::XorShiftRng;
use relprop::training::LabeledExample;
use relprop::{Scalar, Tensor};

pub fn random_tensor(shape: &[usize], rng: &mut XorShiftRng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// Random sequential network with 2-4 parameterised/pooling layers (conv,
/// pool, dense), ReLU after every conv, ending in flatten, dense, softmax.
pub fn random_network(rng: &mut XorShiftRng, with_bias: bool) -> Network<f64> {
    loop {
        let input = [4 + rng.below(7), 4 + rng.below(7), 1 + rng.below(3)];
        let blocks = 1 + rng.below(3);
        let mut specs = Vec::new();
        let mut shape = input.to_vec();
        let mut ok = true;
        for _ in 0..blocks {
            let spec = if rng.below(3) == 0 && shape[0] >= 2 && shape[1] >= 2 {
                LayerSpec::MaxPool2d
            } else {
                let kernel = 1 + rng.below(5);
                let padding = if rng.below(2) == 0 { Padding::Same } else { Padding::Valid };
                LayerSpec::Conv2d {
                    kernel_h: kernel,
                    kernel_w: kernel,
                    filters: 1 + rng.below(4),
                    stride: 1 + rng.below(2),
                    padding,
                }
            };
            match spec.output_shape(&shape) {
                Ok(next) => {
                    shape = next;
                    specs.push(spec);
                    if matches!(spec, LayerSpec::Conv2d { .. }) {
                        specs.push(LayerSpec::Relu);
                    }
                }
                Err(_) => ok = false,
            }
        }
        if !ok {
            continue;
        }
        specs.extend([LayerSpec::Flatten, LayerSpec::Dense { units: 2 + rng.below(3) }, LayerSpec::Softmax]);
        let mut net = Network::<f64>::new(input, &specs).unwrap();
        net.init_glorot(rng.next_u64());
        if with_bias {
            for layer in net.layers_mut() {
                if let Some(p) = layer.params.as_mut() {
                    for b in p.bias.data_mut() {
                        *b = rng.uniform(-0.3, 0.3);
                    }
                }
            }
        }
        return net;
    }
}

/// Explicit `(H·W·C) × (OH·OW·F)` matrix of a convolution, built from the
/// padding arithmetic directly rather than through `ConvGeometry`.
pub fn unroll_conv(
    input_shape: &[usize],
    weights: &Tensor<f64>,
    stride: usize,
    padding: Padding,
) -> (Tensor<f64>, [usize; 3]) {
    let (h, w, c) = (input_shape[0], input_shape[1], input_shape[2]);
    let (kh, kw, f) = (weights.shape()[0], weights.shape()[1], weights.shape()[3]);
    let (oh, ow, pt, pl) = match padding {
        Padding::Valid => ((h - kh) / stride + 1, (w - kw) / stride + 1, 0i64, 0i64),
        Padding::Same => {
            let oh = h.div_ceil(stride);
            let ow = w.div_ceil(stride);
            let th = ((oh - 1) * stride + kh).saturating_sub(h) as i64;
            let tw = ((ow - 1) * stride + kw).saturating_sub(w) as i64;
            (oh, ow, th / 2, tw / 2)
        }
    };
    let n_in = h * w * c;
    let n_out = oh * ow * f;
    let mut m = vec![0.0; n_in * n_out];
    for oy in 0..oh {
        for ox in 0..ow {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * stride + ky) as i64 - pt;
                    let ix = (ox * stride + kx) as i64 - pl;
                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                        continue;
                    }
                    for ci in 0..c {
                        for fi in 0..f {
                            let i = ((iy as usize) * w + ix as usize) * c + ci;
                            let o = (oy * ow + ox) * f + fi;
                            m[i * n_out + o] = weights.data()[((ky * kw + kx) * c + ci) * f + fi];
                        }
                    }
                }
            }
        }
    }
    (Tensor::new(vec![n_in, n_out], m).unwrap(), [oh, ow, f])
}

pub const QUADRANT_SIZE: usize = 28;

/// Synthetic two-class image: dark noisy background with one bright
/// quadrant, top-left for class 0 and bottom-right for class 1.
pub fn quadrant_image(label: usize, rng: &mut XorShiftRng) -> RasterImage {
    let n = QUADRANT_SIZE;
    let half = n / 2;
    let mut img = RasterImage::filled(n, n, [0, 0, 0]);
    for y in 0..n {
        for x in 0..n {
            let bright = match label {
                0 => y < half && x < half,
                _ => y >= half && x >= half,
            };
            let (lo, hi) = if bright { (170.0, 255.0) } else { (0.0, 80.0) };
            let px = [0, 1, 2].map(|_| rng.uniform(lo, hi) as u8);
            img.set_pixel(x, y, px);
        }
    }
    img
}

/// Half-open `(x_min, y_min, x_max, y_max)` of the class-defining quadrant.
pub fn class_quadrant(label: usize) -> [f64; 4] {
    let half = (QUADRANT_SIZE / 2) as f64;
    let full = QUADRANT_SIZE as f64;
    match label {
        0 => [0.0, 0.0, half, half],
        _ => [half, half, full, full],
    }
}

pub fn quadrant_dataset<T: Scalar>(count: usize, seed: u64) -> Vec<LabeledExample<T>> {
    let mut rng = XorShiftRng::new(seed);
    (0..count)
        .map(|i| {
            let label = i % 2;
            LabeledExample { input: preprocess_to(&quadrant_image(label, &mut rng), QUADRANT_SIZE), label }
        })
        .collect()
}

pub fn rel_err(actual: f64, expected: f64) -> f64 {
    (actual - expected).abs() / expected.abs()
}

pub fn report(name: &str, pass: bool, detail: impl std::fmt::Display) {
    println!("[acceptance] {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

/// Random network and input whose logits are not all zero (a fully dead
/// ReLU layer makes every logit exactly 0, where relative conservation error
/// is undefined).
pub fn random_case(rng: &mut XorShiftRng, with_bias: bool) -> (Network<f64>, Tensor<f64>) {
    loop {
        let net = random_network(rng, with_bias);
        let input = random_tensor(&net.input_shape(), rng, -1.0, 1.0);
        let (_, trace) = net.forward(&input).unwrap();
        if trace.logits().data().iter().any(|&v| v.abs() > 1e-9) {
            return (net, input);
        }
    }
}
