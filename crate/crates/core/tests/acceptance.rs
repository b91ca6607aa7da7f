//! Exit criteria for the library. Every test prints one
//! `[acceptance] PASS|FAIL <criterion>: <detail>` line; run with
//! `cargo test -p relprop --test acceptance -- --nocapture` to see them.

mod common;

use std::time::Instant;

use common::*;
use relprop::analytics::{distribution_summary, mean_relevance_matrix, DEFAULT_MIN_COUNT};
use relprop::imaging::render_heatmap;
use relprop::lrp::{channel_collapse, explain, relevance_conv, relevance_dense, AlphaBeta};
use relprop::nn::{build_compact_network, LayerSpec, Network, Padding};
use relprop::region::{region_relevance, scale_box, BoundingBox, RelevanceRecord};
use relprop::rng::XorShiftRng;
use relprop::training::{accuracy, backward, cross_entropy, sgd_train, TrainConfig};
use relprop::{Scalar, Tensor};

/// Explains the class with the largest |logit| and returns the relative
/// conservation error.
fn conservation_error<T: Scalar>(net: &Network<T>, input: &Tensor<T>) -> f64 {
    let (_, trace) = net.forward(input).unwrap();
    let logits = trace.logits();
    let target = (0..logits.len())
        .max_by(|&a, &b| logits.data()[a].abs().partial_cmp(&logits.data()[b].abs()).unwrap())
        .unwrap();
    let map = explain(net, input, target, &AlphaBeta::default()).unwrap();
    assert!(map.ledger.unassigned == 0.0 && map.ledger.absorbed_bias == 0.0);
    rel_err(map.total(), map.start_score)
}

#[test]
fn conservation_over_random_bias_free_networks() {
    let start = Instant::now();
    let mut rng = XorShiftRng::new(2024);
    let (mut worst32, mut worst64) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (net64, input) = random_case(&mut rng, false);
        worst64 = worst64.max(conservation_error(&net64, &input));
        worst32 = worst32.max(conservation_error(&net64.cast::<f32>(), &input.cast::<f32>()));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst32 <= 1e-3 && worst64 <= 1e-8 && secs < 60.0;
    report(
        "conservation",
        pass,
        format!("100 nets, worst rel err f32={worst32:.2e} (<=1e-3), f64={worst64:.2e} (<=1e-8), {secs:.1}s"),
    );
    assert!(pass);
}

#[test]
fn alpha_beta_micro_oracle() {
    let ab = AlphaBeta::new(2.0, -1.0).unwrap();
    let t = |shape: &[usize], v: &[f64]| Tensor::<f64>::from_f64_slice(shape, v).unwrap();
    let cases = [
        (t(&[2], &[1.0, 1.0]), t(&[2, 1], &[1.0, -1.0]), t(&[1], &[1.0]), [2.0, -1.0].to_vec()),
        (t(&[2], &[2.0, 1.0]), t(&[2, 1], &[1.0, 1.0]), t(&[1], &[3.0]), [2.0, 1.0].to_vec()),
        (t(&[1], &[1.0]), t(&[1, 1], &[2.0]), t(&[1], &[5.0]), [5.0].to_vec()),
    ];
    let mut worst = 0.0f64;
    for (a, w, r, expect) in &cases {
        let got = relevance_dense(a, w, r, &ab).unwrap();
        for (g, e) in got.data().iter().zip(expect) {
            worst = worst.max((g - e).abs());
        }
    }
    let pass = worst <= 1e-9;
    report("alpha-beta micro-oracle", pass, format!("3 hand cases, max abs err {worst:.1e} (<=1e-9)"));
    assert!(pass);
}

#[test]
fn conv_relevance_equals_unrolled_dense() {
    let mut rng = XorShiftRng::new(77);
    let mut worst = 0.0f64;
    let mut geometries = 0;
    while geometries < 60 {
        let kernel = 1 + rng.below(5);
        let stride = 1 + rng.below(2);
        let padding = if rng.below(2) == 0 { Padding::Same } else { Padding::Valid };
        let shape = [kernel + rng.below(6), kernel + rng.below(6), 1 + rng.below(3)];
        let filters = 1 + rng.below(4);
        let a = random_tensor(&shape, &mut rng, 0.0, 1.0);
        let w = random_tensor(&[kernel, kernel, shape[2], filters], &mut rng, -1.0, 1.0);
        let (unrolled, out_shape) = unroll_conv(&shape, &w, stride, padding);
        let r_out = random_tensor(&out_shape, &mut rng, -1.0, 1.0);
        let ab = AlphaBeta::default();
        let conv = relevance_conv(&a, &w, stride, padding, &r_out, &ab).unwrap();
        let flat_a = a.clone().reshape(&[a.len()]).unwrap();
        let flat_r = r_out.clone().reshape(&[r_out.len()]).unwrap();
        let dense = relevance_dense(&flat_a, &unrolled, &flat_r, &ab).unwrap();
        let scale = dense.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (c, d) in conv.data().iter().zip(dense.data()) {
            worst = worst.max((c - d).abs() / scale);
        }
        geometries += 1;
    }
    let pass = worst <= 1e-5;
    report("conv/dense LRP equivalence", pass, format!("{geometries} geometries, max rel err {worst:.2e} (<=1e-5)"));
    assert!(pass);
}

#[test]
fn gradient_check_three_layer_net() {
    let start = Instant::now();
    let mut rng = XorShiftRng::new(31);
    let mut net = Network::<f64>::new(
        [6, 6, 2],
        &[
            LayerSpec::conv(3, 3),
            LayerSpec::Relu,
            LayerSpec::MaxPool2d,
            LayerSpec::conv(3, 4),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 3 },
            LayerSpec::Softmax,
        ],
    )
    .unwrap();
    net.init_glorot(5);
    for layer in net.layers_mut() {
        if let Some(p) = layer.params.as_mut() {
            p.bias.data_mut().iter_mut().for_each(|b| *b = rng.uniform(-0.2, 0.2));
        }
    }
    let input = random_tensor(&[6, 6, 2], &mut rng, -1.0, 1.0);
    let label = 1;
    let (_, trace) = net.forward(&input).unwrap();
    let grads = backward(&net, &trace, label).unwrap();

    let loss = |n: &Network<f64>| cross_entropy(&n.forward(&input).unwrap().0, label).unwrap();
    let h = 1e-3;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        for (is_bias, analytic) in [(false, g.weights.data()), (true, g.bias.data())] {
            for (i, &an) in analytic.iter().enumerate() {
                let bump = |delta: f64| {
                    let mut n = net.clone();
                    let layer = n.layers_mut().nth(k).unwrap();
                    let p = layer.params.as_mut().unwrap();
                    let slot = if is_bias { &mut p.bias.data_mut()[i] } else { &mut p.weights.data_mut()[i] };
                    *slot += delta;
                    loss(&n)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                worst = worst.max((an - fd).abs() / (an.abs() + 1e-8));
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-3 && secs < 120.0;
    report(
        "gradient check",
        pass,
        format!("{checked} parameters, worst |a-fd|/(|a|+1e-8) = {worst:.2e} (<=1e-3), {secs:.1}s"),
    );
    assert!(pass);
}

/// Trains the scaled-down network on the quadrant task with batch 25 and
/// learning rate 0.001 for 2,000 iterations, then checks held-out accuracy
/// and where the relevance of correct predictions lands.
#[test]
fn desk_scale_training_and_explanation_sanity() {
    let train = quadrant_dataset::<f32>(400, 1);
    let test = quadrant_dataset::<f32>(200, 2);
    let mut net = build_compact_network::<f32>([QUADRANT_SIZE, QUADRANT_SIZE, 3], 2).unwrap();
    net.init_glorot(3);
    let cfg = TrainConfig { batch_size: 25, learning_rate: 0.001, iterations: 2000, rng_seed: 4 };
    let start = Instant::now();
    let trained = sgd_train(net, &train, &cfg).unwrap();
    let acc = accuracy(&trained.network, &test).unwrap();
    let pass = acc >= 0.95;
    report(
        "desk-scale training",
        pass,
        format!(
            "held-out accuracy {:.1}% (>=95%) after {} iterations, loss {:.4} -> {:.4}, {:.1}s",
            acc * 100.0,
            cfg.iterations,
            trained.losses[0],
            trained.losses.last().unwrap(),
            start.elapsed().as_secs_f64()
        ),
    );

    let ab = AlphaBeta::default();
    let (mut correct, mut concentrated) = (0, 0);
    for ex in &test {
        if trained.network.predict(&ex.input).unwrap() != ex.label {
            continue;
        }
        correct += 1;
        let map = explain(&trained.network, &ex.input, ex.label, &ab).unwrap();
        let positive = channel_collapse(&map.values).unwrap().map(|v| v.max(0.0));
        let quadrant = BoundingBox::new(class_quadrant(ex.label), "quadrant", 1.0, (28, 28)).unwrap();
        let inside = region_relevance(&positive, &quadrant).unwrap();
        if inside >= 0.6 * positive.sum_f64() {
            concentrated += 1;
        }
    }
    let share = concentrated as f64 / correct.max(1) as f64;
    let sane = correct > 0 && share >= 0.9;
    report(
        "explanation sanity",
        sane,
        format!("{concentrated}/{correct} correct test images keep >=60% of positive relevance in their quadrant ({:.1}%, need >=90%)", share * 100.0),
    );
    assert!(pass && sane);
}

#[test]
fn partition_additivity() {
    let mut rng = XorShiftRng::new(55);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (h, w) = (2 + rng.below(40), 2 + rng.below(40));
        let map = random_tensor(&[h, w], &mut rng, -1.0, 1.0).cast::<f32>();
        // Random guillotine tiling: split columns, then split each column strip by rows.
        let mut cuts_x = vec![0, w];
        for _ in 0..rng.below(4) {
            cuts_x.push(1 + rng.below(w - 1));
        }
        cuts_x.sort();
        cuts_x.dedup();
        let mut total = 0.0;
        for xs in cuts_x.windows(2) {
            let mut cuts_y = vec![0, h];
            for _ in 0..rng.below(4) {
                cuts_y.push(1 + rng.below(h - 1));
            }
            cuts_y.sort();
            cuts_y.dedup();
            for ys in cuts_y.windows(2) {
                let b = BoundingBox::new(
                    [xs[0] as f64, ys[0] as f64, xs[1] as f64, ys[1] as f64],
                    "tile",
                    1.0,
                    (w as u32, h as u32),
                )
                .unwrap();
                total += region_relevance(&map, &b).unwrap();
            }
        }
        let expect = map.sum_f64();
        let abs_sum: f64 = map.data().iter().map(|v| v.abs() as f64).sum();
        worst = worst.max((total - expect).abs() / expect.abs().max(1e-12 * abs_sum));
    }
    let pass = worst <= 1e-5;
    report("partition additivity", pass, format!("100 maps, worst rel err {worst:.2e} (<=1e-5)"));
    assert!(pass);
}

#[test]
fn box_scaling() {
    let full = BoundingBox::new([0.0, 0.0, 512.0, 512.0], "p", 0.9, (512, 512)).unwrap();
    let part = BoundingBox::new([256.0, 128.0, 384.0, 256.0], "p", 0.9, (512, 512)).unwrap();
    let coords = |b: &BoundingBox| [b.x_min, b.y_min, b.x_max, b.y_max];
    let exact = coords(&scale_box(&full, (112, 112)).unwrap()) == [0.0, 0.0, 112.0, 112.0]
        && coords(&scale_box(&part, (112, 112)).unwrap()) == [56.0, 28.0, 84.0, 56.0];

    let mut rng = XorShiftRng::new(9);
    let mut worst = 0.0f64;
    let mut trips = 0;
    while trips < 1000 {
        let x0 = rng.below(500) as f64;
        let y0 = rng.below(500) as f64;
        let x1 = x0 + 1.0 + rng.below(512 - x0 as usize) as f64;
        let y1 = y0 + 1.0 + rng.below(512 - y0 as usize) as f64;
        let b = BoundingBox::new([x0, y0, x1.min(512.0), y1.min(512.0)], "p", 0.9, (512, 512)).unwrap();
        let Ok(small) = scale_box(&b, (112, 112)) else { continue };
        let back = scale_box(&small, (512, 512)).unwrap();
        for (a, z) in coords(&b).iter().zip(coords(&back)) {
            worst = worst.max((a - z).abs());
        }
        trips += 1;
    }
    let pass = exact && worst <= 5.0;
    report(
        "box scaling",
        pass,
        format!("exact 512->112 examples: {exact}; worst round-trip edge shift {worst} px over {trips} boxes (<=5)"),
    );
    assert!(pass);
}

#[test]
fn analytics_against_brute_force() {
    let mut rng = XorShiftRng::new(12);
    let genres = ["Comics", "Cookbooks", "History", "Romance", "Travel"];
    let labels = ["book", "car", "person", "text"];
    let records: Vec<RelevanceRecord> = (0..1000)
        .map(|i| RelevanceRecord {
            image_id: format!("img{i}"),
            genre: genres[rng.below(genres.len())].to_string(),
            label: labels[rng.below(labels.len())].to_string(),
            r_obj: rng.uniform(-5.0, 5.0),
            box_area_fraction: rng.uniform(0.01, 1.0),
        })
        .collect();

    let matrix = mean_relevance_matrix(&records, DEFAULT_MIN_COUNT).unwrap();
    let mut worst = 0.0f64;
    for g in genres {
        for l in labels {
            let values: Vec<f64> = records.iter().filter(|r| r.genre == g && r.label == l).map(|r| r.r_obj).collect();
            let cell = matrix.get(g, l);
            assert_eq!(cell.is_some(), values.len() >= DEFAULT_MIN_COUNT);
            let Some(cell) = cell else { continue };
            assert_eq!(cell.count, values.len());
            worst = worst.max((cell.mean - values.iter().sum::<f64>() / values.len() as f64).abs());

            // Brute-force quartiles: interpolate on a freshly sorted copy.
            let mut s = values.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |p: f64| {
                let pos = p * (s.len() - 1) as f64;
                let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
                s[lo] * (1.0 - (pos - lo as f64)) + s[hi] * (pos - lo as f64)
            };
            let st = distribution_summary(&values).unwrap();
            for (got, want) in
                [(st.min, s[0]), (st.q1, q(0.25)), (st.median, q(0.5)), (st.q3, q(0.75)), (st.max, s[s.len() - 1])]
            {
                worst = worst.max((got - want).abs());
            }
        }
    }

    let four: Vec<RelevanceRecord> = records.iter().filter(|r| r.genre == "Comics").take(4).cloned().map(|mut r| {
        r.genre = "Poetry".into();
        r.label = "person".into();
        r
    }).collect();
    let filtered = mean_relevance_matrix(&four, DEFAULT_MIN_COUNT).unwrap().get("Poetry", "person").is_none();
    let shown = mean_relevance_matrix(&four, 1).unwrap().get("Poetry", "person").is_some();

    let pass = worst <= 1e-9 && filtered && shown;
    report(
        "analytics",
        pass,
        format!("1000 records, max abs err {worst:.1e} (<=1e-9); 4-record cell hidden at threshold 5: {filtered}"),
    );
    assert!(pass);
}

/// Golden file generated independently (Python, float64) from the map
/// `v_i = ((37 i mod 101) - 50) / 8` on a 112×112 grid.
fn golden_map() -> Tensor<f32> {
    Tensor::from_fn(&[112, 112], |i| (((i * 37) % 101) as f32 - 50.0) / 8.0)
}

#[test]
fn rendering_determinism() {
    let golden = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/heatmap_golden.ppm")).unwrap();
    let map = golden_map();
    let first = render_heatmap(&map).unwrap().to_ppm_bytes();
    let second = render_heatmap(&golden_map()).unwrap().to_ppm_bytes();
    let scaled32 = render_heatmap(&map.map(|v| 10.0 * v)).unwrap().to_ppm_bytes();

    // Random map: 10x of an f32 value is exact in f64.
    let mut rng = XorShiftRng::new(100);
    let noisy = Tensor::<f32>::from_fn(&[112, 112], |_| rng.uniform(-2.0, 2.0) as f32);
    let a = render_heatmap(&noisy).unwrap().to_ppm_bytes();
    let b = render_heatmap(&noisy).unwrap().to_ppm_bytes();
    let c = render_heatmap(&Tensor::<f64>::from_fn(&[112, 112], |i| 10.0 * noisy.data()[i] as f64)).unwrap().to_ppm_bytes();

    let pass = first == golden && second == golden && scaled32 == golden && a == b && a == c;
    report(
        "rendering determinism",
        pass,
        format!(
            "golden PPM identical: run1 {}, run2 {}, 10x map {}; random map repeat {}, 10x {}",
            first == golden,
            second == golden,
            scaled32 == golden,
            a == b,
            a == c
        ),
    );
    assert!(pass);
}
