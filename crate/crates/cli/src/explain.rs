use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use relprop::format::{load_model, save_relevance};
use relprop::imaging::{composite, preprocess_to, render_heatmap, resize, RasterImage};
use relprop::lrp::{channel_collapse, explain, AlphaBeta};
use relprop::nn::Network;
use relprop::{Scalar, Tensor};
use serde::Deserialize;

use crate::config::{flags_over_file, required, UsageError};
use crate::output::save_image;
use crate::Precision;

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
}

flags_over_file!(PredictArgs { model, image });

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Class to explain [default: the predicted class].
    #[arg(long)]
    pub class: Option<usize>,
    /// Weight of positive contributions [default: 2].
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Weight of negative contributions; alpha + beta must be 1 [default: -1].
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    /// Relevance map file (RLV1).
    #[arg(long)]
    pub out_map: Option<PathBuf>,
    /// Rendered heatmap, PNG if the name ends in `.png`, PPM otherwise.
    #[arg(long)]
    pub out_heatmap: Option<PathBuf>,
    /// Heatmap blended over the resized input image.
    #[arg(long)]
    pub composite: Option<PathBuf>,
    /// Heatmap weight in the composite [default: 0.5].
    #[arg(long)]
    pub opacity: Option<f64>,
}

flags_over_file!(ExplainArgs { model, image, class, alpha, beta, out_map, out_heatmap, composite, opacity });

fn load_input<T: Scalar>(net: &Network<T>, path: &Path) -> anyhow::Result<(RasterImage, Tensor<T>)> {
    let [h, w, _] = net.input_shape();
    if h != w {
        return Err(UsageError(format!("model expects non-square {h}x{w} input")).into());
    }
    let img = RasterImage::open(path).with_context(|| format!("reading image {}", path.display()))?;
    let input = preprocess_to(&img, h);
    Ok((img, input))
}

fn load<T: Scalar>(path: &Path) -> anyhow::Result<Network<T>> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

pub fn predict(args: PredictArgs, precision: Precision) -> anyhow::Result<()> {
    let model = required(args.model, "model")?;
    let image = required(args.image, "image")?;
    match precision {
        Precision::F32 => predict_with::<f32>(&model, &image),
        Precision::F64 => predict_with::<f64>(&model, &image),
    }
}

fn predict_with<T: Scalar>(model: &Path, image: &Path) -> anyhow::Result<()> {
    let net = load::<T>(model)?;
    let (_, input) = load_input(&net, image)?;
    let (probs, _) = net.forward(&input)?;
    println!("class\t{}", probs.argmax());
    for (c, p) in probs.data().iter().enumerate() {
        println!("p{c}\t{:.6}", p.as_f64());
    }
    Ok(())
}

pub fn run(args: ExplainArgs, precision: Precision) -> anyhow::Result<()> {
    let ab = AlphaBeta::new(args.alpha.unwrap_or(2.0), args.beta.unwrap_or(-1.0))?;
    if let Some(o) = args.opacity {
        if !(0.0..=1.0).contains(&o) {
            return Err(UsageError(format!("--opacity must be in [0, 1], got {o}")).into());
        }
    }
    match precision {
        Precision::F32 => explain_with::<f32>(args, &ab),
        Precision::F64 => explain_with::<f64>(args, &ab),
    }
}

fn explain_with<T: Scalar>(args: ExplainArgs, ab: &AlphaBeta) -> anyhow::Result<()> {
    let model = required(args.model, "model")?;
    let image = required(args.image, "image")?;
    let out_map = required(args.out_map, "out-map")?;
    let out_heatmap = required(args.out_heatmap, "out-heatmap")?;

    let net = load::<T>(&model)?;
    let (img, input) = load_input(&net, &image)?;
    let class = match args.class {
        Some(c) => c,
        None => net.predict(&input)?,
    };
    let map = explain(&net, &input, class, ab)?;
    save_relevance(&out_map, &map).with_context(|| format!("writing {}", out_map.display()))?;

    let pixels = channel_collapse(&map.values)?;
    save_image(&render_heatmap(&pixels)?, &out_heatmap)?;
    if let Some(path) = &args.composite {
        let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
        save_image(&composite(&resize(&img, w, h), &pixels, args.opacity.unwrap_or(0.5))?, path)?;
    }

    // Summed from the values as stored, so it can be checked against the file.
    let stored: f64 = map.values.data().iter().map(|v| v.as_f64() as f32 as f64).sum();
    println!("class\t{class}");
    println!("start_score\t{}", map.start_score);
    println!("relevance_sum\t{stored}");
    println!("absorbed_bias\t{}", map.ledger.absorbed_bias);
    Ok(())
}
