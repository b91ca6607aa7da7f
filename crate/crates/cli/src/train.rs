use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use relprop::dataset::{build_one_vs_others, Manifest, TaskExample};
use relprop::format::save_model;
use relprop::imaging::{preprocess_to, RasterImage};
use relprop::nn::{build_compact_network, build_cover_network, Network, COVER_INPUT_SIZE};
use relprop::training::{accuracy, sgd_train_with, write_loss_history, LabeledExample, TrainConfig};
use relprop::Scalar;
use serde::Deserialize;

use crate::config::{flags_over_file, required, UsageError};
use crate::output::save_with;
use crate::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Six convolutions on 112×112 input.
    Full,
    /// Two convolutions and two pools; any input size.
    Compact,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    /// CSV with columns image_id, path, genre and optionally split.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Genre trained against all others.
    #[arg(long)]
    pub genre: Option<String>,
    /// SGD iterations [default: 50000].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Examples per iteration [default: 25].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for sampling, splitting, initialisation and shuffling [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss history CSV [default: model path with extension `loss.csv`].
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Also write the sampled train/test assignment as CSV.
    #[arg(long)]
    pub split_csv: Option<PathBuf>,
    /// Rewrite the model file every N iterations.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Network layout [default: full].
    #[arg(long, value_enum)]
    pub arch: Option<Arch>,
    /// Square input size for the compact layout [default: 112].
    #[arg(long)]
    pub input_size: Option<usize>,
}

flags_over_file!(TrainArgs {
    manifest, genre, iters, batch, lr, seed, out, loss_csv, split_csv, checkpoint_every, arch, input_size,
});

struct Plan {
    manifest: PathBuf,
    genre: String,
    config: TrainConfig,
    out: PathBuf,
    loss_csv: PathBuf,
    split_csv: Option<PathBuf>,
    checkpoint_every: Option<usize>,
    arch: Arch,
    input_size: usize,
}

impl TryFrom<TrainArgs> for Plan {
    type Error = anyhow::Error;

    fn try_from(a: TrainArgs) -> anyhow::Result<Self> {
        let defaults = TrainConfig::default();
        let config = TrainConfig {
            batch_size: a.batch.unwrap_or(defaults.batch_size),
            learning_rate: a.lr.unwrap_or(defaults.learning_rate),
            iterations: a.iters.unwrap_or(defaults.iterations),
            rng_seed: a.seed.unwrap_or(defaults.rng_seed),
        };
        config.validate()?;
        let arch = a.arch.unwrap_or(Arch::Full);
        let input_size = a.input_size.unwrap_or(COVER_INPUT_SIZE);
        if arch == Arch::Full && input_size != COVER_INPUT_SIZE {
            return Err(UsageError(format!("the full layout takes {COVER_INPUT_SIZE}px input, not {input_size}")).into());
        }
        if input_size == 0 {
            return Err(UsageError("--input-size must be positive".into()).into());
        }
        if a.checkpoint_every == Some(0) {
            return Err(UsageError("--checkpoint-every must be at least 1".into()).into());
        }
        let out = required(a.out, "out")?;
        Ok(Plan {
            manifest: required(a.manifest, "manifest")?,
            genre: required(a.genre, "genre")?,
            config,
            loss_csv: a.loss_csv.unwrap_or_else(|| out.with_extension("loss.csv")),
            out,
            split_csv: a.split_csv,
            checkpoint_every: a.checkpoint_every,
            arch,
            input_size,
        })
    }
}

pub fn run(args: TrainArgs, precision: Precision) -> anyhow::Result<()> {
    let plan = Plan::try_from(args)?;
    match precision {
        Precision::F32 => train::<f32>(&plan),
        Precision::F64 => train::<f64>(&plan),
    }
}

/// Relative image paths are taken relative to the manifest's directory.
fn load_examples<T: Scalar>(set: &[TaskExample], base: &Path, size: usize) -> anyhow::Result<Vec<LabeledExample<T>>> {
    set.par_iter()
        .map(|ex| {
            let path = base.join(&ex.path);
            let img = RasterImage::open(&path).with_context(|| format!("reading image {}", path.display()))?;
            Ok(LabeledExample { input: preprocess_to(&img, size), label: ex.label })
        })
        .collect()
}

fn train<T: Scalar>(plan: &Plan) -> anyhow::Result<()> {
    let manifest =
        Manifest::load(&plan.manifest).with_context(|| format!("loading manifest {}", plan.manifest.display()))?;
    let task = build_one_vs_others(&manifest, &plan.genre, plan.config.rng_seed)?;
    if let Some(path) = &plan.split_csv {
        save_with(path, |buf| task.write_csv(buf))?;
    }
    let base = plan.manifest.parent().unwrap_or(Path::new("."));
    let train_set = load_examples::<T>(&task.train, base, plan.input_size)?;
    let test_set = load_examples::<T>(&task.test, base, plan.input_size)?;
    log::info!("'{}': {} training and {} test images", plan.genre, train_set.len(), test_set.len());

    let mut net: Network<T> = match plan.arch {
        Arch::Full => build_cover_network(2)?,
        Arch::Compact => build_compact_network([plan.input_size, plan.input_size, 3], 2)?,
    };
    net.init_glorot(plan.config.rng_seed);

    let trained = sgd_train_with(net, &train_set, &plan.config, |iteration, net, loss| {
        if plan.checkpoint_every.is_some_and(|n| iteration % n == 0) {
            log::info!("iteration {iteration}: loss {loss:.6}, checkpointing");
            save_model(&plan.out, &net.cast::<f32>())?;
        }
        Ok(())
    })?;

    save_model(&plan.out, &trained.network.cast::<f32>())
        .with_context(|| format!("writing model {}", plan.out.display()))?;
    save_with(&plan.loss_csv, |buf| write_loss_history(buf, &trained.losses))?;

    println!("model\t{}", plan.out.display());
    println!("losses\t{}", plan.loss_csv.display());
    println!("train_accuracy\t{:.4}", accuracy(&trained.network, &train_set)?);
    if !test_set.is_empty() {
        println!("test_accuracy\t{:.4}", accuracy(&trained.network, &test_set)?);
    }
    Ok(())
}
