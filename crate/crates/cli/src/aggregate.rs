use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use rayon::prelude::*;
use relprop::dataset::Manifest;
use relprop::format::load_relevance;
use relprop::lrp::channel_collapse;
use relprop::region::{read_box_manifest, relevance_records, scale_box, write_records, BoxEntry, DEFAULT_MIN_CONFIDENCE};
use serde::Deserialize;

use crate::config::{flags_over_file, required, UsageError};
use crate::output::save_with;

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct AggregateArgs {
    /// Directory of relevance maps named `<image_id>.rlv`.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// JSON-lines detections: image_id, label, confidence, box, resolution.
    #[arg(long)]
    pub boxes: Option<PathBuf>,
    /// Image manifest supplying each image's genre.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Boxes below this detector confidence are ignored [default: 0.5].
    #[arg(long)]
    pub min_confidence: Option<f64>,
    /// Records CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

flags_over_file!(AggregateArgs { maps, boxes, manifest, min_confidence, out });

pub fn run(args: AggregateArgs) -> anyhow::Result<()> {
    let maps = required(args.maps, "maps")?;
    let boxes_path = required(args.boxes, "boxes")?;
    let manifest_path = required(args.manifest, "manifest")?;
    let out = required(args.out, "out")?;
    let min_confidence = args.min_confidence.unwrap_or(DEFAULT_MIN_CONFIDENCE);
    if !(0.0..=1.0).contains(&min_confidence) {
        return Err(UsageError(format!("--min-confidence must be in [0, 1], got {min_confidence}")).into());
    }
    if !maps.is_dir() {
        return Err(anyhow::Error::new(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("map directory {} does not exist", maps.display()),
        )));
    }

    let manifest =
        Manifest::load(&manifest_path).with_context(|| format!("loading manifest {}", manifest_path.display()))?;
    let file = File::open(&boxes_path).with_context(|| format!("opening {}", boxes_path.display()))?;
    let entries =
        read_box_manifest(BufReader::new(file)).with_context(|| format!("reading boxes {}", boxes_path.display()))?;

    let mut by_image: BTreeMap<&str, Vec<&BoxEntry>> = BTreeMap::new();
    let mut dropped = 0;
    for e in &entries {
        if e.confidence >= min_confidence {
            by_image.entry(&e.image_id).or_default().push(e);
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::info!("ignored {dropped} boxes below confidence {min_confidence}");
    }

    let genres = manifest.genre_of();
    let per_image: Vec<_> = by_image
        .into_par_iter()
        .map(|(image_id, boxes)| {
            let Some(genre) = genres.get(image_id) else {
                log::warn!("{image_id}: not in the manifest, skipping {} boxes", boxes.len());
                return Ok(Vec::new());
            };
            let path = maps.join(format!("{image_id}.rlv"));
            if !path.is_file() {
                log::warn!("{image_id}: no relevance map at {}, skipping {} boxes", path.display(), boxes.len());
                return Ok(Vec::new());
            }
            let map = load_relevance::<f32>(&path).with_context(|| format!("reading {}", path.display()))?;
            let pixels = channel_collapse(&map.values)?;
            let (h, w) = (pixels.shape()[0] as u32, pixels.shape()[1] as u32);
            let mut scaled = Vec::with_capacity(boxes.len());
            for b in boxes {
                match b.to_box().and_then(|b| scale_box(&b, (w, h))) {
                    Ok(s) => scaled.push(s),
                    Err(e) => log::warn!("{image_id}: skipping '{}' box: {e}", b.label),
                }
            }
            Ok(relevance_records(&pixels, &scaled, image_id, genre)?)
        })
        .collect::<anyhow::Result<_>>()?;

    let records: Vec<_> = per_image.into_iter().flatten().collect();
    save_with(&out, |buf| write_records(buf, &records))?;
    println!("records\t{}", records.len());
    Ok(())
}
