use std::fs::File;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use relprop::analytics::{
    all_label_summaries, mean_relevance_matrix, per_genre_label_summaries, write_summaries_csv, DEFAULT_MIN_COUNT,
};
use relprop::imaging::render_grid;
use relprop::region::read_records;
use serde::Deserialize;

use crate::config::{flags_over_file, required, UsageError};
use crate::output::{save_image, save_with};

/// Side length of one matrix cell in the rendered grid.
const GRID_CELL: usize = 24;

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ReportArgs {
    /// Records CSV written by `aggregate`.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Minimum records for a matrix cell to be reported [default: 5].
    #[arg(long)]
    pub threshold: Option<usize>,
    #[arg(long)]
    pub out_matrix: Option<PathBuf>,
    #[arg(long)]
    pub out_summaries: Option<PathBuf>,
    /// Summarise only this label [default: every label].
    #[arg(long)]
    pub label: Option<String>,
    /// Matrix rendered as a colour grid (genres are rows), PNG or PPM.
    #[arg(long)]
    pub out_grid: Option<PathBuf>,
}

flags_over_file!(ReportArgs { records, threshold, out_matrix, out_summaries, label, out_grid });

pub fn run(args: ReportArgs) -> anyhow::Result<()> {
    let records_path = required(args.records, "records")?;
    let out_matrix = required(args.out_matrix, "out-matrix")?;
    let out_summaries = required(args.out_summaries, "out-summaries")?;
    let threshold = args.threshold.unwrap_or(DEFAULT_MIN_COUNT);
    if threshold == 0 {
        return Err(UsageError("--threshold must be at least 1".into()).into());
    }

    let file = File::open(&records_path).with_context(|| format!("opening {}", records_path.display()))?;
    let records = read_records(file).with_context(|| format!("reading records {}", records_path.display()))?;
    if records.is_empty() {
        return Err(relprop::Error::Parse { line: 1, message: "no records".into() })
            .with_context(|| format!("reading records {}", records_path.display()));
    }

    let matrix = mean_relevance_matrix(&records, threshold)?;
    save_with(&out_matrix, |buf| matrix.write_csv(buf))?;

    let summaries = match &args.label {
        Some(label) => per_genre_label_summaries(&records, label),
        None => all_label_summaries(&records),
    };
    if summaries.is_empty() {
        log::warn!("no records carry label '{}'", args.label.as_deref().unwrap_or_default());
    }
    save_with(&out_summaries, |buf| write_summaries_csv(buf, &summaries))?;

    if let Some(path) = &args.out_grid {
        let values: Vec<Vec<Option<f64>>> =
            matrix.cells.iter().map(|row| row.iter().map(|c| c.map(|c| c.mean)).collect()).collect();
        save_image(&render_grid(&values, GRID_CELL)?, path)?;
    }

    let present = matrix.cells.iter().flatten().filter(|c| c.is_some()).count();
    println!("records\t{}", records.len());
    println!("cells\t{present} of {}", matrix.genres.len() * matrix.labels.len());
    Ok(())
}
