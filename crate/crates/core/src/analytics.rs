//! Grouping relevance records into per-genre tables: a genre × label matrix of
//! mean relevance and per-genre distribution summaries (box-plot statistics).
//!
//! Values are sorted before any summation, so every output is independent
//! of record order down to the last bit.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{ensure, Result};
use crate::region::RelevanceRecord;

/// Cells backed by fewer records than this are reported as absent.
pub const DEFAULT_MIN_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanRelevanceMatrix {
    /// Lexicographically ordered.
    pub genres: Vec<String>,
    /// Lexicographically ordered.
    pub labels: Vec<String>,
    /// `cells[g][l]`, `None` below the count threshold (or with no records).
    pub cells: Vec<Vec<Option<Cell>>>,
    pub threshold: usize,
}

impl MeanRelevanceMatrix {
    pub fn get(&self, genre: &str, label: &str) -> Option<Cell> {
        let g = self.genres.iter().position(|x| x == genre)?;
        let l = self.labels.iter().position(|x| x == label)?;
        self.cells[g][l]
    }

    /// CSV with one row per genre and `mean:count` cells; absent cells empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["genre".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (genre, row) in self.genres.iter().zip(&self.cells) {
            let mut fields = vec![genre.clone()];
            fields.extend(row.iter().map(|c| c.map_or(String::new(), |c| format!("{}:{}", c.mean, c.count))));
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sorted(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    values
}

fn mean_of_sorted(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per (genre, label) mean of `r_obj`; cells with fewer than `threshold`
/// records are absent. Genres and labels that only occur in absent cells are
/// still listed.
pub fn mean_relevance_matrix(records: &[RelevanceRecord], threshold: usize) -> Result<MeanRelevanceMatrix> {
    ensure!(!records.is_empty(), "no relevance records to aggregate");
    let mut groups: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.genre, &r.label)).or_default().push(r.r_obj);
    }
    let mut genres: Vec<String> = records.iter().map(|r| r.genre.clone()).collect();
    genres.sort();
    genres.dedup();
    let mut labels: Vec<String> = records.iter().map(|r| r.label.clone()).collect();
    labels.sort();
    labels.dedup();

    let cells = genres
        .iter()
        .map(|g| {
            labels
                .iter()
                .map(|l| {
                    let values = groups.remove(&(g.as_str(), l.as_str()))?;
                    (values.len() >= threshold).then(|| {
                        let count = values.len();
                        Cell { mean: mean_of_sorted(&sorted(values)), count }
                    })
                })
                .collect()
        })
        .collect();
    Ok(MeanRelevanceMatrix { genres, labels, cells, threshold })
}

/// Five-number summary plus mean. Quartiles interpolate linearly between
/// order statistics at position `p * (n - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSummary {
    pub genre: String,
    pub label: String,
    pub stats: Stats,
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn distribution_summary(values: &[f64]) -> Result<Stats> {
    ensure!(!values.is_empty(), "cannot summarise an empty list");
    ensure!(values.iter().all(|v| !v.is_nan()), "cannot summarise NaN values");
    let s = sorted(values.to_vec());
    Ok(Stats {
        count: s.len(),
        min: s[0],
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        max: s[s.len() - 1],
        mean: mean_of_sorted(&s),
    })
}

/// One summary of `label`'s relevance per genre that has any such record,
/// genres in lexicographic order.
pub fn per_genre_label_summaries(records: &[RelevanceRecord], label: &str) -> Vec<DistributionSummary> {
    let mut by_genre: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.label == label) {
        by_genre.entry(&r.genre).or_default().push(r.r_obj);
    }
    by_genre
        .into_iter()
        .map(|(genre, values)| DistributionSummary {
            genre: genre.to_string(),
            label: label.to_string(),
            stats: distribution_summary(&values).expect("groups are non-empty"),
        })
        .collect()
}

/// Summaries for every label present, labels in lexicographic order.
pub fn all_label_summaries(records: &[RelevanceRecord]) -> Vec<DistributionSummary> {
    let mut labels: Vec<&str> = records.iter().map(|r| r.label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    labels.into_iter().flat_map(|l| per_genre_label_summaries(records, l)).collect()
}

/// CSV `genre,label,count,min,q1,median,q3,max,mean`.
pub fn write_summaries_csv<W: Write>(out: W, summaries: &[DistributionSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["genre", "label", "count", "min", "q1", "median", "q3", "max", "mean"])?;
    for s in summaries {
        let st = &s.stats;
        w.write_record([
            s.genre.clone(),
            s.label.clone(),
            st.count.to_string(),
            st.min.to_string(),
            st.q1.to_string(),
            st.median.to_string(),
            st.q3.to_string(),
            st.max.to_string(),
            st.mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
