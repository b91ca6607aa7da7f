//! Detection boxes and the relevance they enclose.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::{Scalar, Tensor};

/// Default minimum detector confidence for ingested boxes.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;

/// Axis-aligned box in pixel coordinates of an image of `resolution`
/// `(width, height)`. Covers `x_min <= x < x_max`, `y_min <= y < y_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub label: String,
    pub confidence: f64,
    pub resolution: (u32, u32),
}

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

impl BoundingBox {
    pub fn new(coords: [f64; 4], label: impl Into<String>, confidence: f64, resolution: (u32, u32)) -> Result<Self> {
        let b = Self {
            x_min: coords[0],
            y_min: coords[1],
            x_max: coords[2],
            y_max: coords[3],
            label: label.into(),
            confidence,
            resolution,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.resolution.0 as f64, self.resolution.1 as f64);
        ensure!(w > 0.0 && h > 0.0, "box resolution {:?} must be positive", self.resolution);
        ensure!(
            self.x_min >= 0.0 && self.x_min < self.x_max && self.x_max <= w,
            "box x-range [{}, {}) outside 0..{w}",
            self.x_min,
            self.x_max
        );
        ensure!(
            self.y_min >= 0.0 && self.y_min < self.y_max && self.y_max <= h,
            "box y-range [{}, {}) outside 0..{h}",
            self.y_min,
            self.y_max
        );
        ensure!((0.0..=1.0).contains(&self.confidence), "confidence {} outside [0, 1]", self.confidence);
        Ok(())
    }

    /// Integer pixel bounds `(x_min, y_min, x_max, y_max)`, rounding half up.
    pub fn pixel_bounds(&self) -> (usize, usize, usize, usize) {
        let r = |v: f64| round_half_up(v).max(0.0) as usize;
        (r(self.x_min), r(self.y_min), r(self.x_max), r(self.y_max))
    }

    pub fn pixel_area(&self) -> usize {
        let (x0, y0, x1, y1) = self.pixel_bounds();
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }
}

/// Rescales a box to another resolution: each coordinate is multiplied by
/// target/source along its axis, rounded half up and clamped to the target.
pub fn scale_box(b: &BoundingBox, target: (u32, u32)) -> Result<BoundingBox> {
    b.validate()?;
    ensure!(target.0 > 0 && target.1 > 0, "target resolution {target:?} must be positive");
    let sx = target.0 as f64 / b.resolution.0 as f64;
    let sy = target.1 as f64 / b.resolution.1 as f64;
    let fit = |v: f64, s: f64, limit: u32| round_half_up(v * s).clamp(0.0, limit as f64);
    let scaled = BoundingBox {
        x_min: fit(b.x_min, sx, target.0),
        y_min: fit(b.y_min, sy, target.1),
        x_max: fit(b.x_max, sx, target.0),
        y_max: fit(b.y_max, sy, target.1),
        label: b.label.clone(),
        confidence: b.confidence,
        resolution: target,
    };
    if scaled.x_min >= scaled.x_max || scaled.y_min >= scaled.y_max {
        return Err(Error::DegenerateBox(format!(
            "'{}' box ({}, {}, {}, {}) collapses to zero area at {}x{}",
            b.label, b.x_min, b.y_min, b.x_max, b.y_max, target.0, target.1
        )));
    }
    Ok(scaled)
}

/// Sum of a channel-collapsed `H×W` map over the box (half-open bounds).
pub fn region_relevance<T: Scalar>(map: &Tensor<T>, b: &BoundingBox) -> Result<f64> {
    ensure!(map.rank() == 2, "region relevance needs an H×W map, got {:?}", map.shape());
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let (x0, y0, x1, y1) = b.pixel_bounds();
    ensure!(
        x0 < x1 && y0 < y1 && x1 <= w && y1 <= h,
        "box ({x0}, {y0}, {x1}, {y1}) is not inside the {w}x{h} map"
    );
    let data = map.data();
    let mut total = 0.0;
    for y in y0..y1 {
        for v in &data[y * w + x0..y * w + x1] {
            total += v.as_f64();
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRecord {
    pub image_id: String,
    pub genre: String,
    pub label: String,
    pub r_obj: f64,
    /// Box pixels over map pixels.
    pub box_area_fraction: f64,
}

/// One record per box; boxes that fall outside the map or have no area are
/// skipped with a warning. Overlapping boxes are each counted in full.
pub fn relevance_records<T: Scalar>(
    map: &Tensor<T>,
    boxes: &[BoundingBox],
    image_id: &str,
    genre: &str,
) -> Result<Vec<RelevanceRecord>> {
    ensure!(map.rank() == 2, "relevance records need an H×W map, got {:?}", map.shape());
    let total_pixels = map.len() as f64;
    let mut records = Vec::with_capacity(boxes.len());
    for b in boxes {
        match region_relevance(map, b) {
            Ok(r_obj) => records.push(RelevanceRecord {
                image_id: image_id.to_string(),
                genre: genre.to_string(),
                label: b.label.clone(),
                r_obj,
                box_area_fraction: b.pixel_area() as f64 / total_pixels,
            }),
            Err(e) => log::warn!("{image_id}: skipping '{}' box: {e}", b.label),
        }
    }
    Ok(records)
}

/// One line of a box manifest (JSON lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxEntry {
    pub image_id: String,
    pub label: String,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub resolution: [u32; 2],
}

impl BoxEntry {
    pub fn to_box(&self) -> Result<BoundingBox> {
        BoundingBox::new(self.bbox, self.label.clone(), self.confidence, (self.resolution[0], self.resolution[1]))
    }
}

/// Reads a JSON-lines box manifest. Blank lines are ignored; malformed lines
/// are errors carrying their 1-based line number.
pub fn read_box_manifest<R: BufRead>(reader: R) -> Result<Vec<BoxEntry>> {
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: BoxEntry =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        entry.to_box().map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_records<W: std::io::Write>(out: W, records: &[RelevanceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(input: R) -> Result<Vec<RelevanceRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize().enumerate() {
        out.push(rec.map_err(|e: csv::Error| Error::Parse { line: i + 2, message: e.to_string() })?);
    }
    Ok(out)
}
