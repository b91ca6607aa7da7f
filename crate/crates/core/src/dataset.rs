//! Image manifests and balanced one-vs-others task construction.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};

use crate::error::{ensure, Error, Result};
use crate::rng::XorShiftRng;

/// Fraction of each class sent to the training split when the manifest does
/// not assign splits.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub path: String,
    pub genre: String,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    genres: BTreeSet<String>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        ensure!(!entries.is_empty(), "manifest has no entries");
        let mut seen = HashSet::new();
        for e in &entries {
            ensure!(seen.insert(e.image_id.as_str()), "duplicate image_id '{}'", e.image_id);
        }
        let genres = entries.iter().map(|e| e.genre.clone()).collect();
        Ok(Self { entries, genres })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Distinct genres, sorted.
    pub fn genres(&self) -> &BTreeSet<String> {
        &self.genres
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    pub fn genre_of(&self) -> BTreeMap<&str, &str> {
        self.entries.iter().map(|e| (e.image_id.as_str(), e.genre.as_str())).collect()
    }

    /// CSV with header `image_id,path,genre` and an optional `split` column
    /// (`train`/`test`, empty for unassigned). Line numbers in errors are
    /// 1-based and count the header.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let missing = |name: &str| Error::Parse { line: 1, message: format!("missing column '{name}'") };
        let id_col = col("image_id").ok_or_else(|| missing("image_id"))?;
        let path_col = col("path").ok_or_else(|| missing("path"))?;
        let genre_col = col("genre").ok_or_else(|| missing("genre"))?;
        let split_col = col("split");

        let mut entries = Vec::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (i, row) in rdr.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::Parse { line, message: e.to_string() })?;
            let field = |c: usize, name: &str| -> Result<String> {
                match row.get(c) {
                    Some(v) if !v.is_empty() => Ok(v.to_string()),
                    _ => Err(Error::Parse { line, message: format!("empty {name}") }),
                }
            };
            let image_id = field(id_col, "image_id")?;
            let split = match split_col.and_then(|c| row.get(c)) {
                None | Some("") => None,
                Some("train") => Some(Split::Train),
                Some("test") => Some(Split::Test),
                Some(other) => {
                    return Err(Error::Parse { line, message: format!("unknown split '{other}' (expected train/test)") })
                }
            };
            if let Some(first) = seen.insert(image_id.clone(), line) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate image_id '{image_id}' (first seen on line {first})"),
                });
            }
            entries.push(ManifestEntry { image_id, path: field(path_col, "path")?, genre: field(genre_col, "genre")?, split });
        }
        if entries.is_empty() {
            return Err(Error::Parse { line: 1, message: "no entries".into() });
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_csv(std::fs::File::open(path)?)
    }
}

/// One image assigned to a binary task: label 1 for the target genre, 0 otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskExample {
    pub image_id: String,
    pub path: String,
    pub genre: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSplit {
    pub target_genre: String,
    pub train: Vec<TaskExample>,
    pub test: Vec<TaskExample>,
}

impl TaskSplit {
    /// CSV `image_id,label,split`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["image_id", "label", "split"])?;
        for (split, set) in [(Split::Train, &self.train), (Split::Test, &self.test)] {
            for ex in set {
                w.write_record([ex.image_id.as_str(), &ex.label.to_string(), split.as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-genre draw counts for `needed` negatives: as even as availability
/// allows, with the indivisible remainder given to a seeded choice of genres.
fn stratified_quotas(available: &[usize], needed: usize, rng: &mut XorShiftRng) -> Result<Vec<usize>> {
    let total: usize = available.iter().sum();
    if total < needed {
        return Err(Error::Capacity(format!("need {needed} negatives but only {total} are available")));
    }
    let mut quotas = vec![0; available.len()];
    let mut open: Vec<usize> = (0..available.len()).filter(|&g| available[g] > 0).collect();
    let mut remaining = needed;
    // Genres that cannot meet the even share give everything they have.
    loop {
        if open.is_empty() || remaining == 0 {
            break;
        }
        let share = remaining / open.len();
        let short: Vec<usize> = open.iter().copied().filter(|&g| available[g] <= share).collect();
        if short.is_empty() {
            break;
        }
        for &g in &short {
            quotas[g] = available[g];
            remaining -= available[g];
        }
        open.retain(|g| !short.contains(g));
    }
    if remaining > 0 {
        let share = remaining / open.len();
        let extra = remaining % open.len();
        for &g in &open {
            quotas[g] = share;
        }
        for pick in rng.sample_indices(open.len(), extra) {
            quotas[open[pick]] += 1;
        }
    }
    Ok(quotas)
}

fn sample_negatives<'a>(
    pool: &[&'a ManifestEntry],
    target: &str,
    needed: usize,
    rng: &mut XorShiftRng,
) -> Result<Vec<&'a ManifestEntry>> {
    let mut by_genre: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in pool.iter().filter(|e| e.genre != target) {
        by_genre.entry(&e.genre).or_default().push(e);
    }
    let groups: Vec<Vec<&ManifestEntry>> = by_genre.into_values().collect();
    let available: Vec<usize> = groups.iter().map(Vec::len).collect();
    let quotas = stratified_quotas(&available, needed, rng)?;
    let mut chosen = Vec::with_capacity(needed);
    for (group, quota) in groups.iter().zip(quotas) {
        chosen.extend(rng.sample_indices(group.len(), quota).into_iter().map(|i| group[i]));
    }
    Ok(chosen)
}

fn to_examples(entries: &[&ManifestEntry], label: usize) -> Vec<TaskExample> {
    entries
        .iter()
        .map(|e| TaskExample { image_id: e.image_id.clone(), path: e.path.clone(), genre: e.genre.clone(), label })
        .collect()
}

/// Balanced binary task for `target_genre`. Every target entry is a
/// positive; an equal number of negatives is drawn without replacement,
/// spread evenly over the other genres. Manifest `split` assignments are
/// honoured (each split balanced on its own); without them the positives and
/// negatives are each divided 90/10 by a seeded shuffle.
pub fn build_one_vs_others(manifest: &Manifest, target_genre: &str, seed: u64) -> Result<TaskSplit> {
    ensure!(
        manifest.genres().contains(target_genre),
        "unknown genre '{target_genre}' (known: {})",
        manifest.genres().iter().cloned().collect::<Vec<_>>().join(", ")
    );
    let mut rng = XorShiftRng::new(seed);
    let assigned = manifest.entries().iter().any(|e| e.split.is_some());

    let (train, test) = if assigned {
        let mut halves = Vec::new();
        for split in [Split::Train, Split::Test] {
            // Unassigned entries in a partially split manifest go to train.
            let pool: Vec<&ManifestEntry> =
                manifest.entries().iter().filter(|e| e.split.unwrap_or(Split::Train) == split).collect();
            let positives: Vec<&ManifestEntry> = pool.iter().copied().filter(|e| e.genre == target_genre).collect();
            let negatives = sample_negatives(&pool, target_genre, positives.len(), &mut rng)?;
            let mut set = to_examples(&positives, 1);
            set.extend(to_examples(&negatives, 0));
            halves.push(set);
        }
        let test = halves.pop().unwrap();
        (halves.pop().unwrap(), test)
    } else {
        let pool: Vec<&ManifestEntry> = manifest.entries().iter().collect();
        let mut positives: Vec<&ManifestEntry> = pool.iter().copied().filter(|e| e.genre == target_genre).collect();
        let mut negatives = sample_negatives(&pool, target_genre, positives.len(), &mut rng)?;
        rng.shuffle(&mut positives);
        rng.shuffle(&mut negatives);
        let n_train = (positives.len() as f64 * DEFAULT_TRAIN_FRACTION).round() as usize;
        let mut train = to_examples(&positives[..n_train], 1);
        train.extend(to_examples(&negatives[..n_train], 0));
        let mut test = to_examples(&positives[n_train..], 1);
        test.extend(to_examples(&negatives[n_train..], 0));
        (train, test)
    };
    ensure!(!train.is_empty(), "genre '{target_genre}' has no training images");
    Ok(TaskSplit { target_genre: target_genre.to_string(), train, test })
}
