//! Dataset ingestion, manifests and stratified splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::taxonomy::{LabelTaxonomy, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub category: usize,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub taxonomy: LabelTaxonomy,
    pub entries: Vec<ManifestEntry>,
    pub total: usize,
    #[serde(default)]
    pub source_root: PathBuf,
}

/// A file that was found under a category directory but could not be decoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub manifest: DatasetManifest,
    pub skipped: Vec<SkippedFile>,
}

/// Hex-encoded SHA-256 of a byte string.
pub fn content_checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Scans `root` for one directory per category and records every decodable
/// image below it.
pub fn ingest(root: &Path, taxonomy: &LabelTaxonomy) -> Result<Ingested> {
    let mut category_dirs: Vec<(usize, PathBuf, String)> = Vec::new();
    let read = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for dirent in read {
        let dirent = dirent.map_err(|e| Error::io(root, e))?;
        let path = dirent.path();
        let name = dirent.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !path.is_dir() {
            continue;
        }
        let category = taxonomy.resolve(&name).ok_or_else(|| Error::UnknownCategory { name: name.clone() })?;
        category_dirs.push((category, path, name));
    }

    let present: BTreeSet<usize> = category_dirs.iter().map(|(c, _, _)| *c).collect();
    if present.len() != category_dirs.len() {
        return Err(Error::Config("two directories resolve to the same category".into()));
    }
    if let Some(missing) = (0..taxonomy.len()).find(|c| !present.contains(c)) {
        return Err(Error::Config(format!(
            "missing category directory for {:?}",
            taxonomy.name(missing).unwrap_or_default()
        )));
    }

    let mut candidates: Vec<(usize, String, PathBuf)> = Vec::new();
    for (category, dir, dir_name) in &category_dirs {
        collect_files(dir, dir_name, *category, &mut candidates)?;
    }

    let results: Vec<std::result::Result<ManifestEntry, SkippedFile>> = candidates
        .par_iter()
        .map(|(category, rel, path)| {
            let bytes = fs::read(path).map_err(|e| SkippedFile { path: rel.clone(), reason: e.to_string() })?;
            decode_check(&bytes).map_err(|reason| SkippedFile { path: rel.clone(), reason })?;
            Ok(ManifestEntry {
                id: rel.clone(),
                path: rel.clone(),
                category: *category,
                checksum: content_checksum(&bytes),
            })
        })
        .collect();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(e) => entries.push(e),
            Err(s) => skipped.push(s),
        }
    }
    entries.sort_by(|a, b| (a.category, &a.path).cmp(&(b.category, &b.path)));
    skipped.sort_by(|a, b| a.path.cmp(&b.path));
    for s in &skipped {
        log::warn!("skipping {}: {}", s.path, s.reason);
    }

    Ok(Ingested {
        manifest: DatasetManifest {
            taxonomy: taxonomy.clone(),
            total: entries.len(),
            entries,
            source_root: root.to_path_buf(),
        },
        skipped,
    })
}

fn collect_files(dir: &Path, rel_prefix: &str, category: usize, out: &mut Vec<(usize, String, PathBuf)>) -> Result<()> {
    let mut children: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    children.sort_by_key(|d| d.file_name());
    for child in children {
        let name = child.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        let path = child.path();
        let rel = format!("{rel_prefix}/{name}");
        if path.is_dir() {
            collect_files(&path, &rel, category, out)?;
        } else {
            out.push((category, rel, path));
        }
    }
    Ok(())
}

fn decode_check(bytes: &[u8]) -> std::result::Result<(), String> {
    image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map(|_| ())
        .map_err(|e| e.to_string())
}

impl DatasetManifest {
    pub fn empty(taxonomy: LabelTaxonomy) -> Self {
        Self { taxonomy, entries: Vec::new(), total: 0, source_root: PathBuf::new() }
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Self = read_json(path)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total != self.entries.len() {
            return Err(Error::Config(format!("manifest total {} != {} entries", self.total, self.entries.len())));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.category >= NUM_CLASSES {
                return Err(Error::Label(format!("{} has category {}", e.id, e.category)));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Config(format!("duplicate sample id {}", e.id)));
            }
        }
        Ok(())
    }
}

/// Per-category sample counts in taxonomy order.
pub fn category_distribution(manifest: &DatasetManifest) -> [usize; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for e in &manifest.entries {
        counts[e.category] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(Error::Config(format!("unknown partition {other:?}"))),
        }
    }
}

pub const SPLIT_RATIOS: [f64; 3] = [0.7, 0.2, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub assignment: BTreeMap<String, Partition>,
    /// Categories too small to stratify; all of their samples are in train.
    #[serde(skip)]
    pub warnings: Vec<String>,
}

/// Sizes `(train, val, test)` of the stratified split of a category with `n`
/// samples.
pub fn partition_sizes(n: usize) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    let test = n / 10;
    let val = n / 5;
    (n - val - test, val, test)
}

/// Stratified 70/20/10 split with a seeded per-category shuffle.
pub fn split(manifest: &DatasetManifest, seed: u64) -> Result<SplitAssignment> {
    if manifest.entries.is_empty() {
        return Err(Error::Empty("cannot split an empty manifest".into()));
    }
    let mut by_category: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for e in &manifest.entries {
        by_category.entry(e.category).or_default().push(&e.id);
    }

    let mut assignment = BTreeMap::new();
    let mut warnings = Vec::new();
    for (category, mut ids) in by_category {
        ids.sort_unstable();
        let n = ids.len();
        if n < 3 {
            let msg = format!(
                "category {} has only {n} samples; all assigned to train",
                manifest.taxonomy.name(category).unwrap_or("?")
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, category as u64));
        ids.shuffle(&mut rng);
        let (_, n_val, n_test) = partition_sizes(n);
        for (i, id) in ids.into_iter().enumerate() {
            let part = if i < n_test {
                Partition::Test
            } else if i < n_test + n_val {
                Partition::Val
            } else {
                Partition::Train
            };
            assignment.insert(id.to_string(), part);
        }
    }

    Ok(SplitAssignment { seed, ratios: SPLIT_RATIOS, assignment, warnings })
}

impl SplitAssignment {
    /// Sample ids of one partition, in manifest order.
    pub fn ids<'a>(&self, manifest: &'a DatasetManifest, part: Partition) -> Vec<&'a str> {
        manifest.entries.iter().filter(|e| self.assignment.get(&e.id) == Some(&part)).map(|e| e.id.as_str()).collect()
    }

    pub fn counts(&self) -> BTreeMap<Partition, usize> {
        let mut out = BTreeMap::new();
        for p in self.assignment.values() {
            *out.entry(*p).or_default() += 1;
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// SplitMix64 finalizer over two words; used wherever a child seed is derived
/// from a parent seed.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(b).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
