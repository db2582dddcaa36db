//! Image corpora: manifests, decoding, label-fraction subsets and the
//! synthetic shape corpus used for fast deterministic runs.

mod cifar;
mod folder;
mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::PathBuf;

use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{self, tag};

pub use cifar::{encode_records, CIFAR10_CLASSES};
pub use synthetic::{make_synthetic_corpus, render_synthetic, SyntheticSpec, SHAPE_NAMES};

pub const MIN_IMAGE_SIZE: u32 = 32;

/// A decoded 8-bit RGB image with its (optional) label.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: RgbImage,
    pub label: Option<usize>,
    pub sample_id: String,
}

impl ImageSample {
    pub fn new(pixels: RgbImage, label: Option<usize>, sample_id: impl Into<String>) -> Result<Self> {
        let sample_id = sample_id.into();
        if pixels.width() < MIN_IMAGE_SIZE || pixels.height() < MIN_IMAGE_SIZE {
            return Err(Error::Format(format!(
                "{sample_id}: image {}x{} is below the {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE} minimum",
                pixels.width(),
                pixels.height()
            )));
        }
        Ok(Self {
            pixels,
            label,
            sample_id,
        })
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// Where the pixels for a manifest entry live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Locator {
    File { path: PathBuf },
    CifarRecord { path: PathBuf, index: usize },
    Synthetic { spec: SyntheticSpec, index: usize },
}

impl Locator {
    /// Flat string form used in the JSON-lines export.
    pub fn to_path_string(&self) -> String {
        match self {
            Locator::File { path } => path.display().to_string(),
            Locator::CifarRecord { path, index } => format!("{}#{index}", path.display()),
            Locator::Synthetic { spec, index } => format!(
                "synthetic://n={};size={};classes={};seed={}#{index}",
                spec.n, spec.image_size, spec.num_classes, spec.seed
            ),
        }
    }

    pub fn parse_path_string(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("synthetic://") {
            let (params, index) = rest
                .rsplit_once('#')
                .ok_or_else(|| Error::Format(format!("synthetic locator without index: {s}")))?;
            let mut kv = BTreeMap::new();
            for part in params.split(';') {
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| Error::Format(format!("bad synthetic parameter `{part}`")))?;
                let v: u64 = v
                    .parse()
                    .map_err(|_| Error::Format(format!("bad synthetic value `{part}`")))?;
                kv.insert(k.to_string(), v);
            }
            let get = |k: &str| {
                kv.get(k)
                    .copied()
                    .ok_or_else(|| Error::Format(format!("synthetic locator missing `{k}`")))
            };
            return Ok(Locator::Synthetic {
                spec: SyntheticSpec {
                    n: get("n")? as usize,
                    image_size: get("size")? as u32,
                    num_classes: get("classes")? as usize,
                    seed: get("seed")?,
                },
                index: parse_index(index, s)?,
            });
        }
        if let Some((path, index)) = s.rsplit_once('#') {
            if path.ends_with(".bin") {
                return Ok(Locator::CifarRecord {
                    path: PathBuf::from(path),
                    index: parse_index(index, s)?,
                });
            }
        }
        Ok(Locator::File {
            path: PathBuf::from(s),
        })
    }
}

fn parse_index(index: &str, whole: &str) -> Result<usize> {
    index
        .parse()
        .map_err(|_| Error::Format(format!("bad record index in `{whole}`")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub locator: Locator,
    pub label: Option<usize>,
}

/// Ordered, immutable description of a corpus. Entries are always sorted by
/// `sample_id`, so seeded selections do not depend on directory listing order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub num_classes: usize,
    pub split: SplitTag,
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    pub fn new(
        mut entries: Vec<ManifestEntry>,
        num_classes: usize,
        split: SplitTag,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyDataset("manifest has no entries".into()));
        }
        entries.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.sample_id.as_str()) {
                return Err(Error::Format(format!("duplicate sample id `{}`", e.sample_id)));
            }
            if let Some(l) = e.label {
                if l >= num_classes {
                    return Err(Error::Format(format!(
                        "{}: label {l} outside [0, {num_classes})",
                        e.sample_id
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            num_classes,
            split,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for e in &self.entries {
            if let Some(l) = e.label {
                counts[l] += 1;
            }
        }
        counts
    }

    pub fn class_name(&self, class: usize) -> String {
        self.class_names
            .get(class)
            .cloned()
            .unwrap_or_else(|| class.to_string())
    }

    pub fn is_labeled(&self) -> bool {
        self.entries.iter().all(|e| e.label.is_some())
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    pub(crate) fn subset(&self, keep: impl Fn(&ManifestEntry) -> bool, split: SplitTag) -> Result<Self> {
        let entries = self.entries.iter().filter(|e| keep(e)).cloned().collect();
        Self::new(entries, self.num_classes, split, self.class_names.clone())
    }

    /// Writes one JSON object per line with `sample_id`, `path` and `label`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.entries {
            let line = JsonlEntry {
                sample_id: e.sample_id.clone(),
                path: e.locator.to_path_string(),
                label: e.label,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R, split: SplitTag) -> Result<Self> {
        let mut entries = Vec::new();
        let mut max_label = None::<usize>;
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<manifest>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonlEntry = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?;
            max_label = max_label.max(rec.label);
            entries.push(ManifestEntry {
                sample_id: rec.sample_id,
                locator: Locator::parse_path_string(&rec.path)?,
                label: rec.label,
            });
        }
        let num_classes = max_label.map_or(0, |m| m + 1);
        Self::new(entries, num_classes, split, Vec::new())
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlEntry {
    sample_id: String,
    path: String,
    label: Option<usize>,
}

/// Source description accepted by [`load_manifest`].
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// `root/<class_name>/<file>.{png,jpg}`
    Folder { root: PathBuf, split: SplitTag },
    /// Directory holding CIFAR-10 `data_batch_*.bin` / `test_batch.bin`, or a single `.bin` file.
    CifarBinary { root: PathBuf, split: SplitTag },
    Synthetic(SyntheticSpec),
}

/// Serializable dataset reference used by run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetRef {
    /// Training corpus from `seed`; the evaluation corpus is a disjoint one of
    /// `eval_n` images drawn from a derived seed.
    Synthetic {
        n: usize,
        image_size: u32,
        num_classes: usize,
        seed: u64,
        eval_n: usize,
    },
    CifarBinary { root: PathBuf },
    Folder { train_root: PathBuf, eval_root: PathBuf },
}

impl Default for DatasetRef {
    fn default() -> Self {
        DatasetRef::Synthetic {
            n: 1000,
            image_size: 32,
            num_classes: 10,
            seed: 0,
            eval_n: 500,
        }
    }
}

impl DatasetRef {
    /// `Train` selects the training corpus; `Val` and `Test` the evaluation corpus.
    pub fn source(&self, split: SplitTag) -> DatasetSource {
        let eval = split != SplitTag::Train;
        match self {
            DatasetRef::Synthetic {
                n,
                image_size,
                num_classes,
                seed,
                eval_n,
            } => DatasetSource::Synthetic(SyntheticSpec {
                n: if eval { *eval_n } else { *n },
                image_size: *image_size,
                num_classes: *num_classes,
                seed: if eval { seeding::derive_seed(*seed, &[tag::SPLIT]) } else { *seed },
            }),
            DatasetRef::CifarBinary { root } => DatasetSource::CifarBinary {
                root: root.clone(),
                split: if eval { SplitTag::Test } else { SplitTag::Train },
            },
            DatasetRef::Folder { train_root, eval_root } => DatasetSource::Folder {
                root: if eval { eval_root.clone() } else { train_root.clone() },
                split: if eval { SplitTag::Test } else { SplitTag::Train },
            },
        }
    }

    pub fn load(&self, split: SplitTag) -> Result<DatasetManifest> {
        let m = load_manifest(&self.source(split))?;
        Ok(if split == SplitTag::Train { m } else { m.with_split(split) })
    }
}

pub fn load_manifest(source: &DatasetSource) -> Result<DatasetManifest> {
    match source {
        DatasetSource::Folder { root, split } => folder::load(root, *split),
        DatasetSource::CifarBinary { root, split } => cifar::load(root, *split),
        DatasetSource::Synthetic(spec) => make_synthetic_corpus(spec.n, spec.image_size, spec.num_classes, spec.seed),
    }
}

/// Decodes every entry of the manifest into memory, in manifest order.
pub fn materialize(manifest: &DatasetManifest) -> Result<Vec<ImageSample>> {
    let mut cifar_files: BTreeMap<PathBuf, Vec<u8>> = BTreeMap::new();
    manifest
        .entries
        .iter()
        .map(|e| {
            let pixels = match &e.locator {
                Locator::File { path } => folder::decode(path)?,
                Locator::CifarRecord { path, index } => {
                    if !cifar_files.contains_key(path) {
                        let bytes = std::fs::read(path).map_err(|err| Error::io(path, err))?;
                        cifar_files.insert(path.clone(), bytes);
                    }
                    cifar::decode_record(&cifar_files[path], *index, path)?
                }
                Locator::Synthetic { spec, index } => render_synthetic(spec, *index).0,
            };
            ImageSample::new(pixels, e.label, e.sample_id.clone())
        })
        .collect()
}

/// Label-fraction selection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelFractionSpec {
    pub fraction: f64,
    pub per_class_balanced: bool,
    pub seed: u64,
}

impl LabelFractionSpec {
    pub fn balanced(fraction: f64, seed: u64) -> Self {
        Self {
            fraction,
            per_class_balanced: true,
            seed,
        }
    }
}

/// `ceil(fraction * count)`, guarded against float noise such as
/// `0.1 * 50 = 5.000000000000001`.
fn fraction_count(fraction: f64, count: usize) -> usize {
    let raw = fraction * count as f64;
    (raw - 1e-9).ceil().max(0.0) as usize
}

pub fn subsample_labels(manifest: &DatasetManifest, spec: &LabelFractionSpec) -> Result<DatasetManifest> {
    if !(spec.fraction > 0.0 && spec.fraction <= 1.0) {
        return Err(Error::Config(format!(
            "label fraction must lie in (0, 1], got {}",
            spec.fraction
        )));
    }
    if !manifest.is_labeled() {
        return Err(Error::LabelMismatch("subsampling requires a fully labeled manifest".into()));
    }
    let mut chosen: HashSet<&str> = HashSet::new();
    if spec.per_class_balanced {
        let mut by_class: Vec<Vec<&ManifestEntry>> = vec![Vec::new(); manifest.num_classes];
        for e in &manifest.entries {
            by_class[e.label.expect("checked labeled")].push(e);
        }
        for (class, mut members) in by_class.into_iter().enumerate() {
            let take = fraction_count(spec.fraction, members.len());
            if take == 0 {
                return Err(Error::Underflow {
                    class: manifest.class_name(class),
                    fraction: spec.fraction,
                });
            }
            let mut rng = seeding::stream(spec.seed, &[tag::SUBSAMPLE, class as u64]);
            members.shuffle(&mut rng);
            chosen.extend(members[..take].iter().map(|e| e.sample_id.as_str()));
        }
    } else {
        let take = fraction_count(spec.fraction, manifest.len()).max(1);
        let mut all: Vec<&ManifestEntry> = manifest.entries.iter().collect();
        let mut rng = seeding::stream(spec.seed, &[tag::SUBSAMPLE, u64::MAX]);
        all.shuffle(&mut rng);
        chosen.extend(all[..take].iter().map(|e| e.sample_id.as_str()));
    }
    manifest.subset(|e| chosen.contains(e.sample_id.as_str()), manifest.split)
}

/// Seeded, per-class balanced hold-out split. Returns `(train, val)`.
pub fn split_manifest(
    manifest: &DatasetManifest,
    val_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("val fraction must lie in (0, 1), got {val_fraction}")));
    }
    let mut groups: BTreeMap<Option<usize>, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &manifest.entries {
        groups.entry(e.label).or_default().push(e);
    }
    let mut val: HashSet<&str> = HashSet::new();
    for (key, mut members) in groups {
        let mut rng = seeding::stream(seed, &[tag::SPLIT, key.map_or(u64::MAX, |k| k as u64)]);
        members.shuffle(&mut rng);
        let take = fraction_count(val_fraction, members.len()).min(members.len().saturating_sub(1));
        val.extend(members[..take].iter().map(|e| e.sample_id.as_str()));
    }
    let train = manifest.subset(|e| !val.contains(e.sample_id.as_str()), SplitTag::Train)?;
    let val = manifest.subset(|e| val.contains(e.sample_id.as_str()), SplitTag::Val)?;
    Ok((train, val))
}
