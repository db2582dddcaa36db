use std::path::{Path, PathBuf};

use image::RgbImage;

use super::{DatasetManifest, Locator, ManifestEntry, SplitTag};
use crate::error::{Error, Result};

pub const RECORD_LEN: usize = 3073;
const SIDE: u32 = 32;
const PLANE: usize = 1024;

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

fn batch_files(root: &Path, split: SplitTag) -> Result<Vec<PathBuf>> {
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let listing = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut files = Vec::new();
    for entry in listing {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let wanted = match split {
            SplitTag::Train => name.starts_with("data_batch_") && name.ends_with(".bin"),
            SplitTag::Test | SplitTag::Val => name == "test_batch.bin",
        };
        if wanted {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub(super) fn load(root: &Path, split: SplitTag) -> Result<DatasetManifest> {
    let files = batch_files(root, split)?;
    let mut entries = Vec::new();
    let mut max_label = 0usize;
    for path in &files {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % RECORD_LEN != 0 {
            return Err(Error::Format(format!(
                "{}: length {} is not a multiple of {RECORD_LEN}-byte records",
                path.display(),
                bytes.len()
            )));
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cifar");
        for (index, record) in bytes.chunks_exact(RECORD_LEN).enumerate() {
            let label = record[0] as usize;
            max_label = max_label.max(label);
            entries.push(ManifestEntry {
                sample_id: format!("{stem}-{index:05}"),
                locator: Locator::CifarRecord {
                    path: path.clone(),
                    index,
                },
                label: Some(label),
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!("no CIFAR records under {}", root.display())));
    }
    let num_classes = max_label + 1;
    let names = if num_classes <= CIFAR10_CLASSES.len() {
        CIFAR10_CLASSES[..num_classes].iter().map(|s| s.to_string()).collect()
    } else {
        Vec::new()
    };
    DatasetManifest::new(entries, num_classes, split, names)
}

/// Record layout: one label byte, then the R, G and B planes (row-major 32x32 each).
pub(super) fn decode_record(bytes: &[u8], index: usize, path: &Path) -> Result<RgbImage> {
    let record = bytes
        .get(index * RECORD_LEN..(index + 1) * RECORD_LEN)
        .ok_or_else(|| Error::Format(format!("{}: record {index} out of range", path.display())))?;
    let planes = &record[1..];
    let mut img = RgbImage::new(SIDE, SIDE);
    for (i, px) in img.pixels_mut().enumerate() {
        px.0 = [planes[i], planes[PLANE + i], planes[2 * PLANE + i]];
    }
    Ok(img)
}

/// Serializes `(label, image)` pairs in the CIFAR binary layout.
pub fn encode_records(records: &[(u8, RgbImage)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_LEN);
    for (label, img) in records {
        assert_eq!(img.dimensions(), (SIDE, SIDE), "CIFAR records are 32x32");
        out.push(*label);
        for c in 0..3 {
            out.extend(img.pixels().map(|p| p.0[c]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_manifest, materialize, DatasetSource};

    fn img(seed: u8) -> RgbImage {
        RgbImage::from_fn(32, 32, |x, y| image::Rgb([seed, x as u8, y as u8]))
    }

    #[test]
    fn reads_records_in_plane_order() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<(u8, RgbImage)> = (0..5).map(|i| (i % 3, img(i * 10))).collect();
        std::fs::write(dir.path().join("data_batch_1.bin"), encode_records(&recs[..3])).unwrap();
        std::fs::write(dir.path().join("data_batch_2.bin"), encode_records(&recs[3..])).unwrap();
        std::fs::write(dir.path().join("test_batch.bin"), encode_records(&recs[..1])).unwrap();

        let src = DatasetSource::CifarBinary {
            root: dir.path().to_path_buf(),
            split: SplitTag::Train,
        };
        let m = load_manifest(&src).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(m.num_classes, 3);
        let samples = materialize(&m).unwrap();
        for (s, (label, want)) in samples.iter().zip(&recs) {
            assert_eq!(s.label, Some(*label as usize));
            assert_eq!(&s.pixels, want);
        }

        let test = load_manifest(&DatasetSource::CifarBinary {
            root: dir.path().to_path_buf(),
            split: SplitTag::Test,
        })
        .unwrap();
        assert_eq!(test.len(), 1);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("data_batch_1.bin"), vec![0u8; RECORD_LEN + 7]).unwrap();
        let err = load_manifest(&DatasetSource::CifarBinary {
            root: dir.path().to_path_buf(),
            split: SplitTag::Train,
        })
        .unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn empty_directory_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_manifest(&DatasetSource::CifarBinary {
            root: dir.path().to_path_buf(),
            split: SplitTag::Train,
        })
        .unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }
}
