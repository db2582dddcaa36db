use std::path::Path;

use image::{ImageDecoder, ImageReader, RgbImage};

use super::{DatasetManifest, Locator, ManifestEntry, SplitTag};
use crate::error::{Error, Result};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn channel_count(path: &Path) -> Result<u8> {
    let decoder = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .into_decoder()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok(decoder.color_type().channel_count())
}

pub(super) fn load(root: &Path, split: SplitTag) -> Result<DatasetManifest> {
    let listing = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut class_dirs = Vec::new();
    for entry in listing {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() {
            class_dirs.push(path);
        }
    }
    class_dirs.sort();

    let mut class_names = Vec::new();
    let mut entries = Vec::new();
    let mut channels: Option<(u8, String)> = None;
    for dir in &class_dirs {
        let class = class_names.len();
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let mut files = Vec::new();
        for f in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let p = f.map_err(|e| Error::io(dir, e))?.path();
            if p.is_file() && is_image(&p) {
                files.push(p);
            }
        }
        if files.is_empty() {
            continue;
        }
        files.sort();
        for path in files {
            let file = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let sample_id = format!("{name}/{file}");
            let count = channel_count(&path)?;
            match &channels {
                None => channels = Some((count, sample_id.clone())),
                Some((first, first_id)) if *first != count => {
                    return Err(Error::Format(format!(
                        "mixed channel counts: {first_id} has {first}, {sample_id} has {count}"
                    )))
                }
                Some(_) => {}
            }
            entries.push(ManifestEntry {
                sample_id,
                locator: Locator::File { path },
                label: Some(class),
            });
        }
        class_names.push(name);
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!("no images under {}", root.display())));
    }
    DatasetManifest::new(entries, class_names.len(), split, class_names)
}

pub(super) fn decode(path: &Path) -> Result<RgbImage> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok(img.to_rgb8())
}
