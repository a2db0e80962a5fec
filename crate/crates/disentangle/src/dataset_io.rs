//! Dataset cache files and image-folder ingestion.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use disentangle_core::{Dataset, Sample};
use image::imageops::FilterType;
use log::warn;

use crate::container;
use crate::error::{AppError, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"DSNTDATA";
pub const DATASET_VERSION: u32 = 1;

pub fn dataset_to_bytes(ds: &Dataset) -> Vec<u8> {
    container::encode(DATASET_MAGIC, DATASET_VERSION, ds)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let ds: Dataset = container::decode(DATASET_MAGIC, DATASET_VERSION, bytes)
        .map_err(|reason| AppError::DatasetLoad { version: DATASET_VERSION, reason })?;
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    container::write_atomic(path, &dataset_to_bytes(ds))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(AppError::DatasetNotFound(path.to_path_buf()));
    }
    dataset_from_bytes(&container::read(path)?)
}

/// What [`load_image_folder`] read.
#[derive(Debug)]
pub struct FolderLoad {
    pub dataset: Dataset,
    /// Class directory names, in label order.
    pub class_names: Vec<String>,
    /// Files that could not be decoded as images.
    pub skipped: usize,
}

/// Reads `<root>/<class>/<image>` into a dataset. Labels follow the sorted
/// class names; images are resized (no crop) to `image_size` and scaled to
/// [0, 1]. Every identity label is 0 unless `id_labels` names a CSV file with
/// `path,id` rows, paths relative to `root`.
pub fn load_image_folder(root: &Path, image_size: usize, channels: usize, id_labels: Option<&Path>) -> Result<FolderLoad> {
    if !root.is_dir() {
        return Err(AppError::DatasetNotFound(root.to_path_buf()));
    }
    if channels != 1 && channels != 3 {
        return Err(AppError::Config(format!("channels must be 1 or 3, got {channels}")));
    }
    let ids = match id_labels {
        Some(p) => Some(read_id_labels(p)?),
        None => None,
    };

    let mut class_dirs: Vec<_> = read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir()).collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(AppError::Config(format!("{} has no class directories", root.display())));
    }

    let mut samples = Vec::new();
    let mut class_names = Vec::new();
    let mut skipped = 0;
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let files: Vec<_> = read_dir_sorted(dir)?.into_iter().filter(|p| p.is_file()).collect();
        let before = samples.len();
        for file in files {
            let img = match image::open(&file) {
                Ok(img) => img,
                Err(e) => {
                    warn!("skipping {}: {e}", file.display());
                    skipped += 1;
                    continue;
                }
            };
            let rel = file.strip_prefix(root).unwrap_or(&file).to_string_lossy().replace('\\', "/");
            let id_label = match &ids {
                Some(map) => *map
                    .get(&rel)
                    .ok_or_else(|| AppError::Config(format!("no identity label for {rel}")))?,
                None => 0,
            };
            samples.push(Sample { image: to_pixels(&img, image_size, channels), exp_label: label, id_label });
        }
        if samples.len() == before {
            return Err(AppError::Config(format!("class directory {} contains no readable images", dir.display())));
        }
        class_names.push(name);
    }

    let n_id_classes = samples.iter().map(|s| s.id_label + 1).max().unwrap_or(1);
    let dataset = Dataset { image_size, channels, n_exp_classes: class_names.len(), n_id_classes, samples, spec: None };
    dataset.validate()?;
    Ok(FolderLoad { dataset, class_names, skipped })
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| AppError::io(format!("listing {}", dir.display()), e))?;
    let mut out = Vec::new();
    for entry in entries {
        out.push(entry.map_err(|e| AppError::io(format!("listing {}", dir.display()), e))?.path());
    }
    out.sort();
    Ok(out)
}

fn read_id_labels(path: &Path) -> Result<BTreeMap<String, usize>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let (Some(file), Some(id)) = (record.get(0), record.get(1)) else {
            return Err(AppError::Config(format!("{}: expected rows of `path,id`", path.display())));
        };
        let id = id
            .trim()
            .parse()
            .map_err(|_| AppError::Config(format!("{}: bad identity label {id:?}", path.display())))?;
        map.insert(file.trim().to_string(), id);
    }
    Ok(map)
}

/// Resizes to `size` x `size` and returns row-major pixels in [0, 1].
pub fn to_pixels(img: &image::DynamicImage, size: usize, channels: usize) -> Vec<f64> {
    let side = size as u32;
    let resized = img.resize_exact(side, side, FilterType::Triangle);
    if channels == 1 {
        resized.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
    } else {
        resized.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
    }
}

/// Reads a single image file as a one-image batch.
pub fn load_image(path: &Path, size: usize, channels: usize) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(AppError::Config(format!("image not found: {}", path.display())));
    }
    Ok(to_pixels(&image::open(path)?, size, channels))
}
