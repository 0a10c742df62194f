//! On-disk dataset: one point file per shape plus `manifest.json`.

use std::fs;
use std::path::Path;

use kdshape::io::{format_points, parse_points, PointFormat};
use kdshape::ordering::OrderingStrategy;
use kdshape::ShapeDataset;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
const FORMAT_TAG: &str = "kdshape-dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub id: String,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub n_points: usize,
    pub attr_dim: usize,
    pub schema: Vec<String>,
    /// `None` for clouds in sampling order.
    pub ordering: Option<OrderingStrategy>,
    pub shapes: Vec<ShapeEntry>,
    pub command: String,
    pub seed: u64,
    pub config: PipelineConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_dataset(
    dir: &Path,
    dataset: &ShapeDataset,
    ordering: Option<OrderingStrategy>,
    command: &str,
    config: &PipelineConfig,
) -> Result<Manifest, CliError> {
    create_dir(dir)?;
    let format = config.point_format()?;
    let mut comments = config.provenance(command);
    comments.push(match ordering {
        Some(o) => format!("ordering {o}"),
        None => "ordering none".to_string(),
    });
    let shapes = dataset
        .clouds()
        .par_iter()
        .zip(dataset.shape_ids())
        .map(|(cloud, id)| {
            let file = format!("{id}.{}", format.extension());
            let mut lines = comments.clone();
            lines.push(format!("shape {id}"));
            let text = format_points(cloud, format, &lines)?;
            write_text(&dir.join(&file), &text)?;
            Ok(ShapeEntry {
                id: id.clone(),
                file,
                sha256: sha256_hex(text.as_bytes()),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        version: 1,
        n_points: dataset.n_points(),
        attr_dim: dataset.attr_dim(),
        schema: dataset.schema().to_vec(),
        ordering,
        shapes,
        command: command.into(),
        seed: config.seed,
        config: config.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&dir.join(MANIFEST), &(json + "\n"))?;
    Ok(manifest)
}

/// Loads and verifies a dataset directory: every file must match its
/// recorded hash and the recorded dimensions.
pub fn read_dataset(dir: &Path) -> Result<(ShapeDataset, Manifest), CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if manifest.format != FORMAT_TAG {
        return Err(CliError::Data(format!(
            "{}: not a dataset manifest",
            path.display()
        )));
    }
    let clouds = manifest
        .shapes
        .par_iter()
        .map(|entry| {
            let file = dir.join(&entry.file);
            let bytes = fs::read(&file).map_err(|e| CliError::io(&file, e))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(CliError::Data(format!(
                    "{}: content hash does not match the manifest",
                    file.display()
                )));
            }
            let format = PointFormat::from_path(&file).ok_or_else(|| {
                CliError::Data(format!("{}: unknown point format", file.display()))
            })?;
            let text = String::from_utf8(bytes)
                .map_err(|_| CliError::Data(format!("{}: not UTF-8", file.display())))?;
            let cloud = parse_points(&text, format)?;
            if cloud.n_points() != manifest.n_points || cloud.attr_dim() != manifest.attr_dim {
                return Err(CliError::Data(format!(
                    "{}: {} points x {} attributes, manifest says {} x {}",
                    file.display(),
                    cloud.n_points(),
                    cloud.attr_dim(),
                    manifest.n_points,
                    manifest.attr_dim
                )));
            }
            Ok(cloud)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let ids = manifest.shapes.iter().map(|s| s.id.clone()).collect();
    Ok((ShapeDataset::new(clouds, ids)?, manifest))
}
