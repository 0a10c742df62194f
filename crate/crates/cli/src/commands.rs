//! One function per CLI subcommand. Each returns the files it wrote.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kdshape::basis::{singular_spectrum, ShapeMatrix};
use kdshape::eval::{evaluate_models, GanSampler, PpcaSampler, Report, ShapeSampler};
use kdshape::gan::GanModel;
use kdshape::io::format_points;
use kdshape::ordering::{optimize_ordering, sort_cloud};
use kdshape::sampling::{load_mesh, sample_surface};
use kdshape::synth::{bimodal_coefficients, synth_shapes, SyntheticFamily};
use kdshape::{
    fit_pca, fit_ppca, normalize_cloud, seed, PcaBasis, PointCloud, PpcaModel, ShapeDataset,
    ShapeSet,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AttrMode, PipelineConfig};
use crate::dataset::{create_dir, read_dataset, write_dataset, write_text};
use crate::error::CliError;

pub const BASIS_FILE: &str = "basis.kdsb";
pub const GAN_FILE: &str = "gan.kdsg";
pub const PPCA_FILE: &str = "ppca.kdsp";

fn metadata(config: &PipelineConfig, command: &str) -> String {
    config.provenance(command).join("\n")
}

/// CSV text with `# ` provenance lines ahead of the header.
fn csv(config: &PipelineConfig, command: &str, header: &str, rows: &[String]) -> String {
    let mut out = String::new();
    for line in config.provenance(command) {
        writeln!(out, "# {line}").unwrap();
    }
    writeln!(out, "{header}").unwrap();
    for r in rows {
        writeln!(out, "{r}").unwrap();
    }
    out
}

fn list_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let matches = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case(extension));
        if path.is_file() && matches {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Blue-noise samples every OBJ mesh in `input`, normalizes the clouds and
/// writes them as an unsorted dataset. Shape `i` (in file-name order) uses
/// seed `derive(seed, "sample", i)`.
pub fn cmd_sample(
    input: &Path,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<PathBuf>, CliError> {
    let files = list_files(input, "obj")?;
    if files.is_empty() {
        return Err(
            kdshape::Error::EmptyDataset(format!("no .obj meshes in {}", input.display())).into(),
        );
    }
    let clouds = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let mesh = load_mesh(path)?;
            let mesh = match config.attributes {
                AttrMode::Xyz => mesh.without_normals(),
                AttrMode::XyzNormal if mesh.normals().is_none() => mesh.with_computed_normals(),
                AttrMode::XyzNormal => mesh,
            };
            let cloud = sample_surface(
                &mesh,
                config.n_points,
                seed::derive(config.seed, "sample", i as u64),
            )?;
            Ok(normalize_cloud(&cloud)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let ids = files
        .iter()
        .map(|p| {
            p.file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    write_dataset(
        out,
        &ShapeDataset::new(clouds, ids)?,
        None,
        "sample",
        config,
    )?;
    Ok(vec![out.to_path_buf()])
}

pub fn cmd_sort(
    input: &Path,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<PathBuf>, CliError> {
    let (dataset, _) = read_dataset(input)?;
    let sorted = dataset.map_clouds(|c| Ok(sort_cloud(c, config.ordering)))?;
    write_dataset(out, &sorted, Some(config.ordering), "sort", config)?;
    Ok(vec![out.to_path_buf()])
}

fn spectrum_rows(values: &[f64], cap: Option<usize>) -> Vec<String> {
    let total: f64 = values.iter().map(|s| s * s).sum();
    let mut cumulative = 0.0;
    values
        .iter()
        .take(cap.unwrap_or(usize::MAX))
        .enumerate()
        .map(|(k, s)| {
            let e = if total > 0.0 { s * s / total } else { 0.0 };
            cumulative += e;
            format!("{},{s},{e},{cumulative}", k + 1)
        })
        .collect()
}

/// PCA basis of size `basis_size` plus the full singular-value spectrum.
pub fn cmd_fit(
    input: &Path,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<PathBuf>, CliError> {
    let (dataset, _) = read_dataset(input)?;
    let matrix = ShapeMatrix::from_dataset(&dataset);
    let basis = fit_pca(&matrix, config.basis_size())?;
    let spectrum = singular_spectrum(&matrix)?;
    create_dir(out)?;
    let basis_path = out.join(BASIS_FILE);
    basis.save_with_metadata(&basis_path, &metadata(config, "fit"))?;
    let csv_path = out.join("spectrum.csv");
    let rows = spectrum_rows(&spectrum, config.spectrum_rows);
    write_text(
        &csv_path,
        &csv(
            config,
            "fit",
            "index,singular_value,energy_fraction,cumulative_energy",
            &rows,
        ),
    )?;
    Ok(vec![basis_path, csv_path])
}

/// Swap optimization of point orderings; writes the reordered dataset, the
/// refit basis and the error trace (row 0 is the error before any swap).
pub fn cmd_optimize(
    input: &Path,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<PathBuf>, CliError> {
    let (dataset, manifest) = read_dataset(input)?;
    let outcome = optimize_ordering(&dataset, config.basis_size(), &config.swap_schedule(), None)?;
    let dataset_dir = out.join("dataset");
    write_dataset(
        &dataset_dir,
        &outcome.dataset,
        manifest.ordering,
        "optimize",
        config,
    )?;
    let basis_path = out.join(BASIS_FILE);
    outcome
        .basis
        .save_with_metadata(&basis_path, &metadata(config, "optimize"))?;
    let mut rows = vec![format!("0,{}", outcome.initial_error)];
    for (t, e) in outcome.error_trace.iter().enumerate() {
        rows.push(format!("{},{e}", t + 1));
    }
    let trace_path = out.join("error_trace.csv");
    write_text(
        &trace_path,
        &csv(config, "optimize", "iteration,mean_error", &rows),
    )?;
    Ok(vec![dataset_dir, basis_path, trace_path])
}

pub enum TrainingData<'a> {
    Dataset { dataset: &'a Path, basis: &'a Path },
    Coefficients(&'a Path),
}

/// Reads coefficient rows from a CSV whose coefficient columns are named
/// `c0, c1, ...`; other columns and `#` lines are ignored.
pub fn read_coefficients(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty coefficient file", path.display())))?;
    let columns: Vec<usize> = header
        .split(',')
        .enumerate()
        .filter(|(_, name)| {
            let name = name.trim();
            name.len() > 1 && name.starts_with('c') && name[1..].chars().all(|c| c.is_ascii_digit())
        })
        .map(|(i, _)| i)
        .collect();
    if columns.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no c<k> columns",
            path.display()
        )));
    }
    let mut data = Vec::new();
    let mut n_rows = 0;
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        for &c in &columns {
            let v = fields
                .get(c)
                .and_then(|f| f.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "{}:{}: bad coefficient",
                        path.display(),
                        line_no + 1
                    ))
                })?;
            data.push(v);
        }
        n_rows += 1;
    }
    Ok(DMatrix::from_row_slice(n_rows, columns.len(), &data))
}

fn coefficient_csv(
    config: &PipelineConfig,
    command: &str,
    coeffs: &DMatrix<f64>,
    labels: Option<&[usize]>,
) -> String {
    let b = coeffs.ncols();
    let mut header: Vec<String> = vec!["index".into()];
    if labels.is_some() {
        header.push("label".into());
    }
    header.extend((0..b).map(|k| format!("c{k}")));
    let rows: Vec<String> = (0..coeffs.nrows())
        .map(|i| {
            let mut r = vec![i.to_string()];
            if let Some(l) = labels {
                r.push(l[i].to_string());
            }
            r.extend((0..b).map(|k| coeffs[(i, k)].to_string()));
            r.join(",")
        })
        .collect();
    csv(config, command, &header.join(","), &rows)
}

/// Trains the GAN on basis coefficients of a dataset (and binds the model to
/// that basis) or directly on a coefficient CSV.
pub fn cmd_train_gan(
    data: TrainingData<'_>,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<PathBuf>, CliError> {
    let (coeffs, basis) = match data {
        TrainingData::Dataset { dataset, basis } => {
            let (dataset, _) = read_dataset(dataset)?;
            let basis = PcaBasis::load(basis)?;
            let coeffs = basis.project_matrix(&ShapeMatrix::from_dataset(&dataset))?;
            (coeffs, Some(basis))
        }
        TrainingData::Coefficients(path) => (read_coefficients(path)?, None),
    };
    let mut model = GanModel::new(coeffs.ncols(), config.gan_config())?;
    model.train(&coeffs)?;
    if let Some(basis) = &basis {
        model.bind_basis(basis)?;
    }
    create_dir(out)?;
    let model_path = out.join(GAN_FILE);
    model.save_with_metadata(&model_path, &metadata(config, "train-gan"))?;
    let rows: Vec<String> = model
        .history()
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.epoch, r.disc_objective, r.gen_loss, r.disc_accuracy, r.disc_updates, r.steps
            )
        })
        .collect();
    let history_path = out.join("history.csv");
    write_text(
        &history_path,
        &csv(
            config,
            "train-gan",
            "epoch,disc_objective,gen_loss,disc_accuracy,disc_updates,steps",
            &rows,
        ),
    )?;
    Ok(vec![model_path, history_path])
}

pub fn cmd_train_ppca(
    input: &Path,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<PathBuf>, CliError> {
    let (dataset, _) = read_dataset(input)?;
    let model = fit_ppca(&ShapeMatrix::from_dataset(&dataset), config.basis_size())?;
    create_dir(out)?;
    let path = out.join(PPCA_FILE);
    model.save_with_metadata(&path, &metadata(config, "train-ppca"))?;
    Ok(vec![path])
}

pub enum Model {
    Gan(GanModel),
    Ppca(PpcaModel),
}

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    match bytes.get(..4) {
        Some(b"KDSG") => Ok(Model::Gan(GanModel::from_bytes(&bytes)?)),
        Some(b"KDSP") => Ok(Model::Ppca(PpcaModel::from_bytes(&bytes)?)),
        _ => Err(CliError::Data(format!(
            "{}: not a model file",
            path.display()
        ))),
    }
}

fn load_basis(path: Option<&Path>) -> Result<Option<PcaBasis>, CliError> {
    path.map(PcaBasis::load).transpose().map_err(CliError::from)
}

fn write_clouds(
    out: &Path,
    prefix: &str,
    clouds: &[PointCloud],
    config: &PipelineConfig,
    command: &str,
    renormalize: bool,
) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out)?;
    let format = config.point_format()?;
    clouds
        .par_iter()
        .enumerate()
        .map(|(k, cloud)| {
            let mut cloud = cloud.clone();
            if renormalize {
                cloud.renormalize_normals();
            }
            let path = out.join(format!("{prefix}_{k:04}.{}", format.extension()));
            let mut comments = config.provenance(command);
            comments.push(format!("{prefix} {k}"));
            write_text(&path, &format_points(&cloud, format, &comments)?)?;
            Ok(path)
        })
        .collect()
}

/// `count` shapes from a GAN (with its basis) or PPCA model, seeded by the
/// config seed. A GAN trained on bare coefficients without a basis writes
/// `coefficients.csv` instead.
pub fn cmd_generate(
    model: &Path,
    basis: Option<&Path>,
    count: usize,
    renormalize_normals: bool,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<PathBuf>, CliError> {
    let clouds = match load_model(model)? {
        Model::Ppca(m) => m.sample_clouds(count, config.seed)?,
        Model::Gan(m) => match load_basis(basis)? {
            Some(b) => m.generate(&b, count, config.seed)?,
            None if m.basis_hash().is_some() => {
                return Err(CliError::Usage(
                    "this model was trained against a basis; pass --basis".into(),
                ))
            }
            None => {
                create_dir(out)?;
                let coeffs = m.generate_coefficients(count, config.seed)?;
                let path = out.join("coefficients.csv");
                write_text(&path, &coefficient_csv(config, "generate", &coeffs, None))?;
                return Ok(vec![path]);
            }
        },
    };
    write_clouds(
        out,
        "sample",
        &clouds,
        config,
        "generate",
        renormalize_normals,
    )
}

pub enum Endpoints {
    /// Latent codes drawn as the first sample of `generate` under each seed.
    Seeds(u64, u64),
    Vectors(DVector<f64>, DVector<f64>),
}

/// Reads a latent vector: numbers separated by commas or whitespace.
pub fn read_vector(path: &Path) -> Result<DVector<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let values = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(DVector::from_vec(values))
}

pub fn cmd_interpolate(
    model: &Path,
    basis: &Path,
    endpoints: Endpoints,
    steps: usize,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<PathBuf>, CliError> {
    let Model::Gan(model) = load_model(model)? else {
        return Err(CliError::Usage("interpolation needs a GAN model".into()));
    };
    let basis = PcaBasis::load(basis)?;
    let (z1, z2) = match endpoints {
        Endpoints::Seeds(a, b) => (
            model.latent_codes(1, a).row(0).transpose(),
            model.latent_codes(1, b).row(0).transpose(),
        ),
        Endpoints::Vectors(a, b) => (a, b),
    };
    for z in [&z1, &z2] {
        if z.len() != model.z_dim() {
            return Err(kdshape::Error::DimensionMismatch {
                expected: model.z_dim(),
                actual: z.len(),
            }
            .into());
        }
    }
    let clouds = model.interpolate(&basis, &z1, &z2, steps)?;
    write_clouds(out, "interp", &clouds, config, "interpolate", false)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    provenance: Vec<String>,
    rows: &'a [kdshape::eval::ReportRow],
}

/// Set-distance report of each model against the training dataset.
pub fn cmd_evaluate(
    training: &Path,
    models: &[PathBuf],
    basis: Option<&Path>,
    out: &Path,
    config: &PipelineConfig,
) -> Result<(Vec<PathBuf>, Report), CliError> {
    if models.is_empty() {
        return Err(CliError::Usage("evaluate needs at least one model".into()));
    }
    let (dataset, _) = read_dataset(training)?;
    let training_set = ShapeSet::from_clouds("training", dataset.clouds())?;
    let basis = load_basis(basis)?;
    let loaded = models
        .iter()
        .map(|p| load_model(p))
        .collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = models
        .iter()
        .map(|p| {
            p.file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    let mut samplers: Vec<Box<dyn ShapeSampler + '_>> = Vec::new();
    for (model, name) in loaded.iter().zip(&names) {
        match model {
            Model::Gan(m) => {
                let basis = basis
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("GAN models need --basis".into()))?;
                samplers.push(Box::new(GanSampler {
                    name: name.clone(),
                    model: m,
                    basis,
                }));
            }
            Model::Ppca(m) => samplers.push(Box::new(PpcaSampler {
                name: name.clone(),
                model: m,
            })),
        }
    }
    let refs: Vec<&dyn ShapeSampler> = samplers.iter().map(|s| s.as_ref()).collect();
    let report = evaluate_models(&training_set, &refs, config.n_samples, config.seed)?;
    create_dir(out)?;
    let csv_path = out.join("report.csv");
    let mut text = String::new();
    for line in config.provenance("evaluate") {
        writeln!(text, "# {line}").unwrap();
    }
    text.push_str(&report.to_csv());
    write_text(&csv_path, &text)?;
    let json_path = out.join("report.json");
    let file = ReportFile {
        provenance: config.provenance("evaluate"),
        rows: &report.rows,
    };
    write_text(
        &json_path,
        &(serde_json::to_string_pretty(&file).expect("report serializes") + "\n"),
    )?;
    Ok((vec![csv_path, json_path], report))
}

/// Synthetic dataset (shape families) or coefficient table (bimodal-coeff).
pub fn cmd_synth(
    family: SyntheticFamily,
    out: &Path,
    config: &PipelineConfig,
) -> Result<Vec<PathBuf>, CliError> {
    let synth = config.synth_config(family);
    create_dir(out)?;
    if family == SyntheticFamily::BimodalCoeff {
        let (coeffs, labels) = bimodal_coefficients(&synth)?;
        let path = out.join("coefficients.csv");
        write_text(
            &path,
            &coefficient_csv(config, "synth", &coeffs, Some(&labels)),
        )?;
        return Ok(vec![path]);
    }
    let data = synth_shapes(&synth)?;
    let dataset_dir = out.join("dataset");
    write_dataset(&dataset_dir, &data.dataset, None, "synth", config)?;
    let rows: Vec<String> = data
        .dataset
        .shape_ids()
        .iter()
        .zip(data.labels.iter().zip(&data.parameters))
        .map(|(id, (l, p))| format!("{id},{l},{p}"))
        .collect();
    let labels_path = out.join("labels.csv");
    write_text(
        &labels_path,
        &csv(config, "synth", "id,label,parameter", &rows),
    )?;
    Ok(vec![dataset_dir, labels_path])
}
