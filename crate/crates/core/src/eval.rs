//! Set distance between training and generated shapes, and model reports.
//!
//! `d(T, S) = mean_t min_s |t - s| + mean_s min_t |t - s|`, where the norm is
//! Euclidean over whole vectorized shapes.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{vectorize, PcaBasis};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::gan::GanModel;
use crate::ppca::PpcaModel;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSet {
    label: String,
    dim: usize,
    /// Row-major, one shape per row.
    data: Vec<f64>,
}

impl ShapeSet {
    pub fn new(label: impl Into<String>, shapes: &[DVector<f64>]) -> Result<Self> {
        let label = label.into();
        let first = shapes
            .first()
            .ok_or_else(|| Error::EmptySet(label.clone()))?;
        let dim = first.len();
        let mut data = Vec::with_capacity(dim * shapes.len());
        for s in shapes {
            if s.len() != dim {
                return Err(Error::dims(dim, s.len()));
            }
            data.extend_from_slice(s.as_slice());
        }
        Ok(ShapeSet { label, dim, data })
    }

    pub fn from_clouds(label: impl Into<String>, clouds: &[PointCloud]) -> Result<Self> {
        let shapes: Vec<DVector<f64>> = clouds.iter().map(vectorize).collect();
        Self::new(label, &shapes)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn shapes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_vectors(&self) -> Vec<DVector<f64>> {
        self.shapes().map(DVector::from_column_slice).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetDistance {
    pub total: f64,
    /// Mean distance from each training shape to its nearest generated shape.
    pub training_to_generated: f64,
    /// Mean distance from each generated shape to its nearest training shape.
    pub generated_to_training: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn mean_nearest(from: &ShapeSet, to: &ShapeSet) -> f64 {
    let mins: Vec<f64> = (0..from.len())
        .into_par_iter()
        .map(|i| {
            let a = from.shape(i);
            to.shapes()
                .map(|b| euclidean(a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    mins.iter().sum::<f64>() / mins.len() as f64
}

/// Exact brute force over all pairs.
pub fn set_distance(training: &ShapeSet, generated: &ShapeSet) -> Result<SetDistance> {
    for set in [training, generated] {
        if set.is_empty() {
            return Err(Error::EmptySet(set.label.clone()));
        }
    }
    if training.dim != generated.dim {
        return Err(Error::dims(training.dim, generated.dim));
    }
    let t = mean_nearest(training, generated);
    let s = mean_nearest(generated, training);
    Ok(SetDistance {
        total: t + s,
        training_to_generated: t,
        generated_to_training: s,
    })
}

/// Anything that can draw vectorized shapes for evaluation.
pub trait ShapeSampler: Sync {
    fn name(&self) -> &str;
    fn basis_size(&self) -> usize;
    fn sample(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>>;
}

pub struct GanSampler<'a> {
    pub name: String,
    pub model: &'a GanModel,
    pub basis: &'a PcaBasis,
}

impl ShapeSampler for GanSampler<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn basis_size(&self) -> usize {
        self.model.coeff_dim()
    }

    fn sample(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        self.model.check_basis(self.basis)?;
        let coeffs = self.model.generate_coefficients(count, seed)?;
        (0..count)
            .map(|i| self.basis.reconstruct(&coeffs.row(i).transpose()))
            .collect()
    }
}

pub struct PpcaSampler<'a> {
    pub name: String,
    pub model: &'a PpcaModel,
}

impl ShapeSampler for PpcaSampler<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn basis_size(&self) -> usize {
        self.model.basis_size()
    }

    fn sample(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        Ok(self.model.sample(count, seed))
    }
}

/// Replays a fixed set cyclically; with the training set it scores 0.
pub struct CopySampler {
    pub name: String,
    pub set: ShapeSet,
}

impl ShapeSampler for CopySampler {
    fn name(&self) -> &str {
        &self.name
    }

    fn basis_size(&self) -> usize {
        0
    }

    fn sample(&self, count: usize, _seed: u64) -> Result<Vec<DVector<f64>>> {
        let n = self.set.len();
        Ok((0..count)
            .map(|i| DVector::from_column_slice(self.set.shape(i % n)))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub basis_size: usize,
    pub distance: f64,
    pub term_t_to_s: f64,
    pub term_s_to_t: f64,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str = "model,basis_size,distance,term_T_to_S,term_S_to_T,n_samples,seed";

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.model,
                r.basis_size,
                r.distance,
                r.term_t_to_s,
                r.term_s_to_t,
                r.n_samples,
                r.seed
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("report serializes")
    }
}

/// Draws `n_samples` from every sampler and scores each against `training`.
pub fn evaluate_models(
    training: &ShapeSet,
    samplers: &[&dyn ShapeSampler],
    n_samples: usize,
    seed: u64,
) -> Result<Report> {
    let mut rows = Vec::with_capacity(samplers.len());
    for sampler in samplers {
        let shapes = sampler.sample(n_samples, seed)?;
        let generated = ShapeSet::new(sampler.name(), &shapes)?;
        let d = set_distance(training, &generated)?;
        rows.push(ReportRow {
            model: sampler.name().to_string(),
            basis_size: sampler.basis_size(),
            distance: d.total,
            term_t_to_s: d.training_to_generated,
            term_s_to_t: d.generated_to_training,
            n_samples,
            seed,
        });
    }
    Ok(Report { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(label: &str, rows: &[&[f64]]) -> ShapeSet {
        let v: Vec<DVector<f64>> = rows.iter().map(|r| DVector::from_column_slice(r)).collect();
        ShapeSet::new(label, &v).unwrap()
    }

    #[test]
    fn identical_sets_are_at_zero() {
        let t = set("t", &[&[0.0, 1.0], &[2.0, 3.0]]);
        assert_eq!(set_distance(&t, &t).unwrap().total, 0.0);
    }

    #[test]
    fn one_dimensional_toy() {
        let d = set_distance(&set("t", &[&[0.0]]), &set("s", &[&[3.0]])).unwrap();
        assert_eq!(d.total, 6.0);
        assert_eq!(d.training_to_generated, 3.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(ShapeSet::new("e", &[]), Err(Error::EmptySet(_))));
        let a = set("a", &[&[0.0]]);
        let b = set("b", &[&[0.0, 1.0]]);
        assert!(matches!(
            set_distance(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn copy_sampler_scores_zero() {
        let t = set("t", &[&[0.0, 1.0], &[2.0, 3.0], &[5.0, 5.0]]);
        let copy = CopySampler {
            name: "copy".into(),
            set: t.clone(),
        };
        let report = evaluate_models(&t, &[&copy], 3, 0).unwrap();
        assert_eq!(report.rows[0].distance, 0.0);
        let csv = report.to_csv();
        assert!(csv.starts_with(REPORT_HEADER));
        assert_eq!(csv.lines().nth(1).unwrap(), "copy,0,0,0,0,3,0");
    }
}
