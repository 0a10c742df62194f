//! Seeded synthetic datasets.
//!
//! * `box-aspect`: axis-aligned boxes with dimensions `(1, r, 1)`, where `r` is
//!   drawn from a two-component Gaussian mixture (by default `N(1, 0.1)` and
//!   `N(4, 0.3)`, equal weights, clamped to at least 0.1). Each box is
//!   blue-noise sampled and normalized.
//! * `two-cluster-chairs-toy`: a `1 x t x 1` seat slab with a `1 x h x t`
//!   backrest on its rear edge; `h` is drawn from `N(0.4, 0.05)` or
//!   `N(1.2, 0.1)` with equal weights.
//! * `bimodal-coeff`: coefficient vectors (no shapes), isotropic Gaussian
//!   clusters at `+c` and `-c` in every coordinate.
//!
//! Shape `i` draws its parameters from `derived_rng(seed, "synth-params", i)`
//! and its surface samples from `derive(seed, "synth-shape", i)`, so datasets
//! are identical however they are scheduled.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{normalize_cloud, PointCloud, ShapeDataset};
use crate::error::{Error, Result};
use crate::sampling::{box_mesh, sample_surface, TriangleMesh};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticFamily {
    BoxAspect,
    TwoClusterChairsToy,
    BimodalCoeff,
}

impl SyntheticFamily {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticFamily::BoxAspect => "box-aspect",
            SyntheticFamily::TwoClusterChairsToy => "two-cluster-chairs-toy",
            SyntheticFamily::BimodalCoeff => "bimodal-coeff",
        }
    }
}

impl fmt::Display for SyntheticFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SyntheticFamily::BoxAspect,
            SyntheticFamily::TwoClusterChairsToy,
            SyntheticFamily::BimodalCoeff,
        ]
        .into_iter()
        .find(|f| f.name() == s)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown synthetic family {s:?}")))
    }
}

/// One mixture component: `(mean, standard deviation)`.
pub type Mode = (f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub family: SyntheticFamily,
    pub n_shapes: usize,
    pub n_points: usize,
    pub seed: u64,
    /// Probability of the first mixture component.
    pub mode_weight: f64,
    /// Box `y` extent (box-aspect) or backrest height (chairs).
    pub modes: [Mode; 2],
    /// Coefficient dimension (bimodal-coeff).
    pub coeff_dim: usize,
    /// Cluster centre magnitude and spread (bimodal-coeff).
    pub cluster_offset: f64,
    pub cluster_sd: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::box_aspect(200, 256)
    }
}

impl SynthConfig {
    pub fn box_aspect(n_shapes: usize, n_points: usize) -> Self {
        SynthConfig {
            family: SyntheticFamily::BoxAspect,
            n_shapes,
            n_points,
            seed: 0,
            mode_weight: 0.5,
            modes: [(1.0, 0.1), (4.0, 0.3)],
            coeff_dim: 2,
            cluster_offset: 3.0,
            cluster_sd: 0.5,
        }
    }

    pub fn chairs(n_shapes: usize, n_points: usize) -> Self {
        SynthConfig {
            family: SyntheticFamily::TwoClusterChairsToy,
            modes: [(0.4, 0.05), (1.2, 0.1)],
            ..Self::box_aspect(n_shapes, n_points)
        }
    }

    pub fn bimodal_coeff(n_shapes: usize) -> Self {
        SynthConfig {
            family: SyntheticFamily::BimodalCoeff,
            n_points: 0,
            ..Self::box_aspect(n_shapes, 0)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_shapes < 2 {
            return Err(Error::EmptyDataset(format!(
                "synthetic dataset needs at least 2 shapes, got {}",
                self.n_shapes
            )));
        }
        if !(0.0..=1.0).contains(&self.mode_weight) {
            return Err(Error::InvalidConfig(
                "mode weight must lie in [0, 1]".into(),
            ));
        }
        if self
            .modes
            .iter()
            .any(|&(m, sd)| !(m.is_finite() && sd >= 0.0 && sd.is_finite()))
        {
            return Err(Error::InvalidConfig(
                "mode means must be finite and deviations non-negative".into(),
            ));
        }
        match self.family {
            SyntheticFamily::BimodalCoeff => {
                if self.coeff_dim == 0 || !(self.cluster_sd >= 0.0) {
                    return Err(Error::InvalidConfig(
                        "coefficient clusters need a positive dimension".into(),
                    ));
                }
            }
            _ => {
                if self.n_points == 0 {
                    return Err(Error::InvalidConfig("point count must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Mixture label and parameter value of shape `i`.
    pub fn draw(&self, i: usize) -> (usize, f64) {
        let mut rng = seed::derived_rng(self.seed, "synth-params", i as u64);
        let label = usize::from(rng.random::<f64>() >= self.mode_weight);
        let (mean, sd) = self.modes[label];
        let value = mean + sd * Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
        (label, value)
    }
}

/// A generated shape dataset with the mixture label and parameter per shape.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dataset: ShapeDataset,
    pub labels: Vec<usize>,
    pub parameters: Vec<f64>,
}

fn translated(mesh: &TriangleMesh, offset: [f64; 3]) -> Vec<[f64; 3]> {
    mesh.vertices()
        .iter()
        .map(|v| [v[0] + offset[0], v[1] + offset[1], v[2] + offset[2]])
        .collect()
}

/// Seat of thickness `t` in `y` with a backrest of height `h` on its `-z` edge.
pub fn chair_mesh(height: f64, thickness: f64) -> Result<TriangleMesh> {
    let seat = box_mesh([1.0, thickness, 1.0]);
    let back = box_mesh([1.0, height, thickness]);
    let mut vertices = seat.vertices().to_vec();
    vertices.extend(translated(
        &back,
        [0.0, 0.5 * (height + thickness), 0.5 * (thickness - 1.0)],
    ));
    let mut faces = seat.faces().to_vec();
    faces.extend(back.faces().iter().map(|f| f.map(|i| i + 8)));
    TriangleMesh::new(vertices, faces, None)
}

fn shape_mesh(config: &SynthConfig, value: f64) -> Result<TriangleMesh> {
    match config.family {
        SyntheticFamily::BoxAspect => Ok(box_mesh([1.0, value.max(0.1), 1.0])),
        SyntheticFamily::TwoClusterChairsToy => chair_mesh(value.max(0.05), 0.1),
        SyntheticFamily::BimodalCoeff => Err(Error::InvalidConfig(
            "bimodal-coeff produces coefficients, not shapes".into(),
        )),
    }
}

/// Shape families: sampled, normalized (unsorted) clouds.
pub fn synth_shapes(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let drawn: Vec<(usize, f64)> = (0..config.n_shapes).map(|i| config.draw(i)).collect();
    let clouds = drawn
        .par_iter()
        .enumerate()
        .map(|(i, &(_, value))| {
            let mesh = shape_mesh(config, value)?;
            let cloud = sample_surface(
                &mesh,
                config.n_points,
                seed::derive(config.seed, "synth-shape", i as u64),
            )?;
            normalize_cloud(&cloud)
        })
        .collect::<Result<Vec<PointCloud>>>()?;
    Ok(SynthDataset {
        dataset: ShapeDataset::from_clouds(clouds)?,
        labels: drawn.iter().map(|d| d.0).collect(),
        parameters: drawn.iter().map(|d| d.1).collect(),
    })
}

/// `n_shapes x coeff_dim` coefficient rows and their cluster labels
/// (0 for the `+offset` cluster).
pub fn bimodal_coefficients(config: &SynthConfig) -> Result<(DMatrix<f64>, Vec<usize>)> {
    config.validate()?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = DMatrix::zeros(config.n_shapes, config.coeff_dim);
    let mut labels = Vec::with_capacity(config.n_shapes);
    for i in 0..config.n_shapes {
        let mut rng = seed::derived_rng(config.seed, "synth-params", i as u64);
        let label = usize::from(rng.random::<f64>() >= config.mode_weight);
        let centre = if label == 0 {
            config.cluster_offset
        } else {
            -config.cluster_offset
        };
        for j in 0..config.coeff_dim {
            rows[(i, j)] = centre + config.cluster_sd * normal.sample(&mut rng);
        }
        labels.push(label);
    }
    Ok((rows, labels))
}

/// Intrinsic rank of [`transposed_correspondence`].
pub const TRANSPOSED_RANK: usize = 2;

/// A family with exact correspondences and rank-2 variation: shape `s` is
/// `base + a_s u + b_s v` for fixed random fields `u`, `v`. Shape 0 then has
/// its two closest points transposed, so at `B = 2` an ordering optimizer
/// must undo that one swap to reach zero reconstruction error.
pub fn transposed_correspondence(
    n_shapes: usize,
    n_points: usize,
    seed: u64,
) -> Result<ShapeDataset> {
    if n_shapes <= TRANSPOSED_RANK || n_points < 2 {
        return Err(Error::EmptyDataset(format!(
            "transposed family needs more than {TRANSPOSED_RANK} shapes and 2 points"
        )));
    }
    let mut rng = seed::derived_rng(seed, "transposed", 0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let dim = 3 * n_points;
    let base: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let u: Vec<f64> = (0..dim).map(|_| 0.3 * normal.sample(&mut rng)).collect();
    let v: Vec<f64> = (0..dim).map(|_| 0.3 * normal.sample(&mut rng)).collect();
    let mut clouds = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let (a, b) = (normal.sample(&mut rng), normal.sample(&mut rng));
        let data = (0..dim).map(|k| base[k] + a * u[k] + b * v[k]).collect();
        clouds.push(PointCloud::new(data, 3, crate::cloud::xyz_schema())?);
    }
    let first = &clouds[0];
    let mut closest = (f64::INFINITY, 0, 1);
    for i in 0..n_points {
        for j in i + 1..n_points {
            let (p, q) = (first.xyz(i), first.xyz(j));
            let d = (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>();
            if d < closest.0 {
                closest = (d, i, j);
            }
        }
    }
    let mut order: Vec<usize> = (0..n_points).collect();
    order.swap(closest.1, closest.2);
    clouds[0] = first.permuted(&order)?;
    ShapeDataset::from_clouds(clouds)
}
