//! Probabilistic PCA baseline: `y = W x + mu + eps`, `x ~ N(0, I)`,
//! `eps ~ N(0, sigma^2 I)`, fitted in closed form.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{devectorize, principal_directions, ShapeMatrix};
use crate::cloud::{attribute_width, PointCloud};
use crate::container::{Reader, Writer};
use crate::error::{Error, Result};
use crate::seed;

const MAGIC: &[u8; 4] = b"KDSP";
const VERSION: u32 = 1;

/// Floor on the noise variance so sampling stays defined on low-rank data.
pub const MIN_NOISE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcaModel {
    n_points: usize,
    attr_dim: usize,
    schema: Vec<String>,
    mean: DVector<f64>,
    /// `(D*N) x B` factor loadings.
    loadings: DMatrix<f64>,
    noise_variance: f64,
}

/// Closed-form maximum-likelihood fit. With `lambda_k` the eigenvalues of the
/// sample covariance (divisor `S`), `sigma^2` is the mean of the `D*N - B`
/// discarded eigenvalues and `W = U_B diag(sqrt(max(lambda_k - sigma^2, 0)))`.
pub fn fit_ppca(matrix: &ShapeMatrix, basis_size: usize) -> Result<PpcaModel> {
    let s = matrix.n_shapes();
    if s < 2 {
        return Err(Error::EmptyDataset(format!(
            "need at least 2 shapes, got {s}"
        )));
    }
    let dim = matrix.dim();
    let limit = dim.min(s);
    if basis_size >= limit {
        return Err(Error::InvalidBasisSize {
            requested: basis_size,
            max: limit - 1,
        });
    }
    let (mean, x) = matrix.centered();
    let (directions, sigmas) = principal_directions(&x, basis_size)?;
    let lambdas: Vec<f64> = sigmas.iter().map(|sv| sv * sv / s as f64).collect();
    let trace = x.norm_squared() / s as f64;
    let discarded = (trace - lambdas.iter().sum::<f64>()).max(0.0);
    let noise_variance = (discarded / (dim - basis_size) as f64).max(MIN_NOISE_VARIANCE);
    let mut loadings = directions.transpose();
    for (k, mut col) in loadings.column_iter_mut().enumerate() {
        col *= (lambdas[k] - noise_variance).max(0.0).sqrt();
    }
    PpcaModel::from_parts(
        mean,
        loadings,
        noise_variance,
        matrix.n_points(),
        matrix.attr_dim(),
        matrix.schema().to_vec(),
    )
}

impl PpcaModel {
    pub fn from_parts(
        mean: DVector<f64>,
        loadings: DMatrix<f64>,
        noise_variance: f64,
        n_points: usize,
        attr_dim: usize,
        schema: Vec<String>,
    ) -> Result<Self> {
        if mean.len() != n_points * attr_dim {
            return Err(Error::dims(n_points * attr_dim, mean.len()));
        }
        if loadings.nrows() != mean.len() {
            return Err(Error::dims(mean.len(), loadings.nrows()));
        }
        let width: usize = schema.iter().map(|a| attribute_width(a)).sum();
        if width != attr_dim {
            return Err(Error::dims(attr_dim, width));
        }
        if !(noise_variance > 0.0 && noise_variance.is_finite())
            || loadings.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidContainer(
                "noise variance must be positive and loadings finite".into(),
            ));
        }
        Ok(PpcaModel {
            n_points,
            attr_dim,
            schema,
            mean,
            loadings,
            noise_variance,
        })
    }

    pub fn basis_size(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn attr_dim(&self) -> usize {
        self.attr_dim
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Model covariance `W W^T + sigma^2 I`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut c = &self.loadings * self.loadings.transpose();
        for i in 0..self.dim() {
            c[(i, i)] += self.noise_variance;
        }
        c
    }

    /// Draw `k` of a sample stream; draws are independent of how many are taken.
    pub fn sample_one(&self, seed: u64, k: usize) -> DVector<f64> {
        let mut rng = seed::derived_rng(seed, "ppca-sample", k as u64);
        let x = DVector::from_fn(self.basis_size(), |_, _| StandardNormal.sample(&mut rng));
        let sd = self.noise_variance.sqrt();
        let mut y = &self.loadings * x + &self.mean;
        for v in y.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += sd * e;
        }
        y
    }

    pub fn sample(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        (0..count).map(|k| self.sample_one(seed, k)).collect()
    }

    pub fn sample_clouds(&self, count: usize, seed: u64) -> Result<Vec<PointCloud>> {
        self.sample(count, seed)
            .iter()
            .map(|v| devectorize(v, self.n_points, self.attr_dim, &self.schema))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.encode("")
    }

    /// Encoding with a free-form text annotation (for provenance); the
    /// annotation does not affect decoding of the model itself.
    pub fn to_bytes_with_metadata(&self, metadata: &str) -> Vec<u8> {
        self.encode(metadata)
    }

    fn encode(&self, metadata: &str) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.usize(self.n_points);
        w.usize(self.attr_dim);
        w.usize(self.basis_size());
        w.u32(self.schema.len() as u32);
        for s in &self.schema {
            w.str(s);
        }
        w.f64s(self.mean.as_slice());
        w.f64s(self.loadings.as_slice());
        w.f64(self.noise_variance);
        w.str(metadata);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        Ok(Self::from_bytes_with_metadata(buf)?.0)
    }

    pub fn from_bytes_with_metadata(buf: &[u8]) -> Result<(Self, String)> {
        let (mut r, version) = Reader::open(buf, MAGIC)?;
        if version != VERSION {
            return Err(Error::InvalidContainer(format!(
                "unsupported ppca version {version}"
            )));
        }
        let n_points = r.usize()?;
        let attr_dim = r.usize()?;
        let b = r.usize()?;
        let n_schema = r.u32()?;
        let schema = (0..n_schema).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let dim = n_points
            .checked_mul(attr_dim)
            .ok_or_else(|| Error::InvalidContainer("dimension overflow".into()))?;
        let mean = DVector::from_vec(r.f64s(dim)?);
        let len = dim
            .checked_mul(b)
            .ok_or_else(|| Error::InvalidContainer("size overflow".into()))?;
        let loadings = DMatrix::from_column_slice(dim, b, &r.f64s(len)?);
        let noise_variance = r.f64()?;
        let metadata = r.str()?;
        r.finish()?;
        Ok((
            Self::from_parts(mean, loadings, noise_variance, n_points, attr_dim, schema)?,
            metadata,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn save_with_metadata(&self, path: &Path, metadata: &str) -> Result<()> {
        fs::write(path, self.to_bytes_with_metadata(metadata)).map_err(|e| Error::io(path, e))
    }

    pub fn load_with_metadata(path: &Path) -> Result<(Self, String)> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes_with_metadata(&buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
