//! Linear shape basis.
//!
//! Each cloud is vectorized point-major into a `D*N` column. The basis is
//! fitted on the mean-centred columns through the eigendecomposition of the
//! smaller of the two Gram matrices, and stored as `B` orthonormal rows plus
//! the mean. Row signs are fixed so the largest-magnitude entry is positive.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{PointCloud, ShapeDataset};
use crate::container::{Reader, Writer};
use crate::error::{Error, Result};

pub const DEFAULT_BASIS_SIZE: usize = 100;
pub const DEFAULT_BASIS_SIZE_WITH_NORMALS: usize = 200;
pub const DEFAULT_BASIS_SIZE_MIXED: usize = 300;

const BASIS_MAGIC: &[u8; 4] = b"KDSB";
const BASIS_VERSION: u32 = 1;

pub fn vectorize(cloud: &PointCloud) -> DVector<f64> {
    DVector::from_column_slice(cloud.as_slice())
}

pub fn devectorize(
    v: &DVector<f64>,
    n_points: usize,
    attr_dim: usize,
    schema: &[String],
) -> Result<PointCloud> {
    if v.len() != n_points * attr_dim {
        return Err(Error::dims(n_points * attr_dim, v.len()));
    }
    PointCloud::new(v.as_slice().to_vec(), attr_dim, schema.to_vec())
}

/// Column-stacked vectorized shapes, `(D*N) x S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMatrix {
    data: DMatrix<f64>,
    n_points: usize,
    attr_dim: usize,
    schema: Vec<String>,
}

impl ShapeMatrix {
    pub fn from_dataset(dataset: &ShapeDataset) -> Self {
        let n = dataset.n_points();
        let d = dataset.attr_dim();
        let data = DMatrix::from_fn(n * d, dataset.len(), |r, c| {
            dataset.clouds()[c].as_slice()[r]
        });
        ShapeMatrix {
            data,
            n_points: n,
            attr_dim: d,
            schema: dataset.schema().to_vec(),
        }
    }

    /// Wraps raw columns. The schema is a plain position/extra split used only
    /// when devectorizing.
    pub fn from_columns(
        data: DMatrix<f64>,
        n_points: usize,
        attr_dim: usize,
        schema: Vec<String>,
    ) -> Result<Self> {
        if data.nrows() != n_points * attr_dim {
            return Err(Error::dims(n_points * attr_dim, data.nrows()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InconsistentDataset("non-finite matrix entry".into()));
        }
        Ok(ShapeMatrix {
            data,
            n_points,
            attr_dim,
            schema,
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
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

    pub fn n_shapes(&self) -> usize {
        self.data.ncols()
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn column(&self, s: usize) -> DVector<f64> {
        self.data.column(s).into_owned()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.data.column_mean()
    }

    pub fn centered(&self) -> (DVector<f64>, DMatrix<f64>) {
        let mean = self.mean();
        let mut x = self.data.clone();
        for mut col in x.column_iter_mut() {
            col -= &mean;
        }
        (mean, x)
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues sorted non-increasing.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 0).ok_or(Error::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Top principal directions of centred data `x` (rows are coordinates),
/// returned as orthonormal rows with their singular values.
pub(crate) fn principal_directions(x: &DMatrix<f64>, b: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (dim, s) = x.shape();
    let gram_n = dim.min(s);
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(b);
    let mut sigmas = Vec::with_capacity(b);
    if b > 0 {
        let (values, vectors) = if s <= dim {
            sorted_eigen(x.tr_mul(x))?
        } else {
            sorted_eigen(x * x.transpose())?
        };
        let zero_tol = values[0].max(0.0) * gram_n as f64 * f64::EPSILON * 10.0;
        for k in 0..b {
            let lambda = values[k];
            if !(lambda > zero_tol) {
                break;
            }
            let u = if s <= dim {
                x * vectors.column(k)
            } else {
                vectors.column(k).into_owned()
            };
            match orthonormalize(u, &rows) {
                Some(u) => {
                    rows.push(u);
                    sigmas.push(lambda.sqrt());
                }
                None => break,
            }
        }
    }
    // complete with standard basis vectors for the null part of the spectrum
    let mut e = 0;
    while rows.len() < b {
        let mut u = DVector::zeros(dim);
        u[e] = 1.0;
        e += 1;
        if let Some(u) = orthonormalize(u, &rows) {
            rows.push(u);
            sigmas.push(0.0);
        }
        if e > dim {
            return Err(Error::ConvergenceFailure);
        }
    }
    let mut u = DMatrix::zeros(b, dim);
    for (k, mut row) in rows.into_iter().enumerate() {
        let (mut best, mut idx) = (0.0, 0);
        for (i, v) in row.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                idx = i;
            }
        }
        if row[idx] < 0.0 {
            row.neg_mut();
        }
        u.row_mut(k).copy_from(&row.transpose());
    }
    Ok((u, sigmas))
}

/// Two passes of modified Gram-Schmidt; `None` if `u` is (numerically) in the
/// span of `basis`.
fn orthonormalize(mut u: DVector<f64>, basis: &[DVector<f64>]) -> Option<DVector<f64>> {
    let start = u.norm();
    if !(start > 0.0) {
        return None;
    }
    for _ in 0..2 {
        for q in basis {
            let p = q.dot(&u);
            u.axpy(-p, q, 1.0);
        }
    }
    let len = u.norm();
    if len <= start * 1e-8 {
        return None;
    }
    Some(u / len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    n_points: usize,
    attr_dim: usize,
    n_shapes: usize,
    schema: Vec<String>,
    mean: DVector<f64>,
    /// `B x (D*N)`, orthonormal rows.
    components: DMatrix<f64>,
    singular_values: Vec<f64>,
}

/// All `min(D*N, S)` singular values of the centred shape matrix,
/// non-increasing.
pub fn singular_spectrum(matrix: &ShapeMatrix) -> Result<Vec<f64>> {
    let (_, x) = matrix.centered();
    let gram = if x.ncols() <= x.nrows() {
        x.tr_mul(&x)
    } else {
        &x * x.transpose()
    };
    let (values, _) = sorted_eigen(gram)?;
    Ok(values.into_iter().map(|v| v.max(0.0).sqrt()).collect())
}

pub fn fit_pca(matrix: &ShapeMatrix, basis_size: usize) -> Result<PcaBasis> {
    let s = matrix.n_shapes();
    if s < 2 {
        return Err(Error::EmptyDataset(format!(
            "need at least 2 shapes, got {s}"
        )));
    }
    let max = matrix.dim().min(s);
    if basis_size > max {
        return Err(Error::InvalidBasisSize {
            requested: basis_size,
            max,
        });
    }
    let (mean, x) = matrix.centered();
    let (components, singular_values) = principal_directions(&x, basis_size)?;
    Ok(PcaBasis {
        n_points: matrix.n_points,
        attr_dim: matrix.attr_dim,
        n_shapes: s,
        schema: matrix.schema.clone(),
        mean,
        components,
        singular_values,
    })
}

impl PcaBasis {
    pub fn from_parts(
        mean: DVector<f64>,
        components: DMatrix<f64>,
        singular_values: Vec<f64>,
        n_points: usize,
        attr_dim: usize,
        schema: Vec<String>,
        n_shapes: usize,
    ) -> Result<Self> {
        let dim = n_points * attr_dim;
        if mean.len() != dim {
            return Err(Error::dims(dim, mean.len()));
        }
        if components.ncols() != dim {
            return Err(Error::dims(dim, components.ncols()));
        }
        if singular_values.len() != components.nrows() {
            return Err(Error::dims(components.nrows(), singular_values.len()));
        }
        Ok(PcaBasis {
            n_points,
            attr_dim,
            n_shapes,
            schema,
            mean,
            components,
            singular_values,
        })
    }

    pub fn basis_size(&self) -> usize {
        self.components.nrows()
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

    pub fn n_shapes(&self) -> usize {
        self.n_shapes
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// The leading `b` rows.
    pub fn truncated(&self, b: usize) -> Result<Self> {
        if b > self.basis_size() {
            return Err(Error::InvalidBasisSize {
                requested: b,
                max: self.basis_size(),
            });
        }
        Ok(PcaBasis {
            components: self.components.rows(0, b).into_owned(),
            singular_values: self.singular_values[..b].to_vec(),
            ..self.clone()
        })
    }

    fn check(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::dims(self.dim(), v.len()));
        }
        Ok(())
    }

    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(v)?;
        Ok(&self.components * (v - &self.mean))
    }

    pub fn reconstruct(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        if coeffs.len() != self.basis_size() {
            return Err(Error::dims(self.basis_size(), coeffs.len()));
        }
        Ok(self.components.tr_mul(coeffs) + &self.mean)
    }

    /// Squared L2 distance between `v` and its reconstruction from its own
    /// projection.
    pub fn reconstruction_error(&self, v: &DVector<f64>) -> Result<f64> {
        let c = self.project(v)?;
        let r = self.reconstruct(&c)? - v;
        Ok(r.norm_squared())
    }

    pub fn to_cloud(&self, v: &DVector<f64>) -> Result<PointCloud> {
        devectorize(v, self.n_points, self.attr_dim, &self.schema)
    }

    /// Coefficients of every column, one shape per row (`S x B`).
    pub fn project_matrix(&self, matrix: &ShapeMatrix) -> Result<DMatrix<f64>> {
        if matrix.dim() != self.dim() {
            return Err(Error::dims(self.dim(), matrix.dim()));
        }
        let mut centred = matrix.data().clone();
        for mut col in centred.column_iter_mut() {
            col -= &self.mean;
        }
        Ok((&self.components * centred).transpose())
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
        let mut w = Writer::new(BASIS_MAGIC, BASIS_VERSION);
        w.usize(self.n_points);
        w.usize(self.attr_dim);
        w.usize(self.basis_size());
        w.usize(self.n_shapes);
        w.u32(self.schema.len() as u32);
        for s in &self.schema {
            w.str(s);
        }
        w.f64s(self.mean.as_slice());
        for r in 0..self.basis_size() {
            for c in 0..self.dim() {
                w.f64(self.components[(r, c)]);
            }
        }
        w.f64s(&self.singular_values);
        w.str(metadata);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        Ok(Self::from_bytes_with_metadata(buf)?.0)
    }

    pub fn from_bytes_with_metadata(buf: &[u8]) -> Result<(Self, String)> {
        let (mut r, version) = Reader::open(buf, BASIS_MAGIC)?;
        if version != BASIS_VERSION {
            return Err(Error::InvalidContainer(format!(
                "unsupported basis version {version}"
            )));
        }
        let n_points = r.usize()?;
        let attr_dim = r.usize()?;
        let b = r.usize()?;
        let n_shapes = r.usize()?;
        let n_schema = r.u32()?;
        let schema = (0..n_schema).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let dim = n_points
            .checked_mul(attr_dim)
            .ok_or_else(|| Error::InvalidContainer("dimension overflow".into()))?;
        let mean = DVector::from_vec(r.f64s(dim)?);
        let comps = r.f64s(
            b.checked_mul(dim)
                .ok_or_else(|| Error::InvalidContainer("size overflow".into()))?,
        )?;
        let components = DMatrix::from_row_slice(b, dim, &comps);
        let singular_values = r.f64s(b)?;
        let metadata = r.str()?;
        r.finish()?;
        Ok((
            Self::from_parts(
                mean,
                components,
                singular_values,
                n_points,
                attr_dim,
                schema,
                n_shapes,
            )?,
            metadata,
        ))
    }

    /// SHA-256 of the binary encoding, hex.
    pub fn content_hash(&self) -> String {
        hex_digest(&self.to_bytes())
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

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("basis serializes")
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
