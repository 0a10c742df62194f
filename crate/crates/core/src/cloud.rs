//! Point clouds, shape datasets and normalization.
//!
//! Points are stored point-major: the `D` attributes of point `i` occupy
//! `data[D*i .. D*i + D]`, and the first three are always `x, y, z`.
//! Normalization puts the centre of the xyz bounding box at the origin (not
//! the point centroid) and scales uniformly so the longest box side is 1.

use std::collections::HashSet;

use crate::error::{Error, Result};

pub const POSITION: &str = "position";
pub const NORMAL: &str = "normal";

/// Width in scalars of a named attribute. Unknown names are scalar channels.
pub fn attribute_width(name: &str) -> usize {
    match name {
        POSITION | NORMAL => 3,
        _ => 1,
    }
}

pub fn xyz_schema() -> Vec<String> {
    vec![POSITION.to_string()]
}

pub fn xyz_normal_schema() -> Vec<String> {
    vec![POSITION.to_string(), NORMAL.to_string()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: Vec<f64>,
    n_points: usize,
    attr_dim: usize,
    schema: Vec<String>,
}

impl PointCloud {
    pub fn new(data: Vec<f64>, attr_dim: usize, schema: Vec<String>) -> Result<Self> {
        if attr_dim < 3 {
            return Err(Error::AttributeMismatch(format!(
                "attribute dimension {attr_dim} is below 3"
            )));
        }
        if schema.first().map(String::as_str) != Some(POSITION) {
            return Err(Error::AttributeMismatch(
                "schema must start with \"position\"".into(),
            ));
        }
        let width: usize = schema.iter().map(|s| attribute_width(s)).sum();
        if width != attr_dim {
            return Err(Error::AttributeMismatch(format!(
                "schema {schema:?} has width {width}, attribute dimension is {attr_dim}"
            )));
        }
        if data.is_empty() || data.len() % attr_dim != 0 {
            return Err(Error::AttributeMismatch(format!(
                "{} values do not form whole points of dimension {attr_dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::AttributeMismatch(format!(
                "non-finite value in point {}",
                pos / attr_dim
            )));
        }
        Ok(PointCloud {
            n_points: data.len() / attr_dim,
            data,
            attr_dim,
            schema,
        })
    }

    pub fn from_xyz(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(points.iter().flatten().copied().collect(), 3, xyz_schema())
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

    /// Offset of the named attribute within a point record.
    pub fn attribute_offset(&self, name: &str) -> Option<usize> {
        let mut offset = 0;
        for s in &self.schema {
            if s == name {
                return Some(offset);
            }
            offset += attribute_width(s);
        }
        None
    }

    pub fn has_normals(&self) -> bool {
        self.attribute_offset(NORMAL).is_some()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.attr_dim..(i + 1) * self.attr_dim]
    }

    pub fn xyz(&self, i: usize) -> [f64; 3] {
        let p = self.point(i);
        [p[0], p[1], p[2]]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.attr_dim)
    }

    /// Point-major flat storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Returns the cloud with point `k` of the output taken from `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_points {
            return Err(Error::dims(self.n_points, order.len()));
        }
        let mut seen = vec![false; self.n_points];
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            if i >= self.n_points || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InconsistentDataset(
                    "ordering is not a permutation".into(),
                ));
            }
            data.extend_from_slice(self.point(i));
        }
        Ok(PointCloud {
            data,
            ..self.clone()
        })
    }

    /// Keeps only xyz.
    pub fn positions_only(&self) -> Self {
        let data = self.points().flat_map(|p| p[..3].to_vec()).collect();
        PointCloud {
            data,
            n_points: self.n_points,
            attr_dim: 3,
            schema: xyz_schema(),
        }
    }

    /// Rescales every normal sub-vector to unit length. Zero normals are left
    /// untouched.
    pub fn renormalize_normals(&mut self) {
        let Some(off) = self.attribute_offset(NORMAL) else {
            return;
        };
        for p in self.data.chunks_exact_mut(self.attr_dim) {
            let n = &mut p[off..off + 3];
            let len = n.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > 0.0 {
                n.iter_mut().for_each(|v| *v /= len);
            }
        }
    }

    /// Axis-aligned bounding box of the xyz components.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in self.points() {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}

/// Translates the bounding-box centre to the origin and scales the longest
/// side to 1. Only xyz is touched.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<PointCloud> {
    let (lo, hi) = cloud.bounding_box();
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(Error::DegenerateCloud(
            "all points coincide; bounding box has zero extent".into(),
        ));
    }
    let centre = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    let mut out = cloud.clone();
    for p in out.data.chunks_exact_mut(out.attr_dim) {
        for k in 0..3 {
            p[k] = (p[k] - centre[k]) / extent;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDataset {
    clouds: Vec<PointCloud>,
    shape_ids: Vec<String>,
}

impl ShapeDataset {
    pub fn new(clouds: Vec<PointCloud>, shape_ids: Vec<String>) -> Result<Self> {
        if clouds.len() != shape_ids.len() {
            return Err(Error::InconsistentDataset(format!(
                "{} clouds but {} shape ids",
                clouds.len(),
                shape_ids.len()
            )));
        }
        let Some(first) = clouds.first() else {
            return Err(Error::EmptyDataset("no shapes".into()));
        };
        for (c, id) in clouds.iter().zip(&shape_ids) {
            if c.n_points() != first.n_points() {
                return Err(Error::InconsistentDataset(format!(
                    "shape {id} has {} points, expected {}",
                    c.n_points(),
                    first.n_points()
                )));
            }
            if c.attr_dim() != first.attr_dim() || c.schema() != first.schema() {
                return Err(Error::InconsistentDataset(format!(
                    "shape {id} has attributes {:?}, expected {:?}",
                    c.schema(),
                    first.schema()
                )));
            }
        }
        let mut seen = HashSet::new();
        if let Some(dup) = shape_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::InconsistentDataset(format!(
                "duplicate shape id {dup}"
            )));
        }
        Ok(ShapeDataset { clouds, shape_ids })
    }

    /// Ids are `shape_0000`, `shape_0001`, ...
    pub fn from_clouds(clouds: Vec<PointCloud>) -> Result<Self> {
        let ids = (0..clouds.len()).map(|i| format!("shape_{i:04}")).collect();
        Self::new(clouds, ids)
    }

    pub fn clouds(&self) -> &[PointCloud] {
        &self.clouds
    }

    pub fn shape_ids(&self) -> &[String] {
        &self.shape_ids
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.clouds[0].n_points()
    }

    pub fn attr_dim(&self) -> usize {
        self.clouds[0].attr_dim()
    }

    pub fn schema(&self) -> &[String] {
        self.clouds[0].schema()
    }

    /// Applies `f` to every cloud, keeping ids.
    pub fn map_clouds<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&PointCloud) -> Result<PointCloud> + Sync + Send,
    {
        use rayon::prelude::*;
        let clouds = self.clouds.par_iter().map(f).collect::<Result<Vec<_>>>()?;
        Self::new(clouds, self.shape_ids.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn normalize_box_example() {
        let c = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [2.0, 1.0, 1.0], [1.0, 0.5, 0.2]]).unwrap();
        let n = normalize_cloud(&c).unwrap();
        let (lo, hi) = n.bounding_box();
        assert_eq!(lo, [-0.5, -0.25, -0.25]);
        assert_eq!(hi, [0.5, 0.25, 0.25]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let c = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [2.0, 1.0, 1.0], [1.0, 0.5, 0.2]]).unwrap();
        let once = normalize_cloud(&c).unwrap();
        assert_eq!(normalize_cloud(&once).unwrap(), once);
    }

    #[test]
    fn normalize_random_cube() {
        let mut rng = crate::seed::rng(11);
        let pts: Vec<[f64; 3]> = (0..100)
            .map(|_| {
                [
                    rng.random_range(3.0..7.0),
                    rng.random_range(3.0..7.0),
                    rng.random_range(3.0..7.0),
                ]
            })
            .collect();
        let n = normalize_cloud(&PointCloud::from_xyz(&pts).unwrap()).unwrap();
        let (lo, hi) = n.bounding_box();
        let mut longest: f64 = 0.0;
        for k in 0..3 {
            assert_close(lo[k] + hi[k], 0.0, 1e-9);
            longest = longest.max(hi[k] - lo[k]);
        }
        assert_close(longest, 1.0, 1e-9);
    }

    #[test]
    fn normalize_leaves_normals() {
        let c = PointCloud::new(
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 4.0, 2.0, 0.0, 1.0, 0.0, 0.0],
            6,
            xyz_normal_schema(),
        )
        .unwrap();
        let n = normalize_cloud(&c).unwrap();
        assert_eq!(&n.point(0)[3..], &[0.0, 0.0, 1.0]);
        assert_eq!(&n.point(1)[3..], &[1.0, 0.0, 0.0]);
        assert_eq!(n.xyz(1), [0.5, 0.25, 0.0]);
    }

    #[test]
    fn degenerate_cloud_rejected() {
        let c = PointCloud::from_xyz(&[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]).unwrap();
        assert!(matches!(
            normalize_cloud(&c),
            Err(Error::DegenerateCloud(_))
        ));
    }

    #[test]
    fn dataset_rejects_mixed_sizes() {
        let a = PointCloud::from_xyz(&[[0.0; 3], [1.0; 3]]).unwrap();
        let b = PointCloud::from_xyz(&[[0.0; 3], [1.0; 3], [2.0; 3]]).unwrap();
        let err = ShapeDataset::from_clouds(vec![a.clone(), b]).unwrap_err();
        assert!(matches!(err, Error::InconsistentDataset(_)));

        let c = PointCloud::new(vec![0.0; 12], 6, xyz_normal_schema()).unwrap();
        assert!(ShapeDataset::from_clouds(vec![a.clone(), c]).is_err());

        let dup = ShapeDataset::new(vec![a.clone(), a], vec!["x".into(), "x".into()]);
        assert!(matches!(dup, Err(Error::InconsistentDataset(_))));
    }

    #[test]
    fn schema_width_checked() {
        assert!(PointCloud::new(vec![0.0; 6], 6, xyz_schema()).is_err());
        assert!(PointCloud::new(vec![0.0, 0.0, f64::NAN], 3, xyz_schema()).is_err());
        let c = PointCloud::new(
            vec![0.0; 7],
            7,
            vec!["position".into(), "normal".into(), "intensity".into()],
        )
        .unwrap();
        assert_eq!(c.attribute_offset("intensity"), Some(6));
    }

    #[test]
    fn permuted_rejects_non_permutation() {
        let a = PointCloud::from_xyz(&[[0.0; 3], [1.0; 3]]).unwrap();
        assert!(a.permuted(&[0, 0]).is_err());
        assert_eq!(a.permuted(&[1, 0]).unwrap().xyz(0), [1.0; 3]);
    }
}
