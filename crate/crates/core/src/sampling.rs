//! Blue-noise sampling of triangle mesh surfaces.
//!
//! Dart throwing with a hash-grid neighbour check. The rejection radius starts
//! at `initial_slack * r_est` with `r_est = sqrt(area / (n * pi))` and is
//! multiplied by `relaxation` every time `failure_budget * n` consecutive darts
//! are rejected, so the output always has exactly `n` points. Sample normals are
//! the barycentric interpolation of the vertex normals, re-normalized.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::cloud::{xyz_normal_schema, xyz_schema, PointCloud};
use crate::error::{Error, Result};
use crate::io::{parse_floats, read_text};

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: V3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn dist2(a: V3, b: V3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<V3>,
    faces: Vec<[usize; 3]>,
    normals: Option<Vec<V3>>,
}

impl TriangleMesh {
    /// Faces of zero area are kept but never sampled.
    pub fn new(
        vertices: Vec<V3>,
        faces: Vec<[usize; 3]>,
        normals: Option<Vec<V3>>,
    ) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if let Some(f) = faces
            .iter()
            .find(|f| f.iter().any(|&i| i >= vertices.len()))
        {
            return Err(Error::InconsistentDataset(format!(
                "face {f:?} references a vertex beyond {}",
                vertices.len()
            )));
        }
        if let Some(n) = &normals {
            if n.len() != vertices.len() {
                return Err(Error::dims(vertices.len(), n.len()));
            }
        }
        let mesh = TriangleMesh {
            vertices,
            faces,
            normals,
        };
        if !(mesh.total_area() > 0.0) {
            return Err(Error::EmptyMesh);
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[V3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> Option<&[V3]> {
        self.normals.as_deref()
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.corners(f);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn corners(&self, f: usize) -> [V3; 3] {
        let [i, j, k] = self.faces[f];
        [self.vertices[i], self.vertices[j], self.vertices[k]]
    }

    /// Area-weighted vertex normals (unnormalized face cross products summed
    /// per vertex, then normalized).
    pub fn with_computed_normals(mut self) -> Self {
        let mut acc = vec![[0.0; 3]; self.vertices.len()];
        for f in 0..self.faces.len() {
            let [a, b, c] = self.corners(f);
            let n = cross(sub(b, a), sub(c, a));
            for &v in &self.faces[f] {
                for k in 0..3 {
                    acc[v][k] += n[k];
                }
            }
        }
        for n in &mut acc {
            let len = norm(*n);
            if len > 0.0 {
                n.iter_mut().for_each(|x| *x /= len);
            }
        }
        self.normals = Some(acc);
        self
    }
}

/// Reads `v`, `vn` and `f` records. Polygons are fan-triangulated. When the
/// file has exactly one `vn` per `v` they are used as vertex normals,
/// otherwise area-weighted normals are computed.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    parse_obj_mesh(&read_text(path)?)
}

pub fn parse_obj_mesh(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut tokens = raw.split_whitespace();
        let tag = tokens.next();
        let rest: Vec<&str> = tokens.collect();
        match tag {
            Some("v") | Some("vn") => {
                if rest.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        message: "expected 3 coordinates".into(),
                    });
                }
                let p = parse_floats(&rest[..3], line)?;
                let p = [p[0], p[1], p[2]];
                if tag == Some("v") {
                    vertices.push(p);
                } else {
                    normals.push(p);
                }
            }
            Some("f") => {
                if rest.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        message: "face needs at least 3 vertices".into(),
                    });
                }
                let idx = rest
                    .iter()
                    .map(|t| resolve_index(t, vertices.len(), line))
                    .collect::<Result<Vec<_>>>()?;
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if normals.len() == vertices.len() {
        TriangleMesh::new(vertices, faces, Some(normals))
    } else {
        Ok(TriangleMesh::new(vertices, faces, None)?.with_computed_normals())
    }
}

fn resolve_index(token: &str, n_vertices: usize, line: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let bad = || Error::Parse {
        line,
        message: format!("invalid face index {token:?}"),
    };
    let i: i64 = head.parse().map_err(|_| bad())?;
    let resolved = if i > 0 {
        i - 1
    } else if i < 0 {
        n_vertices as i64 + i
    } else {
        return Err(bad());
    };
    if resolved < 0 || resolved as usize >= n_vertices {
        return Err(bad());
    }
    Ok(resolved as usize)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Initial radius as a fraction of `r_est`.
    pub initial_slack: f64,
    /// Radius multiplier applied after a run of failed darts.
    pub relaxation: f64,
    /// Consecutive failures allowed, as a multiple of the target count.
    pub failure_budget: usize,
    /// Sampling gives up once the radius falls below this fraction of `r_est`.
    pub min_radius_fraction: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            initial_slack: 0.8,
            relaxation: 0.95,
            failure_budget: 10,
            min_radius_fraction: 0.5,
        }
    }
}

/// `sqrt(area / (n * pi))`.
pub fn estimated_radius(total_area: f64, n_target: usize) -> f64 {
    (total_area / (n_target as f64 * std::f64::consts::PI)).sqrt()
}

struct Grid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl Grid {
    fn key(&self, p: V3) -> [i64; 3] {
        [
            (p[0] / self.cell).floor() as i64,
            (p[1] / self.cell).floor() as i64,
            (p[2] / self.cell).floor() as i64,
        ]
    }

    /// Requires `r <= cell`.
    fn any_within(&self, p: V3, r: f64, points: &[V3]) -> bool {
        let k = self.key(p);
        let r2 = r * r;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if ids.iter().any(|&i| dist2(points[i], p) < r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    fn insert(&mut self, p: V3, id: usize) {
        let k = self.key(p);
        self.cells.entry(k).or_default().push(id);
    }
}

/// A point sampled on a face, with its barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub position: V3,
    pub face: usize,
    pub barycentric: V3,
}

fn draw_point<R: Rng>(mesh: &TriangleMesh, prefix: &[f64], rng: &mut R) -> SurfacePoint {
    let total = *prefix.last().unwrap();
    let u = rng.random::<f64>() * total;
    // first face whose cumulative area exceeds u; zero-area faces never win
    let face = prefix.partition_point(|&c| c <= u).min(prefix.len() - 1);
    let s = rng.random::<f64>().sqrt();
    let t = rng.random::<f64>();
    let bary = [1.0 - s, s * (1.0 - t), s * t];
    let [a, b, c] = mesh.corners(face);
    let position = [
        bary[0] * a[0] + bary[1] * b[0] + bary[2] * c[0],
        bary[0] * a[1] + bary[1] * b[1] + bary[2] * c[1],
        bary[0] * a[2] + bary[1] * b[2] + bary[2] * c[2],
    ];
    SurfacePoint {
        position,
        face,
        barycentric: bary,
    }
}

fn area_prefix(mesh: &TriangleMesh) -> Vec<f64> {
    let mut acc = 0.0;
    (0..mesh.faces().len())
        .map(|f| {
            acc += mesh.face_area(f);
            acc
        })
        .collect()
}

/// Poisson-disk samples with their source faces.
pub fn sample_surface_points(
    mesh: &TriangleMesh,
    n_target: usize,
    seed: u64,
    config: &SamplingConfig,
) -> Result<Vec<SurfacePoint>> {
    if n_target < 4 {
        return Err(Error::InvalidConfig(format!(
            "sample count {n_target} is below the minimum of 4"
        )));
    }
    let prefix = area_prefix(mesh);
    let r_est = estimated_radius(*prefix.last().unwrap(), n_target);
    let mut radius = r_est * config.initial_slack;
    let r_min = r_est * config.min_radius_fraction;
    let mut grid = Grid {
        cell: radius.max(r_est * 1e-9),
        cells: HashMap::new(),
    };
    let mut rng = crate::seed::rng(seed);
    let mut samples: Vec<SurfacePoint> = Vec::with_capacity(n_target);
    let mut positions: Vec<V3> = Vec::with_capacity(n_target);
    let budget = config.failure_budget.max(1) * n_target;
    let mut failures = 0;
    while samples.len() < n_target {
        let sp = draw_point(mesh, &prefix, &mut rng);
        if grid.any_within(sp.position, radius, &positions) {
            failures += 1;
            if failures >= budget {
                failures = 0;
                radius *= config.relaxation;
                if radius < r_min {
                    return Err(Error::InsufficientSamples {
                        achieved: samples.len(),
                        target: n_target,
                    });
                }
            }
            continue;
        }
        failures = 0;
        grid.insert(sp.position, positions.len());
        positions.push(sp.position);
        samples.push(sp);
    }
    Ok(samples)
}

/// Exactly `n_target` blue-noise points; D=6 when the mesh carries normals.
pub fn sample_surface(mesh: &TriangleMesh, n_target: usize, seed: u64) -> Result<PointCloud> {
    sample_surface_with(mesh, n_target, seed, &SamplingConfig::default())
}

pub fn sample_surface_with(
    mesh: &TriangleMesh,
    n_target: usize,
    seed: u64,
    config: &SamplingConfig,
) -> Result<PointCloud> {
    let samples = sample_surface_points(mesh, n_target, seed, config)?;
    match mesh.normals() {
        None => {
            let data = samples.iter().flat_map(|s| s.position).collect();
            PointCloud::new(data, 3, xyz_schema())
        }
        Some(vn) => {
            let mut data = Vec::with_capacity(6 * samples.len());
            for s in &samples {
                let [i, j, k] = mesh.faces()[s.face];
                let b = s.barycentric;
                let mut n = [0.0; 3];
                for d in 0..3 {
                    n[d] = b[0] * vn[i][d] + b[1] * vn[j][d] + b[2] * vn[k][d];
                }
                let mut len = norm(n);
                if !(len > 1e-12) {
                    let [a, bb, c] = mesh.corners(s.face);
                    n = cross(sub(bb, a), sub(c, a));
                    len = norm(n);
                }
                data.extend(s.position);
                data.extend(n.map(|x| x / len));
            }
            PointCloud::new(data, 6, xyz_normal_schema())
        }
    }
}

/// Area-weighted white-noise sample, for comparison with the blue-noise one.
pub fn sample_uniform(mesh: &TriangleMesh, n: usize, seed: u64) -> Vec<V3> {
    let prefix = area_prefix(mesh);
    let mut rng = crate::seed::rng(seed);
    (0..n)
        .map(|_| draw_point(mesh, &prefix, &mut rng).position)
        .collect()
}

/// Axis-aligned box mesh centred at the origin, 12 triangles, outward winding.
pub fn box_mesh(dims: V3) -> TriangleMesh {
    let h = dims.map(|d| 0.5 * d);
    let vertices: Vec<V3> = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -h[0] } else { h[0] },
                if i & 2 == 0 { -h[1] } else { h[1] },
                if i & 4 == 0 { -h[2] } else { h[2] },
            ]
        })
        .collect();
    let quads = [
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriangleMesh::new(vertices, faces, None).expect("box with positive dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.0, 1.0, 0.0],
                [0.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn cube_obj_has_twelve_triangles() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
                    f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8\n";
        let mesh = parse_obj_mesh(text).unwrap();
        assert_eq!(mesh.faces().len(), 12);
        assert!((mesh.total_area() - 6.0).abs() < 1e-12);
        let n = mesh.normals().unwrap();
        assert!(n.iter().all(|v| (norm(*v) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn pentagon_fan() {
        let text = "v 0 0 0\nv 1 0 0\nv 2 1 0\nv 1 2 0\nv 0 1 0\nf 1/1/1 2/2/2 3 4 5\n";
        let mesh = parse_obj_mesh(text).unwrap();
        assert_eq!(mesh.faces(), &[[0, 1, 2], [0, 2, 3], [0, 3, 4]]);
    }

    #[test]
    fn negative_indices_resolve() {
        let mesh = parse_obj_mesh("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(mesh.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn no_faces_is_empty_mesh() {
        assert!(matches!(
            parse_obj_mesh("v 0 0 0\nv 1 0 0\n"),
            Err(Error::EmptyMesh)
        ));
        assert!(matches!(
            parse_obj_mesh("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n"),
            Err(Error::EmptyMesh)
        ));
    }

    #[test]
    fn unit_square_min_distance() {
        let cloud = sample_surface(&unit_square(), 100, 5).unwrap();
        assert_eq!(cloud.n_points(), 100);
        let bound = 0.5 * estimated_radius(1.0, 100);
        assert!((bound - 0.028209479177387815).abs() < 1e-12);
        let pts: Vec<V3> = (0..100).map(|i| cloud.xyz(i)).collect();
        for i in 0..100 {
            assert_eq!(pts[i][2], 0.0);
            for j in i + 1..100 {
                assert!(dist2(pts[i], pts[j]).sqrt() >= bound);
            }
        }
    }

    #[test]
    fn samples_lie_on_their_faces() {
        let mesh = box_mesh([1.0, 2.0, 0.5]);
        let pts = sample_surface_points(&mesh, 300, 9, &SamplingConfig::default()).unwrap();
        for sp in pts {
            let [a, b, c] = mesh.corners(sp.face);
            let n = cross(sub(b, a), sub(c, a));
            let n_len = norm(n);
            let d = sub(sp.position, a);
            let plane = (d[0] * n[0] + d[1] * n[1] + d[2] * n[2]).abs() / n_len;
            assert!(plane < 1e-9);
            assert!(sp
                .barycentric
                .iter()
                .all(|&w| (-1e-12..=1.0 + 1e-12).contains(&w)));
            assert!((sp.barycentric.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normals_are_carried() {
        let mesh = box_mesh([1.0, 1.0, 1.0]).with_computed_normals();
        let c = sample_surface(&mesh, 64, 1).unwrap();
        assert_eq!(c.attr_dim(), 6);
        for p in c.points() {
            let len = (p[3] * p[3] + p[4] * p[4] + p[5] * p[5]).sqrt();
            assert!((len - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let mesh = unit_square();
        assert_eq!(
            sample_surface(&mesh, 50, 3).unwrap(),
            sample_surface(&mesh, 50, 3).unwrap()
        );
        assert_ne!(
            sample_surface(&mesh, 50, 3).unwrap(),
            sample_surface(&mesh, 50, 4).unwrap()
        );
    }

    #[test]
    fn too_few_targets_rejected() {
        assert!(sample_surface(&unit_square(), 3, 0).is_err());
    }

    #[test]
    fn pathological_radius_floor_reports_count() {
        let cfg = SamplingConfig {
            initial_slack: 2.5,
            min_radius_fraction: 2.0,
            failure_budget: 1,
            ..SamplingConfig::default()
        };
        match sample_surface_with(&unit_square(), 100, 0, &cfg) {
            Err(Error::InsufficientSamples { achieved, target }) => {
                assert!(achieved < 100);
                assert_eq!(target, 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
