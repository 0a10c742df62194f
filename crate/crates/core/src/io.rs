//! Text point-cloud formats: XYZ, ASCII PLY and OBJ vertex records.
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle reproduces every coordinate exactly. Lines starting with
//! `#` in XYZ files and `comment` lines in PLY headers carry provenance and are
//! ignored on load.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::cloud::{xyz_normal_schema, xyz_schema, PointCloud, NORMAL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    Xyz,
    Ply,
    ObjVertices,
}

impl PointFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "xyz" | "txt" => Some(PointFormat::Xyz),
            "ply" => Some(PointFormat::Ply),
            "obj" => Some(PointFormat::ObjVertices),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            PointFormat::Xyz => "xyz",
            PointFormat::Ply => "ply",
            PointFormat::ObjVertices => "obj",
        }
    }
}

impl FromStr for PointFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" => Ok(PointFormat::Xyz),
            "ply" => Ok(PointFormat::Ply),
            "obj" | "obj-vertices" => Ok(PointFormat::ObjVertices),
            other => Err(Error::InvalidConfig(format!(
                "unknown point format {other:?}"
            ))),
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_floats(tokens: &[&str], line: usize) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("invalid number {t:?}"),
                })
        })
        .collect()
}

pub fn load_points(path: &Path, format: PointFormat) -> Result<PointCloud> {
    let text = read_text(path)?;
    parse_points(&text, format)
}

pub fn parse_points(text: &str, format: PointFormat) -> Result<PointCloud> {
    match format {
        PointFormat::Xyz => parse_xyz(text),
        PointFormat::Ply => parse_ply(text),
        PointFormat::ObjVertices => parse_obj_vertices(text),
    }
}

/// Normal sub-vectors are rescaled to unit length on ingestion; zero normals
/// are rejected.
fn finish_cloud(data: Vec<f64>, with_normals: bool) -> Result<PointCloud> {
    if data.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no points".into(),
        });
    }
    if with_normals {
        for (i, p) in data.chunks_exact(6).enumerate() {
            let len = (p[3] * p[3] + p[4] * p[4] + p[5] * p[5]).sqrt();
            if !(len > 0.0) {
                return Err(Error::AttributeMismatch(format!(
                    "point {i} has a zero normal"
                )));
            }
        }
        let mut cloud = PointCloud::new(data, 6, xyz_normal_schema())?;
        cloud.renormalize_normals();
        Ok(cloud)
    } else {
        PointCloud::new(data, 3, xyz_schema())
    }
}

fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut data = Vec::new();
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.len() != 3 && tokens.len() != 6 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 or 6 values, found {}", tokens.len()),
            });
        }
        match width {
            None => width = Some(tokens.len()),
            Some(w) if w != tokens.len() => {
                return Err(Error::AttributeMismatch(format!(
                    "line {line} has {} values but earlier points have {w}",
                    tokens.len()
                )))
            }
            _ => {}
        }
        data.extend(parse_floats(&tokens, line)?);
    }
    finish_cloud(data, width == Some(6))
}

fn parse_obj_vertices(text: &str) -> Result<PointCloud> {
    let mut data = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let mut tokens = raw.split_whitespace();
        if tokens.next() != Some("v") {
            continue;
        }
        let rest: Vec<&str> = tokens.collect();
        // trailing vertex colours / w are ignored
        if rest.len() < 3 {
            return Err(Error::Parse {
                line: idx + 1,
                message: "vertex record needs 3 coordinates".into(),
            });
        }
        data.extend(parse_floats(&rest[..3], idx + 1)?);
    }
    finish_cloud(data, false)
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    has_list: bool,
}

fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, message: &str| Error::Parse {
        line,
        message: message.to_string(),
    };
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(bad(1, "missing \"ply\" magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (idx, raw) in lines.by_ref() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(bad(line, &format!("unsupported PLY format {other:?}")))
            }
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| bad(line, "invalid element count"))?,
                properties: Vec::new(),
                has_list: false,
            }),
            ["property", "list", ..] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad(line, "property before element"))?;
                el.has_list = true;
            }
            ["property", _ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad(line, "property before element"))?;
                el.properties.push(name.to_string());
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(bad(line, &format!("unrecognized header line {raw:?}"))),
        }
    }
    if !header_done {
        return Err(bad(0, "missing end_header"));
    }
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty());
    let mut data = Vec::new();
    let mut with_normals = false;
    let mut found_vertex = false;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                body.next()
                    .ok_or_else(|| bad(0, "unexpected end of file"))?;
            }
            continue;
        }
        if el.has_list {
            return Err(bad(0, "list properties on vertices are not supported"));
        }
        found_vertex = true;
        let find = |n: &str| el.properties.iter().position(|p| p == n);
        let (Some(x), Some(y), Some(z)) = (find("x"), find("y"), find("z")) else {
            return Err(bad(0, "vertex element lacks x, y, z"));
        };
        let normal_idx = match (find("nx"), find("ny"), find("nz")) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            (None, None, None) => None,
            _ => {
                return Err(Error::AttributeMismatch(
                    "vertex element declares only some of nx, ny, nz".into(),
                ))
            }
        };
        with_normals = normal_idx.is_some();
        for _ in 0..el.count {
            let (idx, raw) = body
                .next()
                .ok_or_else(|| bad(0, "unexpected end of file"))?;
            let tokens: Vec<&str> = raw.split_whitespace().collect();
            if tokens.len() != el.properties.len() {
                return Err(bad(
                    idx + 1,
                    &format!(
                        "expected {} values, found {}",
                        el.properties.len(),
                        tokens.len()
                    ),
                ));
            }
            let vals = parse_floats(&tokens, idx + 1)?;
            data.extend([vals[x], vals[y], vals[z]]);
            if let Some(n) = normal_idx {
                data.extend(n.iter().map(|&k| vals[k]));
            }
        }
    }
    if !found_vertex {
        return Err(bad(0, "no vertex element"));
    }
    finish_cloud(data, with_normals)
}

/// Serializes a cloud; `comments` become `#` lines (XYZ) or PLY comments.
pub fn format_points(
    cloud: &PointCloud,
    format: PointFormat,
    comments: &[String],
) -> Result<String> {
    let mut out = String::new();
    let normals = cloud.attribute_offset(NORMAL);
    let extra = cloud.attr_dim() > 3 && (normals != Some(3) || cloud.attr_dim() != 6);
    if extra {
        return Err(Error::AttributeMismatch(format!(
            "text formats hold xyz or xyz+normal only, not {:?}",
            cloud.schema()
        )));
    }
    match format {
        PointFormat::Xyz => {
            for c in comments {
                writeln!(out, "# {c}").unwrap();
            }
        }
        PointFormat::Ply => {
            out.push_str("ply\nformat ascii 1.0\n");
            for c in comments {
                writeln!(out, "comment {c}").unwrap();
            }
            writeln!(out, "element vertex {}", cloud.n_points()).unwrap();
            let names: &[&str] = if normals.is_some() {
                &["x", "y", "z", "nx", "ny", "nz"]
            } else {
                &["x", "y", "z"]
            };
            for n in names {
                writeln!(out, "property double {n}").unwrap();
            }
            out.push_str("end_header\n");
        }
        PointFormat::ObjVertices => {
            for c in comments {
                writeln!(out, "# {c}").unwrap();
            }
            for p in cloud.points() {
                writeln!(out, "v {} {} {}", p[0], p[1], p[2]).unwrap();
            }
            return Ok(out);
        }
    }
    for p in cloud.points() {
        let mut first = true;
        for v in p {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_points(cloud: &PointCloud, path: &Path, format: PointFormat) -> Result<()> {
    save_points_with_comments(cloud, path, format, &[])
}

pub fn save_points_with_comments(
    cloud: &PointCloud,
    path: &Path,
    format: PointFormat,
    comments: &[String],
) -> Result<()> {
    let text = format_points(cloud, format, comments)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
