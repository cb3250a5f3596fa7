//! Wavefront OBJ meshes: `v` and `f` statements only.
//!
//! Faces are 1-indexed (negative indices count back from the latest vertex);
//! `/`-separated texture and normal indices are ignored and polygons are
//! fan-triangulated. Other statements are skipped. Coordinates are written in
//! shortest round-trip form, so reading a written file restores every vertex
//! bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use meshgeo_core::{DVec3, TriangleMesh};

use crate::atomic::write_atomic;
use crate::error::{Error, Result};

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

/// Parses OBJ text; `path` only labels errors.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = line.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<&str> = tokens.collect();
                if !(3..=4).contains(&coords.len()) {
                    return Err(Error::parse(path, line_no, "vertex needs 3 coordinates"));
                }
                let mut xyz = [0.0; 3];
                for (c, tok) in xyz.iter_mut().zip(&coords) {
                    *c = tok
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::parse(path, line_no, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(DVec3::from_array(xyz));
            }
            Some("f") => {
                let corners = tokens
                    .map(|tok| face_index(tok, vertices.len()).map_err(|m| Error::parse(path, line_no, m)))
                    .collect::<Result<Vec<usize>>>()?;
                if corners.len() < 3 {
                    return Err(Error::parse(path, line_no, "face needs at least 3 vertices"));
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces).map_err(|e| Error::format(path, e.to_string()))
}

fn face_index(token: &str, vertex_count: usize) -> std::result::Result<usize, String> {
    let first = token.split('/').next().unwrap_or("");
    let raw: i64 = first.parse().map_err(|_| format!("bad face index {token:?}"))?;
    let index = match raw {
        0 => return Err("face index 0 (indices start at 1)".into()),
        r if r > 0 => r as usize - 1,
        r => vertex_count
            .checked_sub(r.unsigned_abs() as usize)
            .ok_or_else(|| format!("relative face index {r} before the first vertex"))?,
    };
    if index >= vertex_count {
        return Err(format!("face index {raw} exceeds the {vertex_count} vertices read so far"));
    }
    Ok(index)
}

pub fn format_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(32 * (mesh.vertex_count() + mesh.face_count()));
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let text = format_obj(mesh);
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}
