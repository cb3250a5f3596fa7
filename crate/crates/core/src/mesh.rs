//! Triangle meshes and topology queries.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use glam::DVec3;

use crate::{Error, Result};

/// Vertex positions plus counterclockwise (outward-facing) triangles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<DVec3>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh, checking that every face index is in range and that no
    /// face repeats a vertex.
    pub fn new(vertices: Vec<DVec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= vertices.len() {
                    return Err(Error::FaceIndexOutOfRange {
                        face: fi,
                        index: i,
                        vertex_count: vertices.len(),
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::RepeatedFaceVertex { face: fi });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub(crate) fn from_parts_unchecked(vertices: Vec<DVec3>, faces: Vec<[usize; 3]>) -> Self {
        debug_assert!(Self::new(vertices.clone(), faces.clone()).is_ok());
        Self { vertices, faces }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn vertices(&self) -> &[DVec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn into_parts(self) -> (Vec<DVec3>, Vec<[usize; 3]>) {
        (self.vertices, self.faces)
    }

    /// Same topology, new positions.
    pub fn with_vertices(&self, vertices: Vec<DVec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::LengthMismatch {
                what: "vertex positions",
                expected: self.vertices.len(),
                actual: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    pub fn translated(&self, offset: DVec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| v + offset).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Uniform scale about the origin.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| v * factor).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn face_vertices(&self, face: usize) -> [DVec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized normal `(v2 - v1) x (v3 - v1)`; its length is twice the area.
    pub fn face_cross(&self, face: usize) -> DVec3 {
        let [a, b, c] = self.face_vertices(face);
        (b - a).cross(c - a)
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).length()
    }

    /// Outward unit normal, or zero for a degenerate face.
    pub fn face_normal(&self, face: usize) -> DVec3 {
        self.face_cross(face).normalize_or_zero()
    }

    /// Axis-aligned bounds, `None` for a mesh without vertices.
    pub fn bounding_box(&self) -> Option<(DVec3, DVec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        )
    }

    /// Unique undirected edges `(min, max)` in lexicographic order.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        mesh_edges(self)
    }

    pub fn euler_characteristic(&self) -> i64 {
        euler_characteristic(self)
    }

    pub fn is_watertight(&self) -> bool {
        is_watertight(self)
    }

    pub fn adjacency(&self) -> VertexAdjacency {
        VertexAdjacency::from_mesh(self)
    }
}

pub fn mesh_edges(mesh: &TriangleMesh) -> Vec<[usize; 2]> {
    let mut edges: Vec<[usize; 2]> = mesh
        .faces
        .iter()
        .flat_map(|&[a, b, c]| [[a, b], [b, c], [c, a]])
        .map(|[i, j]| [i.min(j), i.max(j)])
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// `|V| - |E| + |F|`.
pub fn euler_characteristic(mesh: &TriangleMesh) -> i64 {
    mesh.vertex_count() as i64 - mesh_edges(mesh).len() as i64 + mesh.face_count() as i64
}

/// True iff every edge borders exactly two faces that traverse it in opposite
/// directions. Vacuously true for a mesh without faces.
pub fn is_watertight(mesh: &TriangleMesh) -> bool {
    let mut half_edges: Vec<[usize; 2]> = mesh
        .faces
        .iter()
        .flat_map(|&[a, b, c]| [[a, b], [b, c], [c, a]])
        .collect();
    half_edges.sort_unstable();
    // A repeated directed edge means either more than two faces or a flipped neighbor.
    if half_edges.windows(2).any(|w| w[0] == w[1]) {
        return false;
    }
    half_edges
        .iter()
        .all(|&[a, b]| half_edges.binary_search(&[b, a]).is_ok())
}

/// One-ring neighborhoods in compressed row form; neighbors sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexAdjacency {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl VertexAdjacency {
    pub fn from_mesh(mesh: &TriangleMesh) -> Self {
        Self::from_edges(mesh.vertex_count(), &mesh_edges(mesh))
    }

    pub fn from_edges(vertex_count: usize, edges: &[[usize; 2]]) -> Self {
        let mut degree = vec![0usize; vertex_count + 1];
        for &[a, b] in edges {
            degree[a + 1] += 1;
            degree[b + 1] += 1;
        }
        for i in 0..vertex_count {
            degree[i + 1] += degree[i];
        }
        let offsets = degree;
        let mut fill = offsets.clone();
        let mut neighbors = vec![0usize; offsets[vertex_count]];
        for &[a, b] in edges {
            neighbors[fill[a]] = b;
            fill[a] += 1;
            neighbors[fill[b]] = a;
            fill[b] += 1;
        }
        for v in 0..vertex_count {
            neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Self { offsets, neighbors }
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Index-free representation used to compare meshes that differ only by a
/// vertex and face relabeling.
///
/// Vertices are ordered by position and, for coincident positions, by the
/// positions of their incident faces, so meshes that keep distinct vertices at
/// the same location still compare exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalMesh {
    pub vertices: Vec<[u64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

fn cmp_point(a: &DVec3, b: &DVec3) -> Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

fn cmp_face_points(a: &[DVec3; 3], b: &[DVec3; 3]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(p, q)| cmp_point(p, q))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Rotates a cyclic triple so its smallest element comes first.
fn rotate_min_first<T: Copy>(t: [T; 3], less: impl Fn(&T, &T) -> bool) -> [T; 3] {
    let mut m = 0;
    for k in 1..3 {
        if less(&t[k], &t[m]) {
            m = k;
        }
    }
    [t[m], t[(m + 1) % 3], t[(m + 2) % 3]]
}

pub fn canonical_form(mesh: &TriangleMesh) -> CanonicalMesh {
    let face_points: Vec<[DVec3; 3]> = (0..mesh.face_count())
        .map(|f| rotate_min_first(mesh.face_vertices(f), |a, b| cmp_point(a, b).is_lt()))
        .collect();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); mesh.vertex_count()];
    for (fi, f) in mesh.faces.iter().enumerate() {
        for &v in f {
            incident[v].push(fi);
        }
    }
    for list in &mut incident {
        list.sort_by(|&a, &b| cmp_face_points(&face_points[a], &face_points[b]));
    }
    let mut order: Vec<usize> = (0..mesh.vertex_count()).collect();
    order.sort_by(|&a, &b| {
        cmp_point(&mesh.vertices[a], &mesh.vertices[b]).then_with(|| {
            let (la, lb) = (&incident[a], &incident[b]);
            la.iter()
                .zip(lb.iter())
                .map(|(&fa, &fb)| cmp_face_points(&face_points[fa], &face_points[fb]))
                .find(|o| o.is_ne())
                .unwrap_or_else(|| la.len().cmp(&lb.len()))
        })
    });
    let mut rank = vec![0usize; mesh.vertex_count()];
    for (r, &v) in order.iter().enumerate() {
        rank[v] = r;
    }
    let mut faces: Vec<[usize; 3]> = mesh
        .faces
        .iter()
        .map(|&[a, b, c]| rotate_min_first([rank[a], rank[b], rank[c]], |x, y| x < y))
        .collect();
    faces.sort_unstable();
    let vertices = order
        .iter()
        .map(|&v| {
            let p = mesh.vertices[v];
            [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
        })
        .collect();
    CanonicalMesh { vertices, faces }
}
