//! Area-uniform point sampling on mesh surfaces.
//!
//! A face is drawn with probability proportional to its area, then a point
//! inside it as `p = w1 v1 + w2 v2 + w3 v3` with
//! `w1 = 1 - sqrt(ξ1)`, `w2 = (1 - ξ2) sqrt(ξ1)`, `w3 = ξ2 sqrt(ξ1)`.
//! With the face and `ξ` held fixed, `p` is linear in the vertex positions,
//! which is what [`sample_gradient`] differentiates.
//!
//! Sample `i` uses draws `3i`, `3i + 1`, `3i + 2` of the stream for `seed`
//! (face selection, `ξ1`, `ξ2`), see [`crate::rng`].

use alloc::vec;
use alloc::vec::Vec;

use glam::DVec3;

use crate::mesh::TriangleMesh;
use crate::rng::RandomStream;
use crate::{Error, Result};

/// Where a sample came from: its face and barycentric weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleProvenance {
    pub face: usize,
    pub weights: [f64; 3],
}

/// Points with normals, optionally remembering how they were sampled.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSampleSet {
    points: Vec<DVec3>,
    normals: Vec<DVec3>,
    provenance: Option<Vec<SampleProvenance>>,
}

impl PointSampleSet {
    pub fn new(points: Vec<DVec3>, normals: Vec<DVec3>) -> Result<Self> {
        if normals.len() != points.len() {
            return Err(Error::LengthMismatch {
                what: "normals",
                expected: points.len(),
                actual: normals.len(),
            });
        }
        Ok(Self {
            points,
            normals,
            provenance: None,
        })
    }

    pub fn with_provenance(
        points: Vec<DVec3>,
        normals: Vec<DVec3>,
        provenance: Vec<SampleProvenance>,
    ) -> Result<Self> {
        if provenance.len() != points.len() {
            return Err(Error::LengthMismatch {
                what: "provenance",
                expected: points.len(),
                actual: provenance.len(),
            });
        }
        let mut set = Self::new(points, normals)?;
        set.provenance = Some(provenance);
        Ok(set)
    }

    pub fn points(&self) -> &[DVec3] {
        &self.points
    }

    pub fn normals(&self) -> &[DVec3] {
        &self.normals
    }

    pub fn provenance(&self) -> Option<&[SampleProvenance]> {
        self.provenance.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, offset: DVec3) -> Self {
        Self {
            points: self.points.iter().map(|&p| p + offset).collect(),
            ..self.clone()
        }
    }

    /// Errors unless every normal has unit length within `1e-6`.
    pub fn check_unit_normals(&self) -> Result<()> {
        for (index, n) in self.normals.iter().enumerate() {
            let length = n.length();
            if !((length - 1.0).abs() <= 1e-6) {
                return Err(Error::NonUnitNormal { index, length });
            }
        }
        Ok(())
    }
}

/// Per-face areas and the cumulative distribution used for face selection.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceDistribution {
    areas: Vec<f64>,
    cumulative: Vec<f64>,
}

impl FaceDistribution {
    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn total_area(&self) -> f64 {
        *self.cumulative.last().expect("distribution has at least one face")
    }

    pub fn probability(&self, face: usize) -> f64 {
        self.areas[face] / self.total_area()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total_area();
        self.areas.iter().map(|a| a / total).collect()
    }

    /// Inverse CDF: maps `u` in `[0, 1)` to a face with positive area.
    pub fn select(&self, u: f64) -> usize {
        let target = u * self.total_area();
        let i = self.cumulative.partition_point(|&c| c <= target);
        if i < self.areas.len() {
            i
        } else {
            // `u * total` rounded up to `total`
            self.areas.iter().rposition(|&a| a > 0.0).unwrap_or(0)
        }
    }
}

/// Face areas `½‖(v2 − v1) × (v3 − v1)‖`. Zero-area faces stay in the list
/// with probability zero.
pub fn face_areas(mesh: &TriangleMesh) -> Result<FaceDistribution> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let areas: Vec<f64> = (0..mesh.face_count()).map(|f| mesh.face_area(f)).collect();
    let mut total = 0.0;
    let cumulative: Vec<f64> = areas
        .iter()
        .map(|&a| {
            total += a;
            total
        })
        .collect();
    if !(total > 0.0) {
        return Err(Error::DegenerateSurface);
    }
    Ok(FaceDistribution { areas, cumulative })
}

/// Barycentric weights for the two uniform draws `ξ1`, `ξ2`.
pub fn barycentric_weights(xi1: f64, xi2: f64) -> [f64; 3] {
    let s = libm::sqrt(xi1);
    [1.0 - s, (1.0 - xi2) * s, xi2 * s]
}

fn interpolate(mesh: &TriangleMesh, prov: &SampleProvenance) -> DVec3 {
    let [a, b, c] = mesh.face_vertices(prov.face);
    let [w1, w2, w3] = prov.weights;
    a * w1 + b * w2 + c * w3
}

/// Draws `n` points uniformly from the surface with their face normals.
pub fn sample_points(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointSampleSet> {
    if n == 0 {
        return Err(Error::OutOfRange {
            name: "sample count",
            value: 0.0,
        });
    }
    let dist = face_areas(mesh)?;
    let normals_by_face: Vec<DVec3> = (0..mesh.face_count()).map(|f| mesh.face_normal(f)).collect();
    let mut rng = RandomStream::new(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    for _ in 0..n {
        let face = dist.select(rng.next_f64());
        let xi1 = rng.next_f64();
        let xi2 = rng.next_f64();
        let prov = SampleProvenance {
            face,
            weights: barycentric_weights(xi1, xi2),
        };
        points.push(interpolate(mesh, &prov));
        normals.push(normals_by_face[face]);
        provenance.push(prov);
    }
    Ok(PointSampleSet {
        points,
        normals,
        provenance: Some(provenance),
    })
}

/// Recomputes sample positions on a mesh with the same topology, keeping each
/// sample's face and weights.
pub fn reposition_samples(mesh: &TriangleMesh, provenance: &[SampleProvenance]) -> Result<Vec<DVec3>> {
    provenance
        .iter()
        .map(|p| {
            if p.face >= mesh.face_count() {
                return Err(Error::OutOfRange {
                    name: "sample face index",
                    value: p.face as f64,
                });
            }
            Ok(interpolate(mesh, p))
        })
        .collect()
}

/// Pulls per-sample gradients `dL/dp` back to the vertices:
/// `dL/dv_k += w_k dL/dp` for the three corners of each sample's face.
pub fn sample_gradient(
    mesh: &TriangleMesh,
    samples: &PointSampleSet,
    upstream: &[DVec3],
) -> Result<Vec<DVec3>> {
    let provenance = samples.provenance().ok_or(Error::MissingProvenance)?;
    if upstream.len() != provenance.len() {
        return Err(Error::LengthMismatch {
            what: "upstream gradients",
            expected: provenance.len(),
            actual: upstream.len(),
        });
    }
    let mut grad = vec![DVec3::ZERO; mesh.vertex_count()];
    for (prov, &g) in provenance.iter().zip(upstream) {
        let face = mesh.faces().get(prov.face).ok_or(Error::OutOfRange {
            name: "sample face index",
            value: prov.face as f64,
        })?;
        for (&v, &w) in face.iter().zip(&prov.weights) {
            grad[v] += w * g;
        }
    }
    Ok(grad)
}
