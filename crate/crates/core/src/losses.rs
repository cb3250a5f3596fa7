//! Shape losses and their gradients.
//!
//! Gradients hold nearest-neighbor assignments and sample draws fixed, so they
//! are exact derivatives of the loss with those choices frozen.

use alloc::vec;
use alloc::vec::Vec;

use glam::DVec3;

use crate::mesh::{mesh_edges, TriangleMesh, VertexAdjacency};
use crate::nn::{nearest_with_distances, NearestNeighborMap, PointGrid, SearchMode};
use crate::rng::derive_seed;
use crate::sampler::{sample_gradient, sample_points, PointSampleSet};
use crate::voxel::VoxelGrid;
use crate::{Error, Result};

/// Probability clamp used by [`voxel_loss`].
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub voxel: f64,
    pub chamfer: f64,
    pub normal: f64,
    pub edge: f64,
}

impl LossWeights {
    /// Weights used for the synthetic single-object benchmark.
    pub const SHAPENET: Self = Self {
        voxel: 1.0,
        chamfer: 1.0,
        normal: 0.0,
        edge: 0.2,
    };

    /// Weights used for the real-image detection benchmark.
    pub const PIX3D: Self = Self {
        voxel: 3.0,
        chamfer: 1.0,
        normal: 0.1,
        edge: 1.0,
    };

    pub fn new(voxel: f64, chamfer: f64, normal: f64, edge: f64) -> Result<Self> {
        let w = Self {
            voxel,
            chamfer,
            normal,
            edge,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("voxel weight", self.voxel),
            ("chamfer weight", self.chamfer),
            ("normal weight", self.normal),
            ("edge weight", self.edge),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::OutOfRange { name, value });
            }
        }
        Ok(())
    }

    /// Looks up a preset by name (`shapenet` or `pix3d`, case-insensitive).
    pub fn preset(name: &str) -> Option<Self> {
        if name.eq_ignore_ascii_case("shapenet") {
            Some(Self::SHAPENET)
        } else if name.eq_ignore_ascii_case("pix3d") {
            Some(Self::PIX3D)
        } else {
            None
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::SHAPENET
    }
}

/// Chamfer distance with gradients for both point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ChamferLoss {
    pub value: f64,
    pub grad_p: Vec<DVec3>,
    pub grad_q: Vec<DVec3>,
}

/// A scalar loss with its gradient over mesh vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexLoss {
    pub value: f64,
    pub grad: Vec<DVec3>,
}

fn check_map(p: usize, q: usize, map: &NearestNeighborMap) -> Result<()> {
    if map.p_to_q.len() != p {
        return Err(Error::LengthMismatch {
            what: "P to Q neighbor map",
            expected: p,
            actual: map.p_to_q.len(),
        });
    }
    if map.q_to_p.len() != q {
        return Err(Error::LengthMismatch {
            what: "Q to P neighbor map",
            expected: q,
            actual: map.q_to_p.len(),
        });
    }
    let out_of_range = map.p_to_q.iter().find(|&&j| j >= q).or(map.q_to_p.iter().find(|&&j| j >= p));
    if let Some(&j) = out_of_range {
        return Err(Error::OutOfRange {
            name: "neighbor index",
            value: j as f64,
        });
    }
    Ok(())
}

pub fn chamfer(p: &[DVec3], q: &[DVec3]) -> Result<ChamferLoss> {
    let map = crate::nn::nearest_neighbors(p, q, SearchMode::Accelerated)?;
    chamfer_with_map(p, q, &map)
}

/// Chamfer distance using the given neighbor assignments.
pub fn chamfer_with_map(p: &[DVec3], q: &[DVec3], map: &NearestNeighborMap) -> Result<ChamferLoss> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    check_map(p.len(), q.len(), map)?;
    let (np, nq) = (p.len() as f64, q.len() as f64);
    let mut grad_p = vec![DVec3::ZERO; p.len()];
    let mut grad_q = vec![DVec3::ZERO; q.len()];
    let mut sum_p = 0.0;
    for (i, &j) in map.p_to_q.iter().enumerate() {
        let d = p[i] - q[j];
        sum_p += d.length_squared();
        let g = d * (2.0 / np);
        grad_p[i] += g;
        grad_q[j] -= g;
    }
    let mut sum_q = 0.0;
    for (j, &i) in map.q_to_p.iter().enumerate() {
        let d = q[j] - p[i];
        sum_q += d.length_squared();
        let g = d * (2.0 / nq);
        grad_q[j] += g;
        grad_p[i] -= g;
    }
    Ok(ChamferLoss {
        value: sum_p / np + sum_q / nq,
        grad_p,
        grad_q,
    })
}

/// Absolute normal distance, in `[-2, 0]`; `-2` means every matched pair of
/// normals is parallel or antiparallel.
pub fn normal_distance(p: &PointSampleSet, q: &PointSampleSet) -> Result<f64> {
    let map = crate::nn::nearest_neighbors(p.points(), q.points(), SearchMode::Accelerated)?;
    normal_distance_with_map(p, q, &map)
}

pub fn normal_distance_with_map(p: &PointSampleSet, q: &PointSampleSet, map: &NearestNeighborMap) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    p.check_unit_normals()?;
    q.check_unit_normals()?;
    check_map(p.len(), q.len(), map)?;
    let (up, uq) = (p.normals(), q.normals());
    let sum_p: f64 = map.p_to_q.iter().enumerate().map(|(i, &j)| up[i].dot(uq[j]).abs()).sum();
    let sum_q: f64 = map.q_to_p.iter().enumerate().map(|(j, &i)| uq[j].dot(up[i]).abs()).sum();
    Ok(-sum_p / p.len() as f64 - sum_q / q.len() as f64)
}

/// Mean squared length over the mesh's undirected edges.
pub fn edge_loss(mesh: &TriangleMesh) -> Result<VertexLoss> {
    let edges = mesh_edges(mesh);
    if edges.is_empty() {
        return Err(Error::NoEdges);
    }
    let v = mesh.vertices();
    let scale = 2.0 / edges.len() as f64;
    let mut grad = vec![DVec3::ZERO; v.len()];
    let mut sum = 0.0;
    for &[a, b] in &edges {
        let d = v[a] - v[b];
        sum += d.length_squared();
        grad[a] += d * scale;
        grad[b] -= d * scale;
    }
    Ok(VertexLoss {
        value: sum / edges.len() as f64,
        grad,
    })
}

/// Mean squared uniform Laplacian `v - mean(neighbors(v))`.
///
/// Vertices without neighbors contribute zero but still count in the mean.
pub fn laplacian_loss(mesh: &TriangleMesh) -> Result<f64> {
    if mesh.faces().is_empty() {
        return Err(Error::NoEdges);
    }
    let adj = VertexAdjacency::from_mesh(mesh);
    let v = mesh.vertices();
    let sum: f64 = (0..v.len())
        .map(|i| {
            let nb = adj.neighbors(i);
            if nb.is_empty() {
                return 0.0;
            }
            let mean = nb.iter().map(|&j| v[j]).sum::<DVec3>() / nb.len() as f64;
            (v[i] - mean).length_squared()
        })
        .sum();
    Ok(sum / v.len() as f64)
}

/// Mean binary cross-entropy between predicted probabilities and a binary
/// target, with probabilities clamped to `[ε, 1 - ε]`.
pub fn voxel_loss(predicted: &VoxelGrid, target: &VoxelGrid) -> Result<f64> {
    if predicted.dims() != target.dims() {
        return Err(Error::DimMismatch {
            expected: predicted.dims(),
            actual: target.dims(),
        });
    }
    let mut sum = 0.0;
    for (i, (&p, &t)) in predicted.values().iter().zip(target.values()).enumerate() {
        let p = (p as f64).clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        sum -= if t == 1.0 {
            libm::log(p)
        } else if t == 0.0 {
            libm::log(1.0 - p)
        } else {
            return Err(Error::NonBinaryTarget { index: i, value: t });
        };
    }
    Ok(sum / predicted.values().len() as f64)
}

/// Unweighted terms and weighted total for one refinement stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageLoss {
    pub chamfer: f64,
    pub normal: f64,
    pub edge: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshLoss {
    /// Mean of the stage totals.
    pub total: f64,
    pub stages: Vec<StageLoss>,
}

/// Weighted chamfer, normal and edge losses of each stage against the ground
/// truth samples, averaged over stages.
///
/// Every stage is sampled with `n` points from the same `seed`, so identical
/// stages give identical terms.
pub fn mesh_loss(
    stages: &[TriangleMesh],
    gt: &PointSampleSet,
    weights: &LossWeights,
    n: usize,
    seed: u64,
) -> Result<MeshLoss> {
    weights.validate()?;
    if stages.is_empty() {
        return Err(Error::InvalidConfig("mesh loss needs at least one stage".into()));
    }
    if gt.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let gt_grid = PointGrid::new(gt.points())?;
    let mut out = Vec::with_capacity(stages.len());
    for mesh in stages {
        let pred = sample_points(mesh, n, seed)?;
        let map = neighbor_map(pred.points(), gt.points(), &gt_grid)?;
        let chamfer = chamfer_with_map(pred.points(), gt.points(), &map)?.value;
        let normal = normal_distance_with_map(&pred, gt, &map)?;
        let edge = edge_loss(mesh)?.value;
        out.push(StageLoss {
            chamfer,
            normal,
            edge,
            total: weights.chamfer * chamfer + weights.normal * normal + weights.edge * edge,
        });
    }
    let total = out.iter().map(|s| s.total).sum::<f64>() / out.len() as f64;
    Ok(MeshLoss { total, stages: out })
}

fn neighbor_map(p: &[DVec3], q: &[DVec3], q_grid: &PointGrid<'_>) -> Result<NearestNeighborMap> {
    Ok(NearestNeighborMap {
        p_to_q: p.iter().map(|&x| q_grid.nearest(x).0).collect(),
        q_to_p: nearest_with_distances(q, p, SearchMode::Accelerated)?
            .into_iter()
            .map(|(i, _)| i)
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Points sampled from the mesh at each step.
    pub samples: usize,
    pub seed: u64,
}

/// Loss terms measured at the start of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStep {
    pub total: f64,
    pub chamfer: f64,
    pub edge: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub mesh: TriangleMesh,
    pub trace: Vec<FitStep>,
}

/// Plain gradient descent on `λ_cham L_cham + λ_edge L_edge` over the vertex
/// positions of `init`. The mesh is resampled at every step with a seed
/// derived from `(seed, step)`.
pub fn optimize_vertices(
    init: &TriangleMesh,
    target: &PointSampleSet,
    weights: &LossWeights,
    cfg: &FitConfig,
) -> Result<FitResult> {
    weights.validate()?;
    if cfg.steps == 0 {
        return Err(Error::InvalidConfig("fit needs at least one step".into()));
    }
    if !(cfg.step_size >= 0.0 && cfg.step_size.is_finite()) {
        return Err(Error::OutOfRange {
            name: "step size",
            value: cfg.step_size,
        });
    }
    if target.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let target_grid = PointGrid::new(target.points())?;
    let mut mesh = init.clone();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let samples = sample_points(&mesh, cfg.samples, derive_seed(cfg.seed, step as u64))?;
        let map = neighbor_map(samples.points(), target.points(), &target_grid)?;
        let cham = chamfer_with_map(samples.points(), target.points(), &map)?;
        let edge = edge_loss(&mesh)?;
        trace.push(FitStep {
            total: weights.chamfer * cham.value + weights.edge * edge.value,
            chamfer: cham.value,
            edge: edge.value,
        });
        let cham_grad = sample_gradient(&mesh, &samples, &cham.grad_p)?;
        let vertices: Vec<DVec3> = mesh
            .vertices()
            .iter()
            .zip(cham_grad.iter().zip(&edge.grad))
            .map(|(&v, (&gc, &ge))| v - cfg.step_size * (weights.chamfer * gc + weights.edge * ge))
            .collect();
        mesh = mesh.with_vertices(vertices)?;
    }
    Ok(FitResult { mesh, trace })
}
