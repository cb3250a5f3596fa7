//! Shape and detection evaluation metrics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use glam::DVec3;

use crate::losses::{chamfer_with_map, normal_distance_with_map};
use crate::mesh::TriangleMesh;
use crate::nn::{nearest_neighbors, nearest_with_distances, SearchMode};
use crate::rng::derive_seed;
use crate::sampler::{sample_points, PointSampleSet};
use crate::{Error, Result};

/// Fixed scale factor of the single-object benchmark protocol.
pub const FIXED_SCALE: f64 = 0.57;
/// Target length of the ground truth's longest bounding-box edge.
pub const LONGEST_EDGE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RescaleMode {
    /// Multiply all coordinates by 0.57.
    Factor057,
    /// Scale so the ground truth's longest bounding-box edge is 10.
    #[default]
    LongestEdge10,
    /// Leave meshes as they are.
    Identity,
}

/// Scale applied to both meshes of a pair with ground truth `gt`.
pub fn rescale_factor(gt: &TriangleMesh, mode: RescaleMode) -> Result<f64> {
    match mode {
        RescaleMode::Factor057 => Ok(FIXED_SCALE),
        RescaleMode::Identity => Ok(1.0),
        RescaleMode::LongestEdge10 => {
            let (lo, hi) = gt.bounding_box().ok_or(Error::EmptyMesh)?;
            let extent = (hi - lo).max_element();
            if !(extent > 0.0) {
                return Err(Error::DegenerateBoundingBox);
            }
            Ok(LONGEST_EDGE / extent)
        }
    }
}

/// Uniformly scales `mesh` about the origin using the scale `gt` implies.
pub fn rescale_mesh(mesh: &TriangleMesh, gt: &TriangleMesh, mode: RescaleMode) -> Result<TriangleMesh> {
    Ok(mesh.scaled(rescale_factor(gt, mode)?))
}

/// How a distance threshold `τ` is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdDomain {
    /// `‖p - q‖ ≤ τ`
    #[default]
    Euclidean,
    /// `‖p - q‖² ≤ τ`
    Squared,
}

/// Precision, recall and F1, all in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl FScore {
    fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn within(d2: f64, tau: f64, domain: ThresholdDomain) -> bool {
    match domain {
        ThresholdDomain::Euclidean => d2 <= tau * tau,
        ThresholdDomain::Squared => d2 <= tau,
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::NonPositive {
            name: "distance threshold",
            value: tau,
        });
    }
    Ok(())
}

pub fn f_score(p: &[DVec3], q: &[DVec3], tau: f64, domain: ThresholdDomain) -> Result<FScore> {
    Ok(f_scores(p, q, &[tau], domain)?[0])
}

/// F-scores at several thresholds from one pair of nearest-neighbor passes.
pub fn f_scores(p: &[DVec3], q: &[DVec3], taus: &[f64], domain: ThresholdDomain) -> Result<Vec<FScore>> {
    taus.iter().try_for_each(|&t| check_tau(t))?;
    let pq = nearest_with_distances(p, q, SearchMode::Accelerated)?;
    let qp = nearest_with_distances(q, p, SearchMode::Accelerated)?;
    Ok(f_scores_from_distances(&pq, &qp, taus, domain))
}

fn f_scores_from_distances(
    pq: &[(usize, f64)],
    qp: &[(usize, f64)],
    taus: &[f64],
    domain: ThresholdDomain,
) -> Vec<FScore> {
    let pct = |d: &[(usize, f64)], tau: f64| {
        100.0 * d.iter().filter(|(_, d2)| within(*d2, tau, domain)).count() as f64 / d.len() as f64
    };
    taus.iter()
        .map(|&tau| FScore::from_pr(pct(pq, tau), pct(qp, tau)))
        .collect()
}

/// Mean `|u_p · u_q|` over both nearest-neighbor directions, in `[0, 1]`;
/// equals `-L_norm / 2` for the absolute normal distance `L_norm`.
pub fn normal_consistency(p: &PointSampleSet, q: &PointSampleSet) -> Result<f64> {
    let map = nearest_neighbors(p.points(), q.points(), SearchMode::Accelerated)?;
    Ok(-normal_distance_with_map(p, q, &map)? / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub rescale: RescaleMode,
    /// Points sampled from each mesh.
    pub sample_count: usize,
    /// Thresholds reported by [`chamfer_metric`].
    pub thresholds: Vec<f64>,
    pub domain: ThresholdDomain,
    /// Threshold of the F1 used to accept a detection's mesh.
    pub f1_tau: f64,
    /// Minimum F1 (as a fraction) for a detection's mesh to count, compared strictly.
    pub f1_threshold: f64,
    /// Detections whose best box IoU with any ground truth is at most this are ignored.
    pub iou_gate: f64,
    /// Minimum box IoU (strict) for a detection to be matched to a ground truth.
    pub match_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rescale: RescaleMode::LongestEdge10,
            sample_count: 10_000,
            thresholds: vec![0.1, 0.3, 0.5],
            domain: ThresholdDomain::Euclidean,
            f1_tau: 0.3,
            f1_threshold: 0.5,
            iou_gate: 0.3,
            match_iou: 0.0,
        }
    }
}

impl EvalConfig {
    /// Fixed 0.57 scale with `τ = 1e-4` on squared distances.
    pub fn fixed_scale() -> Self {
        Self {
            rescale: RescaleMode::Factor057,
            thresholds: vec![1e-4],
            domain: ThresholdDomain::Squared,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(Error::OutOfRange {
                name: "sample count",
                value: 0.0,
            });
        }
        self.thresholds.iter().try_for_each(|&t| check_tau(t))?;
        check_tau(self.f1_tau)?;
        for (name, value) in [
            ("F1 threshold", self.f1_threshold),
            ("IoU gate", self.iou_gate),
            ("match IoU", self.match_iou),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfRange { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub chamfer: f64,
    pub normal_consistency: f64,
    /// One entry per configured threshold, in order.
    pub f_scores: Vec<(f64, FScore)>,
}

/// Rescales both meshes, samples them and computes chamfer, normal
/// consistency and F-scores. Both meshes are sampled with the same `seed`, so
/// a mesh compared with itself scores exactly zero distance.
pub fn chamfer_metric(gt: &TriangleMesh, pred: &TriangleMesh, cfg: &EvalConfig, seed: u64) -> Result<MetricReport> {
    cfg.validate()?;
    let s = rescale_factor(gt, cfg.rescale)?;
    let gt_pts = sample_points(&gt.scaled(s), cfg.sample_count, seed)?;
    let pred_pts = sample_points(&pred.scaled(s), cfg.sample_count, seed)?;
    let pq = nearest_with_distances(pred_pts.points(), gt_pts.points(), SearchMode::Accelerated)?;
    let qp = nearest_with_distances(gt_pts.points(), pred_pts.points(), SearchMode::Accelerated)?;
    let map = crate::nn::NearestNeighborMap {
        p_to_q: pq.iter().map(|&(i, _)| i).collect(),
        q_to_p: qp.iter().map(|&(i, _)| i).collect(),
    };
    let chamfer = chamfer_with_map(pred_pts.points(), gt_pts.points(), &map)?.value;
    let normal_consistency = -normal_distance_with_map(&pred_pts, &gt_pts, &map)? / 2.0;
    let scores = f_scores_from_distances(&pq, &qp, &cfg.thresholds, cfg.domain);
    Ok(MetricReport {
        chamfer,
        normal_consistency,
        f_scores: cfg.thresholds.iter().copied().zip(scores).collect(),
    })
}

/// Axis-aligned image rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox2 {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox2 {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = Self { x0, y0, x1, y1 };
        if !(b.area() > 0.0 && b.area().is_finite()) {
            return Err(Error::DegenerateBoundingBox);
        }
        Ok(b)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }
}

pub fn box_iou(a: &BoundingBox2, b: &BoundingBox2) -> f64 {
    let w = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let h = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub category: String,
    pub score: f64,
    pub bbox: BoundingBox2,
    pub mesh: TriangleMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub category: String,
    pub bbox: BoundingBox2,
    pub mesh: TriangleMesh,
}

/// Detections and annotations of one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageEval {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryAp {
    pub category: String,
    /// Percent; `None` when the category has no ground truth.
    pub ap: Option<f64>,
    pub ground_truth: usize,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApReport {
    pub categories: Vec<CategoryAp>,
    /// Mean over categories that have ground truth.
    pub mean: Option<f64>,
}

/// Area under the precision envelope of a ranked list of hits, in percent.
pub fn average_precision(hits: &[bool], ground_truth: usize) -> f64 {
    if ground_truth == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(hits.len());
    for (i, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        points.push((tp as f64 / ground_truth as f64, tp as f64 / (i + 1) as f64));
    }
    // precision envelope, right to left
    for i in (0..points.len().saturating_sub(1)).rev() {
        points[i].1 = points[i].1.max(points[i + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(r, p) in &points {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    100.0 * ap
}

/// Mesh average precision with meshes scored by F1 at `cfg.f1_tau`.
///
/// Each matched pair is rescaled per `cfg.rescale` using the ground truth and
/// sampled with a seed derived from `seed`, the image index and the
/// detection index.
pub fn ap_mesh(images: &[ImageEval], categories: &[String], cfg: &EvalConfig, seed: u64) -> Result<ApReport> {
    cfg.validate()?;
    ap_mesh_with_scorer(images, categories, cfg, |image, det, d, g| {
        detection_f1(&d.mesh, &g.mesh, image, det, cfg, seed)
    })
}

/// F1 at `cfg.f1_tau`, in percent, of detection `det` of image `image`
/// against a ground truth mesh, as scored by [`ap_mesh`].
pub fn detection_f1(
    pred: &TriangleMesh,
    gt: &TriangleMesh,
    image: usize,
    det: usize,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<f64> {
    let s = rescale_factor(gt, cfg.rescale)?;
    let pair_seed = derive_seed(derive_seed(seed, image as u64), det as u64);
    let p = sample_points(&pred.scaled(s), cfg.sample_count, pair_seed)?;
    let q = sample_points(&gt.scaled(s), cfg.sample_count, pair_seed)?;
    Ok(f_score(p.points(), q.points(), cfg.f1_tau, cfg.domain)?.f1)
}

/// Box average precision: [`ap_mesh_with_scorer`] with every mesh accepted.
pub fn ap_box(images: &[ImageEval], categories: &[String], cfg: &EvalConfig) -> Result<ApReport> {
    ap_mesh_with_scorer(images, categories, cfg, |_, _, _, _| Ok(100.0))
}

/// Average precision with a custom mesh score.
///
/// `score(image, detection_index, detection, ground_truth)` returns an F1 in
/// percent; a match is a true positive when it exceeds `100 * cfg.f1_threshold`.
pub fn ap_mesh_with_scorer<F>(
    images: &[ImageEval],
    categories: &[String],
    cfg: &EvalConfig,
    mut score: F,
) -> Result<ApReport>
where
    F: FnMut(usize, usize, &Detection, &GroundTruth) -> Result<f64>,
{
    let cat_index = |name: &str| {
        categories
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCategory(name.into()))
    };
    // (score, image, detection) per category, after gating
    let mut ranked: Vec<Vec<(f64, usize, usize)>> = vec![Vec::new(); categories.len()];
    let mut gt_count = vec![0usize; categories.len()];
    for (im, img) in images.iter().enumerate() {
        for g in &img.ground_truth {
            gt_count[cat_index(&g.category)?] += 1;
        }
        for (di, d) in img.detections.iter().enumerate() {
            let c = cat_index(&d.category)?;
            if !d.score.is_finite() {
                return Err(Error::OutOfRange {
                    name: "detection score",
                    value: d.score,
                });
            }
            let best = img
                .ground_truth
                .iter()
                .map(|g| box_iou(&d.bbox, &g.bbox))
                .fold(0.0, f64::max);
            if best > cfg.iou_gate {
                ranked[c].push((d.score, im, di));
            }
        }
    }
    let mut claimed: Vec<Vec<bool>> = images.iter().map(|i| vec![false; i.ground_truth.len()]).collect();
    let mut out = Vec::with_capacity(categories.len());
    for (c, list) in ranked.iter_mut().enumerate() {
        list.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut hits = Vec::with_capacity(list.len());
        for &(_, im, di) in list.iter() {
            let img = &images[im];
            let det = &img.detections[di];
            let candidate = img
                .ground_truth
                .iter()
                .enumerate()
                .filter(|(gi, g)| !claimed[im][*gi] && g.category == categories[c])
                .map(|(gi, g)| (gi, box_iou(&det.bbox, &g.bbox)))
                .filter(|&(_, iou)| iou > cfg.match_iou)
                .fold(None, |best: Option<(usize, f64)>, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                });
            let hit = match candidate {
                Some((gi, _)) => {
                    let f1 = score(im, di, det, &img.ground_truth[gi])?;
                    let tp = f1 > 100.0 * cfg.f1_threshold;
                    if tp {
                        claimed[im][gi] = true;
                    }
                    tp
                }
                None => false,
            };
            hits.push(hit);
        }
        let tp = hits.iter().filter(|&&h| h).count();
        out.push(CategoryAp {
            category: categories[c].clone(),
            ap: (gt_count[c] > 0).then(|| average_precision(&hits, gt_count[c])),
            ground_truth: gt_count[c],
            true_positives: tp,
            false_positives: hits.len() - tp,
        });
    }
    let defined: Vec<f64> = out.iter().filter_map(|c| c.ap).collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(ApReport { categories: out, mean })
}
