//! Thread-parallel drivers over the single-threaded core kernels.

use std::collections::HashMap;

use meshgeo_core::cubify::cubify_element;
use meshgeo_core::metrics::{ap_mesh_with_scorer, box_iou, detection_f1, ApReport, EvalConfig, ImageEval};
use meshgeo_core::{CubifyConfig, TriangleMesh, VoxelGrid};
use rayon::prelude::*;

use crate::error::Result;

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "MESHGEO_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`] when it holds a positive
/// integer. Returns the thread count in effect.
pub fn configure_threads() -> usize {
    let requested = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    if let Some(n) = requested {
        // Fails only if the pool was already built; the existing one is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    rayon::current_num_threads()
}

/// [`meshgeo_core::cubify`] with batch elements spread across threads.
pub fn cubify_batch(grid: &VoxelGrid, cfg: &CubifyConfig) -> Result<Vec<TriangleMesh>> {
    cfg.validate()?;
    (0..grid.batch_size())
        .into_par_iter()
        .map(|n| Ok(cubify_element(grid, n, cfg)?))
        .collect()
}

/// [`meshgeo_core::metrics::ap_mesh`] with the mesh F1 of every detection and
/// ground truth pair that matching may examine computed in parallel first.
/// Gives the same report as the sequential version.
pub fn ap_mesh_parallel(images: &[ImageEval], categories: &[String], cfg: &EvalConfig, seed: u64) -> Result<ApReport> {
    cfg.validate()?;
    let pairs: Vec<(usize, usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(im, img)| {
            img.detections.iter().enumerate().flat_map(move |(di, d)| {
                img.ground_truth
                    .iter()
                    .enumerate()
                    .filter(move |(_, g)| g.category == d.category && box_iou(&d.bbox, &g.bbox) > cfg.match_iou)
                    .map(move |(gi, _)| (im, di, gi))
            })
        })
        .collect();
    let scores: HashMap<(usize, usize, usize), std::result::Result<f64, meshgeo_core::Error>> = pairs
        .into_par_iter()
        .map(|(im, di, gi)| {
            let img = &images[im];
            let f1 = detection_f1(&img.detections[di].mesh, &img.ground_truth[gi].mesh, im, di, cfg, seed);
            ((im, di, gi), f1)
        })
        .collect();
    let report = ap_mesh_with_scorer(images, categories, cfg, |im, di, _, g| {
        let gi = images[im]
            .ground_truth
            .iter()
            .position(|x| std::ptr::eq(x, g))
            .expect("ground truth belongs to its image");
        scores[&(im, di, gi)].clone()
    })?;
    Ok(report)
}
