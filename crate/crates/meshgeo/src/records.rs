//! JSON-lines detection and ground-truth records.
//!
//! One object per line:
//!
//! ```text
//! {"image_id": "0001", "category": "chair", "score": 0.93, "box": [12, 40, 180, 220], "mesh": "meshes/d0.obj"}
//! ```
//!
//! Ground-truth records omit `score`. `image_id` may be a string or an
//! integer. Relative mesh paths are resolved against the directory of the
//! JSONL file. Blank lines are skipped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use meshgeo_core::metrics::{BoundingBox2, Detection, GroundTruth, ImageEval};
use meshgeo_core::TriangleMesh;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::obj::read_obj;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(untagged)]
enum RawImageId {
    Int(i64),
    Text(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    image_id: RawImageId,
    category: String,
    #[serde(default)]
    score: Option<f64>,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    mesh: PathBuf,
}

/// One detection (with `score`) or ground-truth annotation (without).
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub image_id: String,
    pub category: String,
    pub score: Option<f64>,
    pub bbox: BoundingBox2,
    /// Resolved against the JSONL file's directory.
    pub mesh: PathBuf,
}

fn parse_records(text: &str, path: &Path, detections: bool) -> Result<Vec<Record>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        match (detections, raw.score) {
            (true, None) => return Err(Error::parse(path, line_no, "detection has no score")),
            (true, Some(s)) if !s.is_finite() => return Err(Error::parse(path, line_no, "score must be finite")),
            (false, Some(_)) => return Err(Error::parse(path, line_no, "ground truth has a score")),
            _ => {}
        }
        let [x0, y0, x1, y1] = raw.bbox;
        let bbox = BoundingBox2::new(x0, y0, x1, y1).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        let image_id = match raw.image_id {
            RawImageId::Int(n) => n.to_string(),
            RawImageId::Text(s) => s,
        };
        out.push(Record {
            image_id,
            category: raw.category,
            score: raw.score,
            bbox,
            mesh: base.join(raw.mesh),
        });
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, path, true)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, path, false)
}

/// Evaluation input assembled from record files.
#[derive(Debug, Clone)]
pub struct EvalSet {
    /// Image ids in index order (sorted).
    pub image_ids: Vec<String>,
    pub images: Vec<ImageEval>,
    /// Sorted ground-truth categories.
    pub categories: Vec<String>,
}

/// Groups records by image (images sorted by id, records in file order) and
/// loads every referenced mesh once, in parallel.
pub fn build_eval_set(detections: &[Record], ground_truth: &[Record]) -> Result<EvalSet> {
    let paths: BTreeSet<&PathBuf> = detections.iter().chain(ground_truth).map(|r| &r.mesh).collect();
    let meshes: HashMap<&PathBuf, TriangleMesh> = paths
        .into_par_iter()
        .map(|p| read_obj(p).map(|m| (p, m)))
        .collect::<Result<_>>()?;

    let mut by_image: BTreeMap<&str, ImageEval> = BTreeMap::new();
    for r in ground_truth {
        by_image.entry(&r.image_id).or_default().ground_truth.push(GroundTruth {
            category: r.category.clone(),
            bbox: r.bbox,
            mesh: meshes[&r.mesh].clone(),
        });
    }
    for r in detections {
        by_image.entry(&r.image_id).or_default().detections.push(Detection {
            category: r.category.clone(),
            score: r.score.unwrap_or(0.0),
            bbox: r.bbox,
            mesh: meshes[&r.mesh].clone(),
        });
    }
    let categories: BTreeSet<String> = ground_truth.iter().map(|r| r.category.clone()).collect();
    let (image_ids, images) = by_image.into_iter().map(|(k, v)| (k.to_string(), v)).unzip();
    Ok(EvalSet {
        image_ids,
        images,
        categories: categories.into_iter().collect(),
    })
}
