//! `MWTS1` named weight matrices and `MFEA1` image feature maps.
//!
//! `MWTS1`, little-endian: magic, version byte (1), u32 matrix count, then per
//! matrix a u32 name length, the UTF-8 name, u32 rows, u32 cols and
//! `rows*cols` row-major f32 values. Names are unique.
//!
//! Refinement stages are stored as `stage{k}.{name}` with the per-stage names
//! of [`StageConfig::named_matrices`]; a stage whose update is a graph
//! convolution (`update.w0`) is residual, one with a plain `update` matrix is
//! light.
//!
//! `MFEA1`, little-endian: magic, version byte (1), u32 image width and
//! height in pixels, u32 map count, then per map u32 channels, height, width
//! and `height*width*channels` f32 values with channels varying fastest.

use std::collections::BTreeSet;
use std::path::Path;

use meshgeo_core::refine::{FeatureMap, StageConfig, StageStyle, WeightMatrix};

use crate::atomic::write_atomic;
use crate::error::{Error, Result};

pub const MWTS_MAGIC: &[u8; 5] = b"MWTS1";
pub const MFEA_MAGIC: &[u8; 5] = b"MFEA1";
pub const FORMAT_VERSION: u8 = 1;

/// Ordered named matrices with unique names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightContainer {
    entries: Vec<(String, WeightMatrix)>,
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, matrix: WeightMatrix) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Format {
                path: Default::default(),
                message: format!("duplicate matrix name {name:?}"),
            });
        }
        self.entries.push((name, matrix));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightMatrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, w)| w)
    }

    pub fn entries(&self) -> &[(String, WeightMatrix)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_stages(stages: &[StageConfig]) -> Result<Self> {
        let mut out = Self::new();
        for (k, stage) in stages.iter().enumerate() {
            for (name, w) in stage.named_matrices() {
                out.push(format!("stage{k}.{name}"), w.clone())?;
            }
        }
        Ok(out)
    }

    /// Rebuilds every stored stage; `subdivide_before[k]` marks stages that
    /// subdivide their input mesh first.
    pub fn to_stages(&self, subdivide_before: &[usize]) -> Result<Vec<StageConfig>> {
        let prefixes: BTreeSet<usize> = self
            .entries
            .iter()
            .filter_map(|(n, _)| n.strip_prefix("stage")?.split('.').next()?.parse().ok())
            .collect();
        let count = prefixes.len();
        if count == 0 || prefixes.iter().copied().ne(0..count) {
            return Err(Error::Format {
                path: Default::default(),
                message: "matrices must be named stage0.*, stage1.*, ... without gaps".into(),
            });
        }
        if let Some(&k) = subdivide_before.iter().find(|&&k| k >= count) {
            return Err(Error::Format {
                path: Default::default(),
                message: format!("subdivided stage {k} does not exist ({count} stages)"),
            });
        }
        (0..count)
            .map(|k| {
                let prefix = format!("stage{k}.");
                let lookup = |name: &str| self.get(&format!("{prefix}{name}"));
                let style = if lookup("update.w0").is_some() {
                    StageStyle::Residual
                } else {
                    StageStyle::Light
                };
                StageConfig::from_named(style, subdivide_before.contains(&k), lookup).map_err(Error::from)
            })
            .collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, format!("truncated at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn header(&mut self, magic: &[u8; 5]) -> Result<()> {
        if self.take(5).ok() != Some(magic.as_slice()) {
            return Err(Error::format(self.path, format!("missing {} magic", String::from_utf8_lossy(magic))));
        }
        let version = self.take(1)?[0];
        if version != FORMAT_VERSION {
            return Err(Error::format(self.path, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.at == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::format(self.path, format!("{} trailing bytes", self.bytes.len() - self.at)))
        }
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format {
        path: Default::default(),
        message: format!("size {v} does not fit in u32"),
    })?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes the container; values are narrowed to f32.
pub fn encode_weights(c: &WeightContainer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MWTS_MAGIC);
    out.push(FORMAT_VERSION);
    push_u32(&mut out, c.len())?;
    for (name, w) in c.entries() {
        push_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, w.rows())?;
        push_u32(&mut out, w.cols())?;
        push_f32s(&mut out, w.values());
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8], path: &Path) -> Result<WeightContainer> {
    let mut r = Reader { bytes, at: 0, path };
    r.header(MWTS_MAGIC)?;
    let count = r.u32()?;
    let mut out = WeightContainer::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "matrix name is not UTF-8"))?
            .to_string();
        let (rows, cols) = (r.u32()?, r.u32()?);
        let values = r.f32s(rows.saturating_mul(cols))?;
        let w = WeightMatrix::new(rows, cols, values).map_err(|e| Error::format(path, format!("{name}: {e}")))?;
        out.push(name, w).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path, message),
            other => other,
        })?;
    }
    r.finish()?;
    Ok(out)
}

pub fn read_weights(path: &Path) -> Result<WeightContainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, path)
}

pub fn write_weights(c: &WeightContainer, path: &Path) -> Result<()> {
    let bytes = encode_weights(c)?;
    write_atomic(path, |w| w.write_all(&bytes))
}

/// Feature maps of one image together with the image size in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub image_width: u32,
    pub image_height: u32,
    pub maps: Vec<FeatureMap>,
}

pub fn encode_features(f: &FeatureMaps) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MFEA_MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&f.image_width.to_le_bytes());
    out.extend_from_slice(&f.image_height.to_le_bytes());
    push_u32(&mut out, f.maps.len())?;
    for m in &f.maps {
        push_u32(&mut out, m.channels())?;
        push_u32(&mut out, m.height())?;
        push_u32(&mut out, m.width())?;
        push_f32s(&mut out, m.values());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureMaps> {
    let mut r = Reader { bytes, at: 0, path };
    r.header(MFEA_MAGIC)?;
    let (image_width, image_height) = (r.u32()? as u32, r.u32()? as u32);
    if image_width == 0 || image_height == 0 {
        return Err(Error::format(path, "image size must be positive"));
    }
    let count = r.u32()?;
    let mut maps = Vec::with_capacity(count.min(64));
    for i in 0..count {
        let (c, h, w) = (r.u32()?, r.u32()?, r.u32()?);
        let values = r.f32s(c.saturating_mul(h).saturating_mul(w))?;
        maps.push(FeatureMap::new(c, h, w, values).map_err(|e| Error::format(path, format!("map {i}: {e}")))?);
    }
    r.finish()?;
    Ok(FeatureMaps {
        image_width,
        image_height,
        maps,
    })
}

pub fn read_features(path: &Path) -> Result<FeatureMaps> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

pub fn write_features(f: &FeatureMaps, path: &Path) -> Result<()> {
    let bytes = encode_features(f)?;
    write_atomic(path, |w| w.write_all(&bytes))
}
