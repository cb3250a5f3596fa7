//! `VOXL1` occupancy grids.
//!
//! Layout, little-endian: magic `VOXL1`, version byte (1), encoding byte,
//! dims `N D H W` as u32, then the payload:
//!
//! - dense-float (0): `N*D*H*W` f32 values
//! - dense-bit (1): one bit per cell, least significant bit first
//! - run-length (2): u32 run count, then u32 run lengths alternating empty and
//!   occupied cells, starting with an empty run that may be zero
//!
//! Dense-bit and run-length store binary grids (every value 0 or 1) only.

use std::path::Path;

use meshgeo_core::VoxelGrid;

use crate::atomic::write_atomic;
use crate::error::{Error, Result};

pub const VOXL_MAGIC: &[u8; 5] = b"VOXL1";
pub const VOXL_VERSION: u8 = 1;
const HEADER_LEN: usize = 5 + 1 + 1 + 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoxelEncoding {
    #[default]
    DenseFloat,
    DenseBit,
    RunLength,
}

impl VoxelEncoding {
    fn code(self) -> u8 {
        match self {
            VoxelEncoding::DenseFloat => 0,
            VoxelEncoding::DenseBit => 1,
            VoxelEncoding::RunLength => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(VoxelEncoding::DenseFloat),
            1 => Some(VoxelEncoding::DenseBit),
            2 => Some(VoxelEncoding::RunLength),
            _ => None,
        }
    }
}

/// Serializes `grid`. Fails for a non-binary grid with a binary encoding.
pub fn encode_voxels(grid: &VoxelGrid, encoding: VoxelEncoding) -> Result<Vec<u8>> {
    let values = grid.values();
    if encoding != VoxelEncoding::DenseFloat && !grid.is_binary() {
        return Err(Error::Format {
            path: Default::default(),
            message: "bit and run-length encodings need a binary grid".into(),
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * 4);
    out.extend_from_slice(VOXL_MAGIC);
    out.push(VOXL_VERSION);
    out.push(encoding.code());
    for d in grid.dims() {
        let d = u32::try_from(d).map_err(|_| Error::Format {
            path: Default::default(),
            message: format!("dimension {d} does not fit in u32"),
        })?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match encoding {
        VoxelEncoding::DenseFloat => {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        VoxelEncoding::DenseBit => {
            let mut bytes = vec![0u8; values.len().div_ceil(8)];
            for (i, &v) in values.iter().enumerate() {
                if v == 1.0 {
                    bytes[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend_from_slice(&bytes);
        }
        VoxelEncoding::RunLength => {
            let mut runs: Vec<u32> = Vec::new();
            let mut current = 0.0f32;
            let mut length = 0u32;
            for &v in values {
                if v == current {
                    length += 1;
                } else {
                    runs.push(length);
                    current = v;
                    length = 1;
                }
            }
            runs.push(length);
            out.extend_from_slice(&(runs.len() as u32).to_le_bytes());
            for r in runs {
                out.extend_from_slice(&r.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

/// Parses a `VOXL1` buffer; `path` only labels errors.
pub fn decode_voxels(bytes: &[u8], path: &Path) -> Result<VoxelGrid> {
    let bad = |m: String| Error::format(path, m);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..5] != VOXL_MAGIC {
        return Err(bad("missing VOXL1 magic".into()));
    }
    if bytes[5] != VOXL_VERSION {
        return Err(bad(format!("unsupported version {}", bytes[5])));
    }
    let encoding = VoxelEncoding::from_code(bytes[6]).ok_or_else(|| bad(format!("unknown encoding {}", bytes[6])))?;
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32_at(bytes, 7 + 4 * i).unwrap() as usize;
        if *d == 0 {
            return Err(bad("dimensions must be positive".into()));
        }
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("grid size overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    let expect_len = |want: usize| {
        if payload.len() == want {
            Ok(())
        } else {
            Err(bad(format!("payload is {} bytes, expected {want}", payload.len())))
        }
    };
    let values = match encoding {
        VoxelEncoding::DenseFloat => {
            expect_len(count.checked_mul(4).ok_or_else(|| bad("grid size overflows".into()))?)?;
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
        VoxelEncoding::DenseBit => {
            expect_len(count.div_ceil(8))?;
            (0..count).map(|i| ((payload[i / 8] >> (i % 8)) & 1) as f32).collect()
        }
        VoxelEncoding::RunLength => {
            let runs = u32_at(payload, 0).ok_or_else(|| bad("missing run count".into()))? as usize;
            expect_len(runs.checked_add(1).and_then(|r| r.checked_mul(4)).ok_or_else(|| bad("run count overflows".into()))?)?;
            let mut values = Vec::with_capacity(count);
            for k in 0..runs {
                let len = u32_at(payload, 4 + 4 * k).unwrap() as usize;
                if values.len() + len > count {
                    return Err(bad("runs cover more cells than the grid has".into()));
                }
                values.resize(values.len() + len, (k % 2) as f32);
            }
            if values.len() != count {
                return Err(bad(format!("runs cover {} of {count} cells", values.len())));
            }
            values
        }
    };
    VoxelGrid::new(dims, values).map_err(|e| bad(e.to_string()))
}

pub fn read_voxels(path: &Path) -> Result<VoxelGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_voxels(&bytes, path)
}

pub fn write_voxels(grid: &VoxelGrid, encoding: VoxelEncoding, path: &Path) -> Result<()> {
    let bytes = encode_voxels(grid, encoding).map_err(|e| match e {
        Error::Format { message, .. } => Error::format(path, message),
        other => other,
    })?;
    write_atomic(path, |w| w.write_all(&bytes))
}
