use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Batched occupancy probabilities with layout `N x D x H x W` (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 4],
    values: Vec<f32>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 4], values: Vec<f32>) -> Result<Self> {
        check_dims(dims)?;
        let expected = dims.iter().product();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                what: "voxel values",
                expected,
                actual: values.len(),
            });
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange {
                name: "occupancy probability",
                value: bad as f64,
            });
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            dims,
            values: vec![0.0; dims.iter().product()],
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch_size(&self) -> usize {
        self.dims[0]
    }

    /// `(D, H, W)` of one batch element.
    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.dims[1], self.dims[2], self.dims[3]]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn index(&self, n: usize, z: usize, y: usize, x: usize) -> usize {
        let [_, d, h, w] = self.dims;
        ((n * d + z) * h + y) * w + x
    }

    pub fn get(&self, n: usize, z: usize, y: usize, x: usize) -> f32 {
        self.values[self.index(n, z, y, x)]
    }

    pub fn set(&mut self, n: usize, z: usize, y: usize, x: usize, value: f32) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange {
                name: "occupancy probability",
                value: value as f64,
            });
        }
        let i = self.index(n, z, y, x);
        self.values[i] = value;
        Ok(())
    }

    /// Values of batch element `n` in `D x H x W` order.
    pub fn batch(&self, n: usize) -> &[f32] {
        let len = self.dims[1] * self.dims[2] * self.dims[3];
        &self.values[n * len..(n + 1) * len]
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

fn check_dims(dims: [usize; 4]) -> Result<()> {
    if let Some(&d) = dims.iter().find(|&&d| d == 0) {
        return Err(Error::NonPositive {
            name: "voxel grid dimension",
            value: d as f64,
        });
    }
    Ok(())
}
