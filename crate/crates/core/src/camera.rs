//! Pinhole camera geometry.
//!
//! Points are in camera coordinates with +z pointing into the scene. The
//! prediction space used for image-aligned voxels applies the intrinsics to
//! `x` and `y` and keeps linear depth as the third coordinate, so an
//! axis-aligned box in prediction space is a view frustum in camera space.

use alloc::vec::Vec;

use glam::{DVec2, DVec3};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        for (name, value) in [("fx", fx), ("fy", fy)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositive { name, value });
            }
        }
        for (name, value) in [("cx", cx), ("cy", cy)] {
            if !value.is_finite() {
                return Err(Error::OutOfRange { name, value });
            }
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    fn check_depth(index: usize, z: f64) -> Result<()> {
        if z > 0.0 {
            Ok(())
        } else {
            Err(Error::NonPositiveDepth { index, z })
        }
    }

    /// Projects one point to pixel coordinates `(fx x/z + cx, fy y/z + cy)`.
    pub fn project(&self, p: DVec3) -> Result<DVec2> {
        Self::check_depth(0, p.z)?;
        Ok(self.project_unchecked(p))
    }

    fn project_unchecked(&self, p: DVec3) -> DVec2 {
        DVec2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    pub fn project_points(&self, points: &[DVec3]) -> Result<Vec<DVec2>> {
        points
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                Self::check_depth(i, p.z)?;
                Ok(self.project_unchecked(p))
            })
            .collect()
    }

    /// Camera space to prediction space.
    pub fn frustum_transform(&self, points: &[DVec3]) -> Result<Vec<DVec3>> {
        points
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                Self::check_depth(i, p.z)?;
                Ok(self.project_unchecked(p).extend(p.z))
            })
            .collect()
    }

    /// Prediction space back to camera space.
    pub fn inverse_frustum_transform(&self, points: &[DVec3]) -> Result<Vec<DVec3>> {
        points
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                Self::check_depth(i, p.z)?;
                Ok(DVec3::new(
                    (p.x - self.cx) * p.z / self.fx,
                    (p.y - self.cy) * p.z / self.fy,
                    p.z,
                ))
            })
            .collect()
    }
}

fn check_extent_params(z_c: f64, f: f64, h: f64) -> Result<()> {
    for (name, value) in [("z_c", z_c), ("focal length", f), ("box height", h)] {
        if !(value > 0.0) {
            return Err(Error::NonPositive { name, value });
        }
    }
    Ok(())
}

/// Scale-normalized depth extent `(dz / z_c) * (f / h)`.
///
/// `z_c` is the depth of the object center, `f` the focal length and `h` the
/// height of the object's image box, all in consistent units.
pub fn normalize_depth_extent(dz: f64, z_c: f64, f: f64, h: f64) -> Result<f64> {
    check_extent_params(z_c, f, h)?;
    Ok(dz / z_c * (f / h))
}

pub fn denormalize_depth_extent(dz_bar: f64, z_c: f64, f: f64, h: f64) -> Result<f64> {
    check_extent_params(z_c, f, h)?;
    Ok(dz_bar * z_c * (h / f))
}

/// Log of the normalized extent, the quantity a regressor would predict.
pub fn normalize_depth_extent_log(dz: f64, z_c: f64, f: f64, h: f64) -> Result<f64> {
    let dz_bar = normalize_depth_extent(dz, z_c, f, h)?;
    if !(dz_bar > 0.0) {
        return Err(Error::NonPositive {
            name: "depth extent",
            value: dz,
        });
    }
    Ok(libm::log(dz_bar))
}

pub fn denormalize_depth_extent_log(log_dz_bar: f64, z_c: f64, f: f64, h: f64) -> Result<f64> {
    denormalize_depth_extent(libm::exp(log_dz_bar), z_c, f, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn principal_ray_projects_to_principal_point() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(k.project(DVec3::Z).unwrap(), DVec2::ZERO);
        let k = CameraIntrinsics::new(3.0, 4.0, 12.5, -2.0).unwrap();
        for z in [0.1, 1.0, 7.0] {
            let p = k.frustum_transform(&[DVec3::new(0.0, 0.0, z)]).unwrap()[0];
            assert_eq!(p, DVec3::new(12.5, -2.0, z));
        }
    }

    #[test]
    fn projection_arithmetic() {
        let k = CameraIntrinsics::new(10.0, 10.0, 5.0, 7.0).unwrap();
        let uv = k.project_points(&[DVec3::new(2.0, 3.0, 2.0)]).unwrap();
        assert_eq!(uv, vec![DVec2::new(15.0, 22.0)]);
    }

    #[test]
    fn non_positive_depth_names_point() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let pts = [DVec3::Z, DVec3::new(1.0, 1.0, 0.0)];
        assert_eq!(
            k.project_points(&pts),
            Err(Error::NonPositiveDepth { index: 1, z: 0.0 })
        );
        assert!(k.frustum_transform(&pts).is_err());
        assert!(k.inverse_frustum_transform(&pts).is_err());
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -2.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn prediction_space_cube_is_a_frustum() {
        let k = CameraIntrinsics::new(2.0, 2.0, 0.0, 0.0).unwrap();
        // corners of an axis-aligned box in prediction space
        let mut corners = vec![];
        for z in [1.0, 2.0] {
            for y in [-1.0, 1.0] {
                for x in [-1.0, 1.0] {
                    corners.push(DVec3::new(x, y, z));
                }
            }
        }
        let world = k.inverse_frustum_transform(&corners).unwrap();
        // faces at constant depth stay at constant depth
        assert!(world[..4].iter().all(|p| p.z == 1.0));
        assert!(world[4..].iter().all(|p| p.z == 2.0));
        // lateral edges are rays through the camera center
        for i in 0..4 {
            let (near, far) = (world[i], world[i + 4]);
            assert!(near.cross(far).length() < 1e-12);
            assert!(far.truncate().length() > near.truncate().length());
        }
    }

    #[test]
    fn depth_extent_arithmetic() {
        assert_eq!(normalize_depth_extent(2.0, 4.0, 100.0, 50.0).unwrap(), 1.0);
        assert_eq!(normalize_depth_extent(3.0, 3.0, 20.0, 20.0).unwrap(), 1.0);
        assert!(normalize_depth_extent(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(normalize_depth_extent(1.0, 1.0, -1.0, 1.0).is_err());
        assert!(denormalize_depth_extent(1.0, 1.0, 1.0, 0.0).is_err());
        let l = normalize_depth_extent_log(2.0, 4.0, 100.0, 50.0).unwrap();
        assert_eq!(l, 0.0);
        let back = denormalize_depth_extent_log(l, 4.0, 100.0, 50.0).unwrap();
        assert!((back - 2.0).abs() < 1e-12);
    }
}
