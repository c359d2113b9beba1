//! Ideal pinhole camera: projection, its Jacobian, and image-bounds checks.

use nalgebra::{Matrix2x3, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Vec3;

/// Default minimum depth for a point to count as in front of the camera (m).
pub const DEFAULT_Z_MIN: f64 = 1e-6;
/// Default image-border margin for visibility checks (px).
pub const DEFAULT_MARGIN: f64 = 2.0;

/// Pinhole intrinsics, `K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Minimum depth accepted by [`project`] (m).
    pub z_min: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
            z_min: DEFAULT_Z_MIN,
        }
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let intr = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            z_min: DEFAULT_Z_MIN,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width
            && self.cy > 0.0
            && self.cy < self.height
            && self.z_min >= 0.0
            && [self.fx, self.fy, self.cx, self.cy, self.width, self.height]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid intrinsics {self:?}"
            )))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        PixelPoint { u, v }
    }
}

fn check_depth(p_cam: &Vec3, intr: &Intrinsics) -> Result<()> {
    // negated comparison also rejects NaN depth
    if !(p_cam.z > intr.z_min) {
        return Err(Error::BehindCamera {
            depth: p_cam.z,
            z_min: intr.z_min,
        });
    }
    Ok(())
}

/// `u = fx X / Z + cx`, `v = fy Y / Z + cy`.
pub fn project(p_cam: &Vec3, intr: &Intrinsics) -> Result<PixelPoint> {
    check_depth(p_cam, intr)?;
    let inv_z = 1.0 / p_cam.z;
    Ok(PixelPoint::new(
        intr.fx * p_cam.x * inv_z + intr.cx,
        intr.fy * p_cam.y * inv_z + intr.cy,
    ))
}

/// Derivative of [`project`] with respect to the camera-frame point.
///
/// This is `D_p K S` with `S = [[1/Z, 0, -X/Z^2], [0, 1/Z, -Y/Z^2], [0, 0, 0]]`; the zero third
/// row of `S` is dropped by `D_p`, so the product is formed directly as 2x3.
pub fn projection_jacobian(p_cam: &Vec3, intr: &Intrinsics) -> Result<Matrix2x3<f64>> {
    check_depth(p_cam, intr)?;
    let inv_z = 1.0 / p_cam.z;
    let inv_z2 = inv_z * inv_z;
    Ok(Matrix2x3::new(
        intr.fx * inv_z,
        0.0,
        -intr.fx * p_cam.x * inv_z2,
        0.0,
        intr.fy * inv_z,
        -intr.fy * p_cam.y * inv_z2,
    ))
}

pub fn pixel_in_bounds(px: &PixelPoint, intr: &Intrinsics, margin: f64) -> bool {
    px.u >= margin && px.u <= intr.width - margin && px.v >= margin && px.v <= intr.height - margin
}

/// True iff every corner is in front of the camera and inside the image minus `margin`.
pub fn corners_visible(
    pixels: &[PixelPoint; 4],
    depths: &[f64; 4],
    intr: &Intrinsics,
    margin: f64,
) -> bool {
    depths.iter().all(|&z| z > intr.z_min)
        && pixels.iter().all(|px| pixel_in_bounds(px, intr, margin))
}
