//! Pinhole camera.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Ray, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    #[serde(default = "default_up")]
    pub up: Vec3,
    /// Degrees, in (0, 180).
    pub vertical_fov: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_spp")]
    pub samples_per_pixel: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_up() -> Vec3 {
    Vec3::Z
}

fn default_spp() -> u32 {
    1
}

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("camera position coincides with look_at")]
    Degenerate,
    #[error("up vector is zero or parallel to the view direction")]
    BadUp,
    #[error("vertical_fov {0} must lie in (0, 180) degrees")]
    Fov(f64),
    #[error("image size {0}x{1} must be at least 1x1")]
    Size(u32, u32),
    #[error("samples_per_pixel must be >= 1")]
    Samples,
}

impl Camera {
    pub fn new(position: Vec3, look_at: Vec3, vertical_fov: f64, width: u32, height: u32) -> Self {
        Self {
            position,
            look_at,
            up: Vec3::Z,
            vertical_fov,
            width,
            height,
            samples_per_pixel: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let forward = self.look_at - self.position;
        if !(forward.length() > 0.0) || !forward.is_finite() {
            return Err(CameraError::Degenerate);
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < 180.0) {
            return Err(CameraError::Fov(self.vertical_fov));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::Size(self.width, self.height));
        }
        if self.samples_per_pixel == 0 {
            return Err(CameraError::Samples);
        }
        if !(forward.normalize().cross(self.up).length() > 1e-9) {
            return Err(CameraError::BadUp);
        }
        Ok(())
    }

    pub fn frame(&self) -> CameraFrame {
        CameraFrame::new(self)
    }

    /// Ray through pixel `(px, py)` at sub-pixel offset `jitter` in `[0, 1)²`;
    /// `(0.5, 0.5)` is the pixel center. Row 0 is the top of the image.
    pub fn primary_ray(&self, px: u32, py: u32, jitter: (f64, f64)) -> Ray {
        self.frame().ray(px, py, jitter)
    }
}

/// Orthonormal view basis precomputed from a [`Camera`].
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    origin: Vec3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    half_height: f64,
    half_width: f64,
    width: f64,
    height: f64,
}

impl CameraFrame {
    pub fn new(camera: &Camera) -> Self {
        let forward = (camera.look_at - camera.position).normalize();
        let right = forward.cross(camera.up).normalize();
        let up = right.cross(forward);
        let half_height = (camera.vertical_fov.to_radians() * 0.5).tan();
        let aspect = camera.width as f64 / camera.height as f64;
        Self {
            origin: camera.position,
            forward,
            right,
            up,
            half_height,
            half_width: half_height * aspect,
            width: camera.width as f64,
            height: camera.height as f64,
        }
    }

    pub fn forward(&self) -> Vec3 {
        self.forward
    }

    pub fn ray(&self, px: u32, py: u32, jitter: (f64, f64)) -> Ray {
        let sx = 2.0 * (px as f64 + jitter.0) / self.width - 1.0;
        let sy = 1.0 - 2.0 * (py as f64 + jitter.1) / self.height;
        let dir = self.forward + self.right * (sx * self.half_width) + self.up * (sy * self.half_height);
        Ray::new(self.origin, dir)
    }
}
