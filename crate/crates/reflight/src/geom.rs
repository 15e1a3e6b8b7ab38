//! Shared math primitives: rigid transforms, the pinhole camera model,
//! projection/unprojection and mirror reflection.
//!
//! Conventions used throughout the crate:
//! - camera space is +Z forward, +X right, +Y down in image space;
//! - poses are stored camera-to-world;
//! - distances are meters, angles radians, colors linear-light.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// A proper rigid motion: `p ↦ rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    /// Rotation about a unit axis by `angle` radians (Rodrigues).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalize();
        let k = Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
        let rotation = Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos());
        Self {
            rotation,
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Rotate a direction vector (no translation).
    pub fn apply_dir(&self, d: Vec3) -> Vec3 {
        self.rotation * d
    }

    /// `compose(a, b)` applies `b` first, then `a`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Max elementwise deviation of `Rᵀ R` from identity, plus |det − 1|.
    pub fn rigidity_error(&self) -> f64 {
        let e = self.rotation.transpose() * self.rotation - Mat3::identity();
        let ortho = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        ortho.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_rigid(&self, tol: f64) -> bool {
        self.rigidity_error() < tol
    }

    /// Rotation angle in radians (geodesic distance to the identity).
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Intrinsics with a given horizontal field of view, principal point at
    /// the image center and square pixels.
    pub fn from_fov(width: usize, height: usize, fov_x: f64) -> Self {
        let fx = width as f64 / (2.0 * (fov_x / 2.0).tan());
        Self {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    /// Same camera at `1/s` resolution.
    pub fn downscaled(&self, s: usize) -> Self {
        let sf = s as f64;
        Self {
            fx: self.fx / sf,
            fy: self.fy / sf,
            cx: self.cx / sf,
            cy: self.cy / sf,
            width: self.width / s,
            height: self.height / s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.cx < 0.0
            || self.cx >= self.width as f64
            || self.cy < 0.0
            || self.cy >= self.height as f64
        {
            return Err(Error::InvalidInput(
                "principal point outside image bounds".into(),
            ));
        }
        Ok(())
    }
}

/// Back-project pixel `(u, v)` at `depth` meters into camera space.
pub fn unproject(pixel: (f64, f64), depth: f64, intr: &Intrinsics) -> Result<Vec3> {
    if depth <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "unproject requires positive depth, got {depth}"
        )));
    }
    let (u, v) = pixel;
    Ok(Vec3::new(
        (u - intr.cx) * depth / intr.fx,
        (v - intr.cy) * depth / intr.fy,
        depth,
    ))
}

/// Project a camera-space point to pixel coordinates. Returns `None` behind
/// the camera.
pub fn project(p: Vec3, intr: &Intrinsics) -> Option<(f64, f64)> {
    if p.z <= 0.0 {
        return None;
    }
    Some((p.x / p.z * intr.fx + intr.cx, p.y / p.z * intr.fy + intr.cy))
}

/// Mirror reflection of a unit `incident` direction about a unit `normal`.
pub fn reflect(incident: Vec3, normal: Vec3) -> Result<Vec3> {
    const UNIT_TOL: f64 = 1e-6;
    if (incident.norm() - 1.0).abs() > UNIT_TOL || (normal.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidInput(
            "reflect expects unit-length vectors".into(),
        ));
    }
    Ok(incident - normal * (2.0 * incident.dot(&normal)))
}

/// Camera-to-world pose at `eye` looking toward `target`, with world +Y up
/// mapping to image "up" (camera −Y).
pub fn look_at(eye: Vec3, target: Vec3) -> RigidTransform {
    let up = Vec3::new(0.0, 1.0, 0.0);
    let forward = (target - eye).normalize();
    let mut down = forward * up.dot(&forward) - up;
    if down.norm() < 1e-9 {
        // Looking straight up/down: pick a stable secondary axis.
        down = Vec3::new(0.0, 0.0, if forward.y > 0.0 { 1.0 } else { -1.0 });
    }
    let down = down.normalize();
    let right = down.cross(&forward);
    let rotation = Mat3::from_columns(&[right, down, forward]);
    RigidTransform {
        rotation,
        translation: eye,
    }
}
