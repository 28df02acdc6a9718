//! Rigid transforms shared by scan stitching and probe placement.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Rotation tolerance: RᵀR = I and det R = 1 must hold to this accuracy.
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

/// A rigid transform: world = rotation * local + translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Pose of a depth-camera scan relative to the common world frame.
pub type ScanPose = Pose;

/// Commanded pose of the probe pointshell in the world frame.
pub type ProbePose = Pose;

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validated constructor: rejects non-finite entries and rotations that
    /// are not orthonormal with determinant +1 (tolerance 1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation.iter().any(|v| !v.is_finite())
            || self.translation.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Input("pose contains non-finite entries".into()));
        }
        let defect = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        if defect > ORTHONORMALITY_TOL {
            return Err(Error::Input(format!(
                "pose rotation is not orthonormal (‖RᵀR − I‖ = {defect:.3e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(Error::Input(format!(
                "pose rotation has determinant {det:.12} (expected +1)"
            )));
        }
        Ok(())
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotates a direction (no translation).
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// self ∘ other: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Row-major 12-number serialization [R | t] used by manifests and logs:
    /// r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    /// Parses the 12-number row-major [R | t] layout. Validates the rotation.
    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vector3::new(v[3], v[7], v[11]);
        Pose::new(rotation, translation)
    }
}
