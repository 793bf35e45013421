//! Frames, spherical directions and the SO(3)/SE(3) primitives shared by the
//! rest of the crate.
//!
//! Rotations are stored as 3×3 matrices. Quaternions only appear when a
//! rotation crosses a file boundary (see [`Rotation::to_quaternion`]).

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `RᵀR = I` and `det R = 1` for a matrix to count as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Below this rotation angle (rad) the exponential map switches to its series.
pub const SMALL_ANGLE: f64 = 1e-8;

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn is_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// A proper rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates orthonormality and a positive determinant.
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        if !m.iter().all(|c| c.is_finite()) {
            return Err(Error::Validation("rotation has non-finite entries".into()));
        }
        let defect = (m.transpose() * m - Mat3::identity()).amax();
        if defect > ROTATION_TOLERANCE {
            return Err(Error::Validation(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {defect:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::Validation(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Rotation(m))
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        so3_exp(&(axis * (angle / n)), 1.0)
    }

    pub fn about_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::x(), angle)
    }

    pub fn about_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::y(), angle)
    }

    pub fn about_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), angle)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Rotation angle in `[0, π]`, accurate for small angles.
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        let sin_part = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm() * 0.5;
        let cos_part = (m.trace() - 1.0) * 0.5;
        sin_part.atan2(cos_part)
    }

    /// Largest deviation from orthonormality, `max |RᵀR − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).amax()
    }

    /// Projects onto the nearest rotation (polar decomposition).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Rotation(r)
    }

    /// Builds a rotation from a quaternion `(x, y, z, w)`; the quaternion is normalized.
    pub fn from_quaternion(x: f64, y: f64, z: f64, w: f64) -> Result<Self> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::Validation("quaternion has zero or non-finite norm".into()));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(Rotation(*uq.to_rotation_matrix().matrix()))
    }

    /// Unit quaternion `[x, y, z, w]`, canonicalized to `w ≥ 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0));
        let q = uq.quaternion();
        let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
        [sign * q.i, sign * q.j, sign * q.k, sign * q.w]
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Rigid transform with a timestamp. Maps body coordinates into the parent frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub position: Vec3,
    pub timestamp: f64,
}

impl Pose {
    pub fn new(rotation: Rotation, position: Vec3, timestamp: f64) -> Self {
        Pose {
            rotation,
            position,
            timestamp,
        }
    }

    pub fn identity(timestamp: f64) -> Self {
        Pose::new(Rotation::identity(), Vec3::zeros(), timestamp)
    }

    /// `self ∘ other`; the result carries `other`'s timestamp.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            position: self.position + self.rotation * other.position,
            timestamp: other.timestamp,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            rotation: r_inv,
            position: -(r_inv * self.position),
            timestamp: self.timestamp,
        }
    }

    /// Motion from `self` to `other` expressed in `self`'s frame: `self⁻¹ ∘ other`.
    pub fn relative_to(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.rotation * p
    }
}

/// Ordered pose sequence with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new() -> Self {
        Trajectory { poses: Vec::new() }
    }

    pub fn from_poses(poses: Vec<Pose>) -> Result<Self> {
        let mut t = Trajectory::new();
        for p in poses {
            t.push(p)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, pose: Pose) -> Result<()> {
        if !pose.timestamp.is_finite() {
            return Err(Error::Validation("pose timestamp is not finite".into()));
        }
        if let Some(last) = self.poses.last() {
            if pose.timestamp <= last.timestamp {
                return Err(Error::NonMonotonicTimestamp {
                    previous: last.timestamp,
                    next: pose.timestamp,
                });
            }
        }
        self.poses.push(pose);
        Ok(())
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn last(&self) -> Option<&Pose> {
        self.poses.last()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Pose> {
        self.poses.iter()
    }
}

/// Azimuth/elevation/range of a point in the sensor frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphericalDirection {
    pub azimuth: f64,
    pub elevation: f64,
    pub range: f64,
}

impl SphericalDirection {
    pub fn to_cartesian(&self) -> Vec3 {
        direction_row(self) * self.range
    }
}

pub fn cartesian_to_spherical(p: &Vec3) -> Result<SphericalDirection> {
    let range = p.norm();
    if range == 0.0 {
        return Err(Error::ZeroRange);
    }
    if !range.is_finite() {
        return Err(Error::Validation("point has non-finite coordinates".into()));
    }
    let elevation = (p.z / range).clamp(-1.0, 1.0).asin();
    // atan2(0, 0) = 0 covers the poles.
    let mut azimuth = p.y.atan2(p.x);
    if azimuth == -PI {
        azimuth = PI;
    }
    Ok(SphericalDirection {
        azimuth,
        elevation,
        range,
    })
}

/// Unit vector along the ray of `d`: `[cosφ cosθ, sinφ cosθ, sinθ]`.
pub fn direction_row(d: &SphericalDirection) -> Vec3 {
    let (sp, cp) = d.azimuth.sin_cos();
    let (st, ct) = d.elevation.sin_cos();
    Vec3::new(cp * ct, sp * ct, st)
}

/// Rotation `exp([ω·dt]×)` by the Rodrigues formula.
pub fn so3_exp(omega: &Vec3, dt: f64) -> Rotation {
    let phi = omega * dt;
    let theta = phi.norm();
    let k = skew(&phi);
    if theta < SMALL_ANGLE {
        return Rotation(Mat3::identity() + k + k * k * 0.5);
    }
    let half = 0.5 * theta;
    let a = theta.sin() / theta;
    let b = 2.0 * (half.sin() / theta).powi(2);
    Rotation(Mat3::identity() + k * a + k * k * b)
}

/// Left Jacobian of SO(3): maps a constant body-frame velocity held over the
/// rotation `φ` to the resulting body-frame displacement per unit time.
pub fn so3_left_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    let (b, c) = if theta < 1e-4 {
        let t2 = theta * theta;
        (
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let half = 0.5 * theta;
        (
            2.0 * (half.sin() / theta).powi(2),
            (theta - theta.sin()) / (theta * theta * theta),
        )
    };
    Mat3::identity() + k * b + k * k * c
}

/// Body-frame increment of a constant twist `(v, ω)` held for `dt`.
pub fn se3_exp(v: &Vec3, omega: &Vec3, dt: f64) -> (Rotation, Vec3) {
    let phi = omega * dt;
    (so3_exp(omega, dt), so3_left_jacobian(&phi) * (v * dt))
}

/// Velocity of point `p` on a rigid body whose point `s` moves at `v_s`.
pub fn rigid_point_velocity(v_s: &Vec3, omega: &Vec3, p: &Vec3, s: &Vec3) -> Vec3 {
    v_s + omega.cross(&(p - s))
}
