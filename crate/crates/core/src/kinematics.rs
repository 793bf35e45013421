//! Vehicle kinematic model: recovers the vehicle angular velocity from the
//! sensor velocity using the fixed instantaneous-center-of-rotation axes.
//!
//! Vehicle frame: origin at the center of the rear wheel axis, X forward,
//! Y along the rear axis to the left, Z up. Points on the rear-axle line have
//! no Y velocity; points on the vertical line through `x = m` have no Z
//! velocity; roll rate is zero.

use crate::ego_velocity::SensorVelocityEstimate;
use crate::error::{Error, Result};
use crate::geometry::{is_finite, rigid_point_velocity, Mat3, Rotation, Vec3};

/// Minimum distance (m) between the sensor and either rotation axis along X.
pub const MIN_AXIS_DISTANCE: f64 = 1e-3;

/// Sensor extrinsics and wheelbase constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleGeometry {
    /// Maps sensor-frame vectors into the vehicle frame.
    pub rotation_vs: Rotation,
    /// Sensor position in the vehicle frame (m).
    pub s: Vec3,
    /// Half the distance between the wheel axes (m).
    pub m: f64,
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        VehicleGeometry {
            rotation_vs: Rotation::identity(),
            s: Vec3::new(0.8, 0.0, 0.5),
            m: 0.256,
        }
    }
}

impl VehicleGeometry {
    pub fn new(rotation_vs: Rotation, s: Vec3, m: f64) -> Result<Self> {
        let g = VehicleGeometry { rotation_vs, s, m };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !is_finite(&self.s) || !self.m.is_finite() {
            return Err(Error::Validation("vehicle geometry has non-finite values".into()));
        }
        if !(self.m > 0.0) {
            return Err(Error::Validation(format!("vehicle.m = {} violates m > 0", self.m)));
        }
        Rotation::from_matrix(*self.rotation_vs.matrix())?;
        self.check_observability().map_err(|e| Error::Validation(e.to_string()))
    }

    fn check_observability(&self) -> Result<()> {
        let sx = self.s.x;
        if sx.abs() <= MIN_AXIS_DISTANCE {
            return Err(Error::SingularGeometry(format!(
                "vehicle.s_x = {sx} violates |s_x| > {MIN_AXIS_DISTANCE}: the sensor sits on the \
                 rear-axle line and yaw rate is unobservable; mount it further along X"
            )));
        }
        if (self.m - sx).abs() <= MIN_AXIS_DISTANCE {
            return Err(Error::SingularGeometry(format!(
                "|m − s_x| = {} violates |m − s_x| > {MIN_AXIS_DISTANCE}: the sensor sits on the \
                 mid-wheelbase line and pitch rate is unobservable; mount it further along X",
                (self.m - sx).abs()
            )));
        }
        Ok(())
    }
}

/// Vehicle-frame motion recovered from one sensor velocity estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleMotion {
    /// Sensor velocity expressed in vehicle axes (m/s).
    pub v_s_vehicle: Vec3,
    /// Vehicle angular velocity (rad/s); the X component is exactly zero.
    pub omega: Vec3,
    pub v_covariance: Mat3,
    pub omega_covariance: Mat3,
}

/// Rotates the sensor velocity and its covariance into vehicle axes.
pub fn to_vehicle_frame(est: &SensorVelocityEstimate, geom: &VehicleGeometry) -> (Vec3, Mat3) {
    let r = geom.rotation_vs.matrix();
    let c = r * est.covariance * r.transpose();
    (r * est.velocity, (c + c.transpose()) * 0.5)
}

/// `ω = (0, v_z / (m − s_x), v_y / s_x)`.
pub fn angular_velocity(v_vehicle: &Vec3, geom: &VehicleGeometry) -> Result<Vec3> {
    geom.check_observability()?;
    let sx = geom.s.x;
    Ok(Vec3::new(0.0, v_vehicle.z / (geom.m - sx), v_vehicle.y / sx))
}

/// Jacobian of [`angular_velocity`] with respect to the vehicle-frame velocity.
pub fn angular_velocity_jacobian(geom: &VehicleGeometry) -> Result<Mat3> {
    geom.check_observability()?;
    let sx = geom.s.x;
    Ok(Mat3::new(
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0 / (geom.m - sx),
        0.0,
        1.0 / sx,
        0.0,
    ))
}

/// `C_ω = J C_v Jᵀ`, evaluated entry by entry so the first row and column are
/// exactly zero.
pub fn propagate_covariance(c_v: &Mat3, geom: &VehicleGeometry) -> Result<Mat3> {
    geom.check_observability()?;
    let sx = geom.s.x;
    let pitch_arm = geom.m - sx;
    let var_z = c_v[(2, 2)] / (pitch_arm * pitch_arm);
    let var_y = c_v[(1, 1)] / (sx * sx);
    let cov_yz = 0.5 * (c_v[(1, 2)] + c_v[(2, 1)]) / (sx * geom.m - sx * sx);
    Ok(Mat3::new(
        0.0, 0.0, 0.0, //
        0.0, var_z, cov_yz, //
        0.0, cov_yz, var_y,
    ))
}

/// Velocity of the vehicle origin (rear-axle center).
pub fn vehicle_origin_velocity(v_s_vehicle: &Vec3, omega: &Vec3, geom: &VehicleGeometry) -> Vec3 {
    rigid_point_velocity(v_s_vehicle, omega, &Vec3::zeros(), &geom.s)
}

/// Sensor velocity (vehicle axes) produced by a vehicle twist about the origin.
pub fn sensor_velocity_from_twist(v_origin: &Vec3, omega: &Vec3, geom: &VehicleGeometry) -> Vec3 {
    rigid_point_velocity(v_origin, omega, &geom.s, &Vec3::zeros())
}

/// Origin velocity that satisfies both rotation-axis constraints for the
/// given forward speed and angular velocity (roll ignored).
pub fn model_consistent_origin_velocity(forward: f64, omega: &Vec3, geom: &VehicleGeometry) -> Vec3 {
    Vec3::new(forward, 0.0, omega.y * geom.m)
}

/// Full sensor-to-vehicle chain for one estimate.
pub fn vehicle_motion(est: &SensorVelocityEstimate, geom: &VehicleGeometry) -> Result<VehicleMotion> {
    let (v_s_vehicle, v_covariance) = to_vehicle_frame(est, geom);
    let omega = angular_velocity(&v_s_vehicle, geom)?;
    let omega_covariance = propagate_covariance(&v_covariance, geom)?;
    Ok(VehicleMotion {
        v_s_vehicle,
        omega,
        v_covariance,
        omega_covariance,
    })
}
