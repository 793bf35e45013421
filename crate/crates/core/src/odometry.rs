//! Per-scan motion estimation and pose integration.

use std::time::Instant;

use crate::ego_velocity::{estimate_velocity_ransac, RansacParams, Scan};
use crate::error::{Error, Result};
use crate::geometry::{se3_exp, so3_exp, Mat3, Pose, Trajectory, Vec3};
use crate::kinematics::{vehicle_motion, vehicle_origin_velocity, VehicleGeometry};

/// Orthonormality drift above which integrated rotations are re-projected.
pub const MAX_ROTATION_DRIFT: f64 = 1e-9;

/// Everything estimated from one scan, in vehicle axes.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionEstimate {
    pub timestamp: f64,
    /// Sensor velocity expressed in vehicle axes (m/s).
    pub v_s_vehicle: Vec3,
    pub omega: Vec3,
    pub v_covariance: Mat3,
    pub omega_covariance: Mat3,
    /// `true` for points rejected as dynamic.
    pub dynamic_mask: Vec<bool>,
    /// Wall-clock processing time (ms).
    pub compute_time_ms: f64,
}

impl MotionEstimate {
    pub fn inlier_count(&self) -> usize {
        self.dynamic_mask.iter().filter(|d| !**d).count()
    }

    pub fn dynamic_count(&self) -> usize {
        self.dynamic_mask.len() - self.inlier_count()
    }
}

/// How a constant twist is turned into a pose increment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Integration {
    /// Closed-form SE(3) exponential of the twist held over the interval.
    #[default]
    Exponential,
    /// Rotation by the exponential map, position by a first-order step along
    /// the velocity rotated with the orientation at the start of the interval.
    FirstOrder,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryState {
    /// Vehicle-origin pose in the world frame.
    pub pose: Pose,
    pub last_timestamp: f64,
}

impl OdometryState {
    pub fn new(initial: Pose) -> Self {
        OdometryState {
            pose: initial,
            last_timestamp: initial.timestamp,
        }
    }
}

pub fn process_scan(scan: &Scan, geom: &VehicleGeometry, params: &RansacParams) -> Result<MotionEstimate> {
    let start = Instant::now();
    let est = estimate_velocity_ransac(scan, params)?;
    let motion = vehicle_motion(&est, geom)?;
    let compute_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(MotionEstimate {
        timestamp: scan.timestamp,
        v_s_vehicle: motion.v_s_vehicle,
        omega: motion.omega,
        v_covariance: motion.v_covariance,
        omega_covariance: motion.omega_covariance,
        dynamic_mask: est.dynamic_mask(),
        compute_time_ms,
    })
}

/// Advances the vehicle-origin pose to `est.timestamp`, holding the estimated
/// twist constant over the elapsed interval.
pub fn integrate(
    state: &OdometryState,
    est: &MotionEstimate,
    geom: &VehicleGeometry,
    scheme: Integration,
) -> Result<OdometryState> {
    if !(est.timestamp > state.last_timestamp) {
        return Err(Error::NonMonotonicTimestamp {
            previous: state.last_timestamp,
            next: est.timestamp,
        });
    }
    let dt = est.timestamp - state.last_timestamp;
    let v_origin = vehicle_origin_velocity(&est.v_s_vehicle, &est.omega, geom);
    let (step_rotation, step_translation) = match scheme {
        Integration::Exponential => se3_exp(&v_origin, &est.omega, dt),
        Integration::FirstOrder => (so3_exp(&est.omega, dt), v_origin * dt),
    };
    let prev = &state.pose;
    let mut rotation = prev.rotation * step_rotation;
    if rotation.orthonormality_defect() > MAX_ROTATION_DRIFT {
        rotation = rotation.orthonormalized();
    }
    let pose = Pose::new(
        rotation,
        prev.position + prev.rotation * step_translation,
        est.timestamp,
    );
    Ok(OdometryState {
        pose,
        last_timestamp: est.timestamp,
    })
}

/// Outcome for one scan of a sequence.
#[derive(Clone, Debug)]
pub enum ScanRecord {
    Estimate(MotionEstimate),
    /// The scan could not be processed; the pose was held.
    Gap {
        timestamp: f64,
        reason: String,
    },
}

impl ScanRecord {
    pub fn timestamp(&self) -> f64 {
        match self {
            ScanRecord::Estimate(e) => e.timestamp,
            ScanRecord::Gap { timestamp, .. } => *timestamp,
        }
    }

    pub fn is_gap(&self) -> bool {
        matches!(self, ScanRecord::Gap { .. })
    }
}

/// Processes and integrates a time-ordered scan stream starting from `initial`.
///
/// Per-scan estimation failures become [`ScanRecord::Gap`] entries and the
/// pose is held; errors coming from the stream itself abort the run.
pub fn run_sequence<I>(
    scans: I,
    geom: &VehicleGeometry,
    params: &RansacParams,
    initial: Pose,
    scheme: Integration,
) -> Result<(Trajectory, Vec<ScanRecord>)>
where
    I: IntoIterator<Item = Result<Scan>>,
{
    let mut trajectory = Trajectory::new();
    trajectory.push(initial)?;
    let mut state = OdometryState::new(initial);
    let mut records = Vec::new();
    for scan in scans {
        let scan = scan?;
        if !(scan.timestamp > state.last_timestamp) {
            return Err(Error::NonMonotonicTimestamp {
                previous: state.last_timestamp,
                next: scan.timestamp,
            });
        }
        match process_scan(&scan, geom, params) {
            Ok(est) => {
                state = integrate(&state, &est, geom, scheme)?;
                records.push(ScanRecord::Estimate(est));
            }
            Err(e) => {
                state = OdometryState {
                    pose: Pose {
                        timestamp: scan.timestamp,
                        ..state.pose
                    },
                    last_timestamp: scan.timestamp,
                };
                records.push(ScanRecord::Gap {
                    timestamp: scan.timestamp,
                    reason: e.to_string(),
                });
            }
        }
        trajectory.push(state.pose)?;
    }
    Ok((trajectory, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use proptest::prelude::*;

    fn geom() -> VehicleGeometry {
        VehicleGeometry::new(Rotation::identity(), Vec3::new(0.4, 0.0, 0.2), 0.25).unwrap()
    }

    /// Estimate whose sensor velocity reproduces the given origin twist.
    fn twist(t: f64, v_origin: Vec3, omega: Vec3) -> MotionEstimate {
        let g = geom();
        MotionEstimate {
            timestamp: t,
            v_s_vehicle: v_origin + omega.cross(&g.s),
            omega,
            v_covariance: Mat3::zeros(),
            omega_covariance: Mat3::zeros(),
            dynamic_mask: vec![],
            compute_time_ms: 0.0,
        }
    }

    #[test]
    fn zero_twist_holds_pose() {
        let start = OdometryState::new(Pose::new(Rotation::about_z(0.3), Vec3::new(1.0, 2.0, 3.0), 0.0));
        let next = integrate(
            &start,
            &twist(0.1, Vec3::zeros(), Vec3::zeros()),
            &geom(),
            Integration::Exponential,
        )
        .unwrap();
        assert_eq!(next.pose.rotation, start.pose.rotation);
        assert_eq!(next.pose.position, start.pose.position);
    }

    #[test]
    fn pure_translation_step() {
        let start = OdometryState::new(Pose::identity(0.0));
        for scheme in [Integration::Exponential, Integration::FirstOrder] {
            let next = integrate(&start, &twist(0.5, Vec3::x(), Vec3::zeros()), &geom(), scheme).unwrap();
            assert!((next.pose.position - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_twist_circle() {
        let mut state = OdometryState::new(Pose::identity(0.0));
        let omega = Vec3::new(0.0, 0.0, 0.5);
        for k in 1..=100 {
            let est = twist(k as f64 * 0.1, Vec3::x(), omega);
            state = integrate(&state, &est, &geom(), Integration::Exponential).unwrap();
        }
        let heading = state.pose.rotation.matrix()[(1, 0)].atan2(state.pose.rotation.matrix()[(0, 0)]);
        assert!((heading - (5.0 - 2.0 * std::f64::consts::PI)).abs() < 1e-9);
        // Circle of radius 2 centered at (0, 2).
        let p = state.pose.position;
        let expected = Vec3::new(2.0 * 5.0f64.sin(), 2.0 - 2.0 * 5.0f64.cos(), 0.0);
        assert!((p - expected).norm() < 1e-9);
    }

    #[test]
    fn first_order_scheme_drifts_off_the_circle() {
        let mut state = OdometryState::new(Pose::identity(0.0));
        for k in 1..=100 {
            let est = twist(k as f64 * 0.1, Vec3::x(), Vec3::new(0.0, 0.0, 0.5));
            state = integrate(&state, &est, &geom(), Integration::FirstOrder).unwrap();
        }
        let radius = (state.pose.position - Vec3::new(0.0, 2.0, 0.0)).norm();
        assert!((radius - 2.0).abs() > 1e-3);
    }

    #[test]
    fn rejects_non_increasing_timestamps() {
        let start = OdometryState::new(Pose::identity(1.0));
        let err = integrate(
            &start,
            &twist(1.0, Vec3::x(), Vec3::zeros()),
            &geom(),
            Integration::Exponential,
        );
        assert!(matches!(err, Err(Error::NonMonotonicTimestamp { .. })));
    }

    #[test]
    fn empty_stream_yields_initial_pose() {
        let initial = Pose::new(Rotation::about_x(0.1), Vec3::new(1.0, 0.0, 0.0), 3.0);
        let (traj, records) = run_sequence(
            std::iter::empty(),
            &geom(),
            &RansacParams::default(),
            initial,
            Integration::Exponential,
        )
        .unwrap();
        assert_eq!(traj.poses(), &[initial]);
        assert!(records.is_empty());
    }

    #[test]
    fn failing_scan_becomes_a_gap() {
        let scans = vec![Ok(Scan::new(0.1, vec![]))];
        let (traj, records) = run_sequence(
            scans,
            &geom(),
            &RansacParams::default(),
            Pose::identity(0.0),
            Integration::Exponential,
        )
        .unwrap();
        assert_eq!(traj.len(), 2);
        assert!(records[0].is_gap());
        assert_eq!(traj.poses()[1].position, Vec3::zeros());
    }

    fn v3(r: f64) -> impl Strategy<Value = Vec3> {
        (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn integration_is_left_invariant(v in v3(2.0), w in v3(1.0), axis in v3(1.0), angle in -3.0..3.0f64, t in v3(10.0)) {
            let offset = Pose::new(Rotation::from_axis_angle(&axis, angle), t, 0.0);
            let mut a = OdometryState::new(Pose::identity(0.0));
            let mut b = OdometryState::new(offset.compose(&Pose::identity(0.0)));
            for k in 1..=20 {
                let est = twist(k as f64 * 0.1, v, w);
                a = integrate(&a, &est, &geom(), Integration::Exponential).unwrap();
                b = integrate(&b, &est, &geom(), Integration::Exponential).unwrap();
            }
            let expected = offset.compose(&a.pose);
            prop_assert!((expected.rotation.matrix() - b.pose.rotation.matrix()).amax() < 1e-10);
            prop_assert!((expected.position - b.pose.position).norm() < 1e-10 * (1.0 + t.norm()));
        }

        #[test]
        fn refining_a_constant_twist_interval_is_consistent(v in v3(2.0), w in v3(1.5), k in 2usize..20) {
            let whole = integrate(&OdometryState::new(Pose::identity(0.0)), &twist(1.0, v, w), &geom(), Integration::Exponential).unwrap();
            let mut parts = OdometryState::new(Pose::identity(0.0));
            for i in 1..=k {
                parts = integrate(&parts, &twist(i as f64 / k as f64, v, w), &geom(), Integration::Exponential).unwrap();
            }
            prop_assert!((whole.pose.rotation.matrix() - parts.pose.rotation.matrix()).amax() < 1e-9);
            prop_assert!((whole.pose.position - parts.pose.position).norm() < 1e-9);
            prop_assert!(parts.pose.rotation.orthonormality_defect() < 1e-9);
        }
    }
}
