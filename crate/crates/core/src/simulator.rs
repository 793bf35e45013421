//! Synthetic Doppler scans with exact ground truth.
//!
//! A [`MotionProfile`] is a list of constant-twist segments of the vehicle
//! origin. Poses are integrated in closed form, so the truth trajectory carries
//! no integration error. Each scan is generated independently: static points
//! are scattered around the sensor, dynamic objects are boxes placed relative
//! to the vehicle and moving with a world-frame velocity.
//!
//! Doppler sign: a target the sensor approaches has negative radial velocity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::ego_velocity::{DopplerPoint, Scan};
use crate::error::{Error, Result};
use crate::geometry::{is_finite, se3_exp, Pose, Trajectory, Vec3};
use crate::kinematics::{model_consistent_origin_velocity, sensor_velocity_from_twist, VehicleGeometry};

/// Segment boundaries must fall on scan instants within this many scan periods.
const ALIGNMENT_TOLERANCE: f64 = 1e-6;

/// Constant twist of the vehicle origin, in vehicle axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub duration: f64,
    pub v_origin: Vec3,
    pub omega: Vec3,
}

impl Segment {
    /// Twist that obeys the rotation-axis model: no roll, no lateral origin
    /// velocity and the vertical origin velocity implied by the pitch rate.
    pub fn consistent(duration: f64, forward: f64, pitch_rate: f64, yaw_rate: f64, geom: &VehicleGeometry) -> Self {
        let omega = Vec3::new(0.0, pitch_rate, yaw_rate);
        Segment {
            duration,
            v_origin: model_consistent_origin_velocity(forward, &omega, geom),
            omega,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionProfile {
    pub segments: Vec<Segment>,
    pub scan_rate: f64,
    /// Permits a non-zero roll rate.
    pub allow_model_violation: bool,
}

impl MotionProfile {
    pub fn new(segments: Vec<Segment>, scan_rate: f64) -> Self {
        MotionProfile {
            segments,
            scan_rate,
            allow_model_violation: false,
        }
    }

    /// Straight, flat left turn and a crest, 10 Hz.
    pub fn demo(geom: &VehicleGeometry) -> Self {
        MotionProfile::new(
            vec![
                Segment::consistent(5.0, 1.0, 0.0, 0.0, geom),
                Segment::consistent(5.0, 1.0, 0.0, 0.5, geom),
                Segment::consistent(5.0, 1.0, 0.2, 0.0, geom),
                Segment::consistent(5.0, 1.0, -0.2, -0.3, geom),
            ],
            10.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scan_rate > 0.0) || !self.scan_rate.is_finite() {
            return Err(Error::Validation("profile.scan_rate must be > 0".into()));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.duration > 0.0) || !seg.duration.is_finite() {
                return Err(Error::Validation(format!("profile.segment.{i}.duration must be > 0")));
            }
            if !is_finite(&seg.v_origin) || !is_finite(&seg.omega) {
                return Err(Error::Validation(format!("profile.segment.{i} has non-finite twist")));
            }
            if seg.omega.x != 0.0 && !self.allow_model_violation {
                return Err(Error::Validation(format!(
                    "profile.segment.{i}.omega has roll rate {}; set profile.allow_model_violation = true",
                    seg.omega.x
                )));
            }
            let steps = seg.duration * self.scan_rate;
            if (steps - steps.round()).abs() > ALIGNMENT_TOLERANCE || steps.round() < 1.0 {
                return Err(Error::Validation(format!(
                    "profile.segment.{i}.duration = {} is not a whole number of scan periods",
                    seg.duration
                )));
            }
        }
        Ok(())
    }

    fn scans_per_segment(&self) -> impl Iterator<Item = (usize, &Segment)> {
        self.segments
            .iter()
            .map(|s| ((s.duration * self.scan_rate).round() as usize, s))
    }

    pub fn scan_count(&self) -> usize {
        self.scans_per_segment().map(|(n, _)| n).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicObject {
    /// Box center relative to the vehicle origin, vehicle axes (m).
    pub center: Vec3,
    /// Half edge length of the box (m).
    pub extent: f64,
    /// Object velocity in the world frame (m/s).
    pub velocity: Vec3,
    pub point_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub static_point_count: usize,
    /// Static points lie at ranges up to this distance from the sensor (m).
    pub world_extent: f64,
    pub dynamic_objects: Vec<DynamicObject>,
    pub doppler_noise_sigma: f64,
    pub power_range: (f64, f64),
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            static_point_count: 300,
            world_extent: 50.0,
            dynamic_objects: Vec::new(),
            doppler_noise_sigma: 0.05,
            power_range: (1.0, 10.0),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.world_extent > 0.0) || !self.world_extent.is_finite() {
            return Err(Error::Validation("scene.world_extent must be > 0".into()));
        }
        if !(self.doppler_noise_sigma >= 0.0) || !self.doppler_noise_sigma.is_finite() {
            return Err(Error::Validation("scene.doppler_noise_sigma must be ≥ 0".into()));
        }
        let (lo, hi) = self.power_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Validation(
                "scene.power_min and scene.power_max must satisfy 0 < min ≤ max".into(),
            ));
        }
        for (i, o) in self.dynamic_objects.iter().enumerate() {
            if !(o.extent > 0.0) || !is_finite(&o.center) || !is_finite(&o.velocity) {
                return Err(Error::Validation(format!(
                    "scene.object.{i} needs finite center/velocity and extent > 0"
                )));
            }
        }
        Ok(())
    }
}

/// Radial velocity of a target at `position` (sensor frame) moving with
/// `target_velocity`, seen from a sensor moving with `sensor_velocity`.
pub fn radial_velocity(position: &Vec3, sensor_velocity: &Vec3, target_velocity: &Vec3) -> f64 {
    (target_velocity - sensor_velocity).dot(&position.normalize())
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| rng.sample(StandardNormal));
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Generator for one scan instant; the stream is keyed by the timestamp so
/// scans can be produced in any order.
fn scan_rng(seed: u64, t: f64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t.to_bits());
    rng
}

/// One scan taken at vehicle pose `pose` while the vehicle origin moves with
/// the twist `(v_origin, omega)`. Returns the scan and per-point dynamic labels.
pub fn simulate_scan(
    pose: &Pose,
    v_origin: &Vec3,
    omega: &Vec3,
    geom: &VehicleGeometry,
    scene: &SceneSpec,
    t: f64,
) -> (Scan, Vec<bool>) {
    let mut rng = scan_rng(scene.seed, t);
    let noise = Normal::new(0.0, scene.doppler_noise_sigma).expect("sigma validated");
    let (p_lo, p_hi) = scene.power_range;
    let vehicle_to_sensor = geom.rotation_vs.inverse();
    let world_to_sensor = vehicle_to_sensor * pose.rotation.inverse();
    let sensor_velocity = vehicle_to_sensor * sensor_velocity_from_twist(v_origin, omega, geom);

    let total = scene.static_point_count + scene.dynamic_objects.iter().map(|o| o.point_count).sum::<usize>();
    let mut points = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut emit = |rng: &mut ChaCha8Rng, position: Vec3, target_velocity: Vec3, dynamic: bool| {
        let doppler = radial_velocity(&position, &sensor_velocity, &target_velocity) + noise.sample(rng);
        let power = if p_hi > p_lo {
            rng.random_range(p_lo..=p_hi)
        } else {
            p_lo
        };
        points.push(DopplerPoint {
            position,
            doppler,
            power,
        });
        labels.push(dynamic);
    };

    let min_range = 0.05 * scene.world_extent;
    for _ in 0..scene.static_point_count {
        let range = rng.random_range(min_range..=scene.world_extent);
        let position = random_unit(&mut rng) * range;
        emit(&mut rng, position, Vec3::zeros(), false);
    }
    for object in &scene.dynamic_objects {
        let velocity = world_to_sensor * object.velocity;
        for _ in 0..object.point_count {
            let position = loop {
                let offset = Vec3::from_fn(|_, _| rng.random_range(-object.extent..=object.extent));
                let in_sensor = vehicle_to_sensor * (object.center + offset - geom.s);
                if in_sensor.norm() > 1e-3 {
                    break in_sensor;
                }
            };
            emit(&mut rng, position, velocity, true);
        }
    }
    (Scan::new(t, points), labels)
}

#[derive(Clone, Debug)]
pub struct SimulatedSequence {
    pub scans: Vec<Scan>,
    /// Vehicle-origin poses at the scan timestamps.
    pub truth: Trajectory,
    /// Per scan, per point: `true` for dynamic points.
    pub labels: Vec<Vec<bool>>,
    /// `(timestamp, ω_z)` of the true twist at each scan.
    pub yaw_rates: Vec<(f64, f64)>,
}

/// Scans at `k / scan_rate`, `k = 1..=n`, starting from the identity pose at
/// `t = 0`. The scan at `t_k` observes the twist held over `(t_{k−1}, t_k]`.
pub fn simulate_sequence(
    profile: &MotionProfile,
    geom: &VehicleGeometry,
    scene: &SceneSpec,
) -> Result<SimulatedSequence> {
    profile.validate()?;
    scene.validate()?;
    geom.validate()?;
    let n = profile.scan_count();
    let mut out = SimulatedSequence {
        scans: Vec::with_capacity(n),
        truth: Trajectory::new(),
        labels: Vec::with_capacity(n),
        yaw_rates: Vec::with_capacity(n),
    };
    let mut segment_start = Pose::identity(0.0);
    let mut k = 0usize;
    for (steps, seg) in profile.scans_per_segment() {
        for j in 1..=steps {
            let t = (k + j) as f64 / profile.scan_rate;
            let (dr, dp) = se3_exp(&seg.v_origin, &seg.omega, j as f64 / profile.scan_rate);
            let pose = segment_start.compose(&Pose::new(dr, dp, t));
            let (scan, labels) = simulate_scan(&pose, &seg.v_origin, &seg.omega, geom, scene, t);
            out.truth.push(pose)?;
            out.scans.push(scan);
            out.labels.push(labels);
            out.yaw_rates.push((t, seg.omega.z));
        }
        k += steps;
        let (dr, dp) = se3_exp(&seg.v_origin, &seg.omega, steps as f64 / profile.scan_rate);
        segment_start = segment_start.compose(&Pose::new(dr, dp, k as f64 / profile.scan_rate));
    }
    Ok(out)
}
