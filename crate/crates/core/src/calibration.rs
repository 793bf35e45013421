//! Extrinsic calibration from recorded maneuvers.
//!
//! The mount rotation is found in two steps. A straight forward/backward run
//! fixes the sensor direction that maps onto the vehicle X axis; free driving
//! on flat ground then fixes the remaining roll about X by driving the
//! vertical velocity to zero. The longitudinal lever arm `s_x` is fitted on a
//! flat circle against an external yaw-rate reference.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::geometry::{is_finite, Mat3, Rotation, Vec3};

/// Samples slower than this (m/s) are ignored.
pub const MIN_SPEED: f64 = 0.2;
/// Speeds above this ceiling (m/s) are rejected as corrupt.
pub const MAX_SPEED: f64 = 1e3;
pub const MIN_STRAIGHT_SAMPLES: usize = 50;
/// Largest fraction of straight-run samples allowed off the travel axis.
pub const MAX_CONFLICT_FRACTION: f64 = 0.1;
/// RMS lateral velocity (m/s) needed before roll becomes observable.
pub const MIN_LATERAL_RMS: f64 = 0.1;
/// Largest coefficient of variation of the yaw rate on the circle maneuver.
pub const MAX_YAW_RATE_CV: f64 = 0.2;
/// Nearest-neighbor association window for the reference series (s).
pub const ALIGNMENT_WINDOW: f64 = 0.05;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibrationRun {
    /// `(timestamp, sensor-frame velocity)`.
    pub velocities: Vec<(f64, Vec3)>,
    /// `(timestamp, yaw rate)` from an external source.
    pub reference_yaw_rate: Option<Vec<(f64, f64)>>,
}

fn check_increasing(times: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for t in times {
        if !t.is_finite() {
            return Err(Error::Validation("non-finite timestamp".into()));
        }
        if t <= prev {
            return Err(Error::NonMonotonicTimestamp {
                previous: prev,
                next: t,
            });
        }
        prev = t;
    }
    Ok(())
}

impl CalibrationRun {
    pub fn new(velocities: Vec<(f64, Vec3)>, reference_yaw_rate: Option<Vec<(f64, f64)>>) -> Result<Self> {
        check_increasing(velocities.iter().map(|(t, _)| *t))?;
        for (t, v) in &velocities {
            if !is_finite(v) || v.norm() > MAX_SPEED {
                return Err(Error::Validation(format!("velocity at t = {t} is not plausible")));
            }
        }
        if let Some(r) = &reference_yaw_rate {
            check_increasing(r.iter().map(|(t, _)| *t))?;
            if r.iter().any(|(_, w)| !w.is_finite()) {
                return Err(Error::Validation("reference yaw rate is not finite".into()));
            }
        }
        Ok(CalibrationRun {
            velocities,
            reference_yaw_rate,
        })
    }

    fn moving(&self) -> impl Iterator<Item = &(f64, Vec3)> {
        self.velocities.iter().filter(|(_, v)| v.norm() >= MIN_SPEED)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtrinsicRotationResult {
    pub rotation_vs: Rotation,
    /// RMS of the minimized velocity components after calibration (m/s).
    pub residual_rms: f64,
    /// Same quantity before calibration.
    pub initial_residual_rms: f64,
    pub samples_used: usize,
}

/// Smallest rotation taking unit vector `u` onto +X.
fn align_to_x(u: &Vec3) -> Rotation {
    let axis = u.cross(&Vec3::x());
    let sin = axis.norm();
    let cos = u.x;
    if sin < 1e-15 {
        return if cos > 0.0 {
            Rotation::identity()
        } else {
            Rotation::about_z(PI)
        };
    }
    Rotation::from_axis_angle(&axis, sin.atan2(cos))
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Step 1: rotation aligning the straight-line travel axis with vehicle +X.
///
/// The axis is the principal direction of the velocity samples, which is the
/// exact minimizer of the summed squared Y/Z components. Its sign is chosen so
/// most samples point forward.
pub fn calibrate_rotation_step1(run: &CalibrationRun) -> Result<ExtrinsicRotationResult> {
    let samples: Vec<Vec3> = run.moving().map(|(_, v)| *v).collect();
    if samples.len() < MIN_STRAIGHT_SAMPLES {
        return Err(Error::InsufficientMotion(format!(
            "{} samples at ≥ {MIN_SPEED} m/s, need {MIN_STRAIGHT_SAMPLES}",
            samples.len()
        )));
    }
    let scatter = samples.iter().fold(Mat3::zeros(), |acc, v| acc + v * v.transpose());
    let eig = scatter.symmetric_eigen();
    let mut axis: Vec3 = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();

    let projections: Vec<f64> = samples.iter().map(|v| axis.dot(&v.normalize())).collect();
    let conflicting = projections.iter().filter(|p| p.abs() < FRAC_PI_4.cos()).count();
    if conflicting as f64 > MAX_CONFLICT_FRACTION * samples.len() as f64 {
        return Err(Error::AmbiguousDirection(format!(
            "{conflicting} of {} samples are more than 45° off the travel axis",
            samples.len()
        )));
    }
    let forward = projections.iter().filter(|p| **p > 0.0).count();
    let backward = projections.iter().filter(|p| **p < 0.0).count();
    let flip = backward > forward || (backward == forward && projections.iter().sum::<f64>() < 0.0);
    if flip {
        axis = -axis;
    }

    let rotation = align_to_x(&axis);
    let lateral = |r: &Rotation| rms(samples.iter().map(|v| (r * v).yz().norm()));
    Ok(ExtrinsicRotationResult {
        rotation_vs: rotation,
        residual_rms: lateral(&rotation),
        initial_residual_rms: lateral(&Rotation::identity()),
        samples_used: samples.len(),
    })
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Roll angle in `(−π/2, π/2]` minimizing `Σ (R_x(α) w)_z²` over `samples`.
///
/// The objective has period π, so the two minima in `(−π, π]` are equivalent;
/// the one with the smaller magnitude is returned.
pub fn minimize_vertical_velocity(samples: &[Vec3]) -> f64 {
    let objective = |alpha: f64| {
        let (s, c) = alpha.sin_cos();
        samples.iter().map(|w| (s * w.y + c * w.z).powi(2)).sum::<f64>()
    };
    const GRID: usize = 720;
    let step = 2.0 * PI / GRID as f64;
    let best = (0..GRID)
        .map(|i| -PI + (i + 1) as f64 * step)
        .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
        .unwrap_or(0.0);
    let mut alpha = golden_section(objective, best - step, best + step, 1e-12);
    while alpha > FRAC_PI_2 {
        alpha -= PI;
    }
    while alpha <= -FRAC_PI_2 {
        alpha += PI;
    }
    alpha
}

/// Step 2: roll about X that removes vertical velocity on flat ground.
///
/// Returns `rotation_vs = R_x(α) · partial`.
pub fn calibrate_rotation_step2(run: &CalibrationRun, partial: &Rotation) -> Result<ExtrinsicRotationResult> {
    let samples: Vec<Vec3> = run.moving().map(|(_, v)| partial * v).collect();
    let lateral = rms(samples.iter().map(|w| w.y));
    if samples.is_empty() || lateral < MIN_LATERAL_RMS {
        return Err(Error::InsufficientExcitation(format!(
            "RMS lateral velocity {lateral:.4} m/s is below {MIN_LATERAL_RMS} m/s; \
             roll is unobservable without turning"
        )));
    }
    let alpha = minimize_vertical_velocity(&samples);
    let roll = Rotation::about_x(alpha);
    let rotation = roll * *partial;
    Ok(ExtrinsicRotationResult {
        rotation_vs: rotation,
        residual_rms: rms(samples.iter().map(|w| (roll * w).z)),
        initial_residual_rms: rms(samples.iter().map(|w| w.z)),
        samples_used: samples.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeverArmResult {
    pub s_x: f64,
    /// RMS of `v_y / s_x − ω_ref` (rad/s).
    pub residual_rms: f64,
    pub samples_used: usize,
}

fn nearest(series: &[(f64, f64)], t: f64) -> Option<&(f64, f64)> {
    let idx = series.partition_point(|(ts, _)| *ts < t);
    [idx.checked_sub(1), Some(idx)]
        .into_iter()
        .flatten()
        .filter_map(|i| series.get(i))
        .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
        .filter(|(ts, _)| (ts - t).abs() <= ALIGNMENT_WINDOW)
}

/// Longitudinal sensor offset from the rear axle minimizing
/// `Σ (v_y / s_x − ω_z)²`, i.e. `s_x = Σ v_y² / Σ v_y ω_z`.
pub fn calibrate_sx(run: &CalibrationRun, rotation_vs: &Rotation) -> Result<LeverArmResult> {
    let reference = run.reference_yaw_rate.as_deref().ok_or(Error::NoReference)?;
    if reference.is_empty() {
        return Err(Error::NoReference);
    }
    let pairs: Vec<(f64, f64)> = run
        .moving()
        .filter_map(|(t, v)| nearest(reference, *t).map(|(_, w)| ((rotation_vs * v).y, *w)))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::DegenerateManeuver(format!(
            "only {} velocity samples match the reference within {ALIGNMENT_WINDOW} s",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mean_w = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let std_w = (pairs.iter().map(|p| (p.1 - mean_w).powi(2)).sum::<f64>() / n).sqrt();
    if mean_w.abs() < 1e-9 || std_w / mean_w.abs() > MAX_YAW_RATE_CV {
        return Err(Error::DegenerateManeuver(format!(
            "yaw rate is not steady (mean {mean_w:.4} rad/s, std {std_w:.4} rad/s); \
             drive a constant-speed circle"
        )));
    }
    let syy: f64 = pairs.iter().map(|(vy, _)| vy * vy).sum();
    let syw: f64 = pairs.iter().map(|(vy, w)| vy * w).sum();
    if syw.abs() / n < 1e-9 {
        return Err(Error::DegenerateManeuver(
            "lateral velocity and yaw rate are uncorrelated".into(),
        ));
    }
    let s_x = syy / syw;
    Ok(LeverArmResult {
        s_x,
        residual_rms: rms(pairs.iter().map(|(vy, w)| vy / s_x - w)),
        samples_used: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Normal;

    fn run(vs: Vec<Vec3>) -> CalibrationRun {
        let velocities = vs.into_iter().enumerate().map(|(i, v)| (i as f64 * 0.1, v)).collect();
        CalibrationRun::new(velocities, None).unwrap()
    }

    #[test]
    fn aligned_run_needs_no_rotation() {
        let vs = (0..60)
            .map(|i| Vec3::new(if i % 3 == 0 { -1.0 } else { 1.5 }, 0.0, 0.0))
            .collect();
        let r = calibrate_rotation_step1(&run(vs)).unwrap();
        assert!(r.rotation_vs.angle() < 1e-12);
        assert!(r.residual_rms < 1e-12);
    }

    #[test]
    fn five_degree_yaw_is_recovered() {
        let yaw = 5f64.to_radians();
        let axis = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
        let vs = (0..60).map(|i| axis * (1.0 + 0.01 * i as f64)).collect();
        let r = calibrate_rotation_step1(&run(vs)).unwrap();
        let err = (r.rotation_vs * Rotation::about_z(yaw)).angle();
        assert!(err.to_degrees() < 0.01);
    }

    #[test]
    fn step1_objective_does_not_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mount = Rotation::from_axis_angle(&Vec3::new(0.2, 1.0, -0.4), 0.3);
        let vs: Vec<Vec3> = (0..200)
            .map(|_| {
                let fwd = if rng.random_bool(0.3) { -1.0 } else { 1.2 };
                mount.inverse() * Vec3::new(fwd, rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02))
            })
            .collect();
        let samples: Vec<Vec3> = vs.clone();
        let r = calibrate_rotation_step1(&run(vs)).unwrap();
        assert!(r.residual_rms < r.initial_residual_rms);
        let objective = |rot: &Rotation| samples.iter().map(|v| (rot * v).yz().norm_squared()).sum::<f64>();
        let best = objective(&r.rotation_vs);
        for axis in [Vec3::y(), Vec3::z(), Vec3::new(0.0, 1.0, 1.0)] {
            for delta in [-1e-3, 1e-3] {
                let nudged = Rotation::from_axis_angle(&axis, delta) * r.rotation_vs;
                assert!(objective(&nudged) > best);
            }
        }
    }

    #[test]
    fn step1_errors() {
        let few = (0..10).map(|_| Vec3::x()).collect();
        assert!(matches!(
            calibrate_rotation_step1(&run(few)),
            Err(Error::InsufficientMotion(_))
        ));
        let slow = (0..100).map(|_| Vec3::x() * 0.1).collect();
        assert!(matches!(
            calibrate_rotation_step1(&run(slow)),
            Err(Error::InsufficientMotion(_))
        ));
        let wandering = (0..100)
            .map(|i| {
                let a = i as f64 * 0.7;
                Vec3::new(a.cos(), a.sin(), 0.0)
            })
            .collect();
        assert!(matches!(
            calibrate_rotation_step1(&run(wandering)),
            Err(Error::AmbiguousDirection(_))
        ));
    }

    #[test]
    fn backward_mounted_sensor() {
        let vs = (0..60)
            .map(|i| Vec3::new(if i % 4 == 0 { 1.0 } else { -1.0 }, 0.0, 0.0))
            .collect();
        let r = calibrate_rotation_step1(&run(vs)).unwrap();
        assert!((r.rotation_vs * Vec3::new(-1.0, 0.0, 0.0) - Vec3::x()).norm() < 1e-12);
    }

    fn planar_turns(n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.1;
                Vec3::new(1.0 + 0.2 * (0.3 * t).sin(), 0.4 * (0.5 * t).sin(), 0.0)
            })
            .collect()
    }

    #[test]
    fn flat_data_needs_no_roll() {
        let r = calibrate_rotation_step2(&run(planar_turns(300)), &Rotation::identity()).unwrap();
        assert!(r.rotation_vs.angle() < 1e-9);
    }

    #[test]
    fn injected_roll_is_undone() {
        let roll = 3f64.to_radians();
        let mount = Rotation::about_x(roll);
        let vs = planar_turns(300).into_iter().map(|v| mount * v).collect();
        let r = calibrate_rotation_step2(&run(vs), &Rotation::identity()).unwrap();
        let alpha = r.rotation_vs.matrix()[(2, 1)].atan2(r.rotation_vs.matrix()[(1, 1)]);
        assert!((alpha + roll).abs().to_degrees() < 0.05);
        assert!(r.residual_rms < 1e-9);
    }

    #[test]
    fn roll_search_matches_sinusoid_argmin() {
        // Σ(sinα·w_y + cosα·w_z)² = (a+b)/2 + (b−a)/2·cos2α + c·sin2α with
        // a = Σw_y², b = Σw_z², c = Σw_y·w_z; its minimum sits at
        // 2α = atan2(c, (b−a)/2) + π.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mount = Rotation::about_x(0.4);
        let samples: Vec<Vec3> = planar_turns(200)
            .into_iter()
            .map(|v| mount * v + Vec3::from_fn(|_, _| rng.sample(noise)))
            .collect();
        let a: f64 = samples.iter().map(|w| w.y * w.y).sum();
        let b: f64 = samples.iter().map(|w| w.z * w.z).sum();
        let c: f64 = samples.iter().map(|w| w.y * w.z).sum();
        let mut expected = 0.5 * (c.atan2(0.5 * (b - a)) + PI);
        while expected > FRAC_PI_2 {
            expected -= PI;
        }
        let got = minimize_vertical_velocity(&samples);
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn straight_data_cannot_fix_roll() {
        let vs = (0..100).map(|_| Vec3::new(1.0, 0.01, 0.0)).collect();
        assert!(matches!(
            calibrate_rotation_step2(&run(vs), &Rotation::identity()),
            Err(Error::InsufficientExcitation(_))
        ));
    }

    fn circle_run(vy: Vec<f64>, yaw: Vec<f64>) -> CalibrationRun {
        let velocities = vy
            .iter()
            .enumerate()
            .map(|(i, y)| (i as f64 * 0.1, Vec3::new(1.0, *y, 0.0)))
            .collect();
        let reference = yaw
            .iter()
            .enumerate()
            .map(|(i, w)| (i as f64 * 0.1 + 0.01, *w))
            .collect();
        CalibrationRun::new(velocities, Some(reference)).unwrap()
    }

    #[test]
    fn constant_ratio_lever_arm() {
        let r = calibrate_sx(&circle_run(vec![0.5; 20], vec![1.25; 20]), &Rotation::identity()).unwrap();
        assert!((r.s_x - 0.4).abs() < 1e-15);
        assert_eq!(r.samples_used, 20);
    }

    #[test]
    fn lever_arm_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let yaw: Vec<f64> = (0..300).map(|_| 0.5 + rng.random_range(-0.02..0.02)).collect();
        let vy: Vec<f64> = yaw.iter().map(|w| 0.4 * w + rng.sample(noise)).collect();
        let run = circle_run(vy.clone(), yaw.clone());
        let fitted = calibrate_sx(&run, &Rotation::identity()).unwrap().s_x;
        let cost = |s: f64| vy.iter().zip(&yaw).map(|(v, w)| (v / s - w).powi(2)).sum::<f64>();
        let grid_best = (1000..8000)
            .map(|i| i as f64 * 1e-4)
            .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
            .unwrap();
        assert!((fitted - grid_best).abs() <= 1e-4);
    }

    #[test]
    fn lever_arm_errors() {
        let no_ref = run(vec![Vec3::new(1.0, 0.5, 0.0); 20]);
        assert!(matches!(
            calibrate_sx(&no_ref, &Rotation::identity()),
            Err(Error::NoReference)
        ));
        let straight = circle_run(vec![0.0; 20], vec![0.0; 20]);
        assert!(matches!(
            calibrate_sx(&straight, &Rotation::identity()),
            Err(Error::DegenerateManeuver(_))
        ));
        let unsteady = circle_run(vec![0.5; 20], (0..20).map(|i| 0.2 + 0.1 * i as f64).collect());
        assert!(matches!(
            calibrate_sx(&unsteady, &Rotation::identity()),
            Err(Error::DegenerateManeuver(_))
        ));
    }

    #[test]
    fn run_validation() {
        assert!(CalibrationRun::new(vec![(0.0, Vec3::x()), (0.0, Vec3::x())], None).is_err());
        assert!(CalibrationRun::new(vec![(0.0, Vec3::x() * 2e3)], None).is_err());
    }
}
