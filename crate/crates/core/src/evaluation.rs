//! Relative pose error between an estimated and a reference trajectory.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Trajectory};

/// Maximum timestamp gap when associating estimate and reference poses.
pub const MATCH_TOLERANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RpeMode {
    /// Consecutive matched poses.
    PerFrame,
    /// Matched poses nearest to one second apart.
    PerSecond,
}

impl fmt::Display for RpeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RpeMode::PerFrame => "per-frame",
            RpeMode::PerSecond => "per-second",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RpePair {
    /// Timestamp of the later estimate pose in the pair.
    pub timestamp: f64,
    pub translational: f64,
    pub rotational: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub rms: f64,
    pub max: f64,
}

impl Summary {
    pub fn from_values(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let n = values.len() as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            0.5 * (sorted[mid - 1] + sorted[mid])
        } else {
            sorted[mid]
        };
        Summary {
            count: values.len(),
            mean: values.iter().sum::<f64>() / n,
            median,
            rms: (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
            max: sorted[sorted.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RpeReport {
    pub mode: RpeMode,
    pub pairs: Vec<RpePair>,
    pub translational: Summary,
    pub rotational: Summary,
}

impl fmt::Display for RpeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "RPE ({}), {} pairs", self.mode, self.pairs.len())?;
        for (name, unit, s) in [
            ("translational", "m", &self.translational),
            ("rotational", "rad", &self.rotational),
        ] {
            writeln!(
                f,
                "  {name:<13} mean {:.6e} median {:.6e} rms {:.6e} max {:.6e} {unit}",
                s.mean, s.median, s.rms, s.max
            )?;
        }
        Ok(())
    }
}

fn nearest(poses: &[Pose], t: f64) -> Option<usize> {
    let idx = poses.partition_point(|p| p.timestamp < t);
    [idx.checked_sub(1), (idx < poses.len()).then_some(idx)]
        .into_iter()
        .flatten()
        .min_by(|&a, &b| {
            (poses[a].timestamp - t)
                .abs()
                .total_cmp(&(poses[b].timestamp - t).abs())
        })
}

/// Error of the estimated relative motion between two matched pose pairs.
pub fn pair_error(est_i: &Pose, est_j: &Pose, ref_i: &Pose, ref_j: &Pose) -> (f64, f64) {
    let est_rel = est_i.inverse().compose(est_j);
    let ref_rel = ref_i.inverse().compose(ref_j);
    let e = ref_rel.inverse().compose(&est_rel);
    (e.position.norm(), e.rotation.angle())
}

pub fn relative_pose_error(estimate: &Trajectory, truth: &Trajectory, mode: RpeMode) -> Result<RpeReport> {
    if estimate.is_empty() || truth.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let matched: Vec<(&Pose, &Pose)> = estimate
        .iter()
        .filter_map(|p| {
            let k = nearest(truth.poses(), p.timestamp)?;
            let q = &truth.poses()[k];
            ((q.timestamp - p.timestamp).abs() <= MATCH_TOLERANCE).then_some((p, q))
        })
        .collect();
    if matched.len() < 2 {
        return Err(Error::NoOverlap);
    }

    let index_pairs: Vec<(usize, usize)> = match mode {
        RpeMode::PerFrame => (1..matched.len()).map(|j| (j - 1, j)).collect(),
        RpeMode::PerSecond => {
            let est_poses: Vec<Pose> = matched.iter().map(|(p, _)| **p).collect();
            (0..matched.len())
                .filter_map(|i| {
                    let target = est_poses[i].timestamp + 1.0;
                    let j = nearest(&est_poses, target)?;
                    (j > i && (est_poses[j].timestamp - target).abs() <= MATCH_TOLERANCE).then_some((i, j))
                })
                .collect()
        }
    };
    if index_pairs.is_empty() {
        return Err(Error::NoOverlap);
    }

    let pairs: Vec<RpePair> = index_pairs
        .into_iter()
        .map(|(i, j)| {
            let (translational, rotational) = pair_error(matched[i].0, matched[j].0, matched[i].1, matched[j].1);
            RpePair {
                timestamp: matched[j].0.timestamp,
                translational,
                rotational,
            }
        })
        .collect();
    let trans: Vec<f64> = pairs.iter().map(|p| p.translational).collect();
    let rot: Vec<f64> = pairs.iter().map(|p| p.rotational).collect();
    Ok(RpeReport {
        mode,
        translational: Summary::from_values(&trans),
        rotational: Summary::from_values(&rot),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Rotation, Vec3};
    use proptest::prelude::*;

    fn line(speed: f64, n: usize, rate: f64) -> Trajectory {
        Trajectory::from_poses(
            (0..n)
                .map(|k| {
                    let t = k as f64 / rate;
                    Pose::new(Rotation::identity(), Vec3::new(speed * t, 0.0, 0.0), t)
                })
                .collect(),
        )
        .unwrap()
    }

    fn wiggly(n: usize) -> Trajectory {
        Trajectory::from_poses(
            (0..n)
                .map(|k| {
                    let t = k as f64 * 0.1;
                    Pose::new(
                        Rotation::from_axis_angle(&Vec3::new(0.3, -0.2, 1.0), 0.4 * t),
                        Vec3::new(t.cos() * 3.0, t.sin() * 2.0, 0.1 * t),
                        t,
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_trajectories_give_zero() {
        let t = wiggly(40);
        for mode in [RpeMode::PerFrame, RpeMode::PerSecond] {
            let r = relative_pose_error(&t, &t, mode).unwrap();
            assert!(r.translational.max == 0.0 && r.rotational.max < 1e-15);
        }
    }

    #[test]
    fn speed_bias_gives_constant_translation_error() {
        let r = relative_pose_error(&line(1.1, 30, 10.0), &line(1.0, 30, 10.0), RpeMode::PerFrame).unwrap();
        assert_eq!(r.pairs.len(), 29);
        for p in &r.pairs {
            assert!((p.translational - 0.01).abs() < 1e-12);
            assert_eq!(p.rotational, 0.0);
        }
        let r = relative_pose_error(&line(1.1, 30, 10.0), &line(1.0, 30, 10.0), RpeMode::PerSecond).unwrap();
        assert_eq!(r.pairs.len(), 20);
        assert!((r.translational.mean - 0.1).abs() < 1e-12);
    }

    #[test]
    fn pure_yaw_error_is_the_angle_difference() {
        let make = |rate: f64| {
            Trajectory::from_poses(
                (0..20)
                    .map(|k| Pose::new(Rotation::about_z(rate * k as f64 * 0.1), Vec3::zeros(), k as f64 * 0.1))
                    .collect(),
            )
            .unwrap()
        };
        let r = relative_pose_error(&make(0.53), &make(0.5), RpeMode::PerFrame).unwrap();
        for p in &r.pairs {
            assert!((p.rotational - 0.003).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_uses_nearest_timestamp_within_tolerance() {
        let truth = line(1.0, 30, 10.0);
        let shifted = Trajectory::from_poses(
            truth
                .iter()
                .map(|p| Pose::new(p.rotation, p.position, p.timestamp + 0.01))
                .collect(),
        )
        .unwrap();
        assert_eq!(
            relative_pose_error(&shifted, &truth, RpeMode::PerFrame)
                .unwrap()
                .pairs
                .len(),
            29
        );
        let far = Trajectory::from_poses(
            truth
                .iter()
                .map(|p| Pose::new(p.rotation, p.position, p.timestamp + 100.0))
                .collect(),
        )
        .unwrap();
        assert!(matches!(
            relative_pose_error(&far, &truth, RpeMode::PerFrame),
            Err(Error::NoOverlap)
        ));
        assert!(matches!(
            relative_pose_error(&Trajectory::new(), &truth, RpeMode::PerFrame),
            Err(Error::EmptyTrajectory)
        ));
    }

    #[test]
    fn subsampled_self_comparison_is_zero() {
        let t = wiggly(60);
        let sub = Trajectory::from_poses(t.iter().step_by(3).copied().collect()).unwrap();
        let r = relative_pose_error(&sub, &t, RpeMode::PerFrame).unwrap();
        assert_eq!(r.pairs.len(), 19);
        assert!(r.translational.max < 1e-12 && r.rotational.max < 1e-12);
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::from_values(&[3.0, 1.0, 2.0, 4.0]);
        assert_eq!((s.count, s.mean, s.median, s.max), (4, 2.5, 2.5, 4.0));
        assert!((s.rms - 7.5f64.sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn invariant_to_global_rigid_transform(
            axis in (-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64),
            angle in -3.0..3.0f64,
            offset in (-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64),
            bias in 0.9..1.1f64,
        ) {
            let truth = wiggly(30);
            let est = Trajectory::from_poses(
                truth.iter().map(|p| Pose::new(p.rotation, p.position * bias, p.timestamp)).collect()
            ).unwrap();
            let g = Pose::new(Rotation::from_axis_angle(&Vec3::new(axis.0, axis.1, axis.2), angle), Vec3::new(offset.0, offset.1, offset.2), 0.0);
            let moved = Trajectory::from_poses(est.iter().map(|p| g.compose(p)).collect()).unwrap();
            let base = relative_pose_error(&est, &truth, RpeMode::PerFrame).unwrap();
            let r = relative_pose_error(&moved, &truth, RpeMode::PerFrame).unwrap();
            for (a, b) in base.pairs.iter().zip(&r.pairs) {
                prop_assert!((a.translational - b.translational).abs() < 1e-10);
                prop_assert!((a.rotational - b.rotational).abs() < 1e-10);
            }
            let moved_truth = Trajectory::from_poses(truth.iter().map(|p| g.compose(p)).collect()).unwrap();
            let r = relative_pose_error(&est, &moved_truth, RpeMode::PerFrame).unwrap();
            for (a, b) in base.pairs.iter().zip(&r.pairs) {
                prop_assert!((a.translational - b.translational).abs() < 1e-10);
                prop_assert!((a.rotational - b.rotational).abs() < 1e-10);
            }
        }
    }
}
