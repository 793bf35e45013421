//! Command-line front end.
//!
//! Exit codes: 0 success, 1 internal failure, 2 usage or configuration
//! error, 3 input/output error (including malformed data files), 4 no scan
//! could be processed, 5 calibration precondition not met, 6 trajectories
//! do not overlap.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calibration::{
    calibrate_rotation_step1, calibrate_rotation_step2, calibrate_sx, CalibrationRun, ExtrinsicRotationResult,
};
use crate::config::{parse_override, Config, KEYS_HELP};
use crate::ego_velocity::estimate_velocity_ransac;
use crate::error::Error;
use crate::evaluation::{relative_pose_error, RpeMode};
use crate::geometry::{Pose, Vec3};
use crate::io;
use crate::odometry::{process_scan, run_sequence, Integration, ScanRecord};
use crate::simulator::simulate_sequence;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NO_SCANS: i32 = 4;
pub const EXIT_CALIBRATION: i32 = 5;
pub const EXIT_NO_OVERLAP: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "doppler-odom", version, about = "Vehicle odometry from per-scan radial velocities", after_help = KEYS_HELP)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scan sequence with ground truth.
    #[command(after_help = KEYS_HELP)]
    Simulate(SimulateArgs),
    /// Estimate a trajectory from a scan CSV.
    #[command(after_help = KEYS_HELP)]
    Odom(OdomArgs),
    /// Calibrate the sensor mount from recorded maneuvers.
    #[command(after_help = KEYS_HELP)]
    Calibrate(CalibrateArgs),
    /// Relative pose error of an estimated trajectory against a reference.
    #[command(after_help = KEYS_HELP)]
    Evaluate(EvaluateArgs),
}

fn override_arg(s: &str) -> Result<(String, String), String> {
    parse_override(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set ransac.inlier_threshold=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = override_arg)]
    overrides: Vec<(String, String)>,
    /// Seed for every random draw; overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory receiving scans.csv, truth_tum.txt, labels.csv and truth_yaw_rate.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct OdomArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Scan CSV.
    #[arg(long)]
    scans: PathBuf,
    /// Output trajectory (TUM).
    #[arg(long)]
    out: PathBuf,
    /// Per-scan estimates CSV.
    #[arg(long)]
    estimates: Option<PathBuf>,
    /// Overrides `ransac.inlier_threshold` (m/s).
    #[arg(long)]
    ransac_threshold: Option<f64>,
    /// Timestamp of the identity start pose. Without it the first scan
    /// anchors the identity pose and is not integrated.
    #[arg(long)]
    start_time: Option<f64>,
    /// Use the first-order integration step instead of the exact one.
    #[arg(long)]
    first_order: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CalibrationMode {
    /// Forward axis from a straight forward/backward run.
    Rotation1,
    /// Roll about the forward axis from free driving on flat ground.
    Rotation2,
    /// Longitudinal lever arm from a constant circle with a yaw-rate reference.
    Sx,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    mode: CalibrationMode,
    /// Scan CSV; sensor velocities are estimated from it.
    #[arg(long, conflicts_with = "velocities", required_unless_present = "velocities")]
    scans: Option<PathBuf>,
    /// Sensor-frame velocity CSV (`timestamp,vx,vy,vz`).
    #[arg(long)]
    velocities: Option<PathBuf>,
    /// Reference yaw-rate CSV (`timestamp,omega_z`), required by `sx`.
    #[arg(long)]
    yaw_rate: Option<PathBuf>,
    /// Starting configuration.
    #[arg(long)]
    config_in: Option<PathBuf>,
    /// Where the updated configuration is written.
    #[arg(long)]
    config_out: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = override_arg)]
    overrides: Vec<(String, String)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EvaluationMode {
    Frame,
    Second,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Estimated trajectory (TUM).
    #[arg(long)]
    estimate: PathBuf,
    /// Reference trajectory (TUM).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum, default_value = "frame")]
    mode: EvaluationMode,
    /// RPE CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn fail(code: i32, context: &str) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| Failure {
        code,
        message: format!("{context}: {e}"),
    }
}

fn calibration_code(e: &Error) -> i32 {
    match e {
        Error::InsufficientMotion(_)
        | Error::AmbiguousDirection(_)
        | Error::InsufficientExcitation(_)
        | Error::NoReference
        | Error::DegenerateManeuver(_) => EXIT_CALIBRATION,
        Error::Io(_) | Error::Parse { .. } | Error::NonMonotonicTimestamp { .. } => EXIT_IO,
        Error::Validation(_) | Error::SingularGeometry(_) => EXIT_CONFIG,
        _ => EXIT_INTERNAL,
    }
}

fn load_config(path: Option<&Path>, overrides: &[(String, String)], seed: Option<u64>) -> Result<Config, Failure> {
    let mut config = match path {
        Some(p) => Config::load(p, overrides).map_err(fail(EXIT_CONFIG, &format!("config {}", p.display())))?,
        None => Config::parse("", overrides).map_err(fail(EXIT_CONFIG, "config"))?,
    };
    if let Some(s) = seed {
        config.set_seed(s);
    }
    Ok(config)
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let c = &args.config;
    let config = load_config(c.config.as_deref(), &c.overrides, c.seed)?;
    let seq = simulate_sequence(&config.motion_profile(), &config.vehicle, &config.scene)
        .map_err(fail(EXIT_CONFIG, "simulation setup"))?;
    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| fail(EXIT_IO, "output directory")(e.into()))?;
    io::write_scans(dir.join("scans.csv"), &seq.scans).map_err(fail(EXIT_IO, "scans.csv"))?;
    io::write_trajectory(dir.join("truth_tum.txt"), &seq.truth).map_err(fail(EXIT_IO, "truth_tum.txt"))?;
    io::write_labels(dir.join("labels.csv"), &seq.scans, &seq.labels).map_err(fail(EXIT_IO, "labels.csv"))?;
    io::write_yaw_rates(dir.join("truth_yaw_rate.csv"), &seq.yaw_rates).map_err(fail(EXIT_IO, "truth_yaw_rate.csv"))?;
    let points: usize = seq.scans.iter().map(|s| s.len()).sum();
    println!(
        "simulated {} scans ({} points, seed {}) into {}",
        seq.scans.len(),
        points,
        config.seed(),
        dir.display()
    );
    Ok(())
}

fn odom(args: OdomArgs) -> Result<(), Failure> {
    let c = &args.config;
    let mut config = load_config(c.config.as_deref(), &c.overrides, c.seed)?;
    if let Some(t) = args.ransac_threshold {
        config.ransac.inlier_threshold = t;
        config.validate().map_err(fail(EXIT_CONFIG, "--ransac-threshold"))?;
    }
    let scheme = if args.first_order {
        Integration::FirstOrder
    } else {
        Integration::Exponential
    };
    let mut scans = io::read_scans(&args.scans).map_err(fail(EXIT_IO, "scans"))?;
    let mut records = Vec::new();
    let initial = match args.start_time {
        Some(t) => Pose::identity(t),
        None => match scans.next() {
            None => {
                return Err(Failure {
                    code: EXIT_NO_SCANS,
                    message: "scan file contains no scans".into(),
                })
            }
            Some(Err(e)) => return Err(fail(EXIT_IO, "scans")(e)),
            Some(Ok(first)) => {
                records.push(match process_scan(&first, &config.vehicle, &config.ransac) {
                    Ok(est) => ScanRecord::Estimate(est),
                    Err(e) => ScanRecord::Gap {
                        timestamp: first.timestamp,
                        reason: e.to_string(),
                    },
                });
                Pose::identity(first.timestamp)
            }
        },
    };
    let (trajectory, rest) =
        run_sequence(scans, &config.vehicle, &config.ransac, initial, scheme).map_err(fail(EXIT_IO, "scans"))?;
    records.extend(rest);

    let times: Vec<f64> = records
        .iter()
        .filter_map(|r| match r {
            ScanRecord::Estimate(e) => Some(e.compute_time_ms),
            ScanRecord::Gap { .. } => None,
        })
        .collect();
    if times.is_empty() {
        return Err(Failure {
            code: EXIT_NO_SCANS,
            message: format!("none of the {} scans could be processed", records.len()),
        });
    }
    io::write_trajectory(&args.out, &trajectory).map_err(fail(EXIT_IO, "trajectory"))?;
    if let Some(path) = &args.estimates {
        io::write_estimates(path, &records).map_err(fail(EXIT_IO, "estimates"))?;
    }

    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    let r = &config.ransac;
    println!("scans: {} processed, {} gaps", times.len(), records.len() - times.len());
    println!(
        "ransac: inlier_threshold {} m/s, max_iterations {}, min_inliers {}, seed {}",
        r.inlier_threshold, r.max_iterations, r.min_inliers, r.seed
    );
    println!("compute time: {mean:.3} ± {std:.3} ms per scan");
    for rec in &records {
        if let ScanRecord::Gap { timestamp, reason } = rec {
            println!("gap at t = {timestamp}: {reason}");
        }
    }
    Ok(())
}

fn calibration_input(args: &CalibrateArgs, config: &Config) -> Result<(Vec<(f64, Vec3)>, usize), Failure> {
    if let Some(path) = &args.velocities {
        let v = io::read_velocities(path).map_err(fail(EXIT_IO, "velocities"))?;
        return Ok((v, 0));
    }
    let path = args.scans.as_ref().expect("clap enforces --scans or --velocities");
    let mut velocities = Vec::new();
    let mut skipped = 0;
    for scan in io::read_scans(path).map_err(fail(EXIT_IO, "scans"))? {
        let scan = scan.map_err(fail(EXIT_IO, "scans"))?;
        match estimate_velocity_ransac(&scan, &config.ransac) {
            Ok(est) => velocities.push((scan.timestamp, est.velocity)),
            Err(_) => skipped += 1,
        }
    }
    Ok((velocities, skipped))
}

fn report_rotation(step: &str, r: &ExtrinsicRotationResult) {
    let q = r.rotation_vs.to_quaternion();
    println!(
        "{step}: {} samples, residual rms {:.6} m/s (before {:.6} m/s)",
        r.samples_used, r.residual_rms, r.initial_residual_rms
    );
    println!(
        "rotation_vs: angle {:.4} deg, quaternion [{:.9}, {:.9}, {:.9}, {:.9}]",
        r.rotation_vs.angle().to_degrees(),
        q[0],
        q[1],
        q[2],
        q[3]
    );
}

fn calibrate(args: CalibrateArgs) -> Result<(), Failure> {
    let mut config = load_config(args.config_in.as_deref(), &args.overrides, None)?;
    let (velocities, skipped) = calibration_input(&args, &config)?;
    if skipped > 0 {
        println!("{skipped} scans gave no velocity and were skipped");
    }
    let reference = match &args.yaw_rate {
        Some(path) => Some(io::read_yaw_rates(path).map_err(fail(EXIT_IO, "yaw rate"))?),
        None => None,
    };
    let run = CalibrationRun::new(velocities, reference).map_err(|e| Failure {
        code: calibration_code(&e),
        message: format!("calibration input: {e}"),
    })?;
    let calibration_failure = |e: Error| Failure {
        code: calibration_code(&e),
        message: format!("calibration: {e}"),
    };
    match args.mode {
        CalibrationMode::Rotation1 => {
            let r = calibrate_rotation_step1(&run).map_err(calibration_failure)?;
            report_rotation("rotation step 1", &r);
            config.vehicle.rotation_vs = r.rotation_vs;
        }
        CalibrationMode::Rotation2 => {
            let r = calibrate_rotation_step2(&run, &config.vehicle.rotation_vs).map_err(calibration_failure)?;
            report_rotation("rotation step 2", &r);
            config.vehicle.rotation_vs = r.rotation_vs;
        }
        CalibrationMode::Sx => {
            let r = calibrate_sx(&run, &config.vehicle.rotation_vs).map_err(calibration_failure)?;
            println!(
                "lever arm: s_x = {} m from {} samples, yaw-rate residual rms {:.6} rad/s",
                r.s_x, r.samples_used, r.residual_rms
            );
            config.vehicle.s.x = r.s_x;
        }
    }
    config
        .validate()
        .map_err(fail(EXIT_CONFIG, "calibrated configuration"))?;
    config.save(&args.config_out).map_err(fail(EXIT_IO, "config output"))?;
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let estimate = io::read_trajectory(&args.estimate).map_err(fail(EXIT_IO, "estimate"))?;
    let truth = io::read_trajectory(&args.truth).map_err(fail(EXIT_IO, "truth"))?;
    let mode = match args.mode {
        EvaluationMode::Frame => RpeMode::PerFrame,
        EvaluationMode::Second => RpeMode::PerSecond,
    };
    let report = relative_pose_error(&estimate, &truth, mode).map_err(|e| Failure {
        code: match e {
            Error::NoOverlap | Error::EmptyTrajectory => EXIT_NO_OVERLAP,
            _ => EXIT_INTERNAL,
        },
        message: format!("evaluation: {e}"),
    })?;
    if let Some(path) = &args.out {
        io::write_rpe(path, &report).map_err(fail(EXIT_IO, "RPE output"))?;
    }
    print!("{report}");
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Odom(a) => odom(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Evaluate(a) => evaluate(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}
