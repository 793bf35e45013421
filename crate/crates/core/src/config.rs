//! Line-oriented configuration: `key = value` with dotted keys, `#` comments.
//!
//! Every key is optional; see [`KEYS_HELP`] for the list and defaults. The
//! same keys are accepted as command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::ego_velocity::RansacParams;
use crate::error::{Error, Result};
use crate::geometry::{Rotation, Vec3};
use crate::io::format_f64;
use crate::kinematics::VehicleGeometry;
use crate::simulator::{DynamicObject, MotionProfile, SceneSpec, Segment};

pub const KEYS_HELP: &str = "\
Configuration keys (`key = value`, `#` starts a comment; vectors as `x,y,z`):
  vehicle.qx, vehicle.qy, vehicle.qz, vehicle.qw   sensor-to-vehicle rotation quaternion [0 0 0 1]
  vehicle.s_x, vehicle.s_y, vehicle.s_z            sensor position in the vehicle frame, m [0.8 0 0.5]
  vehicle.m                                        half the wheel-axis distance, m [0.256]
  ransac.max_iterations                            [100]
  ransac.inlier_threshold                          Doppler residual threshold, m/s [0.2]
  ransac.min_inliers                               [10]
  seed                                             RANSAC and simulator seed [0]
  scene.static_point_count                         [300]
  scene.world_extent                               maximum static point range, m [50]
  scene.doppler_noise_sigma                        m/s [0.05]
  scene.power_min, scene.power_max                 [1, 10]
  scene.object.<i>.center                          box center relative to the vehicle, m [10,0,0]
  scene.object.<i>.extent                          box half edge, m [1]
  scene.object.<i>.velocity                        world-frame velocity, m/s [0,0,0]
  scene.object.<i>.point_count                     [20]
  profile.scan_rate                                Hz [10]
  profile.allow_model_violation                    permit roll rate [false]
  profile.segment.<i>.duration                     s [1]
  profile.segment.<i>.v_origin                     vehicle-origin velocity, vehicle axes, m/s [0,0,0]
  profile.segment.<i>.omega                        angular velocity, vehicle axes, rad/s [0,0,0]
Without any profile.segment keys the built-in demonstration drive is used.
";

const DEFAULT_OBJECT: DynamicObject = DynamicObject {
    center: Vec3::new(10.0, 0.0, 0.0),
    extent: 1.0,
    velocity: Vec3::new(0.0, 0.0, 0.0),
    point_count: 20,
};

const DEFAULT_SEGMENT: Segment = Segment {
    duration: 1.0,
    v_origin: Vec3::new(0.0, 0.0, 0.0),
    omega: Vec3::new(0.0, 0.0, 0.0),
};

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub vehicle: VehicleGeometry,
    pub ransac: RansacParams,
    pub scene: SceneSpec,
    /// An empty segment list selects [`MotionProfile::demo`].
    pub profile: MotionProfile,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            vehicle: VehicleGeometry::default(),
            ransac: RansacParams::default(),
            scene: SceneSpec::default(),
            profile: MotionProfile::new(Vec::new(), 10.0),
        }
    }
}

fn parse_f64(value: &str) -> std::result::Result<f64, String> {
    let v: f64 = value.parse().map_err(|_| format!("{value:?} is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{value:?} is not finite"))
    }
}

fn parse_usize(value: &str) -> std::result::Result<usize, String> {
    value
        .parse()
        .map_err(|_| format!("{value:?} is not a non-negative integer"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    value.parse().map_err(|_| format!("{value:?} is not true or false"))
}

fn parse_vec3(value: &str) -> std::result::Result<Vec3, String> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("{value:?} is not a vector `x,y,z`"));
    }
    Ok(Vec3::new(
        parse_f64(parts[0])?,
        parse_f64(parts[1])?,
        parse_f64(parts[2])?,
    ))
}

fn format_vec3(v: &Vec3) -> String {
    format!("{},{},{}", format_f64(v.x), format_f64(v.y), format_f64(v.z))
}

/// Splits `prefix.<i>.field` into `(i, field)`.
fn indexed<'a>(key: &'a str, prefix: &str) -> Option<(&'a str, &'a str)> {
    key.strip_prefix(prefix)?.split_once('.')
}

fn slot<'a, T>(items: &'a mut Vec<T>, index: &str, default: T) -> std::result::Result<&'a mut T, String> {
    let i: usize = index.parse().map_err(|_| format!("{index:?} is not an index"))?;
    if i > items.len() {
        return Err(format!("index {i} skips index {}", items.len()));
    }
    if i == items.len() {
        items.push(default);
    }
    Ok(&mut items[i])
}

/// Values as read, before the quaternion is assembled and invariants checked.
struct Draft {
    config: Config,
    quaternion: [f64; 4],
}

impl Draft {
    fn new() -> Self {
        Draft {
            config: Config::default(),
            quaternion: [0.0, 0.0, 0.0, 1.0],
        }
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let c = &mut self.config;
        match key {
            "vehicle.qx" => self.quaternion[0] = parse_f64(value)?,
            "vehicle.qy" => self.quaternion[1] = parse_f64(value)?,
            "vehicle.qz" => self.quaternion[2] = parse_f64(value)?,
            "vehicle.qw" => self.quaternion[3] = parse_f64(value)?,
            "vehicle.s_x" => c.vehicle.s.x = parse_f64(value)?,
            "vehicle.s_y" => c.vehicle.s.y = parse_f64(value)?,
            "vehicle.s_z" => c.vehicle.s.z = parse_f64(value)?,
            "vehicle.m" => c.vehicle.m = parse_f64(value)?,
            "ransac.max_iterations" => c.ransac.max_iterations = parse_usize(value)?,
            "ransac.inlier_threshold" => c.ransac.inlier_threshold = parse_f64(value)?,
            "ransac.min_inliers" => c.ransac.min_inliers = parse_usize(value)?,
            "seed" => {
                let seed = value.parse().map_err(|_| format!("{value:?} is not a seed"))?;
                c.ransac.seed = seed;
                c.scene.seed = seed;
            }
            "scene.static_point_count" => c.scene.static_point_count = parse_usize(value)?,
            "scene.world_extent" => c.scene.world_extent = parse_f64(value)?,
            "scene.doppler_noise_sigma" => c.scene.doppler_noise_sigma = parse_f64(value)?,
            "scene.power_min" => c.scene.power_range.0 = parse_f64(value)?,
            "scene.power_max" => c.scene.power_range.1 = parse_f64(value)?,
            "profile.scan_rate" => c.profile.scan_rate = parse_f64(value)?,
            "profile.allow_model_violation" => c.profile.allow_model_violation = parse_bool(value)?,
            _ => {
                if let Some((i, field)) = indexed(key, "scene.object.") {
                    let o = slot(&mut c.scene.dynamic_objects, i, DEFAULT_OBJECT)?;
                    match field {
                        "center" => o.center = parse_vec3(value)?,
                        "extent" => o.extent = parse_f64(value)?,
                        "velocity" => o.velocity = parse_vec3(value)?,
                        "point_count" => o.point_count = parse_usize(value)?,
                        _ => return Err(format!("unknown key `{key}`")),
                    }
                } else if let Some((i, field)) = indexed(key, "profile.segment.") {
                    let s = slot(&mut c.profile.segments, i, DEFAULT_SEGMENT)?;
                    match field {
                        "duration" => s.duration = parse_f64(value)?,
                        "v_origin" => s.v_origin = parse_vec3(value)?,
                        "omega" => s.omega = parse_vec3(value)?,
                        _ => return Err(format!("unknown key `{key}`")),
                    }
                } else {
                    return Err(format!("unknown key `{key}`"));
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Config> {
        let [x, y, z, w] = self.quaternion;
        self.config.vehicle.rotation_vs = Rotation::from_quaternion(x, y, z, w)?;
        self.config.validate()?;
        Ok(self.config)
    }
}

/// Splits a `key=value` override.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Validation(format!("override {text:?} is not `key=value`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl Config {
    /// Parses configuration text, then applies `overrides` in order.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Config> {
        let mut draft = Draft::new();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(line, format!("expected `key = value`, found {content:?}")))?;
            let key = key.trim();
            if let Some(first) = seen.insert(key.to_string(), line) {
                return Err(Error::parse(line, format!("key `{key}` already set on line {first}")));
            }
            draft
                .set(key, value.trim())
                .map_err(|m| Error::parse(line, format!("{key}: {m}")))?;
        }
        for (key, value) in overrides {
            draft
                .set(key, value)
                .map_err(|m| Error::Validation(format!("override {key}: {m}")))?;
        }
        draft.finish()
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.ransac.validate()?;
        self.scene.validate()?;
        if self.ransac.seed != self.scene.seed {
            return Err(Error::Validation("RANSAC and scene seeds differ".into()));
        }
        self.motion_profile().validate()
    }

    pub fn seed(&self) -> u64 {
        self.ransac.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.ransac.seed = seed;
        self.scene.seed = seed;
    }

    /// The configured drive, or the demonstration drive if none is given.
    pub fn motion_profile(&self) -> MotionProfile {
        if self.profile.segments.is_empty() {
            MotionProfile {
                scan_rate: self.profile.scan_rate,
                allow_model_violation: self.profile.allow_model_violation,
                ..MotionProfile::demo(&self.vehicle)
            }
        } else {
            self.profile.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let q = self.vehicle.rotation_vs.to_quaternion();
        let v = &self.vehicle;
        let mut put = |k: &str, val: String| {
            let _ = writeln!(out, "{k} = {val}");
        };
        for (k, x) in ["vehicle.qx", "vehicle.qy", "vehicle.qz", "vehicle.qw"].iter().zip(q) {
            put(k, format_f64(x));
        }
        put("vehicle.s_x", format_f64(v.s.x));
        put("vehicle.s_y", format_f64(v.s.y));
        put("vehicle.s_z", format_f64(v.s.z));
        put("vehicle.m", format_f64(v.m));
        put("ransac.max_iterations", self.ransac.max_iterations.to_string());
        put("ransac.inlier_threshold", format_f64(self.ransac.inlier_threshold));
        put("ransac.min_inliers", self.ransac.min_inliers.to_string());
        put("seed", self.seed().to_string());
        let s = &self.scene;
        put("scene.static_point_count", s.static_point_count.to_string());
        put("scene.world_extent", format_f64(s.world_extent));
        put("scene.doppler_noise_sigma", format_f64(s.doppler_noise_sigma));
        put("scene.power_min", format_f64(s.power_range.0));
        put("scene.power_max", format_f64(s.power_range.1));
        for (i, o) in s.dynamic_objects.iter().enumerate() {
            put(&format!("scene.object.{i}.center"), format_vec3(&o.center));
            put(&format!("scene.object.{i}.extent"), format_f64(o.extent));
            put(&format!("scene.object.{i}.velocity"), format_vec3(&o.velocity));
            put(&format!("scene.object.{i}.point_count"), o.point_count.to_string());
        }
        put("profile.scan_rate", format_f64(self.profile.scan_rate));
        put(
            "profile.allow_model_violation",
            self.profile.allow_model_violation.to_string(),
        );
        for (i, seg) in self.profile.segments.iter().enumerate() {
            put(&format!("profile.segment.{i}.duration"), format_f64(seg.duration));
            put(&format!("profile.segment.{i}.v_origin"), format_vec3(&seg.v_origin));
            put(&format!("profile.segment.{i}.omega"), format_vec3(&seg.omega));
        }
        out
    }
}
