//! File formats.
//!
//! * Scan CSV, header `timestamp,x,y,z,doppler,power`. Consecutive rows with
//!   the same timestamp form one scan. Points are in the sensor frame; Doppler
//!   is negative for approaching targets.
//! * TUM trajectory: `timestamp tx ty tz qx qy qz qw` per line, `qw ≥ 0`.
//! * Velocity CSV `timestamp,vx,vy,vz`, yaw-rate CSV `timestamp,omega_z`.
//! * Output-only tables: truth labels, per-scan estimates, RPE pairs.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::ego_velocity::{DopplerPoint, Scan};
use crate::error::{Error, Result};
use crate::evaluation::RpeReport;
use crate::geometry::{Pose, Rotation, Trajectory, Vec3};
use crate::odometry::{MotionEstimate, ScanRecord};

pub const SCAN_HEADER: [&str; 6] = ["timestamp", "x", "y", "z", "doppler", "power"];
pub const VELOCITY_HEADER: [&str; 4] = ["timestamp", "vx", "vy", "vz"];
pub const YAW_RATE_HEADER: [&str; 2] = ["timestamp", "omega_z"];
pub const LABEL_HEADER: [&str; 3] = ["timestamp", "point_index", "dynamic"];
pub const RPE_HEADER: [&str; 3] = ["pair_timestamp", "trans_err", "rot_err"];
pub const ESTIMATE_HEADER: [&str; 19] = [
    "timestamp",
    "vx",
    "vy",
    "vz",
    "wx",
    "wy",
    "wz",
    "n_inliers",
    "n_dynamic",
    "cv_xx",
    "cv_xy",
    "cv_xz",
    "cv_yy",
    "cv_yz",
    "cv_zz",
    "cw_yy",
    "cw_yz",
    "cw_zz",
    "time_ms",
];

/// Shortest round-trip decimal; negative zero is written as `0`.
pub fn format_f64(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x}")
    }
}

fn parse_f64(field: &str, line: usize, name: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("{name}: cannot parse {field:?} as a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("{name}: non-finite value {field:?}")));
    }
    Ok(v)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::parse(line, format!("{kind:?}")),
    }
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<bool> {
    let header = reader.headers().map_err(csv_error)?;
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Ok(false);
    }
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::parse(
            1,
            format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(true)
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input)
}

/// Reads numeric rows of a fixed-width CSV table.
fn read_table<R: Read>(input: R, header: &[&str]) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut reader = csv_reader(input);
    if !check_header(&mut reader, header)? {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != header.len() {
            return Err(Error::parse(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let values = record
            .iter()
            .zip(header)
            .map(|(f, name)| parse_f64(f, line, name))
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, values));
    }
    Ok(rows)
}

/// Streams scans from a scan CSV.
pub struct ScanReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    pending: Option<(f64, DopplerPoint)>,
    last_timestamp: Option<f64>,
    done: bool,
}

impl<R: Read> ScanReader<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut reader = csv_reader(input);
        let has_header = check_header(&mut reader, &SCAN_HEADER)?;
        Ok(ScanReader {
            records: reader.into_records(),
            pending: None,
            last_timestamp: None,
            done: !has_header,
        })
    }

    fn next_row(&mut self) -> Option<Result<(f64, DopplerPoint)>> {
        let record = match self.records.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(csv_error(e))),
        };
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        Some(parse_scan_row(&record, line).and_then(|(t, p)| {
            if let Some(prev) = self.last_timestamp {
                if t < prev {
                    return Err(Error::NonMonotonicTimestamp {
                        previous: prev,
                        next: t,
                    });
                }
            }
            self.last_timestamp = Some(t);
            Ok((t, p))
        }))
    }
}

fn parse_scan_row(record: &csv::StringRecord, line: usize) -> Result<(f64, DopplerPoint)> {
    if record.len() != SCAN_HEADER.len() {
        return Err(Error::parse(line, format!("expected 6 fields, found {}", record.len())));
    }
    let mut v = [0.0; 6];
    for (i, (field, name)) in record.iter().zip(SCAN_HEADER).enumerate() {
        v[i] = parse_f64(field, line, name)?;
    }
    let point =
        DopplerPoint::new(Vec3::new(v[1], v[2], v[3]), v[4], v[5]).map_err(|e| Error::parse(line, e.to_string()))?;
    Ok((v[0], point))
}

impl<R: Read> Iterator for ScanReader<R> {
    type Item = Result<Scan>;

    fn next(&mut self) -> Option<Result<Scan>> {
        if self.done {
            return None;
        }
        let (timestamp, first) = match self.pending.take() {
            Some(row) => row,
            None => match self.next_row() {
                Some(Ok(row)) => row,
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e));
                }
                None => {
                    self.done = true;
                    return None;
                }
            },
        };
        let mut scan = Scan::new(timestamp, vec![first]);
        loop {
            match self.next_row() {
                Some(Ok((t, p))) if t == timestamp => scan.points.push(p),
                Some(Ok(row)) => {
                    self.pending = Some(row);
                    break;
                }
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e));
                }
                None => {
                    self.done = true;
                    break;
                }
            }
        }
        Some(Ok(scan))
    }
}

pub fn read_scans(path: impl AsRef<Path>) -> Result<ScanReader<BufReader<File>>> {
    ScanReader::new(BufReader::new(File::open(path)?))
}

pub fn write_scans_to<'a, W: Write>(out: W, scans: impl IntoIterator<Item = &'a Scan>) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", SCAN_HEADER.join(","))?;
    for scan in scans {
        let t = format_f64(scan.timestamp);
        for p in &scan.points {
            writeln!(
                w,
                "{t},{},{},{},{},{}",
                format_f64(p.position.x),
                format_f64(p.position.y),
                format_f64(p.position.z),
                format_f64(p.doppler),
                format_f64(p.power)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_scans<'a>(path: impl AsRef<Path>, scans: impl IntoIterator<Item = &'a Scan>) -> Result<()> {
    write_scans_to(File::create(path)?, scans)
}

/// One TUM line for `pose`.
pub fn format_tum_line(pose: &Pose) -> String {
    let q = pose.rotation.to_quaternion();
    let p = &pose.position;
    format!(
        "{:.9} {} {} {} {} {} {} {}",
        pose.timestamp,
        format_f64(p.x),
        format_f64(p.y),
        format_f64(p.z),
        format_f64(q[0]),
        format_f64(q[1]),
        format_f64(q[2]),
        format_f64(q[3])
    )
}

pub fn write_trajectory_to<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(out);
    for pose in traj.iter() {
        writeln!(w, "{}", format_tum_line(pose))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    write_trajectory_to(File::create(path)?, traj)
}

/// Reads a TUM trajectory; blank lines and `#` comments are skipped.
pub fn read_trajectory_from<R: Read>(input: R) -> Result<Trajectory> {
    let mut traj = Trajectory::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::parse(n, format!("expected 8 fields, found {}", fields.len())));
        }
        const NAMES: [&str; 8] = ["timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"];
        let v = fields
            .iter()
            .zip(NAMES)
            .map(|(f, name)| parse_f64(f, n, name))
            .collect::<Result<Vec<_>>>()?;
        let rotation = Rotation::from_quaternion(v[4], v[5], v[6], v[7]).map_err(|e| Error::parse(n, e.to_string()))?;
        traj.push(Pose::new(rotation, Vec3::new(v[1], v[2], v[3]), v[0]))
            .map_err(|e| Error::parse(n, e.to_string()))?;
    }
    Ok(traj)
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    read_trajectory_from(File::open(path)?)
}

fn check_strictly_increasing(rows: &[(usize, Vec<f64>)]) -> Result<()> {
    for pair in rows.windows(2) {
        if pair[1].1[0] <= pair[0].1[0] {
            return Err(Error::parse(
                pair[1].0,
                format!("timestamp {} does not follow {}", pair[1].1[0], pair[0].1[0]),
            ));
        }
    }
    Ok(())
}

pub fn read_velocities_from<R: Read>(input: R) -> Result<Vec<(f64, Vec3)>> {
    let rows = read_table(input, &VELOCITY_HEADER)?;
    check_strictly_increasing(&rows)?;
    Ok(rows
        .into_iter()
        .map(|(_, v)| (v[0], Vec3::new(v[1], v[2], v[3])))
        .collect())
}

pub fn read_velocities(path: impl AsRef<Path>) -> Result<Vec<(f64, Vec3)>> {
    read_velocities_from(File::open(path)?)
}

pub fn write_velocities(path: impl AsRef<Path>, velocities: &[(f64, Vec3)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", VELOCITY_HEADER.join(","))?;
    for (t, v) in velocities {
        writeln!(
            w,
            "{},{},{},{}",
            format_f64(*t),
            format_f64(v.x),
            format_f64(v.y),
            format_f64(v.z)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_yaw_rates_from<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let rows = read_table(input, &YAW_RATE_HEADER)?;
    check_strictly_increasing(&rows)?;
    Ok(rows.into_iter().map(|(_, v)| (v[0], v[1])).collect())
}

pub fn read_yaw_rates(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    read_yaw_rates_from(File::open(path)?)
}

pub fn write_yaw_rates(path: impl AsRef<Path>, rates: &[(f64, f64)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", YAW_RATE_HEADER.join(","))?;
    for (t, r) in rates {
        writeln!(w, "{},{}", format_f64(*t), format_f64(*r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_labels(path: impl AsRef<Path>, scans: &[Scan], labels: &[Vec<bool>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", LABEL_HEADER.join(","))?;
    for (scan, flags) in scans.iter().zip(labels) {
        let t = format_f64(scan.timestamp);
        for (i, d) in flags.iter().enumerate() {
            writeln!(w, "{t},{i},{}", u8::from(*d))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn estimate_row(e: &MotionEstimate) -> String {
    let (cv, cw) = (&e.v_covariance, &e.omega_covariance);
    let mut fields: Vec<String> = [
        e.timestamp,
        e.v_s_vehicle.x,
        e.v_s_vehicle.y,
        e.v_s_vehicle.z,
        e.omega.x,
        e.omega.y,
        e.omega.z,
    ]
    .iter()
    .map(|x| format_f64(*x))
    .collect();
    fields.push(e.inlier_count().to_string());
    fields.push(e.dynamic_count().to_string());
    for (i, j) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)] {
        fields.push(format_f64(cv[(i, j)]));
    }
    for (i, j) in [(1, 1), (1, 2), (2, 2)] {
        fields.push(format_f64(cw[(i, j)]));
    }
    fields.push(format!("{:.3}", e.compute_time_ms));
    fields.join(",")
}

/// Per-scan estimates; scans that failed are not listed.
pub fn write_estimates_to<W: Write>(out: W, records: &[ScanRecord]) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", ESTIMATE_HEADER.join(","))?;
    for r in records {
        if let ScanRecord::Estimate(e) = r {
            writeln!(w, "{}", estimate_row(e))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_estimates(path: impl AsRef<Path>, records: &[ScanRecord]) -> Result<()> {
    write_estimates_to(File::create(path)?, records)
}

pub fn write_rpe_to<W: Write>(out: W, report: &RpeReport) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", RPE_HEADER.join(","))?;
    for p in &report.pairs {
        writeln!(
            w,
            "{},{},{}",
            format_f64(p.timestamp),
            format_f64(p.translational),
            format_f64(p.rotational)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rpe(path: impl AsRef<Path>, report: &RpeReport) -> Result<()> {
    write_rpe_to(File::create(path)?, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn scans_from(text: &str) -> Result<Vec<Scan>> {
        ScanReader::new(text.as_bytes())?.collect()
    }

    #[test]
    fn header_only_is_empty() {
        assert!(scans_from("timestamp,x,y,z,doppler,power\n").unwrap().is_empty());
        assert!(scans_from("").unwrap().is_empty());
    }

    #[test]
    fn rows_group_by_timestamp() {
        let text = "timestamp,x,y,z,doppler,power\n\
                    0.0,1,0,0,-1,1\n0.0,0,1,0,0,1\n0.0,0,0,1,0,1\n\
                    0.1,1,0,0,-1,2\n0.1,0,2,0,0.5,2\n";
        let scans = scans_from(text).unwrap();
        assert_eq!(scans.iter().map(Scan::len).collect::<Vec<_>>(), vec![3, 2]);
        assert_eq!(scans[1].timestamp, 0.1);
        assert_eq!(scans[1].points[1].doppler, 0.5);
    }

    #[test]
    fn bad_rows_report_their_line() {
        let err = scans_from("timestamp,x,y,z,doppler,power\n0,1,0,0,0,1\n0,1,0,0,NaN,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = scans_from("timestamp,x,y,z,doppler,power\n0,1,0,0,0,1\n0,1,0,0,abc,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = scans_from("timestamp,x,y,z,doppler,power\n0,0,0,0,0,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = scans_from("timestamp,x,y,z,doppler,power\n0,1,0,0,0,1,7\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = scans_from("t,x,y,z,doppler,power\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn decreasing_timestamps_are_rejected() {
        let text = "timestamp,x,y,z,doppler,power\n0.2,1,0,0,0,1\n0.1,1,0,0,0,1\n";
        assert!(matches!(scans_from(text), Err(Error::NonMonotonicTimestamp { .. })));
    }

    #[test]
    fn tum_identity_line() {
        assert_eq!(format_tum_line(&Pose::identity(0.0)), "0.000000000 0 0 0 0 0 0 1");
    }

    #[test]
    fn tum_quarter_turn() {
        let line = format_tum_line(&Pose::new(Rotation::about_z(FRAC_PI_2), Vec3::zeros(), 1.0));
        let traj = read_trajectory_from(line.as_bytes()).unwrap();
        let q = traj.poses()[0].rotation.to_quaternion();
        let fields: Vec<f64> = line.split(' ').map(|f| f.parse().unwrap()).collect();
        assert!((fields[6] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((fields[7] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((q[2] - fields[6]).abs() < 1e-15);
    }

    #[test]
    fn tum_rejects_garbage() {
        assert!(matches!(
            read_trajectory_from("0 0 0\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_trajectory_from("# c\n0 0 0 0 0 0 0 1\n0 inf 0 0 0 0 0 1\n".as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            read_trajectory_from("1 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn velocity_and_yaw_tables() {
        let v = read_velocities_from("timestamp,vx,vy,vz\n0,1,2,3\n0.1,4,5,6\n".as_bytes()).unwrap();
        assert_eq!(v[1], (0.1, Vec3::new(4.0, 5.0, 6.0)));
        let w = read_yaw_rates_from("timestamp,omega_z\n0,0.5\n".as_bytes()).unwrap();
        assert_eq!(w, vec![(0.0, 0.5)]);
        assert!(read_yaw_rates_from("timestamp,omega_z\n0,0.5\n0,0.6\n".as_bytes()).is_err());
        assert!(read_yaw_rates_from("timestamp,omega_z\n0,inf\n".as_bytes()).is_err());
    }

    #[test]
    fn estimates_have_the_documented_columns() {
        let est = MotionEstimate {
            timestamp: 0.5,
            v_s_vehicle: Vec3::new(1.0, 0.0, 0.0),
            omega: Vec3::zeros(),
            v_covariance: Mat3::identity(),
            omega_covariance: Mat3::zeros(),
            dynamic_mask: vec![false, true, false],
            compute_time_ms: 1.25,
        };
        let mut out = Vec::new();
        write_estimates_to(
            &mut out,
            &[
                ScanRecord::Estimate(est),
                ScanRecord::Gap {
                    timestamp: 0.6,
                    reason: "x".into(),
                },
            ],
        )
        .unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "0.5,1,0,0,0,0,0,2,1,1,0,0,1,0,1,0,0,0,1.250");
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![
            -1e6..1e6f64,
            -1e-6..1e-6f64,
            any::<f64>().prop_filter("finite", |x| x.is_finite())
        ]
    }

    proptest! {
        #[test]
        fn scans_round_trip_bit_exactly(
            rows in proptest::collection::vec((finite(), finite(), finite(), finite(), 0.0..1e9f64), 1..40),
            split in 1usize..40,
        ) {
            let points: Vec<DopplerPoint> = rows
                .iter()
                .filter(|(x, y, z, _, _)| Vec3::new(*x, *y, *z).norm() > 0.0 && Vec3::new(*x, *y, *z).norm().is_finite())
                .map(|(x, y, z, d, p)| DopplerPoint::new(Vec3::new(*x, *y, *z), *d, *p).unwrap())
                .collect();
            prop_assume!(!points.is_empty());
            let k = split.min(points.len());
            let scans = vec![
                Scan::new(0.1, points[..k].to_vec()),
                Scan::new(0.30000000000000004, points[k..].to_vec()),
            ];
            let mut buf = Vec::new();
            write_scans_to(&mut buf, &scans).unwrap();
            let back: Vec<Scan> = ScanReader::new(buf.as_slice()).unwrap().collect::<Result<_>>().unwrap();
            let expected: Vec<Scan> = scans.into_iter().filter(|s| !s.is_empty()).collect();
            prop_assert_eq!(back, expected);
        }

        #[test]
        fn trajectories_round_trip(poses in proptest::collection::vec(
            ((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), -3.1..3.1f64, (-1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64)), 1..20)
        ) {
            let traj = Trajectory::from_poses(
                poses.iter().enumerate().map(|(i, ((ax, ay, az), angle, (x, y, z)))| {
                    Pose::new(Rotation::from_axis_angle(&Vec3::new(*ax, *ay, *az), *angle), Vec3::new(*x, *y, *z), i as f64 * 0.1)
                }).collect()
            ).unwrap();
            let mut buf = Vec::new();
            write_trajectory_to(&mut buf, &traj).unwrap();
            let back = read_trajectory_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), traj.len());
            for (a, b) in traj.iter().zip(back.iter()) {
                prop_assert!((a.timestamp - b.timestamp).abs() < 1e-9);
                prop_assert!((a.position - b.position).norm() < 1e-9);
                prop_assert!((a.rotation.matrix() - b.rotation.matrix()).amax() < 1e-9);
            }
        }
    }
}
