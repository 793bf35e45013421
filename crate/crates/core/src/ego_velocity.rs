//! Sensor ego-velocity from the radial (Doppler) velocities of a single scan.
//!
//! For a static scene every return satisfies `-doppler_i = dᵢ · v_s`, where
//! `dᵢ` is the unit ray towards the point. Stacking all returns gives an
//! over-determined linear system that is solved by power-weighted least
//! squares. Returns on moving objects break the model; they are rejected by
//! RANSAC over minimal three-point samples and reported as dynamic.

use nalgebra::Cholesky;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{cartesian_to_spherical, direction_row, is_finite, Mat3, Vec3};

/// Largest accepted condition number of `AᵀWA`.
pub const MAX_CONDITION_NUMBER: f64 = 1e8;

/// Minimum RMS angle (deg) between the rays and their best-fitting plane
/// through the sensor. At or below it the out-of-plane velocity is unobservable.
pub const MIN_OUT_OF_PLANE_SPREAD_DEG: f64 = 0.1;

/// Inlier ratio at which RANSAC stops drawing hypotheses.
pub const EARLY_EXIT_INLIER_RATIO: f64 = 0.95;

/// One return of a Doppler-capable range sensor, in the sensor frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DopplerPoint {
    pub position: Vec3,
    /// Radial velocity (m/s); negative when the target approaches.
    pub doppler: f64,
    /// Linear signal power, used as the least-squares weight.
    pub power: f64,
}

impl DopplerPoint {
    pub fn new(position: Vec3, doppler: f64, power: f64) -> Result<Self> {
        let p = DopplerPoint {
            position,
            doppler,
            power,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !is_finite(&self.position) || !self.doppler.is_finite() || !self.power.is_finite() {
            return Err(Error::Validation("point has non-finite fields".into()));
        }
        if self.position.norm() == 0.0 {
            return Err(Error::ZeroRange);
        }
        if self.power < 0.0 {
            return Err(Error::Validation(format!("negative power {}", self.power)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub timestamp: f64,
    pub points: Vec<DopplerPoint>,
}

impl Scan {
    pub fn new(timestamp: f64, points: Vec<DopplerPoint>) -> Self {
        Scan { timestamp, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Weighted linear system `A v = B` with diagonal weights `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    rows: Vec<Vec3>,
    rhs: Vec<f64>,
    weights: Vec<f64>,
}

impl LinearSystem {
    /// Rows must be unit vectors; weights non-negative.
    pub fn new(rows: Vec<Vec3>, rhs: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if rows.len() != rhs.len() || rows.len() != weights.len() {
            return Err(Error::Validation(format!(
                "dimension mismatch: {} rows, {} rhs, {} weights",
                rows.len(),
                rhs.len(),
                weights.len()
            )));
        }
        if rows.iter().any(|r| (r.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::Validation("system rows must be unit vectors".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Validation("weights must be finite and non-negative".into()));
        }
        if rhs.iter().any(|b| !b.is_finite()) {
            return Err(Error::Validation("right-hand side has non-finite entries".into()));
        }
        Ok(LinearSystem { rows, rhs, weights })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec3] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Rows selected by `mask`, in order.
    pub fn subset(&self, mask: &[bool]) -> LinearSystem {
        let pick = |i: &usize| mask.get(*i).copied().unwrap_or(false);
        let idx: Vec<usize> = (0..self.len()).filter(pick).collect();
        LinearSystem {
            rows: idx.iter().map(|&i| self.rows[i]).collect(),
            rhs: idx.iter().map(|&i| self.rhs[i]).collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    /// `(AᵀWA, AᵀWB)`.
    pub fn normal_equations(&self) -> (Mat3, Vec3) {
        let mut ata = Mat3::zeros();
        let mut atb = Vec3::zeros();
        for ((a, &b), &w) in self.rows.iter().zip(&self.rhs).zip(&self.weights) {
            ata += a * a.transpose() * w;
            atb += a * (w * b);
        }
        (ata, atb)
    }
}

/// Builds `A`, `B = −doppler` and power weights normalized to mean 1.
///
/// A scan whose total power is zero falls back to uniform weights.
pub fn build_system(scan: &Scan) -> Result<LinearSystem> {
    if scan.is_empty() {
        return Err(Error::EmptyScan);
    }
    let mut rows = Vec::with_capacity(scan.len());
    let mut rhs = Vec::with_capacity(scan.len());
    for p in &scan.points {
        p.validate()?;
        rows.push(direction_row(&cartesian_to_spherical(&p.position)?));
        rhs.push(-p.doppler);
    }
    let total: f64 = scan.points.iter().map(|p| p.power).sum();
    let weights = if total > 0.0 {
        let scale = scan.len() as f64 / total;
        scan.points.iter().map(|p| p.power * scale).collect()
    } else {
        vec![1.0; scan.len()]
    };
    Ok(LinearSystem { rows, rhs, weights })
}

fn check_conditioning(ata: &Mat3) -> Result<()> {
    let eig = ata.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(max > 0.0) {
        return Err(Error::DegenerateGeometry("all weights are zero".into()));
    }
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition > MAX_CONDITION_NUMBER {
        return Err(Error::DegenerateGeometry(format!(
            "condition number of AᵀWA is {condition:.3e} (limit {MAX_CONDITION_NUMBER:e})"
        )));
    }
    // Rows are unit vectors, so λ_min / trace is the weighted mean squared
    // sine of the ray angles to the best-fitting plane through the sensor.
    let spread = (min.max(0.0) / ata.trace()).sqrt().asin().to_degrees();
    if spread <= MIN_OUT_OF_PLANE_SPREAD_DEG * (1.0 + 1e-9) {
        return Err(Error::DegenerateGeometry(format!(
            "rays lie within {spread:.4}° RMS of a plane through the sensor \
             (need {MIN_OUT_OF_PLANE_SPREAD_DEG}°)"
        )));
    }
    Ok(())
}

fn factorize(ata: Mat3) -> Result<Cholesky<f64, nalgebra::U3>> {
    check_conditioning(&ata)?;
    Cholesky::new(ata).ok_or_else(|| Error::DegenerateGeometry("AᵀWA is not positive definite".into()))
}

/// `v_s = (AᵀWA)⁻¹ AᵀWB`, solved through a Cholesky factorization.
pub fn solve_weighted_lsq(sys: &LinearSystem) -> Result<Vec3> {
    if sys.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: sys.len(),
        });
    }
    let (ata, atb) = sys.normal_equations();
    Ok(factorize(ata)?.solve(&atb))
}

/// `ρ = A v − B`.
pub fn residuals(sys: &LinearSystem, v: &Vec3) -> Vec<f64> {
    sys.rows.iter().zip(&sys.rhs).map(|(a, b)| a.dot(v) - b).collect()
}

/// Residual-based covariance of the weighted fit over the inlier rows:
/// `C_v = ρᵀWρ / (N_in − 3) · (AᵀWA)⁻¹`.
pub fn estimate_covariance(sys: &LinearSystem, v: &Vec3, mask: &[bool]) -> Result<Mat3> {
    let inliers = sys.subset(mask);
    if inliers.len() <= 3 {
        return Err(Error::InsufficientPoints {
            needed: 4,
            got: inliers.len(),
        });
    }
    let weighted_sq: f64 = residuals(&inliers, v)
        .iter()
        .zip(&inliers.weights)
        .map(|(r, w)| w * r * r)
        .sum();
    let (ata, _) = inliers.normal_equations();
    let inv = factorize(ata)?.inverse();
    let c = inv * (weighted_sq / (inliers.len() - 3) as f64);
    Ok((c + c.transpose()) * 0.5)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub max_iterations: usize,
    /// Threshold on the absolute Doppler residual (m/s).
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            max_iterations: 100,
            inlier_threshold: 0.2,
            min_inliers: 10,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Validation("ransac.max_iterations must be ≥ 1".into()));
        }
        if !(self.inlier_threshold > 0.0) || !self.inlier_threshold.is_finite() {
            return Err(Error::Validation("ransac.inlier_threshold must be > 0".into()));
        }
        if self.min_inliers < 3 {
            return Err(Error::Validation("ransac.min_inliers must be ≥ 3".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorVelocityEstimate {
    /// Sensor velocity in the sensor frame (m/s).
    pub velocity: Vec3,
    pub covariance: Mat3,
    /// `true` for static (inlier) points.
    pub inlier_mask: Vec<bool>,
    /// Unweighted RMS Doppler residual over the inliers (m/s).
    pub residual_rms: f64,
}

impl SensorVelocityEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }

    /// `true` for points labeled dynamic.
    pub fn dynamic_mask(&self) -> Vec<bool> {
        self.inlier_mask.iter().map(|b| !b).collect()
    }
}

struct Consensus {
    count: usize,
    sq_sum: f64,
}

impl Consensus {
    fn better_than(&self, other: &Consensus) -> bool {
        // Compare RMS values as sq_sum / count cross-multiplied.
        self.count > other.count
            || (self.count == other.count
                && self.count > 0
                && self.sq_sum * (other.count as f64) < other.sq_sum * (self.count as f64))
    }
}

fn score(sys: &LinearSystem, v: &Vec3, threshold: f64) -> Consensus {
    let mut c = Consensus { count: 0, sq_sum: 0.0 };
    for (a, b) in sys.rows.iter().zip(&sys.rhs) {
        let r = a.dot(v) - b;
        if r.abs() <= threshold {
            c.count += 1;
            c.sq_sum += r * r;
        }
    }
    c
}

fn classify(sys: &LinearSystem, v: &Vec3, threshold: f64) -> Vec<bool> {
    residuals(sys, v).iter().map(|r| r.abs() <= threshold).collect()
}

/// Draws every minimal sample up front so the result does not depend on the
/// order in which hypotheses are evaluated.
fn draw_samples(n: usize, iterations: usize, seed: u64) -> Vec<[usize; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..iterations)
        .map(|_| {
            let idx = rand::seq::index::sample(&mut rng, n, 3);
            [idx.index(0), idx.index(1), idx.index(2)]
        })
        .collect()
}

/// Unweighted exact solve through three rays; `None` when they are nearly coplanar.
fn minimal_fit(sys: &LinearSystem, sample: &[usize; 3]) -> Option<Vec3> {
    let [i, j, k] = *sample;
    let a = Mat3::from_rows(&[
        sys.rows[i].transpose(),
        sys.rows[j].transpose(),
        sys.rows[k].transpose(),
    ]);
    if a.determinant().abs() < 1e-9 {
        return None;
    }
    a.lu().solve(&Vec3::new(sys.rhs[i], sys.rhs[j], sys.rhs[k]))
}

/// Robust sensor velocity: RANSAC over minimal samples, then a power-weighted
/// refit on the consensus set.
///
/// After the refit, points are re-labeled against the refined velocity and the
/// fit is repeated once if the labels changed.
pub fn estimate_velocity_ransac(scan: &Scan, params: &RansacParams) -> Result<SensorVelocityEstimate> {
    params.validate()?;
    if scan.is_empty() {
        return Err(Error::EmptyScan);
    }
    let n = scan.len();
    let needed = params.min_inliers.max(3);
    if n < needed {
        return Err(Error::InsufficientPoints { needed, got: n });
    }
    let sys = build_system(scan)?;
    // No subset of a degenerate scan can be better conditioned than the scan.
    check_conditioning(&sys.normal_equations().0)?;
    let threshold = params.inlier_threshold;
    let early_exit = (EARLY_EXIT_INLIER_RATIO * n as f64).ceil() as usize;

    let mut best: Option<(Vec3, Consensus)> = None;
    for sample in draw_samples(n, params.max_iterations, params.seed) {
        let Some(v) = minimal_fit(&sys, &sample) else {
            continue;
        };
        let c = score(&sys, &v, threshold);
        let improves = match &best {
            Some((_, b)) => c.better_than(b),
            None => true,
        };
        if improves {
            let done = c.count >= early_exit;
            best = Some((v, c));
            if done {
                break;
            }
        }
    }
    let Some((hypothesis, consensus)) = best else {
        return Err(Error::DegenerateGeometry("every minimal sample was coplanar".into()));
    };
    if consensus.count < params.min_inliers {
        return Err(Error::NoConsensus {
            found: consensus.count,
            required: params.min_inliers,
        });
    }

    let mut mask = classify(&sys, &hypothesis, threshold);
    let mut velocity = solve_weighted_lsq(&sys.subset(&mask))?;
    let relabeled = classify(&sys, &velocity, threshold);
    let relabeled_count = relabeled.iter().filter(|&&b| b).count();
    if relabeled != mask && relabeled_count >= params.min_inliers {
        if let Ok(v) = solve_weighted_lsq(&sys.subset(&relabeled)) {
            mask = relabeled;
            velocity = v;
        }
    }

    let covariance = estimate_covariance(&sys, &velocity, &mask)?;
    let inliers = sys.subset(&mask);
    let rho = residuals(&inliers, &velocity);
    let residual_rms = (rho.iter().map(|r| r * r).sum::<f64>() / rho.len() as f64).sqrt();
    Ok(SensorVelocityEstimate {
        velocity,
        covariance,
        inlier_mask: mask,
        residual_rms,
    })
}
