//! Structured patient-surface extraction from stitched point clouds.
//!
//! The cloud is expressed in cylindrical coordinates around an interior body
//! axis, sliced along z, and swept angularly. At each angle the points near
//! the outward ray become candidate surface radii; a scalar Kalman filter
//! chained over the angles fuses them into one radius estimate per ray,
//! down-weighting far candidates (bed returns, clutter) with an inverse rank
//! weight so the closer samples dominate.

use nalgebra::Vector3;

use crate::cloud::RawPointCloud;
use crate::error::{Error, Result};
use crate::pose::ProbePose;

/// Floor applied to the candidate variance so identical candidates cannot
/// produce a division by zero in the measurement weights or the gain.
pub const VARIANCE_FLOOR: f64 = 1e-8;

const TWO_PI: f64 = std::f64::consts::TAU;

/// A point in cylindrical coordinates around a [`BodyAxis`]:
/// radius in meters, angle in [0, 2π), axial position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cylindrical {
    pub r: f64,
    pub theta: f64,
    pub z: f64,
}

/// Interior longitudinal axis of the patient plus the transverse direction
/// that anchors θ = 0. Carrying the transverse reference makes every
/// cylindrical quantity equivariant under rigid motions of the whole scene.
#[derive(Debug, Clone, Copy)]
pub struct BodyAxis {
    pub origin: Vector3<f64>,
    z_direction: Vector3<f64>,
    x_direction: Vector3<f64>,
}

impl BodyAxis {
    /// Builds an axis from an origin, a longitudinal direction, and a
    /// transverse reference. Directions are normalized; the reference is
    /// orthogonalized against the axis. A reference (near-)parallel to the
    /// axis falls back to the world basis vector least aligned with it.
    pub fn new(
        origin: Vector3<f64>,
        z_direction: Vector3<f64>,
        x_reference: Vector3<f64>,
    ) -> Result<Self> {
        let zn = z_direction.norm();
        if !zn.is_finite() || zn < 1e-12 {
            return Err(Error::DegeneratePose(
                "body axis direction has zero length".into(),
            ));
        }
        let z = z_direction / zn;
        let mut x = x_reference - z * x_reference.dot(&z);
        if x.norm() < 1e-9 {
            // reference parallel to the axis: pick the least-aligned world axis
            let mut best = Vector3::x();
            let mut best_dot = z.x.abs();
            if z.y.abs() < best_dot {
                best = Vector3::y();
                best_dot = z.y.abs();
            }
            if z.z.abs() < best_dot {
                best = Vector3::z();
            }
            x = best - z * best.dot(&z);
        }
        x.normalize_mut();
        Ok(BodyAxis {
            origin,
            z_direction: z,
            x_direction: x,
        })
    }

    pub fn z_direction(&self) -> Vector3<f64> {
        self.z_direction
    }

    pub fn x_direction(&self) -> Vector3<f64> {
        self.x_direction
    }

    pub fn y_direction(&self) -> Vector3<f64> {
        self.z_direction.cross(&self.x_direction)
    }

    /// Cylindrical coordinates of a world point relative to this axis.
    /// Points on the axis get r = 0, θ = 0.
    pub fn to_cylindrical(&self, p: &Vector3<f64>) -> Cylindrical {
        let d = p - self.origin;
        let z = d.dot(&self.z_direction);
        let px = d.dot(&self.x_direction);
        let py = d.dot(&self.y_direction());
        let r = (px * px + py * py).sqrt();
        let mut theta = py.atan2(px);
        if theta < 0.0 {
            theta += TWO_PI;
        }
        if r == 0.0 {
            theta = 0.0;
        }
        Cylindrical { r, theta, z }
    }

    /// Inverse of [`BodyAxis::to_cylindrical`].
    pub fn from_cylindrical(&self, c: &Cylindrical) -> Vector3<f64> {
        self.origin
            + self.x_direction * (c.r * c.theta.cos())
            + self.y_direction() * (c.r * c.theta.sin())
            + self.z_direction * c.z
    }

    /// The axis moved rigidly with the rest of the scene.
    pub fn transformed(&self, pose: &ProbePose) -> BodyAxis {
        BodyAxis {
            origin: pose.transform_point(&self.origin),
            z_direction: pose.transform_vector(&self.z_direction),
            x_direction: pose.transform_vector(&self.x_direction),
        }
    }
}

/// Probe-frame conventions for deriving the body axis from a tracked probe
/// held above the sternum.
#[derive(Debug, Clone, Copy)]
pub struct AxisConvention {
    /// Probe-local direction pointing into the patient at contact.
    pub contact_normal: Vector3<f64>,
    /// Probe-local direction aligned with the patient's longitudinal axis.
    pub longitudinal: Vector3<f64>,
}

impl Default for AxisConvention {
    fn default() -> Self {
        AxisConvention {
            contact_normal: -Vector3::z(),
            longitudinal: Vector3::y(),
        }
    }
}

/// Derives the interior body axis from a probe pose: the origin is the probe
/// position pushed `depth_offset` meters along the contact normal, and the
/// axis direction is the probe's longitudinal axis mapped to the world.
pub fn axis_from_probe_pose(
    pose: &ProbePose,
    depth_offset: f64,
    convention: &AxisConvention,
) -> Result<BodyAxis> {
    pose.validate()?;
    let normal_world = pose.transform_vector(&convention.contact_normal);
    if normal_world.norm() < 1e-12 {
        return Err(Error::DegeneratePose(
            "contact normal maps to a zero-length direction".into(),
        ));
    }
    let longitudinal_world = pose.transform_vector(&convention.longitudinal);
    if longitudinal_world.norm() < 1e-12 {
        return Err(Error::DegeneratePose(
            "longitudinal axis maps to a zero-length direction".into(),
        ));
    }
    let origin = pose.translation + normal_world.normalize() * depth_offset;
    // θ = 0 points from the axis back toward the probe (the sternum side)
    BodyAxis::new(origin, longitudinal_world, -normal_world)
}

/// Whole-cloud conversion into cylindrical coordinates around `axis`.
pub fn to_cylindrical(cloud: &RawPointCloud, axis: &BodyAxis) -> Vec<Cylindrical> {
    cloud
        .points
        .iter()
        .map(|p| axis.to_cylindrical(p))
        .collect()
}

/// Extraction parameters: axial window, slicing, angular resolution, the
/// candidate gating distance, and the filter's noise model.
#[derive(Debug, Clone, Copy)]
pub struct ExtractionConfig {
    pub z_min: f64,
    pub z_max: f64,
    pub num_slices: usize,
    pub num_angles: usize,
    /// Perpendicular distance from the outward ray inside which a point is a
    /// candidate surface sample (meters).
    pub candidate_threshold: f64,
    /// Random-walk process noise q (meters²) added to the prediction
    /// variance at each angular step.
    pub process_noise: f64,
    /// Prior variance P(0|0) of the per-slice initial radius (meters²).
    pub initial_variance: f64,
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_min < self.z_max) {
            return Err(Error::Config(format!(
                "z range [{}, {}] is empty",
                self.z_min, self.z_max
            )));
        }
        if self.num_slices < 1 {
            return Err(Error::Config("num_slices must be ≥ 1".into()));
        }
        if self.num_angles < 3 {
            return Err(Error::Config("num_angles must be ≥ 3".into()));
        }
        if !(self.candidate_threshold > 0.0) {
            return Err(Error::Config("candidate_threshold must be > 0".into()));
        }
        if self.process_noise < 0.0 || self.initial_variance < 0.0 {
            return Err(Error::Config("noise variances must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Derives a config from the data: slices at the given pitch across the
    /// cloud's z extent, and a candidate threshold of half the angular arc
    /// spacing at the median radius.
    pub fn auto(points: &[Cylindrical], num_angles: usize, slice_pitch: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("cannot derive config from empty cloud".into()));
        }
        if !(slice_pitch > 0.0) {
            return Err(Error::Config("slice pitch must be > 0".into()));
        }
        let z_min = points.iter().map(|c| c.z).fold(f64::INFINITY, f64::min);
        let z_max = points.iter().map(|c| c.z).fold(f64::NEG_INFINITY, f64::max);
        if !(z_min < z_max) {
            return Err(Error::Input("cloud has no z extent".into()));
        }
        let num_slices = (((z_max - z_min) / slice_pitch).ceil() as usize).max(1);
        let mut radii: Vec<f64> = points.iter().map(|c| c.r).collect();
        let median_radius = median_in_place(&mut radii);
        let threshold = 0.5 * (TWO_PI / num_angles as f64) * median_radius;
        let cfg = ExtractionConfig {
            z_min,
            z_max,
            num_slices,
            num_angles,
            candidate_threshold: threshold.max(1e-6),
            process_noise: 4e-6,
            initial_variance: 1e-4,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Candidate surface radii gathered around one outward ray.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pub radii: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
    /// Population variance S(k) of the candidate radii (meters²).
    pub variance: f64,
}

impl CandidateSet {
    pub fn from_radii(radii: Vec<f64>) -> CandidateSet {
        if radii.is_empty() {
            return CandidateSet::default();
        }
        let r_min = radii.iter().copied().fold(f64::INFINITY, f64::min);
        let r_max = radii.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        let variance =
            radii.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / radii.len() as f64;
        CandidateSet {
            radii,
            r_min,
            r_max,
            variance,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }
}

/// Gathers the radii of slice points whose distance to the outward ray at
/// angle index `k` is within the candidate threshold.
///
/// Precondition: `slice_points` already belong to the slice's z range.
pub fn collect_candidates(
    slice_points: &[Cylindrical],
    angle_index: usize,
    config: &ExtractionConfig,
) -> CandidateSet {
    let theta_k = TWO_PI * angle_index as f64 / config.num_angles as f64;
    let mut radii = Vec::new();
    for p in slice_points {
        if ray_distance(p, theta_k) <= config.candidate_threshold {
            radii.push(p.r);
        }
    }
    CandidateSet::from_radii(radii)
}

/// Distance from a slice point to the outward ray at angle `theta_k`:
/// the perpendicular distance when the point projects onto the ray,
/// otherwise the distance to the ray origin.
fn ray_distance(p: &Cylindrical, theta_k: f64) -> f64 {
    let mut d = (p.theta - theta_k).rem_euclid(TWO_PI);
    if d > std::f64::consts::PI {
        d -= TWO_PI;
    }
    if d.cos() > 0.0 {
        p.r * d.sin().abs()
    } else {
        p.r
    }
}

/// Inverse rank weight D(r) = (1 − (r − r_min)/(r_max − r_min))²: 1 at the
/// closest candidate, 0 at the farthest, so far returns (bed plane, clutter
/// behind the patient) are suppressed. Degenerate range returns 1.
pub fn rank_weight(r_i: f64, r_min: f64, r_max: f64) -> Result<f64> {
    if r_i < r_min || r_i > r_max {
        return Err(Error::Domain(format!(
            "candidate radius {r_i} outside [{r_min}, {r_max}]"
        )));
    }
    if r_max == r_min {
        return Ok(1.0);
    }
    let u = (r_i - r_min) / (r_max - r_min);
    Ok((1.0 - u) * (1.0 - u))
}

/// Outcome of fusing one candidate set into a scalar measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedMeasurement {
    /// y(k): the convex combination of the candidate radii.
    pub value: f64,
    /// True when every Gaussian·rank score underflowed to zero and the
    /// weights fell back to uniform.
    pub underflow_fallback: bool,
}

/// Fuses candidates into the filter measurement y(k): each candidate is
/// scored by a Gaussian around the predicted radius times its inverse rank
/// weight, the scores are normalized into convex weights, and y(k) is the
/// weighted radius. If all scores underflow, the weights fall back to
/// uniform and the result is flagged.
pub fn weighted_measurement(
    candidates: &CandidateSet,
    prediction: f64,
) -> Result<WeightedMeasurement> {
    if candidates.is_empty() {
        return Err(Error::Domain(
            "weighted measurement requires a nonempty candidate set".into(),
        ));
    }
    if candidates.len() == 1 {
        // β₁ = 1 whatever the score is
        return Ok(WeightedMeasurement {
            value: candidates.radii[0],
            underflow_fallback: false,
        });
    }
    let variance = candidates.variance.max(VARIANCE_FLOOR);
    let norm = 1.0 / (TWO_PI * variance).sqrt();
    let mut scores = Vec::with_capacity(candidates.len());
    let mut total = 0.0;
    for &r in &candidates.radii {
        let d = rank_weight(r, candidates.r_min, candidates.r_max)?;
        let delta = r - prediction;
        let score = norm * (-delta * delta / (2.0 * variance)).exp() * d;
        scores.push(score);
        total += score;
    }
    let underflow = total == 0.0;
    let value = if underflow {
        candidates.radii.iter().sum::<f64>() / candidates.len() as f64
    } else {
        candidates
            .radii
            .iter()
            .zip(&scores)
            .map(|(r, s)| r * (s / total))
            .sum()
    };
    Ok(WeightedMeasurement {
        value,
        underflow_fallback: underflow,
    })
}

/// One scalar Kalman correction: d̂(k|k) = d̂(k|k−1) + W(k)(z(k) − d̂(k|k−1)).
pub fn kalman_update(prediction: f64, gain: f64, measurement: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gain) {
        return Err(Error::Domain(format!("Kalman gain {gain} outside [0, 1]")));
    }
    Ok(prediction + gain * (measurement - prediction))
}

/// Structured cylindrical surface: per-slice, per-angle radius estimates.
///
/// `radii[j][k]` is the estimated surface radius at slice center `slice_z[j]`
/// and ray angle 2πk/N.
#[derive(Debug, Clone)]
pub struct SurfaceModel {
    pub axis: BodyAxis,
    pub slice_z: Vec<f64>,
    pub radii: Vec<Vec<f64>>,
}

impl SurfaceModel {
    pub fn num_slices(&self) -> usize {
        self.slice_z.len()
    }

    pub fn num_angles(&self) -> usize {
        self.radii.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slice_z.is_empty() || self.radii.len() != self.slice_z.len() {
            return Err(Error::Dimension(
                "surface model slice count mismatch".into(),
            ));
        }
        let n = self.num_angles();
        if n < 3 {
            return Err(Error::Dimension("surface model needs ≥ 3 angles".into()));
        }
        for (j, row) in self.radii.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "slice {j} has {} radii, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                return Err(Error::Extraction(format!(
                    "slice {j} contains non-positive or non-finite radii"
                )));
            }
        }
        Ok(())
    }

    pub fn min_radius(&self) -> f64 {
        self.radii
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_radius(&self) -> f64 {
        self.radii
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Surface radius at an arbitrary (θ, z): bilinear over the radii grid,
    /// periodic in θ and clamped to the slice-center range in z.
    pub fn radius_at(&self, theta: f64, z: f64) -> f64 {
        let n = self.num_angles();
        let dtheta = TWO_PI / n as f64;
        let u = theta.rem_euclid(TWO_PI) / dtheta;
        let k0 = (u.floor() as usize) % n;
        let k1 = (k0 + 1) % n;
        let wu = u - u.floor();

        let m = self.num_slices();
        let (j0, j1, wz) = if m == 1 || z <= self.slice_z[0] {
            (0, 0, 0.0)
        } else if z >= self.slice_z[m - 1] {
            (m - 1, m - 1, 0.0)
        } else {
            let mut j = 0;
            while j + 1 < m && self.slice_z[j + 1] < z {
                j += 1;
            }
            let span = self.slice_z[j + 1] - self.slice_z[j];
            (j, j + 1, (z - self.slice_z[j]) / span)
        };

        let low = self.radii[j0][k0] * (1.0 - wu) + self.radii[j0][k1] * wu;
        let high = self.radii[j1][k0] * (1.0 - wu) + self.radii[j1][k1] * wu;
        low * (1.0 - wz) + high * wz
    }
}

/// Per-cell bookkeeping from an extraction run.
#[derive(Debug, Clone)]
pub struct ExtractionDiagnostics {
    /// Candidate counts per (slice, angle) cell.
    pub candidate_counts: Vec<Vec<usize>>,
    /// Cells where the weighted measurement fell back to uniform weights.
    pub underflow_cells: usize,
    /// Cells with no candidates, where the filter coasted on its prediction.
    pub empty_cells: usize,
}

/// Runs the full contour extraction: slices the cloud along the axis, sweeps
/// each slice angularly with the rank-weighted Kalman filter, and assembles
/// the structured surface model.
///
/// The angular sweep runs twice around the circle and keeps the second pass,
/// so the estimate at θ = 0 is informed by its neighbors instead of only the
/// per-slice median initialization.
pub fn extract_surface(
    cloud: &RawPointCloud,
    axis: &BodyAxis,
    config: &ExtractionConfig,
) -> Result<(SurfaceModel, ExtractionDiagnostics)> {
    config.validate()?;
    if cloud.is_empty() {
        return Err(Error::Input("cannot extract a surface from an empty cloud".into()));
    }

    let n = config.num_angles;
    let pitch = (config.z_max - config.z_min) / config.num_slices as f64;
    let mut slices: Vec<Vec<Cylindrical>> = vec![Vec::new(); config.num_slices];
    for c in to_cylindrical(cloud, axis) {
        if c.z < config.z_min || c.z >= config.z_max {
            continue;
        }
        let j = (((c.z - config.z_min) / pitch) as usize).min(config.num_slices - 1);
        slices[j].push(c);
    }

    let mut radii = Vec::with_capacity(config.num_slices);
    let mut counts = Vec::with_capacity(config.num_slices);
    let mut underflow_cells = 0usize;
    let mut empty_cells = 0usize;

    for (j, slice_points) in slices.iter().enumerate() {
        let candidates: Vec<CandidateSet> = (0..n)
            .map(|k| collect_candidates(slice_points, k, config))
            .collect();
        counts.push(candidates.iter().map(CandidateSet::len).collect::<Vec<_>>());

        let mut all: Vec<f64> = candidates.iter().flat_map(|c| c.radii.clone()).collect();
        if all.is_empty() {
            return Err(Error::Extraction(format!(
                "slice {j} has no candidate points at any angle"
            )));
        }

        let mut estimate = median_in_place(&mut all);
        let mut p_var = config.initial_variance;
        let mut row = vec![0.0; n];

        // two passes around the circle; only the second is recorded
        for step in 0..(2 * n) {
            let k = step % n;
            let second_pass = step >= n;
            p_var += config.process_noise;
            let set = &candidates[k];
            if set.is_empty() {
                if second_pass {
                    empty_cells += 1;
                    row[k] = estimate;
                }
                continue;
            }
            let measured = weighted_measurement(set, estimate)?;
            if measured.underflow_fallback && second_pass {
                underflow_cells += 1;
            }
            let s_eff = set.variance.max(VARIANCE_FLOOR);
            let gain = p_var / (p_var + s_eff);
            estimate = kalman_update(estimate, gain, measured.value)?;
            p_var *= 1.0 - gain;
            // the estimate is a blend of candidates and prediction; keep it
            // inside the observed candidate range for this cell
            estimate = estimate.clamp(set.r_min, set.r_max);
            if second_pass {
                row[k] = estimate;
            }
        }
        radii.push(row);
    }

    let slice_z = (0..config.num_slices)
        .map(|j| config.z_min + (j as f64 + 0.5) * pitch)
        .collect();
    let model = SurfaceModel {
        axis: *axis,
        slice_z,
        radii,
    };
    model.validate()?;
    Ok((
        model,
        ExtractionDiagnostics {
            candidate_counts: counts,
            underflow_cells,
            empty_cells,
        },
    ))
}

/// Median of a slice (sorts in place; even length averages the middle pair).
fn median_in_place(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}
