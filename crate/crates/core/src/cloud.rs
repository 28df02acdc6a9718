//! Raw point clouds and multi-scan stitching.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::pose::ScanPose;

/// An unstructured point cloud in meters. Points are world-frame unless a
/// scan pose says otherwise.
#[derive(Debug, Clone, Default)]
pub struct RawPointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl RawPointCloud {
    /// Validated constructor: every coordinate must be finite.
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::Input(format!(
                    "point {i} has non-finite coordinates"
                )));
            }
        }
        Ok(RawPointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Transforms every scan into the common world frame by its pose and returns
/// the union of the points, in scan order.
pub fn merge_scans(clouds: &[RawPointCloud], poses: &[ScanPose]) -> Result<RawPointCloud> {
    if clouds.len() != poses.len() {
        return Err(Error::Config(format!(
            "{} clouds but {} poses",
            clouds.len(),
            poses.len()
        )));
    }
    if clouds.is_empty() {
        return Err(Error::Input("no scans to merge".into()));
    }
    let mut points = Vec::with_capacity(clouds.iter().map(RawPointCloud::len).sum());
    for (cloud, pose) in clouds.iter().zip(poses) {
        pose.validate()?;
        points.extend(cloud.points.iter().map(|p| pose.transform_point(p)));
    }
    Ok(RawPointCloud { points })
}
