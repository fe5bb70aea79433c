//! Raw sensor data to stamped occupancy grids, virtual scans and tracked objects.

mod planar;
mod replay;
mod segment;
mod tracking;

pub use planar::{generate_virtual_scan, SOURCE_VIRTUAL, project_planar_scan, project_planar_scan_with};
pub use replay::{read_point_clouds, read_planar_scans, write_planar_scans, write_point_clouds};
pub use segment::{segment_point_cloud, SOURCE_MULTIBEAM, segment_point_cloud_with};
pub use tracking::{Detection, ObjectClass, TrackedObject, Tracker, TrackerConfig};

use thiserror::Error;

use crate::geom::SpatioTemporalStamp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("replay file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Belief written for cells with direct sensor evidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evidence {
    pub obstacle: f64,
    pub free: f64,
}

impl Default for Evidence {
    fn default() -> Self {
        Self {
            obstacle: 0.9,
            free: 0.1,
        }
    }
}

/// 3D points in the vehicle frame; z is height above the ground plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub stamp: SpatioTemporalStamp,
}

/// Single-layer range scan. Missing returns are encoded as `max_range`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarScan {
    pub ranges: Vec<f64>,
    pub bearings: Vec<f64>,
    pub max_range: f64,
    pub mount_height: f64,
    pub stamp: SpatioTemporalStamp,
}

impl PlanarScan {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        if self.ranges.len() != self.bearings.len() {
            return Err(PerceptionError::InvalidParams("ranges and bearings differ in length".into()));
        }
        check_increasing(&self.bearings)?;
        if let Some(r) = self.ranges.iter().find(|r| !(**r > 0.0 && **r <= self.max_range)) {
            return Err(PerceptionError::InvalidParams(format!("range {r} outside (0, {}]", self.max_range)));
        }
        Ok(())
    }
}

pub(crate) fn check_increasing(bearings: &[f64]) -> Result<(), PerceptionError> {
    if bearings.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(PerceptionError::InvalidParams("bearings must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationParams {
    /// Coarse cell edge in fine cells (4 or 5).
    pub upsample_factor: usize,
    pub n_lowest: usize,
    pub height_delta: f64,
    /// `(z_low, z_high)` vertical extent of the vehicle.
    pub vehicle_span: (f64, f64),
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            upsample_factor: 5,
            n_lowest: 5,
            height_delta: 0.3,
            vehicle_span: (0.3, 2.5),
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        if !matches!(self.upsample_factor, 4 | 5) {
            return Err(PerceptionError::InvalidParams(format!(
                "upsample factor {} not in {{4, 5}}",
                self.upsample_factor
            )));
        }
        if self.n_lowest == 0 {
            return Err(PerceptionError::InvalidParams("n_lowest must be at least 1".into()));
        }
        if !(self.vehicle_span.0 < self.vehicle_span.1) {
            return Err(PerceptionError::InvalidParams("vehicle span must have z_low < z_high".into()));
        }
        Ok(())
    }
}
