//! Synthetic sensors ray-cast against ground truth.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geom::{Point2, Pose2D, SpatioTemporalStamp};
use crate::perception::{Detection, PlanarScan, PointCloud};

use super::scenario::{SensorKind, SensorSpec};
use super::world::{cast_ray, Solid, World};

/// Elevation angles of the multibeam's lasers, radians.
pub fn beam_elevations() -> Vec<f64> {
    (0..24).map(|k| (-24.0 + k as f64 * 26.0 / 23.0).to_radians()).collect()
}

/// Height of a phantom return.
const PHANTOM_HEIGHT: f64 = 0.8;
const MIN_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorFrame {
    /// `(sensor index, cloud)` in the vehicle frame at the capture stamp.
    pub clouds: Vec<(usize, PointCloud)>,
    /// `(sensor index, scan)`; each scan is stamped with the sensor's own world pose.
    pub scans: Vec<(usize, PlanarScan)>,
    /// Labelled agent boxes in the world frame.
    pub detections: Vec<Detection>,
}

pub fn mount_pose(s: &SensorSpec) -> Pose2D {
    Pose2D::new(s.mount_x, s.mount_y, s.heading)
}

/// Horizontal bearings of a sensor, strictly increasing.
pub fn bearings(s: &SensorSpec) -> Vec<f64> {
    if s.half_fov >= PI {
        let n = (2.0 * PI / s.angular_step).round().max(1.0) as usize;
        (0..n).map(|k| -PI + k as f64 * 2.0 * PI / n as f64).collect()
    } else {
        let n = (2.0 * s.half_fov / s.angular_step).round().max(1.0) as usize;
        (0..=n).map(|k| -s.half_fov + k as f64 * 2.0 * s.half_fov / n as f64).collect()
    }
}

/// Captures every sensor for which `due(index)` holds, drawing noise from `rng` in sensor
/// and bearing order. Detections cover agents visible to any sensor.
pub fn simulate_sensors(
    world: &World,
    t: f64,
    ego: &Pose2D,
    sensors: &[SensorSpec],
    due: impl Fn(usize) -> bool,
    rng: &mut ChaCha8Rng,
) -> SensorFrame {
    let solids = world.solids_at(t);
    let mut frame = SensorFrame::default();
    for (i, s) in sensors.iter().enumerate() {
        if !due(i) {
            continue;
        }
        match s.kind {
            SensorKind::Multibeam => frame.clouds.push((i, multibeam(&solids, t, ego, s, rng))),
            SensorKind::Planar => frame.scans.push((i, planar(&solids, t, ego, s, rng))),
        }
    }
    frame.detections = detect(world, &solids, t, ego, sensors);
    frame
}

fn multibeam(solids: &[Solid], t: f64, ego: &Pose2D, s: &SensorSpec, rng: &mut ChaCha8Rng) -> PointCloud {
    let mount = mount_pose(s);
    let world_pose = ego.compose(&mount);
    let h = s.mount_height;
    let elevations = beam_elevations();
    let mut points = Vec::new();
    for phi in bearings(s) {
        let drop = rng.gen::<f64>() < s.false_negative;
        let phantom = rng.gen::<f64>() < s.false_positive;
        let u = rng.gen::<f64>();
        let hit = cast_ray(solids, world_pose.position(), world_pose.theta + phi, s.max_range, 0.0);
        let mut push = |r: f64, z: f64| {
            let p = mount.transform_point(Point2::new(r * phi.cos(), r * phi.sin()));
            points.push([p.x, p.y, z]);
        };
        for &e in &elevations {
            let ground = if e < 0.0 { h / (-e).tan() } else { f64::INFINITY };
            if let Some((r, k)) = hit {
                let z = h + r * e.tan();
                if r < ground && (0.0..=solids[k].height).contains(&z) {
                    if !drop {
                        push(r, z);
                    }
                    continue;
                }
            }
            if ground < s.max_range {
                push(ground, 0.0);
            }
        }
        if phantom {
            push(MIN_RANGE.max(2.0) + u * (s.max_range - 2.0).max(0.0), PHANTOM_HEIGHT);
        }
    }
    PointCloud {
        points,
        stamp: SpatioTemporalStamp::from_pose(t, *ego),
    }
}

fn planar(solids: &[Solid], t: f64, ego: &Pose2D, s: &SensorSpec, rng: &mut ChaCha8Rng) -> PlanarScan {
    let world_pose = ego.compose(&mount_pose(s));
    let bearings = bearings(s);
    let mut ranges = Vec::with_capacity(bearings.len());
    for &phi in &bearings {
        let drop = rng.gen::<f64>() < s.false_negative;
        let phantom = rng.gen::<f64>() < s.false_positive;
        let u = rng.gen::<f64>();
        let hit = cast_ray(solids, world_pose.position(), world_pose.theta + phi, s.max_range, s.mount_height);
        let mut r = match hit {
            Some((r, _)) if !drop => r.max(MIN_RANGE),
            _ => s.max_range,
        };
        if phantom {
            r = (u * r).max(MIN_RANGE);
        }
        ranges.push(r);
    }
    PlanarScan {
        ranges,
        bearings,
        max_range: s.max_range,
        mount_height: s.mount_height,
        stamp: SpatioTemporalStamp::from_pose(t, world_pose),
    }
}

fn detect(world: &World, solids: &[Solid], t: f64, ego: &Pose2D, sensors: &[SensorSpec]) -> Vec<Detection> {
    let statics: Vec<Solid> = solids.iter().filter(|s| s.agent.is_none()).copied().collect();
    let mut out = Vec::new();
    for a in &world.agents {
        let pose = a.pose_at(t);
        let visible = sensors.iter().any(|s| {
            let sp = ego.compose(&mount_pose(s));
            let local = sp.inverse_transform_point(pose.position());
            let range = local.x.hypot(local.y);
            if range >= s.max_range || local.y.atan2(local.x).abs() > s.half_fov {
                return false;
            }
            let bearing = sp.theta + local.y.atan2(local.x);
            cast_ray(&statics, sp.position(), bearing, range, 0.0).is_none()
        });
        if visible {
            out.push(Detection {
                x: pose.x,
                y: pose.y,
                length: a.length,
                width: a.width,
                class: Some(a.class),
            });
        }
    }
    out
}
