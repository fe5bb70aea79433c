//! Safe-speed governance: a distance-based speed law applied to the planned trajectory
//! and, independently, to a path predicted from the current steering and speed.

use std::fmt;

use crate::geom::{Point2, Pose2D};
use crate::grid::OccupancyGrid;

/// Parameters of `v = v_max·(1 − exp(−(c/v_max)·dist − d))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeSpeedParams {
    pub v_max: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for SafeSpeedParams {
    fn default() -> Self {
        Self {
            v_max: 16.67,
            c: 1.0,
            d: -0.5,
        }
    }
}

impl SafeSpeedParams {
    /// Distance at which the law commands a stop.
    pub fn standstill_distance(&self) -> f64 {
        (-self.d * self.v_max / self.c).max(0.0)
    }
}

/// Safe speed at obstacle distance `dist`, clamped to `[0, v_max]`. `dist = ∞` gives `v_max`.
pub fn safe_speed(dist: f64, params: &SafeSpeedParams) -> f64 {
    if dist.is_infinite() {
        return params.v_max;
    }
    let raw = params.v_max * (1.0 - (-(params.c / params.v_max) * dist.max(0.0) - params.d).exp());
    raw.clamp(0.0, params.v_max)
}

/// Constant-curvature path predicted from the current steering angle.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowPath {
    pub curvature: f64,
    pub speed: f64,
    /// Vehicle-frame poses, starting at the origin.
    pub poses: Vec<Pose2D>,
    /// Arc length at each pose.
    pub s: Vec<f64>,
}

const SHADOW_SPACING: f64 = 0.2;

/// Bicycle-model arc of length `horizon` from the vehicle-frame origin, sampled every ≤ 0.2 m.
pub fn predict_shadow_path(delta: f64, v: f64, wheelbase: f64, horizon: f64) -> ShadowPath {
    let curvature = delta.tan() / wheelbase;
    let horizon = horizon.max(0.0);
    let n = (horizon / SHADOW_SPACING).ceil() as usize;
    let mut poses = Vec::with_capacity(n + 1);
    let mut s = Vec::with_capacity(n + 1);
    let origin = Pose2D::identity();
    poses.push(origin);
    s.push(0.0);
    for k in 1..=n {
        let sk = horizon * k as f64 / n as f64;
        poses.push(origin.advance_arc(curvature, sk));
        s.push(sk);
    }
    ShadowPath {
        curvature,
        speed: v,
        poses,
        s,
    }
}

/// Distance along a vehicle-frame path from the front bumper to the first pose whose
/// cross-section (±`half_width`) meets an obstacle cell; `∞` when clear.
pub fn first_obstacle_distance(poses: &[Pose2D], s: &[f64], map: &OccupancyGrid, half_width: f64, front: f64) -> f64 {
    let geo = map.geometry();
    let step = geo.resolution / 2.0;
    let n = (half_width / step).ceil() as i32;
    for (p, &sk) in poses.iter().zip(s) {
        let ahead = p.advance_arc(0.0, front);
        for k in -n..=n {
            let lateral = (k as f64 * step).clamp(-half_width, half_width);
            let q = ahead.transform_point(Point2::new(0.0, lateral));
            if geo.local_to_cell(q).is_some_and(|c| map.is_obstacle(c)) {
                return sk;
            }
        }
    }
    f64::INFINITY
}

/// Which constraint set the final speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LimitingSource {
    MapLimit,
    PlannerSafe,
    ShadowSafe,
}

impl fmt::Display for LimitingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LimitingSource::MapLimit => "map_limit",
            LimitingSource::PlannerSafe => "planner_safe",
            LimitingSource::ShadowSafe => "shadow_safe",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedCommand {
    pub v_cmd: f64,
    pub limiting_source: LimitingSource,
}

/// `min(map_limit, safe(planner_dist), safe(shadow_dist))`. A channel with a clear path
/// (`∞`) does not constrain. Ties go to the shadow channel, then the planner, then the map.
pub fn govern(map_limit: f64, planner_dist: f64, shadow_dist: f64, params: &SafeSpeedParams) -> SpeedCommand {
    let candidates = [
        (shadow_dist, LimitingSource::ShadowSafe),
        (planner_dist, LimitingSource::PlannerSafe),
    ];
    let mut best = (map_limit.clamp(0.0, params.v_max), LimitingSource::MapLimit);
    for (dist, source) in candidates.into_iter().rev() {
        if dist.is_infinite() {
            continue;
        }
        let v = safe_speed(dist, params);
        if v <= best.0 {
            best = (v, source);
        }
    }
    SpeedCommand {
        v_cmd: best.0,
        limiting_source: best.1,
    }
}

/// Minimum of two independently computed commands; the first wins ties.
pub fn combine(a: SpeedCommand, b: SpeedCommand) -> SpeedCommand {
    if b.v_cmd < a.v_cmd {
        b
    } else {
        a
    }
}

/// Control state read back from the vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlState {
    pub delta: f64,
    pub v: f64,
}

/// The shadow channel. It reads only sensor/historical obstacle maps and control states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowGovernor {
    pub params: SafeSpeedParams,
    pub wheelbase: f64,
    pub horizon: f64,
    /// Half of vehicle width plus margin on each side.
    pub half_width: f64,
    /// Front bumper ahead of the reference point.
    pub front: f64,
}

impl Default for ShadowGovernor {
    fn default() -> Self {
        Self {
            params: SafeSpeedParams::default(),
            wheelbase: 2.7,
            horizon: 40.0,
            half_width: 0.9 + 0.3,
            front: 0.9,
        }
    }
}

impl ShadowGovernor {
    /// Distance to the first obstacle on the predicted path across all given maps.
    pub fn shadow_distance(&self, controls: ControlState, maps: &[&OccupancyGrid]) -> f64 {
        let path = predict_shadow_path(controls.delta, controls.v, self.wheelbase, self.horizon);
        maps.iter()
            .map(|m| first_obstacle_distance(&path.poses, &path.s, m, self.half_width, self.front))
            .fold(f64::INFINITY, f64::min)
    }

    /// The shadow channel's own bound, as a command.
    pub fn command(&self, controls: ControlState, maps: &[&OccupancyGrid]) -> SpeedCommand {
        SpeedCommand {
            v_cmd: safe_speed(self.shadow_distance(controls, maps), &self.params),
            limiting_source: LimitingSource::ShadowSafe,
        }
    }
}
