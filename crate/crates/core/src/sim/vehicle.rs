//! Kinematic bicycle model with actuator slew limits.

use crate::geom::Pose2D;

/// Commands below this speed are treated as a stop request.
pub const STOP_SPEED: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleLimits {
    pub wheelbase: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    pub max_steer: f64,
    pub max_steer_rate: f64,
}

impl Default for VehicleLimits {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            max_accel: 2.0,
            max_brake: 17.0,
            max_steer: 0.6,
            max_steer_rate: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub pose: Pose2D,
    pub v: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub v: f64,
    pub delta: f64,
}

fn slew(current: f64, target: f64, up: f64, down: f64) -> f64 {
    if target > current {
        target.min(current + up)
    } else {
        target.max(current - down)
    }
}

/// Advances the vehicle by `dt`: speed and steering move toward the command within
/// their rate limits, then the pose follows an arc of curvature `tan(δ)/L` for the
/// distance covered at the mean speed.
pub fn step_vehicle(state: &VehicleState, cmd: Command, dt: f64, limits: &VehicleLimits) -> VehicleState {
    let v_target = if cmd.v < STOP_SPEED { 0.0 } else { cmd.v };
    let v = slew(state.v, v_target, limits.max_accel * dt, limits.max_brake * dt).max(0.0);
    let steer_step = limits.max_steer_rate * dt;
    let delta_target = cmd.delta.clamp(-limits.max_steer, limits.max_steer);
    let delta = slew(state.delta, delta_target, steer_step, steer_step);
    let ds = 0.5 * (state.v + v) * dt;
    let curvature = delta.tan() / limits.wheelbase;
    VehicleState {
        pose: state.pose.advance_arc(curvature, ds),
        v,
        delta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_step_covers_v_dt() {
        let s = VehicleState {
            pose: Pose2D::identity(),
            v: 10.0,
            delta: 0.0,
        };
        let n = step_vehicle(&s, Command { v: 10.0, delta: 0.0 }, 0.1, &VehicleLimits::default());
        assert!((n.pose.x - 1.0).abs() < 1e-12 && n.pose.y == 0.0 && n.pose.theta == 0.0);
    }

    #[test]
    fn constant_steer_closes_the_circle() {
        let limits = VehicleLimits::default();
        let radius = 20.0;
        let delta = (limits.wheelbase / radius).atan();
        let v = 5.0;
        let circumference = 2.0 * std::f64::consts::PI * radius;
        let steps = 500;
        let dt = circumference / (v * steps as f64);
        let mut s = VehicleState {
            pose: Pose2D::identity(),
            v,
            delta,
        };
        for _ in 0..steps {
            s = step_vehicle(&s, Command { v, delta }, dt, &limits);
        }
        assert!(s.pose.position().dist(&Pose2D::identity().position()) <= 0.05);
    }

    #[test]
    fn braking_is_slew_limited() {
        let limits = VehicleLimits {
            max_brake: 5.0,
            ..Default::default()
        };
        let s = VehicleState {
            pose: Pose2D::identity(),
            v: 10.0,
            delta: 0.0,
        };
        let n = step_vehicle(&s, Command { v: 0.0, delta: 0.0 }, 0.1, &limits);
        assert!((n.v - 9.5).abs() < 1e-12);
    }

    #[test]
    fn steering_is_rate_and_angle_limited() {
        let limits = VehicleLimits::default();
        let s = VehicleState {
            pose: Pose2D::identity(),
            v: 0.0,
            delta: 0.0,
        };
        let n = step_vehicle(&s, Command { v: 0.0, delta: 2.0 }, 0.1, &limits);
        assert!((n.delta - 0.08).abs() < 1e-12);
        let mut m = s;
        for _ in 0..100 {
            m = step_vehicle(&m, Command { v: 0.0, delta: 2.0 }, 0.1, &limits);
        }
        assert_eq!(m.delta, limits.max_steer);
    }

    #[test]
    fn tiny_commands_stop() {
        let s = VehicleState {
            pose: Pose2D::identity(),
            v: 0.05,
            delta: 0.0,
        };
        let n = step_vehicle(&s, Command { v: 0.05, delta: 0.0 }, 0.05, &VehicleLimits::default());
        assert_eq!(n.v, 0.0);
    }
}
