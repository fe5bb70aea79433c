//! Ground-truth geometry: static obstacles and scripted agents.

use crate::geom::{OrientedRect, Point2, Pose2D};
use crate::perception::ObjectClass;

use super::scenario::{AgentSpec, ObstacleSpec, ScenarioSpec, Shape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Body {
    Rect(OrientedRect),
    Circle { center: Point2, radius: f64 },
}

impl Body {
    /// Range along a unit-direction ray to the first boundary crossing, if any.
    pub fn ray_hit(&self, origin: Point2, dir: (f64, f64)) -> Option<f64> {
        match self {
            Body::Circle { center, radius } => {
                let (ox, oy) = (origin.x - center.x, origin.y - center.y);
                let b = ox * dir.0 + oy * dir.1;
                let c = ox * ox + oy * oy - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = -b - sq;
                let t1 = -b + sq;
                if t0 >= 0.0 {
                    Some(t0)
                } else if t1 >= 0.0 {
                    Some(0.0)
                } else {
                    None
                }
            }
            Body::Rect(r) => {
                let o = r.pose.inverse_transform_point(origin);
                let (c, s) = (r.pose.theta.cos(), r.pose.theta.sin());
                let d = (c * dir.0 + s * dir.1, -s * dir.0 + c * dir.1);
                let mut t_lo = f64::NEG_INFINITY;
                let mut t_hi = f64::INFINITY;
                for (o, d, lo, hi) in [(o.x, d.0, r.rear, r.front), (o.y, d.1, -r.half_width, r.half_width)] {
                    if d.abs() < 1e-15 {
                        if o < lo || o > hi {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((lo - o) / d, (hi - o) / d);
                    t_lo = t_lo.max(a.min(b));
                    t_hi = t_hi.min(a.max(b));
                }
                if t_lo > t_hi || t_hi < 0.0 {
                    None
                } else {
                    Some(t_lo.max(0.0))
                }
            }
        }
    }

    pub fn overlaps(&self, rect: &OrientedRect) -> bool {
        match self {
            Body::Rect(r) => rect.overlaps_rect(r),
            Body::Circle { center, radius } => rect.overlaps_circle(*center, *radius),
        }
    }

    pub fn distance_to(&self, rect: &OrientedRect) -> f64 {
        match self {
            Body::Rect(r) => rect.distance_to_rect(r),
            Body::Circle { center, radius } => (rect.distance_to_point(*center) - radius).max(0.0),
        }
    }
}

/// A body present at some instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solid {
    pub body: Body,
    pub height: f64,
    /// Index into the agent list for moving bodies.
    pub agent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub class: ObjectClass,
    pub length: f64,
    pub width: f64,
    pub speed: f64,
    pub start_time: f64,
    waypoints: Vec<Point2>,
    cumulative: Vec<f64>,
}

impl Agent {
    pub fn new(spec: &AgentSpec) -> Self {
        let waypoints: Vec<Point2> = spec.waypoints.iter().map(|w| Point2::new(w[0], w[1])).collect();
        let mut cumulative = vec![0.0];
        for w in waypoints.windows(2) {
            cumulative.push(cumulative.last().unwrap() + w[0].dist(&w[1]));
        }
        Self {
            class: ObjectClass::parse(&spec.class).unwrap_or(ObjectClass::Unknown),
            length: spec.length,
            width: spec.width,
            speed: spec.speed,
            start_time: spec.start_time,
            waypoints,
            cumulative,
        }
    }

    /// Pose at time `t`: moving along the waypoints at constant speed, then parked at the last one.
    pub fn pose_at(&self, t: f64) -> Pose2D {
        let s = (self.speed * (t - self.start_time)).max(0.0);
        let n = self.waypoints.len();
        if n == 1 {
            return Pose2D::new(self.waypoints[0].x, self.waypoints[0].y, 0.0);
        }
        let seg = (1..n).find(|&i| self.cumulative[i] >= s).unwrap_or(n - 1);
        let (a, b) = (self.waypoints[seg - 1], self.waypoints[seg]);
        let len = self.cumulative[seg] - self.cumulative[seg - 1];
        let u = if len > 0.0 { ((s - self.cumulative[seg - 1]) / len).clamp(0.0, 1.0) } else { 1.0 };
        Pose2D::new(a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u, (b.y - a.y).atan2(b.x - a.x))
    }

    pub fn is_moving(&self, t: f64) -> bool {
        self.speed > 0.0 && t >= self.start_time && self.speed * (t - self.start_time) < *self.cumulative.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub obstacles: Vec<ObstacleSpec>,
    pub agents: Vec<Agent>,
}

impl World {
    pub fn new(spec: &ScenarioSpec) -> Self {
        Self {
            obstacles: spec.obstacles.clone(),
            agents: spec.agents.iter().map(Agent::new).collect(),
        }
    }

    /// Every body present at `t`, statics first, in scenario order.
    pub fn solids_at(&self, t: f64) -> Vec<Solid> {
        let statics = self.obstacles.iter().filter(|o| t >= o.appear_at).map(|o| Solid {
            body: obstacle_body(o),
            height: o.height,
            agent: None,
        });
        let agents = self.agents.iter().enumerate().map(|(i, a)| Solid {
            body: Body::Rect(OrientedRect::centered(a.pose_at(t), a.length, a.width)),
            height: 1.5,
            agent: Some(i),
        });
        statics.chain(agents).collect()
    }
}

pub fn obstacle_body(o: &ObstacleSpec) -> Body {
    match o.shape {
        Shape::Rect => Body::Rect(OrientedRect::centered(Pose2D::new(o.x, o.y, o.theta), o.length, o.width)),
        Shape::Circle => Body::Circle {
            center: Point2::new(o.x, o.y),
            radius: o.radius,
        },
    }
}

/// Nearest hit among `solids` whose height reaches `min_height`: `(range, solid index)`.
pub fn cast_ray(solids: &[Solid], origin: Point2, bearing: f64, max_range: f64, min_height: f64) -> Option<(f64, usize)> {
    let dir = (bearing.cos(), bearing.sin());
    let mut best: Option<(f64, usize)> = None;
    for (i, s) in solids.iter().enumerate() {
        if s.height < min_height {
            continue;
        }
        if let Some(r) = s.body.ray_hit(origin, dir) {
            if r < max_range && best.is_none_or(|b| r < b.0) {
                best = Some((r, i));
            }
        }
    }
    best
}

/// Whether the exact footprint rectangle touches any solid.
pub fn collides(rect: &OrientedRect, solids: &[Solid]) -> bool {
    solids.iter().any(|s| s.body.overlaps(rect))
}

/// Smallest gap between the footprint rectangle and any solid; `∞` in an empty world.
pub fn clearance(rect: &OrientedRect, solids: &[Solid]) -> f64 {
    solids.iter().map(|s| s.body.distance_to(rect)).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_hits_rect_face_and_circle() {
        let rect = Body::Rect(OrientedRect::centered(Pose2D::new(11.0, 0.0, 0.0), 2.0, 2.0));
        let r = rect.ray_hit(Point2::new(0.0, 0.0), (1.0, 0.0)).unwrap();
        assert!((r - 10.0).abs() < 1e-12);
        assert!(rect.ray_hit(Point2::new(0.0, 0.0), (-1.0, 0.0)).is_none());
        assert!(rect.ray_hit(Point2::new(0.0, 5.0), (1.0, 0.0)).is_none());
        let circle = Body::Circle {
            center: Point2::new(0.0, 7.0),
            radius: 2.0,
        };
        let r = circle.ray_hit(Point2::new(0.0, 0.0), (0.0, 1.0)).unwrap();
        assert!((r - 5.0).abs() < 1e-12);
        assert_eq!(circle.ray_hit(Point2::new(0.0, 7.0), (1.0, 0.0)), Some(0.0));
    }

    #[test]
    fn rotated_rect_hit() {
        let rect = Body::Rect(OrientedRect::centered(
            Pose2D::new(10.0, 0.0, std::f64::consts::FRAC_PI_4),
            2.0_f64.sqrt(),
            2.0_f64.sqrt(),
        ));
        let r = rect.ray_hit(Point2::new(0.0, 0.0), (1.0, 0.0)).unwrap();
        assert!((r - 9.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn agent_follows_waypoints_then_parks() {
        let a = Agent::new(&AgentSpec {
            class: "car".into(),
            length: 4.5,
            width: 1.8,
            speed: 2.0,
            waypoints: vec![[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]],
            start_time: 1.0,
        });
        assert_eq!(a.pose_at(0.0).position(), Point2::new(0.0, 0.0));
        let p = a.pose_at(3.5);
        assert!((p.x - 5.0).abs() < 1e-12 && p.y == 0.0);
        let p = a.pose_at(8.5);
        assert!((p.x - 10.0).abs() < 1e-12 && (p.y - 5.0).abs() < 1e-12);
        assert!((p.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(a.is_moving(8.5) && !a.is_moving(20.0));
        assert!((a.pose_at(100.0).y - 10.0).abs() < 1e-12);
    }
}
