//! Planar geometry shared by every module: angles, SE(2) poses, stamps and
//! oriented rectangles with exact overlap tests.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("angle is not finite: {0}")]
    InvalidAngle(f64),
}

/// Wraps `theta` into `(-π, π]`.
///
/// Values that land within rounding distance of `-π` are reported as `π`, so
/// `normalize_angle(3π) == π` despite `3π` not being exactly representable.
pub fn normalize_angle(theta: f64) -> Result<f64, GeomError> {
    if !theta.is_finite() {
        return Err(GeomError::InvalidAngle(theta));
    }
    Ok(wrap_angle(theta))
}

/// Infallible variant of [`normalize_angle`] for values already known to be finite.
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut r = theta.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    if r <= -PI + 1e-12 {
        r = PI;
    }
    r
}

/// Signed smallest difference `a - b`, wrapped into `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// SE(2) pose. `theta` is kept in `(-π, π]` by the constructors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Maps a point given in this pose's local frame into the parent frame.
    pub fn transform_point(&self, local: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        Point2::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
        )
    }

    /// Maps a parent-frame point into this pose's local frame.
    pub fn inverse_transform_point(&self, world: Point2) -> Point2 {
        let (s, c) = self.theta.sin_cos();
        let dx = world.x - self.x;
        let dy = world.y - self.y;
        Point2::new(c * dx + s * dy, -s * dx + c * dy)
    }

    /// `self ⊕ other`: `other` expressed in this pose's frame, lifted to the parent.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let p = self.transform_point(other.position());
        Pose2D::new(p.x, p.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// The pose of `other` relative to `self`, i.e. `self⁻¹ ⊕ other`.
    pub fn relative(&self, other: &Pose2D) -> Pose2D {
        let p = self.inverse_transform_point(other.position());
        Pose2D::new(p.x, p.y, other.theta - self.theta)
    }

    /// Moves along the constant-curvature arc of length `ds`.
    pub fn advance_arc(&self, curvature: f64, ds: f64) -> Pose2D {
        let dtheta = curvature * ds;
        let (dx, dy) = if dtheta.abs() < 1e-9 {
            // Second-order expansion avoids the 0/0 of the closed form.
            (ds * (1.0 - dtheta * dtheta / 6.0), ds * dtheta / 2.0)
        } else {
            (dtheta.sin() / curvature, (1.0 - dtheta.cos()) / curvature)
        };
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            self.x + c * dx - s * dy,
            self.y + s * dx + c * dy,
            self.theta + dtheta,
        )
    }
}

/// Time plus pose, attached to a message at the instant of measurement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpatioTemporalStamp {
    pub t: f64,
    pub pose: Pose2D,
}

impl SpatioTemporalStamp {
    pub fn new(t: f64, x: f64, y: f64, theta: f64) -> Self {
        Self {
            t,
            pose: Pose2D::new(x, y, theta),
        }
    }

    pub fn from_pose(t: f64, pose: Pose2D) -> Self {
        Self { t, pose }
    }

    /// Bitwise equality of all four components.
    pub fn same_as(&self, other: &SpatioTemporalStamp) -> bool {
        self.t.to_bits() == other.t.to_bits()
            && self.pose.x.to_bits() == other.pose.x.to_bits()
            && self.pose.y.to_bits() == other.pose.y.to_bits()
            && self.pose.theta.to_bits() == other.pose.theta.to_bits()
    }
}

/// Axis-aligned rectangle `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point2,
    pub max: Point2,
}

impl Aabb {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min: Point2::new(min_x, min_y),
            max: Point2::new(max_x, max_y),
        }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn is_finite(&self) -> bool {
        self.min.x.is_finite() && self.min.y.is_finite() && self.max.x.is_finite() && self.max.y.is_finite()
    }

    /// Half-open intersection: both rectangles are `[min, max)`. A degenerate
    /// (zero-width) query axis is treated as the closed point on that axis.
    pub fn intersects(&self, other: &Aabb) -> bool {
        fn axis(a0: f64, a1: f64, b0: f64, b1: f64) -> bool {
            if a0 == a1 {
                b0 <= a0 && a0 < b1
            } else if b0 == b1 {
                a0 <= b0 && b0 < a1
            } else {
                a0 < b1 && b0 < a1
            }
        }
        axis(self.min.x, self.max.x, other.min.x, other.max.x)
            && axis(self.min.y, self.max.y, other.min.y, other.max.y)
    }

    /// Half-open containment `[min, max)`.
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x < self.max.x && p.y >= self.min.y && p.y < self.max.y
    }

    pub fn corners(&self) -> [Point2; 4] {
        [
            self.min,
            Point2::new(self.max.x, self.min.y),
            self.max,
            Point2::new(self.min.x, self.max.y),
        ]
    }
}

/// Rectangle rigidly attached to a pose: `x ∈ [rear, front]`, `y ∈ [-half_width, half_width]`
/// in the pose frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub pose: Pose2D,
    pub rear: f64,
    pub front: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn centered(pose: Pose2D, length: f64, width: f64) -> Self {
        Self {
            pose,
            rear: -length / 2.0,
            front: length / 2.0,
            half_width: width / 2.0,
        }
    }

    pub fn corners(&self) -> [Point2; 4] {
        [
            self.pose.transform_point(Point2::new(self.front, self.half_width)),
            self.pose.transform_point(Point2::new(self.rear, self.half_width)),
            self.pose.transform_point(Point2::new(self.rear, -self.half_width)),
            self.pose.transform_point(Point2::new(self.front, -self.half_width)),
        ]
    }

    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            pose: self.pose,
            rear: self.rear - margin,
            front: self.front + margin,
            half_width: self.half_width + margin,
        }
    }

    pub fn bounding_box(&self) -> Aabb {
        let c = self.corners();
        let (mut lo, mut hi) = (c[0], c[0]);
        for p in &c[1..] {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        Aabb { min: lo, max: hi }
    }

    pub fn contains(&self, p: Point2) -> bool {
        let l = self.pose.inverse_transform_point(p);
        l.x >= self.rear && l.x <= self.front && l.y.abs() <= self.half_width
    }

    /// True when the interiors overlap (touching edges do not count).
    pub fn overlaps_aabb(&self, b: &Aabb) -> bool {
        polygons_overlap(&self.corners(), &b.corners())
    }

    pub fn overlaps_rect(&self, other: &OrientedRect) -> bool {
        polygons_overlap(&self.corners(), &other.corners())
    }

    pub fn overlaps_circle(&self, center: Point2, radius: f64) -> bool {
        let l = self.pose.inverse_transform_point(center);
        let cx = l.x.clamp(self.rear, self.front);
        let cy = l.y.clamp(-self.half_width, self.half_width);
        (l.x - cx).hypot(l.y - cy) < radius
    }

    /// Euclidean distance between the rectangle and a point (0 inside).
    pub fn distance_to_point(&self, p: Point2) -> f64 {
        let l = self.pose.inverse_transform_point(p);
        let dx = (self.rear - l.x).max(0.0).max(l.x - self.front);
        let dy = (l.y.abs() - self.half_width).max(0.0);
        dx.hypot(dy)
    }

    /// Euclidean distance between two rectangles (0 when they overlap).
    pub fn distance_to_rect(&self, other: &OrientedRect) -> f64 {
        if self.overlaps_rect(other) {
            return 0.0;
        }
        convex_distance(&self.corners(), &other.corners())
    }
}

/// Separating-axis test for convex quadrilaterals; overlap requires positive area.
pub fn polygons_overlap(a: &[Point2; 4], b: &[Point2; 4]) -> bool {
    const EPS: f64 = 1e-12;
    for poly in [a, b] {
        for i in 0..4 {
            let p = poly[i];
            let q = poly[(i + 1) % 4];
            let (nx, ny) = (-(q.y - p.y), q.x - p.x);
            let proj = |pts: &[Point2; 4]| {
                pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let d = v.x * nx + v.y * ny;
                    (lo.min(d), hi.max(d))
                })
            };
            let (a0, a1) = proj(a);
            let (b0, b1) = proj(b);
            let scale = nx.hypot(ny).max(1.0);
            if a1 <= b0 + EPS * scale || b1 <= a0 + EPS * scale {
                return false;
            }
        }
    }
    true
}

fn segment_point_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.x - (a.x + t * dx)).hypot(p.y - (a.y + t * dy))
}

fn convex_distance(a: &[Point2; 4], b: &[Point2; 4]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let (a0, a1) = (a[i], a[(i + 1) % 4]);
        let (b0, b1) = (b[i], b[(i + 1) % 4]);
        for j in 0..4 {
            best = best.min(segment_point_distance(b[j], a0, a1));
            best = best.min(segment_point_distance(a[j], b0, b1));
        }
    }
    best
}
