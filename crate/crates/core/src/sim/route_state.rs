//! The ego's current route as a world polyline with monotone progress tracking.

use crate::geom::{Point2, Pose2D};
use crate::route::{shortest_path, Metric, NodeId, RoadNetwork, RouteError};

#[derive(Debug, Clone)]
pub struct RouteState {
    pub net: RoadNetwork,
    pub metric: Metric,
    pub goal: NodeId,
    /// Polyline vertices; all but possibly the first are network nodes.
    pub points: Vec<Point2>,
    pub node_ids: Vec<Option<NodeId>>,
    /// Speed limit per segment.
    pub limits: Vec<f64>,
    cumulative: Vec<f64>,
    /// Segment the ego is currently on.
    pub segment: usize,
}

impl RouteState {
    /// Route from `start` (or the node nearest `origin`) to `goal`, prefixed with `origin`.
    pub fn plan(
        net: RoadNetwork,
        origin: Point2,
        start: Option<NodeId>,
        goal: NodeId,
        metric: Metric,
    ) -> Result<Self, RouteError> {
        let start = match start {
            Some(s) => s,
            None => crate::route::nearest_node(&net, origin)?,
        };
        let path = shortest_path(&net, start, goal, metric)?;
        let mut points = vec![origin];
        let mut node_ids = vec![None];
        let mut limits = vec![path.speed_limits.first().copied().unwrap_or(f64::INFINITY)];
        for (i, n) in path.nodes.iter().enumerate() {
            points.push(net.node(*n).ok_or(RouteError::Topology(*n))?);
            node_ids.push(Some(*n));
            if i > 0 {
                limits.push(path.speed_limits[i - 1]);
            }
        }
        let mut r = Self {
            net,
            metric,
            goal,
            points,
            node_ids,
            limits,
            cumulative: Vec::new(),
            segment: 0,
        };
        r.rebuild();
        Ok(r)
    }

    fn rebuild(&mut self) {
        self.cumulative = vec![0.0];
        for w in self.points.windows(2) {
            let last = *self.cumulative.last().unwrap();
            self.cumulative.push(last + w[0].dist(&w[1]));
        }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn end(&self) -> Point2 {
        *self.points.last().unwrap()
    }

    fn segments(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    fn project_on(&self, seg: usize, p: Point2) -> (f64, f64) {
        let (a, b) = (self.points[seg], self.points[seg + 1]);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        let u = if len2 > 0.0 {
            (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = Point2::new(a.x + dx * u, a.y + dy * u);
        (q.dist(&p), self.cumulative[seg] + u * len2.sqrt())
    }

    /// Arc length of `p` projected on the route, searching forward from the current segment.
    pub fn progress(&mut self, p: Point2) -> f64 {
        if self.segments() == 0 {
            return 0.0;
        }
        let hi = (self.segment + 3).min(self.segments() - 1);
        let mut best = (f64::INFINITY, 0.0, self.segment);
        for seg in self.segment..=hi {
            let (d, s) = self.project_on(seg, p);
            if d < best.0 - 1e-9 {
                best = (d, s, seg);
            }
        }
        self.segment = best.2;
        best.1
    }

    /// Position and heading at arc length `s` (clamped).
    pub fn pose_at(&self, s: f64) -> Pose2D {
        let n = self.segments();
        if n == 0 {
            return Pose2D::new(self.points[0].x, self.points[0].y, 0.0);
        }
        let s = s.clamp(0.0, self.length());
        let mut seg = (0..n).find(|&i| self.cumulative[i + 1] >= s).unwrap_or(n - 1);
        while seg + 1 < n && self.cumulative[seg + 1] - self.cumulative[seg] <= 0.0 {
            seg += 1;
        }
        let (a, b) = (self.points[seg], self.points[seg + 1]);
        let len = self.cumulative[seg + 1] - self.cumulative[seg];
        let u = if len > 0.0 { (s - self.cumulative[seg]) / len } else { 0.0 };
        Pose2D::new(a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u, (b.y - a.y).atan2(b.x - a.x))
    }

    /// Polyline covering `[s0, s1]`, including interior vertices.
    pub fn slice(&self, s0: f64, s1: f64) -> Vec<Point2> {
        let s0 = s0.clamp(0.0, self.length());
        let s1 = s1.clamp(s0, self.length());
        let mut out = vec![self.pose_at(s0).position()];
        for (i, c) in self.cumulative.iter().enumerate() {
            if *c > s0 && *c < s1 {
                out.push(self.points[i]);
            }
        }
        out.push(self.pose_at(s1).position());
        out
    }

    /// Segment index containing arc length `s`.
    pub fn segment_at(&self, s: f64) -> usize {
        let n = self.segments();
        (0..n).find(|&i| self.cumulative[i + 1] >= s).unwrap_or(n.saturating_sub(1))
    }

    pub fn limit(&self) -> f64 {
        self.limits.get(self.segment).copied().unwrap_or(f64::INFINITY)
    }

    /// Blocks the network edge under segment `seg` and re-plans from the first node ahead
    /// of the ego. The travelled prefix of the polyline is kept.
    pub fn reroute(&mut self, seg: usize) -> Result<(NodeId, NodeId), RouteError> {
        let (Some(from), Some(to)) = (self.node_ids[seg], self.node_ids.get(seg + 1).copied().flatten()) else {
            return Err(RouteError::NoRoute);
        };
        let ahead = self.segment + 1;
        let Some(start) = self.node_ids[ahead] else {
            return Err(RouteError::NoRoute);
        };
        if seg < ahead {
            return Err(RouteError::NoRoute);
        }
        let mut net = self.net.clone();
        net.block_edge(from, to);
        let path = shortest_path(&net, start, self.goal, self.metric)?;
        self.net = net;
        self.points.truncate(ahead + 1);
        self.node_ids.truncate(ahead + 1);
        self.limits.truncate(ahead);
        for (i, n) in path.nodes.iter().enumerate().skip(1) {
            self.points.push(self.net.node(*n).ok_or(RouteError::Topology(*n))?);
            self.node_ids.push(Some(*n));
            self.limits.push(path.speed_limits[i - 1]);
        }
        self.rebuild();
        Ok((from, to))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::route::load_network;

    fn net() -> RoadNetwork {
        load_network(
            "NODES\n1 0 0\n2 100 0\n3 200 0\n4 150 40\nEDGES\n1 2 100 10 0 1\n2 3 100 10 0 1\n2 4 64.04 10 0 2\n4 3 64.04 10 0 2\n",
        )
        .unwrap()
    }

    #[test]
    fn progress_and_slices() {
        let mut r = RouteState::plan(net(), Point2::new(0.0, 0.0), None, 3, Metric::Distance).unwrap();
        assert_eq!(r.node_ids, vec![None, Some(1), Some(2), Some(3)]);
        assert!((r.length() - 200.0).abs() < 1e-9);
        assert!((r.progress(Point2::new(50.0, 3.0)) - 50.0).abs() < 1e-9);
        let s = r.slice(90.0, 110.0);
        assert_eq!(s.len(), 3);
        assert_eq!(s[1], Point2::new(100.0, 0.0));
    }

    #[test]
    fn reroute_keeps_prefix_and_avoids_blocked_edge() {
        let mut r = RouteState::plan(net(), Point2::new(0.0, 0.0), None, 3, Metric::Distance).unwrap();
        r.progress(Point2::new(80.0, 0.0));
        let blocked_seg = r.segment_at(130.0);
        assert_eq!(r.reroute(blocked_seg).unwrap(), (2, 3));
        assert_eq!(r.node_ids, vec![None, Some(1), Some(2), Some(4), Some(3)]);
        assert!(r.net.is_blocked(2, 3));
    }
}
