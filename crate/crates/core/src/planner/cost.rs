//! BFS-derived traversal weights.

use std::collections::VecDeque;

use super::PlanError;
use crate::geom::{OrientedRect, Point2, Pose2D};
use crate::grid::{Cell, GridGeometry, OccupancyGrid};
use crate::perception::TrackedObject;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    /// Weight per hop away from the reference.
    pub alpha: f64,
    /// Weight per unit of obstacle-proximity penalty.
    pub beta: f64,
    /// Penalty is `reach − hops` for cells closer than `reach` hops to an obstacle.
    pub proximity_reach: u32,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.5,
            proximity_reach: 5,
        }
    }
}

/// Per-cell traversal weight, `≥ 1`; obstacle cells are `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostField {
    geometry: GridGeometry,
    weights: Vec<f64>,
}

impl CostField {
    /// Every cell weighs exactly 1.
    pub fn uniform(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            weights: vec![1.0; geometry.len()],
        }
    }

    pub fn from_weights(geometry: GridGeometry, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), geometry.len());
        assert!(weights.iter().all(|w| *w >= 1.0), "weights must be at least 1");
        Self { geometry, weights }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, cell: Cell) -> f64 {
        self.weights[self.geometry.index(cell)]
    }

    pub fn is_blocked(&self, index: usize) -> bool {
        self.weights[index].is_infinite()
    }

    pub fn block(&mut self, cell: Cell) {
        let i = self.geometry.index(cell);
        self.weights[i] = f64::INFINITY;
    }

    pub fn blocked_mask(&self) -> Vec<bool> {
        self.weights.iter().map(|w| w.is_infinite()).collect()
    }
}

/// 4-connected hop distance from the sources; cells for which `passable` is false are not entered.
pub(crate) fn bfs4(geo: &GridGeometry, sources: impl IntoIterator<Item = usize>, passable: impl Fn(usize) -> bool) -> Vec<u32> {
    let mut d = vec![u32::MAX; geo.len()];
    let mut q = VecDeque::new();
    for s in sources {
        if d[s] == u32::MAX {
            d[s] = 0;
            q.push_back(s);
        }
    }
    while let Some(i) = q.pop_front() {
        let (r, c) = (i / geo.cols, i % geo.cols);
        let mut visit = |j: usize| {
            if d[j] == u32::MAX && passable(j) {
                d[j] = d[i] + 1;
                q.push_back(j);
            }
        };
        if r > 0 {
            visit(i - geo.cols);
        }
        if r + 1 < geo.rows {
            visit(i + geo.cols);
        }
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < geo.cols {
            visit(i + 1);
        }
    }
    d
}

/// Weight = `1 + α·d_ref + β·max(0, reach − d_obs)`, with both distances 4-connected hop counts.
pub fn build_cost_field(
    map: &OccupancyGrid,
    reference: &[Cell],
    lanes: &[Cell],
    params: &CostParams,
) -> Result<CostField, PlanError> {
    let geo = *map.geometry();
    let sources: Vec<usize> = reference
        .iter()
        .chain(lanes)
        .filter(|c| c.row < geo.rows && c.col < geo.cols)
        .map(|c| geo.index(*c))
        .collect();
    if sources.is_empty() {
        return Err(PlanError::NoReference);
    }
    let obstacle: Vec<bool> = map.iter_cells().map(|(c, _)| map.is_obstacle(c)).collect();
    let d_ref = bfs4(&geo, sources, |_| true);
    let obstacles = obstacle.iter().enumerate().filter(|(_, o)| **o).map(|(i, _)| i);
    let d_obs = bfs4(&geo, obstacles, |_| true);
    let reach = params.proximity_reach;
    let weights = (0..geo.len())
        .map(|i| {
            if obstacle[i] {
                return f64::INFINITY;
            }
            let penalty = reach.saturating_sub(d_obs[i]) as f64;
            1.0 + params.alpha * d_ref[i] as f64 + params.beta * penalty
        })
        .collect();
    Ok(CostField { geometry: geo, weights })
}

/// Grid cells crossed by a world-frame polyline seen from `ego`.
pub fn reference_cells(geometry: &GridGeometry, ego: &Pose2D, polyline: &[Point2]) -> Vec<Cell> {
    let mut out: Vec<Cell> = Vec::new();
    let mut push = |c: Cell| {
        if out.last() != Some(&c) {
            out.push(c);
        }
    };
    let local: Vec<Point2> = polyline.iter().map(|p| ego.inverse_transform_point(*p)).collect();
    if let [only] = local.as_slice() {
        if let Some(c) = geometry.local_to_cell(*only) {
            push(c);
        }
    }
    for w in local.windows(2) {
        for rc in clip_traverse(geometry, w[0], w[1]) {
            push(rc);
        }
    }
    out.sort_by_key(|c| geometry.index(*c));
    out.dedup();
    out
}

fn clip_traverse(geo: &GridGeometry, a: Point2, b: Point2) -> Vec<Cell> {
    let len = a.dist(&b);
    let n = ((len / (geo.resolution * 0.25)).ceil() as usize).max(1);
    (0..=n)
        .filter_map(|k| {
            let t = k as f64 / n as f64;
            geo.local_to_cell(Point2::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t))
        })
        .collect()
}

/// Marks cells swept by each tracked box over `[0, horizon]` seconds as occupied.
/// Tracks are in the world frame; the map is the vehicle frame at `ego`.
pub fn stamp_dynamic_obstacles(map: &mut OccupancyGrid, ego: &Pose2D, tracks: &[TrackedObject], horizon: f64) {
    let geo = *map.geometry();
    let res = geo.resolution;
    for t in tracks {
        let (x, y) = t.position();
        let (vx, vy) = t.velocity();
        let speed = vx.hypot(vy);
        let heading = if speed > 1e-3 { vy.atan2(vx) } else { 0.0 };
        let steps = ((speed * horizon / res).ceil() as usize).max(1);
        for k in 0..=steps {
            let dt = horizon * k as f64 / steps as f64;
            let world = Pose2D::new(x + vx * dt, y + vy * dt, heading);
            let local = ego.inverse().compose(&world);
            let rect = OrientedRect::centered(local, t.length, t.width).inflated(res / 2.0);
            let bb = rect.bounding_box();
            let (r_lo, c_lo) = geo.local_to_signed(Point2::new(bb.max.x, bb.max.y));
            let (r_hi, c_hi) = geo.local_to_signed(Point2::new(bb.min.x, bb.min.y));
            for r in r_lo..=r_hi {
                for c in c_lo..=c_hi {
                    if let Some(cell) = geo.signed_to_cell(r, c) {
                        if rect.contains(geo.cell_center(cell)) {
                            map.set(cell, 1.0);
                        }
                    }
                }
            }
        }
    }
}
