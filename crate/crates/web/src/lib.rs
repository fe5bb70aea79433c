//! Browser bindings for the demo page: safe-speed curves, per-cell odds fusion and a small
//! interactive lattice planner.

use wasm_bindgen::prelude::*;

use drivestack::fusion::{fuse_odds, FusionMask, OddsGrid};
use drivestack::geom::{Pose2D, SpatioTemporalStamp};
use drivestack::grid::{Cell, GridGeometry, OccupancyGrid, StampedGrid};
use drivestack::planner::{build_cost_field, Budget, CostParams, Footprint, Planner, PlannerConfig};
use drivestack::safety::{safe_speed, SafeSpeedParams};

/// `samples` evenly spaced `(distance, speed)` pairs over `[0, max_dist]`, flattened.
#[wasm_bindgen]
pub fn safe_speed_curve(v_max: f64, c: f64, d: f64, max_dist: f64, samples: usize) -> Vec<f64> {
    let params = SafeSpeedParams { v_max, c, d };
    let n = samples.max(2);
    (0..n)
        .flat_map(|k| {
            let dist = max_dist * k as f64 / (n - 1) as f64;
            [dist, safe_speed(dist, &params)]
        })
        .collect()
}

#[wasm_bindgen]
pub fn standstill_distance(v_max: f64, c: f64, d: f64) -> f64 {
    SafeSpeedParams { v_max, c, d }.standstill_distance()
}

/// Posterior occupancy of one cell after each observation in turn, starting from 0.5.
/// Observations equal to 0.5 carry no evidence.
#[wasm_bindgen]
pub fn fuse_sequence(observations: &[f64]) -> Vec<f64> {
    let geo = GridGeometry::new(1, 1, 0.2, 0, 0);
    let mask = FusionMask::all(geo);
    let mut odds = OddsGrid::prior(geo, stamp(0.0));
    observations
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let t = stamp(0.1 * (k + 1) as f64);
            let obs = StampedGrid::new(t, OccupancyGrid::filled(geo, p.clamp(0.0, 1.0)), "sensor");
            odds = fuse_odds(&odds, &[obs], &mask, &t).expect("aligned single-cell observation");
            odds.probability(0)
        })
        .collect()
}

fn stamp(t: f64) -> SpatioTemporalStamp {
    SpatioTemporalStamp::new(t, 0.0, 0.0, 0.0)
}

const ROWS: usize = 100;
const COLS: usize = 60;
const RESOLUTION: f64 = 0.2;
const ANCHOR_ROW: usize = 90;
const ANCHOR_COL: usize = 30;

/// A 20 m × 12 m map with the vehicle near the bottom edge facing up.
#[wasm_bindgen]
pub struct LatticeDemo {
    planner: Planner,
    geometry: GridGeometry,
    blocked: Vec<bool>,
    last_cost: f64,
    last_partial: bool,
}

#[wasm_bindgen]
impl LatticeDemo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> LatticeDemo {
        let config = PlannerConfig {
            heading_bins: 16,
            kappa_max: 0.5,
            footprint: Footprint::compact(),
            table_inner: 8,
            table_outer: 12,
            ..Default::default()
        };
        let geometry = GridGeometry::new(ROWS, COLS, RESOLUTION, ANCHOR_ROW, ANCHOR_COL);
        LatticeDemo {
            planner: Planner::new(config, RESOLUTION),
            geometry,
            blocked: vec![false; geometry.len()],
            last_cost: 0.0,
            last_partial: false,
        }
    }

    pub fn rows(&self) -> usize {
        ROWS
    }

    pub fn cols(&self) -> usize {
        COLS
    }

    pub fn anchor_row(&self) -> usize {
        ANCHOR_ROW
    }

    pub fn anchor_col(&self) -> usize {
        ANCHOR_COL
    }

    /// Flips a cell between free and obstacle; returns the new state.
    pub fn toggle(&mut self, row: usize, col: usize) -> bool {
        if row >= ROWS || col >= COLS {
            return false;
        }
        let i = row * COLS + col;
        self.blocked[i] = !self.blocked[i];
        self.blocked[i]
    }

    pub fn is_blocked(&self, row: usize, col: usize) -> bool {
        row < ROWS && col < COLS && self.blocked[row * COLS + col]
    }

    pub fn clear(&mut self) {
        self.blocked.fill(false);
    }

    /// Plans from the vehicle to the goal cell at `heading_deg` (0 = up, positive = left).
    /// Returns the path as flattened `(row, col)` pairs in fractional cell units, or an
    /// empty array when no path exists.
    pub fn plan(&mut self, goal_row: usize, goal_col: usize, heading_deg: f64) -> Vec<f64> {
        let geo = self.geometry;
        let map = OccupancyGrid::from_cells(geo, self.blocked.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect());
        let reference: Vec<Cell> = (0..ROWS).map(|r| Cell::new(r, ANCHOR_COL)).collect();
        let Ok(cost) = build_cost_field(&map, &reference, &[], &CostParams::default()) else {
            return Vec::new();
        };
        let goal_cell = Cell::new(goal_row.min(ROWS - 1), goal_col.min(COLS - 1));
        let p = geo.cell_center(goal_cell);
        let goal = Pose2D::new(p.x, p.y, heading_deg.to_radians());
        match self.planner.plan(&cost, &Pose2D::identity(), &goal, Budget::Expansions(200_000)) {
            Ok(traj) => {
                self.last_cost = traj.cost as f64 / drivestack::planner::COST_SCALE;
                self.last_partial = traj.partial;
                traj.samples
                    .iter()
                    .flat_map(|s| {
                        [
                            ANCHOR_ROW as f64 + 0.5 - s.pose.x / RESOLUTION,
                            ANCHOR_COL as f64 + 0.5 - s.pose.y / RESOLUTION,
                        ]
                    })
                    .collect()
            }
            Err(_) => {
                self.last_cost = f64::INFINITY;
                self.last_partial = false;
                Vec::new()
            }
        }
    }

    /// Lattice cost of the last plan, or `∞` when it failed.
    pub fn last_cost(&self) -> f64 {
        self.last_cost
    }

    /// The last plan stopped short of the goal because the search budget ran out.
    pub fn last_partial(&self) -> bool {
        self.last_partial
    }
}

impl Default for LatticeDemo {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_starts_at_rest_and_is_monotone() {
        let curve = safe_speed_curve(16.67, 1.0, -0.5, 60.0, 61);
        assert_eq!(curve.len(), 122);
        assert_eq!(curve[1], 0.0);
        assert!(curve.chunks(2).zip(curve.chunks(2).skip(1)).all(|(a, b)| b[1] >= a[1]));
    }

    #[test]
    fn opposite_evidence_cancels() {
        let post = fuse_sequence(&[0.8, 0.2, 0.5]);
        assert!((post[0] - 0.8).abs() < 1e-12);
        assert_eq!(post[1], 0.5);
        assert_eq!(post[2], 0.5);
    }

    #[test]
    fn demo_plans_around_a_wall() {
        let mut demo = LatticeDemo::new();
        for col in 20..40 {
            demo.toggle(60, col);
        }
        let path = demo.plan(20, 30, 0.0);
        assert!(!path.is_empty());
        assert!(demo.last_cost().is_finite());
        let end = &path[path.len() - 2..];
        assert!((end[0] - 20.5).abs() <= 1.5 && (end[1] - 30.5).abs() <= 1.5, "{end:?}");
        // No sample crosses the wall cells.
        for p in path.chunks(2) {
            let (r, c) = (p[0].floor() as usize, p[1].floor() as usize);
            assert!(!demo.is_blocked(r, c));
        }
    }
}
