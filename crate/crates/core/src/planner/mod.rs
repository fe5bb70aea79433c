//! Grid A* over `(cell, heading bin)` lattice states.
//!
//! Planning happens in the vehicle frame of the cost field's grid. Heading bin 0 points
//! forward (toward decreasing rows); lattice offsets are `(forward, left)` cells.

mod collision;
mod cost;
mod heuristic;
mod lattice;
mod trajectory;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::geom::{angle_diff, Pose2D};
use crate::grid::{Cell, GridGeometry, OccupancyGrid};

pub use collision::{footprint_collides_exact, CollisionChecker, Footprint, FootprintMask, FootprintMasks};
pub use cost::{build_cost_field, reference_cells, stamp_dynamic_obstacles, CostField, CostParams};
pub use heuristic::{shared_tables, unit_cost, HeuristicTable, HeuristicTables, COST_SCALE};
pub use lattice::{angle_to_bin, bin_angle, PrimSample, Primitive, PrimitiveSet};
pub use trajectory::{parse_trajectory_log, piecewise_concat, speed_profile, SpeedLimit, Trajectory, TrajectorySample};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("start state is outside the grid or in collision")]
    InvalidStart,
    #[error("goal pose is outside the grid")]
    InvalidGoal,
    #[error("goal unreachable")]
    NoPath,
    #[error("no reference cells inside the grid")]
    NoReference,
    #[error("trajectory log line {line}: {reason}")]
    Format { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    pub heading_bins: usize,
    /// Maximum curvature, 1/m.
    pub kappa_max: f64,
    /// Maximum spacing between primitive samples, m.
    pub sample_spacing: f64,
    pub footprint: Footprint,
    /// Chebyshev radius (cells) of the stored heuristic tables.
    pub table_inner: i32,
    /// Chebyshev radius (cells) of the search window the tables are computed in.
    pub table_outer: i32,
    pub cost: CostParams,
    /// Frozen look-ahead for trajectory splicing, m.
    pub window: f64,
    /// Horizon over which tracked objects are swept into the map, s.
    pub dynamic_horizon: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            heading_bins: 72,
            kappa_max: 0.2,
            sample_spacing: 0.05,
            footprint: Footprint::vehicle(),
            table_inner: 20,
            table_outer: 30,
            cost: CostParams::default(),
            window: 10.0,
            dynamic_horizon: 1.5,
        }
    }
}

/// A lattice state: a cell and a heading bin in `[0, H)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlannerState {
    pub cell: Cell,
    pub heading_bin: usize,
}

/// Share of a wall-clock budget held back for turning the search result into a trajectory.
const CONVERSION_RESERVE: Duration = Duration::from_millis(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Unlimited,
    /// Maximum number of state expansions.
    Expansions(usize),
    WallClock(Duration),
}

impl Budget {
    pub fn millis(ms: u64) -> Self {
        Budget::WallClock(Duration::from_millis(ms))
    }
}

/// Search outcome before conversion to a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// States from start to the reached state.
    pub states: Vec<PlannerState>,
    /// Primitive index (into the parent heading's set) for each step.
    pub primitives: Vec<usize>,
    pub cost: u64,
    pub partial: bool,
    pub expansions: usize,
}

/// Immutable planning resources for one configuration; cheap to clone.
#[derive(Debug, Clone)]
pub struct Planner {
    pub config: PlannerConfig,
    geometry_resolution: f64,
    prims: Arc<PrimitiveSet>,
    masks: Arc<FootprintMasks>,
    tables: Arc<HeuristicTables>,
}

impl Planner {
    pub fn new(config: PlannerConfig, resolution: f64) -> Self {
        let prims = Arc::new(PrimitiveSet::build(
            config.heading_bins,
            resolution,
            config.kappa_max,
            config.sample_spacing,
        ));
        let masks = Arc::new(FootprintMasks::build(config.footprint, config.heading_bins, resolution));
        let tables = shared_tables(&prims, config.table_inner, config.table_outer);
        Self {
            config,
            geometry_resolution: resolution,
            prims,
            masks,
            tables,
        }
    }

    pub fn primitives(&self) -> &PrimitiveSet {
        &self.prims
    }

    pub fn masks(&self) -> &FootprintMasks {
        &self.masks
    }

    pub fn tables(&self) -> &HeuristicTables {
        &self.tables
    }

    /// Lattice state nearest a vehicle-frame pose.
    pub fn state_of(&self, geometry: &GridGeometry, pose: &Pose2D) -> Option<PlannerState> {
        let cell = geometry.local_to_cell(pose.position())?;
        Some(PlannerState {
            cell,
            heading_bin: angle_to_bin(pose.theta, self.config.heading_bins),
        })
    }

    pub fn pose_of(&self, geometry: &GridGeometry, s: &PlannerState) -> Pose2D {
        let p = geometry.cell_center(s.cell);
        Pose2D::new(p.x, p.y, bin_angle(s.heading_bin, self.config.heading_bins))
    }

    /// True when the footprint at the state's cell and heading bin overlaps an obstacle cell.
    pub fn collision_check(&self, map: &OccupancyGrid, state: &PlannerState) -> bool {
        let chk = CollisionChecker::from_grid(&self.masks, map);
        chk.collides(map.geometry().index(state.cell), state.heading_bin)
    }

    pub fn problem<'a>(&'a self, cost: &'a CostField, goal: PlannerState) -> PlanningProblem<'a> {
        PlanningProblem::new(self, cost, goal)
    }

    /// Plans from `start` to `goal` (vehicle frame of the cost field's grid). A wall-clock
    /// budget covers the whole call, setup included.
    pub fn plan(&self, cost: &CostField, start: &Pose2D, goal: &Pose2D, budget: Budget) -> Result<Trajectory, PlanError> {
        let began = matches!(budget, Budget::WallClock(_)).then(Instant::now);
        assert!((cost.geometry().resolution - self.geometry_resolution).abs() < 1e-12);
        let geo = *cost.geometry();
        let start_state = self.state_of(&geo, start).ok_or(PlanError::InvalidStart)?;
        let goal_state = self.state_of(&geo, goal).ok_or(PlanError::InvalidGoal)?;
        let problem = self.problem(cost, goal_state);
        let budget = match budget {
            Budget::WallClock(d) => {
                let spent = began.map_or(Duration::ZERO, |t| t.elapsed());
                Budget::WallClock(d.saturating_sub(spent + CONVERSION_RESERVE))
            }
            b => b,
        };
        let result = problem.search(start_state, budget)?;
        Ok(problem.trajectory(&result))
    }
}

/// One search instance: a cost field, a goal, and the derived obstacle-aware bounds.
pub struct PlanningProblem<'a> {
    planner: &'a Planner,
    cost: &'a CostField,
    pub goal: PlannerState,
    checker: CollisionChecker<'a>,
    hops: Vec<u32>,
    bfs_step: f64,
}

impl<'a> PlanningProblem<'a> {
    pub fn new(planner: &'a Planner, cost: &'a CostField, goal: PlannerState) -> Self {
        let geo = *cost.geometry();
        let checker = CollisionChecker::new(&planner.masks, geo, cost.blocked_mask());
        // A collision-free state keeps every blocked cell within this Chebyshev radius out of its mask.
        let rho = planner.config.footprint.inscribed_radius();
        let keep_out = (rho / (std::f64::consts::SQRT_2 * geo.resolution)).floor() as u32;
        let blocked = (0..geo.len()).filter(|&i| cost.is_blocked(i));
        let clearance = bfs8(&geo, blocked, |_| true);
        let passable = |i: usize| clearance[i] > keep_out;
        let region = (-1i64..=1).flat_map(|dr| (-1i64..=1).map(move |dc| (dr, dc))).filter_map(|(dr, dc)| {
            geo.signed_to_cell(goal.cell.row as i64 + dr, goal.cell.col as i64 + dc)
                .map(|c| geo.index(c))
                .filter(|&i| passable(i))
        });
        let hops = bfs8(&geo, region, passable);
        let bfs_step = (geo.resolution - planner.prims.max_chord()).max(0.0);
        Self {
            planner,
            cost,
            goal,
            checker,
            hops,
            bfs_step,
        }
    }

    fn geometry(&self) -> &GridGeometry {
        self.cost.geometry()
    }

    /// State is inside the grid on a finite-weight cell with a collision-free footprint.
    pub fn is_free(&self, s: &PlannerState) -> bool {
        let i = self.geometry().index(s.cell);
        !self.cost.is_blocked(i) && !self.checker.collides(i, s.heading_bin)
    }

    /// Within one cell (Chebyshev) and one heading bin of the goal.
    pub fn is_goal(&self, s: &PlannerState) -> bool {
        let n = self.planner.config.heading_bins;
        let dr = s.cell.row.abs_diff(self.goal.cell.row);
        let dc = s.cell.col.abs_diff(self.goal.cell.col);
        let dh = (s.heading_bin + n - self.goal.heading_bin) % n;
        dr <= 1 && dc <= 1 && (dh <= 1 || dh == n - 1)
    }

    /// Admissible lower bound on the remaining cost; `None` when the goal region is unreachable.
    pub fn heuristic(&self, s: &PlannerState) -> Option<u64> {
        let geo = self.geometry();
        let hops = self.hops[geo.index(s.cell)];
        if hops == u32::MAX {
            return None;
        }
        let res = geo.resolution;
        let di = self.goal.cell.row as i32 - s.cell.row as i32;
        let dj = self.goal.cell.col as i32 - s.cell.col as i32;
        let table = self.planner.tables.lookup(di, dj, s.heading_bin, self.goal.heading_bin);
        let bfs = (COST_SCALE * hops.saturating_sub(1) as f64 * self.bfs_step).floor() as u64;
        let dist = ((di as f64).hypot(dj as f64) * res - std::f64::consts::SQRT_2 * res).max(0.0);
        let euclid = (COST_SCALE * dist).floor() as u64;
        Some(table.max(bfs).max(euclid))
    }

    /// Feasible successors with their transition cost and primitive index.
    pub fn successors(&self, s: &PlannerState) -> Vec<(PlannerState, u64, usize)> {
        let geo = *self.geometry();
        let n = self.planner.config.heading_bins;
        let (r0, c0) = (s.cell.row as i64, s.cell.col as i64);
        let mut out = Vec::new();
        'prims: for (k, p) in self.planner.prims.for_heading(s.heading_bin).iter().enumerate() {
            let mut weight_sum = 0.0;
            for smp in &p.samples {
                let Some(cell) = geo.signed_to_cell(r0 - smp.ci as i64, c0 - smp.cj as i64) else {
                    continue 'prims;
                };
                let idx = geo.index(cell);
                let w = self.cost.weights()[idx];
                if !w.is_finite() {
                    continue 'prims;
                }
                let bin = (s.heading_bin as i64 + smp.dbin as i64).rem_euclid(n as i64) as usize;
                if self.checker.collides(idx, bin) {
                    continue 'prims;
                }
                weight_sum += w;
            }
            let mean = weight_sum / p.samples.len() as f64;
            let c = (COST_SCALE * p.length * mean).ceil() as u64;
            let cell = geo
                .signed_to_cell(r0 - p.di as i64, c0 - p.dj as i64)
                .expect("end sample checked above");
            let heading_bin = (s.heading_bin as i64 + p.dh as i64).rem_euclid(n as i64) as usize;
            out.push((PlannerState { cell, heading_bin }, c, k));
        }
        out
    }

    fn key(&self, s: &PlannerState) -> u64 {
        (self.geometry().index(s.cell) * self.planner.config.heading_bins + s.heading_bin) as u64
    }

    fn unkey(&self, k: u64) -> PlannerState {
        let n = self.planner.config.heading_bins as u64;
        PlannerState {
            cell: self.geometry().cell_of((k / n) as usize),
            heading_bin: (k % n) as usize,
        }
    }

    /// A* with reopening. Ties break on lower heading bin, then lower cell index.
    pub fn search(&self, start: PlannerState, budget: Budget) -> Result<SearchResult, PlanError> {
        if !self.is_free(&start) {
            return Err(PlanError::InvalidStart);
        }
        let Some(h0) = self.heuristic(&start) else {
            return Err(PlanError::NoPath);
        };
        let began = matches!(budget, Budget::WallClock(_)).then(Instant::now);
        let cols = self.geometry().cols;
        let start_key = self.key(&start);
        let mut nodes: FxHashMap<u64, (u64, u64, u32)> = FxHashMap::default();
        nodes.insert(start_key, (0, u64::MAX, u32::MAX));
        let mut heap = BinaryHeap::new();
        let order = |s: &PlannerState| (s.heading_bin, s.cell.row * cols + s.cell.col);
        let (hb, ci) = order(&start);
        heap.push(Reverse((h0, hb, ci, 0u64)));
        let mut best_partial = (h0, start_key);
        let mut expansions = 0usize;
        while let Some(Reverse((_, hb, ci, g))) = heap.pop() {
            let state = PlannerState {
                cell: self.geometry().cell_of(ci),
                heading_bin: hb,
            };
            let key = self.key(&state);
            if nodes[&key].0 < g {
                continue;
            }
            if self.is_goal(&state) {
                return Ok(self.unwind(key, &nodes, false, expansions));
            }
            let h = self.heuristic(&state).unwrap_or(u64::MAX);
            if h < best_partial.0 {
                best_partial = (h, key);
            }
            let out_of_budget = match budget {
                Budget::Unlimited => false,
                Budget::Expansions(n) => expansions >= n,
                Budget::WallClock(d) => expansions % 16 == 0 && began.is_some_and(|t| t.elapsed() >= d),
            };
            if out_of_budget {
                return Ok(self.unwind(best_partial.1, &nodes, true, expansions));
            }
            expansions += 1;
            for (next, c, k) in self.successors(&state) {
                let ng = g + c;
                let nk = self.key(&next);
                if nodes.get(&nk).is_some_and(|n| n.0 <= ng) {
                    continue;
                }
                let Some(nh) = self.heuristic(&next) else {
                    continue;
                };
                nodes.insert(nk, (ng, key, k as u32));
                let (nhb, nci) = order(&next);
                heap.push(Reverse((ng + nh, nhb, nci, ng)));
            }
        }
        Err(PlanError::NoPath)
    }

    fn unwind(&self, end: u64, nodes: &FxHashMap<u64, (u64, u64, u32)>, partial: bool, expansions: usize) -> SearchResult {
        let mut states = Vec::new();
        let mut primitives = Vec::new();
        let mut k = end;
        loop {
            let (_, parent, prim) = nodes[&k];
            states.push(self.unkey(k));
            if parent == u64::MAX {
                break;
            }
            primitives.push(prim as usize);
            k = parent;
        }
        states.reverse();
        primitives.reverse();
        SearchResult {
            states,
            primitives,
            cost: nodes[&end].0,
            partial,
            expansions,
        }
    }

    /// Dense vehicle-frame trajectory through the primitive samples of a search result.
    pub fn trajectory(&self, result: &SearchResult) -> Trajectory {
        let geo = self.geometry();
        let n = self.planner.config.heading_bins;
        let mut poses = vec![self.planner.pose_of(geo, &result.states[0])];
        for (s, &k) in result.states.iter().zip(&result.primitives) {
            let base = geo.cell_center(s.cell);
            let theta0 = bin_angle(s.heading_bin, n);
            for smp in &self.planner.prims.for_heading(s.heading_bin)[k].samples {
                poses.push(Pose2D::new(base.x + smp.dx, base.y + smp.dy, theta0 + smp.dtheta));
            }
        }
        let mut t = Trajectory::from_poses(&poses);
        t.partial = result.partial;
        t.cost = result.cost;
        t
    }

    /// Exact (polygon) collision test of every trajectory sample against blocked cells.
    pub fn trajectory_collides_exact(&self, traj: &Trajectory) -> bool {
        let geo = *self.geometry();
        traj.samples.iter().any(|s| {
            footprint_collides_exact(&self.planner.config.footprint, s.pose, &geo, |c| {
                self.cost.is_blocked(geo.index(c))
            })
        })
    }

    /// Largest heading change across a junction between consecutive primitives, radians.
    pub fn max_heading_jump(traj: &Trajectory) -> f64 {
        traj.samples
            .windows(2)
            .map(|w| angle_diff(w[1].pose.theta, w[0].pose.theta).abs())
            .fold(0.0, f64::max)
    }
}

/// 8-connected hop distance from the sources over passable cells.
fn bfs8(geo: &GridGeometry, sources: impl IntoIterator<Item = usize>, passable: impl Fn(usize) -> bool) -> Vec<u32> {
    let mut d = vec![u32::MAX; geo.len()];
    let mut q = VecDeque::new();
    for s in sources {
        if d[s] == u32::MAX {
            d[s] = 0;
            q.push_back(s);
        }
    }
    let (rows, cols) = (geo.rows as i64, geo.cols as i64);
    while let Some(i) = q.pop_front() {
        let (r, c) = ((i / geo.cols) as i64, (i % geo.cols) as i64);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (nr, nc) = (r + dr, c + dc);
                if (dr, dc) == (0, 0) || nr < 0 || nc < 0 || nr >= rows || nc >= cols {
                    continue;
                }
                let j = (nr * cols + nc) as usize;
                if d[j] == u32::MAX && passable(j) {
                    d[j] = d[i] + 1;
                    q.push_back(j);
                }
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;

    #[test]
    fn straight_ahead_on_empty_map() {
        let geo = GridGeometry::default();
        let planner = Planner::new(PlannerConfig::default(), geo.resolution);
        let cost = CostField::uniform(geo);
        let traj = planner
            .plan(&cost, &Pose2D::identity(), &Pose2D::new(20.0, 0.0, 0.0), Budget::Unlimited)
            .unwrap();
        assert!(!traj.partial);
        assert!((traj.length() - 20.0).abs() <= 0.2 + 1e-9, "length {}", traj.length());
        assert!(traj.samples.iter().all(|s| s.pose.y.abs() < 1e-9 && s.pose.theta == 0.0));
    }

    #[test]
    fn enclosed_goal_has_no_path() {
        let geo = GridGeometry::new(60, 60, 0.2, 50, 30);
        let mut map = OccupancyGrid::filled(geo, 0.0);
        let goal = Pose2D::new(6.0, 0.0, 0.0);
        let gc = geo.local_to_cell(goal.position()).unwrap();
        for r in gc.row - 3..=gc.row + 3 {
            for c in gc.col - 3..=gc.col + 3 {
                if r.abs_diff(gc.row) == 3 || c.abs_diff(gc.col) == 3 {
                    map.set(Cell::new(r, c), 1.0);
                }
            }
        }
        let cost = build_cost_field(&map, &[geo.anchor()], &[], &CostParams::default()).unwrap();
        let cfg = PlannerConfig {
            heading_bins: 8,
            footprint: Footprint::compact(),
            table_inner: 6,
            table_outer: 10,
            ..Default::default()
        };
        let planner = Planner::new(cfg, 0.2);
        assert_eq!(planner.plan(&cost, &Pose2D::identity(), &goal, Budget::Unlimited), Err(PlanError::NoPath));
    }

    #[test]
    fn start_in_collision_is_rejected() {
        let geo = GridGeometry::default();
        let mut map = OccupancyGrid::filled(geo, 0.0);
        map.set(geo.local_to_cell(Point2::new(-1.0, 0.0)).unwrap(), 1.0);
        let cost = build_cost_field(&map, &[geo.anchor()], &[], &CostParams::default()).unwrap();
        let planner = Planner::new(PlannerConfig::default(), 0.2);
        let err = planner.plan(&cost, &Pose2D::identity(), &Pose2D::new(20.0, 0.0, 0.0), Budget::Unlimited);
        assert_eq!(err, Err(PlanError::InvalidStart));
        assert!(planner.collision_check(&map, &PlannerState { cell: geo.anchor(), heading_bin: 0 }));
    }

    #[test]
    fn expansion_budget_returns_partial() {
        let geo = GridGeometry::default();
        let planner = Planner::new(PlannerConfig::default(), geo.resolution);
        let cost = CostField::uniform(geo);
        let traj = planner
            .plan(&cost, &Pose2D::identity(), &Pose2D::new(40.0, 5.0, 0.0), Budget::Expansions(50))
            .unwrap();
        assert!(traj.partial);
        assert!(traj.len() > 1);
    }

    #[test]
    fn masks_cover_the_keep_out_square() {
        for fp in [Footprint::vehicle(), Footprint::compact()] {
            let masks = FootprintMasks::build(fp, 72, 0.2);
            let k = (fp.inscribed_radius() / (std::f64::consts::SQRT_2 * 0.2)).floor() as i32;
            for bin in 0..72 {
                let m = masks.mask(bin);
                for i in -k..=k {
                    for j in -k..=k {
                        assert!(m.offsets.contains(&(i, j)), "bin {bin} offset ({i}, {j})");
                    }
                }
            }
        }
    }

    #[test]
    fn bfs8_counts_king_moves() {
        let geo = GridGeometry::new(5, 5, 0.2, 2, 2);
        let d = bfs8(&geo, [0], |_| true);
        assert_eq!(d[24], 4);
        assert_eq!(d[4], 4);
        assert_eq!(d[6], 1);
    }
}
