//! Vehicle-frame occupancy grids and their stamped, aligned forms.
//!
//! Frame convention: x forward, y left, origin at the front-axle center.
//! Row 0 is the front edge and column 0 the left edge, so moving forward
//! decreases the row index and moving left decreases the column index. The
//! default grid spans 60 m ahead, 20 m behind and ±15 m laterally.

use thiserror::Error;

use crate::geom::{Point2, Pose2D, SpatioTemporalStamp};

pub const DEFAULT_ROWS: usize = 400;
pub const DEFAULT_COLS: usize = 150;
pub const DEFAULT_RESOLUTION: f64 = 0.2;
pub const DEFAULT_ANCHOR_ROW: usize = 300;
pub const DEFAULT_ANCHOR_COL: usize = 75;
pub const DEFAULT_STALENESS_BUDGET: f64 = 0.5;

pub const UNKNOWN: f64 = 0.5;
/// Cells at or above this belief are obstacles, at or below `FREE_THRESHOLD` free.
pub const OBSTACLE_THRESHOLD: f64 = 0.75;
pub const FREE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("observation is {age:.3} s from the target stamp (budget {budget:.3} s)")]
    StaleObservation { age: f64, budget: f64 },
    #[error("grid dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch(GridGeometry, GridGeometry),
    #[error("malformed graymap: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    pub resolution: f64,
    pub anchor_row: usize,
    pub anchor_col: usize,
}

impl Default for GridGeometry {
    fn default() -> Self {
        Self {
            rows: DEFAULT_ROWS,
            cols: DEFAULT_COLS,
            resolution: DEFAULT_RESOLUTION,
            anchor_row: DEFAULT_ANCHOR_ROW,
            anchor_col: DEFAULT_ANCHOR_COL,
        }
    }
}

impl GridGeometry {
    /// A custom geometry; the anchor must lie inside the grid.
    pub fn new(rows: usize, cols: usize, resolution: f64, anchor_row: usize, anchor_col: usize) -> Self {
        assert!(rows > 0 && cols > 0 && resolution > 0.0);
        assert!(anchor_row < rows && anchor_col < cols, "anchor outside grid");
        Self {
            rows,
            cols,
            resolution,
            anchor_row,
            anchor_col,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    pub fn cell_of(&self, index: usize) -> Cell {
        Cell::new(index / self.cols, index % self.cols)
    }

    pub fn anchor(&self) -> Cell {
        Cell::new(self.anchor_row, self.anchor_col)
    }

    /// Vehicle-frame coordinates of the cell center.
    pub fn cell_center(&self, cell: Cell) -> Point2 {
        Point2::new(
            (self.anchor_row as f64 - cell.row as f64) * self.resolution,
            (self.anchor_col as f64 - cell.col as f64) * self.resolution,
        )
    }

    /// Signed (row, col) of the cell containing a vehicle-frame point, possibly outside.
    pub fn local_to_signed(&self, p: Point2) -> (i64, i64) {
        let fwd = (p.x / self.resolution + 0.5).floor() as i64;
        let left = (p.y / self.resolution + 0.5).floor() as i64;
        (self.anchor_row as i64 - fwd, self.anchor_col as i64 - left)
    }

    pub fn signed_to_cell(&self, row: i64, col: i64) -> Option<Cell> {
        if row >= 0 && col >= 0 && (row as usize) < self.rows && (col as usize) < self.cols {
            Some(Cell::new(row as usize, col as usize))
        } else {
            None
        }
    }

    pub fn local_to_cell(&self, p: Point2) -> Option<Cell> {
        if !p.x.is_finite() || !p.y.is_finite() {
            return None;
        }
        let (r, c) = self.local_to_signed(p);
        self.signed_to_cell(r, c)
    }

    /// Cells visited by the segment `start → end` (vehicle frame), in order,
    /// with the entry and exit distance along the segment. Stops at the grid edge.
    pub fn traverse(&self, start: Point2, end: Point2) -> Vec<RayCell> {
        let res = self.resolution;
        // Continuous cell coordinates: cell (r, c) covers u ∈ [r, r+1), v ∈ [c, c+1).
        let to_uv = |p: Point2| {
            (
                self.anchor_row as f64 + 0.5 - p.x / res,
                self.anchor_col as f64 + 0.5 - p.y / res,
            )
        };
        let (u0, v0) = to_uv(start);
        let (u1, v1) = to_uv(end);
        let length = start.dist(&end);
        let mut out = Vec::new();
        let (mut r, mut c) = (u0.floor() as i64, v0.floor() as i64);
        if self.signed_to_cell(r, c).is_none() {
            return out;
        }
        if length == 0.0 {
            out.push(RayCell {
                cell: Cell::new(r as usize, c as usize),
                t_enter: 0.0,
                t_exit: 0.0,
            });
            return out;
        }
        let (du, dv) = ((u1 - u0) / length, (v1 - v0) / length);
        let step_r: i64 = if du > 0.0 { 1 } else { -1 };
        let step_c: i64 = if dv > 0.0 { 1 } else { -1 };
        let next_boundary = |pos: f64, idx: i64, d: f64| -> f64 {
            if d > 0.0 {
                ((idx + 1) as f64 - pos) / d
            } else if d < 0.0 {
                (idx as f64 - pos) / d
            } else {
                f64::INFINITY
            }
        };
        let mut t_max_r = next_boundary(u0, r, du);
        let mut t_max_c = next_boundary(v0, c, dv);
        let t_delta_r = if du != 0.0 { 1.0 / du.abs() } else { f64::INFINITY };
        let t_delta_c = if dv != 0.0 { 1.0 / dv.abs() } else { f64::INFINITY };
        let mut t = 0.0;
        loop {
            let t_next = t_max_r.min(t_max_c).min(length);
            out.push(RayCell {
                cell: Cell::new(r as usize, c as usize),
                t_enter: t,
                t_exit: t_next,
            });
            if t_next >= length {
                break;
            }
            t = t_next;
            if t_max_r < t_max_c {
                r += step_r;
                t_max_r += t_delta_r;
            } else {
                c += step_c;
                t_max_c += t_delta_c;
            }
            if self.signed_to_cell(r, c).is_none() {
                break;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayCell {
    pub cell: Cell,
    pub t_enter: f64,
    pub t_exit: f64,
}

/// Ternary interpretation of a belief value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellState {
    Obstacle,
    Free,
    Unknown,
}

impl CellState {
    pub fn classify(p: f64) -> Self {
        if p >= OBSTACLE_THRESHOLD {
            CellState::Obstacle
        } else if p <= FREE_THRESHOLD {
            CellState::Free
        } else {
            CellState::Unknown
        }
    }

    pub fn probability(self) -> f64 {
        match self {
            CellState::Obstacle => 1.0,
            CellState::Free => 0.0,
            CellState::Unknown => UNKNOWN,
        }
    }
}

/// Probability grid in the vehicle frame; `0.5` means unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    geometry: GridGeometry,
    cells: Vec<f64>,
}

impl Default for OccupancyGrid {
    fn default() -> Self {
        Self::new()
    }
}

impl OccupancyGrid {
    /// The 400 × 150 grid at 0.2 m, all unknown.
    pub fn new() -> Self {
        Self::with_geometry(GridGeometry::default())
    }

    pub fn with_geometry(geometry: GridGeometry) -> Self {
        Self::filled(geometry, UNKNOWN)
    }

    pub fn filled(geometry: GridGeometry, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value));
        Self {
            geometry,
            cells: vec![value; geometry.len()],
        }
    }

    pub fn from_cells(geometry: GridGeometry, cells: Vec<f64>) -> Self {
        assert_eq!(cells.len(), geometry.len());
        assert!(cells.iter().all(|p| (0.0..=1.0).contains(p)), "probability out of range");
        Self { geometry, cells }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.cells[self.geometry.index(cell)]
    }

    pub fn set(&mut self, cell: Cell, p: f64) {
        assert!((0.0..=1.0).contains(&p), "probability out of range: {p}");
        let i = self.geometry.index(cell);
        self.cells[i] = p;
    }

    pub fn state(&self, cell: Cell) -> CellState {
        CellState::classify(self.get(cell))
    }

    pub fn is_obstacle(&self, cell: Cell) -> bool {
        self.get(cell) >= OBSTACLE_THRESHOLD
    }

    pub fn iter_cells(&self) -> impl Iterator<Item = (Cell, f64)> + '_ {
        let cols = self.geometry.cols;
        self.cells
            .iter()
            .enumerate()
            .map(move |(i, p)| (Cell::new(i / cols, i % cols), *p))
    }

    pub fn count_known(&self) -> usize {
        self.cells.iter().filter(|p| **p != UNKNOWN).count()
    }

    /// Portable graymap (P5): one byte per cell, row-major from the front-left corner.
    pub fn to_pgm(&self) -> Vec<u8> {
        let g = &self.geometry;
        let mut out = format!("P5\n{} {}\n255\n", g.cols, g.rows).into_bytes();
        out.extend(self.cells.iter().map(|p| quantize_probability(*p)));
        out
    }

    /// Parses a graymap written by [`OccupancyGrid::to_pgm`] into the given geometry's anchor.
    pub fn from_pgm(bytes: &[u8], resolution: f64) -> Result<Self, GridError> {
        let (cols, rows, pixels) = parse_pgm(bytes)?;
        let geometry = if rows == DEFAULT_ROWS && cols == DEFAULT_COLS {
            GridGeometry {
                resolution,
                ..GridGeometry::default()
            }
        } else {
            GridGeometry::new(rows, cols, resolution, rows * 3 / 4, cols / 2)
        };
        Ok(Self {
            geometry,
            cells: pixels.iter().map(|b| dequantize_probability(*b)).collect(),
        })
    }
}

/// `round(p · 255)`; 0.5 maps to 128.
pub fn quantize_probability(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Inverse of [`quantize_probability`], exact at the unknown sentinel.
pub fn dequantize_probability(code: u8) -> f64 {
    if code == 128 {
        UNKNOWN
    } else {
        code as f64 / 255.0
    }
}

/// Parses a binary P5 graymap with maxval 255, returning `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, &[u8]), GridError> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(GridError::Format("truncated header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| GridError::Format(e.to_string()))?);
    }
    if fields[0] != "P5" {
        return Err(GridError::Format(format!("unsupported magic {}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| GridError::Format(format!("{s}: {e}")));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(GridError::Format(format!("maxval {maxval} unsupported")));
    }
    pos += 1;
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| GridError::Format("truncated pixels".into()))?;
    Ok((w, h, data))
}

/// An occupancy grid tagged with the stamp of its measurement and its source.
#[derive(Debug, Clone, PartialEq)]
pub struct StampedGrid {
    pub stamp: SpatioTemporalStamp,
    pub grid: OccupancyGrid,
    pub source: String,
}

impl StampedGrid {
    pub fn new(stamp: SpatioTemporalStamp, grid: OccupancyGrid, source: impl Into<String>) -> Self {
        Self {
            stamp,
            grid,
            source: source.into(),
        }
    }
}

/// Resamples per-cell values from the frame of `from` into the frame of `to`
/// using nearest-cell lookup; cells without source coverage get `fill`.
pub fn resample_cells<T: Copy>(
    geometry: &GridGeometry,
    src: &[T],
    from: &Pose2D,
    to: &Pose2D,
    fill: T,
) -> Vec<T> {
    if from == to {
        return src.to_vec();
    }
    // Target-frame points expressed in the source frame.
    let rel = from.relative(to);
    let mut out = Vec::with_capacity(geometry.len());
    for row in 0..geometry.rows {
        for col in 0..geometry.cols {
            let p = rel.transform_point(geometry.cell_center(Cell::new(row, col)));
            out.push(match geometry.local_to_cell(p) {
                Some(c) => src[geometry.index(c)],
                None => fill,
            });
        }
    }
    out
}

/// Re-expresses a stamped observation in the vehicle frame of `target`.
pub fn align_grid(
    observation: &StampedGrid,
    target: &SpatioTemporalStamp,
    staleness_budget: f64,
) -> Result<OccupancyGrid, GridError> {
    check_staleness(&observation.stamp, target, staleness_budget)?;
    let g = *observation.grid.geometry();
    let cells = resample_cells(&g, observation.grid.cells(), &observation.stamp.pose, &target.pose, UNKNOWN);
    Ok(OccupancyGrid { geometry: g, cells })
}

pub fn check_staleness(
    stamp: &SpatioTemporalStamp,
    target: &SpatioTemporalStamp,
    budget: f64,
) -> Result<(), GridError> {
    let age = (target.t - stamp.t).abs();
    if age > budget {
        return Err(GridError::StaleObservation { age, budget });
    }
    Ok(())
}

/// Cell containing a world point as seen from the ego pose, or `None` when outside.
pub fn world_to_cell(grid: &OccupancyGrid, point: Point2, ego: &Pose2D) -> Option<Cell> {
    grid.geometry().local_to_cell(ego.inverse_transform_point(point))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn default_dimensions() {
        let g = OccupancyGrid::new();
        let geo = g.geometry();
        assert_eq!((geo.rows, geo.cols, geo.resolution), (400, 150, 0.2));
        assert!(g.cells().iter().all(|p| *p == 0.5));
        assert!((geo.rows as f64 * geo.resolution - 80.0).abs() < 1e-9);
        assert!((geo.cols as f64 * geo.resolution - 30.0).abs() < 1e-9);
    }

    #[test]
    fn world_to_cell_examples() {
        let g = OccupancyGrid::new();
        let ego = Pose2D::new(12.0, -3.0, 0.4);
        let anchor = g.geometry().anchor();
        assert_eq!(world_to_cell(&g, ego.position(), &ego), Some(anchor));
        let ahead = ego.transform_point(Point2::new(0.2, 0.0));
        assert_eq!(world_to_cell(&g, ahead, &ego), Some(Cell::new(anchor.row - 1, anchor.col)));
        let far = ego.transform_point(Point2::new(100.0, 0.0));
        assert_eq!(world_to_cell(&g, far, &ego), None);
        let left = ego.transform_point(Point2::new(0.0, 0.2));
        assert_eq!(world_to_cell(&g, left, &ego), Some(Cell::new(anchor.row, anchor.col - 1)));
    }

    #[test]
    fn align_identity_is_bit_identical() {
        let mut g = OccupancyGrid::new();
        g.set(Cell::new(10, 10), 0.9);
        g.set(Cell::new(200, 30), 0.1);
        let s = SpatioTemporalStamp::new(1.0, 5.0, 5.0, 0.3);
        let obs = StampedGrid::new(s, g.clone(), "a");
        assert_eq!(align_grid(&obs, &s, 0.5).unwrap(), g);
    }

    #[test]
    fn align_forward_shift_moves_rows_rearward() {
        let mut g = OccupancyGrid::new();
        for (i, cell) in [(100, 40), (250, 75), (398, 149)].iter().enumerate() {
            g.set(Cell::new(cell.0, cell.1), 0.1 + 0.2 * i as f64);
        }
        let theta = 0.6;
        let from = SpatioTemporalStamp::new(0.0, 1.0, 2.0, theta);
        let to = SpatioTemporalStamp::new(0.1, 1.0 + theta.cos(), 2.0 + theta.sin(), theta);
        let out = align_grid(&StampedGrid::new(from, g.clone(), "a"), &to, 0.5).unwrap();
        // per-cell oracle: target row r shows source row r-5
        for row in 0..400 {
            for col in 0..150 {
                let want = if row >= 5 { g.get(Cell::new(row - 5, col)) } else { 0.5 };
                assert_eq!(out.get(Cell::new(row, col)), want, "({row},{col})");
            }
        }
    }

    #[test]
    fn align_quarter_turn() {
        let mut g = OccupancyGrid::new();
        let d = 8.0;
        let c = g.geometry().local_to_cell(Point2::new(d, 0.0)).unwrap();
        g.set(c, 0.9);
        let from = SpatioTemporalStamp::new(0.0, 0.0, 0.0, 0.0);
        let to = SpatioTemporalStamp::new(0.0, 0.0, 0.0, FRAC_PI_2);
        let out = align_grid(&StampedGrid::new(from, g, "a"), &to, 0.5).unwrap();
        let hits: Vec<_> = out.iter_cells().filter(|(_, p)| *p == 0.9).map(|(c, _)| c).collect();
        assert_eq!(hits.len(), 1);
        let p = out.geometry().cell_center(hits[0]);
        assert!((p.x - 0.0).abs() <= 0.1 + 1e-9 && (p.y + d).abs() <= 0.1 + 1e-9, "{p:?}");
    }

    #[test]
    fn align_rejects_stale() {
        let s = SpatioTemporalStamp::new(0.0, 0.0, 0.0, 0.0);
        let t = SpatioTemporalStamp::new(0.6, 0.0, 0.0, 0.0);
        let obs = StampedGrid::new(s, OccupancyGrid::new(), "a");
        assert!(matches!(align_grid(&obs, &t, 0.5), Err(GridError::StaleObservation { .. })));
    }

    #[test]
    fn quantization_sentinel() {
        assert_eq!(quantize_probability(0.5), 128);
        assert_eq!(dequantize_probability(128), 0.5);
        assert_eq!(quantize_probability(0.0), 0);
        assert_eq!(quantize_probability(1.0), 255);
        for code in 0..=255u8 {
            assert_eq!(quantize_probability(dequantize_probability(code)), code);
        }
    }

    #[test]
    fn pgm_round_trip() {
        let mut g = OccupancyGrid::new();
        g.set(Cell::new(0, 0), 1.0);
        g.set(Cell::new(399, 149), 0.0);
        let bytes = g.to_pgm();
        assert!(bytes.starts_with(b"P5\n150 400\n255\n"));
        let back = OccupancyGrid::from_pgm(&bytes, 0.2).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn traverse_straight_ahead() {
        let geo = GridGeometry::default();
        let cells = geo.traverse(Point2::new(0.0, 0.0), Point2::new(10.0, 0.0));
        assert_eq!(cells.first().unwrap().cell, geo.anchor());
        assert_eq!(cells.len(), 51);
        let last = cells.last().unwrap();
        assert_eq!(last.cell, Cell::new(250, 75));
        assert!((last.t_enter - 9.9).abs() < 1e-9);
        // consecutive cells are 4-adjacent
        for w in cells.windows(2) {
            let dr = w[0].cell.row.abs_diff(w[1].cell.row);
            let dc = w[0].cell.col.abs_diff(w[1].cell.col);
            assert_eq!(dr + dc, 1);
        }
    }
}
