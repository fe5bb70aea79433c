//! Footprint masks and collision checks.

use std::cell::RefCell;
use std::f64::consts::{PI, SQRT_2};

use crate::geom::{polygons_overlap, Aabb, OrientedRect, Point2, Pose2D};
use crate::grid::{Cell, GridGeometry, OccupancyGrid};

use super::lattice::bin_angle;

/// Vehicle rectangle in its own frame (x forward from the front axle), plus a safety margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub rear: f64,
    pub front: f64,
    pub width: f64,
    pub margin: f64,
}

impl Footprint {
    /// 4.5 m × 1.8 m car anchored at the front axle, 0.3 m margin.
    pub fn vehicle() -> Self {
        Self {
            rear: -3.6,
            front: 0.9,
            width: 1.8,
            margin: 0.3,
        }
    }

    /// A small robot-sized footprint for narrow test maps.
    pub fn compact() -> Self {
        Self {
            rear: -0.3,
            front: 0.3,
            width: 0.6,
            margin: 0.1,
        }
    }

    pub fn length(&self) -> f64 {
        self.front - self.rear
    }

    /// The inflated rectangle at a pose.
    pub fn rect(&self, pose: Pose2D) -> OrientedRect {
        OrientedRect {
            pose,
            rear: self.rear - self.margin,
            front: self.front + self.margin,
            half_width: self.width / 2.0 + self.margin,
        }
    }

    /// Radius of the largest disc about the reference point inside the inflated rectangle.
    pub fn inscribed_radius(&self) -> f64 {
        let r = self.width / 2.0 + self.margin;
        r.min(self.front + self.margin).min(self.margin - self.rear).max(0.0)
    }

    fn reach(&self) -> f64 {
        let hw = self.width / 2.0 + self.margin;
        let x = (self.rear - self.margin).abs().max(self.front + self.margin);
        x.hypot(hw)
    }
}

/// Cell offsets (forward, left) covered by the footprint for one heading bin.
#[derive(Debug, Clone, PartialEq)]
pub struct FootprintMask {
    pub offsets: Vec<(i32, i32)>,
    /// Largest Chebyshev offset in the mask.
    pub radius: i32,
}

/// One mask per heading bin. Each mask covers every pose whose position lies in the
/// cell and whose heading lies in the bin.
#[derive(Debug, Clone, PartialEq)]
pub struct FootprintMasks {
    pub footprint: Footprint,
    pub heading_bins: usize,
    pub resolution: f64,
    masks: Vec<FootprintMask>,
}

const ANGLE_STEPS: usize = 8;

impl FootprintMasks {
    pub fn build(footprint: Footprint, heading_bins: usize, resolution: f64) -> Self {
        let bw = 2.0 * PI / heading_bins as f64;
        let step = bw / ANGLE_STEPS as f64;
        let inflate = resolution / SQRT_2 + footprint.reach() * step / 2.0 + 1e-9;
        let half = resolution / 2.0;
        let masks = (0..heading_bins)
            .map(|b| {
                let mut offsets: Vec<(i32, i32)> = Vec::new();
                for k in 0..=ANGLE_STEPS {
                    let theta = bin_angle(b, heading_bins) - bw / 2.0 + k as f64 * step;
                    let rect = footprint.rect(Pose2D::new(0.0, 0.0, theta)).inflated(inflate);
                    let bb = rect.bounding_box();
                    let lo_i = ((bb.min.x - half) / resolution).floor() as i32;
                    let hi_i = ((bb.max.x + half) / resolution).ceil() as i32;
                    let lo_j = ((bb.min.y - half) / resolution).floor() as i32;
                    let hi_j = ((bb.max.y + half) / resolution).ceil() as i32;
                    let corners = rect.corners();
                    for i in lo_i..=hi_i {
                        for j in lo_j..=hi_j {
                            let (cx, cy) = (i as f64 * resolution, j as f64 * resolution);
                            let square = Aabb::new(cx - half, cy - half, cx + half, cy + half);
                            if polygons_overlap(&corners, &square.corners()) {
                                offsets.push((i, j));
                            }
                        }
                    }
                }
                offsets.sort_unstable();
                offsets.dedup();
                let radius = offsets.iter().map(|&(i, j)| i.abs().max(j.abs())).max().unwrap_or(0);
                FootprintMask { offsets, radius }
            })
            .collect();
        Self {
            footprint,
            heading_bins,
            resolution,
            masks,
        }
    }

    pub fn mask(&self, bin: usize) -> &FootprintMask {
        &self.masks[bin]
    }
}

/// Mask-based collision queries against a fixed set of blocked cells, memoized per (cell, bin).
pub struct CollisionChecker<'a> {
    masks: &'a FootprintMasks,
    geometry: GridGeometry,
    blocked: Vec<bool>,
    clearance: Vec<u16>,
    memo: RefCell<Vec<u8>>,
}

impl<'a> CollisionChecker<'a> {
    pub fn new(masks: &'a FootprintMasks, geometry: GridGeometry, blocked: Vec<bool>) -> Self {
        assert_eq!(blocked.len(), geometry.len());
        let clearance = chebyshev_clearance(&geometry, &blocked);
        let memo = RefCell::new(vec![0u8; geometry.len() * masks.heading_bins]);
        Self {
            masks,
            geometry,
            blocked,
            clearance,
            memo,
        }
    }

    pub fn from_grid(masks: &'a FootprintMasks, map: &OccupancyGrid) -> Self {
        let blocked = map.iter_cells().map(|(c, _)| map.is_obstacle(c)).collect();
        Self::new(masks, *map.geometry(), blocked)
    }

    /// True when the footprint mask at `(cell, bin)` touches a blocked cell.
    pub fn collides(&self, cell_index: usize, bin: usize) -> bool {
        let key = cell_index * self.masks.heading_bins + bin;
        match self.memo.borrow()[key] {
            1 => return false,
            2 => return true,
            _ => {}
        }
        let hit = self.check(cell_index, bin);
        self.memo.borrow_mut()[key] = if hit { 2 } else { 1 };
        hit
    }

    fn check(&self, cell_index: usize, bin: usize) -> bool {
        let mask = self.masks.mask(bin);
        if self.clearance[cell_index] as i32 > mask.radius {
            return false;
        }
        let cell = self.geometry.cell_of(cell_index);
        let (r0, c0) = (cell.row as i64, cell.col as i64);
        mask.offsets.iter().any(|&(i, j)| {
            self.geometry
                .signed_to_cell(r0 - i as i64, c0 - j as i64)
                .is_some_and(|c| self.blocked[self.geometry.index(c)])
        })
    }
}

/// Chebyshev distance (in cells) to the nearest blocked cell, saturating.
fn chebyshev_clearance(geo: &GridGeometry, blocked: &[bool]) -> Vec<u16> {
    let (rows, cols) = (geo.rows, geo.cols);
    let mut d: Vec<u16> = blocked.iter().map(|&b| if b { 0 } else { u16::MAX }).collect();
    let relax = |d: &mut Vec<u16>, i: usize, j: usize| {
        if d[i] > d[j].saturating_add(1) {
            d[i] = d[j] + 1;
        }
    };
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c > 0 {
                relax(&mut d, i, i - 1);
            }
            if r > 0 {
                relax(&mut d, i, i - cols);
                if c > 0 {
                    relax(&mut d, i, i - cols - 1);
                }
                if c + 1 < cols {
                    relax(&mut d, i, i - cols + 1);
                }
            }
        }
    }
    for r in (0..rows).rev() {
        for c in (0..cols).rev() {
            let i = r * cols + c;
            if c + 1 < cols {
                relax(&mut d, i, i + 1);
            }
            if r + 1 < rows {
                relax(&mut d, i, i + cols);
                if c + 1 < cols {
                    relax(&mut d, i, i + cols + 1);
                }
                if c > 0 {
                    relax(&mut d, i, i + cols - 1);
                }
            }
        }
    }
    d
}

/// Exact test: does the inflated footprint at a vehicle-frame pose overlap any blocked cell square?
pub fn footprint_collides_exact(
    footprint: &Footprint,
    pose: Pose2D,
    geometry: &GridGeometry,
    blocked: impl Fn(Cell) -> bool,
) -> bool {
    let rect = footprint.rect(pose);
    let corners = rect.corners();
    let bb = rect.bounding_box();
    let res = geometry.resolution;
    let half = res / 2.0;
    let (r_lo, c_lo) = geometry.local_to_signed(Point2::new(bb.max.x + res, bb.max.y + res));
    let (r_hi, c_hi) = geometry.local_to_signed(Point2::new(bb.min.x - res, bb.min.y - res));
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            let Some(cell) = geometry.signed_to_cell(r, c) else {
                continue;
            };
            if !blocked(cell) {
                continue;
            }
            let p = geometry.cell_center(cell);
            let square = Aabb::new(p.x - half, p.y - half, p.x + half, p.y + half);
            if polygons_overlap(&corners, &square.corners()) {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty() -> OccupancyGrid {
        OccupancyGrid::filled(GridGeometry::default(), 0.0)
    }

    #[test]
    fn empty_map_never_collides() {
        let masks = FootprintMasks::build(Footprint::vehicle(), 72, 0.2);
        let map = empty();
        let chk = CollisionChecker::from_grid(&masks, &map);
        for idx in (0..map.geometry().len()).step_by(997) {
            for b in [0, 17, 40] {
                assert!(!chk.collides(idx, b));
            }
        }
    }

    #[test]
    fn obstacle_at_center_collides() {
        let masks = FootprintMasks::build(Footprint::vehicle(), 72, 0.2);
        let mut map = empty();
        let a = map.geometry().anchor();
        map.set(a, 1.0);
        let chk = CollisionChecker::from_grid(&masks, &map);
        let idx = map.geometry().index(a);
        for b in 0..72 {
            assert!(chk.collides(idx, b));
        }
    }

    #[test]
    fn lateral_clearance_matches_exact_oracle() {
        let fp = Footprint::vehicle();
        let masks = FootprintMasks::build(fp, 72, 0.2);
        let geo = GridGeometry::default();
        for (offset, expect) in [(fp.width / 2.0 + fp.margin + 0.3, false), (fp.width / 2.0 + fp.margin - 0.3, true)] {
            let mut map = empty();
            let obstacle = geo.local_to_cell(Point2::new(-1.0, offset)).unwrap();
            map.set(obstacle, 1.0);
            let exact = footprint_collides_exact(&fp, Pose2D::identity(), &geo, |c| map.is_obstacle(c));
            assert_eq!(exact, expect, "offset {offset}");
            let chk = CollisionChecker::from_grid(&masks, &map);
            assert_eq!(chk.collides(geo.index(geo.anchor()), 0), expect, "offset {offset}");
        }
    }

    #[test]
    fn mask_is_conservative_for_sub_cell_poses() {
        let fp = Footprint::vehicle();
        let h = 72;
        let masks = FootprintMasks::build(fp, h, 0.2);
        let geo = GridGeometry::default();
        let bw = 2.0 * PI / h as f64;
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..300 {
            let mut map = empty();
            let oc = geo.local_to_cell(Point2::new(next() * 8.0 - 5.0, next() * 6.0 - 3.0)).unwrap();
            map.set(oc, 1.0);
            let bin = (next() * h as f64) as usize % h;
            let pose = Pose2D::new(next() * 0.2 - 0.1, next() * 0.2 - 0.1, bin_angle(bin, h) + (next() - 0.5) * bw);
            let exact = footprint_collides_exact(&fp, pose, &geo, |c| map.is_obstacle(c));
            let chk = CollisionChecker::from_grid(&masks, &map);
            if exact {
                assert!(chk.collides(geo.index(geo.anchor()), bin));
            }
        }
    }

    #[test]
    fn clearance_is_chebyshev() {
        let geo = GridGeometry::new(7, 7, 0.2, 3, 3);
        let mut blocked = vec![false; 49];
        blocked[geo.index(Cell::new(3, 3))] = true;
        let d = chebyshev_clearance(&geo, &blocked);
        assert_eq!(d[geo.index(Cell::new(0, 0))], 3);
        assert_eq!(d[geo.index(Cell::new(2, 4))], 1);
        assert_eq!(d[geo.index(Cell::new(3, 6))], 3);
    }
}
