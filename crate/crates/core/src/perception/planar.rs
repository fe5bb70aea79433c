use std::f64::consts::FRAC_PI_4;

use super::{check_increasing, Evidence, PerceptionError, PlanarScan};
use crate::geom::Point2;
use crate::grid::{GridGeometry, OccupancyGrid, StampedGrid, OBSTACLE_THRESHOLD};

pub const SOURCE_VIRTUAL: &str = "virtual";

pub fn project_planar_scan(
    scan: &PlanarScan,
    pitch: f64,
    source: &str,
) -> Result<StampedGrid, PerceptionError> {
    project_planar_scan_with(scan, pitch, source, GridGeometry::default(), Evidence::default())
}

/// Projects a planar scan onto the grid after compensating the body pitch.
///
/// Each return is rotated by `-pitch` about the lateral axis, so its planar
/// footprint shrinks by `cos(pitch)` along the forward axis. The hit cell is an
/// obstacle and the cells the ray crosses before it are free. Returns at
/// `max_range` are misses and only clear the swept cells.
pub fn project_planar_scan_with(
    scan: &PlanarScan,
    pitch: f64,
    source: &str,
    geometry: GridGeometry,
    evidence: Evidence,
) -> Result<StampedGrid, PerceptionError> {
    if !(pitch.abs() < FRAC_PI_4) {
        return Err(PerceptionError::InvalidParams(format!("pitch {pitch} outside (-π/4, π/4)")));
    }
    scan.validate()?;
    let mut grid = OccupancyGrid::with_geometry(geometry);
    let origin = Point2::new(0.0, 0.0);
    let cos_pitch = pitch.cos();
    let mut hits = Vec::new();
    for (&bearing, &range) in scan.bearings.iter().zip(&scan.ranges) {
        let end = Point2::new(range * bearing.cos() * cos_pitch, range * bearing.sin());
        let is_hit = range < scan.max_range;
        let hit_cell = if is_hit { geometry.local_to_cell(end) } else { None };
        for rc in geometry.traverse(origin, end) {
            if Some(rc.cell) == hit_cell {
                break;
            }
            grid.set(rc.cell, evidence.free);
        }
        if let Some(c) = hit_cell {
            hits.push(c);
        }
    }
    for c in hits {
        grid.set(c, evidence.obstacle);
    }
    Ok(StampedGrid::new(scan.stamp, grid, source))
}

/// Ray-casts a grid from its anchor into a synthetic planar scan.
///
/// The range for a bearing is the distance to the middle of the ray's passage
/// through the first cell at or above the obstacle threshold; rays that leave
/// the grid or reach `max_range` report `max_range`.
pub fn generate_virtual_scan(
    grid: &StampedGrid,
    bearings: &[f64],
    max_range: f64,
) -> Result<PlanarScan, PerceptionError> {
    check_increasing(bearings)?;
    if !(max_range > 0.0) {
        return Err(PerceptionError::InvalidParams("max_range must be positive".into()));
    }
    let geometry = grid.grid.geometry();
    let origin = Point2::new(0.0, 0.0);
    let ranges = bearings
        .iter()
        .map(|b| {
            let end = Point2::new(max_range * b.cos(), max_range * b.sin());
            geometry
                .traverse(origin, end)
                .into_iter()
                .find(|rc| grid.grid.get(rc.cell) >= OBSTACLE_THRESHOLD)
                .map(|rc| (0.5 * (rc.t_enter + rc.t_exit)).clamp(1e-6, max_range))
                .unwrap_or(max_range)
        })
        .collect();
    Ok(PlanarScan {
        ranges,
        bearings: bearings.to_vec(),
        max_range,
        mount_height: 0.0,
        stamp: grid.stamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SpatioTemporalStamp;
    use crate::grid::Cell;

    fn scan(bearings: Vec<f64>, ranges: Vec<f64>) -> PlanarScan {
        PlanarScan {
            ranges,
            bearings,
            max_range: 40.0,
            mount_height: 0.5,
            stamp: SpatioTemporalStamp::default(),
        }
    }

    #[test]
    fn single_return_dead_ahead() {
        let g = project_planar_scan(&scan(vec![0.0], vec![10.0]), 0.0, "sick").unwrap().grid;
        let geo = *g.geometry();
        let hit = geo.local_to_cell(Point2::new(10.0, 0.0)).unwrap();
        assert_eq!(g.get(hit), 0.9);
        for k in 0..50 {
            assert_eq!(g.get(Cell::new(geo.anchor_row - k, geo.anchor_col)), 0.1);
        }
        assert_eq!(g.get(Cell::new(hit.row - 1, hit.col)), 0.5);
    }

    #[test]
    fn pitch_shortens_planar_range() {
        let pitch: f64 = 0.05;
        let g = project_planar_scan(&scan(vec![0.0], vec![10.0]), pitch, "sick").unwrap().grid;
        let obstacles: Vec<_> = g.iter_cells().filter(|(_, p)| *p == 0.9).map(|(c, _)| c).collect();
        assert_eq!(obstacles.len(), 1);
        let x = g.geometry().cell_center(obstacles[0]).x;
        // rotation-matrix oracle: planar forward distance 10·cos(pitch)
        let expected = 10.0 * pitch.cos();
        assert!((expected - 9.9875).abs() < 1e-4);
        assert!((x - expected).abs() <= 0.1 + 1e-9, "{x}");
    }

    #[test]
    fn misses_only_clear() {
        let bearings: Vec<f64> = (0..30).map(|i| -0.6 + i as f64 * 0.04).collect();
        let ranges = vec![40.0; bearings.len()];
        let g = project_planar_scan(&scan(bearings, ranges), 0.0, "ibeo").unwrap().grid;
        assert!(g.cells().iter().all(|p| *p != 0.9));
        assert!(g.cells().iter().any(|p| *p == 0.1));
    }

    #[test]
    fn rejects_excess_pitch() {
        assert!(project_planar_scan(&scan(vec![0.0], vec![5.0]), 0.8, "s").is_err());
    }

    #[test]
    fn virtual_scan_first_hit() {
        let mut grid = OccupancyGrid::new();
        let geo = *grid.geometry();
        let near = geo.local_to_cell(Point2::new(10.0, 0.0)).unwrap();
        let far = geo.local_to_cell(Point2::new(20.0, 0.0)).unwrap();
        grid.set(far, 0.9);
        let sg = StampedGrid::new(SpatioTemporalStamp::default(), grid.clone(), "m");
        let s = generate_virtual_scan(&sg, &[-0.1, 0.0, 0.1], 50.0).unwrap();
        assert!((s.ranges[1] - 20.0).abs() <= 0.2);
        grid.set(near, 0.9);
        let sg = StampedGrid::new(SpatioTemporalStamp::default(), grid, "m");
        let s = generate_virtual_scan(&sg, &[-0.1, 0.0, 0.1], 50.0).unwrap();
        assert!((s.ranges[1] - 10.0).abs() <= 0.2);
        assert_eq!(s.ranges[0], 50.0);
    }

    #[test]
    fn virtual_scan_empty_grid() {
        let sg = StampedGrid::new(SpatioTemporalStamp::default(), OccupancyGrid::new(), "m");
        let bearings: Vec<f64> = (0..90).map(|i| -3.1 + i as f64 * 0.069).collect();
        let s = generate_virtual_scan(&sg, &bearings, 30.0).unwrap();
        assert!(s.ranges.iter().all(|r| *r == 30.0));
        assert!(generate_virtual_scan(&sg, &[0.2, 0.1], 30.0).is_err());
    }
}
