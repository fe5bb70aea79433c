use super::{Evidence, PerceptionError, PointCloud, SegmentationParams};
use crate::geom::Point2;
use crate::grid::{GridGeometry, OccupancyGrid, StampedGrid};

pub const SOURCE_MULTIBEAM: &str = "multibeam";

pub fn segment_point_cloud(cloud: &PointCloud, params: &SegmentationParams) -> Result<StampedGrid, PerceptionError> {
    segment_point_cloud_with(cloud, params, GridGeometry::default(), Evidence::default())
}

/// Two-pass obstacle segmentation.
///
/// Pass one works on coarse cells (`upsample_factor` fine cells per side): the
/// mean of the `n_lowest` smallest heights is the local ground `z_min`, and
/// points more than `height_delta` above it are obstacle points. Pass two marks
/// a fine cell as obstacle only if it holds an obstacle point inside the vehicle's
/// vertical span, so overhanging structure is ignored. Fine cells with returns
/// but no such point are free; cells without returns stay unknown.
pub fn segment_point_cloud_with(
    cloud: &PointCloud,
    params: &SegmentationParams,
    geometry: GridGeometry,
    evidence: Evidence,
) -> Result<StampedGrid, PerceptionError> {
    params.validate()?;
    if cloud.points.is_empty() {
        return Err(PerceptionError::EmptyInput);
    }
    let f = params.upsample_factor;
    let coarse_rows = geometry.rows.div_ceil(f);
    let coarse_cols = geometry.cols.div_ceil(f);

    let mut placed = Vec::with_capacity(cloud.points.len());
    let mut coarse_z: Vec<Vec<f64>> = vec![Vec::new(); coarse_rows * coarse_cols];
    for p in &cloud.points {
        if !(p[0].is_finite() && p[1].is_finite() && p[2].is_finite()) {
            continue;
        }
        if let Some(cell) = geometry.local_to_cell(Point2::new(p[0], p[1])) {
            let ci = (cell.row / f) * coarse_cols + cell.col / f;
            coarse_z[ci].push(p[2]);
            placed.push((geometry.index(cell), ci, p[2]));
        }
    }

    let z_min: Vec<f64> = coarse_z
        .iter_mut()
        .map(|zs| {
            if zs.is_empty() {
                return f64::NAN;
            }
            zs.sort_by(f64::total_cmp);
            let n = params.n_lowest.min(zs.len());
            zs[..n].iter().sum::<f64>() / n as f64
        })
        .collect();

    let (z_low, z_high) = params.vehicle_span;
    let mut has_points = vec![false; geometry.len()];
    let mut obstacle = vec![false; geometry.len()];
    for (fine, coarse, z) in placed {
        has_points[fine] = true;
        if z > z_min[coarse] + params.height_delta && z >= z_low && z <= z_high {
            obstacle[fine] = true;
        }
    }

    let cells = has_points
        .iter()
        .zip(&obstacle)
        .map(|(seen, obs)| match (seen, obs) {
            (_, true) => evidence.obstacle,
            (true, false) => evidence.free,
            (false, false) => crate::grid::UNKNOWN,
        })
        .collect();
    Ok(StampedGrid::new(cloud.stamp, OccupancyGrid::from_cells(geometry, cells), SOURCE_MULTIBEAM))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SpatioTemporalStamp;

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        PointCloud {
            points,
            stamp: SpatioTemporalStamp::default(),
        }
    }

    #[test]
    fn empty_cloud_is_error() {
        let r = segment_point_cloud(&cloud(vec![]), &SegmentationParams::default());
        assert_eq!(r.unwrap_err(), PerceptionError::EmptyInput);
    }

    #[test]
    fn rejects_bad_params() {
        let c = cloud(vec![[1.0, 0.0, 0.0]]);
        for p in [
            SegmentationParams {
                upsample_factor: 3,
                ..Default::default()
            },
            SegmentationParams {
                n_lowest: 0,
                ..Default::default()
            },
            SegmentationParams {
                vehicle_span: (2.0, 1.0),
                ..Default::default()
            },
        ] {
            assert!(matches!(segment_point_cloud(&c, &p), Err(PerceptionError::InvalidParams(_))));
        }
    }

    #[test]
    fn flat_ground_is_free() {
        let mut pts = Vec::new();
        for i in 0..200 {
            for j in -40..40 {
                let jitter = ((i * 7 + j * 13) % 10) as f64 * 0.01;
                pts.push([i as f64 * 0.1, j as f64 * 0.1, jitter]);
            }
        }
        let g = segment_point_cloud(&cloud(pts), &SegmentationParams::default()).unwrap();
        assert!(g.grid.cells().iter().all(|p| *p == 0.1 || *p == 0.5));
        assert!(g.grid.cells().iter().any(|p| *p == 0.1));
    }

    #[test]
    fn overhang_is_ignored() {
        let mut pts = Vec::new();
        for i in 0..50 {
            for j in -10..10 {
                pts.push([5.0 + i as f64 * 0.1, j as f64 * 0.1, 0.0]);
                pts.push([5.0 + i as f64 * 0.1, j as f64 * 0.1, 3.0]);
            }
        }
        let g = segment_point_cloud(&cloud(pts), &SegmentationParams::default()).unwrap();
        assert!(g.grid.cells().iter().all(|p| *p != 0.9));
    }
}
