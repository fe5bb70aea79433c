//! Odds-product fusion of aligned sensor grids, maximum-likelihood extraction and
//! unknown-cell filling from segmented and historical maps.

use thiserror::Error;

use crate::geom::{angle_diff, Point2, SpatioTemporalStamp};
use crate::grid::{
    resample_cells, CellState, GridError, GridGeometry, OccupancyGrid, StampedGrid, DEFAULT_STALENESS_BUDGET,
    FREE_THRESHOLD, OBSTACLE_THRESHOLD, UNKNOWN,
};

pub const LOG_ODDS_LIMIT: f64 = 10.0;
const P_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("grids are not aligned to the same stamp ({0})")]
    Alignment(String),
}

/// Log-odds, evaluated on the upper half so that `logit(1 − p) = −logit(p)` exactly.
pub fn logit(p: f64) -> f64 {
    if p < 0.5 {
        -logit_upper(1.0 - p)
    } else {
        logit_upper(p)
    }
}

fn logit_upper(p: f64) -> f64 {
    let p = p.min(1.0 - P_EPS);
    (p / (1.0 - p)).ln()
}

pub fn logistic(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

/// Per-cell occupancy belief held as log-odds against a fixed prior of 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct OddsGrid {
    geometry: GridGeometry,
    log_odds: Vec<f64>,
    pub stamp: SpatioTemporalStamp,
}

impl OddsGrid {
    pub fn prior(geometry: GridGeometry, stamp: SpatioTemporalStamp) -> Self {
        Self {
            geometry,
            log_odds: vec![0.0; geometry.len()],
            stamp,
        }
    }

    pub fn from_probabilities(grid: &OccupancyGrid, stamp: SpatioTemporalStamp) -> Self {
        Self {
            geometry: *grid.geometry(),
            log_odds: grid.cells().iter().map(|&p| clamp_log_odds(logit(p))).collect(),
            stamp,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn log_odds(&self) -> &[f64] {
        &self.log_odds
    }

    pub fn probability(&self, index: usize) -> f64 {
        logistic(self.log_odds[index])
    }

    pub fn to_probability_grid(&self) -> OccupancyGrid {
        OccupancyGrid::from_cells(self.geometry, self.log_odds.iter().map(|&l| logistic(l)).collect())
    }
}

fn clamp_log_odds(l: f64) -> f64 {
    l.clamp(-LOG_ODDS_LIMIT, LOG_ODDS_LIMIT)
}

/// A sensor's horizontal field of view in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFov {
    pub mount: Point2,
    pub heading: f64,
    pub half_angle: f64,
    pub max_range: f64,
}

impl SensorFov {
    pub fn contains(&self, p: Point2) -> bool {
        let (dx, dy) = (p.x - self.mount.x, p.y - self.mount.y);
        let r = dx.hypot(dy);
        if r > self.max_range {
            return false;
        }
        r == 0.0 || angle_diff(dy.atan2(dx), self.heading).abs() <= self.half_angle
    }
}

/// Cells where the fields of view of the contributing sensors overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMask {
    geometry: GridGeometry,
    cells: Vec<bool>,
}

impl FusionMask {
    pub fn all(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            cells: vec![true; geometry.len()],
        }
    }

    pub fn from_cells(geometry: GridGeometry, cells: Vec<bool>) -> Self {
        assert_eq!(cells.len(), geometry.len());
        Self { geometry, cells }
    }

    /// Intersection of the given fields of view, evaluated at cell centres.
    pub fn from_fovs(geometry: GridGeometry, fovs: &[SensorFov]) -> Self {
        let cells = (0..geometry.len())
            .map(|i| {
                let c = geometry.cell_center(geometry.cell_of(i));
                !fovs.is_empty() && fovs.iter().all(|f| f.contains(c))
            })
            .collect();
        Self { geometry, cells }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.cells[index]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }
}

pub fn fuse_odds(
    previous: &OddsGrid,
    observations: &[StampedGrid],
    mask: &FusionMask,
    target: &SpatioTemporalStamp,
) -> Result<OddsGrid, FusionError> {
    fuse_odds_with(previous, observations, mask, target, DEFAULT_STALENESS_BUDGET)
}

/// One fusion cycle at `target`.
///
/// The previous belief is carried into the target frame, then every masked cell
/// adds the log-odds of the newest observation from each source. Observations
/// are summed in source-name order, so the result does not depend on the order
/// of `observations`.
pub fn fuse_odds_with(
    previous: &OddsGrid,
    observations: &[StampedGrid],
    mask: &FusionMask,
    target: &SpatioTemporalStamp,
    staleness_budget: f64,
) -> Result<OddsGrid, FusionError> {
    let geometry = previous.geometry;
    if mask.geometry != geometry {
        return Err(GridError::DimensionMismatch(geometry, mask.geometry).into());
    }
    let mut latest: Vec<&StampedGrid> = Vec::new();
    for obs in observations {
        if *obs.grid.geometry() != geometry {
            return Err(GridError::DimensionMismatch(geometry, *obs.grid.geometry()).into());
        }
        crate::grid::check_staleness(&obs.stamp, target, staleness_budget)?;
        match latest.iter_mut().find(|l| l.source == obs.source) {
            Some(slot) if obs.stamp.t > slot.stamp.t => *slot = obs,
            Some(_) => {}
            None => latest.push(obs),
        }
    }
    latest.sort_by(|a, b| a.source.cmp(&b.source));

    let aligned: Vec<Vec<f64>> = latest
        .iter()
        .map(|o| resample_cells(&geometry, o.grid.cells(), &o.stamp.pose, &target.pose, UNKNOWN))
        .collect();
    let mut log_odds = resample_cells(&geometry, &previous.log_odds, &previous.stamp.pose, &target.pose, 0.0);
    for (i, l) in log_odds.iter_mut().enumerate() {
        if !mask.cells[i] {
            continue;
        }
        let evidence: f64 = aligned
            .iter()
            .map(|cells| cells[i])
            .filter(|p| *p != UNKNOWN)
            .map(logit)
            .sum();
        if evidence != 0.0 {
            *l = clamp_log_odds(*l + evidence);
        }
    }
    Ok(OddsGrid {
        geometry,
        log_odds,
        stamp: *target,
    })
}

/// Ternary map: obstacle at or above 0.75, free at or below 0.25, unknown otherwise.
pub fn extract_ml_map(odds: &OddsGrid) -> OccupancyGrid {
    let hi = logit(OBSTACLE_THRESHOLD);
    let lo = logit(FREE_THRESHOLD);
    let cells = odds
        .log_odds
        .iter()
        .map(|&l| {
            if l >= hi {
                1.0
            } else if l <= lo {
                0.0
            } else {
                UNKNOWN
            }
        })
        .collect();
    OccupancyGrid::from_cells(odds.geometry, cells)
}

/// Fills unknown cells of the live map, preferring segmented obstacles over the
/// historical map. All three grids must carry the same stamp and dimensions.
pub fn merge_unknown(
    base: &StampedGrid,
    segmented: &StampedGrid,
    historical: &StampedGrid,
) -> Result<OccupancyGrid, FusionError> {
    for other in [segmented, historical] {
        if !other.stamp.same_as(&base.stamp) {
            return Err(FusionError::Alignment(format!(
                "{} at t={} vs {} at t={}",
                base.source, base.stamp.t, other.source, other.stamp.t
            )));
        }
        if other.grid.geometry() != base.grid.geometry() {
            return Err(GridError::DimensionMismatch(*base.grid.geometry(), *other.grid.geometry()).into());
        }
    }
    let cells = base
        .grid
        .cells()
        .iter()
        .zip(segmented.grid.cells())
        .zip(historical.grid.cells())
        .map(|((&b, &s), &h)| {
            let pick = match (CellState::classify(b), CellState::classify(s)) {
                (CellState::Unknown, CellState::Unknown) => CellState::classify(h),
                (CellState::Unknown, seg) => seg,
                (live, _) => live,
            };
            pick.probability()
        })
        .collect();
    Ok(OccupancyGrid::from_cells(*base.grid.geometry(), cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Cell;

    fn small() -> GridGeometry {
        GridGeometry::new(20, 10, 0.2, 15, 5)
    }

    fn obs(p: f64, source: &str, t: f64) -> StampedGrid {
        StampedGrid::new(
            SpatioTemporalStamp::new(t, 0.0, 0.0, 0.0),
            OccupancyGrid::filled(small(), p),
            source,
        )
    }

    fn bayes(prior_prev: f64, ps: &[f64]) -> f64 {
        // p(x|z) ∝ Π p_k with uniform prior, normalised against Π (1 − p_k)
        let num = prior_prev * ps.iter().product::<f64>();
        let den = (1.0 - prior_prev) * ps.iter().map(|p| 1.0 - p).product::<f64>();
        num / (num + den)
    }

    #[test]
    fn unknown_observation_is_identity() {
        let t = SpatioTemporalStamp::new(0.0, 0.0, 0.0, 0.0);
        let mut prev = OddsGrid::prior(small(), t);
        prev.log_odds[7] = 1.3;
        let out = fuse_odds(&prev, &[obs(0.5, "a", 0.0)], &FusionMask::all(small()), &t).unwrap();
        assert_eq!(out, prev);
    }

    #[test]
    fn agreeing_and_conflicting_sensors() {
        let t = SpatioTemporalStamp::new(0.0, 0.0, 0.0, 0.0);
        let prev = OddsGrid::prior(small(), t);
        let mask = FusionMask::all(small());
        let out = fuse_odds(&prev, &[obs(0.75, "a", 0.0), obs(0.75, "b", 0.0)], &mask, &t).unwrap();
        assert!((out.log_odds[0].exp() - 9.0).abs() < 1e-12);
        assert!((out.probability(0) - 0.9).abs() < 1e-12);
        assert!((out.probability(0) - bayes(0.5, &[0.75, 0.75])).abs() < 1e-12);
        let out = fuse_odds(&prev, &[obs(0.75, "a", 0.0), obs(0.25, "b", 0.0)], &mask, &t).unwrap();
        assert!((out.probability(0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn latest_per_source_wins() {
        let t = SpatioTemporalStamp::new(0.2, 0.0, 0.0, 0.0);
        let prev = OddsGrid::prior(small(), t);
        let mask = FusionMask::all(small());
        let out = fuse_odds(&prev, &[obs(0.9, "a", 0.1), obs(0.2, "a", 0.2), obs(0.9, "a", 0.0)], &mask, &t).unwrap();
        assert!((out.probability(3) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn stale_observation_rejected() {
        let t = SpatioTemporalStamp::new(2.0, 0.0, 0.0, 0.0);
        let prev = OddsGrid::prior(small(), t);
        let err = fuse_odds(&prev, &[obs(0.9, "a", 0.0)], &FusionMask::all(small()), &t).unwrap_err();
        assert!(matches!(err, FusionError::Grid(GridError::StaleObservation { .. })));
    }

    #[test]
    fn log_odds_clamped() {
        let t = SpatioTemporalStamp::new(0.0, 0.0, 0.0, 0.0);
        let mut g = OddsGrid::prior(small(), t);
        let mask = FusionMask::all(small());
        for _ in 0..20 {
            g = fuse_odds(&g, &[obs(0.999, "a", 0.0)], &mask, &t).unwrap();
        }
        assert_eq!(g.log_odds[0], LOG_ODDS_LIMIT);
    }

    #[test]
    fn fov_mask_is_intersection() {
        let geo = GridGeometry::default();
        let front = SensorFov {
            mount: Point2::new(0.0, 0.0),
            heading: 0.0,
            half_angle: 0.5,
            max_range: 50.0,
        };
        let left = SensorFov {
            heading: 0.6,
            ..front
        };
        let m = FusionMask::from_fovs(geo, &[front, left]);
        let inside = geo.local_to_cell(Point2::new(20.0, 4.0)).unwrap();
        let only_front = geo.local_to_cell(Point2::new(20.0, -5.0)).unwrap();
        assert!(m.contains(geo.index(inside)));
        assert!(!m.contains(geo.index(only_front)));
        assert_eq!(FusionMask::from_fovs(geo, &[]).count(), 0);
    }

    #[test]
    fn ml_threshold_boundaries() {
        let t = SpatioTemporalStamp::default();
        let mut g = OccupancyGrid::with_geometry(small());
        g.set(Cell::new(0, 0), 0.9);
        g.set(Cell::new(0, 1), 0.75);
        g.set(Cell::new(0, 2), 0.25);
        g.set(Cell::new(0, 3), 0.7499);
        let ml = extract_ml_map(&OddsGrid::from_probabilities(&g, t));
        assert_eq!(ml.get(Cell::new(0, 0)), 1.0);
        assert_eq!(ml.get(Cell::new(0, 1)), 1.0);
        assert_eq!(ml.get(Cell::new(0, 2)), 0.0);
        assert_eq!(ml.get(Cell::new(0, 3)), 0.5);
        assert_eq!(ml.get(Cell::new(1, 0)), 0.5);
    }

    #[test]
    fn merge_truth_table() {
        let states = [(1.0, 'O'), (0.0, 'F'), (0.5, 'U')];
        // expected state for every (base, segmented, historical)
        let table = [
            "OOO", "OOO", "OOO", "OOO", "OOO", "OOO", "OOO", "OOO", "OOO", //
            "FFF", "FFF", "FFF", "FFF", "FFF", "FFF", "FFF", "FFF", "FFF", //
            "OOO", "FFF", "OFU",
        ];
        let stamp = SpatioTemporalStamp::new(1.0, 2.0, 3.0, 0.1);
        let mut k = 0;
        for (b, _) in states {
            for (s, _) in states {
                for (h, _) in states {
                    let mk = |v: f64, src: &str| StampedGrid::new(stamp, OccupancyGrid::filled(small(), v), src);
                    let out = merge_unknown(&mk(b, "base"), &mk(s, "seg"), &mk(h, "hist")).unwrap();
                    let want = if k < 18 {
                        table[k].chars().next().unwrap()
                    } else {
                        // base unknown: rows indexed by segmented, columns by historical
                        let row = table[18 + (k - 18) / 3];
                        row.chars().nth((k - 18) % 3).unwrap()
                    };
                    let got = states.iter().find(|(p, _)| *p == out.cells()[0]).unwrap().1;
                    assert_eq!(got, want, "case {k}");
                    k += 1;
                }
            }
        }
        assert_eq!(k, 27);
    }

    #[test]
    fn merge_rejects_misaligned() {
        let a = obs(0.5, "a", 0.0);
        let b = obs(0.5, "b", 0.1);
        assert!(matches!(merge_unknown(&a, &a, &b), Err(FusionError::Alignment(_))));
    }
}
