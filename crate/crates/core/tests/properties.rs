use std::f64::consts::PI;

use proptest::prelude::*;

use drivestack::fusion::{extract_ml_map, fuse_odds, FusionMask, OddsGrid};
use drivestack::geom::{normalize_angle, Aabb, Point2, Pose2D, SpatioTemporalStamp};
use drivestack::grid::{align_grid, Cell, GridGeometry, OccupancyGrid, StampedGrid, UNKNOWN};
use drivestack::mapper::{fuse_overlapping, recency_weights, LocalMapTile, RecencyDecay};
use drivestack::perception::{
    generate_virtual_scan, segment_point_cloud, Detection, PointCloud, SegmentationParams, Tracker, TrackerConfig,
};
use drivestack::planner::{piecewise_concat, Budget, CostField, Footprint, Planner, PlannerConfig, Trajectory};
use drivestack::route::{shortest_path, Edge, Metric, RoadNetwork};
use drivestack::safety::{govern, safe_speed, SafeSpeedParams};
use drivestack::supervisor::{Action, Daemon, Heartbeat, SupervisorConfig};

fn stamp(t: f64) -> SpatioTemporalStamp {
    SpatioTemporalStamp::new(t, 0.0, 0.0, 0.0)
}

fn small_geo() -> GridGeometry {
    GridGeometry::new(12, 10, 0.2, 8, 5)
}

fn prob() -> impl Strategy<Value = f64> {
    prop_oneof![Just(UNKNOWN), 0.01f64..0.99]
}

fn grid_cells(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prob(), n)
}

fn bayes(p: f64, z: f64) -> f64 {
    p * z / (p * z + (1.0 - p) * (1.0 - z))
}

fn cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec((2.0f64..12.0, -3.0f64..3.0, 0.0f64..3.5).prop_map(|(x, y, z)| [x, y, z]), 1..300)
}

fn obstacle_count(points: &[[f64; 3]], params: &SegmentationParams) -> Vec<bool> {
    let g = segment_point_cloud(
        &PointCloud {
            points: points.to_vec(),
            stamp: stamp(0.0),
        },
        params,
    )
    .unwrap();
    g.grid.cells().iter().map(|p| *p >= 0.75).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_angle_is_idempotent_and_in_range(theta in -1e4f64..1e4) {
        let a = normalize_angle(theta).unwrap();
        prop_assert!(a > -PI && a <= PI);
        prop_assert_eq!(normalize_angle(a).unwrap(), a);
        prop_assert!(((theta - a) / (2.0 * PI)).fract().abs().min(1.0 - ((theta - a) / (2.0 * PI)).fract().abs()) < 1e-9);
    }

    #[test]
    fn align_grid_only_moves_values(cells in grid_cells(120), x in -1.0f64..1.0, y in -1.0f64..1.0, th in -0.5f64..0.5) {
        let geo = small_geo();
        let obs = StampedGrid::new(stamp(0.0), OccupancyGrid::from_cells(geo, cells.clone()), "a");
        let aligned = align_grid(&obs, &SpatioTemporalStamp::new(0.1, x, y, th), 0.5).unwrap();
        prop_assert_eq!(aligned.geometry(), &geo);
        for v in aligned.cells() {
            prop_assert!(*v == UNKNOWN || cells.contains(v));
        }
        let same = align_grid(&obs, &stamp(0.1), 0.5).unwrap();
        prop_assert_eq!(same.cells(), &cells[..]);
    }

    #[test]
    fn segmentation_ignores_point_order(mut points in cloud(), seed in any::<u64>()) {
        let params = SegmentationParams::default();
        let a = obstacle_count(&points, &params);
        let n = points.len();
        for i in (1..n).rev() {
            points.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(a, obstacle_count(&points, &params));
    }

    #[test]
    fn larger_height_delta_never_adds_obstacles(points in cloud(), d1 in 0.05f64..0.6, extra in 0.0f64..0.6) {
        let lo = SegmentationParams { height_delta: d1, ..Default::default() };
        let hi = SegmentationParams { height_delta: d1 + extra, ..Default::default() };
        let (a, b) = (obstacle_count(&points, &lo), obstacle_count(&points, &hi));
        prop_assert!(a.iter().zip(&b).all(|(x, y)| *x || !*y));
    }

    #[test]
    fn lower_z_high_never_adds_obstacles(points in cloud(), z in 1.0f64..3.0, extra in 0.0f64..1.0) {
        let lo = SegmentationParams { vehicle_span: (0.3, z), ..Default::default() };
        let hi = SegmentationParams { vehicle_span: (0.3, z + extra), ..Default::default() };
        let (a, b) = (obstacle_count(&points, &lo), obstacle_count(&points, &hi));
        prop_assert!(a.iter().zip(&b).all(|(x, y)| *y || !*x));
    }

    #[test]
    fn virtual_scan_ranges_are_bounded(cells in prop::collection::vec(prop_oneof![Just(0.1), Just(0.9), Just(UNKNOWN)], 120)) {
        let geo = small_geo();
        let g = StampedGrid::new(stamp(0.0), OccupancyGrid::from_cells(geo, cells), "lidar");
        let bearings: Vec<f64> = (0..36).map(|k| -PI + 0.01 + k as f64 * (2.0 * PI / 36.0)).collect();
        let scan = generate_virtual_scan(&g, &bearings, 5.0).unwrap();
        prop_assert_eq!(scan.ranges.len(), bearings.len());
        prop_assert!(scan.ranges.iter().all(|r| *r > 0.0 && *r <= 5.0));
        prop_assert!(scan.validate().is_ok());
    }

    #[test]
    fn tracker_covariance_stays_symmetric_psd(steps in prop::collection::vec(prop::collection::vec((0.0f64..30.0, -5.0f64..5.0), 0..4), 1..25)) {
        let mut tracker = Tracker::new(TrackerConfig::default());
        for dets in steps {
            let dets: Vec<Detection> = dets
                .into_iter()
                .map(|(x, y)| Detection { x, y, length: 4.0, width: 2.0, class: None })
                .collect();
            for t in tracker.step(&dets, 0.1) {
                prop_assert!((t.covariance - t.covariance.transpose()).abs().max() < 1e-9);
                prop_assert!(t.min_covariance_eigenvalue() >= -1e-9);
            }
        }
    }

    #[test]
    fn single_observation_matches_bayes(prior in grid_cells(120), obs in grid_cells(120)) {
        let geo = small_geo();
        let t = stamp(0.0);
        let prev = OddsGrid::from_probabilities(&OccupancyGrid::from_cells(geo, prior.clone()), t);
        let out = fuse_odds(&prev, &[StampedGrid::new(t, OccupancyGrid::from_cells(geo, obs.clone()), "a")], &FusionMask::all(geo), &t).unwrap();
        for i in 0..geo.len() {
            let want = if obs[i] == UNKNOWN { prior[i] } else { bayes(prior[i], obs[i]) };
            prop_assert!((out.probability(i) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn fusion_ignores_source_order(a in grid_cells(120), b in grid_cells(120), c in grid_cells(120)) {
        let geo = small_geo();
        let t = stamp(0.0);
        let g = |cells: &Vec<f64>, name: &str| StampedGrid::new(t, OccupancyGrid::from_cells(geo, cells.clone()), name);
        let prev = OddsGrid::prior(geo, t);
        let mask = FusionMask::all(geo);
        let x = fuse_odds(&prev, &[g(&a, "a"), g(&b, "b"), g(&c, "c")], &mask, &t).unwrap();
        let y = fuse_odds(&prev, &[g(&c, "c"), g(&a, "a"), g(&b, "b")], &mask, &t).unwrap();
        prop_assert_eq!(x.log_odds(), y.log_odds());
    }

    #[test]
    fn cells_outside_the_mask_keep_their_odds(prior in grid_cells(120), obs in grid_cells(120), inside in prop::collection::vec(any::<bool>(), 120)) {
        let geo = small_geo();
        let t = stamp(0.0);
        let prev = OddsGrid::from_probabilities(&OccupancyGrid::from_cells(geo, prior), t);
        let mask = FusionMask::from_cells(geo, inside.clone());
        let out = fuse_odds(&prev, &[StampedGrid::new(t, OccupancyGrid::from_cells(geo, obs), "a")], &mask, &t).unwrap();
        for i in (0..geo.len()).filter(|i| !inside[*i]) {
            prop_assert_eq!(out.log_odds()[i], prev.log_odds()[i]);
        }
    }

    #[test]
    fn extraction_is_monotone(p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        let geo = GridGeometry::new(1, 2, 0.2, 0, 0);
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let odds = OddsGrid::from_probabilities(&OccupancyGrid::from_cells(geo, vec![lo, hi]), stamp(0.0));
        let ml = extract_ml_map(&odds);
        prop_assert!(ml.cells()[0] <= ml.cells()[1]);
    }

    #[test]
    fn recency_weights_sum_to_count(dates in prop::collection::vec(0.0f64..1e8, 1..10)) {
        let w = recency_weights(&dates, &RecencyDecay::default());
        let sum: f64 = w.iter().sum();
        prop_assert!((sum - dates.len() as f64).abs() < 1e-9);
        prop_assert!(w.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn overlapping_fusion_is_order_free_and_preserves_agreement(
        tiles in prop::collection::vec((0.0f64..1e8, 0.0f64..=1.0), 1..6),
        rot in 0usize..6,
    ) {
        let decay = RecencyDecay::default();
        let make = |k: usize, date: f64, p: f64| {
            let mut t = LocalMapTile::unknown(k as u64, Aabb::new(0.0, 0.0, 2.0, 2.0), 0.2, k as u64, date);
            for i in 0..100 {
                t.set_probability(i, p);
            }
            t
        };
        let built: Vec<LocalMapTile> = tiles.iter().enumerate().map(|(k, (d, p))| make(k, *d, *p)).collect();
        let point = Point2::new(1.1, 0.7);
        let a = fuse_overlapping(&built, point, &decay).unwrap();
        let mut rotated = built.clone();
        rotated.rotate_left(rot % built.len());
        let b = fuse_overlapping(&rotated, point, &decay).unwrap();
        prop_assert!((a - b).abs() < 1e-12);

        let same: Vec<LocalMapTile> = tiles.iter().enumerate().map(|(k, (d, _))| make(k, *d, tiles[0].1)).collect();
        let expected = built[0].probability_at(point).unwrap();
        prop_assert!((fuse_overlapping(&same, point, &decay).unwrap() - expected).abs() < 1e-9);
    }
}

fn network(edges: &[(u64, u64, f64, f64)]) -> RoadNetwork {
    let mut net = RoadNetwork::new();
    for id in 1..=6 {
        net.add_node(id, Point2::new(id as f64 * 10.0, (id % 3) as f64 * 7.0));
    }
    for (a, b, len, speed) in edges {
        if a != b && net.edge(*a, *b).is_none() {
            let e = Edge {
                to: *b,
                length: *len,
                speed_limit: *speed,
                lane_change_allowed: false,
                lane_id: 0,
            };
            net.add_edge(*a, e).unwrap();
        }
    }
    net
}

fn edge_list() -> impl Strategy<Value = Vec<(u64, u64, f64, f64)>> {
    prop::collection::vec((1u64..=6, 1u64..=6, 1.0f64..100.0, 2.0f64..30.0), 1..20)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn route_cost_never_rises_when_an_edge_gets_cheaper(edges in edge_list(), pick in any::<prop::sample::Index>(), cut in 0.1f64..1.0) {
        let net = network(&edges);
        let before = shortest_path(&net, 1, 6, Metric::Distance).map(|p| p.total_cost).ok();
        let mut cheaper = edges.clone();
        let i = pick.index(cheaper.len());
        cheaper[i].2 *= cut;
        // Keep the first occurrence semantics of `network`.
        let dup = cheaper[..i].iter().any(|e| e.0 == cheaper[i].0 && e.1 == cheaper[i].1);
        prop_assume!(!dup);
        let after = shortest_path(&network(&cheaper), 1, 6, Metric::Distance).map(|p| p.total_cost).ok();
        if let Some(b) = before {
            prop_assert!(after.is_some_and(|a| a <= b + 1e-9));
        }
    }

    #[test]
    fn route_costs_obey_the_triangle_inequality(edges in edge_list(), a in 1u64..=6, b in 1u64..=6, c in 1u64..=6) {
        prop_assume!(a != b && b != c && a != c);
        let net = network(&edges);
        let d = |x, y| shortest_path(&net, x, y, Metric::TravelTime).map(|p| p.total_cost).ok();
        if let (Some(ab), Some(bc)) = (d(a, b), d(b, c)) {
            let ac = d(a, c);
            prop_assert!(ac.is_some_and(|ac| ac <= ab + bc + 1e-9));
        }
    }

    #[test]
    fn safe_speed_is_bounded_monotone_and_continuous(x in 0.0f64..200.0, dx in 0.0f64..1e-3) {
        let p = SafeSpeedParams::default();
        let (a, b) = (safe_speed(x, &p), safe_speed(x + dx, &p));
        prop_assert!((0.0..=p.v_max).contains(&a));
        prop_assert!(b >= a);
        prop_assert!(b - a <= p.c * dx + 1e-12);
    }

    #[test]
    fn governor_never_exceeds_any_channel(map in 0.0f64..20.0, pd in prop_oneof![Just(f64::INFINITY), 0.0f64..80.0], sd in prop_oneof![Just(f64::INFINITY), 0.0f64..80.0]) {
        let p = SafeSpeedParams::default();
        let cmd = govern(map, pd, sd, &p);
        prop_assert!(cmd.v_cmd <= map.min(p.v_max));
        prop_assert!(cmd.v_cmd <= safe_speed(pd, &p));
        prop_assert!(cmd.v_cmd <= safe_speed(sd, &p));
        prop_assert!(cmd.v_cmd >= 0.0);
    }
}

fn planner() -> Planner {
    Planner::new(
        PlannerConfig {
            heading_bins: 8,
            footprint: Footprint::compact(),
            table_inner: 6,
            table_outer: 10,
            ..Default::default()
        },
        0.2,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn planning_is_deterministic(blocks in prop::collection::vec((0usize..40, 0usize..30), 0..40), gx in 2.0f64..5.0, gy in -1.5f64..1.5) {
        let geo = GridGeometry::new(40, 30, 0.2, 35, 15);
        let mut cost = CostField::uniform(geo);
        for (r, c) in blocks {
            if r < 30 {
                cost.block(Cell::new(r, c));
            }
        }
        let p = planner();
        let goal = Pose2D::new(gx, gy, 0.0);
        let a = p.plan(&cost, &Pose2D::identity(), &goal, Budget::Unlimited);
        let b = p.plan(&cost, &Pose2D::identity(), &goal, Budget::Unlimited);
        prop_assert_eq!(a.ok(), b.ok());
    }

    #[test]
    fn concatenation_keeps_the_window(bend in -0.05f64..0.05, shift in -0.5f64..0.5, ego_s in 0.0f64..10.0, window in 1.0f64..15.0) {
        let prev: Vec<Pose2D> = (0..60).map(|i| Pose2D::new(i as f64 * 0.5, bend * (i as f64 * 0.5).powi(2) / 2.0, bend * i as f64 * 0.5)).collect();
        let fresh: Vec<Pose2D> = (0..60).map(|i| Pose2D::new(i as f64 * 0.5, shift, 0.0)).collect();
        let (prev, fresh) = (Trajectory::from_poses(&prev), Trajectory::from_poses(&fresh));
        let ego = Pose2D::new(ego_s, bend * ego_s * ego_s / 2.0 + 0.1, 0.0);
        let out = piecewise_concat(&prev, &fresh, &ego, window, |_| false);
        let k = prev.nearest_index(ego.position()).unwrap();
        let s_end = prev.samples[k].s + window;
        let kept: Vec<_> = prev.samples[k..].iter().take_while(|s| s.s <= s_end).collect();
        prop_assert!(out.samples.len() >= kept.len());
        for (a, b) in kept.iter().zip(&out.samples) {
            prop_assert_eq!(**a, *b);
        }
        prop_assert!(out.samples.windows(2).all(|w| w[1].s > w[0].s));
    }
}

fn beat(module: &str, seq: u64, t: f64, sent: f64) -> Heartbeat {
    Heartbeat {
        module_id: module.into(),
        seq,
        stamp: stamp(t),
        sent_at: sent,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn silent_module_restarts_once_within_bound(kill_tick in 5u32..100) {
        let cfg = SupervisorConfig::default();
        let mut d = Daemon::new("daemon_a", "host_a", cfg, 0.0);
        d.watch_module("perception", 0.0);
        let bound = (cfg.silent_after + 1) as f64 * cfg.period;
        let kill = kill_tick as f64 * cfg.period;
        let mut restarts = Vec::new();
        for k in 1..=(kill_tick + 8) {
            let now = k as f64 * cfg.period;
            if now <= kill + 1e-9 {
                d.receive(&beat("perception", k as u64, now, now), now, 5.0);
            }
            for a in d.tick(now) {
                restarts.push((now, a));
            }
        }
        let in_window: Vec<_> = restarts.iter().filter(|(t, _)| *t > kill && *t <= kill + bound + 1e-9).collect();
        prop_assert_eq!(in_window.len(), 1);
        prop_assert_eq!(&in_window[0].1, &Action::Restart("perception".into()));
        prop_assert!(restarts.iter().all(|(t, _)| *t > kill));
    }

    #[test]
    fn parked_vehicle_never_reports_frozen(n in 5u64..200, speed in 0.0f64..0.1) {
        let cfg = SupervisorConfig::default();
        let mut d = Daemon::new("daemon_a", "host_a", cfg, 0.0);
        d.watch_module("fusion", 0.0);
        for k in 1..=n {
            let now = k as f64 * cfg.period;
            prop_assert_eq!(d.receive(&beat("fusion", k, 1.0, now), now, speed), None);
            prop_assert!(d.tick(now).is_empty());
        }
    }

    #[test]
    fn peer_loss_stops_exactly_once(silent_from in 2u32..40, extra in 10u32..200) {
        let cfg = SupervisorConfig::default();
        let mut d = Daemon::new("daemon_a", "host_a", cfg, 0.0);
        d.watch_peer("daemon_b", "host_b", 0.0);
        let mut stops = 0;
        for k in 1..=(silent_from + extra) {
            let now = k as f64 * cfg.daemon_period;
            if k <= silent_from {
                d.receive_peer(&beat("daemon_b", k as u64, now, now), now);
            }
            stops += d.tick(now).iter().filter(|a| **a == Action::EmergencyStop("daemon_b".into())).count();
        }
        prop_assert_eq!(stops, 1);
    }
}
