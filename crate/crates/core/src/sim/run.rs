//! The closed loop: sensors → perception → fusion → map query → planner → safety →
//! actuation → vehicle, on a fixed virtual clock with the supervisor watching.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{percentile, RunMetrics};
use super::route_state::RouteState;
use super::scenario::{Expectation, FaultSpec, RouteMetric, ScenarioSpec, SensorKind};
use super::sensors::{simulate_sensors, SensorFrame};
use super::vehicle::{step_vehicle, Command, VehicleLimits, VehicleState};
use super::world::{clearance, collides, World};
use super::{render, SimError};
use crate::fusion::{extract_ml_map, fuse_odds, merge_unknown, FusionMask, OddsGrid};
use crate::geom::{angle_diff, OrientedRect, Point2, Pose2D, SpatioTemporalStamp};
use crate::grid::{resample_cells, GridGeometry, OccupancyGrid, StampedGrid, FREE_THRESHOLD, OBSTACLE_THRESHOLD, UNKNOWN};
use crate::mapper::{MapperConfig, TileIndex, MANIFEST_NAME};
use crate::perception::{
    project_planar_scan_with, read_planar_scans, read_point_clouds, segment_point_cloud_with, write_planar_scans,
    write_point_clouds, Evidence, PerceptionError, SegmentationParams, TrackedObject, Tracker, TrackerConfig,
};
use crate::planner::{
    build_cost_field, piecewise_concat, reference_cells, speed_profile, stamp_dynamic_obstacles, Budget,
    CollisionChecker, CostField, Footprint, PlanError, Planner, PlannerConfig, SpeedLimit, Trajectory,
};
use crate::route::{load_network, Metric};
use crate::safety::{combine, first_obstacle_distance, govern, ControlState, LimitingSource, SafeSpeedParams, ShadowGovernor, SpeedCommand};
use crate::supervisor::{Action, ActuationBus, ActuatorCommand, ChannelId, Daemon, Heartbeat, SupervisorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Drive,
    Map,
    Replay,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Output directory; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    /// Tile storage for map mode.
    pub tiles_dir: Option<PathBuf>,
    /// Manifest of an earlier session to extend in map mode.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    /// No previous trajectory; planned from the ego.
    Fresh,
    /// Previous window kept, fresh plan appended past it.
    Spliced,
    /// The previous window collided; replaced by a plan from the ego.
    Override,
    /// Planning failed; the previous trajectory was kept.
    Kept,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub t: f64,
    pub kind: PlanKind,
    /// World-frame output trajectory.
    pub trajectory: Trajectory,
    /// For `Spliced`/`Kept`: index in the previous output where the kept stretch starts,
    /// and the number of kept samples at the front of `trajectory`.
    pub prev_start: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub pose: Pose2D,
    pub v: f64,
    pub v_cmd: f64,
    pub delta: f64,
    pub source: LimitingSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub plans: Vec<PlanRecord>,
    pub events: Vec<Event>,
    pub trace: Vec<TraceRow>,
    pub route: Vec<Point2>,
}

/// Runs a scenario; in replay mode `opts.out_dir` holds the recorded sensor logs.
pub fn run_scenario(spec: &ScenarioSpec, mode: Mode, opts: &RunOptions) -> Result<RunOutput, SimError> {
    if mode == Mode::Replay {
        let dir = opts.out_dir.as_deref().ok_or_else(|| SimError::Usage("replay needs a log directory".into()))?;
        let summary = replay_logs(dir, Some(dir))?;
        let metrics = RunMetrics {
            ticks: summary.frames as u64,
            sim_time: summary.last_t,
            ..Default::default()
        };
        return Ok(RunOutput {
            metrics,
            plans: Vec::new(),
            events: Vec::new(),
            trace: Vec::new(),
            route: Vec::new(),
        });
    }
    let mut sim = Sim::new(spec, mode, opts)?;
    sim.run()?;
    sim.finish()
}

const MODULE_DAEMON: [(&str, usize); 3] = [("perception", 0), ("fusion", 0), ("planner", 1)];
const DAEMON_IDS: [(&str, &str); 2] = [("daemon_a", "host_a"), ("daemon_b", "host_b")];
/// Tracks slower than this are treated as static.
const MOVING_TRACK_SPEED: f64 = 0.5;
/// Ego heading change that rotates the fusion frame, radians.
const FUSION_HEADING_TOLERANCE: f64 = 0.25;
/// Map mode writes the fused map into tiles once per this many ticks.
const MAP_INSERT_EVERY: u64 = 20;
/// Time at rest after which a run expected to stop ends, s.
const REST_BEFORE_END: f64 = 1.0;

struct ModuleSlot {
    name: &'static str,
    daemon: usize,
    alive: bool,
    frozen: Option<SpatioTemporalStamp>,
    last_stamp: SpatioTemporalStamp,
    seq: u64,
}

struct DaemonSlot {
    daemon: Daemon,
    alive: bool,
}

/// Raw sensor logs: one stream per sensor plus the ego poses, all appended per tick.
struct Recorder {
    poses: BufWriter<File>,
    sensors: Vec<BufWriter<File>>,
}

/// Log file of one sensor's stream inside a recording directory.
pub fn sensor_log_name(kind: SensorKind, name: &str) -> String {
    match kind {
        SensorKind::Multibeam => format!("{CLOUD_PREFIX}{name}.txt"),
        SensorKind::Planar => format!("{SCAN_PREFIX}{name}.txt"),
    }
}

const CLOUD_PREFIX: &str = "cloud_";
const SCAN_PREFIX: &str = "scan_";
const POSES_LOG: &str = "poses.txt";

struct Sim<'a> {
    spec: &'a ScenarioSpec,
    opts: &'a RunOptions,
    dt: f64,
    tick: u64,
    geo: GridGeometry,
    world: World,
    rng: ChaCha8Rng,
    limits: VehicleLimits,
    ego: VehicleState,
    route: RouteState,
    planner: Option<Planner>,
    planner_every: u64,
    safe: SafeSpeedParams,
    shadow_a: ShadowGovernor,
    shadow_b: ShadowGovernor,
    tracker: Tracker,
    tracks: Vec<TrackedObject>,
    odds: OddsGrid,
    /// Heading of the fusion frame; its origin stays on a cell lattice aligned with it.
    fusion_heading: f64,
    live: StampedGrid,
    segmented: Option<StampedGrid>,
    history: Option<TileIndex>,
    mapper: Option<TileIndex>,
    planner_prev: Option<Trajectory>,
    active: Option<Trajectory>,
    failures: u32,
    retry: bool,
    modules: Vec<ModuleSlot>,
    daemons: Vec<DaemonSlot>,
    faults_done: Vec<bool>,
    bus: ActuationBus,
    channel: ChannelId,
    estop: bool,
    goal_reached: bool,
    in_contact: bool,
    recorder: Option<Recorder>,
    /// Stamp of the latest executed tick.
    last_stamp: SpatioTemporalStamp,
    // Outputs.
    metrics: RunMetrics,
    plans: Vec<PlanRecord>,
    events: Vec<Event>,
    trace: Vec<TraceRow>,
    latencies: Vec<f64>,
    speed_sum: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl<'a> Sim<'a> {
    fn new(spec: &'a ScenarioSpec, mode: Mode, opts: &'a RunOptions) -> Result<Self, SimError> {
        let dt = 1.0 / spec.rates.base;
        let geo = GridGeometry::default();
        let net_path = spec.network_path();
        let text = fs::read_to_string(&net_path).map_err(io_err(&net_path))?;
        let config_err = |msg: String, line: usize| SimError::Config {
            file: net_path.clone(),
            line,
            msg,
        };
        let net = load_network(&text).map_err(|e| match e {
            crate::route::RouteError::Format { line, msg } => config_err(msg, line),
            other => config_err(other.to_string(), 0),
        })?;
        let metric = match spec.metric {
            RouteMetric::Distance => Metric::Distance,
            RouteMetric::Time => Metric::TravelTime,
        };
        let origin = Point2::new(spec.ego.x, spec.ego.y);
        let route = RouteState::plan(net, origin, spec.start_node, spec.goal_node, metric)
            .map_err(|e| config_err(format!("route to goal node {}: {e}", spec.goal_node), 0))?;

        let limits = VehicleLimits {
            wheelbase: spec.ego.wheelbase,
            max_accel: spec.ego.max_accel,
            max_brake: spec.ego.max_brake,
            max_steer: spec.ego.max_steer,
            max_steer_rate: spec.ego.max_steer_rate,
        };
        let ego = VehicleState {
            pose: Pose2D::new(spec.ego.x, spec.ego.y, spec.ego.theta),
            v: spec.ego.v.max(0.0),
            delta: 0.0,
        };
        let planner = spec.planner.enabled.then(|| {
            Planner::new(
                PlannerConfig {
                    heading_bins: spec.planner.heading_bins,
                    window: spec.planner.window,
                    ..PlannerConfig::default()
                },
                geo.resolution,
            )
        });
        let planner_every = ((spec.rates.base / spec.rates.planner).round() as u64).max(1);
        let safe = SafeSpeedParams {
            v_max: spec.safety.v_max,
            c: spec.safety.c,
            d: spec.safety.d,
        };
        let footprint = Footprint::vehicle();
        let shadow = ShadowGovernor {
            params: safe,
            wheelbase: spec.ego.wheelbase,
            horizon: spec.safety.shadow_horizon,
            half_width: footprint.width / 2.0 + footprint.margin,
            front: footprint.front,
        };

        let stamp0 = SpatioTemporalStamp::from_pose(0.0, ego.pose);
        let history = match spec.tiles_path() {
            Some(dir) => Some(TileIndex::restore_session(&dir.join(MANIFEST_NAME), MapperConfig::new(&dir))?),
            None => None,
        };
        let mapper = if mode == Mode::Map {
            let dir = opts
                .tiles_dir
                .clone()
                .or_else(|| opts.out_dir.as_ref().map(|d| d.join("tiles")))
                .ok_or_else(|| SimError::Usage("map mode needs a tile directory".into()))?;
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let config = MapperConfig::new(&dir);
            Some(match &opts.resume {
                Some(manifest) => TileIndex::restore_session(manifest, config)?,
                None => TileIndex::new(config, 0)?,
            })
        } else {
            None
        };

        let cfg = SupervisorConfig {
            period: dt,
            daemon_period: dt,
            ..SupervisorConfig::default()
        };
        let mut daemons: Vec<DaemonSlot> = DAEMON_IDS
            .iter()
            .map(|(id, host)| DaemonSlot {
                daemon: Daemon::new(*id, *host, cfg, 0.0),
                alive: true,
            })
            .collect();
        for i in 0..daemons.len() {
            for (j, (id, host)) in DAEMON_IDS.iter().enumerate() {
                if i != j {
                    daemons[i].daemon.watch_peer(id, host, 0.0);
                }
            }
        }
        let modules: Vec<ModuleSlot> = MODULE_DAEMON
            .iter()
            .filter(|(name, _)| *name != "planner" || spec.planner.enabled)
            .map(|&(name, daemon)| {
                daemons[daemon].daemon.watch_module(name, 0.0);
                ModuleSlot {
                    name,
                    daemon,
                    alive: true,
                    frozen: None,
                    last_stamp: stamp0,
                    seq: 0,
                }
            })
            .collect();

        let recorder = match (&opts.out_dir, spec.record) {
            (Some(dir), true) => {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                let open = |name: &str| -> Result<BufWriter<File>, SimError> {
                    let p = dir.join(name);
                    Ok(BufWriter::new(File::create(&p).map_err(io_err(&p))?))
                };
                Some(Recorder {
                    poses: open(POSES_LOG)?,
                    sensors: spec
                        .sensors
                        .iter()
                        .map(|s| open(&sensor_log_name(s.kind, &s.name)))
                        .collect::<Result<_, _>>()?,
                })
            }
            _ => None,
        };

        Ok(Self {
            spec,
            opts,
            dt,
            tick: 0,
            geo,
            world: World::new(spec),
            rng: ChaCha8Rng::seed_from_u64(opts.seed.unwrap_or(spec.seed)),
            limits,
            ego,
            route,
            planner,
            planner_every,
            safe,
            shadow_a: shadow,
            shadow_b: shadow,
            tracker: Tracker::new(TrackerConfig::default()),
            tracks: Vec::new(),
            odds: OddsGrid::prior(geo, stamp0),
            fusion_heading: ego.pose.theta,
            live: StampedGrid::new(stamp0, OccupancyGrid::with_geometry(geo), "fused"),
            segmented: None,
            history,
            mapper,
            planner_prev: None,
            active: None,
            failures: 0,
            retry: false,
            modules,
            daemons,
            faults_done: vec![false; spec.faults.len()],
            bus: ActuationBus::redundant(),
            channel: ChannelId::Primary,
            estop: false,
            goal_reached: false,
            in_contact: false,
            recorder,
            last_stamp: stamp0,
            metrics: RunMetrics {
                min_clearance: f64::INFINITY,
                ..Default::default()
            },
            plans: Vec::new(),
            events: Vec::new(),
            trace: Vec::new(),
            latencies: Vec::new(),
            speed_sum: 0.0,
        })
    }

    fn now(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    fn event(&mut self, text: impl Into<String>) {
        let t = self.now();
        self.events.push(Event { t, text: text.into() });
    }

    fn module(&mut self, name: &str) -> Option<&mut ModuleSlot> {
        self.modules.iter_mut().find(|m| m.name == name)
    }

    fn module_runs(&self, name: &str) -> bool {
        self.modules.iter().any(|m| m.name == name && m.alive && m.frozen.is_none())
    }

    fn run(&mut self) -> Result<(), SimError> {
        let steps = (self.spec.duration / self.dt).round() as u64;
        let ego_rect = |p: Pose2D| {
            let fp = Footprint::vehicle();
            OrientedRect {
                pose: p,
                rear: fp.rear,
                front: fp.front,
                half_width: fp.width / 2.0,
            }
        };
        self.check_ground_truth(ego_rect(self.ego.pose));
        let settle = (REST_BEFORE_END / self.dt).round() as u64;
        let mut at_rest = 0u64;
        while self.tick < steps {
            self.step()?;
            self.tick += 1;
            self.check_ground_truth(ego_rect(self.ego.pose));
            let stopped = self.ego.v == 0.0;
            if stopped && (self.goal_reached || self.estop) {
                break;
            }
            // A run that is expected to stop ends once the ego has stayed at rest.
            at_rest = if stopped { at_rest + 1 } else { 0 };
            if self.spec.expect == Expectation::Stop && at_rest >= settle {
                break;
            }
        }
        Ok(())
    }

    fn check_ground_truth(&mut self, rect: OrientedRect) {
        let solids = self.world.solids_at(self.now());
        let hit = collides(&rect, &solids);
        if hit && !self.in_contact {
            self.metrics.collisions += 1;
            self.event("collision");
        }
        self.in_contact = hit;
        self.metrics.min_clearance = self.metrics.min_clearance.min(clearance(&rect, &solids));
    }

    fn apply_faults(&mut self) {
        let t = self.now();
        for i in 0..self.spec.faults.len() {
            let f = &self.spec.faults[i];
            if self.faults_done[i] || f.at() > t + 1e-9 {
                continue;
            }
            self.faults_done[i] = true;
            let text = match f.clone() {
                FaultSpec::KillModule { module, .. } => {
                    if let Some(m) = self.module(&module) {
                        m.alive = false;
                    }
                    format!("fault kill_module {module}")
                }
                FaultSpec::FreezeModule { module, .. } => {
                    if let Some(m) = self.module(&module) {
                        m.frozen = Some(m.last_stamp);
                    }
                    format!("fault freeze_module {module}")
                }
                FaultSpec::KillDaemon { daemon, .. } => {
                    if let Some(d) = self.daemons.iter_mut().find(|d| d.daemon.id == daemon) {
                        d.alive = false;
                    }
                    format!("fault kill_daemon {daemon}")
                }
                FaultSpec::ChannelDown { channel, .. } => {
                    match channel.as_str() {
                        "primary" => self.bus.primary.up = false,
                        _ => {
                            if let Some(b) = &mut self.bus.backup {
                                b.up = false;
                            }
                        }
                    }
                    format!("fault channel_down {channel}")
                }
            };
            self.event(text);
        }
    }

    /// The frame the belief is carried in: the ego position snapped to a cell lattice at the
    /// held fusion heading, so that frame changes move the belief by whole cells only.
    fn fusion_target(&mut self, t: f64) -> SpatioTemporalStamp {
        anchor_stamp(&mut self.fusion_heading, t, &self.ego.pose, self.geo.resolution)
    }

    fn due(&self, period: f64) -> bool {
        let every = ((period / self.dt).round() as u64).max(1);
        self.tick % every == 0
    }

    fn realign(&self, g: &StampedGrid, stamp: &SpatioTemporalStamp) -> StampedGrid {
        realign(g, stamp)
    }

    fn step(&mut self) -> Result<(), SimError> {
        let t = self.now();
        self.apply_faults();
        let stamp = SpatioTemporalStamp::from_pose(t, self.ego.pose);
        self.last_stamp = stamp;

        // Sensors.
        let due: Vec<bool> = self.spec.sensors.iter().map(|s| self.due(s.period)).collect();
        let frame = simulate_sensors(&self.world, t, &self.ego.pose, &self.spec.sensors, |i| due[i], &mut self.rng);
        self.record(&frame, &stamp)?;

        // Perception.
        let mut observations = Vec::new();
        if self.module_runs("perception") {
            observations = self.perceive(&frame)?;
            self.tracks = self.tracker.step(&frame.detections, self.dt).to_vec();
        }

        // Fusion, in the lattice-anchored frame that planning also uses.
        let anchor = self.fusion_target(t);
        if self.module_runs("fusion") {
            self.odds = fuse_odds(&self.odds, &observations, &FusionMask::all(self.geo), &anchor)?;
            self.live = StampedGrid::new(anchor, extract_ml_map(&self.odds), "fused");
        }

        // Map query and merge, once in the anchor frame for planning and once in the
        // vehicle frame for the safety channels.
        let historical_anchor = match &mut self.history {
            Some(index) => index.local_map(self.geo, &anchor)?,
            None => OccupancyGrid::with_geometry(self.geo),
        };
        let historical_anchor = StampedGrid::new(anchor, historical_anchor, "historical");
        let empty_seg = |stamp: SpatioTemporalStamp| StampedGrid::new(stamp, OccupancyGrid::with_geometry(self.geo), "multibeam");
        let merged_anchor = {
            let live = self.realign(&self.live, &anchor);
            let seg = self.segmented.as_ref().map_or_else(|| empty_seg(anchor), |g| self.realign(g, &anchor));
            merge_unknown(&live, &seg, &historical_anchor)?
        };
        let live = self.realign(&self.live, &stamp);
        let segmented = self.segmented.as_ref().map_or_else(|| empty_seg(stamp), |g| self.realign(g, &stamp));
        let historical = self.realign(&historical_anchor, &stamp);
        let merged = merge_unknown(&live, &segmented, &historical)?;
        if let Some(index) = &mut self.mapper {
            if self.tick % MAP_INSERT_EVERY == 0 {
                index.insert_observation(&self.live.grid, &self.live.stamp)?;
            }
        }

        // Route progress.
        let s_ego = self.route.progress(self.ego.pose.position());
        if !self.goal_reached && self.ego.pose.position().dist(&self.route.end()) <= self.spec.goal_tolerance {
            self.goal_reached = true;
            self.event("goal reached");
        }

        // Planner.
        if self.planner.is_some()
            && self.module_runs("planner")
            && !self.goal_reached
            && (self.tick % self.planner_every == 0 || self.retry)
        {
            self.plan_cycle(t, &merged_anchor, &anchor.pose, s_ego);
        }

        // Control and safety.
        let (delta_ref, v_ref) = self.pursue();
        let controls = ControlState {
            delta: self.ego.delta,
            v: self.ego.v,
        };
        let sensor_maps = [&live.grid, &segmented.grid, &historical.grid];
        let planner_dist = self.planner_distance(&merged);
        let map_limit = self.route.limit().min(self.safe.v_max);
        let shadow_dist = self.shadow_a.shadow_distance(controls, &sensor_maps);
        let a = govern(map_limit, planner_dist, shadow_dist, &self.safe);
        let b = self.shadow_b.command(controls, &sensor_maps);
        let governed = combine(a, b);
        let mut v_cmd = governed.v_cmd.min(v_ref);
        let mut delta_cmd = delta_ref;
        if self.goal_reached {
            v_cmd = 0.0;
        }
        if self.estop {
            v_cmd = 0.0;
            delta_cmd = self.ego.delta;
        }

        // Supervision happens on the same tick, before actuation.
        self.supervise(t, &stamp);
        if self.estop {
            v_cmd = 0.0;
            delta_cmd = self.ego.delta;
        }

        let command = ActuatorCommand {
            speed: SpeedCommand {
                v_cmd,
                limiting_source: governed.limiting_source,
            },
            steering: delta_cmd,
        };
        match self.bus.actuate(command) {
            Ok(channel) => {
                if channel != self.channel {
                    self.channel = channel;
                    self.event(format!("actuation failover to {channel:?}").to_lowercase());
                }
            }
            Err(_) => {
                // Both channels are down: the command never reaches the vehicle, which brakes.
                if !self.estop {
                    self.estop = true;
                    self.metrics.interventions += 1;
                    self.event("emergency_stop actuation_lost");
                }
                v_cmd = 0.0;
                delta_cmd = self.ego.delta;
            }
        }

        let before = self.ego.pose.position();
        self.ego = step_vehicle(&self.ego, Command { v: v_cmd, delta: delta_cmd }, self.dt, &self.limits);
        self.metrics.distance += before.dist(&self.ego.pose.position());
        self.speed_sum += self.ego.v;
        self.metrics.max_speed = self.metrics.max_speed.max(self.ego.v);
        self.trace.push(TraceRow {
            t,
            pose: self.ego.pose,
            v: self.ego.v,
            v_cmd,
            delta: self.ego.delta,
            source: governed.limiting_source,
        });
        Ok(())
    }

    fn record(&mut self, frame: &SensorFrame, stamp: &SpatioTemporalStamp) -> Result<(), SimError> {
        let Some(rec) = &mut self.recorder else {
            return Ok(());
        };
        let dir = self.opts.out_dir.clone().unwrap_or_default();
        for (i, cloud) in &frame.clouds {
            let text = write_point_clouds(std::slice::from_ref(cloud));
            rec.sensors[*i].write_all(text.as_bytes()).map_err(io_err(&dir))?;
        }
        for (i, scan) in &frame.scans {
            let text = write_planar_scans(std::slice::from_ref(scan));
            rec.sensors[*i].write_all(text.as_bytes()).map_err(io_err(&dir))?;
        }
        let p = stamp.pose;
        writeln!(rec.poses, "{} {} {} {}", stamp.t, p.x, p.y, p.theta).map_err(io_err(&dir))?;
        Ok(())
    }

    fn perceive(&mut self, frame: &SensorFrame) -> Result<Vec<StampedGrid>, SimError> {
        let mut out = Vec::new();
        for (i, cloud) in &frame.clouds {
            match segment_point_cloud_with(cloud, &SegmentationParams::default(), self.geo, Evidence::default()) {
                Ok(mut g) => {
                    g.source = self.spec.sensors[*i].name.clone();
                    self.segmented = Some(g.clone());
                    out.push(g);
                }
                Err(PerceptionError::EmptyInput) => {}
                Err(e) => return Err(e.into()),
            }
        }
        for (i, scan) in &frame.scans {
            let name = &self.spec.sensors[*i].name;
            out.push(project_planar_scan_with(scan, 0.0, name, self.geo, Evidence::default())?);
        }
        Ok(out)
    }

    /// One planning cycle on `merged`, a map in the vehicle-like frame `base`.
    fn plan_cycle(&mut self, t: f64, merged: &OccupancyGrid, base: &Pose2D, s_ego: f64) {
        let planner = self.planner.clone().expect("planner enabled");
        let geo = self.geo;
        let ego = self.ego.pose;
        let ego_inv = base.inverse();
        let base = *base;
        let spec = &self.spec.planner;

        let mut map = merged.clone();
        let moving: Vec<TrackedObject> = self
            .tracks
            .iter()
            .filter(|tr| tr.speed() > MOVING_TRACK_SPEED)
            .cloned()
            .collect();
        stamp_dynamic_obstacles(&mut map, &base, &moving, planner.config.dynamic_horizon);
        let reference = self.route.slice(s_ego - 5.0, s_ego + spec.lookahead + 20.0);
        let cells = reference_cells(&geo, &base, &reference);
        let cost = match build_cost_field(&map, &cells, &[], &planner.config.cost) {
            Ok(c) => c,
            Err(e) => return self.plan_failed(t, e, s_ego, &map, &base),
        };
        let checker = CollisionChecker::new(planner.masks(), geo, cost.blocked_mask());
        let free_local = |p: &Pose2D| match planner.state_of(&geo, p) {
            Some(s) => {
                let i = geo.index(s.cell);
                !cost.is_blocked(i) && !checker.collides(i, s.heading_bin)
            }
            None => false,
        };
        let collides_world = |p: &Pose2D| {
            let local = ego_inv.compose(p);
            planner.state_of(&geo, &local).is_some() && !free_local(&local)
        };

        let Some(goal) = self.pick_goal(s_ego, &ego_inv, &free_local) else {
            return self.plan_failed(t, PlanError::InvalidGoal, s_ego, &map, &base);
        };
        let budget = if spec.synthetic_latency_ms > spec.budget_ms {
            let scaled = spec.max_expansions as f64 * spec.budget_ms / spec.synthetic_latency_ms;
            Budget::Expansions(scaled.floor() as usize)
        } else {
            Budget::Expansions(spec.max_expansions)
        };
        let timed_plan = |sim: &mut Self, cost: &CostField, start: &Pose2D| {
            let began = Instant::now();
            let r = planner.plan(cost, start, &goal, budget);
            sim.latencies.push(began.elapsed().as_secs_f64() * 1e3);
            r
        };

        let prev = self.planner_prev.clone().filter(|p| !p.is_empty());
        let outcome = match prev {
            None => timed_plan(self, &cost, &ego_inv.compose(&ego)).map(|f| (PlanKind::Fresh, f.to_world(&base), 0, 0)),
            Some(prev) => {
                let k = prev.nearest_index(ego.position()).unwrap_or(0);
                let s_end = prev.samples[k].s + planner.config.window;
                let mut m = k;
                while m + 1 < prev.samples.len() && prev.samples[m + 1].s <= s_end {
                    m += 1;
                }
                // Hand over at the first lattice state at or past the window end so the new
                // search starts exactly on the kept path.
                let on_lattice = |p: &Pose2D| {
                    let local = ego_inv.compose(p);
                    planner.state_of(&geo, &local).is_some_and(|st| {
                        let q = planner.pose_of(&geo, &st);
                        q.position().dist(&local.position()) < 1e-6 && angle_diff(q.theta, local.theta).abs() < 1e-6
                    })
                };
                if let Some(j) = (m..prev.samples.len()).find(|&j| on_lattice(&prev.samples[j].pose)) {
                    m = j;
                }
                if prev.samples[k..=m].iter().any(|s| collides_world(&s.pose)) {
                    timed_plan(self, &cost, &ego_inv.compose(&ego)).map(|f| (PlanKind::Override, f.to_world(&base), 0, 0))
                } else {
                    let start = ego_inv.compose(&prev.samples[m].pose);
                    match timed_plan(self, &cost, &start) {
                        Ok(fresh) => {
                            let window = prev.samples[m].s - prev.samples[k].s + 1e-9;
                            let out = piecewise_concat(&prev, &fresh.to_world(&base), &ego, window, collides_world);
                            Ok((PlanKind::Spliced, out, k, m - k + 1))
                        }
                        Err(e) => {
                            let kept = Trajectory {
                                samples: prev.samples[k..].to_vec(),
                                partial: prev.partial,
                                cost: prev.cost,
                            };
                            let n = kept.len();
                            self.record_plan(t, PlanKind::Kept, kept, k, n);
                            return self.plan_failed(t, e, s_ego, &map, &base);
                        }
                    }
                }
            }
        };
        match outcome {
            Ok((kind, traj, prev_start, kept)) => {
                self.failures = 0;
                self.retry = false;
                if traj.partial {
                    self.metrics.partial_plans += 1;
                }
                if kind == PlanKind::Override {
                    self.metrics.overrides += 1;
                    self.event("plan override: window in collision");
                }
                self.record_plan(t, kind, traj, prev_start, kept);
            }
            Err(e) => self.plan_failed(t, e, s_ego, &map, &base),
        }
    }

    fn record_plan(&mut self, t: f64, kind: PlanKind, traj: Trajectory, prev_start: usize, kept: usize) {
        let spec = &self.spec.planner;
        let limit = SpeedLimit::Uniform(self.route.limit().min(self.safe.v_max));
        let profiled = speed_profile(&traj, &limit, spec.a_lat_max, spec.a_lon_max);
        self.metrics.plans += 1;
        self.planner_prev = Some(profiled.clone());
        self.active = Some(profiled.clone());
        self.plans.push(PlanRecord {
            t,
            kind,
            trajectory: profiled,
            prev_start,
            kept,
        });
    }

    /// Farthest collision-free route pose within the look-ahead and the grid.
    fn pick_goal(&self, s_ego: f64, ego_inv: &Pose2D, free: impl Fn(&Pose2D) -> bool) -> Option<Pose2D> {
        let total = self.route.length();
        let far = (s_ego + self.spec.planner.lookahead).min(total);
        let mut s = far;
        while s > s_ego + 2.0 {
            let local = ego_inv.compose(&self.route.pose_at(s));
            if free(&local) {
                return Some(local);
            }
            s -= 1.0;
        }
        None
    }

    fn plan_failed(&mut self, _t: f64, e: PlanError, s_ego: f64, map: &OccupancyGrid, base: &Pose2D) {
        self.metrics.plan_failures += 1;
        self.failures += 1;
        self.retry = true;
        if self.failures < self.spec.planner.reroute_after {
            return;
        }
        self.failures = 0;
        // Find the first blocked point on the route ahead and block its edge.
        let ego_inv = base.inverse();
        let step = self.geo.resolution / 2.0;
        let reach = self.geo.anchor_row as f64 * self.geo.resolution;
        let end = (s_ego + reach).min(self.route.length());
        let mut blocked = None;
        let mut s = s_ego;
        while s <= end {
            let local = ego_inv.transform_point(self.route.pose_at(s).position());
            if self.geo.local_to_cell(local).is_some_and(|c| map.is_obstacle(c)) {
                blocked = Some(self.route.segment_at(s));
                break;
            }
            s += step;
        }
        let text = match blocked {
            None => format!("reroute skipped after {e}: no blocked route point in view"),
            Some(seg) => match self.route.reroute(seg) {
                Ok((from, to)) => {
                    self.metrics.reroutes += 1;
                    self.planner_prev = None;
                    format!("reroute: edge {from}->{to} blocked")
                }
                Err(err) => format!("reroute failed: {err}"),
            },
        };
        self.event(text);
    }

    /// Pure pursuit on the active trajectory; without one, hold course at the cruise speed
    /// (planner disabled) or stop (planner enabled but nothing planned yet).
    fn pursue(&self) -> (f64, f64) {
        let Some(traj) = self.active.as_ref().filter(|t| !t.is_empty()) else {
            let cruise = if self.planner.is_some() { 0.0 } else { self.spec.ego.v };
            return (0.0, cruise);
        };
        let ego = self.ego.pose;
        let k = traj.nearest_index(ego.position()).unwrap_or(0);
        let ld = (3.0 + 0.6 * self.ego.v).clamp(3.0, 15.0);
        let s_target = traj.samples[k].s + ld;
        let j = (k..traj.len()).find(|&i| traj.samples[i].s >= s_target).unwrap_or(traj.len() - 1);
        let local = ego.inverse_transform_point(traj.samples[j].pose.position());
        let d2 = local.x * local.x + local.y * local.y;
        let delta = if d2 < 1e-6 {
            0.0
        } else {
            (2.0 * local.y / d2 * self.limits.wheelbase).atan()
        };
        (delta, traj.samples[k].v)
    }

    /// Distance along the active trajectory to the first obstacle in the merged map.
    fn planner_distance(&self, merged: &OccupancyGrid) -> f64 {
        let Some(traj) = self.active.as_ref().filter(|t| !t.is_empty()) else {
            return f64::INFINITY;
        };
        let ego_inv = self.ego.pose.inverse();
        let k = traj.nearest_index(self.ego.pose.position()).unwrap_or(0);
        let s0 = traj.samples[k].s;
        let mut poses = Vec::new();
        let mut s = Vec::new();
        let mut last = f64::NEG_INFINITY;
        for smp in &traj.samples[k..] {
            if smp.s - last < 0.2 && smp.s - s0 > 0.0 {
                continue;
            }
            last = smp.s;
            poses.push(ego_inv.compose(&smp.pose));
            s.push(smp.s - s0);
        }
        first_obstacle_distance(&poses, &s, merged, self.shadow_a.half_width, self.shadow_a.front)
    }

    fn supervise(&mut self, t: f64, stamp: &SpatioTemporalStamp) {
        let ego_speed = self.ego.v;
        let mut actions: Vec<Action> = Vec::new();
        let mut beats: Vec<(usize, Heartbeat)> = Vec::new();
        for m in &mut self.modules {
            if !m.alive {
                continue;
            }
            let s = m.frozen.unwrap_or(*stamp);
            m.last_stamp = s;
            m.seq += 1;
            beats.push((
                m.daemon,
                Heartbeat {
                    module_id: m.name.to_string(),
                    seq: m.seq,
                    stamp: s,
                    sent_at: t,
                },
            ));
        }
        for (d, hb) in &beats {
            let slot = &mut self.daemons[*d];
            if slot.alive {
                actions.extend(slot.daemon.receive(hb, t, ego_speed));
            }
        }
        let peer_beats: Vec<(usize, Heartbeat)> = self
            .daemons
            .iter_mut()
            .enumerate()
            .filter(|(_, d)| d.alive)
            .map(|(i, d)| (i, d.daemon.heartbeat(*stamp, t)))
            .collect();
        for (i, d) in self.daemons.iter_mut().enumerate() {
            if !d.alive {
                continue;
            }
            for (j, hb) in &peer_beats {
                if *j != i {
                    d.daemon.receive_peer(hb, t);
                }
            }
        }
        for d in &mut self.daemons {
            if d.alive {
                actions.extend(d.daemon.tick(t));
            }
        }
        for a in actions {
            self.event(a.to_string());
            match a {
                Action::Restart(name) => {
                    self.metrics.restarts += 1;
                    self.restart_module(&name, stamp);
                }
                Action::Escalate(_) | Action::EmergencyStop(_) => {
                    self.metrics.interventions += 1;
                    self.estop = true;
                }
            }
        }
    }

    fn restart_module(&mut self, name: &str, stamp: &SpatioTemporalStamp) {
        if let Some(m) = self.module(name) {
            m.alive = true;
            m.frozen = None;
        }
        match name {
            "perception" => {
                self.tracker = Tracker::new(TrackerConfig::default());
                self.tracks.clear();
                self.segmented = None;
            }
            "fusion" => {
                self.odds = OddsGrid::prior(self.geo, *stamp);
            }
            "planner" => {
                self.planner_prev = None;
                self.failures = 0;
            }
            _ => {}
        }
    }

    fn finish(mut self) -> Result<RunOutput, SimError> {
        let m = &mut self.metrics;
        m.ticks = self.tick;
        m.sim_time = self.tick as f64 * self.dt;
        m.mean_speed = if self.tick > 0 { self.speed_sum / self.tick as f64 } else { 0.0 };
        m.final_speed = self.ego.v;
        m.goal_reached = self.goal_reached;
        let s_final = self.route.progress(self.ego.pose.position());
        let total = self.route.length();
        self.metrics.route_completion = if self.goal_reached || total <= 0.0 {
            1.0
        } else {
            (s_final / total).clamp(0.0, 1.0)
        };
        self.metrics.final_x = self.ego.pose.x;
        self.metrics.final_y = self.ego.pose.y;
        self.metrics.final_theta = self.ego.pose.theta;
        self.metrics.plan_latency_p50_ms = percentile(&self.latencies, 50.0);
        self.metrics.plan_latency_p95_ms = percentile(&self.latencies, 95.0);
        if let Some(rec) = &mut self.recorder {
            for w in std::iter::once(&mut rec.poses).chain(rec.sensors.iter_mut()) {
                w.flush().map_err(io_err(Path::new("recording")))?;
            }
        }
        if let Some(index) = &mut self.mapper {
            let manifest = index.save_session()?;
            self.events.push(Event {
                t: self.tick as f64 * self.dt,
                text: format!("tile manifest {}", manifest.display()),
            });
        }
        let out = RunOutput {
            metrics: self.metrics.clone(),
            plans: std::mem::take(&mut self.plans),
            events: std::mem::take(&mut self.events),
            trace: std::mem::take(&mut self.trace),
            route: self.route.points.clone(),
        };
        if let Some(dir) = self.opts.out_dir.clone() {
            self.write_outputs(&dir, &out)?;
        }
        Ok(out)
    }

    fn write_outputs(&mut self, dir: &Path, out: &RunOutput) -> Result<(), SimError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let write = |name: &str, bytes: &[u8]| -> Result<(), SimError> {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(io_err(&p))
        };
        write("metrics.txt", out.metrics.to_text().as_bytes())?;
        write("timing.txt", out.metrics.timing_text().as_bytes())?;
        write("trajectory.log", trajectory_log(&out.plans).as_bytes())?;
        let mut events = String::new();
        for e in &out.events {
            let _ = writeln!(events, "{:.2} {}", e.t, e.text);
        }
        write("events.log", events.as_bytes())?;
        let mut trace = String::from("# t x y theta v v_cmd delta limiting_source\n");
        for r in &out.trace {
            let _ = writeln!(
                trace,
                "{} {} {} {} {} {} {} {}",
                r.t, r.pose.x, r.pose.y, r.pose.theta, r.v, r.v_cmd, r.delta, r.source
            );
        }
        write("speed.txt", trace.as_bytes())?;
        let live = self.realign(&self.live, &self.last_stamp);
        write("map_final.pgm", &live.grid.to_pgm())?;
        let solids = self.world.solids_at(self.now());
        let path: Vec<Point2> = out.trace.iter().map(|r| r.pose.position()).collect();
        let last_plan = out.plans.last().map(|p| &p.trajectory);
        render::write_png(
            &dir.join("run.png"),
            &render::render_run(&solids, &out.route, &path, last_plan),
        )?;
        Ok(())
    }
}

/// The ego pose snapped to a cell lattice at a held heading. The heading follows the ego
/// only once they differ by more than a tolerance.
pub fn anchor_stamp(heading: &mut f64, t: f64, ego: &Pose2D, resolution: f64) -> SpatioTemporalStamp {
    if angle_diff(ego.theta, *heading).abs() > FUSION_HEADING_TOLERANCE {
        *heading = ego.theta;
    }
    let frame = Pose2D::new(0.0, 0.0, *heading);
    let local = frame.inverse_transform_point(ego.position());
    let snap = |v: f64| (v / resolution).round() * resolution;
    let p = frame.transform_point(Point2::new(snap(local.x), snap(local.y)));
    SpatioTemporalStamp::new(t, p.x, p.y, *heading)
}

/// `g` re-expressed at `stamp`, unknown where it has no coverage.
pub fn realign(g: &StampedGrid, stamp: &SpatioTemporalStamp) -> StampedGrid {
    if g.stamp.same_as(stamp) {
        return g.clone();
    }
    let geo = *g.grid.geometry();
    let cells = resample_cells(&geo, g.grid.cells(), &g.stamp.pose, &stamp.pose, UNKNOWN);
    StampedGrid::new(*stamp, OccupancyGrid::from_cells(geo, cells), g.source.clone())
}

/// The trajectory log: every plan's output at ≤ 0.2 m spacing, grouped by plan time.
pub fn trajectory_log(plans: &[PlanRecord]) -> String {
    let mut s = String::from("# t x y theta s v_target\n");
    for p in plans {
        s.push_str(&decimate(&p.trajectory, 0.2).to_log(p.t));
    }
    s
}

/// Keeps the first, last, and every sample at least `spacing` beyond the last kept one.
pub fn decimate(traj: &Trajectory, spacing: f64) -> Trajectory {
    let mut out = Trajectory {
        samples: Vec::new(),
        ..traj.clone()
    };
    let n = traj.samples.len();
    for (i, smp) in traj.samples.iter().enumerate() {
        let keep = match out.samples.last() {
            None => true,
            Some(l) => i + 1 == n || smp.s - l.s >= spacing - 1e-9,
        };
        if keep {
            out.samples.push(*smp);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySummary {
    pub frames: usize,
    pub last_t: f64,
    pub obstacle_cells: usize,
    pub free_cells: usize,
    pub map: OccupancyGrid,
}

/// Re-runs perception and fusion over a recording (`poses.txt` plus one `cloud_<sensor>.txt`
/// or `scan_<sensor>.txt` per sensor), writing the final map and a summary to `out_dir`.
/// Without injected faults the final map equals the live run's `map_final.pgm`.
pub fn replay_logs(log_dir: &Path, out_dir: Option<&Path>) -> Result<ReplaySummary, SimError> {
    let read = |p: &Path| -> Result<String, SimError> { fs::read_to_string(p).map_err(io_err(p)) };
    let poses_path = log_dir.join(POSES_LOG);
    let mut stamps = Vec::new();
    for (i, line) in read(&poses_path)?.lines().enumerate() {
        let f: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        match f.as_deref() {
            Ok([t, x, y, th]) => stamps.push(SpatioTemporalStamp::new(*t, *x, *y, *th)),
            Ok([]) => {}
            _ => {
                return Err(SimError::Config {
                    file: poses_path.clone(),
                    line: i + 1,
                    msg: "expected `t x y theta`".into(),
                })
            }
        }
    }
    let Some(first) = stamps.first().copied() else {
        return Err(SimError::Usage(format!("{} holds no poses", poses_path.display())));
    };

    let mut entries: Vec<PathBuf> = fs::read_dir(log_dir)
        .map_err(io_err(log_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    let mut clouds = Vec::new();
    let mut scans = Vec::new();
    for path in entries {
        let Some(file) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(stem) = file.strip_suffix(".txt") else { continue };
        if let Some(name) = stem.strip_prefix(CLOUD_PREFIX) {
            clouds.push((name.to_string(), read_point_clouds(&read(&path)?)?, 0usize));
        } else if let Some(name) = stem.strip_prefix(SCAN_PREFIX) {
            scans.push((name.to_string(), read_planar_scans(&read(&path)?)?, 0usize));
        }
    }

    let geo = GridGeometry::default();
    let mask = FusionMask::all(geo);
    let mut heading = first.pose.theta;
    let mut odds = OddsGrid::prior(geo, first);
    let mut live = StampedGrid::new(first, OccupancyGrid::with_geometry(geo), "fused");
    for stamp in &stamps {
        let mut obs = Vec::new();
        for (name, stream, next) in &mut clouds {
            while *next < stream.len() && stream[*next].stamp.t <= stamp.t {
                let cloud = &stream[*next];
                *next += 1;
                if cloud.stamp.t < stamp.t {
                    continue;
                }
                match segment_point_cloud_with(cloud, &SegmentationParams::default(), geo, Evidence::default()) {
                    Ok(mut g) => {
                        g.source = name.clone();
                        obs.push(g);
                    }
                    Err(PerceptionError::EmptyInput) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        for (name, stream, next) in &mut scans {
            while *next < stream.len() && stream[*next].stamp.t <= stamp.t {
                let scan = &stream[*next];
                *next += 1;
                if scan.stamp.t == stamp.t {
                    obs.push(project_planar_scan_with(scan, 0.0, name, geo, Evidence::default())?);
                }
            }
        }
        let anchor = anchor_stamp(&mut heading, stamp.t, &stamp.pose, geo.resolution);
        odds = fuse_odds(&odds, &obs, &mask, &anchor)?;
        live = StampedGrid::new(anchor, extract_ml_map(&odds), "fused");
    }
    let last = *stamps.last().expect("non-empty");
    let map = realign(&live, &last).grid;
    let summary = ReplaySummary {
        frames: stamps.len(),
        last_t: last.t,
        obstacle_cells: map.cells().iter().filter(|p| **p >= OBSTACLE_THRESHOLD).count(),
        free_cells: map.cells().iter().filter(|p| **p <= FREE_THRESHOLD).count(),
        map,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let p = dir.join("replay_map.pgm");
        fs::write(&p, summary.map.to_pgm()).map_err(io_err(&p))?;
        let p = dir.join("replay.txt");
        let text = format!(
            "frames = {}\nlast_t = {}\nobstacle_cells = {}\nfree_cells = {}\n",
            summary.frames, summary.last_t, summary.obstacle_cells, summary.free_cells
        );
        fs::write(&p, text).map_err(io_err(&p))?;
    }
    Ok(summary)
}
