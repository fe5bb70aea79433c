//! Scenario files (TOML).
//!
//! ```toml
//! seed = 7
//! duration = 30.0
//! network = "roads.net"        # relative to the scenario file
//! goal_node = 4
//! expect = "goal"              # goal | stop | goal_or_stop
//!
//! [ego]
//! x = 0.0
//! y = 0.0
//! theta = 0.0
//! v = 5.0
//!
//! [[obstacles]]
//! shape = "rect"               # rect | circle
//! x = 40.0
//! y = 0.0
//! length = 2.0
//! width = 2.0
//! appear_at = 10.0             # optional
//!
//! [[agents]]
//! class = "car"
//! speed = 5.0
//! waypoints = [[60.0, -10.0], [60.0, 10.0]]
//!
//! [[sensors]]
//! name = "multibeam"
//! kind = "multibeam"           # multibeam | planar
//! max_range = 60.0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::SimError;
use crate::route::NodeId;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub duration: f64,
    /// Road network file, relative to the scenario file.
    pub network: PathBuf,
    pub goal_node: NodeId,
    #[serde(default)]
    pub start_node: Option<NodeId>,
    #[serde(default)]
    pub metric: RouteMetric,
    #[serde(default)]
    pub expect: Expectation,
    #[serde(default = "default_goal_tolerance")]
    pub goal_tolerance: f64,
    pub ego: EgoSpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default = "default_sensors")]
    pub sensors: Vec<SensorSpec>,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub planner: PlannerSpec,
    #[serde(default)]
    pub safety: SafetySpec,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    /// Historical tile directory (manifest inside) used as the prior map.
    #[serde(default)]
    pub tiles: Option<PathBuf>,
    /// Write raw sensor logs for `replay`.
    #[serde(default)]
    pub record: bool,
    /// Directory the scenario was loaded from; set by the loader.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_goal_tolerance() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteMetric {
    Distance,
    #[default]
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    #[default]
    Goal,
    Stop,
    GoalOrStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSpec {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    #[serde(default)]
    pub v: f64,
    #[serde(default = "default_wheelbase")]
    pub wheelbase: f64,
    #[serde(default = "default_max_accel")]
    pub max_accel: f64,
    #[serde(default = "default_max_brake")]
    pub max_brake: f64,
    #[serde(default = "default_max_steer")]
    pub max_steer: f64,
    #[serde(default = "default_max_steer_rate")]
    pub max_steer_rate: f64,
}

fn default_wheelbase() -> f64 {
    2.7
}
fn default_max_accel() -> f64 {
    2.0
}
fn default_max_brake() -> f64 {
    17.0
}
fn default_max_steer() -> f64 {
    0.6
}
fn default_max_steer_rate() -> f64 {
    0.8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rect,
    Circle,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub shape: Shape,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub length: f64,
    #[serde(default)]
    pub width: f64,
    #[serde(default)]
    pub radius: f64,
    #[serde(default = "default_height")]
    pub height: f64,
    /// Obstacle exists from this time on.
    #[serde(default)]
    pub appear_at: f64,
}

fn default_height() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    #[serde(default = "default_class")]
    pub class: String,
    #[serde(default = "default_agent_length")]
    pub length: f64,
    #[serde(default = "default_agent_width")]
    pub width: f64,
    pub speed: f64,
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    pub start_time: f64,
}

fn default_class() -> String {
    "car".into()
}
fn default_agent_length() -> f64 {
    4.5
}
fn default_agent_width() -> f64 {
    1.8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Multibeam,
    Planar,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub name: String,
    pub kind: SensorKind,
    #[serde(default)]
    pub mount_x: f64,
    #[serde(default)]
    pub mount_y: f64,
    #[serde(default)]
    pub heading: f64,
    /// Half of the horizontal field of view, radians.
    #[serde(default = "default_half_fov")]
    pub half_fov: f64,
    #[serde(default = "default_max_range")]
    pub max_range: f64,
    /// Horizontal angular step, radians.
    #[serde(default = "default_angular_step")]
    pub angular_step: f64,
    #[serde(default)]
    pub false_positive: f64,
    #[serde(default)]
    pub false_negative: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_mount_height")]
    pub mount_height: f64,
}

fn default_half_fov() -> f64 {
    std::f64::consts::PI
}
fn default_max_range() -> f64 {
    60.0
}
fn default_angular_step() -> f64 {
    0.5f64.to_radians()
}
fn default_period() -> f64 {
    0.1
}
fn default_mount_height() -> f64 {
    1.8
}

fn default_sensors() -> Vec<SensorSpec> {
    vec![
        SensorSpec {
            name: "multibeam".into(),
            kind: SensorKind::Multibeam,
            mount_x: -1.0,
            mount_y: 0.0,
            heading: 0.0,
            half_fov: std::f64::consts::PI,
            max_range: 60.0,
            angular_step: 0.5f64.to_radians(),
            false_positive: 0.0,
            false_negative: 0.0,
            period: 0.1,
            mount_height: 1.8,
        },
        SensorSpec {
            name: "planar_front".into(),
            kind: SensorKind::Planar,
            mount_x: 0.9,
            mount_y: 0.0,
            heading: 0.0,
            half_fov: 100f64.to_radians(),
            max_range: 50.0,
            angular_step: 0.25f64.to_radians(),
            false_positive: 0.0,
            false_negative: 0.0,
            period: 0.05,
            mount_height: 0.5,
        },
    ]
}

/// Module rates, Hz. All default to the 20 Hz base clock.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    #[serde(default = "default_rate")]
    pub base: f64,
    #[serde(default = "default_rate")]
    pub planner: f64,
}

fn default_rate() -> f64 {
    20.0
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            base: 20.0,
            planner: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSpec {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_heading_bins")]
    pub heading_bins: usize,
    /// Deterministic search budget.
    #[serde(default = "default_expansions")]
    pub max_expansions: usize,
    #[serde(default = "default_budget_ms")]
    pub budget_ms: f64,
    /// Latency charged to every plan; above `budget_ms` the search is cut short.
    #[serde(default)]
    pub synthetic_latency_ms: f64,
    #[serde(default = "default_lookahead")]
    pub lookahead: f64,
    #[serde(default = "default_window")]
    pub window: f64,
    #[serde(default = "default_a_lat")]
    pub a_lat_max: f64,
    #[serde(default = "default_a_lon")]
    pub a_lon_max: f64,
    /// Consecutive failed plans before the route is re-queried.
    #[serde(default = "default_reroute_after")]
    pub reroute_after: u32,
}

fn yes() -> bool {
    true
}
fn default_heading_bins() -> usize {
    72
}
fn default_expansions() -> usize {
    40_000
}
fn default_budget_ms() -> f64 {
    80.0
}
fn default_lookahead() -> f64 {
    40.0
}
fn default_window() -> f64 {
    10.0
}
fn default_a_lat() -> f64 {
    2.0
}
fn default_a_lon() -> f64 {
    2.0
}
fn default_reroute_after() -> u32 {
    10
}

impl Default for PlannerSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            heading_bins: default_heading_bins(),
            max_expansions: default_expansions(),
            budget_ms: default_budget_ms(),
            synthetic_latency_ms: 0.0,
            lookahead: default_lookahead(),
            window: default_window(),
            a_lat_max: default_a_lat(),
            a_lon_max: default_a_lon(),
            reroute_after: default_reroute_after(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetySpec {
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_d")]
    pub d: f64,
    #[serde(default = "default_shadow_horizon")]
    pub shadow_horizon: f64,
}

fn default_v_max() -> f64 {
    16.67
}
fn default_c() -> f64 {
    1.0
}
fn default_d() -> f64 {
    -0.5
}
fn default_shadow_horizon() -> f64 {
    40.0
}

impl Default for SafetySpec {
    fn default() -> Self {
        Self {
            v_max: default_v_max(),
            c: default_c(),
            d: default_d(),
            shadow_horizon: default_shadow_horizon(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultSpec {
    /// The module stops running (no output, no heartbeats).
    KillModule { module: String, at: f64 },
    /// The module keeps beating with its last stamp.
    FreezeModule { module: String, at: f64 },
    /// A supervising daemon stops.
    KillDaemon { daemon: String, at: f64 },
    /// An actuation channel goes down.
    ChannelDown { channel: String, at: f64 },
}

impl FaultSpec {
    pub fn at(&self) -> f64 {
        match self {
            FaultSpec::KillModule { at, .. }
            | FaultSpec::FreezeModule { at, .. }
            | FaultSpec::KillDaemon { at, .. }
            | FaultSpec::ChannelDown { at, .. } => *at,
        }
    }
}

pub const MODULES: [&str; 3] = ["perception", "fusion", "planner"];
pub const DAEMONS: [&str; 2] = ["daemon_a", "daemon_b"];

impl ScenarioSpec {
    /// Parses scenario text; `origin` names the file in diagnostics.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, SimError> {
        let mut spec: ScenarioSpec = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1)).unwrap_or(0);
            SimError::Config {
                file: origin.to_path_buf(),
                line,
                msg: e.message().to_string(),
            }
        })?;
        spec.base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        spec.validate(origin, text)?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|e| SimError::Config {
            file: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    pub fn network_path(&self) -> PathBuf {
        self.base_dir.join(&self.network)
    }

    pub fn tiles_path(&self) -> Option<PathBuf> {
        self.tiles.as_ref().map(|t| self.base_dir.join(t))
    }

    fn validate(&self, origin: &Path, text: &str) -> Result<(), SimError> {
        let err = |key: &str, msg: String| SimError::Config {
            file: origin.to_path_buf(),
            line: line_of(text, key),
            msg,
        };
        if !(self.duration > 0.0) {
            return Err(err("duration", format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.rates.base > 0.0 && self.rates.planner > 0.0 && (10.0..=100.0).contains(&self.rates.base)) {
            return Err(err("rates", "rates must be positive and the base rate within 10..=100 Hz".into()));
        }
        if !self.network_path().is_file() {
            return Err(err("network", format!("network file {} not found", self.network_path().display())));
        }
        if let Some(t) = self.tiles_path() {
            if !t.join(crate::mapper::MANIFEST_NAME).is_file() {
                return Err(err("tiles", format!("no tile manifest in {}", t.display())));
            }
        }
        if self.planner.heading_bins < 8 || self.planner.heading_bins % 4 != 0 {
            return Err(err("heading_bins", "heading_bins must be a multiple of 4, at least 8".into()));
        }
        if !(self.safety.v_max > 0.0 && self.safety.c > 0.0 && self.safety.d <= 0.0) {
            return Err(err("safety", "safety needs v_max > 0, c > 0, d <= 0".into()));
        }
        for o in &self.obstacles {
            let ok = match o.shape {
                Shape::Rect => o.length > 0.0 && o.width > 0.0,
                Shape::Circle => o.radius > 0.0,
            };
            if !ok {
                return Err(err("obstacles", "obstacle dimensions must be positive".into()));
            }
        }
        for a in &self.agents {
            if a.waypoints.is_empty() || !(a.speed >= 0.0) {
                return Err(err("agents", "agents need waypoints and a non-negative speed".into()));
            }
            if crate::perception::ObjectClass::parse(&a.class).is_none() {
                return Err(err("class", format!("unknown agent class {:?}", a.class)));
            }
        }
        for (i, s) in self.sensors.iter().enumerate() {
            let valid_name = !s.name.is_empty() && s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !valid_name || self.sensors[..i].iter().any(|o| o.name == s.name) {
                return Err(err("name", format!("sensor names must be unique and use [A-Za-z0-9_-], got {:?}", s.name)));
            }
            if !(s.max_range > 0.0 && s.angular_step > 0.0 && s.period > 0.0 && s.half_fov > 0.0) {
                return Err(err("sensors", format!("sensor {} has non-positive range, step, period or fov", s.name)));
            }
            if !(0.0..=1.0).contains(&s.false_positive) || !(0.0..=1.0).contains(&s.false_negative) {
                return Err(err("sensors", format!("sensor {} noise rates must be in [0, 1]", s.name)));
            }
        }
        for f in &self.faults {
            let ok = match f {
                FaultSpec::KillModule { module, .. } | FaultSpec::FreezeModule { module, .. } => {
                    MODULES.contains(&module.as_str())
                }
                FaultSpec::KillDaemon { daemon, .. } => DAEMONS.contains(&daemon.as_str()),
                FaultSpec::ChannelDown { channel, .. } => matches!(channel.as_str(), "primary" | "backup"),
            };
            if !ok {
                return Err(err("faults", format!("unknown fault target in {f:?}")));
            }
        }
        Ok(())
    }
}

fn line_of(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            let t = l.trim_start().trim_start_matches('[');
            t.starts_with(key)
        })
        .map(|i| i + 1)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_net(dir: &Path) {
        fs::write(dir.join("r.net"), "NODES\n1 0 0\n2 100 0\nEDGES\n1 2 100 10 0 1\n").unwrap();
    }

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        write_net(dir.path());
        let text = "seed = 1\nduration = 5.0\nnetwork = \"r.net\"\ngoal_node = 2\n[ego]\nx = 0.0\ny = 0.0\ntheta = 0.0\n";
        let s = ScenarioSpec::parse(text, &dir.path().join("s.toml")).unwrap();
        assert_eq!(s.sensors.len(), 2);
        assert_eq!(s.rates.base, 20.0);
        assert_eq!(s.expect, Expectation::Goal);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        write_net(dir.path());
        let origin = dir.path().join("s.toml");
        let bad = "seed = 1\nduration = 5.0\nnetwork = \"r.net\"\ngoal_node = 2\n[ego]\nx = \"zero\"\n";
        match ScenarioSpec::parse(bad, &origin) {
            Err(SimError::Config { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        let neg = "seed = 1\nduration = -5.0\nnetwork = \"r.net\"\ngoal_node = 2\n[ego]\nx = 0.0\ny = 0.0\ntheta = 0.0\n";
        match ScenarioSpec::parse(neg, &origin) {
            Err(SimError::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let missing = "seed = 1\nduration = 5.0\nnetwork = \"nope.net\"\ngoal_node = 2\n[ego]\nx = 0.0\ny = 0.0\ntheta = 0.0\n";
        assert!(matches!(ScenarioSpec::parse(missing, &origin), Err(SimError::Config { line: 3, .. })));
    }
}
