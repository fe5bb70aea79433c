//! Heartbeat supervision: local module restarts, mutual daemon monitoring, emergency
//! stop escalation, and redundant actuation channels.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::geom::SpatioTemporalStamp;
use crate::safety::SpeedCommand;

#[derive(Debug, Error, PartialEq)]
pub enum SupervisorError {
    #[error("heartbeat record: {0}")]
    Wire(String),
    #[error("both actuation channels are down")]
    ActuationLost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heartbeat {
    pub module_id: String,
    pub seq: u64,
    pub stamp: SpatioTemporalStamp,
    pub sent_at: f64,
}

impl Heartbeat {
    /// `module_id seq t x y theta sent_at`
    pub fn to_wire(&self) -> String {
        format!(
            "{} {} {} {} {} {} {}",
            self.module_id, self.seq, self.stamp.t, self.stamp.pose.x, self.stamp.pose.y, self.stamp.pose.theta, self.sent_at
        )
    }

    pub fn from_wire(line: &str) -> Result<Self, SupervisorError> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(SupervisorError::Wire(format!("expected 7 fields, found {}", f.len())));
        }
        let seq = f[1].parse::<u64>().map_err(|e| SupervisorError::Wire(format!("seq: {e}")))?;
        let mut nums = [0.0; 5];
        for (k, v) in f[2..].iter().enumerate() {
            nums[k] = v.parse::<f64>().map_err(|e| SupervisorError::Wire(format!("field {}: {e}", k + 3)))?;
            if !nums[k].is_finite() {
                return Err(SupervisorError::Wire(format!("field {} is not finite", k + 3)));
            }
        }
        Ok(Self {
            module_id: f[0].to_string(),
            seq,
            stamp: SpatioTemporalStamp::new(nums[0], nums[1], nums[2], nums[3]),
            sent_at: nums[4],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisorConfig {
    /// Nominal module heartbeat period, s.
    pub period: f64,
    /// Silent after this many periods without a heartbeat.
    pub silent_after: u32,
    /// Frozen after this many consecutive identical stamps while moving.
    pub frozen_count: u32,
    /// Speed above which the ego counts as moving, m/s.
    pub moving_speed: f64,
    /// Restarts allowed within `restart_window` before the module is failed.
    pub max_restarts: usize,
    pub restart_window: f64,
    /// Daemon-to-daemon heartbeat period, s.
    pub daemon_period: f64,
    pub suspect_after: u32,
    pub dead_after: u32,
    /// Watchdog timeout for the daemon's own loop, s.
    pub watchdog_timeout: f64,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            period: 0.05,
            silent_after: 3,
            frozen_count: 5,
            moving_speed: 0.1,
            max_restarts: 3,
            restart_window: 60.0,
            daemon_period: 0.05,
            suspect_after: 2,
            dead_after: 4,
            watchdog_timeout: 0.2,
        }
    }
}

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Restart(String),
    Escalate(String),
    EmergencyStop(String),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Restart(m) => write!(f, "restart {m}"),
            Action::Escalate(m) => write!(f, "escalate {m}"),
            Action::EmergencyStop(m) => write!(f, "emergency_stop {m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HealthState {
    Healthy,
    Silent,
    Frozen,
    Restarting,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleHealth {
    pub module_id: String,
    pub state: HealthState,
    pub last_seq: Option<u64>,
    pub last_stamp: Option<SpatioTemporalStamp>,
    /// Time of the last heartbeat (or of the last restart).
    pub last_heard: f64,
    pub consecutive_frozen: u32,
    pub restart_count: u32,
    recent_restarts: VecDeque<f64>,
}

impl ModuleHealth {
    pub fn new(module_id: impl Into<String>, now: f64) -> Self {
        Self {
            module_id: module_id.into(),
            state: HealthState::Healthy,
            last_seq: None,
            last_stamp: None,
            last_heard: now,
            consecutive_frozen: 0,
            restart_count: 0,
            recent_restarts: VecDeque::new(),
        }
    }
}

/// What a module's supervisor sees at one instant.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Beat(Heartbeat),
    Tick,
}

/// Advances one module's health. `ego_speed` gates frozen-stamp detection.
pub fn observe(
    health: &ModuleHealth,
    obs: &Observation,
    now: f64,
    ego_speed: f64,
    cfg: &SupervisorConfig,
) -> (ModuleHealth, Option<Action>) {
    let mut h = health.clone();
    if h.state == HealthState::Failed {
        return (h, None);
    }
    match obs {
        Observation::Beat(hb) => {
            if h.last_seq.is_some_and(|s| hb.seq <= s) {
                return (h, None);
            }
            h.last_seq = Some(hb.seq);
            h.last_heard = now;
            let repeated = h.last_stamp.is_some_and(|s| s.same_as(&hb.stamp));
            h.last_stamp = Some(hb.stamp);
            if !repeated {
                h.consecutive_frozen = 1;
                h.state = HealthState::Healthy;
                return (h, None);
            }
            if ego_speed.abs() <= cfg.moving_speed {
                h.consecutive_frozen = 1;
                return (h, None);
            }
            h.consecutive_frozen += 1;
            if h.consecutive_frozen >= cfg.frozen_count && h.state != HealthState::Restarting {
                h.state = HealthState::Frozen;
                let action = restart(&mut h, now, cfg);
                return (h, Some(action));
            }
            (h, None)
        }
        Observation::Tick => {
            let silent_for = now - h.last_heard;
            if silent_for + EPS >= cfg.silent_after as f64 * cfg.period {
                h.state = HealthState::Silent;
                let action = restart(&mut h, now, cfg);
                return (h, Some(action));
            }
            (h, None)
        }
    }
}

fn restart(h: &mut ModuleHealth, now: f64, cfg: &SupervisorConfig) -> Action {
    while h.recent_restarts.front().is_some_and(|t| now - t > cfg.restart_window) {
        h.recent_restarts.pop_front();
    }
    if h.recent_restarts.len() >= cfg.max_restarts {
        h.state = HealthState::Failed;
        return Action::Escalate(h.module_id.clone());
    }
    h.recent_restarts.push_back(now);
    h.restart_count += 1;
    h.state = HealthState::Restarting;
    h.consecutive_frozen = 0;
    h.last_stamp = None;
    h.last_seq = None;
    h.last_heard = now;
    Action::Restart(h.module_id.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeerState {
    Alive,
    Suspect,
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaemonPeer {
    pub daemon_id: String,
    pub host_id: String,
    pub last_seen: f64,
    pub state: PeerState,
}

impl DaemonPeer {
    pub fn new(daemon_id: impl Into<String>, host_id: impl Into<String>, now: f64) -> Self {
        Self {
            daemon_id: daemon_id.into(),
            host_id: host_id.into(),
            last_seen: now,
            state: PeerState::Alive,
        }
    }
}

/// Advances a peer daemon's state; `heard` marks a heartbeat received at `now`.
/// The emergency stop fires only on the transition into `Dead`.
pub fn observe_peer(peer: &DaemonPeer, heard: bool, now: f64, cfg: &SupervisorConfig) -> (DaemonPeer, Option<Action>) {
    let mut p = peer.clone();
    if heard {
        p.last_seen = now;
        p.state = PeerState::Alive;
        return (p, None);
    }
    let missed = ((now - p.last_seen) / cfg.daemon_period + EPS).floor() as u32;
    let next = if missed >= cfg.dead_after {
        PeerState::Dead
    } else if missed >= cfg.suspect_after {
        PeerState::Suspect
    } else {
        p.state
    };
    let action = (next == PeerState::Dead && p.state != PeerState::Dead).then(|| Action::EmergencyStop(p.daemon_id.clone()));
    p.state = next;
    (p, action)
}

/// The daemon's self-monitor: its loop must pet the watchdog within the timeout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Watchdog {
    pub timeout: f64,
    pub last_pet: f64,
}

impl Watchdog {
    pub fn new(timeout: f64, now: f64) -> Self {
        Self { timeout, last_pet: now }
    }

    pub fn pet(&mut self, now: f64) {
        self.last_pet = now;
    }

    pub fn expired(&self, now: f64) -> bool {
        now - self.last_pet > self.timeout + EPS
    }
}

/// One supervising daemon: health tables for local modules and peers.
#[derive(Debug, Clone)]
pub struct Daemon {
    pub id: String,
    pub host: String,
    pub config: SupervisorConfig,
    pub modules: BTreeMap<String, ModuleHealth>,
    pub peers: BTreeMap<String, DaemonPeer>,
    pub watchdog: Watchdog,
    seq: u64,
}

impl Daemon {
    pub fn new(id: impl Into<String>, host: impl Into<String>, config: SupervisorConfig, now: f64) -> Self {
        Self {
            id: id.into(),
            host: host.into(),
            config,
            modules: BTreeMap::new(),
            peers: BTreeMap::new(),
            watchdog: Watchdog::new(config.watchdog_timeout, now),
            seq: 0,
        }
    }

    pub fn watch_module(&mut self, module_id: &str, now: f64) {
        self.modules.insert(module_id.to_string(), ModuleHealth::new(module_id, now));
    }

    pub fn watch_peer(&mut self, daemon_id: &str, host: &str, now: f64) {
        self.peers.insert(daemon_id.to_string(), DaemonPeer::new(daemon_id, host, now));
    }

    /// Handles a module heartbeat. Unknown modules are ignored.
    pub fn receive(&mut self, hb: &Heartbeat, now: f64, ego_speed: f64) -> Option<Action> {
        let h = self.modules.get(&hb.module_id)?;
        let (next, action) = observe(h, &Observation::Beat(hb.clone()), now, ego_speed, &self.config);
        self.modules.insert(hb.module_id.clone(), next);
        action
    }

    pub fn receive_peer(&mut self, hb: &Heartbeat, now: f64) {
        if let Some(p) = self.peers.get(&hb.module_id) {
            let (next, _) = observe_peer(p, true, now, &self.config);
            self.peers.insert(hb.module_id.clone(), next);
        }
    }

    /// Periodic check of every module and peer, in id order.
    pub fn tick(&mut self, now: f64) -> Vec<Action> {
        self.watchdog.pet(now);
        let mut actions = Vec::new();
        for h in self.modules.values_mut() {
            let (next, a) = observe(h, &Observation::Tick, now, 0.0, &self.config);
            *h = next;
            actions.extend(a);
        }
        for p in self.peers.values_mut() {
            let (next, a) = observe_peer(p, false, now, &self.config);
            *p = next;
            actions.extend(a);
        }
        actions
    }

    /// This daemon's own heartbeat for its peers.
    pub fn heartbeat(&mut self, stamp: SpatioTemporalStamp, now: f64) -> Heartbeat {
        self.seq += 1;
        Heartbeat {
            module_id: self.id.clone(),
            seq: self.seq,
            stamp,
            sent_at: now,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelId {
    Primary,
    Backup,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorCommand {
    pub speed: SpeedCommand,
    pub steering: f64,
}

/// A CAN-like output channel. Sending fails while the channel is down.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Channel {
    pub up: bool,
    pub sent: Vec<ActuatorCommand>,
}

impl Channel {
    pub fn new() -> Self {
        Self {
            up: true,
            sent: Vec::new(),
        }
    }

    fn send(&mut self, cmd: ActuatorCommand) -> bool {
        if self.up {
            self.sent.push(cmd);
        }
        self.up
    }

    /// Last command seen on the channel; monitoring is always possible.
    pub fn last(&self) -> Option<&ActuatorCommand> {
        self.sent.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActuationBus {
    pub primary: Channel,
    pub backup: Option<Channel>,
}

impl ActuationBus {
    pub fn redundant() -> Self {
        Self {
            primary: Channel::new(),
            backup: Some(Channel::new()),
        }
    }

    /// Sends on the primary channel, falling back to the backup in the same call.
    pub fn actuate(&mut self, cmd: ActuatorCommand) -> Result<ChannelId, SupervisorError> {
        if self.primary.send(cmd) {
            return Ok(ChannelId::Primary);
        }
        match &mut self.backup {
            Some(b) if b.up => {
                b.send(cmd);
                Ok(ChannelId::Backup)
            }
            _ => Err(SupervisorError::ActuationLost),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::safety::LimitingSource;

    fn beat(seq: u64, t: f64, x: f64) -> Observation {
        Observation::Beat(Heartbeat {
            module_id: "perception".into(),
            seq,
            stamp: SpatioTemporalStamp::new(t, x, 0.0, 0.0),
            sent_at: t,
        })
    }

    #[test]
    fn steady_heartbeats_stay_healthy() {
        let cfg = SupervisorConfig::default();
        let mut h = ModuleHealth::new("perception", 0.0);
        for k in 1..100 {
            let now = k as f64 * 0.05;
            let (n, a) = observe(&h, &beat(k, now, now), now, 5.0, &cfg);
            assert!(a.is_none());
            let (n, a) = observe(&n, &Observation::Tick, now, 5.0, &cfg);
            assert!(a.is_none());
            h = n;
        }
        assert_eq!(h.state, HealthState::Healthy);
    }

    #[test]
    fn five_identical_stamps_while_moving_freeze() {
        let cfg = SupervisorConfig::default();
        let mut h = ModuleHealth::new("perception", 0.0);
        let mut actions = Vec::new();
        for k in 1..=5 {
            let (n, a) = observe(&h, &beat(k, 1.0, 3.0), k as f64 * 0.05, 5.0, &cfg);
            actions.extend(a);
            h = n;
            if k < 5 {
                assert!(actions.is_empty());
            }
        }
        assert_eq!(actions, vec![Action::Restart("perception".into())]);
        assert_eq!(h.restart_count, 1);
    }

    #[test]
    fn parked_vehicle_never_freezes() {
        let cfg = SupervisorConfig::default();
        let mut h = ModuleHealth::new("perception", 0.0);
        for k in 1..200 {
            let (n, a) = observe(&h, &beat(k, 1.0, 3.0), k as f64 * 0.05, 0.05, &cfg);
            assert!(a.is_none());
            h = n;
        }
        assert_eq!(h.state, HealthState::Healthy);
    }

    #[test]
    fn fourth_restart_escalates() {
        let cfg = SupervisorConfig::default();
        let mut h = ModuleHealth::new("planner", 0.0);
        let mut actions = Vec::new();
        let mut now = 0.0;
        while actions.len() < 4 {
            now += 0.05;
            let (n, a) = observe(&h, &Observation::Tick, now, 0.0, &cfg);
            actions.extend(a);
            h = n;
        }
        assert_eq!(actions[..3], vec![Action::Restart("planner".into()); 3]);
        assert_eq!(actions[3], Action::Escalate("planner".into()));
        assert_eq!(h.state, HealthState::Failed);
        let (_, a) = observe(&h, &Observation::Tick, now + 10.0, 0.0, &cfg);
        assert!(a.is_none());
    }

    #[test]
    fn silent_module_detected_once_per_window() {
        let cfg = SupervisorConfig::default();
        let mut h = ModuleHealth::new("planner", 0.0);
        let mut first = None;
        let mut count = 0;
        for k in 1..=6 {
            let now = k as f64 * 0.05;
            let (n, a) = observe(&h, &Observation::Tick, now, 0.0, &cfg);
            if a.is_some() {
                count += 1;
                first.get_or_insert(now);
            }
            h = n;
        }
        assert!((first.unwrap() - 0.15).abs() < 1e-9);
        assert_eq!(count, 2);
    }

    #[test]
    fn peer_thresholds_and_edge_trigger() {
        let cfg = SupervisorConfig::default();
        let mut p = DaemonPeer::new("d2", "host2", 0.0);
        let mut stops = 0;
        let mut states = Vec::new();
        for k in 1..=10 {
            let (n, a) = observe_peer(&p, false, k as f64 * 0.05, &cfg);
            stops += a.iter().count();
            states.push(n.state);
            p = n;
        }
        assert_eq!(states[0], PeerState::Alive);
        assert_eq!(states[1], PeerState::Suspect);
        assert_eq!(states[3], PeerState::Dead);
        assert_eq!(stops, 1);
        let (n, a) = observe_peer(&p, true, 1.0, &cfg);
        assert_eq!((n.state, a), (PeerState::Alive, None));
    }

    #[test]
    fn suspect_recovers_silently() {
        let cfg = SupervisorConfig::default();
        let p = DaemonPeer::new("d2", "host2", 0.0);
        let (p, _) = observe_peer(&p, false, 0.1, &cfg);
        assert_eq!(p.state, PeerState::Suspect);
        let (p, a) = observe_peer(&p, true, 0.12, &cfg);
        assert_eq!((p.state, a), (PeerState::Alive, None));
    }

    #[test]
    fn actuation_failover() {
        let cmd = ActuatorCommand {
            speed: SpeedCommand {
                v_cmd: 3.0,
                limiting_source: LimitingSource::MapLimit,
            },
            steering: 0.0,
        };
        let mut bus = ActuationBus::redundant();
        assert_eq!(bus.actuate(cmd), Ok(ChannelId::Primary));
        bus.primary.up = false;
        assert_eq!(bus.actuate(cmd), Ok(ChannelId::Backup));
        bus.backup.as_mut().unwrap().up = false;
        assert_eq!(bus.actuate(cmd), Err(SupervisorError::ActuationLost));
        assert_eq!(bus.primary.last(), Some(&cmd));
    }

    #[test]
    fn wire_round_trip() {
        let hb = Heartbeat {
            module_id: "fusion".into(),
            seq: 42,
            stamp: SpatioTemporalStamp::new(1.5, 10.25, -3.0, 0.5),
            sent_at: 1.52,
        };
        assert_eq!(hb.to_wire(), "fusion 42 1.5 10.25 -3 0.5 1.52");
        assert_eq!(Heartbeat::from_wire(&hb.to_wire()), Ok(hb));
        assert!(Heartbeat::from_wire("fusion 1 2").is_err());
        assert!(Heartbeat::from_wire("fusion x 1 2 3 4 5").is_err());
    }

    #[test]
    fn watchdog_expires() {
        let mut w = Watchdog::new(0.2, 0.0);
        assert!(!w.expired(0.2));
        assert!(w.expired(0.25));
        w.pet(0.25);
        assert!(!w.expired(0.4));
    }

    #[test]
    fn daemons_on_two_threads_detect_a_dead_peer() {
        use std::sync::mpsc;
        use std::thread;

        let cfg = SupervisorConfig::default();
        let (tx_a, rx_b) = mpsc::channel::<String>();
        let (tx_b, rx_a) = mpsc::channel::<String>();
        let stamp = SpatioTemporalStamp::new(0.0, 0.0, 0.0, 0.0);
        // Virtual time: both tasks agree on the tick index; daemon b stops sending after tick 10.
        let a = thread::spawn(move || {
            let mut d = Daemon::new("a", "host1", cfg, 0.0);
            d.watch_peer("b", "host2", 0.0);
            let mut stops = Vec::new();
            for k in 1..=30 {
                let now = k as f64 * 0.05;
                tx_a.send(d.heartbeat(stamp, now).to_wire()).ok();
                if k <= 10 {
                    // lock-step: b's beat for this tick arrives before the check
                    if let Ok(line) = rx_a.recv() {
                        d.receive_peer(&Heartbeat::from_wire(&line).unwrap(), now);
                    }
                }
                while let Ok(line) = rx_a.try_recv() {
                    d.receive_peer(&Heartbeat::from_wire(&line).unwrap(), now);
                }
                for act in d.tick(now) {
                    stops.push((k, act));
                }
            }
            stops
        });
        let b = thread::spawn(move || {
            let mut d = Daemon::new("b", "host2", cfg, 0.0);
            for k in 1..=10 {
                let now = k as f64 * 0.05;
                let _ = rx_b.recv();
                tx_b.send(d.heartbeat(stamp, now).to_wire()).unwrap();
            }
        });
        b.join().unwrap();
        let stops = a.join().unwrap();
        assert_eq!(stops.len(), 1);
        assert_eq!(stops[0].1, Action::EmergencyStop("b".into()));
        assert_eq!(stops[0].0, 14);
    }
}
