//! Trajectories: splicing, speed assignment, and the text log.

use std::fmt::Write as _;

use super::PlanError;
use crate::geom::{angle_diff, Point2, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub pose: Pose2D,
    /// Arc length, meters.
    pub s: f64,
    /// Target speed, m/s.
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    /// Search ran out of budget; the trajectory ends short of the goal.
    pub partial: bool,
    /// Lattice cost in micro-units.
    pub cost: u64,
}

impl Trajectory {
    pub fn from_poses(poses: &[Pose2D]) -> Self {
        let mut samples = Vec::with_capacity(poses.len());
        let mut s = 0.0;
        for (i, p) in poses.iter().enumerate() {
            if i > 0 {
                s += p.position().dist(&poses[i - 1].position());
            }
            samples.push(TrajectorySample { pose: *p, s, v: 0.0 });
        }
        Self {
            samples,
            partial: false,
            cost: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn length(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.s - a.s,
            _ => 0.0,
        }
    }

    /// Re-expresses a vehicle-frame trajectory in the world frame of `ego`.
    pub fn to_world(&self, ego: &Pose2D) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| TrajectorySample {
                    pose: ego.compose(&s.pose),
                    ..*s
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Curvature between samples `i` and `i + 1`.
    pub fn segment_curvature(&self, i: usize) -> f64 {
        let (a, b) = (&self.samples[i].pose, &self.samples[i + 1].pose);
        let chord = a.position().dist(&b.position());
        if chord <= 0.0 {
            return 0.0;
        }
        let dth = angle_diff(b.theta, a.theta).abs();
        2.0 * (dth / 2.0).sin() / chord
    }

    pub fn max_curvature(&self) -> f64 {
        (0..self.samples.len().saturating_sub(1))
            .map(|i| self.segment_curvature(i))
            .fold(0.0, f64::max)
    }

    pub fn max_spacing(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| w[0].pose.position().dist(&w[1].pose.position()))
            .fold(0.0, f64::max)
    }

    /// Index of the sample closest to `p`; the first wins ties.
    pub fn nearest_index(&self, p: Point2) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, s) in self.samples.iter().enumerate() {
            let d = s.pose.position().dist(&p);
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, i));
            }
        }
        best.map(|b| b.1)
    }

    /// Log lines `t x y theta s v_target`.
    pub fn to_log(&self, t: f64) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let _ = writeln!(out, "{t} {} {} {} {} {}", s.pose.x, s.pose.y, s.pose.theta, s.s, s.v);
        }
        out
    }
}

/// Parses a trajectory log into trajectories grouped by consecutive equal `t`.
pub fn parse_trajectory_log(text: &str) -> Result<Vec<(f64, Trajectory)>, PlanError> {
    let mut out: Vec<(f64, Trajectory)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| PlanError::Format {
                line: n + 1,
                reason: e.to_string(),
            })?;
        if vals.len() != 6 || vals.iter().any(|v| !v.is_finite()) {
            return Err(PlanError::Format {
                line: n + 1,
                reason: "expected six finite numbers: t x y theta s v_target".into(),
            });
        }
        let sample = TrajectorySample {
            pose: Pose2D::new(vals[1], vals[2], vals[3]),
            s: vals[4],
            v: vals[5],
        };
        match out.last_mut() {
            Some((t, traj)) if *t == vals[0] => traj.samples.push(sample),
            _ => out.push((
                vals[0],
                Trajectory {
                    samples: vec![sample],
                    ..Default::default()
                },
            )),
        }
    }
    Ok(out)
}

/// Keeps the stretch of `previous` from the sample nearest `ego` through `window` meters
/// ahead, then continues with `fresh` past its sample nearest the window end. Returns
/// `fresh` unchanged when any kept sample of `previous` now collides.
pub fn piecewise_concat(
    previous: &Trajectory,
    fresh: &Trajectory,
    ego: &Pose2D,
    window: f64,
    collides: impl Fn(&Pose2D) -> bool,
) -> Trajectory {
    let Some(k) = previous.nearest_index(ego.position()) else {
        return fresh.clone();
    };
    let s_end = previous.samples[k].s + window;
    let mut m = k;
    while m + 1 < previous.samples.len() && previous.samples[m + 1].s <= s_end {
        m += 1;
    }
    let kept = &previous.samples[k..=m];
    if kept.iter().any(|s| collides(&s.pose)) {
        return fresh.clone();
    }
    let mut samples = kept.to_vec();
    if let Some(j) = fresh.nearest_index(previous.samples[m].pose.position()) {
        let offset = previous.samples[m].s - fresh.samples[j].s;
        samples.extend(fresh.samples[j + 1..].iter().map(|s| TrajectorySample { s: s.s + offset, ..*s }));
    }
    Trajectory {
        samples,
        partial: fresh.partial,
        cost: fresh.cost,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpeedLimit {
    Uniform(f64),
    /// One limit per sample.
    PerSample(Vec<f64>),
}

impl SpeedLimit {
    fn at(&self, i: usize) -> f64 {
        match self {
            SpeedLimit::Uniform(v) => *v,
            SpeedLimit::PerSample(v) => v[i.min(v.len() - 1)],
        }
    }
}

/// Assigns `v = min(limit, √(a_lat/|κ|))`, then bounds `|dv²/ds| ≤ 2·a_lon` forward from
/// the first sample's cap and backward from a stop at the end.
pub fn speed_profile(traj: &Trajectory, limits: &SpeedLimit, a_lat_max: f64, a_lon_max: f64) -> Trajectory {
    let n = traj.samples.len();
    if n == 0 || traj.length() <= 0.0 {
        return traj.clone();
    }
    let seg: Vec<f64> = (0..n - 1).map(|i| traj.segment_curvature(i)).collect();
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let left = if i > 0 { seg[i - 1] } else { 0.0 };
            let right = if i + 1 < n { seg[i] } else { 0.0 };
            let kappa = left.max(right);
            let cap = if kappa > 0.0 { (a_lat_max / kappa).sqrt() } else { f64::INFINITY };
            limits.at(i).min(cap).max(0.0)
        })
        .collect();
    for i in 1..n {
        let ds = traj.samples[i].s - traj.samples[i - 1].s;
        v[i] = v[i].min((v[i - 1] * v[i - 1] + 2.0 * a_lon_max * ds).sqrt());
    }
    v[n - 1] = 0.0;
    for i in (0..n - 1).rev() {
        let ds = traj.samples[i + 1].s - traj.samples[i].s;
        v[i] = v[i].min((v[i + 1] * v[i + 1] + 2.0 * a_lon_max * ds).sqrt());
    }
    let mut out = traj.clone();
    for (s, vi) in out.samples.iter_mut().zip(v) {
        s.v = vi;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(len: f64, step: f64, y: f64) -> Trajectory {
        let n = (len / step).round() as usize;
        let poses: Vec<Pose2D> = (0..=n).map(|i| Pose2D::new(i as f64 * step, y, 0.0)).collect();
        Trajectory::from_poses(&poses)
    }

    fn arc(kappa: f64, len: f64, step: f64) -> Trajectory {
        let n = (len / step).round() as usize;
        let mut p = Pose2D::identity();
        let mut poses = vec![p];
        for _ in 0..n {
            p = p.advance_arc(kappa, step);
            poses.push(p);
        }
        Trajectory::from_poses(&poses)
    }

    #[test]
    fn concat_identity() {
        let t = straight(30.0, 0.1, 0.0);
        let out = piecewise_concat(&t, &t, &Pose2D::identity(), 10.0, |_| false);
        assert_eq!(out, t);
    }

    #[test]
    fn concat_freezes_window() {
        let prev = straight(30.0, 0.1, 0.0);
        let mut fresh = straight(30.0, 0.1, 0.0);
        for s in fresh.samples.iter_mut().skip(120) {
            s.pose.y += 1.0;
        }
        let ego = Pose2D::new(2.0, 0.0, 0.0);
        let out = piecewise_concat(&prev, &fresh, &ego, 10.0, |_| false);
        let k = prev.nearest_index(ego.position()).unwrap();
        let kept: Vec<_> = prev.samples.iter().skip(k).take_while(|s| s.s <= prev.samples[k].s + 10.0).collect();
        assert!((100..=101).contains(&kept.len()));
        for (a, b) in kept.iter().zip(&out.samples) {
            assert_eq!(a.pose.x.to_bits(), b.pose.x.to_bits());
            assert_eq!(a.pose.y.to_bits(), b.pose.y.to_bits());
            assert_eq!(a.s.to_bits(), b.s.to_bits());
        }
        assert!(out.samples.last().unwrap().pose.y == 1.0);
    }

    #[test]
    fn concat_collision_override() {
        let prev = straight(30.0, 0.1, 0.0);
        let fresh = straight(30.0, 0.1, 0.5);
        let out = piecewise_concat(&prev, &fresh, &Pose2D::identity(), 10.0, |p| (p.x - 5.0).abs() < 0.3);
        assert_eq!(out, fresh);
    }

    #[test]
    fn straight_profile_cruises_then_stops() {
        let t = straight(200.0, 0.5, 0.0);
        let out = speed_profile(&t, &SpeedLimit::Uniform(16.67), 2.0, 2.0);
        assert_eq!(out.samples[0].v, 16.67);
        assert_eq!(out.samples[200].v, 16.67);
        assert_eq!(out.samples.last().unwrap().v, 0.0);
        for w in out.samples.windows(2) {
            let ds = w[1].s - w[0].s;
            assert!((w[1].v.powi(2) - w[0].v.powi(2)).abs() <= 4.0 * ds + 1e-9);
        }
    }

    #[test]
    fn arc_profile_respects_lateral_limit() {
        let t = arc(0.1, 30.0, 0.25);
        let out = speed_profile(&t, &SpeedLimit::Uniform(16.67), 2.0, 2.0);
        let cap = 20f64.sqrt();
        assert!((out.samples[10].v - cap).abs() < 1e-3);
        assert!(out.samples.iter().all(|s| s.v <= cap + 1e-3));
        assert!((out.max_curvature() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn zero_length_unchanged() {
        let t = Trajectory::from_poses(&[Pose2D::new(1.0, 2.0, 0.3)]);
        assert_eq!(speed_profile(&t, &SpeedLimit::Uniform(5.0), 2.0, 2.0), t);
        assert_eq!(speed_profile(&Trajectory::default(), &SpeedLimit::Uniform(5.0), 2.0, 2.0), Trajectory::default());
    }

    #[test]
    fn log_round_trip() {
        let t = speed_profile(&arc(0.05, 5.0, 0.5), &SpeedLimit::Uniform(5.0), 2.0, 2.0);
        let text = t.to_log(1.25);
        let parsed = parse_trajectory_log(&text).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].0, 1.25);
        assert_eq!(parsed[0].1.samples, t.samples);
        assert!(matches!(parse_trajectory_log("1 2 3\n"), Err(PlanError::Format { line: 1, .. })));
    }
}
