//! Run metrics: `key = value` text, one pair per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::scenario::Expectation;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub ticks: u64,
    pub sim_time: f64,
    /// Smallest ground-truth gap between the ego body and any obstacle, m.
    pub min_clearance: f64,
    /// Number of separate contact events.
    pub collisions: u32,
    pub route_completion: f64,
    pub goal_reached: bool,
    pub distance: f64,
    pub mean_speed: f64,
    pub max_speed: f64,
    pub final_speed: f64,
    /// Emergency stops (including escalations and actuation loss).
    pub interventions: u32,
    pub restarts: u32,
    pub reroutes: u32,
    pub plans: u32,
    pub plan_failures: u32,
    pub partial_plans: u32,
    pub overrides: u32,
    pub final_x: f64,
    pub final_y: f64,
    pub final_theta: f64,
    /// Wall-clock planning latency; kept out of the deterministic metrics file.
    pub plan_latency_p50_ms: f64,
    pub plan_latency_p95_ms: f64,
}

impl RunMetrics {
    pub fn success(&self, expect: Expectation) -> bool {
        let stopped = self.final_speed == 0.0;
        self.collisions == 0
            && match expect {
                Expectation::Goal => self.goal_reached,
                Expectation::Stop => stopped,
                Expectation::GoalOrStop => self.goal_reached || stopped,
            }
    }

    /// The deterministic metrics file.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("ticks", self.ticks.to_string());
        kv("sim_time", self.sim_time.to_string());
        kv("min_clearance", self.min_clearance.to_string());
        kv("collisions", self.collisions.to_string());
        kv("route_completion", self.route_completion.to_string());
        kv("goal_reached", self.goal_reached.to_string());
        kv("distance", self.distance.to_string());
        kv("mean_speed", self.mean_speed.to_string());
        kv("max_speed", self.max_speed.to_string());
        kv("final_speed", self.final_speed.to_string());
        kv("interventions", self.interventions.to_string());
        kv("restarts", self.restarts.to_string());
        kv("reroutes", self.reroutes.to_string());
        kv("plans", self.plans.to_string());
        kv("plan_failures", self.plan_failures.to_string());
        kv("partial_plans", self.partial_plans.to_string());
        kv("overrides", self.overrides.to_string());
        kv("final_x", self.final_x.to_string());
        kv("final_y", self.final_y.to_string());
        kv("final_theta", self.final_theta.to_string());
        s
    }

    pub fn timing_text(&self) -> String {
        format!(
            "plan_latency_p50_ms = {}\nplan_latency_p95_ms = {}\n",
            self.plan_latency_p50_ms, self.plan_latency_p95_ms
        )
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Nearest-rank percentile of unsorted samples; 0 when empty.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip_through_key_values() {
        let m = RunMetrics {
            ticks: 10,
            collisions: 1,
            route_completion: 0.5,
            ..Default::default()
        };
        let kv = parse_key_values(&m.to_text()).unwrap();
        assert_eq!(kv["ticks"], "10");
        assert_eq!(kv["route_completion"], "0.5");
        assert!(!kv.contains_key("plan_latency_p95_ms"));
        assert!(parse_key_values("nonsense").is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&[], 95.0), 0.0);
    }

    #[test]
    fn success_rules() {
        let mut m = RunMetrics {
            goal_reached: true,
            final_speed: 1.0,
            ..Default::default()
        };
        assert!(m.success(Expectation::Goal));
        assert!(!m.success(Expectation::Stop));
        m.collisions = 1;
        assert!(!m.success(Expectation::GoalOrStop));
    }
}
