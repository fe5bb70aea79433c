use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Bicycle,
    Unknown,
}

impl ObjectClass {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "car" => Some(Self::Car),
            "pedestrian" => Some(Self::Pedestrian),
            "bicycle" => Some(Self::Bicycle),
            "unknown" => Some(Self::Unknown),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Car => "car",
            Self::Pedestrian => "pedestrian",
            Self::Bicycle => "bicycle",
            Self::Unknown => "unknown",
        }
    }
}

/// A labelled box centre, as produced by segmentation clustering or the vision stand-in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub width: f64,
    pub class: Option<ObjectClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject {
    pub id: u64,
    pub class: ObjectClass,
    /// `(x, y, vx, vy)`.
    pub state: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub length: f64,
    pub width: f64,
    pub last_update: f64,
    coast: f64,
}

impl TrackedObject {
    pub fn position(&self) -> (f64, f64) {
        (self.state[0], self.state[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.state[2], self.state[3])
    }

    pub fn speed(&self) -> f64 {
        self.state[2].hypot(self.state[3])
    }

    pub fn min_covariance_eigenvalue(&self) -> f64 {
        self.covariance.symmetric_eigenvalues().min()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Association radius around the predicted position, meters.
    pub gate: f64,
    /// Tracks unmatched for this long are dropped, seconds.
    pub max_coast: f64,
    /// White-noise acceleration variance, (m/s²)².
    pub accel_variance: f64,
    /// Position measurement standard deviation, meters.
    pub measurement_std: f64,
    /// Velocity variance given to newly spawned tracks, (m/s)².
    pub initial_velocity_variance: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate: 2.5,
            max_coast: 1.0,
            accel_variance: 1.0,
            measurement_std: 0.1,
            initial_velocity_variance: 25.0,
        }
    }
}

/// Constant-velocity Kalman tracker with greedy nearest-neighbour association.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub config: TrackerConfig,
    tracks: Vec<TrackedObject>,
    next_id: u64,
    now: f64,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
            now: 0.0,
        }
    }

    pub fn tracks(&self) -> &[TrackedObject] {
        &self.tracks
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// One predict/associate/update cycle `dt` seconds after the previous one.
    pub fn step(&mut self, detections: &[Detection], dt: f64) -> &[TrackedObject] {
        assert!(dt > 0.0, "dt must be positive");
        self.now += dt;
        let cfg = self.config;

        let f = Matrix4::new(
            1.0, 0.0, dt, 0.0, //
            0.0, 1.0, 0.0, dt, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let g = Matrix4x2::new(
            0.5 * dt * dt, 0.0, //
            0.0, 0.5 * dt * dt, //
            dt, 0.0, //
            0.0, dt,
        );
        let q = g * g.transpose() * cfg.accel_variance;
        for t in &mut self.tracks {
            t.state = f * t.state;
            t.covariance = symmetrize(f * t.covariance * f.transpose() + q);
        }

        let mut pairs = Vec::new();
        for (ti, t) in self.tracks.iter().enumerate() {
            for (di, d) in detections.iter().enumerate() {
                let dist = (t.state[0] - d.x).hypot(t.state[1] - d.y);
                if dist <= cfg.gate {
                    pairs.push((dist, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_match = vec![None; self.tracks.len()];
        let mut det_used = vec![false; detections.len()];
        for (_, ti, di) in pairs {
            if track_match[ti].is_none() && !det_used[di] {
                track_match[ti] = Some(di);
                det_used[di] = true;
            }
        }

        let h = Matrix2x4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0,
        );
        let r = Matrix2::identity() * cfg.measurement_std.powi(2);
        let now = self.now;
        for (t, m) in self.tracks.iter_mut().zip(&track_match) {
            match m {
                Some(di) => {
                    let d = &detections[*di];
                    let z = Vector2::new(d.x, d.y);
                    let s = h * t.covariance * h.transpose() + r;
                    let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
                    let k = t.covariance * h.transpose() * s_inv;
                    t.state += k * (z - h * t.state);
                    // Joseph form keeps the covariance symmetric positive semidefinite.
                    let ikh = Matrix4::identity() - k * h;
                    t.covariance = symmetrize(ikh * t.covariance * ikh.transpose() + k * r * k.transpose());
                    t.length = d.length;
                    t.width = d.width;
                    if let Some(c) = d.class {
                        t.class = c;
                    }
                    t.last_update = now;
                    t.coast = 0.0;
                }
                None => t.coast += dt,
            }
        }
        self.tracks.retain(|t| t.coast < cfg.max_coast - 1e-9);

        for (d, used) in detections.iter().zip(&det_used) {
            if *used {
                continue;
            }
            let pv = cfg.measurement_std.powi(2);
            let vv = cfg.initial_velocity_variance;
            self.tracks.push(TrackedObject {
                id: self.next_id,
                class: d.class.unwrap_or(ObjectClass::Unknown),
                state: Vector4::new(d.x, d.y, 0.0, 0.0),
                covariance: Matrix4::from_diagonal(&Vector4::new(pv, pv, vv, vv)),
                length: d.length,
                width: d.width,
                last_update: now,
                coast: 0.0,
            });
            self.next_id += 1;
        }
        &self.tracks
    }
}

fn symmetrize(m: Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, y: f64) -> Detection {
        Detection {
            x,
            y,
            length: 4.0,
            width: 1.8,
            class: Some(ObjectClass::Car),
        }
    }

    #[test]
    fn tracks_drop_after_coasting() {
        let mut tr = Tracker::new(TrackerConfig::default());
        tr.step(&[det(10.0, 0.0)], 0.1);
        assert_eq!(tr.tracks().len(), 1);
        for _ in 0..9 {
            tr.step(&[], 0.1);
            assert_eq!(tr.tracks().len(), 1);
        }
        tr.step(&[], 0.1);
        assert!(tr.tracks().is_empty());
    }

    #[test]
    fn ids_are_stable_and_unique() {
        let mut tr = Tracker::new(TrackerConfig::default());
        tr.step(&[det(0.0, 0.0), det(10.0, 0.0)], 0.1);
        let ids: Vec<u64> = tr.tracks().iter().map(|t| t.id).collect();
        tr.step(&[det(10.1, 0.0), det(0.1, 0.0)], 0.1);
        let again: Vec<u64> = tr.tracks().iter().map(|t| t.id).collect();
        assert_eq!(ids, again);
        assert_eq!(tr.tracks().len(), 2);
        // far detection spawns a third track
        tr.step(&[det(10.2, 0.0), det(0.2, 0.0), det(30.0, 5.0)], 0.1);
        assert_eq!(tr.tracks().last().unwrap().id, 3);
    }

    /// Scalar per-axis constant-velocity filter written out by hand.
    struct AxisFilter {
        x: [f64; 2],
        p: [[f64; 2]; 2],
    }

    impl AxisFilter {
        fn step(&mut self, z: f64, dt: f64, q: f64, r: f64) {
            let [x, v] = self.x;
            self.x = [x + dt * v, v];
            let [[a, b], [_, d]] = self.p;
            let pa = a + 2.0 * dt * b + dt * dt * d + q * dt.powi(4) / 4.0;
            let pb = b + dt * d + q * dt.powi(3) / 2.0;
            let pd = d + q * dt * dt;
            let s = pa + r;
            let (k0, k1) = (pa / s, pb / s);
            let y = z - self.x[0];
            self.x = [self.x[0] + k0 * y, self.x[1] + k1 * y];
            self.p = [
                [(1.0 - k0) * pa, (1.0 - k0) * pb],
                [(1.0 - k0) * pb, pd - k1 * pb],
            ];
        }
    }

    #[test]
    fn matches_scalar_filter_oracle() {
        let cfg = TrackerConfig::default();
        let mut tr = Tracker::new(cfg);
        let r = cfg.measurement_std.powi(2);
        let dt = 0.1;
        let zs: Vec<(f64, f64)> = (0..40)
            .map(|k| {
                let t = k as f64 * dt;
                (5.0 + 3.0 * t + 0.03 * (k as f64 * 1.7).sin(), -2.0 + 0.5 * t * t)
            })
            .collect();
        tr.step(&[det(zs[0].0, zs[0].1)], dt);
        let init = [[r, 0.0], [0.0, cfg.initial_velocity_variance]];
        let mut fx = AxisFilter { x: [zs[0].0, 0.0], p: init };
        let mut fy = AxisFilter { x: [zs[0].1, 0.0], p: init };
        for &(zx, zy) in &zs[1..] {
            tr.step(&[det(zx, zy)], dt);
            fx.step(zx, dt, cfg.accel_variance, r);
            fy.step(zy, dt, cfg.accel_variance, r);
            let t = &tr.tracks()[0];
            assert_eq!(tr.tracks().len(), 1);
            for (got, want) in [
                (t.state[0], fx.x[0]),
                (t.state[1], fy.x[0]),
                (t.state[2], fx.x[1]),
                (t.state[3], fy.x[1]),
                (t.covariance[(0, 0)], fx.p[0][0]),
                (t.covariance[(0, 2)], fx.p[0][1]),
                (t.covariance[(3, 3)], fy.p[1][1]),
                (t.covariance[(0, 1)], 0.0),
            ] {
                assert!((got - want).abs() < 1e-9, "{got} vs {want}");
            }
            assert!(t.min_covariance_eigenvalue() >= -1e-9);
        }
        let (vx, _) = tr.tracks()[0].velocity();
        assert!((vx - 3.0).abs() < 0.2, "{vx}");
    }

    #[test]
    fn class_label_overwrites() {
        let mut tr = Tracker::new(TrackerConfig::default());
        tr.step(&[Detection { class: None, ..det(5.0, 5.0) }], 0.1);
        assert_eq!(tr.tracks()[0].class, ObjectClass::Unknown);
        tr.step(&[Detection { class: Some(ObjectClass::Pedestrian), ..det(5.0, 5.0) }], 0.1);
        assert_eq!(tr.tracks()[0].class, ObjectClass::Pedestrian);
    }
}
