//! Motion primitives between exact lattice states.
//!
//! A lattice state is a cell centre plus a heading bin. Each primitive joins a
//! state to another exact state one heading bin to the left, straight, or one
//! to the right, using the cubic `y = a·x² + b·x³` in the start frame whose end
//! tangent matches the target heading. Nominal arcs of curvature
//! `{0, ±κ/2, ±κ}` pick the target cell; when the nearest cells cannot be
//! joined within `κ_max`, the nominal arc is stretched until one can.

use std::f64::consts::PI;

/// One sample along a primitive, relative to the start cell centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimSample {
    pub dx: f64,
    pub dy: f64,
    /// Heading change since the start of the primitive.
    pub dtheta: f64,
    /// Nearest-cell offset in lattice units (forward, left).
    pub ci: i32,
    pub cj: i32,
    /// Heading bin offset used for the footprint mask.
    pub dbin: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub di: i32,
    pub dj: i32,
    pub dh: i32,
    /// Polyline length through the samples, meters.
    pub length: f64,
    /// Samples after the start; the last one is the exact end state.
    pub samples: Vec<PrimSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSet {
    pub heading_bins: usize,
    pub resolution: f64,
    pub kappa_max: f64,
    pub spacing: f64,
    by_heading: Vec<Vec<Primitive>>,
}

const SCALES: [f64; 14] = [1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0, 48.0, 64.0, 96.0];
const CURVATURE_MARGIN: f64 = 0.99;
const CHECK_POINTS: usize = 256;

impl PrimitiveSet {
    pub fn build(heading_bins: usize, resolution: f64, kappa_max: f64, spacing: f64) -> Self {
        assert!(heading_bins >= 8 && heading_bins % 4 == 0, "heading bins must be a multiple of 4, at least 8");
        let quarter = heading_bins / 4;
        let bw = 2.0 * PI / heading_bins as f64;
        let base: Vec<Vec<Primitive>> = (0..quarter)
            .map(|h0| base_primitives(h0 as f64 * bw, bw, resolution, kappa_max, spacing))
            .collect();
        let mut by_heading = vec![Vec::new(); heading_bins];
        for (h, slot) in by_heading.iter_mut().enumerate() {
            let (q, h0) = (h / quarter, h % quarter);
            *slot = base[h0].iter().map(|p| rotate_quarters(p, q)).collect();
        }
        Self {
            heading_bins,
            resolution,
            kappa_max,
            spacing,
            by_heading,
        }
    }

    pub fn bin_width(&self) -> f64 {
        2.0 * PI / self.heading_bins as f64
    }

    pub fn for_heading(&self, h: usize) -> &[Primitive] {
        &self.by_heading[h]
    }

    /// Longest chord between consecutive samples over all primitives.
    pub fn max_chord(&self) -> f64 {
        let mut m: f64 = 0.0;
        for prims in &self.by_heading {
            for p in prims {
                let mut prev = (0.0, 0.0);
                for s in &p.samples {
                    m = m.max((s.dx - prev.0).hypot(s.dy - prev.1));
                    prev = (s.dx, s.dy);
                }
            }
        }
        m
    }
}

fn base_primitives(theta0: f64, bw: f64, res: f64, kappa_max: f64, spacing: f64) -> Vec<Primitive> {
    let nominal = [
        (0, 0.0),
        (1, kappa_max / 2.0),
        (-1, -kappa_max / 2.0),
        (1, kappa_max),
        (-1, -kappa_max),
    ];
    let mut out: Vec<Primitive> = Vec::new();
    for (dh, kappa) in nominal {
        let dtheta = dh as f64 * bw;
        let l_nom = if dh == 0 { 2f64.sqrt() * res } else { bw / kappa.abs() };
        let Some(p) = SCALES.iter().find_map(|f| best_candidate(theta0, dtheta, bw, f * l_nom, res, kappa_max, spacing))
        else {
            continue;
        };
        match out.iter_mut().find(|q| (q.di, q.dj, q.dh) == (p.di, p.dj, p.dh)) {
            Some(q) if p.length < q.length => *q = p,
            Some(_) => {}
            None => out.push(p),
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn best_candidate(
    theta0: f64,
    dtheta: f64,
    bw: f64,
    length: f64,
    res: f64,
    kappa_max: f64,
    spacing: f64,
) -> Option<Primitive> {
    let (nx, ny) = if dtheta == 0.0 {
        (length, 0.0)
    } else {
        let k = dtheta / length;
        (dtheta.sin() / k, (1.0 - dtheta.cos()) / k)
    };
    let (c, s) = (theta0.cos(), theta0.sin());
    let (ex, ey) = (nx * c - ny * s, nx * s + ny * c);
    let (ci, cj) = ((ex / res).round() as i32, (ey / res).round() as i32);
    let mut best: Option<(f64, Primitive)> = None;
    for di in ci - 1..=ci + 1 {
        for dj in cj - 1..=cj + 1 {
            if di == 0 && dj == 0 {
                continue;
            }
            let Some(p) = connect(theta0, dtheta, bw, di, dj, res, kappa_max, spacing) else {
                continue;
            };
            let score = (p.length - length).abs();
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, p));
            }
        }
    }
    best.map(|b| b.1)
}

#[allow(clippy::too_many_arguments)]
fn connect(
    theta0: f64,
    dtheta: f64,
    bw: f64,
    di: i32,
    dj: i32,
    res: f64,
    kappa_max: f64,
    spacing: f64,
) -> Option<Primitive> {
    let (c, s) = (theta0.cos(), theta0.sin());
    let (wx, wy) = (di as f64 * res, dj as f64 * res);
    let x_end = wx * c + wy * s;
    let y_end = -wx * s + wy * c;
    if x_end <= 1e-9 {
        return None;
    }
    let t = dtheta.tan();
    let a = (3.0 * y_end - t * x_end) / (x_end * x_end);
    let b = (t * x_end - 2.0 * y_end) / (x_end * x_end * x_end);
    let curvature = |x: f64| {
        let d1 = 2.0 * a * x + 3.0 * b * x * x;
        let d2 = 2.0 * a + 6.0 * b * x;
        d2 / (1.0 + d1 * d1).powf(1.5)
    };
    let limit = kappa_max * CURVATURE_MARGIN;
    if (0..=CHECK_POINTS).any(|k| curvature(x_end * k as f64 / CHECK_POINTS as f64).abs() > limit) {
        return None;
    }
    let point = |x: f64| {
        let y = a * x * x + b * x * x * x;
        let slope = 2.0 * a * x + 3.0 * b * x * x;
        (x * c - y * s, x * s + y * c, slope.atan())
    };
    let mut n = ((x_end / spacing).ceil() as usize).max(1);
    let samples = loop {
        let pts: Vec<(f64, f64, f64)> = (1..=n).map(|k| point(x_end * k as f64 / n as f64)).collect();
        let mut prev = (0.0, 0.0);
        let ok = pts.iter().all(|p| {
            let d = (p.0 - prev.0).hypot(p.1 - prev.1);
            prev = (p.0, p.1);
            d <= spacing
        });
        if ok {
            break pts;
        }
        n *= 2;
    };
    let mut out: Vec<PrimSample> = samples
        .iter()
        .map(|&(dx, dy, dth)| PrimSample {
            dx,
            dy,
            dtheta: dth,
            ci: (dx / res + 0.5).floor() as i32,
            cj: (dy / res + 0.5).floor() as i32,
            dbin: (dth / bw).round() as i32,
        })
        .collect();
    let last = out.last_mut().unwrap();
    *last = PrimSample {
        dx: wx,
        dy: wy,
        dtheta,
        ci: di,
        cj: dj,
        dbin: if dtheta == 0.0 { 0 } else { dtheta.signum() as i32 },
    };
    let mut length = 0.0;
    let mut prev = (0.0, 0.0);
    for p in &out {
        length += (p.dx - prev.0).hypot(p.dy - prev.1);
        prev = (p.dx, p.dy);
    }
    Some(Primitive {
        di,
        dj,
        dh: if dtheta == 0.0 { 0 } else { dtheta.signum() as i32 },
        length,
        samples: out,
    })
}

fn rotate_quarters(p: &Primitive, q: usize) -> Primitive {
    let rot = |x: f64, y: f64| -> (f64, f64) {
        let (mut x, mut y) = (x, y);
        for _ in 0..q {
            (x, y) = (-y, x);
        }
        (x, y)
    };
    let roti = |x: i32, y: i32| -> (i32, i32) {
        let (mut x, mut y) = (x, y);
        for _ in 0..q {
            (x, y) = (-y, x);
        }
        (x, y)
    };
    let (di, dj) = roti(p.di, p.dj);
    Primitive {
        di,
        dj,
        dh: p.dh,
        length: p.length,
        samples: p
            .samples
            .iter()
            .map(|s| {
                let (dx, dy) = rot(s.dx, s.dy);
                let (ci, cj) = roti(s.ci, s.cj);
                PrimSample { dx, dy, ci, cj, ..*s }
            })
            .collect(),
    }
}

/// Heading of bin `h`, wrapped to `(-π, π]`.
pub fn bin_angle(h: usize, heading_bins: usize) -> f64 {
    let a = h as f64 * 2.0 * PI / heading_bins as f64;
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

pub fn angle_to_bin(theta: f64, heading_bins: usize) -> usize {
    let bw = 2.0 * PI / heading_bins as f64;
    ((theta / bw).round() as i64).rem_euclid(heading_bins as i64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_discrete_curvature(p: &Primitive, theta0: f64) -> f64 {
        let mut prev = (0.0, 0.0, theta0);
        let mut m: f64 = 0.0;
        for s in &p.samples {
            let th = theta0 + s.dtheta;
            let chord = (s.dx - prev.0).hypot(s.dy - prev.1);
            m = m.max(2.0 * ((th - prev.2).abs() / 2.0).sin() / chord);
            prev = (s.dx, s.dy, th);
        }
        m
    }

    #[test]
    fn primitives_reach_exact_states() {
        for h in [8usize, 16, 72] {
            let set = PrimitiveSet::build(h, 0.2, 0.2, 0.05);
            let bw = set.bin_width();
            for hb in 0..h {
                let prims = set.for_heading(hb);
                assert!(prims.iter().any(|p| p.dh == 0), "H={h} bin {hb}");
                assert!(prims.iter().any(|p| p.dh == 1) && prims.iter().any(|p| p.dh == -1));
                let theta0 = hb as f64 * bw;
                for p in prims {
                    let last = p.samples.last().unwrap();
                    assert_eq!((last.ci, last.cj), (p.di, p.dj));
                    assert!((last.dx - p.di as f64 * 0.2).abs() < 1e-12);
                    assert!(max_discrete_curvature(p, theta0) <= 0.2 + 1e-9);
                    assert!(p.samples.len() >= 1);
                }
            }
            assert!(set.max_chord() <= 0.05 + 1e-12);
        }
    }

    #[test]
    fn straight_primitive_at_zero_heading() {
        let set = PrimitiveSet::build(72, 0.2, 0.2, 0.05);
        let s = set.for_heading(0).iter().find(|p| p.dh == 0).unwrap();
        assert_eq!((s.di, s.dj), (1, 0));
        assert!((s.length - 0.2).abs() < 1e-12);
        let diag = set.for_heading(9).iter().find(|p| p.dh == 0).unwrap();
        assert_eq!((diag.di, diag.dj), (1, 1));
    }

    #[test]
    fn bins_round_trip() {
        for h in 0..72 {
            assert_eq!(angle_to_bin(bin_angle(h, 72), 72), h);
        }
        assert_eq!(angle_to_bin(-0.01, 72), 0);
        assert_eq!(angle_to_bin(-0.09, 72), 71);
    }
}
