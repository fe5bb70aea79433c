//! Text replay files.
//!
//! Point clouds: per scan a header `t x y theta count`, then `count` lines of
//! `x y z`. Planar scans: per scan a header `t x y theta count max_range
//! mount_height`, then `count` lines of `bearing range`. Fields are
//! whitespace-separated; blank lines and `#` comments are ignored.

use std::fmt::Write as _;

use super::{PerceptionError, PlanarScan, PointCloud};
use crate::geom::SpatioTemporalStamp;

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, line)| {
                let line = line.split('#').next().unwrap_or("");
                line.split_whitespace().map(move |t| (i + 1, t))
            })
            .collect();
        Self { items, pos: 0 }
    }

    fn done(&self) -> bool {
        self.pos >= self.items.len()
    }

    fn next_f64(&mut self) -> Result<f64, PerceptionError> {
        let (line, tok) = self.next_raw()?;
        tok.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| PerceptionError::Format {
                line,
                msg: format!("expected a finite number, found {tok:?}"),
            })
    }

    fn next_usize(&mut self) -> Result<usize, PerceptionError> {
        let (line, tok) = self.next_raw()?;
        tok.parse::<usize>().map_err(|_| PerceptionError::Format {
            line,
            msg: format!("expected a count, found {tok:?}"),
        })
    }

    fn next_raw(&mut self) -> Result<(usize, &'a str), PerceptionError> {
        let last_line = self.items.last().map(|i| i.0).unwrap_or(0);
        let item = self.items.get(self.pos).copied().ok_or(PerceptionError::Format {
            line: last_line,
            msg: "unexpected end of file".into(),
        })?;
        self.pos += 1;
        Ok(item)
    }

    fn stamp(&mut self) -> Result<SpatioTemporalStamp, PerceptionError> {
        Ok(SpatioTemporalStamp::new(
            self.next_f64()?,
            self.next_f64()?,
            self.next_f64()?,
            self.next_f64()?,
        ))
    }
}

pub fn read_point_clouds(text: &str) -> Result<Vec<PointCloud>, PerceptionError> {
    let mut tok = Tokens::new(text);
    let mut out = Vec::new();
    while !tok.done() {
        let stamp = tok.stamp()?;
        let n = tok.next_usize()?;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            points.push([tok.next_f64()?, tok.next_f64()?, tok.next_f64()?]);
        }
        out.push(PointCloud { points, stamp });
    }
    Ok(out)
}

pub fn write_point_clouds(clouds: &[PointCloud]) -> String {
    let mut s = String::new();
    for c in clouds {
        let p = &c.stamp.pose;
        writeln!(s, "{} {} {} {} {}", c.stamp.t, p.x, p.y, p.theta, c.points.len()).unwrap();
        for q in &c.points {
            writeln!(s, "{} {} {}", q[0], q[1], q[2]).unwrap();
        }
    }
    s
}

pub fn read_planar_scans(text: &str) -> Result<Vec<PlanarScan>, PerceptionError> {
    let mut tok = Tokens::new(text);
    let mut out = Vec::new();
    while !tok.done() {
        let stamp = tok.stamp()?;
        let n = tok.next_usize()?;
        let max_range = tok.next_f64()?;
        let mount_height = tok.next_f64()?;
        let mut bearings = Vec::with_capacity(n);
        let mut ranges = Vec::with_capacity(n);
        for _ in 0..n {
            bearings.push(tok.next_f64()?);
            ranges.push(tok.next_f64()?);
        }
        let scan = PlanarScan {
            ranges,
            bearings,
            max_range,
            mount_height,
            stamp,
        };
        scan.validate()?;
        out.push(scan);
    }
    Ok(out)
}

pub fn write_planar_scans(scans: &[PlanarScan]) -> String {
    let mut s = String::new();
    for c in scans {
        let p = &c.stamp.pose;
        writeln!(
            s,
            "{} {} {} {} {} {} {}",
            c.stamp.t,
            p.x,
            p.y,
            p.theta,
            c.ranges.len(),
            c.max_range,
            c.mount_height
        )
        .unwrap();
        for (b, r) in c.bearings.iter().zip(&c.ranges) {
            writeln!(s, "{b} {r}").unwrap();
        }
    }
    s
}
