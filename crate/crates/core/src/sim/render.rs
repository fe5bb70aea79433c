//! PNG rendering of grids, tile mosaics, trajectory logs and run overviews.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::world::{Body, Solid};
use super::SimError;
use crate::geom::{Aabb, Point2};
use crate::grid::OccupancyGrid;
use crate::mapper::{MapperConfig, TileIndex};
use crate::planner::Trajectory;

/// Upper bound on either image side.
const MAX_SIDE: usize = 1600;
const UNKNOWN_CODE: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, top row first.
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Self {
            width,
            height,
            rgb: color.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.rgb[i..i + 3].copy_from_slice(&color);
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), color: [u8; 3]) {
        let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for k in 0..=steps {
            let u = k as f64 / steps as f64;
            self.put(
                (a.0 + (b.0 - a.0) * u).round() as i64,
                (a.1 + (b.1 - a.1) * u).round() as i64,
                color,
            );
        }
    }
}

/// Probability code to a display gray: obstacles dark, free light, unknown mid-blue.
fn shade(code: u8) -> [u8; 3] {
    if code == UNKNOWN_CODE {
        [150, 160, 190]
    } else {
        let g = 255 - code;
        [g, g, g]
    }
}

pub fn write_png(path: &Path, img: &Image) -> Result<(), SimError> {
    let file = File::create(path).map_err(|source| SimError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| SimError::Render(e.to_string()))?;
    w.write_image_data(&img.rgb).map_err(|e| SimError::Render(e.to_string()))
}

/// A vehicle-frame grid drawn with forward up and left to the left.
pub fn render_grid(grid: &OccupancyGrid) -> Image {
    let g = grid.geometry();
    let mut img = Image::filled(g.cols, g.rows, [0, 0, 0]);
    for r in 0..g.rows {
        for c in 0..g.cols {
            let code = crate::grid::quantize_probability(grid.cells()[r * g.cols + c]);
            let code = if grid.cells()[r * g.cols + c] == crate::grid::UNKNOWN { UNKNOWN_CODE } else { code };
            // Row 0 is the far end ahead; column 0 is the left edge.
            img.put(c as i64, r as i64, shade(code));
        }
    }
    img
}

/// World-to-pixel mapping with north up.
#[derive(Debug, Clone, Copy)]
struct View {
    min: Point2,
    max_y: f64,
    scale: f64,
}

impl View {
    fn fit(bounds: Aabb, margin: f64, max_side: usize) -> (Self, usize, usize) {
        let w = bounds.width() + 2.0 * margin;
        let h = bounds.height() + 2.0 * margin;
        let scale = (max_side as f64 / w.max(h).max(1e-6)).min(10.0);
        let view = Self {
            min: Point2::new(bounds.min.x - margin, bounds.min.y - margin),
            max_y: bounds.max.y + margin,
            scale,
        };
        (view, ((w * scale).ceil() as usize).max(1), ((h * scale).ceil() as usize).max(1))
    }

    fn px(&self, p: Point2) -> (f64, f64) {
        ((p.x - self.min.x) * self.scale, (self.max_y - p.y) * self.scale)
    }

    fn world(&self, x: usize, y: usize) -> Point2 {
        Point2::new(
            self.min.x + (x as f64 + 0.5) / self.scale,
            self.max_y - (y as f64 + 0.5) / self.scale,
        )
    }
}

fn union(boxes: impl IntoIterator<Item = Aabb>) -> Option<Aabb> {
    boxes.into_iter().reduce(|a, b| Aabb::new(a.min.x.min(b.min.x), a.min.y.min(b.min.y), a.max.x.max(b.max.x), a.max.y.max(b.max.y)))
}

fn point_box(points: &[Point2]) -> Option<Aabb> {
    union(points.iter().map(|p| Aabb::new(p.x, p.y, p.x, p.y)))
}

/// Mosaic of every tile listed in a manifest; newer sessions paint over older ones.
pub fn render_tiles(manifest: &Path) -> Result<Image, SimError> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut index = TileIndex::restore_session(manifest, MapperConfig::new(dir))?;
    let catalog = index.catalog();
    let Some(bounds) = union(catalog.iter().map(|(_, b)| *b)) else {
        return Ok(Image::filled(1, 1, shade(UNKNOWN_CODE)));
    };
    let res = index.config().resolution;
    let max_side = MAX_SIDE.min(((bounds.width().max(bounds.height()) / res).ceil() as usize).max(1));
    let (view, w, h) = View::fit(bounds, 0.0, max_side);
    let mut img = Image::filled(w, h, shade(UNKNOWN_CODE));
    for (_, b) in &catalog {
        for tile in index.query_visible(b)? {
            let (x0, y1) = view.px(tile.bounds.min);
            let (x1, y0) = view.px(tile.bounds.max);
            for y in y0.floor().max(0.0) as usize..(y1.ceil() as usize).min(h) {
                for x in x0.floor().max(0.0) as usize..(x1.ceil() as usize).min(w) {
                    if let Some(code) = tile.code_at(view.world(x, y)) {
                        if code != UNKNOWN_CODE {
                            img.put(x as i64, y as i64, shade(code));
                        }
                    }
                }
            }
        }
    }
    Ok(img)
}

/// Every plan in a trajectory log, older plans fainter.
pub fn render_trajectories(plans: &[(f64, Trajectory)]) -> Image {
    let points: Vec<Point2> = plans.iter().flat_map(|(_, t)| t.samples.iter().map(|s| s.pose.position())).collect();
    let Some(bounds) = point_box(&points) else {
        return Image::filled(1, 1, [255, 255, 255]);
    };
    let (view, w, h) = View::fit(bounds, 5.0, 1000);
    let mut img = Image::filled(w, h, [255, 255, 255]);
    let n = plans.len().max(1);
    for (k, (_, t)) in plans.iter().enumerate() {
        let fade = (200.0 * (1.0 - (k + 1) as f64 / n as f64)) as u8;
        let color = [fade, fade, 255];
        for pair in t.samples.windows(2) {
            img.line(view.px(pair[0].pose.position()), view.px(pair[1].pose.position()), color);
        }
    }
    img
}

/// Top-down run overview: obstacles, route, driven path and the last plan.
pub fn render_run(solids: &[Solid], route: &[Point2], path: &[Point2], last_plan: Option<&Trajectory>) -> Image {
    let mut pts: Vec<Point2> = route.iter().chain(path).copied().collect();
    for s in solids {
        match s.body {
            Body::Rect(r) => pts.extend(r.corners()),
            Body::Circle { center, radius } => {
                pts.push(Point2::new(center.x - radius, center.y - radius));
                pts.push(Point2::new(center.x + radius, center.y + radius));
            }
        }
    }
    let Some(bounds) = point_box(&pts) else {
        return Image::filled(1, 1, [255, 255, 255]);
    };
    let (view, w, h) = View::fit(bounds, 10.0, 1000);
    let mut img = Image::filled(w, h, [255, 255, 255]);
    for y in 0..h {
        for x in 0..w {
            let p = view.world(x, y);
            let inside = solids.iter().any(|s| match s.body {
                Body::Rect(r) => r.contains(p),
                Body::Circle { center, radius } => center.dist(&p) <= radius,
            });
            if inside {
                img.put(x as i64, y as i64, [60, 60, 60]);
            }
        }
    }
    for pair in route.windows(2) {
        img.line(view.px(pair[0]), view.px(pair[1]), [80, 180, 80]);
    }
    if let Some(t) = last_plan {
        for pair in t.samples.windows(2) {
            img.line(view.px(pair[0].pose.position()), view.px(pair[1].pose.position()), [40, 90, 230]);
        }
    }
    for pair in path.windows(2) {
        img.line(view.px(pair[0]), view.px(pair[1]), [220, 40, 40]);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose2D;
    use crate::grid::GridGeometry;

    #[test]
    fn grid_image_matches_geometry_and_shades() {
        let geo = GridGeometry::default();
        let mut g = OccupancyGrid::with_geometry(geo);
        g.set(crate::grid::Cell::new(0, 0), 1.0);
        g.set(crate::grid::Cell::new(0, 1), 0.0);
        let img = render_grid(&g);
        assert_eq!((img.width, img.height), (geo.cols, geo.rows));
        assert_eq!(img.pixel(0, 0), [0, 0, 0]);
        assert_eq!(img.pixel(1, 0), [255, 255, 255]);
        assert_eq!(img.pixel(2, 0), shade(UNKNOWN_CODE));
    }

    #[test]
    fn run_overview_writes_a_png() {
        let solids = vec![Solid {
            body: Body::Circle {
                center: Point2::new(20.0, 0.0),
                radius: 1.0,
            },
            height: 1.5,
            agent: None,
        }];
        let route = vec![Point2::new(0.0, 0.0), Point2::new(40.0, 0.0)];
        let plan = Trajectory::from_poses(&[Pose2D::new(0.0, 0.0, 0.0), Pose2D::new(10.0, 1.0, 0.0)]);
        let img = render_run(&solids, &route, &route, Some(&plan));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.png");
        write_png(&p, &img).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
