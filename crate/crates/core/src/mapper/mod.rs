//! Streaming historical map: world-aligned tiles in an R-tree, a bounded set of
//! resident tiles with write-back to disk, and recency-weighted fusion of tiles
//! from different sessions.

mod tile;

pub use tile::{LocalMapTile, MAGIC, UNKNOWN_CODE};

use std::borrow::Borrow;
use std::fmt::Display;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use lru::LruCache;
use rstar::{RTree, RTreeObject, AABB};
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::geom::{Aabb, Point2, SpatioTemporalStamp};
use crate::grid::{dequantize_probability, CellState, GridGeometry, OccupancyGrid, UNKNOWN};

pub const DEFAULT_TILE_CELLS: u32 = 200;
pub const MANIFEST_NAME: &str = "manifest.txt";
const LATTICE_BITS: u32 = 20;
const LATTICE_OFFSET: i64 = 1 << (LATTICE_BITS - 1);
const SESSION_LIMIT: u64 = 1 << (64 - 2 * LATTICE_BITS);
const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum MapperError {
    #[error("tile {tile_id:#x} ({}): {reason}", path.display())]
    Storage { tile_id: u64, path: PathBuf, reason: String },
    #[error("manifest {} line {line}: {reason}", path.display())]
    Manifest { path: PathBuf, line: usize, reason: String },
    #[error("no tile covers ({x}, {y})")]
    Uncovered { x: f64, y: f64 },
    #[error("({x}, {y}) lies outside the mappable world")]
    OutOfWorld { x: f64, y: f64 },
    #[error("invalid mapper configuration: {0}")]
    Config(String),
}

impl MapperError {
    pub(crate) fn storage(tile_id: u64, path: &Path, reason: impl Display) -> Self {
        Self::Storage {
            tile_id,
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

/// Exponential down-weighting of older tiles: `factor` per `period_days`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecencyDecay {
    pub factor: f64,
    pub period_days: f64,
}

impl Default for RecencyDecay {
    fn default() -> Self {
        Self {
            factor: 0.5,
            period_days: 30.0,
        }
    }
}

/// Weights `w_i = n·a_i / Σa_j` with `a_i = factor^(Δdays_i / period)`, where
/// `Δdays_i` is the age relative to the newest date. They sum to `n`.
pub fn recency_weights(dates: &[f64], decay: &RecencyDecay) -> Vec<f64> {
    let newest = dates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let a: Vec<f64> = dates
        .iter()
        .map(|d| decay.factor.powf((newest - d) / SECONDS_PER_DAY / decay.period_days))
        .collect();
    let sum: f64 = a.iter().sum();
    let n = dates.len() as f64;
    a.iter().map(|ai| n * ai / sum).collect()
}

/// Recency-weighted average `(1/n)·Σ w_i·p_i` over the tiles that cover `point`
/// and hold a known value there. Returns 0.5 when every covering tile is unknown.
pub fn fuse_overlapping<T: Borrow<LocalMapTile>>(
    tiles: &[T],
    point: Point2,
    decay: &RecencyDecay,
) -> Result<f64, MapperError> {
    let mut covered = false;
    let mut dates = Vec::new();
    let mut probs = Vec::new();
    for t in tiles {
        let t = t.borrow();
        if let Some(code) = t.code_at(point) {
            covered = true;
            if code != UNKNOWN_CODE {
                dates.push(t.acquisition_date);
                probs.push(dequantize_probability(code));
            }
        }
    }
    if !covered {
        return Err(MapperError::Uncovered { x: point.x, y: point.y });
    }
    Ok(weighted_average(&probs, &dates, decay))
}

fn weighted_average(probs: &[f64], dates: &[f64], decay: &RecencyDecay) -> f64 {
    match probs.len() {
        0 => UNKNOWN,
        1 => probs[0],
        n => {
            let w = recency_weights(dates, decay);
            w.iter().zip(probs).map(|(w, p)| w * p).sum::<f64>() / n as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct MapperConfig {
    pub storage_dir: PathBuf,
    pub max_resident: usize,
    /// Tile edge in cells.
    pub tile_cells: u32,
    pub resolution: f64,
    pub decay: RecencyDecay,
}

impl MapperConfig {
    pub fn new(storage_dir: impl Into<PathBuf>) -> Self {
        Self {
            storage_dir: storage_dir.into(),
            max_resident: 64,
            tile_cells: DEFAULT_TILE_CELLS,
            resolution: 0.2,
            decay: RecencyDecay::default(),
        }
    }

    pub fn tile_size(&self) -> f64 {
        self.tile_cells as f64 * self.resolution
    }

    fn validate(&self) -> Result<(), MapperError> {
        if self.max_resident == 0 {
            return Err(MapperError::Config("max_resident must be at least 1".into()));
        }
        if self.tile_cells == 0 || !(self.resolution > 0.0) {
            return Err(MapperError::Config("tile size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MapperStats {
    pub loads: u64,
    pub writes: u64,
    pub evictions: u64,
    pub peak_resident: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Indexed {
    id: u64,
    envelope: AABB<[f64; 2]>,
}

impl RTreeObject for Indexed {
    type Envelope = AABB<[f64; 2]>;

    fn envelope(&self) -> Self::Envelope {
        self.envelope
    }
}

#[derive(Debug, Clone)]
struct Entry {
    bounds: Aabb,
    path: PathBuf,
}

struct Resident {
    tile: Arc<LocalMapTile>,
    dirty: bool,
}

/// All known tiles, with at most `max_resident` of them held in memory.
pub struct TileIndex {
    config: MapperConfig,
    session_id: u64,
    tree: RTree<Indexed>,
    entries: FxHashMap<u64, Entry>,
    resident: LruCache<u64, Resident>,
    stats: MapperStats,
}

impl TileIndex {
    pub fn new(config: MapperConfig, session_id: u64) -> Result<Self, MapperError> {
        config.validate()?;
        if session_id >= SESSION_LIMIT {
            return Err(MapperError::Config(format!("session id {session_id} exceeds {SESSION_LIMIT}")));
        }
        fs::create_dir_all(&config.storage_dir).map_err(|e| MapperError::Config(e.to_string()))?;
        let cap = NonZeroUsize::new(config.max_resident).unwrap();
        Ok(Self {
            config,
            session_id,
            tree: RTree::new(),
            entries: FxHashMap::default(),
            resident: LruCache::new(cap),
            stats: MapperStats::default(),
        })
    }

    pub fn config(&self) -> &MapperConfig {
        &self.config
    }

    pub fn session_id(&self) -> u64 {
        self.session_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resident_count(&self) -> usize {
        self.resident.len()
    }

    pub fn stats(&self) -> MapperStats {
        self.stats
    }

    /// Every tile id with its bounds, sorted by id.
    pub fn catalog(&self) -> Vec<(u64, Aabb)> {
        let mut v: Vec<_> = self.entries.iter().map(|(id, e)| (*id, e.bounds)).collect();
        v.sort_by_key(|(id, _)| *id);
        v
    }

    pub fn tile_id(&self, ix: i64, iy: i64, session: u64) -> Result<u64, MapperError> {
        let size = self.config.tile_size();
        let (ox, oy) = (ix + LATTICE_OFFSET, iy + LATTICE_OFFSET);
        let range = 0..(1i64 << LATTICE_BITS);
        if !range.contains(&ox) || !range.contains(&oy) {
            return Err(MapperError::OutOfWorld {
                x: ix as f64 * size,
                y: iy as f64 * size,
            });
        }
        Ok((session << (2 * LATTICE_BITS)) | ((ox as u64) << LATTICE_BITS) | oy as u64)
    }

    pub fn session_of(tile_id: u64) -> u64 {
        tile_id >> (2 * LATTICE_BITS)
    }

    fn lattice_bounds(&self, ix: i64, iy: i64) -> Aabb {
        let s = self.config.tile_size();
        Aabb::new(ix as f64 * s, iy as f64 * s, (ix + 1) as f64 * s, (iy + 1) as f64 * s)
    }

    fn tile_path(&self, id: u64) -> PathBuf {
        self.config.storage_dir.join(format!("tile_{id:016x}.gmt"))
    }

    fn admit(&mut self, id: u64, r: Resident) -> Result<(), MapperError> {
        if let Some((old_id, old)) = self.resident.push(id, r) {
            if old_id != id {
                self.stats.evictions += 1;
                if old.dirty {
                    old.tile.write(&self.entries[&old_id].path)?;
                    self.stats.writes += 1;
                }
            }
        }
        self.stats.peak_resident = self.stats.peak_resident.max(self.resident.len());
        Ok(())
    }

    fn fetch(&mut self, id: u64) -> Result<Arc<LocalMapTile>, MapperError> {
        if let Some(r) = self.resident.get(&id) {
            return Ok(r.tile.clone());
        }
        let tile = Arc::new(LocalMapTile::read(&self.entries[&id].path, id)?);
        self.stats.loads += 1;
        self.admit(
            id,
            Resident {
                tile: tile.clone(),
                dirty: false,
            },
        )?;
        Ok(tile)
    }

    fn tile_mut(&mut self, id: u64) -> Result<&mut LocalMapTile, MapperError> {
        self.fetch(id)?;
        let r = self.resident.get_mut(&id).expect("just fetched");
        r.dirty = true;
        Ok(Arc::make_mut(&mut r.tile))
    }

    fn ids_intersecting(&self, viewport: &Aabb) -> Vec<u64> {
        let env = AABB::from_corners([viewport.min.x, viewport.min.y], [viewport.max.x, viewport.max.y]);
        let mut ids: Vec<u64> = self
            .tree
            .locate_in_envelope_intersecting(&env)
            .filter(|e| viewport.intersects(&self.entries[&e.id].bounds))
            .map(|e| e.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Tiles intersecting `viewport` (half-open), sorted by id, loading from disk as needed.
    pub fn query_visible(&mut self, viewport: &Aabb) -> Result<Vec<Arc<LocalMapTile>>, MapperError> {
        if !viewport.is_finite() {
            return Err(MapperError::Config("viewport must be finite".into()));
        }
        self.ids_intersecting(viewport).into_iter().map(|id| self.fetch(id)).collect()
    }

    /// Writes the known cells of a vehicle-frame grid into the current session's
    /// world tiles, creating tiles on demand. Returns the number of cells written.
    pub fn insert_observation(
        &mut self,
        grid: &OccupancyGrid,
        stamp: &SpatioTemporalStamp,
    ) -> Result<usize, MapperError> {
        let geo = *grid.geometry();
        let pose = stamp.pose;
        let footprint = world_footprint(&geo, stamp);
        let s = self.config.tile_size();
        let res = self.config.resolution;
        let n = self.config.tile_cells as usize;
        let (ix0, ix1) = ((footprint.min.x / s).floor() as i64, (footprint.max.x / s).floor() as i64);
        let (iy0, iy1) = ((footprint.min.y / s).floor() as i64, (footprint.max.y / s).floor() as i64);
        let mut written = 0;
        for ix in ix0..=ix1 {
            for iy in iy0..=iy1 {
                let id = self.tile_id(ix, iy, self.session_id)?;
                let bounds = self.lattice_bounds(ix, iy);
                let span = |lo: f64, hi: f64, origin: f64| {
                    let a = ((lo - origin) / res).floor().max(0.0) as usize;
                    let b = (((hi - origin) / res).ceil().max(0.0) as usize).min(n);
                    a..b
                };
                let rows = span(footprint.min.y, footprint.max.y, bounds.min.y);
                let cols = span(footprint.min.x, footprint.max.x, bounds.min.x);
                let mut writes = Vec::new();
                for r in rows {
                    for c in cols.clone() {
                        let world = Point2::new(
                            bounds.min.x + (c as f64 + 0.5) * res,
                            bounds.min.y + (r as f64 + 0.5) * res,
                        );
                        if let Some(cell) = geo.local_to_cell(pose.inverse_transform_point(world)) {
                            let p = grid.get(cell);
                            if CellState::classify(p) != CellState::Unknown {
                                writes.push((r * n + c, p));
                            }
                        }
                    }
                }
                if writes.is_empty() {
                    continue;
                }
                if !self.entries.contains_key(&id) {
                    self.create_tile(id, bounds, stamp.t)?;
                }
                let tile = self.tile_mut(id)?;
                tile.acquisition_date = tile.acquisition_date.max(stamp.t);
                for (i, p) in &writes {
                    tile.set_probability(*i, *p);
                }
                written += writes.len();
            }
        }
        Ok(written)
    }

    fn create_tile(&mut self, id: u64, bounds: Aabb, date: f64) -> Result<(), MapperError> {
        let tile = LocalMapTile::unknown(id, bounds, self.config.resolution, self.session_id, date);
        let path = self.tile_path(id);
        self.entries.insert(id, Entry { bounds, path });
        self.tree.insert(Indexed {
            id,
            envelope: AABB::from_corners([bounds.min.x, bounds.min.y], [bounds.max.x, bounds.max.y]),
        });
        self.admit(
            id,
            Resident {
                tile: Arc::new(tile),
                dirty: true,
            },
        )
    }

    /// Recency-fused belief at a world point across all sessions.
    pub fn fused_probability(&mut self, point: Point2) -> Result<f64, MapperError> {
        let tiles = self.query_visible(&Aabb::new(point.x, point.y, point.x, point.y))?;
        fuse_overlapping(&tiles, point, &self.config.decay)
    }

    /// The historical map rendered into a vehicle-frame grid at `stamp`.
    /// Cells not covered by any tile are unknown.
    pub fn local_map(
        &mut self,
        geometry: GridGeometry,
        stamp: &SpatioTemporalStamp,
    ) -> Result<OccupancyGrid, MapperError> {
        let tiles = self.query_visible(&world_footprint(&geometry, stamp))?;
        let decay = self.config.decay;
        let mut out = OccupancyGrid::with_geometry(geometry);
        if tiles.is_empty() {
            return Ok(out);
        }
        let mut probs = Vec::with_capacity(tiles.len());
        let mut dates = Vec::with_capacity(tiles.len());
        for i in 0..geometry.len() {
            let cell = geometry.cell_of(i);
            let world = stamp.pose.transform_point(geometry.cell_center(cell));
            probs.clear();
            dates.clear();
            for t in &tiles {
                if let Some(code) = t.code_at(world) {
                    if code != UNKNOWN_CODE {
                        probs.push(dequantize_probability(code));
                        dates.push(t.acquisition_date);
                    }
                }
            }
            if !probs.is_empty() {
                out.set(cell, weighted_average(&probs, &dates, &decay));
            }
        }
        Ok(out)
    }

    /// Flushes dirty tiles and writes the manifest into the storage directory.
    pub fn save_session(&mut self) -> Result<PathBuf, MapperError> {
        for (id, r) in self.resident.iter_mut() {
            if r.dirty {
                r.tile.write(&self.entries[id].path)?;
                self.stats.writes += 1;
                r.dirty = false;
            }
        }
        let manifest = self.config.storage_dir.join(MANIFEST_NAME);
        let mut text = String::new();
        for (id, b) in self.catalog() {
            let path = &self.entries[&id].path;
            let shown = path
                .strip_prefix(&self.config.storage_dir)
                .unwrap_or(path)
                .display()
                .to_string();
            text.push_str(&format!("{id} {} {} {} {} {shown}\n", b.min.x, b.min.y, b.max.x, b.max.y));
        }
        fs::write(&manifest, text).map_err(|e| MapperError::Manifest {
            path: manifest.clone(),
            line: 0,
            reason: e.to_string(),
        })?;
        Ok(manifest)
    }

    /// Rebuilds an index from a manifest. New observations go to a fresh session
    /// numbered one past the newest restored one. Every tile file is checked.
    pub fn restore_session(manifest: &Path, config: MapperConfig) -> Result<Self, MapperError> {
        let text = fs::read_to_string(manifest).map_err(|e| MapperError::Manifest {
            path: manifest.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
        let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut index = Self::new(config, 0)?;
        let mut items = Vec::new();
        let mut newest_session = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| MapperError::Manifest {
                path: manifest.to_path_buf(),
                line: i + 1,
                reason: reason.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(bad("expected `tile_id xmin ymin xmax ymax path`"));
            }
            let id: u64 = f[0].parse().map_err(|_| bad("bad tile id"))?;
            let mut v = [0.0; 4];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = f[k + 1].parse().map_err(|_| bad("bad bound"))?;
            }
            let bounds = Aabb::new(v[0], v[1], v[2], v[3]);
            let path = base.join(f[5]);
            let header = LocalMapTile::read_header(&path, id)?;
            if header.bounds != bounds {
                return Err(MapperError::storage(id, &path, "bounds differ from manifest"));
            }
            if index.entries.insert(id, Entry { bounds, path }).is_some() {
                return Err(bad("duplicate tile id"));
            }
            newest_session = newest_session.max(Some(Self::session_of(id)));
            items.push(Indexed {
                id,
                envelope: AABB::from_corners([v[0], v[1]], [v[2], v[3]]),
            });
        }
        index.tree = RTree::bulk_load(items);
        index.session_id = newest_session.map_or(0, |s| s + 1);
        Ok(index)
    }
}

/// World-frame bounding box of a vehicle-frame grid placed at `stamp`.
pub fn world_footprint(geo: &GridGeometry, stamp: &SpatioTemporalStamp) -> Aabb {
    let h = 0.5 * geo.resolution;
    let front = geo.cell_center(crate::grid::Cell::new(0, 0));
    let back = geo.cell_center(crate::grid::Cell::new(geo.rows - 1, geo.cols - 1));
    let corners = [
        Point2::new(front.x + h, front.y + h),
        Point2::new(front.x + h, back.y - h),
        Point2::new(back.x - h, back.y - h),
        Point2::new(back.x - h, front.y + h),
    ];
    let mut b = Aabb::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in corners {
        let w = stamp.pose.transform_point(c);
        b.min.x = b.min.x.min(w.x);
        b.min.y = b.min.y.min(w.y);
        b.max.x = b.max.x.max(w.x);
        b.max.y = b.max.y.max(w.y);
    }
    b
}
