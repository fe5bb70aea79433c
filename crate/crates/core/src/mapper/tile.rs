use std::fs;
use std::io::Read;
use std::path::Path;

use super::MapperError;
use crate::geom::{Aabb, Point2};
use crate::grid::{dequantize_probability, quantize_probability};

pub const MAGIC: &[u8; 4] = b"GMT1";
const HEADER_LEN: usize = 4 + 8 + 32 + 8 + 4 + 4 + 8 + 8;
pub const UNKNOWN_CODE: u8 = 128;

/// A georeferenced square patch of quantized occupancy, written by one session.
///
/// Cells are row-major with row 0 at `bounds.min.y` and column 0 at `bounds.min.x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMapTile {
    pub tile_id: u64,
    pub bounds: Aabb,
    pub resolution: f64,
    pub rows: u32,
    pub cols: u32,
    pub acquisition_date: f64,
    pub session_id: u64,
    pub cells: Vec<u8>,
}

impl LocalMapTile {
    pub fn unknown(tile_id: u64, bounds: Aabb, resolution: f64, session_id: u64, acquisition_date: f64) -> Self {
        let rows = (bounds.height() / resolution).round() as u32;
        let cols = (bounds.width() / resolution).round() as u32;
        Self {
            tile_id,
            bounds,
            resolution,
            rows,
            cols,
            acquisition_date,
            session_id,
            cells: vec![UNKNOWN_CODE; rows as usize * cols as usize],
        }
    }

    /// Index of the cell holding a world point, if the tile covers it.
    pub fn cell_index(&self, p: Point2) -> Option<usize> {
        if !self.bounds.contains(p) {
            return None;
        }
        let c = (((p.x - self.bounds.min.x) / self.resolution).floor() as usize).min(self.cols as usize - 1);
        let r = (((p.y - self.bounds.min.y) / self.resolution).floor() as usize).min(self.rows as usize - 1);
        Some(r * self.cols as usize + c)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.bounds.min.x + (col as f64 + 0.5) * self.resolution,
            self.bounds.min.y + (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn code_at(&self, p: Point2) -> Option<u8> {
        self.cell_index(p).map(|i| self.cells[i])
    }

    pub fn probability_at(&self, p: Point2) -> Option<f64> {
        self.code_at(p).map(dequantize_probability)
    }

    pub fn set_probability(&mut self, index: usize, p: f64) {
        self.cells[index] = quantize_probability(p);
    }

    pub fn known_cells(&self) -> usize {
        self.cells.iter().filter(|c| **c != UNKNOWN_CODE).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(HEADER_LEN + self.cells.len());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&self.tile_id.to_le_bytes());
        for v in [self.bounds.min.x, self.bounds.min.y, self.bounds.max.x, self.bounds.max.y, self.resolution] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&self.rows.to_le_bytes());
        b.extend_from_slice(&self.cols.to_le_bytes());
        b.extend_from_slice(&self.acquisition_date.to_le_bytes());
        b.extend_from_slice(&self.session_id.to_le_bytes());
        b.extend_from_slice(&self.cells);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut tile = parse_header(bytes)?;
        let n = tile.rows as usize * tile.cols as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != n {
            return Err(format!("expected {n} cell bytes, found {}", body.len()));
        }
        tile.cells = body.to_vec();
        Ok(tile)
    }

    pub fn write(&self, path: &Path) -> Result<(), MapperError> {
        fs::write(path, self.to_bytes()).map_err(|e| MapperError::storage(self.tile_id, path, e))
    }

    pub fn read(path: &Path, tile_id: u64) -> Result<Self, MapperError> {
        let bytes = fs::read(path).map_err(|e| MapperError::storage(tile_id, path, e))?;
        let tile = Self::from_bytes(&bytes).map_err(|e| MapperError::storage(tile_id, path, e))?;
        if tile.tile_id != tile_id {
            return Err(MapperError::storage(tile_id, path, format!("file holds tile {}", tile.tile_id)));
        }
        Ok(tile)
    }

    /// Reads only the header; the returned tile has no cells.
    pub fn read_header(path: &Path, tile_id: u64) -> Result<Self, MapperError> {
        let mut buf = [0u8; HEADER_LEN];
        let mut f = fs::File::open(path).map_err(|e| MapperError::storage(tile_id, path, e))?;
        f.read_exact(&mut buf).map_err(|e| MapperError::storage(tile_id, path, e))?;
        let tile = parse_header(&buf).map_err(|e| MapperError::storage(tile_id, path, e))?;
        let len = f.metadata().map_err(|e| MapperError::storage(tile_id, path, e))?.len();
        let want = (HEADER_LEN + tile.rows as usize * tile.cols as usize) as u64;
        if len != want {
            return Err(MapperError::storage(tile_id, path, format!("file is {len} bytes, expected {want}")));
        }
        if tile.tile_id != tile_id {
            return Err(MapperError::storage(tile_id, path, format!("file holds tile {}", tile.tile_id)));
        }
        Ok(tile)
    }
}

fn parse_header(bytes: &[u8]) -> Result<LocalMapTile, String> {
    if bytes.len() < HEADER_LEN {
        return Err("truncated header".into());
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic".into());
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let bounds = Aabb::new(f64_at(12), f64_at(20), f64_at(28), f64_at(36));
    let resolution = f64_at(44);
    if !bounds.is_finite() || !(resolution > 0.0) {
        return Err("invalid bounds or resolution".into());
    }
    Ok(LocalMapTile {
        tile_id: u64_at(4),
        bounds,
        resolution,
        rows: u32_at(52),
        cols: u32_at(56),
        acquisition_date: f64_at(60),
        session_id: u64_at(68),
        cells: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_round_trip() {
        let mut t = LocalMapTile::unknown(42, Aabb::new(40.0, -80.0, 80.0, -40.0), 0.2, 3, 1.5e9);
        assert_eq!((t.rows, t.cols), (200, 200));
        t.set_probability(5, 1.0);
        t.set_probability(40_000 - 1, 0.0);
        let b = t.to_bytes();
        assert_eq!(&b[..4], b"GMT1");
        assert_eq!(b.len(), 76 + 40_000);
        assert_eq!(LocalMapTile::from_bytes(&b).unwrap(), t);
        assert!(LocalMapTile::from_bytes(&b[..100]).is_err());
    }

    #[test]
    fn cell_lookup_half_open() {
        let t = LocalMapTile::unknown(1, Aabb::new(0.0, 0.0, 40.0, 40.0), 0.2, 0, 0.0);
        assert_eq!(t.cell_index(Point2::new(0.0, 0.0)), Some(0));
        assert_eq!(t.cell_index(Point2::new(0.3, 0.1)), Some(1));
        assert_eq!(t.cell_index(Point2::new(0.1, 0.3)), Some(200));
        assert_eq!(t.cell_index(Point2::new(40.0, 1.0)), None);
        assert_eq!(t.probability_at(Point2::new(1.0, 1.0)), Some(0.5));
    }
}
