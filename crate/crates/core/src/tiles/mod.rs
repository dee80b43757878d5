//! Slices a merged elevation field (and optional co-registered color image)
//! into fixed-size tiles, quantizes heights to 16 bits, and writes PNG tiles
//! with `.txt` sidecars plus an `index.txt` describing the set.
//!
//! Tile `(row, col)` covers field rows `row * tile_size ..` and columns
//! `col * tile_size ..`; tile row 0 is the southernmost. Edge tiles are padded
//! to full size on the east (`pad_right`) and north (`pad_top`) sides with
//! pixel value 0.

mod io;

use std::path::PathBuf;

use thiserror::Error;

use crate::raster::{GridGeometry, MergedField};

pub use io::{
    encode_color_image, encode_color_png, encode_height_png, decode_color_png, decode_height_png, load_color_image,
    parse_index, parse_sidecar, read_tileset, write_tileset,
};

pub const DEFAULT_TILE_SIZE: usize = 256;
const QUANT_LEVELS: f64 = 65535.0;

#[derive(Debug, Error)]
pub enum TileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: png: {msg}")]
    Png { path: PathBuf, msg: String },
    #[error("tile size must be at least 1")]
    InvalidTileSize,
    #[error("color image {got_w}x{got_h} does not match field {want_w}x{want_h}")]
    ColorMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("bad value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
    #[error("unexpected line `{0}`")]
    UnexpectedLine(String),
    #[error("missing tile ({0},{1})")]
    MissingTile(usize, usize),
    #[error("duplicate tile ({0},{1})")]
    DuplicateTile(usize, usize),
    #[error("tile ({0},{1}) outside the tile grid")]
    OutOfRange(usize, usize),
    #[error("tile ({row},{col}) is {got} cells wide, expected {want}")]
    TileSizeMismatch {
        row: usize,
        col: usize,
        got: usize,
        want: usize,
    },
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
}

/// Whether tiles share the field's bounds or carry their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormScope {
    #[default]
    Global,
    PerTile,
}

impl NormScope {
    pub fn as_str(self) -> &'static str {
        match self {
            NormScope::Global => "global",
            NormScope::PerTile => "per_tile",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "global" => Some(NormScope::Global),
            "per_tile" => Some(NormScope::PerTile),
            _ => None,
        }
    }
}

/// Min/max scaling of a field onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub norm_min: f64,
    pub norm_max: f64,
    pub values: Vec<f64>,
}

pub fn normalize(field: &MergedField) -> Normalized {
    let (norm_min, norm_max) = field.bounds();
    let values = field
        .values
        .iter()
        .map(|&v| unit(v, norm_min, norm_max))
        .collect();
    Normalized {
        norm_min,
        norm_max,
        values,
    }
}

#[inline]
fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// 16-bit pixel for elevation `v` under bounds `(lo, hi)`.
#[inline]
pub fn quantize(v: f64, lo: f64, hi: f64) -> u16 {
    (unit(v, lo, hi) * QUANT_LEVELS).round() as u16
}

/// Elevation encoded by pixel `p`.
#[inline]
pub fn dequantize(p: u16, lo: f64, hi: f64) -> f64 {
    lo + (p as f64 / QUANT_LEVELS) * (hi - lo)
}

/// 8-bit RGB image, stored like the fields: row 0 is the southern edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

/// Per-tile metadata, serialized as the `.txt` sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct TileMeta {
    pub row: usize,
    pub col: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub norm_min: f64,
    pub norm_max: f64,
    /// Padded columns on the east edge.
    pub pad_right: usize,
    /// Padded rows on the north edge.
    pub pad_top: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainTile {
    pub meta: TileMeta,
    /// Cells per side, padding included.
    pub size: usize,
    /// `size * size` quantized heights, row 0 south.
    pub heights: Vec<u16>,
    pub color: Option<Vec<[u8; 3]>>,
}

impl TerrainTile {
    pub fn width(&self) -> usize {
        self.size
    }

    pub fn height(&self) -> usize {
        self.size
    }

    pub fn is_pad(&self, r: usize, c: usize) -> bool {
        r >= self.size - self.meta.pad_top || c >= self.size - self.meta.pad_right
    }

    /// Dequantized elevation of in-tile cell `(r, c)`.
    pub fn elevation(&self, r: usize, c: usize) -> f64 {
        dequantize(self.heights[r * self.size + c], self.meta.norm_min, self.meta.norm_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileEntry {
    pub row: usize,
    pub col: usize,
    pub height_file: String,
    pub color_file: Option<String>,
    pub sidecar_file: String,
}

impl TileEntry {
    pub fn for_tile(row: usize, col: usize, has_color: bool) -> Self {
        Self {
            row,
            col,
            height_file: format!("tile_{row}_{col}_h.png"),
            color_file: has_color.then(|| format!("tile_{row}_{col}_c.png")),
            sidecar_file: format!("tile_{row}_{col}.txt"),
        }
    }
}

/// Everything a client needs to assemble the tile set.
#[derive(Debug, Clone, PartialEq)]
pub struct TileIndex {
    pub tile_size: usize,
    pub rows: usize,
    pub cols: usize,
    /// Source field extent in cells.
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub norm_min: f64,
    pub norm_max: f64,
    pub normalization: NormScope,
    pub entries: Vec<TileEntry>,
}

impl TileIndex {
    pub fn new(
        geometry: &GridGeometry,
        tile_size: usize,
        bounds: (f64, f64),
        normalization: NormScope,
        tiles: &[TerrainTile],
    ) -> Self {
        Self {
            tile_size,
            rows: geometry.height.div_ceil(tile_size),
            cols: geometry.width.div_ceil(tile_size),
            width: geometry.width,
            height: geometry.height,
            origin_x: geometry.origin_x,
            origin_y: geometry.origin_y,
            cell_size: geometry.cell_size,
            norm_min: bounds.0,
            norm_max: bounds.1,
            normalization,
            entries: tiles
                .iter()
                .map(|t| TileEntry::for_tile(t.meta.row, t.meta.col, t.color.is_some()))
                .collect(),
        }
    }

    pub fn geometry(&self) -> Result<GridGeometry, TileError> {
        Ok(GridGeometry::new(
            self.width,
            self.height,
            self.origin_x,
            self.origin_y,
            self.cell_size,
        )?)
    }

    pub fn entry(&self, row: usize, col: usize) -> Option<&TileEntry> {
        self.entries.iter().find(|e| e.row == row && e.col == col)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SliceOptions {
    pub tile_size: usize,
    pub normalization: NormScope,
}

impl Default for SliceOptions {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            normalization: NormScope::Global,
        }
    }
}

/// Cuts `field` into `ceil(h / ts) x ceil(w / ts)` tiles in row-major tile order.
pub fn slice(
    field: &MergedField,
    color: Option<&ColorImage>,
    opts: &SliceOptions,
) -> Result<Vec<TerrainTile>, TileError> {
    let ts = opts.tile_size;
    if ts == 0 {
        return Err(TileError::InvalidTileSize);
    }
    let g = field.geometry;
    if let Some(img) = color {
        if img.width != g.width || img.height != g.height || img.pixels.len() != g.len() {
            return Err(TileError::ColorMismatch {
                got_w: img.width,
                got_h: img.height,
                want_w: g.width,
                want_h: g.height,
            });
        }
    }
    let global = field.bounds();
    let rows = g.height.div_ceil(ts);
    let cols = g.width.div_ceil(ts);

    let mut tiles = Vec::with_capacity(rows * cols);
    for tr in 0..rows {
        for tc in 0..cols {
            let r0 = tr * ts;
            let c0 = tc * ts;
            let used_rows = ts.min(g.height - r0);
            let used_cols = ts.min(g.width - c0);

            let (lo, hi) = match opts.normalization {
                NormScope::Global => global,
                NormScope::PerTile => {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for r in 0..used_rows {
                        for c in 0..used_cols {
                            let v = field.get(r0 + r, c0 + c);
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                    (lo, hi)
                }
            };

            let mut heights = vec![0u16; ts * ts];
            let mut rgb = color.map(|_| vec![[0u8; 3]; ts * ts]);
            for r in 0..used_rows {
                for c in 0..used_cols {
                    let src = g.index(r0 + r, c0 + c);
                    heights[r * ts + c] = quantize(field.values[src], lo, hi);
                    if let (Some(dst), Some(img)) = (rgb.as_mut(), color) {
                        dst[r * ts + c] = img.pixels[src];
                    }
                }
            }

            let (origin_x, origin_y) = g.cell_center(r0, c0);
            tiles.push(TerrainTile {
                meta: TileMeta {
                    row: tr,
                    col: tc,
                    origin_x,
                    origin_y,
                    cell_size: g.cell_size,
                    norm_min: lo,
                    norm_max: hi,
                    pad_right: ts - used_cols,
                    pad_top: ts - used_rows,
                },
                size: ts,
                heights,
                color: rgb,
            });
        }
    }
    Ok(tiles)
}

/// Rebuilds the field from a complete tile set, dropping padding.
pub fn reassemble(tiles: &[TerrainTile], index: &TileIndex) -> Result<MergedField, TileError> {
    let g = index.geometry()?;
    let ts = index.tile_size;
    if ts == 0 {
        return Err(TileError::InvalidTileSize);
    }
    let mut slots: Vec<Option<&TerrainTile>> = vec![None; index.rows * index.cols];
    for t in tiles {
        let (r, c) = (t.meta.row, t.meta.col);
        if r >= index.rows || c >= index.cols {
            return Err(TileError::OutOfRange(r, c));
        }
        if t.size != ts || t.heights.len() != ts * ts {
            return Err(TileError::TileSizeMismatch {
                row: r,
                col: c,
                got: t.size,
                want: ts,
            });
        }
        let slot = &mut slots[r * index.cols + c];
        if slot.is_some() {
            return Err(TileError::DuplicateTile(r, c));
        }
        *slot = Some(t);
    }
    if let Some(i) = slots.iter().position(Option::is_none) {
        return Err(TileError::MissingTile(i / index.cols, i % index.cols));
    }

    let mut values = vec![0.0; g.len()];
    for t in slots.into_iter().flatten() {
        let r0 = t.meta.row * ts;
        let c0 = t.meta.col * ts;
        for r in 0..ts.min(g.height - r0) {
            for c in 0..ts.min(g.width - c0) {
                values[g.index(r0 + r, c0 + c)] = t.elevation(r, c);
            }
        }
    }
    Ok(MergedField::new(g, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(w: usize, h: usize, values: Vec<f64>) -> MergedField {
        MergedField::new(GridGeometry::new(w, h, 100.0, 200.0, 5.0).unwrap(), values).unwrap()
    }

    fn random_field(w: usize, h: usize, seed: u64) -> MergedField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        field(w, h, (0..w * h).map(|_| rng.random_range(-80.0..300.0)).collect())
    }

    #[test]
    fn normalize_three_values() {
        let n = normalize(&field(3, 1, vec![-10.0, 40.0, 90.0]));
        assert_eq!((n.norm_min, n.norm_max), (-10.0, 90.0));
        assert_eq!(n.values, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_constant_field() {
        let n = normalize(&field(2, 2, vec![7.0; 4]));
        assert_eq!((n.norm_min, n.norm_max), (7.0, 7.0));
        assert!(n.values.iter().all(|&v| v == 0.0));
        assert_eq!(dequantize(quantize(7.0, 7.0, 7.0), 7.0, 7.0), 7.0);
    }

    #[test]
    fn quantization_round_trip_error_bound() {
        let f = random_field(32, 32, 1);
        let (lo, hi) = f.bounds();
        let bound = (hi - lo) / 65535.0 / 2.0 + 1e-12;
        for &v in &f.values {
            assert!((dequantize(quantize(v, lo, hi), lo, hi) - v).abs() <= bound);
        }
    }

    #[test]
    fn exact_multiple_has_no_padding() {
        let tiles = slice(&random_field(512, 512, 2), None, &SliceOptions::default()).unwrap();
        assert_eq!(tiles.len(), 4);
        assert!(tiles.iter().all(|t| t.meta.pad_right == 0 && t.meta.pad_top == 0));
    }

    #[test]
    fn ragged_edges_are_padded() {
        let tiles = slice(&random_field(500, 500, 3), None, &SliceOptions::default()).unwrap();
        assert_eq!(tiles.len(), 4);
        let pads: Vec<(usize, usize)> = tiles.iter().map(|t| (t.meta.pad_right, t.meta.pad_top)).collect();
        assert_eq!(pads, vec![(0, 0), (12, 0), (0, 12), (12, 12)]);
        // pad pixels are zero
        let t = &tiles[3];
        assert_eq!(t.heights[255 * 256 + 255], 0);
        assert!(t.is_pad(255, 0) && t.is_pad(0, 255) && !t.is_pad(243, 243));
    }

    #[test]
    fn tile_origins_follow_grid() {
        let tiles = slice(&random_field(10, 7, 4), None, &SliceOptions { tile_size: 4, ..Default::default() }).unwrap();
        assert_eq!(tiles.len(), 2 * 3);
        let t = tiles.iter().find(|t| t.meta.row == 1 && t.meta.col == 2).unwrap();
        assert_eq!((t.meta.origin_x, t.meta.origin_y), (100.0 + 8.0 * 5.0, 200.0 + 4.0 * 5.0));
        assert_eq!((t.meta.pad_right, t.meta.pad_top), (2, 1));
    }

    #[test]
    fn zero_tile_size_rejected() {
        let f = random_field(4, 4, 5);
        assert!(matches!(
            slice(&f, None, &SliceOptions { tile_size: 0, ..Default::default() }),
            Err(TileError::InvalidTileSize)
        ));
    }

    #[test]
    fn color_geometry_mismatch() {
        let f = random_field(4, 4, 6);
        let img = ColorImage { width: 4, height: 3, pixels: vec![[0; 3]; 12] };
        assert!(matches!(
            slice(&f, Some(&img), &SliceOptions::default()),
            Err(TileError::ColorMismatch { .. })
        ));
    }

    #[test]
    fn color_is_carried_into_tiles() {
        let f = random_field(3, 2, 7);
        let img = ColorImage {
            width: 3,
            height: 2,
            pixels: (0..6u8).map(|i| [i, i * 2, i * 3]).collect(),
        };
        let tiles = slice(&f, Some(&img), &SliceOptions { tile_size: 2, ..Default::default() }).unwrap();
        let t01 = &tiles[1];
        assert_eq!(t01.color.as_ref().unwrap()[0], [2, 4, 6]);
        assert_eq!(t01.color.as_ref().unwrap()[2], [5, 10, 15]);
        assert_eq!(t01.color.as_ref().unwrap()[1], [0, 0, 0]);
    }

    #[test]
    fn missing_and_duplicate_tiles() {
        let f = random_field(8, 8, 8);
        let opts = SliceOptions { tile_size: 4, ..Default::default() };
        let tiles = slice(&f, None, &opts).unwrap();
        let index = TileIndex::new(&f.geometry, 4, f.bounds(), NormScope::Global, &tiles);
        let mut dropped = tiles.clone();
        dropped.remove(2);
        let err = reassemble(&dropped, &index).unwrap_err();
        assert_eq!(err.to_string(), "missing tile (1,0)");
        let mut dup = tiles.clone();
        dup.push(tiles[0].clone());
        assert!(matches!(reassemble(&dup, &index), Err(TileError::DuplicateTile(0, 0))));
    }

    #[test]
    fn global_bounds_shared_by_all_tiles() {
        let f = random_field(40, 30, 9);
        let tiles = slice(&f, None, &SliceOptions { tile_size: 16, ..Default::default() }).unwrap();
        let b = f.bounds();
        assert!(tiles.iter().all(|t| (t.meta.norm_min, t.meta.norm_max) == b));
    }

    #[test]
    fn per_tile_bounds_are_local() {
        let f = random_field(40, 30, 10);
        let opts = SliceOptions { tile_size: 16, normalization: NormScope::PerTile };
        let tiles = slice(&f, None, &opts).unwrap();
        let index = TileIndex::new(&f.geometry, 16, f.bounds(), NormScope::PerTile, &tiles);
        let back = reassemble(&tiles, &index).unwrap();
        let (lo, hi) = f.bounds();
        assert!(tiles.iter().all(|t| t.meta.norm_min >= lo && t.meta.norm_max <= hi));
        assert!(tiles.iter().any(|t| (t.meta.norm_min, t.meta.norm_max) != (lo, hi)));
        for (a, b) in back.values.iter().zip(&f.values) {
            assert!((a - b).abs() <= (hi - lo) / 65535.0);
        }
    }

    proptest! {
        #[test]
        fn slice_partitions_and_reassembles(
            w in 1usize..40, h in 1usize..40, ts in 1usize..17, seed in 0u64..1000,
        ) {
            let f = random_field(w, h, seed);
            let opts = SliceOptions { tile_size: ts, ..Default::default() };
            let tiles = slice(&f, None, &opts).unwrap();
            prop_assert_eq!(tiles.len(), h.div_ceil(ts) * w.div_ceil(ts));
            let non_pad: usize = tiles
                .iter()
                .map(|t| (ts - t.meta.pad_right) * (ts - t.meta.pad_top))
                .sum();
            prop_assert_eq!(non_pad, w * h);
            let index = TileIndex::new(&f.geometry, ts, f.bounds(), NormScope::Global, &tiles);
            let back = reassemble(&tiles, &index).unwrap();
            let (lo, hi) = f.bounds();
            for (a, b) in back.values.iter().zip(&f.values) {
                prop_assert!((a - b).abs() <= (hi - lo) / 65535.0);
            }
        }

        #[test]
        fn normalization_is_monotone(a in -1e4f64..1e4, b in -1e4f64..1e4, lo in -1e4f64..0.0, span in 0.0f64..2e4) {
            let hi = lo + span;
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(unit(a, lo, hi) <= unit(b, lo, hi));
            prop_assert!(quantize(a, lo, hi) <= quantize(b, lo, hi));
        }
    }
}
