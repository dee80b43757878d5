//! PNG encoding and the `.txt` sidecar / `index.txt` schemas.
//!
//! Sidecar (`tile_{row}_{col}.txt`), keys always in this order:
//!
//! ```text
//! row=0
//! col=1
//! origin_x=500256
//! origin_y=7000000
//! cell_size=1
//! norm_min=-42.5
//! norm_max=310.25
//! pad_right=12
//! pad_top=0
//! ```
//!
//! `index.txt` carries the set-level keys `tile_size rows cols width height
//! origin_x origin_y cell_size norm_min norm_max normalization`, followed by
//! one `tile=<row>,<col>,<height png>,<color png or ->,<sidecar>` line per tile.
//!
//! PNG rows are written north to south, the usual image orientation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::{ColorImage, NormScope, TerrainTile, TileEntry, TileError, TileIndex, TileMeta};

const SIDECAR_KEYS: [&str; 9] = [
    "row", "col", "origin_x", "origin_y", "cell_size", "norm_min", "norm_max", "pad_right", "pad_top",
];

fn png_err(path: &Path, e: impl std::fmt::Display) -> TileError {
    TileError::Png {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TileError + '_ {
    move |source| TileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn encode_png(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(out)
}

pub fn encode_height_png(tile: &TerrainTile) -> Result<Vec<u8>, png::EncodingError> {
    let n = tile.size;
    let mut data = Vec::with_capacity(n * n * 2);
    for r in (0..n).rev() {
        for &p in &tile.heights[r * n..(r + 1) * n] {
            data.extend_from_slice(&p.to_be_bytes());
        }
    }
    encode_png(n, n, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
}

pub fn encode_color_png(size: usize, pixels: &[[u8; 3]]) -> Result<Vec<u8>, png::EncodingError> {
    let mut data = Vec::with_capacity(size * size * 3);
    for r in (0..size).rev() {
        for px in &pixels[r * size..(r + 1) * size] {
            data.extend_from_slice(px);
        }
    }
    encode_png(size, size, png::ColorType::Rgb, png::BitDepth::Eight, &data)
}

/// Encodes a whole south-first image as an 8-bit RGB PNG, north row first.
pub fn encode_color_image(img: &ColorImage) -> Result<Vec<u8>, png::EncodingError> {
    let mut data = Vec::with_capacity(img.pixels.len() * 3);
    for r in (0..img.height).rev() {
        for px in &img.pixels[r * img.width..(r + 1) * img.width] {
            data.extend_from_slice(px);
        }
    }
    encode_png(img.width, img.height, png::ColorType::Rgb, png::BitDepth::Eight, &data)
}

fn decode_raw(bytes: &[u8], transform: png::Transformations) -> Result<(png::OutputInfo, Vec<u8>), png::DecodingError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(transform);
    let mut reader = dec.read_info()?;
    let size = reader.output_buffer_size().ok_or(png::DecodingError::LimitsExceeded)?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

/// Decodes a 16-bit grayscale PNG into `(width, height, pixels)` with row 0 south.
pub fn decode_height_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), String> {
    let (info, buf) = decode_raw(bytes, png::Transformations::IDENTITY).map_err(|e| e.to_string())?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(format!(
            "expected 16-bit grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut px = Vec::with_capacity(w * h);
    for r in (0..h).rev() {
        let line = &buf[r * info.line_size..r * info.line_size + w * 2];
        px.extend(line.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])));
    }
    Ok((w, h, px))
}

/// Decodes any 8-bit-representable PNG into RGB with row 0 south.
pub fn decode_color_png(bytes: &[u8]) -> Result<ColorImage, String> {
    let (info, buf) = decode_raw(bytes, png::Transformations::normalize_to_color8()).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(format!("unsupported color type {other:?}")),
    };
    let mut pixels = Vec::with_capacity(w * h);
    for r in (0..h).rev() {
        let line = &buf[r * info.line_size..r * info.line_size + w * channels];
        pixels.extend(line.chunks_exact(channels).map(|p| match channels {
            1 | 2 => [p[0], p[0], p[0]],
            _ => [p[0], p[1], p[2]],
        }));
    }
    Ok(ColorImage {
        width: w,
        height: h,
        pixels,
    })
}

pub fn load_color_image(path: impl AsRef<Path>) -> Result<ColorImage, TileError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_color_png(&bytes).map_err(|e| png_err(path, e))
}

impl TileMeta {
    pub fn to_sidecar(&self) -> String {
        let mut s = String::new();
        for (k, v) in SIDECAR_KEYS.iter().zip([
            self.row.to_string(),
            self.col.to_string(),
            self.origin_x.to_string(),
            self.origin_y.to_string(),
            self.cell_size.to_string(),
            self.norm_min.to_string(),
            self.norm_max.to_string(),
            self.pad_right.to_string(),
            self.pad_top.to_string(),
        ]) {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }
}

struct KeyValues<'a> {
    map: HashMap<&'a str, &'a str>,
}

impl<'a> KeyValues<'a> {
    fn get<T: FromStr>(&self, key: &str) -> Result<T, TileError> {
        let raw = self
            .map
            .get(key)
            .ok_or_else(|| TileError::MissingKey(key.to_string()))?;
        raw.parse().map_err(|_| TileError::BadValue {
            key: key.to_string(),
            value: raw.to_string(),
        })
    }

    fn get_f64(&self, key: &str) -> Result<f64, TileError> {
        let v: f64 = self.get(key)?;
        if !v.is_finite() {
            return Err(TileError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
            });
        }
        Ok(v)
    }
}

fn split_key_values<'a>(
    text: &'a str,
    allowed: &[&str],
    mut on_tile: impl FnMut(&'a str) -> Result<(), TileError>,
) -> Result<KeyValues<'a>, TileError> {
    let mut map = HashMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| TileError::UnexpectedLine(line.to_string()))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "tile" {
            on_tile(v)?;
        } else if allowed.contains(&k) {
            if map.insert(k, v).is_some() {
                return Err(TileError::UnexpectedLine(format!("repeated key `{k}`")));
            }
        } else {
            return Err(TileError::UnexpectedLine(line.to_string()));
        }
    }
    Ok(KeyValues { map })
}

pub fn parse_sidecar(text: &str) -> Result<TileMeta, TileError> {
    let kv = split_key_values(text, &SIDECAR_KEYS, |v| {
        Err(TileError::UnexpectedLine(format!("tile={v}")))
    })?;
    let meta = TileMeta {
        row: kv.get("row")?,
        col: kv.get("col")?,
        origin_x: kv.get_f64("origin_x")?,
        origin_y: kv.get_f64("origin_y")?,
        cell_size: kv.get_f64("cell_size")?,
        norm_min: kv.get_f64("norm_min")?,
        norm_max: kv.get_f64("norm_max")?,
        pad_right: kv.get("pad_right")?,
        pad_top: kv.get("pad_top")?,
    };
    if meta.norm_max < meta.norm_min {
        return Err(TileError::BadValue {
            key: "norm_max".into(),
            value: meta.norm_max.to_string(),
        });
    }
    Ok(meta)
}

const INDEX_KEYS: [&str; 11] = [
    "tile_size", "rows", "cols", "width", "height", "origin_x", "origin_y", "cell_size", "norm_min",
    "norm_max", "normalization",
];

impl TileIndex {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "tile_size={}", self.tile_size).unwrap();
        writeln!(s, "rows={}", self.rows).unwrap();
        writeln!(s, "cols={}", self.cols).unwrap();
        writeln!(s, "width={}", self.width).unwrap();
        writeln!(s, "height={}", self.height).unwrap();
        writeln!(s, "origin_x={}", self.origin_x).unwrap();
        writeln!(s, "origin_y={}", self.origin_y).unwrap();
        writeln!(s, "cell_size={}", self.cell_size).unwrap();
        writeln!(s, "norm_min={}", self.norm_min).unwrap();
        writeln!(s, "norm_max={}", self.norm_max).unwrap();
        writeln!(s, "normalization={}", self.normalization.as_str()).unwrap();
        for e in &self.entries {
            writeln!(
                s,
                "tile={},{},{},{},{}",
                e.row,
                e.col,
                e.height_file,
                e.color_file.as_deref().unwrap_or("-"),
                e.sidecar_file
            )
            .unwrap();
        }
        s
    }
}

fn parse_entry(v: &str) -> Result<TileEntry, TileError> {
    let bad = || TileError::BadValue {
        key: "tile".into(),
        value: v.to_string(),
    };
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(bad());
    }
    Ok(TileEntry {
        row: parts[0].parse().map_err(|_| bad())?,
        col: parts[1].parse().map_err(|_| bad())?,
        height_file: parts[2].to_string(),
        color_file: (parts[3] != "-").then(|| parts[3].to_string()),
        sidecar_file: parts[4].to_string(),
    })
}

pub fn parse_index(text: &str) -> Result<TileIndex, TileError> {
    let mut entries = Vec::new();
    let kv = split_key_values(text, &INDEX_KEYS, |v| {
        entries.push(parse_entry(v)?);
        Ok(())
    })?;
    let normalization_raw: String = kv.get("normalization")?;
    let index = TileIndex {
        tile_size: kv.get("tile_size")?,
        rows: kv.get("rows")?,
        cols: kv.get("cols")?,
        width: kv.get("width")?,
        height: kv.get("height")?,
        origin_x: kv.get_f64("origin_x")?,
        origin_y: kv.get_f64("origin_y")?,
        cell_size: kv.get_f64("cell_size")?,
        norm_min: kv.get_f64("norm_min")?,
        norm_max: kv.get_f64("norm_max")?,
        normalization: NormScope::parse(&normalization_raw).ok_or(TileError::BadValue {
            key: "normalization".into(),
            value: normalization_raw.clone(),
        })?,
        entries,
    };
    if index.entries.len() != index.rows * index.cols {
        return Err(TileError::BadValue {
            key: "tile".into(),
            value: format!("{} entries for a {}x{} grid", index.entries.len(), index.rows, index.cols),
        });
    }
    let mut seen = vec![false; index.rows * index.cols];
    for e in &index.entries {
        if e.row >= index.rows || e.col >= index.cols {
            return Err(TileError::OutOfRange(e.row, e.col));
        }
        let slot = &mut seen[e.row * index.cols + e.col];
        if *slot {
            return Err(TileError::DuplicateTile(e.row, e.col));
        }
        *slot = true;
    }
    Ok(index)
}

/// Writes `path` through a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TileError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        TileError::Io {
            path: path.to_path_buf(),
            source: e,
        }
    })
}

fn write_tile(tile: &TerrainTile, entry: &TileEntry, dir: &Path) -> Result<Vec<PathBuf>, TileError> {
    let mut written = Vec::with_capacity(3);
    let result = (|| {
        let h = dir.join(&entry.height_file);
        let bytes = encode_height_png(tile).map_err(|e| png_err(&h, e))?;
        write_atomic(&h, &bytes)?;
        written.push(h);

        if let (Some(name), Some(px)) = (&entry.color_file, &tile.color) {
            let c = dir.join(name);
            let bytes = encode_color_png(tile.size, px).map_err(|e| png_err(&c, e))?;
            write_atomic(&c, &bytes)?;
            written.push(c);
        }

        let s = dir.join(&entry.sidecar_file);
        write_atomic(&s, tile.meta.to_sidecar().as_bytes())?;
        written.push(s);
        Ok(())
    })();
    match result {
        Ok(()) => Ok(written),
        Err(e) => {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            Err(e)
        }
    }
}

/// Writes every tile, then `index.txt`. Returns the written paths, index last.
///
/// On failure all files written by this call are removed.
pub fn write_tileset(tiles: &[TerrainTile], index: &TileIndex, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, TileError> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let results: Vec<Result<Vec<PathBuf>, TileError>> = tiles
        .par_iter()
        .map(|t| {
            let entry = index
                .entry(t.meta.row, t.meta.col)
                .ok_or(TileError::OutOfRange(t.meta.row, t.meta.col))?;
            write_tile(t, entry, dir)
        })
        .collect();

    let mut written = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(paths) => written.extend(paths),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        return Err(e);
    }

    let idx_path = dir.join("index.txt");
    if let Err(e) = write_atomic(&idx_path, index.to_text().as_bytes()) {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        return Err(e);
    }
    written.push(idx_path);
    Ok(written)
}

/// Loads `index.txt` and every tile it lists.
pub fn read_tileset(dir: impl AsRef<Path>) -> Result<(TileIndex, Vec<TerrainTile>), TileError> {
    let dir = dir.as_ref();
    let idx_path = dir.join("index.txt");
    let index = parse_index(&fs::read_to_string(&idx_path).map_err(io_err(&idx_path))?)?;

    let tiles = index
        .entries
        .par_iter()
        .map(|e| {
            let sc = dir.join(&e.sidecar_file);
            let meta = parse_sidecar(&fs::read_to_string(&sc).map_err(io_err(&sc))?)?;
            if (meta.row, meta.col) != (e.row, e.col) {
                return Err(TileError::BadValue {
                    key: "row/col".into(),
                    value: format!("{}: ({},{}) listed as ({},{})", sc.display(), meta.row, meta.col, e.row, e.col),
                });
            }
            let hp = dir.join(&e.height_file);
            let (w, h, heights) = decode_height_png(&fs::read(&hp).map_err(io_err(&hp))?).map_err(|m| png_err(&hp, m))?;
            if w != index.tile_size || h != index.tile_size {
                return Err(TileError::TileSizeMismatch {
                    row: e.row,
                    col: e.col,
                    got: w,
                    want: index.tile_size,
                });
            }
            let color = match &e.color_file {
                Some(name) => {
                    let cp = dir.join(name);
                    let img = decode_color_png(&fs::read(&cp).map_err(io_err(&cp))?).map_err(|m| png_err(&cp, m))?;
                    if img.width != w || img.height != h {
                        return Err(png_err(&cp, "color tile size differs from height tile"));
                    }
                    Some(img.pixels)
                }
                None => None,
            };
            Ok(TerrainTile {
                meta,
                size: w,
                heights,
                color,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((index, tiles))
}
