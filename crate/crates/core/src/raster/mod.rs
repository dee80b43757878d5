//! Elevation rasters, bathymetric contours, and the land/sea merge.
//!
//! Grids are stored row-major with row 0 as the southernmost row. Cell
//! `(r, c)` is centered at `(origin_x + c * cell_size, origin_y + r * cell_size)`.

mod ascii_grid;
mod contours;
mod depth;
pub mod kdtree;

use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

pub use ascii_grid::{load_height_field, parse_ascii_grid, write_ascii_grid};
pub use contours::{load_contours, parse_contours, ContourPoint, ContourSet};
pub use depth::{build_depth_index, DepthIndex, DEFAULT_EXACT_HIT_EPSILON, DEFAULT_K, DEFAULT_POWER};

/// Default sea level in meters.
pub const DEFAULT_SEA_LEVEL: f64 = 0.0;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("dimension mismatch: header declares {expected} cells, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite cell value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: negative depth {depth}")]
    NegativeDepth { line: usize, depth: f64 },
    #[error("empty contour set")]
    EmptyContours,
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("ocean cells present but no depth index available")]
    MissingDepthIndex,
}

/// Georeferencing and extent shared by every raster in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    /// Map x of the center of the lower-left cell.
    pub origin_x: f64,
    /// Map y of the center of the lower-left cell.
    pub origin_y: f64,
    pub cell_size: f64,
}

impl GridGeometry {
    pub fn new(
        width: usize,
        height: usize,
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
    ) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Geometry(format!(
                "grid must be at least 1x1, got {width}x{height}"
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(RasterError::Geometry(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(RasterError::Geometry("origin must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            origin_x,
            origin_y,
            cell_size,
        })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Map coordinates of the center of cell `(row, col)`.
    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + col as f64 * self.cell_size,
            self.origin_y + row as f64 * self.cell_size,
        )
    }
}

/// Terrain elevation raster with a nodata sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
    pub nodata: f64,
}

impl HeightField {
    pub fn new(geometry: GridGeometry, values: Vec<f64>, nodata: f64) -> Result<Self, RasterError> {
        if values.len() != geometry.len() {
            return Err(RasterError::DimensionMismatch {
                expected: geometry.len(),
                found: values.len(),
            });
        }
        let field = Self {
            geometry,
            values,
            nodata,
        };
        if let Some(i) = field
            .values
            .iter()
            .position(|&v| !field.is_nodata(v) && !v.is_finite())
        {
            return Err(RasterError::NonFinite {
                row: i / geometry.width,
                col: i % geometry.width,
            });
        }
        Ok(field)
    }

    #[inline]
    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata || (self.nodata.is_nan() && v.is_nan())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.geometry.index(row, col)]
    }
}

/// Cells identified as sea, aligned with a [`HeightField`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OceanMask {
    pub width: usize,
    pub height: usize,
    pub flags: Vec<bool>,
}

impl OceanMask {
    /// A mask with no ocean cells.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            flags: vec![false; width * height],
        }
    }

    pub fn ocean_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn is_ocean(&self, row: usize, col: usize) -> bool {
        self.flags[row * self.width + col]
    }
}

/// Signed elevation after bathymetry has been merged in; negative below sea level.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedField {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
}

impl MergedField {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self, RasterError> {
        if values.len() != geometry.len() {
            return Err(RasterError::DimensionMismatch {
                expected: geometry.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RasterError::NonFinite {
                row: i / geometry.width,
                col: i % geometry.width,
            });
        }
        Ok(Self { geometry, values })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.geometry.index(row, col)]
    }

    /// (min, max) over all cells.
    pub fn bounds(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Flags every cell at or below `sea_level`, plus every nodata cell.
pub fn ocean_mask(field: &HeightField, sea_level: f64) -> OceanMask {
    let flags = field
        .values
        .iter()
        .map(|&v| field.is_nodata(v) || v <= sea_level)
        .collect();
    OceanMask {
        width: field.geometry.width,
        height: field.geometry.height,
        flags,
    }
}

/// Combines land heights with interpolated sea depths into one signed field.
///
/// Land cells are copied unchanged. Ocean cells become
/// `sea_level - depth(x, y)` at the cell center. `index` may be `None` only
/// when the mask has no ocean cells.
pub fn merge_bathymetry(
    field: &HeightField,
    mask: &OceanMask,
    index: Option<&DepthIndex>,
    sea_level: f64,
) -> Result<MergedField, RasterError> {
    let geom = field.geometry;
    if mask.width != geom.width || mask.height != geom.height || mask.flags.len() != geom.len() {
        return Err(RasterError::Geometry(format!(
            "mask {}x{} does not match field {}x{}",
            mask.width, mask.height, geom.width, geom.height
        )));
    }
    let has_ocean = mask.flags.iter().any(|&f| f);
    let index = match (has_ocean, index) {
        (true, None) => return Err(RasterError::MissingDepthIndex),
        (_, idx) => idx,
    };

    let values: Vec<f64> = (0..geom.len())
        .into_par_iter()
        .map(|i| {
            if !mask.flags[i] {
                return field.values[i];
            }
            let (x, y) = geom.cell_center(i / geom.width, i % geom.width);
            // unwrap: has_ocean implies index is Some
            sea_level - index.unwrap().interpolate(x, y)
        })
        .collect();
    MergedField::new(geom, values)
}
