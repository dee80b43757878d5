use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::raster::{
    build_depth_index, load_contours, load_height_field, merge_bathymetry, ocean_mask, MergedField, RasterError,
    DEFAULT_K, DEFAULT_POWER,
};
use crate::tiles::{load_color_image, slice, write_tileset, SliceOptions, TileError, TileIndex};

use super::config::TerrainConfig;

#[derive(Debug, Error)]
pub enum TerrainBuildError {
    #[error("{0}")]
    Raster(#[from] RasterError),
    #[error("color image: {0}")]
    Color(TileError),
    #[error("slicing: {0}")]
    Slice(TileError),
    #[error("writing tiles: {0}")]
    Write(TileError),
}

impl TerrainBuildError {
    /// Bad or missing inputs, as opposed to a failure while producing output.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Self::Raster(_) | Self::Color(_)) || matches!(self, Self::Slice(TileError::ColorMismatch { .. }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainSummary {
    pub tiles: usize,
    pub rows: usize,
    pub cols: usize,
    pub width: usize,
    pub height: usize,
    /// `(min_x, min_y, max_x, max_y)` of cell centers.
    pub extent: (f64, f64, f64, f64),
    pub elevation: (f64, f64),
    pub ocean_cells: usize,
    pub files: Vec<PathBuf>,
    pub elapsed: Duration,
}

impl std::fmt::Display for TerrainSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (x0, y0, x1, y1) = self.extent;
        writeln!(f, "tiles: {} ({} rows x {} cols)", self.tiles, self.rows, self.cols)?;
        writeln!(f, "grid: {} x {} cells, {} ocean", self.width, self.height, self.ocean_cells)?;
        writeln!(f, "bounds: x {x0}..{x1}, y {y0}..{y1}")?;
        writeln!(f, "elevation: {}..{}", self.elevation.0, self.elevation.1)?;
        write!(f, "elapsed: {:.3} s", self.elapsed.as_secs_f64())
    }
}

/// Loads inputs and produces the merged land/sea field.
pub fn merge_inputs(job: &TerrainConfig) -> Result<(MergedField, usize), TerrainBuildError> {
    let field = load_height_field(&job.raster)?;
    let contours = load_contours(&job.contours)?;
    let mask = ocean_mask(&field, job.sea_level);
    let index = build_depth_index(&contours, DEFAULT_K, DEFAULT_POWER)?;
    let merged = merge_bathymetry(&field, &mask, Some(&index), job.sea_level)?;
    Ok((merged, mask.ocean_count()))
}

/// Runs the whole static-data pipeline into `out_dir`.
pub fn build_terrain(job: &TerrainConfig, out_dir: &Path) -> Result<TerrainSummary, TerrainBuildError> {
    let t = Instant::now();
    let (merged, ocean_cells) = merge_inputs(job)?;
    let color = job
        .color
        .as_ref()
        .map(load_color_image)
        .transpose()
        .map_err(TerrainBuildError::Color)?;
    let opts = SliceOptions {
        tile_size: job.tile_size,
        normalization: job.normalization,
    };
    let tiles = slice(&merged, color.as_ref(), &opts).map_err(TerrainBuildError::Slice)?;
    let g = merged.geometry;
    let bounds = merged.bounds();
    let index = TileIndex::new(&g, job.tile_size, bounds, job.normalization, &tiles);
    let files = write_tileset(&tiles, &index, out_dir).map_err(TerrainBuildError::Write)?;
    let (x1, y1) = g.cell_center(g.height - 1, g.width - 1);
    Ok(TerrainSummary {
        tiles: tiles.len(),
        rows: index.rows,
        cols: index.cols,
        width: g.width,
        height: g.height,
        extent: (g.origin_x, g.origin_y, x1, y1),
        elevation: bounds,
        ocean_cells,
        files,
        elapsed: t.elapsed(),
    })
}
