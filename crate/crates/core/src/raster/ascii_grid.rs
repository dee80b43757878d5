//! Plain-text grid exchange format.
//!
//! ```text
//! ncols         4
//! nrows         3
//! xllcenter     500000.0
//! yllcenter     7000000.0
//! cellsize      10.0
//! nodata_value  -9999
//! <nrows lines of ncols values, northernmost row first>
//! ```
//!
//! `xllcorner`/`yllcorner` are accepted on input and shifted by half a cell.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use super::{GridGeometry, HeightField, RasterError};

const DEFAULT_NODATA: f64 = -9999.0;

pub fn load_height_field(path: impl AsRef<Path>) -> Result<HeightField, RasterError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ascii_grid(&text)
}

pub fn parse_ascii_grid(text: &str) -> Result<HeightField, RasterError> {
    let mut ncols = None;
    let mut nrows = None;
    let mut x = None;
    let mut y = None;
    let mut cell = None;
    let mut nodata = None;
    let mut corner_x = false;
    let mut corner_y = false;

    let mut lines = text.lines().enumerate().peekable();
    while let Some(&(lineno, line)) = lines.peek() {
        let mut tok = line.split_whitespace();
        let Some(key) = tok.next() else {
            lines.next();
            continue;
        };
        if key.parse::<f64>().is_ok() || key.starts_with('-') || key.starts_with('.') {
            break;
        }
        let value = tok
            .next()
            .ok_or_else(|| RasterError::Header(format!("line {}: `{key}` has no value", lineno + 1)))?;
        if tok.next().is_some() {
            return Err(RasterError::Header(format!(
                "line {}: trailing tokens after `{key}`",
                lineno + 1
            )));
        }
        let num = |what: &str| -> Result<f64, RasterError> {
            value.parse::<f64>().map_err(|_| {
                RasterError::Header(format!("line {}: {what} `{value}` is not a number", lineno + 1))
            })
        };
        let count = |what: &str| -> Result<usize, RasterError> {
            value.parse::<usize>().map_err(|_| {
                RasterError::Header(format!("line {}: {what} `{value}` is not a count", lineno + 1))
            })
        };
        match key.to_ascii_lowercase().as_str() {
            "ncols" => ncols = Some(count("ncols")?),
            "nrows" => nrows = Some(count("nrows")?),
            "xllcenter" => x = Some(num("xllcenter")?),
            "yllcenter" => y = Some(num("yllcenter")?),
            "xllcorner" => {
                x = Some(num("xllcorner")?);
                corner_x = true;
            }
            "yllcorner" => {
                y = Some(num("yllcorner")?);
                corner_y = true;
            }
            "cellsize" => cell = Some(num("cellsize")?),
            "nodata_value" => nodata = Some(num("nodata_value")?),
            other => {
                return Err(RasterError::Header(format!(
                    "line {}: unknown key `{other}`",
                    lineno + 1
                )))
            }
        }
        lines.next();
    }

    let missing = |k: &str| RasterError::Header(format!("missing `{k}`"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let cell = cell.ok_or_else(|| missing("cellsize"))?;
    let mut x = x.ok_or_else(|| missing("xllcenter"))?;
    let mut y = y.ok_or_else(|| missing("yllcenter"))?;
    if corner_x {
        x += cell / 2.0;
    }
    if corner_y {
        y += cell / 2.0;
    }
    let nodata = nodata.unwrap_or(DEFAULT_NODATA);
    let geometry = GridGeometry::new(ncols, nrows, x, y, cell)?;

    let mut file_order = Vec::with_capacity(geometry.len());
    for (lineno, line) in lines {
        for tok in line.split_whitespace() {
            let v = tok.parse::<f64>().map_err(|_| RasterError::Parse {
                line: lineno + 1,
                msg: format!("`{tok}` is not a number"),
            })?;
            file_order.push(v);
        }
    }
    if file_order.len() != geometry.len() {
        return Err(RasterError::DimensionMismatch {
            expected: geometry.len(),
            found: file_order.len(),
        });
    }

    // File rows run north to south; storage is south to north.
    let values: Vec<f64> = file_order
        .chunks_exact(ncols)
        .rev()
        .flatten()
        .copied()
        .collect();
    HeightField::new(geometry, values, nodata)
}

pub fn write_ascii_grid<W: Write>(field: &HeightField, mut out: W) -> std::io::Result<()> {
    let g = &field.geometry;
    let mut buf = String::with_capacity(g.len() * 8 + 128);
    writeln!(buf, "ncols {}", g.width).unwrap();
    writeln!(buf, "nrows {}", g.height).unwrap();
    writeln!(buf, "xllcenter {}", g.origin_x).unwrap();
    writeln!(buf, "yllcenter {}", g.origin_y).unwrap();
    writeln!(buf, "cellsize {}", g.cell_size).unwrap();
    writeln!(buf, "nodata_value {}", field.nodata).unwrap();
    for row in field.values.chunks_exact(g.width).rev() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                buf.push(' ');
            }
            write!(buf, "{v}").unwrap();
        }
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_stored_bottom_up() {
        let text = "ncols 2\nnrows 2\nxllcenter 0\nyllcenter 0\ncellsize 10\nnodata_value -9999\n1 2\n3 4\n";
        let f = parse_ascii_grid(text).unwrap();
        assert_eq!(f.geometry.width, 2);
        assert_eq!(f.geometry.height, 2);
        assert_eq!(f.geometry.cell_size, 10.0);
        assert_eq!(f.values, vec![3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn short_data_is_dimension_mismatch() {
        let text = "ncols 2\nnrows 2\nxllcenter 0\nyllcenter 0\ncellsize 10\nnodata_value -9999\n1 2\n3\n";
        let err = parse_ascii_grid(text).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn missing_header_key() {
        let text = "ncols 2\nnrows 1\nxllcenter 0\nyllcenter 0\n1 2\n";
        let err = parse_ascii_grid(text).unwrap_err();
        assert!(matches!(err, RasterError::Header(ref m) if m.contains("cellsize")), "{err}");
    }

    #[test]
    fn unknown_header_key() {
        let text = "ncols 1\nnrows 1\nfoo 3\nxllcenter 0\nyllcenter 0\ncellsize 1\n1\n";
        assert!(matches!(parse_ascii_grid(text), Err(RasterError::Header(_))));
    }

    #[test]
    fn non_finite_cell_rejected() {
        let text = "ncols 2\nnrows 1\nxllcenter 0\nyllcenter 0\ncellsize 1\nnodata_value -9999\n1 inf\n";
        assert!(matches!(
            parse_ascii_grid(text),
            Err(RasterError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn non_numeric_cell_reports_line() {
        let text = "ncols 2\nnrows 1\nxllcenter 0\nyllcenter 0\ncellsize 1\n1 x\n";
        assert!(matches!(parse_ascii_grid(text), Err(RasterError::Parse { line: 6, .. })));
    }

    #[test]
    fn corner_origin_is_shifted_to_center() {
        let text = "ncols 1\nnrows 1\nxllcorner 100\nyllcorner 200\ncellsize 10\n5\n";
        let f = parse_ascii_grid(text).unwrap();
        assert_eq!((f.geometry.origin_x, f.geometry.origin_y), (105.0, 205.0));
        assert_eq!(f.nodata, -9999.0);
    }

    #[test]
    fn nodata_cells_preserved() {
        let text = "ncols 2\nnrows 1\nxllcenter 0\nyllcenter 0\ncellsize 1\nnodata_value -32768\n-32768 4\n";
        let f = parse_ascii_grid(text).unwrap();
        assert!(f.is_nodata(f.values[0]));
    }
}
