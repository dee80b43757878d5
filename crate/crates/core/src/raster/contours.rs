//! Bathymetric contour vertices, read from a `x,y,depth` CSV.

use std::path::Path;

use super::RasterError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourPoint {
    pub x: f64,
    pub y: f64,
    /// Meters below sea level, positive downward.
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourSet {
    pub points: Vec<ContourPoint>,
    pub source_id: String,
}

impl ContourSet {
    pub fn new(points: Vec<ContourPoint>, source_id: impl Into<String>) -> Result<Self, RasterError> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.depth.is_finite()) {
                return Err(RasterError::Parse {
                    line: i + 2,
                    msg: "non-finite vertex".into(),
                });
            }
            if p.depth < 0.0 {
                return Err(RasterError::NegativeDepth {
                    line: i + 2,
                    depth: p.depth,
                });
            }
        }
        Ok(Self {
            points,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(min_x, min_y, max_x, max_y)`, or `None` when empty.
    pub fn bounding_box(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.points.first()?;
        Some(self.points.iter().fold(
            (first.x, first.y, first.x, first.y),
            |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
        ))
    }
}

pub fn load_contours(path: impl AsRef<Path>) -> Result<ContourSet, RasterError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_contours(&text, path.display().to_string())
}

pub fn parse_contours(text: &str, source_id: impl Into<String>) -> Result<ContourSet, RasterError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| RasterError::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| RasterError::Parse {
                line: 1,
                msg: format!("missing column `{name}`"),
            })
    };
    let (cx, cy, cd) = (column("x")?, column("y")?, column("depth")?);

    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| RasterError::Parse { line, msg: e.to_string() })?;
        let field = |c: usize, name: &str| -> Result<f64, RasterError> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>().map_err(|_| RasterError::Parse {
                line,
                msg: format!("{name} `{raw}` is not a number"),
            })
        };
        let p = ContourPoint {
            x: field(cx, "x")?,
            y: field(cy, "y")?,
            depth: field(cd, "depth")?,
        };
        if p.depth < 0.0 {
            return Err(RasterError::NegativeDepth { line, depth: p.depth });
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(RasterError::EmptyContours);
    }
    ContourSet::new(points, source_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows() {
        let set = parse_contours("x,y,depth\n0,0,5\n10,0,15\n", "t").unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.points[1], ContourPoint { x: 10.0, y: 0.0, depth: 15.0 });
    }

    #[test]
    fn negative_depth_rejected() {
        let err = parse_contours("x,y,depth\n0,0,-3\n", "t").unwrap_err();
        assert!(err.to_string().contains("negative depth"), "{err}");
    }

    #[test]
    fn non_numeric_rejected() {
        let err = parse_contours("x,y,depth\n0,abc,3\n", "t").unwrap_err();
        assert!(matches!(err, RasterError::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(parse_contours("x,y,depth\n", "t"), Err(RasterError::EmptyContours)));
        assert!(parse_contours("", "t").is_err());
    }

    #[test]
    fn column_order_is_by_header() {
        let set = parse_contours("depth,x,y\n4,1,2\n", "t").unwrap();
        assert_eq!(set.points[0], ContourPoint { x: 1.0, y: 2.0, depth: 4.0 });
    }
}
