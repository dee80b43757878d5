//! ASCII response grammar.
//!
//! Blocks are separated by blank lines. Each block starts with a header,
//! either `name, [d1][d2]...` or `grid.member[d1][d2]...`; the latter is the
//! parameter `grid` when `grid == member` and a coordinate map otherwise
//! (maps are skipped). Data rows hold comma-separated numbers, optionally
//! prefixed by bracketed indices such as `[0][0][0][0], 1.5, 2.5`.
//! Anything up to a line of dashes is a dataset descriptor and is skipped.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{ForecastCycle, ForecastSeries, MetoceanError, ParamRequest};

struct Block<'a> {
    name: &'a str,
    dims: Vec<usize>,
    rows: Vec<(usize, &'a str)>,
}

fn parse_header(line: &str) -> Result<Option<(&str, Vec<usize>)>, MetoceanError> {
    let bad = || MetoceanError::Header(line.to_string());
    let open = line.find('[').ok_or_else(bad)?;
    let prefix = line[..open].trim().trim_end_matches(',').trim();
    let name = match prefix.rsplit_once('.') {
        Some((grid, member)) if grid == member => grid,
        Some(_) => return Ok(None),
        None => prefix,
    };
    if name.is_empty() {
        return Err(bad());
    }
    let mut dims = Vec::new();
    let mut rest = line[open..].trim();
    while let Some(r) = rest.strip_prefix('[') {
        let close = r.find(']').ok_or_else(bad)?;
        // DDS-style `[time = 61]` carries the size after the `=`.
        let inner = r[..close].rsplit('=').next().unwrap_or("").trim();
        dims.push(inner.parse::<usize>().map_err(|_| bad())?);
        rest = r[close + 1..].trim();
    }
    if !rest.is_empty() {
        return Err(bad());
    }
    Ok(Some((name, dims)))
}

/// Strips a leading `[i][j]...,` index prefix from a data row.
fn strip_indices(row: &str) -> &str {
    let mut s = row.trim_start();
    if !s.starts_with('[') {
        return s;
    }
    while let Some(r) = s.strip_prefix('[') {
        match r.find(']') {
            Some(close) => s = r[close + 1..].trim_start(),
            None => return s,
        }
    }
    s.strip_prefix(',').unwrap_or(s)
}

fn split_blocks(body: &str) -> Result<Vec<Block<'_>>, MetoceanError> {
    let lines: Vec<(usize, &str)> = body.lines().enumerate().map(|(i, l)| (i + 1, l)).collect();
    let start = lines
        .iter()
        .position(|(_, l)| {
            let t = l.trim();
            t.len() >= 3 && t.chars().all(|c| c == '-')
        })
        .map_or(0, |i| i + 1);

    let mut blocks = Vec::new();
    let mut current: Option<Block> = None;
    let mut skipping = false;
    for &(lineno, line) in &lines[start..] {
        if line.trim().is_empty() {
            if let Some(b) = current.take() {
                blocks.push(b);
            }
            skipping = false;
            continue;
        }
        if skipping {
            continue;
        }
        match current.as_mut() {
            Some(b) => b.rows.push((lineno, line)),
            None => match parse_header(line.trim())? {
                Some((name, dims)) => {
                    current = Some(Block {
                        name,
                        dims,
                        rows: Vec::new(),
                    })
                }
                None => skipping = true,
            },
        }
    }
    if let Some(b) = current.take() {
        blocks.push(b);
    }
    Ok(blocks)
}

/// Parses a response into one series per request, in request order.
///
/// Every non-time range must be a single index so the block collapses to a
/// time series; lead hour `i` is time index `i`.
pub fn parse_ascii(body: &str, requests: &[ParamRequest], cycle: ForecastCycle) -> Result<Vec<ForecastSeries>, MetoceanError> {
    if body.trim().is_empty() {
        return Err(MetoceanError::EmptyBody);
    }
    let mut by_name: HashMap<&str, Vec<f64>> = HashMap::new();
    for block in split_blocks(body)? {
        let Some(req) = requests.iter().find(|r| r.name == block.name) else {
            return Err(MetoceanError::UnknownBlock(block.name.to_string()));
        };
        if by_name.contains_key(block.name) {
            return Err(MetoceanError::DuplicateBlock(block.name.to_string()));
        }
        let mut values = Vec::new();
        for (lineno, row) in &block.rows {
            for tok in strip_indices(row).split(',').map(str::trim).filter(|t| !t.is_empty()) {
                let v = tok.parse::<f64>().map_err(|_| MetoceanError::NonNumeric {
                    param: block.name.to_string(),
                    line: *lineno,
                    token: tok.to_string(),
                })?;
                values.push(v);
            }
        }
        let declared: usize = block.dims.iter().product();
        let expected = req.sample_count();
        for n in [declared, values.len()] {
            if n != expected {
                return Err(MetoceanError::CountMismatch {
                    param: block.name.to_string(),
                    expected,
                    found: n,
                });
            }
        }
        by_name.insert(block.name, values);
    }

    requests
        .iter()
        .map(|req| {
            let values = by_name
                .remove(req.name.as_str())
                .ok_or_else(|| MetoceanError::MissingBlock(req.name.clone()))?;
            if req.ranges[1..].iter().any(|r| !r.is_singleton()) {
                return Err(MetoceanError::NotATimeSeries(req.name.clone()));
            }
            let leads: Vec<u32> = req.ranges[0].indices().collect();
            ForecastSeries::new(req.name.clone(), cycle, leads, values, "")
        })
        .collect()
}

/// Renders series in the grammar `parse_ascii` accepts, one block per request.
///
/// Rows are prefixed by the indices of all but the last dimension, as the
/// service does.
pub fn to_ascii(series: &[ForecastSeries], requests: &[ParamRequest]) -> String {
    let mut out = String::new();
    for (s, req) in series.iter().zip(requests) {
        let dims: Vec<usize> = req.ranges.iter().map(|r| r.count()).collect();
        write!(out, "{}, ", s.param).unwrap();
        for d in &dims {
            write!(out, "[{d}]").unwrap();
        }
        out.push('\n');
        let last = *dims.last().unwrap_or(&1);
        for (row, chunk) in s.values.chunks(last.max(1)).enumerate() {
            // mixed-radix decomposition of the row number over the leading dims
            let mut idx = vec![0; dims.len().saturating_sub(1)];
            let mut rem = row;
            for (slot, &d) in idx.iter_mut().zip(&dims).rev() {
                *slot = rem % d;
                rem /= d;
            }
            for i in &idx {
                write!(out, "[{i}]").unwrap();
            }
            if !idx.is_empty() {
                out.push_str(", ");
            }
            let vals: Vec<String> = chunk.iter().map(f64::to_string).collect();
            out.push_str(&vals.join(", "));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metocean::DimRange;
    use proptest::prelude::*;

    fn cycle() -> ForecastCycle {
        ForecastCycle::new(2024, 1, 15, 6).unwrap()
    }

    fn fixture_61(name: &str) -> String {
        let mut s = format!("{name}, [61][1][1][1][1]\n");
        for i in 0..61 {
            writeln!(s, "[{i}][0][0][0], {}", 5.0 + i as f64 * 0.25).unwrap();
        }
        s
    }

    #[test]
    fn sixty_one_hour_block() {
        let req = ParamRequest::point_series("x_wind_10m", 100, 200).unwrap();
        let series = parse_ascii(&fixture_61("x_wind_10m"), &[req], cycle()).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].values.len(), 61);
        assert_eq!(series[0].lead_hours, (0..61).collect::<Vec<u32>>());
        assert_eq!(series[0].values[4], 6.0);
    }

    #[test]
    fn sixty_values_is_count_mismatch() {
        let req = ParamRequest::point_series("x_wind_10m", 0, 0).unwrap();
        let mut body = String::from("x_wind_10m, [60][1][1][1][1]\n");
        for i in 0..60 {
            writeln!(body, "[{i}][0][0][0], 1.0").unwrap();
        }
        let err = parse_ascii(&body, std::slice::from_ref(&req), cycle()).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
        // header claims 61 but only 60 rows follow
        let body = body.replacen("[60]", "[61]", 1);
        assert!(matches!(
            parse_ascii(&body, &[req], cycle()),
            Err(MetoceanError::CountMismatch { found: 60, .. })
        ));
    }

    #[test]
    fn two_blocks_follow_request_order() {
        let a = ParamRequest::point_series("air_temperature_2m", 0, 0).unwrap();
        let b = ParamRequest::point_series("x_wind_10m", 0, 0).unwrap();
        // response order differs from request order
        let body = format!("{}\n{}", fixture_61("x_wind_10m"), fixture_61("air_temperature_2m"));
        let s = parse_ascii(&body, &[a, b], cycle()).unwrap();
        assert_eq!(s[0].param, "air_temperature_2m");
        assert_eq!(s[1].param, "x_wind_10m");
    }

    #[test]
    fn unknown_block_rejected() {
        let req = ParamRequest::point_series("x_wind_10m", 0, 0).unwrap();
        let err = parse_ascii(&fixture_61("y_wind_10m"), &[req], cycle()).unwrap_err();
        assert_eq!(err.to_string(), "unknown parameter block `y_wind_10m`");
    }

    #[test]
    fn non_numeric_value_rejected() {
        let req = ParamRequest::new("p", vec![DimRange::new(0, 1, 1).unwrap()]).unwrap();
        let err = parse_ascii("p, [2]\n1.0, abc\n", &[req], cycle()).unwrap_err();
        assert!(matches!(err, MetoceanError::NonNumeric { line: 2, .. }), "{err}");
    }

    #[test]
    fn dods_layout_with_descriptor_and_maps() {
        let req = ParamRequest::new(
            "x_wind_10m",
            vec![DimRange::new(0, 1, 2).unwrap(), DimRange::single(0), DimRange::single(0), DimRange::single(5), DimRange::single(7)],
        )
        .unwrap();
        let body = "Dataset {\n    Grid {\n     ARRAY:\n        Float32 x_wind_10m[time = 3][height7 = 1][ensemble_member = 1][y = 1][x = 1];\n    } x_wind_10m;\n} meps;\n---------------------------------------------\nx_wind_10m.x_wind_10m[3][1][1][1][1]\n[0][0][0][0], 1.5\n[1][0][0][0], 2.5\n[2][0][0][0], -3.25\n\nx_wind_10m.time[3]\n1705298400, 1705302000, 1705305600\n\nx_wind_10m.x[1]\n-100000\n";
        let s = parse_ascii(body, &[req], cycle()).unwrap();
        assert_eq!(s[0].values, vec![1.5, 2.5, -3.25]);
        assert_eq!(s[0].lead_hours, vec![0, 1, 2]);
    }

    #[test]
    fn missing_and_duplicate_blocks() {
        let a = ParamRequest::point_series("a", 0, 0).unwrap();
        let b = ParamRequest::point_series("b", 0, 0).unwrap();
        assert!(matches!(
            parse_ascii(&fixture_61("a"), &[a.clone(), b], cycle()),
            Err(MetoceanError::MissingBlock(ref n)) if n == "b"
        ));
        let twice = format!("{}\n{}", fixture_61("a"), fixture_61("a"));
        assert!(matches!(parse_ascii(&twice, &[a], cycle()), Err(MetoceanError::DuplicateBlock(_))));
    }

    #[test]
    fn spatial_subset_is_not_a_series() {
        let req = ParamRequest::new("p", vec![DimRange::single(0), DimRange::new(0, 1, 1).unwrap()]).unwrap();
        assert!(matches!(
            parse_ascii("p, [1][2]\n[0], 1, 2\n", &[req], cycle()),
            Err(MetoceanError::NotATimeSeries(_))
        ));
    }

    #[test]
    fn empty_body_rejected() {
        assert!(matches!(parse_ascii("  \n", &[], cycle()), Err(MetoceanError::EmptyBody)));
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(
            values in prop::collection::vec(-1e6f64..1e6, 1..=61),
            step in 1u32..3,
        ) {
            let n = values.len() as u32;
            let leads: Vec<u32> = (0..n).map(|i| i * step).filter(|&h| h <= 60).collect();
            let values = values[..leads.len()].to_vec();
            let req = ParamRequest::new(
                "p_1",
                vec![
                    DimRange::new(0, step, *leads.last().unwrap()).unwrap(),
                    DimRange::single(0), DimRange::single(0), DimRange::single(3), DimRange::single(4),
                ],
            ).unwrap();
            let series = ForecastSeries::new("p_1", cycle(), leads, values, "").unwrap();
            let text = to_ascii(std::slice::from_ref(&series), std::slice::from_ref(&req));
            let back = parse_ascii(&text, &[req], cycle()).unwrap();
            prop_assert_eq!(back, vec![series]);
        }
    }
}
