//! Portable text dump of one rendered grid.
//!
//! Line 1: `LGRGRID1 W H L C` (grid dimensions and channel count).
//! Lines starting with `#` are comments and are skipped by the parser.
//! Then exactly W*H*L data lines, one voxel each with C values, in
//! row-major order over (x, y, z): the z index varies fastest, then y,
//! then x — the same layout the in-memory grid tensor uses. Values are
//! printed in scientific notation with 9 significant digits, which
//! round-trips f32 exactly.

use lgr_core::{Error, Result};

pub const GRID_MAGIC: &str = "LGRGRID1";

/// Formats one grid (`values` laid out `[W, H, L, C]` row-major) with
/// optional comment lines placed after the header.
pub fn write_grid(dims: [usize; 4], comments: &[String], values: &[f64]) -> String {
    let [w, h, l, c] = dims;
    assert_eq!(values.len(), w * h * l * c, "value count must match dims");
    let mut out = format!("{GRID_MAGIC} {w} {h} {l} {c}\n");
    for line in comments {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    for voxel in values.chunks(c.max(1)) {
        for (i, v) in voxel.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{v:.8e}"));
        }
        out.push('\n');
    }
    out
}

/// Parses a dump back into dimensions and values. Errors carry 1-based
/// line numbers.
pub fn parse_grid(text: &str) -> Result<([usize; 4], Vec<f64>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty grid dump".into() })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != GRID_MAGIC {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected {GRID_MAGIC} W H L C, got {header:?}"),
        });
    }
    let mut dims = [0usize; 4];
    for (i, f) in fields[1..].iter().enumerate() {
        dims[i] = f.parse::<usize>().map_err(|_| Error::Parse {
            line: 1,
            msg: format!("bad dimension {f:?}"),
        })?;
        if dims[i] == 0 {
            return Err(Error::Parse { line: 1, msg: format!("zero dimension {f:?}") });
        }
    }
    let [w, h, l, c] = dims;
    let mut values = Vec::with_capacity(w * h * l * c);
    let mut voxels = 0usize;
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad value {t:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != c {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {c} values per voxel, got {}", row.len()),
            });
        }
        values.extend_from_slice(&row);
        voxels += 1;
    }
    if voxels != w * h * l {
        return Err(Error::Parse {
            line: 0,
            msg: format!("expected {} voxels, got {voxels}", w * h * l),
        });
    }
    Ok((dims, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_values_and_dims() {
        let values: Vec<f64> = (0..2 * 3 * 2 * 2).map(|i| (i as f64) * 0.125 - 1.0).collect();
        let text =
            write_grid([2, 3, 2, 2], &["centroid 0 0 0".to_string()], &values);
        let (dims, back) = parse_grid(&text).unwrap();
        assert_eq!(dims, [2, 3, 2, 2]);
        assert_eq!(back, values);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_grid("WRONG 1 1 1 1\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let text = format!("{GRID_MAGIC} 1 1 1 2\n1.0 nope\n");
        let err = parse_grid(&text).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let text = format!("{GRID_MAGIC} 1 1 2 1\n1.0\n");
        let err = parse_grid(&text).unwrap_err();
        assert!(err.to_string().contains("voxels"), "{err}");
    }

    #[test]
    fn nine_digit_format_round_trips_f32() {
        let vals = [0.1f32, 1.0 / 3.0, 123456.78, -2.5e-7];
        for &v in &vals {
            let printed = format!("{:.8e}", v as f64);
            let back = printed.parse::<f64>().unwrap() as f32;
            assert_eq!(back, v);
        }
    }
}
