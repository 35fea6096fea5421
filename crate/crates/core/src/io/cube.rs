//! IRIDAS/Adobe `.cube` 3D LUT files.
//!
//! ```text
//! TITLE "example"
//! LUT_3D_SIZE 17
//! DOMAIN_MIN 0.0 0.0 0.0
//! DOMAIN_MAX 1.0 1.0 1.0
//! 0.000000 0.000000 0.000000
//! ...
//! ```
//!
//! Data rows are "r g b" with the red index fastest-varying (the de facto
//! IRIDAS/Adobe convention; a reference identity file lives in the repo's
//! docs). Only a unit domain is supported. Unknown keyword lines are
//! skipped; malformed numbers, missing size, or a wrong row count are
//! structured errors.

use std::path::Path;

use crate::error::{Error, Result};
use crate::lut::Lut3D;

/// Parses a `.cube` file from bytes.
pub fn read_cube_bytes(data: &[u8]) -> Result<Lut3D> {
    let text = std::str::from_utf8(data).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        message: "cube file is not valid UTF-8".into(),
    })?;
    let mut size: Option<usize> = None;
    let mut rows: Vec<[f32; 3]> = Vec::new();
    let mut offset = 0usize;

    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("LUT_3D_SIZE") {
            let n: usize = rest.trim().parse().map_err(|_| Error::Parse {
                offset: line_start,
                message: format!("bad LUT_3D_SIZE value `{}`", rest.trim()),
            })?;
            if !(2..=128).contains(&n) {
                return Err(Error::Format(format!(
                    "LUT_3D_SIZE {n} outside supported range 2..=128"
                )));
            }
            size = Some(n);
            continue;
        }
        if trimmed.starts_with("LUT_1D_SIZE") {
            return Err(Error::Format("1D cube LUTs are not supported".into()));
        }
        if let Some(rest) = trimmed.strip_prefix("DOMAIN_MIN") {
            check_domain(rest, 0.0, line_start)?;
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("DOMAIN_MAX") {
            check_domain(rest, 1.0, line_start)?;
            continue;
        }
        if trimmed.starts_with("TITLE") {
            continue;
        }
        if trimmed.starts_with(|c: char| c.is_ascii_alphabetic()) {
            // Unknown keyword; tolerated for interchange.
            continue;
        }
        // Data row: three floats.
        let mut vals = [0.0f32; 3];
        let mut it = trimmed.split_whitespace();
        for v in &mut vals {
            let tok = it.next().ok_or(Error::Parse {
                offset: line_start,
                message: "data row needs 3 values".into(),
            })?;
            *v = tok.parse().map_err(|_| Error::Parse {
                offset: line_start,
                message: format!("bad number `{tok}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidValue(format!(
                    "non-finite cube value `{tok}`"
                )));
            }
        }
        if it.next().is_some() {
            return Err(Error::Parse {
                offset: line_start,
                message: "data row has more than 3 values".into(),
            });
        }
        if rows.len() >= 128 * 128 * 128 {
            return Err(Error::Format("too many data rows".into()));
        }
        rows.push(vals);
    }

    let d = size.ok_or_else(|| Error::Format("missing LUT_3D_SIZE".into()))?;
    if rows.len() != d * d * d {
        return Err(Error::Format(format!(
            "expected {} data rows for size {d}, found {}",
            d * d * d,
            rows.len()
        )));
    }
    // Red fastest: row n covers lattice (n % D, n/D % D, n/D²).
    let mut entries = vec![0.0f32; 3 * d * d * d];
    for (n, row) in rows.iter().enumerate() {
        let ir = n % d;
        let ig = (n / d) % d;
        let ib = n / (d * d);
        for (c, &v) in row.iter().enumerate() {
            entries[((c * d + ir) * d + ig) * d + ib] = v;
        }
    }
    Lut3D::new(d, entries)
}

fn check_domain(rest: &str, expected: f32, offset: usize) -> Result<()> {
    let vals: Vec<f32> = rest
        .split_whitespace()
        .map(|t| t.parse::<f32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            offset,
            message: "bad DOMAIN values".into(),
        })?;
    if vals.len() != 3 {
        return Err(Error::Parse {
            offset,
            message: "DOMAIN line needs 3 values".into(),
        });
    }
    if vals.iter().any(|v| (v - expected).abs() > 1e-6) {
        return Err(Error::Format(format!(
            "only the unit domain is supported (found {vals:?})"
        )));
    }
    Ok(())
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<Lut3D> {
    read_cube_bytes(&std::fs::read(path)?)
}

/// Serializes with 6-decimal fixed point; entries clamp to `[0,1]` on
/// export.
pub fn cube_to_string(lut: &Lut3D, title: &str) -> String {
    let d = lut.size();
    let mut out = String::with_capacity(32 + d * d * d * 27);
    out.push_str(&format!("TITLE \"{title}\"\n"));
    out.push_str(&format!("LUT_3D_SIZE {d}\n"));
    out.push_str("DOMAIN_MIN 0.0 0.0 0.0\n");
    out.push_str("DOMAIN_MAX 1.0 1.0 1.0\n");
    for ib in 0..d {
        for ig in 0..d {
            for ir in 0..d {
                let r = lut.entry(0, ir, ig, ib).clamp(0.0, 1.0);
                let g = lut.entry(1, ir, ig, ib).clamp(0.0, 1.0);
                let b = lut.entry(2, ir, ig, ib).clamp(0.0, 1.0);
                out.push_str(&format!("{r:.6} {g:.6} {b:.6}\n"));
            }
        }
    }
    out
}

pub fn write_cube(path: impl AsRef<Path>, lut: &Lut3D, title: &str) -> Result<()> {
    std::fs::write(path, cube_to_string(lut, title))?;
    Ok(())
}
