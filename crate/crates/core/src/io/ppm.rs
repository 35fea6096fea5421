//! Binary PPM (P6) images and PGM (P5) context maps.
//!
//! The writer emits P6 with maxval 255; the reader accepts any maxval up to
//! 65535 (two-byte big-endian samples above 255, per the PNM convention)
//! and maps samples to `[0,1]` by `v / maxval`. Context maps are 16-bit P5
//! so externally produced maps can drive the 4D apply path at full
//! precision.

use std::path::Path;

use super::{ByteReader, MAX_PIXELS};
use crate::error::{Error, Result};
use crate::image::{ColorSpace, ContextMap, ImageBuffer};

struct PnmHeader {
    width: usize,
    height: usize,
    maxval: u32,
}

/// Parses magic + three header integers, handling `#` comments. Leaves the
/// reader positioned at the first sample byte.
fn parse_pnm_header(r: &mut ByteReader, magic: &[u8; 2]) -> Result<PnmHeader> {
    let m = r.take(2)?;
    if m != magic {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(m).into_owned(),
        });
    }
    let mut fields = [0u32; 3];
    for f in &mut fields {
        *f = parse_pnm_int(r)?;
    }
    // Exactly one whitespace byte separates maxval from the samples.
    let sep = r.take(1)?;
    if !sep[0].is_ascii_whitespace() {
        return Err(r.parse_err("expected whitespace after maxval"));
    }
    Ok(PnmHeader {
        width: fields[0] as usize,
        height: fields[1] as usize,
        maxval: fields[2],
    })
}

fn parse_pnm_int(r: &mut ByteReader) -> Result<u32> {
    // Skip whitespace and `#` comment lines.
    loop {
        let b = r.take(1)?;
        if b[0] == b'#' {
            loop {
                let c = r.take(1)?;
                if c[0] == b'\n' {
                    break;
                }
            }
        } else if !b[0].is_ascii_whitespace() {
            if !b[0].is_ascii_digit() {
                return Err(r.parse_err(format!(
                    "expected digit, found byte 0x{:02x}",
                    b[0]
                )));
            }
            let mut value = (b[0] - b'0') as u64;
            loop {
                if r.remaining() == 0 {
                    break;
                }
                let peek = r.take(1)?;
                if peek[0].is_ascii_digit() {
                    value = value * 10 + (peek[0] - b'0') as u64;
                    if value > u32::MAX as u64 {
                        return Err(r.parse_err("header integer overflow"));
                    }
                } else {
                    // Put the byte back: it belongs to the next token.
                    r.back(1);
                    break;
                }
            }
            return Ok(value as u32);
        }
    }
}

fn check_header(h: &PnmHeader, channels: usize) -> Result<usize> {
    if h.width == 0 || h.height == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    if h.width.saturating_mul(h.height) > MAX_PIXELS {
        return Err(Error::Format(format!(
            "image {}x{} exceeds the {MAX_PIXELS}-pixel cap",
            h.width, h.height
        )));
    }
    if h.maxval == 0 || h.maxval > 65535 {
        return Err(Error::Format(format!("maxval {} out of range", h.maxval)));
    }
    let bytes_per_sample = if h.maxval > 255 { 2 } else { 1 };
    Ok(h.width * h.height * channels * bytes_per_sample)
}

/// Parses a binary P6 image from bytes.
pub fn read_ppm_bytes(data: &[u8]) -> Result<ImageBuffer> {
    let mut r = ByteReader::new(data);
    let h = parse_pnm_header(&mut r, b"P6")?;
    let need = check_header(&h, 3)?;
    let payload = r.take(need)?;
    let scale = 1.0 / h.maxval as f32;
    let values: Vec<f32> = if h.maxval > 255 {
        payload
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 * scale)
            .collect()
    } else {
        payload.iter().map(|&b| b as f32 * scale).collect()
    };
    ImageBuffer::from_data(h.width, h.height, ColorSpace::Srgb, values)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    read_ppm_bytes(&std::fs::read(path)?)
}

/// Serializes as binary P6, maxval 255.
pub fn ppm_to_bytes(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn write_ppm(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    std::fs::write(path, ppm_to_bytes(img))?;
    Ok(())
}

/// Parses a binary P5 context map; value = sample / maxval.
pub fn read_ctx_bytes(data: &[u8]) -> Result<ContextMap> {
    let mut r = ByteReader::new(data);
    let h = parse_pnm_header(&mut r, b"P5")?;
    let need = check_header(&h, 1)?;
    let payload = r.take(need)?;
    let scale = 1.0 / h.maxval as f32;
    let values: Vec<f32> = if h.maxval > 255 {
        payload
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 * scale)
            .collect()
    } else {
        payload.iter().map(|&b| b as f32 * scale).collect()
    };
    ContextMap::from_values(h.width, h.height, values)
}

pub fn read_ctx(path: impl AsRef<Path>) -> Result<ContextMap> {
    read_ctx_bytes(&std::fs::read(path)?)
}

/// Serializes as binary P5, maxval 65535, big-endian samples.
pub fn ctx_to_bytes(ctx: &ContextMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", ctx.width(), ctx.height()).into_bytes();
    for &v in ctx.values() {
        let s = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

pub fn write_ctx(path: impl AsRef<Path>, ctx: &ContextMap) -> Result<()> {
    std::fs::write(path, ctx_to_bytes(ctx))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_pixel_white_p6() {
        let img = read_ppm_bytes(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn ppm_roundtrip_within_8bit_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let img = ImageBuffer::from_fn(9, 7, ColorSpace::Srgb, |_, _| {
            [rng.gen(), rng.gen(), rng.gen()]
        })
        .unwrap();
        let back = read_ppm_bytes(&ppm_to_bytes(&img)).unwrap();
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-7);
    }

    #[test]
    fn ppm_header_comments_and_16bit() {
        let mut bytes = b"P6 # comment\n# another\n2 1\n65535\n".to_vec();
        for s in [0u16, 65535, 32768, 1, 2, 3] {
            bytes.extend_from_slice(&s.to_be_bytes());
        }
        let img = read_ppm_bytes(&bytes).unwrap();
        assert_eq!(img.pixel(0, 0)[0], 0.0);
        assert_eq!(img.pixel(0, 0)[1], 1.0);
    }

    #[test]
    fn ppm_malformed_header_reports_offset() {
        let err = read_ppm_bytes(b"P6\n1 x\n255\n").unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 6),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ppm_truncated_payload() {
        let err = read_ppm_bytes(b"P6\n2 2\n255\n\xff").unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }));
    }

    #[test]
    fn ppm_wrong_magic() {
        let err = read_ppm_bytes(b"P5\n1 1\n255\n\xff").unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
    }

    #[test]
    fn ppm_oversized_dims_rejected() {
        let err = read_ppm_bytes(b"P6\n999999999 999999999\n255\n").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn ctx_roundtrip_and_half_value() {
        let ctx = ContextMap::constant(3, 2, 0.5).unwrap();
        let bytes = ctx_to_bytes(&ctx);
        // 0.5 · 65535 = 32767.5 → rounds within ±1 of 32768.
        let header_len = bytes.len() - 2 * 6;
        let sample = u16::from_be_bytes([bytes[header_len], bytes[header_len + 1]]);
        assert!((sample as i32 - 32768).abs() <= 1);
        let back = read_ctx_bytes(&bytes).unwrap();
        assert_eq!((back.width(), back.height()), (3, 2));
        for (a, b) in back.values().iter().zip(ctx.values()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-9);
        }
    }

    #[test]
    fn ctx_random_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let values: Vec<f32> = (0..40).map(|_| rng.gen()).collect();
        let ctx = ContextMap::from_values(8, 5, values).unwrap();
        let back = read_ctx_bytes(&ctx_to_bytes(&ctx)).unwrap();
        for (a, b) in back.values().iter().zip(ctx.values()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-9);
        }
    }
}
