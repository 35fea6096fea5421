//! Binary 4D LUT files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    8 bytes  "SALUT4D\0"
//! version  u32      1
//! D        u32      lattice resolution (2..=128)
//! C        u32      context bins (1..=1024)
//! channels u32      3
//! payload  3·C·D³ × f32, index order (c slowest; then k; i_r; i_g; i_b fastest)
//! ```
//!
//! Round-trips are bit-identical. A bad magic, a bad header field, and a
//! truncated payload are distinct errors.

use std::path::Path;

use super::ByteReader;
use crate::error::{Error, Result};
use crate::lut::Lut4D;

pub const MAGIC: &[u8; 8] = b"SALUT4D\0";
pub const VERSION: u32 = 1;

pub fn read_lut4d_bytes(data: &[u8]) -> Result<Lut4D> {
    let mut r = ByteReader::new(data);
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u32_le()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported 4D LUT version {version}"
        )));
    }
    let d = r.u32_le()? as usize;
    let c = r.u32_le()? as usize;
    let channels = r.u32_le()?;
    if !(2..=128).contains(&d) {
        return Err(Error::Format(format!("lattice size {d} outside 2..=128")));
    }
    if !(1..=1024).contains(&c) {
        return Err(Error::Format(format!("context bins {c} outside 1..=1024")));
    }
    if channels != 3 {
        return Err(Error::Format(format!("expected 3 channels, got {channels}")));
    }
    let count = 3 * c * d * d * d;
    let need = count * 4;
    if r.remaining() < need {
        return Err(Error::Truncated {
            needed: need,
            available: r.remaining(),
        });
    }
    let payload = r.take(need)?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            r.remaining()
        )));
    }
    let entries: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite LUT entry".into()));
    }
    Lut4D::new(d, c, entries)
}

pub fn read_lut4d(path: impl AsRef<Path>) -> Result<Lut4D> {
    read_lut4d_bytes(&std::fs::read(path)?)
}

pub fn lut4d_to_bytes(lut: &Lut4D) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + lut.entries().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(lut.size() as u32).to_le_bytes());
    out.extend_from_slice(&(lut.context_bins() as u32).to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    for v in lut.entries() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_lut4d(path: impl AsRef<Path>, lut: &Lut4D) -> Result<()> {
    std::fs::write(path, lut4d_to_bytes(lut))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let entries: Vec<f32> = (0..3 * 2 * 125).map(|_| rng.gen_range(-0.5..1.5)).collect();
        let lut = Lut4D::new(5, 2, entries).unwrap();
        let bytes = lut4d_to_bytes(&lut);
        let back = read_lut4d_bytes(&bytes).unwrap();
        assert_eq!(lut.entries(), back.entries());
        assert_eq!(bytes, lut4d_to_bytes(&back));
    }

    #[test]
    fn paper_config_payload_size() {
        let lut = Lut4D::identity(17, 2).unwrap();
        let bytes = lut4d_to_bytes(&lut);
        // 3·2·17³ f32 values.
        assert_eq!(bytes.len() - 24, 117_912);
    }

    #[test]
    fn bad_magic_distinct_from_truncation() {
        let lut = Lut4D::identity(5, 2).unwrap();
        let mut bytes = lut4d_to_bytes(&lut);
        bytes[0] = b'X';
        assert!(matches!(
            read_lut4d_bytes(&bytes).unwrap_err(),
            Error::BadMagic { .. }
        ));
        let bytes = lut4d_to_bytes(&lut);
        assert!(matches!(
            read_lut4d_bytes(&bytes[..bytes.len() - 5]).unwrap_err(),
            Error::Truncated { .. }
        ));
    }

    #[test]
    fn bad_header_fields() {
        let lut = Lut4D::identity(5, 2).unwrap();
        let good = lut4d_to_bytes(&lut);

        let mut v = good.clone();
        v[8] = 9; // version
        assert!(matches!(read_lut4d_bytes(&v).unwrap_err(), Error::Format(_)));

        let mut v = good.clone();
        v[12] = 1; // D = 1
        assert!(matches!(read_lut4d_bytes(&v).unwrap_err(), Error::Format(_)));

        let mut v = good;
        v[20] = 4; // channels
        assert!(matches!(read_lut4d_bytes(&v).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let lut = Lut4D::identity(5, 2).unwrap();
        let mut bytes = lut4d_to_bytes(&lut);
        bytes.push(0);
        assert!(matches!(
            read_lut4d_bytes(&bytes).unwrap_err(),
            Error::Format(_)
        ));
    }
}
