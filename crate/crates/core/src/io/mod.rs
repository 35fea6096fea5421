//! Bit-exact readers and writers for the engine's file formats.
//!
//! - binary P6 PPM images and P5 PGM context maps ([`ppm`])
//! - IRIDAS/Resolve-style `.cube` 3D LUTs, red index fastest ([`cube`])
//! - binary 4D LUTs, magic `SALUT4D\0` ([`lut_bin`])
//! - binary weight archives, magic `SALUTWT\0` ([`weights_bin`]), also used
//!   to store basis LUT banks ([`bank`]) and exported feature pyramids
//!
//! Parsers work on fully-read byte buffers, validate declared sizes against
//! the actual payload before allocating, and return structured errors with
//! byte offsets — malformed or fuzzed input never panics.

pub mod bank;
pub mod cube;
pub mod lut_bin;
pub mod ppm;
pub mod weights_bin;

pub use bank::{read_bank, write_bank};
pub use cube::{read_cube, read_cube_bytes, write_cube};
pub use lut_bin::{read_lut4d, read_lut4d_bytes, write_lut4d};
pub use ppm::{
    read_ctx, read_ctx_bytes, read_ppm, read_ppm_bytes, write_ctx, write_ppm,
};
pub use weights_bin::{read_weights, read_weights_bytes, write_weights};

use crate::error::{Error, Result};

/// Biggest accepted image in pixels (covers 8K frames with headroom).
pub const MAX_PIXELS: usize = 67_108_864;

/// Cursor over a byte buffer with offset-carrying errors.
pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                needed: n,
                available: self.remaining(),
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32_le(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Steps back over bytes already taken (lookahead support).
    pub fn back(&mut self, n: usize) {
        debug_assert!(n <= self.pos);
        self.pos -= n;
    }

    pub fn parse_err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }
}
