//! Lattice types, identity construction, weighted fusion, and
//! trilinear/quadrilinear interpolation.
//!
//! Entry layout (part of the binary format): channel slowest, then context
//! bin, then red, green, blue index, blue fastest. A `Lut4D` with a single
//! context bin behaves identically to the `Lut3D` path.

use crate::error::{Error, Result};
use crate::image::{ContextMap, ImageBuffer};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Largest supported lattice resolution per color axis.
pub const MAX_LATTICE_SIZE: usize = 128;

/// Largest supported context-bin count.
pub const MAX_CONTEXT_BINS: usize = 1024;

fn check_size(d: usize) -> Result<()> {
    if !(2..=MAX_LATTICE_SIZE).contains(&d) {
        return Err(Error::InvalidDimension {
            what: "lattice size D",
            value: d,
            allowed: "2..=128",
        });
    }
    Ok(())
}

fn check_bins(c: usize) -> Result<()> {
    if !(1..=MAX_CONTEXT_BINS).contains(&c) {
        return Err(Error::InvalidDimension {
            what: "context bins C",
            value: c,
            allowed: "1..=1024",
        });
    }
    Ok(())
}

/// Splits a coordinate in `[0,1]` into a cell index and fractional offset
/// on an `n`-point lattice. Inputs outside `[0,1]` (including NaN) clamp,
/// so interpolation is a total function.
#[inline(always)]
fn axis_coord(v: f32, n: usize) -> (usize, f32) {
    if n <= 1 {
        return (0, 0.0);
    }
    // max/min rather than clamp: NaN falls through to 0.0.
    let v = v.max(0.0).min(1.0);
    let x = v * (n - 1) as f32;
    let mut i = x as usize;
    if i > n - 2 {
        i = n - 2;
    }
    (i, x - i as f32)
}

/// Tensor-product weights for the 8 corners of a color cell.
/// Index bits are (r << 2) | (g << 1) | b.
#[inline(always)]
fn tri_weights(fr: f32, fg: f32, fb: f32) -> [f32; 8] {
    let (r1, g1, b1) = (fr, fg, fb);
    let (r0, g0, b0) = (1.0 - fr, 1.0 - fg, 1.0 - fb);
    [
        r0 * g0 * b0,
        r0 * g0 * b1,
        r0 * g1 * b0,
        r0 * g1 * b1,
        r1 * g0 * b0,
        r1 * g0 * b1,
        r1 * g1 * b0,
        r1 * g1 * b1,
    ]
}

/// Weighted sum over one cell's 8 corners inside a D³ channel slice.
/// `base` is the flat offset of the cell's low corner; the caller guarantees
/// the cell lies inside the lattice.
#[inline(always)]
fn tri_dot(slice: &[f32], base: usize, d: usize, w: &[f32; 8]) -> f32 {
    let d2 = d * d;
    debug_assert!(base + d2 + d + 1 < slice.len() + 1);
    // Corner indices are in-bounds by construction (axis_coord caps i at n-2).
    unsafe {
        let p = |o: usize| *slice.get_unchecked(base + o);
        w[0] * p(0)
            + w[1] * p(1)
            + w[2] * p(d)
            + w[3] * p(d + 1)
            + w[4] * p(d2)
            + w[5] * p(d2 + 1)
            + w[6] * p(d2 + d)
            + w[7] * p(d2 + d + 1)
    }
}

/// Kernel-side coordinate split with a precomputed axis scale.
#[inline(always)]
fn axis_split(v: f32, scale: f32, max_cell: usize) -> (usize, f32) {
    let x = v.max(0.0).min(1.0) * scale;
    let mut i = x as usize;
    if i > max_cell {
        i = max_cell;
    }
    (i, x - i as f32)
}

/// Pixels per work unit in the blocked apply loop. Partitioning never
/// affects results; this only sizes the parallel tasks.
const APPLY_BLOCK: usize = 16384;

/// RGB-interleaved copy of the lattice built once per apply call: each
/// lattice node holds `[r, g, b, 0]`, so a corner fetch is one contiguous
/// 4-float load and the three channels accumulate in lockstep. With two
/// context bins on AVX2 hardware the slices are stored pairwise per node
/// (`paired`), so one 8-float load covers a corner in both slices. The
/// file and API layout (channel slowest) is unchanged; this is a private
/// kernel-side arrangement.
struct ApplyTable {
    data: Vec<f32>,
    d: usize,
    d3: usize,
    c_bins: usize,
    paired: bool,
    /// (D-1) as f32, hoisted out of the pixel loop.
    color_scale: f32,
    /// (C-1) as f32; 0 when C == 1.
    ctx_scale: f32,
}

impl ApplyTable {
    fn from_lut4d(lut: &Lut4D) -> Self {
        let d = lut.size;
        let c_bins = lut.context_bins;
        let d3 = d * d * d;
        if c_bins == 2 && use_avx2_fma() {
            let mut data = vec![0.0f32; d3 * 8];
            for c in 0..3 {
                for k in 0..2 {
                    let src = &lut.entries[(c * 2 + k) * d3..(c * 2 + k + 1) * d3];
                    for (i, &e) in src.iter().enumerate() {
                        data[i * 8 + k * 4 + c] = e;
                    }
                }
            }
            return Self {
                data,
                d,
                d3,
                c_bins,
                paired: true,
                color_scale: (d - 1) as f32,
                ctx_scale: 1.0,
            };
        }
        let mut data = vec![0.0f32; c_bins * d3 * 4];
        for c in 0..3 {
            for k in 0..c_bins {
                let src = &lut.entries[(c * c_bins + k) * d3..(c * c_bins + k + 1) * d3];
                for (i, &e) in src.iter().enumerate() {
                    data[(k * d3 + i) * 4 + c] = e;
                }
            }
        }
        Self {
            data,
            d,
            d3,
            c_bins,
            paired: false,
            color_scale: (d - 1) as f32,
            ctx_scale: (c_bins - 1) as f32,
        }
    }

    fn from_lut3d(lut: &Lut3D) -> Self {
        let d = lut.size;
        let d3 = d * d * d;
        let mut data = vec![0.0f32; d3 * 4];
        for c in 0..3 {
            let src = &lut.entries[c * d3..(c + 1) * d3];
            for (i, &e) in src.iter().enumerate() {
                data[i * 4 + c] = e;
            }
        }
        Self {
            data,
            d,
            d3,
            c_bins: 1,
            paired: false,
            color_scale: (d - 1) as f32,
            ctx_scale: 0.0,
        }
    }

    /// Offsets (in floats) of a cell's 8 corners in the interleaved table,
    /// in the [`tri_weights`] corner order. `stride` is floats per node.
    #[inline(always)]
    fn corner_offsets(&self, stride: usize) -> [usize; 8] {
        let dn = self.d * stride;
        let d2n = self.d * self.d * stride;
        [0, stride, dn, dn + stride, d2n, d2n + stride, d2n + dn, d2n + dn + stride]
    }

    /// Scalar pixel kernel for the non-paired layout.
    #[inline(always)]
    fn pixel_scalar<const FMA: bool>(&self, gamma: f32, r: f32, g: f32, b: f32) -> [f32; 3] {
        debug_assert!(!self.paired);
        let max_cell = self.d - 2;
        let (ir, fr) = axis_split(r, self.color_scale, max_cell);
        let (ig, fg) = axis_split(g, self.color_scale, max_cell);
        let (ib, fb) = axis_split(b, self.color_scale, max_cell);
        let w = tri_weights(fr, fg, fb);
        let offs = self.corner_offsets(4);
        let base = ((ir * self.d + ig) * self.d + ib) * 4;
        let mut acc = [0.0f32; 4];
        let mut accumulate = |start: usize, scale: f32| {
            for (j, &o) in offs.iter().enumerate() {
                let wj = w[j] * scale;
                let p = &self.data[start + o..start + o + 4];
                for l in 0..4 {
                    acc[l] = if FMA {
                        wj.mul_add(p[l], acc[l])
                    } else {
                        wj * p[l] + acc[l]
                    };
                }
            }
        };
        if self.c_bins == 1 {
            accumulate(base, 1.0);
        } else {
            let (ik, fk) = axis_split(gamma, self.ctx_scale, self.c_bins - 2);
            let o0 = ik * self.d3 * 4 + base;
            accumulate(o0, 1.0 - fk);
            accumulate(o0 + self.d3 * 4, fk);
        }
        [acc[0], acc[1], acc[2]]
    }

    #[inline(always)]
    fn block_scalar<const FMA: bool>(&self, src: &[f32], gammas: Gammas, dst: &mut [f32]) {
        for (i, (s, o)) in src
            .chunks_exact(3)
            .zip(dst.chunks_exact_mut(3))
            .enumerate()
        {
            let v = self.pixel_scalar::<FMA>(gammas.get(i), s[0], s[1], s[2]);
            o.copy_from_slice(&v);
        }
    }
}

/// Per-pixel γ source: a slice for the 4D path, absent for the 3D path.
#[derive(Clone, Copy)]
enum Gammas<'a> {
    Map(&'a [f32]),
    None,
}

impl Gammas<'_> {
    #[inline(always)]
    fn get(&self, i: usize) -> f32 {
        match self {
            Gammas::Map(g) => g[i],
            Gammas::None => 0.0,
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use super::{axis_split, tri_weights, ApplyTable, Gammas};
    use std::arch::x86_64::*;

    /// SIMD pixel kernel for the non-paired layout: one 4-float load + FMA
    /// per corner, channels in lanes. Accumulation order matches
    /// `pixel_scalar::<true>`.
    #[inline(always)]
    unsafe fn pixel_simd(t: &ApplyTable, gamma: f32, r: f32, g: f32, b: f32) -> __m128 {
        let max_cell = t.d - 2;
        let (ir, fr) = axis_split(r, t.color_scale, max_cell);
        let (ig, fg) = axis_split(g, t.color_scale, max_cell);
        let (ib, fb) = axis_split(b, t.color_scale, max_cell);
        let w = tri_weights(fr, fg, fb);
        let offs = t.corner_offsets(4);
        let base = ((ir * t.d + ig) * t.d + ib) * 4;
        let ptr = t.data.as_ptr();
        let mut acc = _mm_setzero_ps();
        let mut accumulate = |start: usize, scale: f32| {
            for (j, &o) in offs.iter().enumerate() {
                let wj = _mm_set1_ps(w[j] * scale);
                let p = _mm_loadu_ps(ptr.add(start + o));
                acc = _mm_fmadd_ps(wj, p, acc);
            }
        };
        if t.c_bins == 1 {
            accumulate(base, 1.0);
        } else {
            let (ik, fk) = axis_split(gamma, t.ctx_scale, t.c_bins - 2);
            let o0 = ik * t.d3 * 4 + base;
            accumulate(o0, 1.0 - fk);
            accumulate(o0 + t.d3 * 4, fk);
        }
        acc
    }

    #[target_feature(enable = "sse2,fma")]
    pub(super) unsafe fn block_simd(t: &ApplyTable, src: &[f32], gammas: Gammas, dst: &mut [f32]) {
        let n = src.len() / 3;
        debug_assert_eq!(dst.len(), src.len());
        if n == 0 {
            return;
        }
        // Interior pixels store 16 bytes directly; the spilled fourth lane
        // lands on the next pixel's red channel, which the next store
        // overwrites. Only the block's last pixel must go through scratch
        // (blocks are handed to different threads).
        let out = dst.as_mut_ptr();
        for i in 0..n - 1 {
            let s = src.get_unchecked(3 * i..3 * i + 3);
            let v = pixel_simd(t, gammas.get(i), s[0], s[1], s[2]);
            _mm_storeu_ps(out.add(3 * i), v);
        }
        let i = n - 1;
        let s = src.get_unchecked(3 * i..3 * i + 3);
        let v = pixel_simd(t, gammas.get(i), s[0], s[1], s[2]);
        let mut scratch = [0.0f32; 4];
        _mm_storeu_ps(scratch.as_mut_ptr(), v);
        dst.get_unchecked_mut(3 * i..3 * i + 3)
            .copy_from_slice(&scratch[..3]);
    }

    /// Pixel kernel for the paired two-slice layout: one 8-float load per
    /// corner covers both context slices; the low lanes carry slice 0
    /// scaled by (1-γ), the high lanes slice 1 scaled by γ, summed at the
    /// end.
    #[inline(always)]
    unsafe fn pixel_paired(t: &ApplyTable, gamma: f32, r: f32, g: f32, b: f32) -> __m128 {
        let max_cell = t.d - 2;
        let (ir, fr) = axis_split(r, t.color_scale, max_cell);
        let (ig, fg) = axis_split(g, t.color_scale, max_cell);
        let (ib, fb) = axis_split(b, t.color_scale, max_cell);
        let w = tri_weights(fr, fg, fb);
        let base = ((ir * t.d + ig) * t.d + ib) * 8;
        let offs = t.corner_offsets(8);
        let fk = gamma.max(0.0).min(1.0);
        let wk = _mm256_set_m128(_mm_set1_ps(fk), _mm_set1_ps(1.0 - fk));
        let ptr = t.data.as_ptr();
        let mut acc = _mm256_setzero_ps();
        for (j, &o) in offs.iter().enumerate() {
            let wj = _mm256_mul_ps(_mm256_set1_ps(w[j]), wk);
            let p = _mm256_loadu_ps(ptr.add(base + o));
            acc = _mm256_fmadd_ps(wj, p, acc);
        }
        _mm_add_ps(_mm256_castps256_ps128(acc), _mm256_extractf128_ps::<1>(acc))
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn block_paired(
        t: &ApplyTable,
        src: &[f32],
        gammas: Gammas,
        dst: &mut [f32],
    ) {
        let n = src.len() / 3;
        debug_assert_eq!(dst.len(), src.len());
        if n == 0 {
            return;
        }
        // Same store discipline as `block_simd`.
        let out = dst.as_mut_ptr();
        for i in 0..n - 1 {
            let s = src.get_unchecked(3 * i..3 * i + 3);
            let v = pixel_paired(t, gammas.get(i), s[0], s[1], s[2]);
            _mm_storeu_ps(out.add(3 * i), v);
        }
        let i = n - 1;
        let s = src.get_unchecked(3 * i..3 * i + 3);
        let v = pixel_paired(t, gammas.get(i), s[0], s[1], s[2]);
        let mut scratch = [0.0f32; 4];
        _mm_storeu_ps(scratch.as_mut_ptr(), v);
        dst.get_unchecked_mut(3 * i..3 * i + 3)
            .copy_from_slice(&scratch[..3]);
    }
}

#[inline]
fn use_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("sse2") && std::arch::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

#[inline]
fn use_avx2_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

fn run_block(t: &ApplyTable, src: &[f32], gammas: Gammas, dst: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    {
        if t.paired {
            // Paired tables are only built when AVX2+FMA is present.
            unsafe { x86::block_paired(t, src, gammas, dst) };
            return;
        }
        if use_fma() {
            unsafe { x86::block_simd(t, src, gammas, dst) };
            return;
        }
    }
    t.block_scalar::<false>(src, gammas, dst);
}

/// 3D color lattice: `3·D³` values indexed (channel, r, g, b), blue fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Lut3D {
    size: usize,
    entries: Vec<f32>,
}

impl Lut3D {
    pub fn new(size: usize, entries: Vec<f32>) -> Result<Self> {
        check_size(size)?;
        let expect = 3 * size * size * size;
        if entries.len() != expect {
            return Err(Error::DimensionMismatch(format!(
                "3D LUT with D={size} needs {expect} entries, got {}",
                entries.len()
            )));
        }
        if let Some(v) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite LUT entry {v}")));
        }
        Ok(Self { size, entries })
    }

    /// Identity lattice: output equals input at every node.
    pub fn identity(size: usize) -> Result<Self> {
        check_size(size)?;
        let d = size;
        let scale = 1.0 / (d - 1) as f32;
        let mut entries = Vec::with_capacity(3 * d * d * d);
        for c in 0..3 {
            for ir in 0..d {
                for ig in 0..d {
                    for ib in 0..d {
                        let i = [ir, ig, ib][c];
                        entries.push(i as f32 * scale);
                    }
                }
            }
        }
        Ok(Self { size: d, entries })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f32] {
        &mut self.entries
    }

    #[inline]
    pub fn index(&self, c: usize, ir: usize, ig: usize, ib: usize) -> usize {
        ((c * self.size + ir) * self.size + ig) * self.size + ib
    }

    #[inline]
    pub fn entry(&self, c: usize, ir: usize, ig: usize, ib: usize) -> f32 {
        self.entries[self.index(c, ir, ig, ib)]
    }

    /// Trilinear interpolation over the 8 nearest lattice points.
    /// Exact at nodes; inputs clamp to `[0,1]`.
    #[inline]
    pub fn trilinear(&self, r: f32, g: f32, b: f32) -> [f32; 3] {
        let d = self.size;
        let (ir, fr) = axis_coord(r, d);
        let (ig, fg) = axis_coord(g, d);
        let (ib, fb) = axis_coord(b, d);
        let w = tri_weights(fr, fg, fb);
        let base = (ir * d + ig) * d + ib;
        let d3 = d * d * d;
        let mut out = [0.0f32; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = tri_dot(&self.entries[c * d3..(c + 1) * d3], base, d, &w);
        }
        out
    }

    /// Applies the lattice to every pixel.
    pub fn apply(&self, content: &ImageBuffer) -> ImageBuffer {
        let mut out = content.clone();
        let table = ApplyTable::from_lut3d(self);
        par_blocks(&table, content.data(), None, out.data_mut());
        out
    }

    /// Clamps every entry into `[0,1]` (export contract).
    pub fn clamp_entries(&mut self) {
        for v in &mut self.entries {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// 4D lattice: `3·C·D³` values indexed (channel, context bin, r, g, b),
/// blue fastest. Fitting intermediates may hold out-of-range entries;
/// exported or fused-for-inference LUTs are clamped to `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lut4D {
    size: usize,
    context_bins: usize,
    entries: Vec<f32>,
}

impl Lut4D {
    pub fn new(size: usize, context_bins: usize, entries: Vec<f32>) -> Result<Self> {
        check_size(size)?;
        check_bins(context_bins)?;
        let expect = 3 * context_bins * size * size * size;
        if entries.len() != expect {
            return Err(Error::DimensionMismatch(format!(
                "4D LUT with D={size}, C={context_bins} needs {expect} entries, got {}",
                entries.len()
            )));
        }
        if let Some(v) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite LUT entry {v}")));
        }
        Ok(Self {
            size,
            context_bins,
            entries,
        })
    }

    /// Identity 4D lattice: every context slice maps input to itself, so
    /// applying it reproduces the content for any context map.
    pub fn identity(size: usize, context_bins: usize) -> Result<Self> {
        check_size(size)?;
        check_bins(context_bins)?;
        let d = size;
        let scale = 1.0 / (d - 1) as f32;
        let mut entries = Vec::with_capacity(3 * context_bins * d * d * d);
        for c in 0..3 {
            for _k in 0..context_bins {
                for ir in 0..d {
                    for ig in 0..d {
                        for ib in 0..d {
                            let i = [ir, ig, ib][c];
                            entries.push(i as f32 * scale);
                        }
                    }
                }
            }
        }
        Ok(Self {
            size: d,
            context_bins,
            entries,
        })
    }

    /// Wraps a 3D lattice as a single-slice 4D one (C = 1).
    pub fn from_lut3d(lut: &Lut3D) -> Self {
        Self {
            size: lut.size(),
            context_bins: 1,
            entries: lut.entries().to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn context_bins(&self) -> usize {
        self.context_bins
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f32] {
        &mut self.entries
    }

    #[inline]
    pub fn index(&self, c: usize, k: usize, ir: usize, ig: usize, ib: usize) -> usize {
        (((c * self.context_bins + k) * self.size + ir) * self.size + ig) * self.size + ib
    }

    #[inline]
    pub fn entry(&self, c: usize, k: usize, ir: usize, ig: usize, ib: usize) -> f32 {
        self.entries[self.index(c, k, ir, ig, ib)]
    }

    /// Copies out context slice `k` as a 3D lattice.
    pub fn slice(&self, k: usize) -> Result<Lut3D> {
        if k >= self.context_bins {
            return Err(Error::InvalidDimension {
                what: "context bin",
                value: k,
                allowed: "k < C",
            });
        }
        let d3 = self.size * self.size * self.size;
        let mut entries = Vec::with_capacity(3 * d3);
        for c in 0..3 {
            let start = (c * self.context_bins + k) * d3;
            entries.extend_from_slice(&self.entries[start..start + d3]);
        }
        Lut3D::new(self.size, entries)
    }

    /// Quadrilinear interpolation: weighted average of the 16 nearest grid
    /// points in (context, r, g, b). Exact at lattice nodes; all four
    /// coordinates clamp to `[0,1]` internally, so this is a total function.
    #[inline]
    pub fn quad_interp(&self, gamma: f32, r: f32, g: f32, b: f32) -> [f32; 3] {
        let d = self.size;
        let c_bins = self.context_bins;
        let (ir, fr) = axis_coord(r, d);
        let (ig, fg) = axis_coord(g, d);
        let (ib, fb) = axis_coord(b, d);
        let w = tri_weights(fr, fg, fb);
        let base = (ir * d + ig) * d + ib;
        let d3 = d * d * d;
        let mut out = [0.0f32; 3];
        if c_bins == 1 {
            for (c, o) in out.iter_mut().enumerate() {
                *o = tri_dot(&self.entries[c * d3..(c + 1) * d3], base, d, &w);
            }
            return out;
        }
        let (ik, fk) = axis_coord(gamma, c_bins);
        for (c, o) in out.iter_mut().enumerate() {
            let lo_start = (c * c_bins + ik) * d3;
            let lo = tri_dot(&self.entries[lo_start..lo_start + d3], base, d, &w);
            let hi = tri_dot(&self.entries[lo_start + d3..lo_start + 2 * d3], base, d, &w);
            // a·(1-t) + b·t is exact at t ∈ {0,1}, preserving node exactness.
            *o = lo * (1.0 - fk) + hi * fk;
        }
        out
    }

    /// Applies the 4D lattice per pixel with γ taken from the context map.
    /// Pixels are partitioned across worker threads when the `parallel`
    /// feature is active; the output is bit-identical for any partitioning.
    pub fn apply(&self, content: &ImageBuffer, ctx: &ContextMap) -> Result<ImageBuffer> {
        let mut out = content.clone();
        self.apply_into(content, ctx, &mut out)?;
        Ok(out)
    }

    /// Like [`Lut4D::apply`] but writes into a caller-owned buffer of the
    /// same dimensions, so frame loops can reuse allocations.
    pub fn apply_into(
        &self,
        content: &ImageBuffer,
        ctx: &ContextMap,
        out: &mut ImageBuffer,
    ) -> Result<()> {
        if !ctx.matches(content) {
            return Err(Error::DimensionMismatch(format!(
                "context map {}x{} vs content {}x{}",
                ctx.width(),
                ctx.height(),
                content.width(),
                content.height()
            )));
        }
        if out.width() != content.width() || out.height() != content.height() {
            return Err(Error::DimensionMismatch(format!(
                "output buffer {}x{} vs content {}x{}",
                out.width(),
                out.height(),
                content.width(),
                content.height()
            )));
        }
        let table = ApplyTable::from_lut4d(self);
        par_blocks(&table, content.data(), Some(ctx.values()), out.data_mut());
        Ok(())
    }

    /// Sequential variant of [`Lut4D::apply`]; the baseline in throughput
    /// comparisons. Bit-identical to the parallel path.
    pub fn apply_seq(&self, content: &ImageBuffer, ctx: &ContextMap) -> Result<ImageBuffer> {
        if !ctx.matches(content) {
            return Err(Error::DimensionMismatch(format!(
                "context map {}x{} vs content {}x{}",
                ctx.width(),
                ctx.height(),
                content.width(),
                content.height()
            )));
        }
        let mut out = content.clone();
        let table = ApplyTable::from_lut4d(self);
        run_block(
            &table,
            content.data(),
            Gammas::Map(ctx.values()),
            out.data_mut(),
        );
        Ok(out)
    }

    /// Clamps every entry into `[0,1]` (export contract).
    pub fn clamp_entries(&mut self) {
        for v in &mut self.entries {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Count and worst excursion of entries outside `[0,1]`; fitting reports
    /// this before export clamps.
    pub fn out_of_range(&self) -> (usize, f32) {
        let mut count = 0;
        let mut worst = 0.0f32;
        for &v in &self.entries {
            let excess = (v - 1.0).max(-v).max(0.0);
            if excess > 0.0 {
                count += 1;
                worst = worst.max(excess);
            }
        }
        (count, worst)
    }
}

#[cfg(feature = "parallel")]
fn par_blocks(t: &ApplyTable, src: &[f32], gammas: Option<&[f32]>, dst: &mut [f32]) {
    match gammas {
        Some(g) => dst
            .par_chunks_mut(3 * APPLY_BLOCK)
            .zip(src.par_chunks(3 * APPLY_BLOCK))
            .zip(g.par_chunks(APPLY_BLOCK))
            .for_each(|((o, s), g)| run_block(t, s, Gammas::Map(g), o)),
        None => dst
            .par_chunks_mut(3 * APPLY_BLOCK)
            .zip(src.par_chunks(3 * APPLY_BLOCK))
            .for_each(|(o, s)| run_block(t, s, Gammas::None, o)),
    }
}

#[cfg(not(feature = "parallel"))]
fn par_blocks(t: &ApplyTable, src: &[f32], gammas: Option<&[f32]>, dst: &mut [f32]) {
    let g = match gammas {
        Some(g) => Gammas::Map(g),
        None => Gammas::None,
    };
    run_block(t, src, g, dst);
}

/// Fusion weights α for a basis LUT bank. Non-negative; the softmax weight
/// generator produces a simplex (Σα = 1 ± 1e-6), explicit user weights may
/// have any non-negative sum.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleWeights {
    alpha: Vec<f32>,
}

impl StyleWeights {
    pub fn new(alpha: Vec<f32>) -> Result<Self> {
        if let Some(v) = alpha.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidValue(format!(
                "style weight {v} must be finite and non-negative"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            alpha: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }

    pub fn sum(&self) -> f64 {
        self.alpha.iter().map(|&a| a as f64).sum()
    }
}

/// N learnable residual lattices plus the fixed identity. Fusion combines
/// them into one style-specific 4D LUT; the identity acts as a residual
/// connection, so zero weights reproduce the input unchanged.
#[derive(Debug, Clone)]
pub struct BasisLutBank {
    bases: Vec<Lut4D>,
    identity: Lut4D,
}

impl BasisLutBank {
    /// Builds a bank from residual lattices. All bases must share (D, C).
    pub fn new(bases: Vec<Lut4D>) -> Result<Self> {
        let first = bases.first().ok_or(Error::InvalidDimension {
            what: "basis count N",
            value: 0,
            allowed: ">= 1",
        })?;
        let (d, c) = (first.size(), first.context_bins());
        for (i, b) in bases.iter().enumerate() {
            if b.size() != d || b.context_bins() != c {
                return Err(Error::DimensionMismatch(format!(
                    "basis {i} is D={}, C={} but bank is D={d}, C={c}",
                    b.size(),
                    b.context_bins()
                )));
            }
        }
        let identity = Lut4D::identity(d, c)?;
        Ok(Self { bases, identity })
    }

    /// Seeded bank of Gaussian-noise residuals; used by tests, the
    /// benchmark, and `gen bank`.
    pub fn seeded(n: usize, d: usize, c: usize, sigma: f32, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        use rand_distr::StandardNormal;
        if n == 0 {
            return Err(Error::InvalidDimension {
                what: "basis count N",
                value: 0,
                allowed: ">= 1",
            });
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let len = 3 * c * d * d * d;
        let bases = (0..n)
            .map(|_| {
                let entries = (0..len)
                    .map(|_| sigma * rng.sample::<f32, _>(StandardNormal))
                    .collect();
                Lut4D::new(d, c, entries)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bases)
    }

    pub fn count(&self) -> usize {
        self.bases.len()
    }

    pub fn size(&self) -> usize {
        self.identity.size()
    }

    pub fn context_bins(&self) -> usize {
        self.identity.context_bins()
    }

    pub fn bases(&self) -> &[Lut4D] {
        &self.bases
    }

    pub fn identity(&self) -> &Lut4D {
        &self.identity
    }

    /// Fuses the bank: identity + Σ αᵢ·basisᵢ, entrywise. Accumulates in
    /// f64 so the result is independent of basis order at f32 precision.
    /// With `clamp` set (inference/export), entries clip to `[0,1]`;
    /// fitting leaves them unclamped for gradient exactness.
    pub fn fuse(&self, weights: &StyleWeights, clamp: bool) -> Result<Lut4D> {
        if weights.len() != self.bases.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} bases",
                weights.len(),
                self.bases.len()
            )));
        }
        let mut acc: Vec<f64> = self.identity.entries().iter().map(|&v| v as f64).collect();
        for (&alpha, basis) in weights.alpha().iter().zip(&self.bases) {
            let a = alpha as f64;
            for (o, &e) in acc.iter_mut().zip(basis.entries()) {
                *o += a * e as f64;
            }
        }
        let entries: Vec<f32> = if clamp {
            acc.into_iter().map(|v| (v as f32).clamp(0.0, 1.0)).collect()
        } else {
            acc.into_iter().map(|v| v as f32).collect()
        };
        Lut4D::new(self.size(), self.context_bins(), entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ColorSpace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent 16-corner oracle: Σ over corners of entry · Π axis
    /// weights, all in f64. Deliberately not factorized like the
    /// implementation.
    fn quad_oracle(lut: &Lut4D, gamma: f64, r: f64, g: f64, b: f64) -> [f64; 3] {
        let d = lut.size();
        let c_bins = lut.context_bins();
        let split = |v: f64, n: usize| -> (usize, f64) {
            if n <= 1 {
                return (0, 0.0);
            }
            let x = v.clamp(0.0, 1.0) * (n - 1) as f64;
            let i = (x.floor() as usize).min(n - 2);
            (i, x - i as f64)
        };
        let (ik, fk) = split(gamma, c_bins);
        let (ir, fr) = split(r, d);
        let (ig, fg) = split(g, d);
        let (ib, fb) = split(b, d);
        let mut out = [0.0f64; 3];
        for c in 0..3 {
            let mut sum = 0.0;
            for dk in 0..2usize {
                for dr in 0..2usize {
                    for dg in 0..2usize {
                        for db in 0..2usize {
                            let wk = if c_bins == 1 {
                                if dk == 0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            } else if dk == 0 {
                                1.0 - fk
                            } else {
                                fk
                            };
                            let w = wk
                                * (if dr == 0 { 1.0 - fr } else { fr })
                                * (if dg == 0 { 1.0 - fg } else { fg })
                                * (if db == 0 { 1.0 - fb } else { fb });
                            let k = (ik + dk).min(c_bins - 1);
                            let e = lut.entry(c, k, ir + dr, ig + dg, ib + db);
                            sum += w * e as f64;
                        }
                    }
                }
            }
            out[c] = sum;
        }
        out
    }

    fn tri_oracle(lut: &Lut3D, r: f64, g: f64, b: f64) -> [f64; 3] {
        let as4d = Lut4D::from_lut3d(lut);
        quad_oracle(&as4d, 0.0, r, g, b)
    }

    fn random_lut4d(d: usize, c: usize, rng: &mut ChaCha8Rng) -> Lut4D {
        let len = 3 * c * d * d * d;
        let entries = (0..len).map(|_| rng.gen_range(0.0..=1.0)).collect();
        Lut4D::new(d, c, entries).unwrap()
    }

    fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
        let data = (0..3 * w * h).map(|_| rng.gen_range(0.0..=1.0)).collect();
        ImageBuffer::from_data(w, h, ColorSpace::Log, data).unwrap()
    }

    fn random_ctx(w: usize, h: usize, rng: &mut ChaCha8Rng) -> ContextMap {
        let values = (0..w * h).map(|_| rng.gen_range(0.0..=1.0)).collect();
        ContextMap::from_values(w, h, values).unwrap()
    }

    #[test]
    fn identity_d2_c1_entries() {
        let lut = Lut4D::identity(2, 1).unwrap();
        for ir in 0..2 {
            for ig in 0..2 {
                for ib in 0..2 {
                    assert_eq!(lut.entry(0, 0, ir, ig, ib), ir as f32);
                    assert_eq!(lut.entry(1, 0, ir, ig, ib), ig as f32);
                    assert_eq!(lut.entry(2, 0, ir, ig, ib), ib as f32);
                }
            }
        }
    }

    #[test]
    fn identity_paper_config_entry() {
        // Green channel, any context bin: value is i_g / (D-1).
        let lut = Lut4D::identity(17, 2).unwrap();
        assert_eq!(lut.entry(1, 1, 4, 8, 12), 0.5);
        assert_eq!(lut.entry(1, 0, 4, 8, 12), 0.5);
    }

    #[test]
    fn identity_invalid_dims() {
        assert!(Lut4D::identity(1, 2).is_err());
        assert!(Lut4D::identity(17, 0).is_err());
        assert!(Lut4D::identity(129, 2).is_err());
        assert!(Lut3D::identity(1).is_err());
    }

    #[test]
    fn identity_apply_reproduces_input() {
        let lut = Lut4D::identity(17, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = random_image(23, 9, &mut rng);
        let ctx = random_ctx(23, 9, &mut rng);
        let out = lut.apply(&img, &ctx).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-6);
    }

    #[test]
    fn quad_interp_exact_at_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let lut = random_lut4d(5, 3, &mut rng);
        let d = lut.size();
        for k in 0..lut.context_bins() {
            let gamma = k as f32 / (lut.context_bins() - 1) as f32;
            for ir in 0..d {
                for ig in 0..d {
                    for ib in 0..d {
                        let r = ir as f32 / (d - 1) as f32;
                        let g = ig as f32 / (d - 1) as f32;
                        let b = ib as f32 / (d - 1) as f32;
                        let got = lut.quad_interp(gamma, r, g, b);
                        for c in 0..3 {
                            let want = lut.entry(c, k, ir, ig, ib);
                            assert!(
                                (got[c] - want).abs() < 1e-9,
                                "node ({k},{ir},{ig},{ib}) c{c}: {} vs {}",
                                got[c],
                                want
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn quad_interp_constant_cell() {
        // All 16 corners equal v → output (v,v,v) anywhere in the cell.
        let d = 2;
        let v = 0.37f32;
        let lut = Lut4D::new(d, 2, vec![v; 3 * 2 * 8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let out = lut.quad_interp(
                rng.gen_range(0.0..=1.0),
                rng.gen_range(0.0..=1.0),
                rng.gen_range(0.0..=1.0),
                rng.gen_range(0.0..=1.0),
            );
            for c in 0..3 {
                assert!((out[c] - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn quad_interp_matches_corner_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let lut = random_lut4d(5, 2, &mut rng);
        for _ in 0..1000 {
            let (gamma, r, g, b) = (
                rng.gen_range(-0.1..=1.1f32),
                rng.gen_range(0.0..=1.0f32),
                rng.gen_range(0.0..=1.0f32),
                rng.gen_range(0.0..=1.0f32),
            );
            let got = lut.quad_interp(gamma, r, g, b);
            let want = quad_oracle(&lut, gamma as f64, r as f64, g as f64, b as f64);
            for c in 0..3 {
                assert!(
                    (got[c] as f64 - want[c]).abs() < 1e-6,
                    "({gamma},{r},{g},{b}) c{c}: {} vs {}",
                    got[c],
                    want[c]
                );
            }
        }
    }

    #[test]
    fn trilinear_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let len = 3 * 125;
        let entries = (0..len).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let lut = Lut3D::new(5, entries).unwrap();
        for _ in 0..500 {
            let (r, g, b) = (
                rng.gen_range(0.0..=1.0f32),
                rng.gen_range(0.0..=1.0f32),
                rng.gen_range(0.0..=1.0f32),
            );
            let got = lut.trilinear(r, g, b);
            let want = tri_oracle(&lut, r as f64, g as f64, b as f64);
            for c in 0..3 {
                assert!((got[c] as f64 - want[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn quad_linearity_in_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let a = random_lut4d(5, 2, &mut rng);
        let b = random_lut4d(5, 2, &mut rng);
        let sum_entries: Vec<f32> = a
            .entries()
            .iter()
            .zip(b.entries())
            .map(|(x, y)| x + y)
            .collect();
        let sum = Lut4D::new(5, 2, sum_entries).unwrap();
        for _ in 0..200 {
            let p = [
                rng.gen_range(0.0..=1.0f32),
                rng.gen_range(0.0..=1.0f32),
                rng.gen_range(0.0..=1.0f32),
                rng.gen_range(0.0..=1.0f32),
            ];
            let va = a.quad_interp(p[0], p[1], p[2], p[3]);
            let vb = b.quad_interp(p[0], p[1], p[2], p[3]);
            let vs = sum.quad_interp(p[0], p[1], p[2], p[3]);
            for c in 0..3 {
                assert!((vs[c] - (va[c] + vb[c])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn quad_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let lut = random_lut4d(5, 2, &mut rng);
        let d = lut.size();
        for _ in 0..500 {
            let (gamma, r, g, b) = (
                rng.gen_range(0.0..=1.0f32),
                rng.gen_range(0.0..=1.0f32),
                rng.gen_range(0.0..=1.0f32),
                rng.gen_range(0.0..=1.0f32),
            );
            let out = lut.quad_interp(gamma, r, g, b);
            let split = |v: f32, n: usize| {
                let x = v.clamp(0.0, 1.0) * (n - 1) as f32;
                (x as usize).min(n - 2)
            };
            let (ik, ir, ig, ib) = (
                split(gamma, lut.context_bins()),
                split(r, d),
                split(g, d),
                split(b, d),
            );
            for c in 0..3 {
                let mut lo = f32::INFINITY;
                let mut hi = f32::NEG_INFINITY;
                for dk in 0..2 {
                    for dr in 0..2 {
                        for dg in 0..2 {
                            for db in 0..2 {
                                let e = lut.entry(c, ik + dk, ir + dr, ig + dg, ib + db);
                                lo = lo.min(e);
                                hi = hi.max(e);
                            }
                        }
                    }
                }
                assert!(out[c] >= lo - 1e-6 && out[c] <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn apply_slice_selection_and_midpoint_blend() {
        // Bin 0 = identity slice, bin 1 = constant 0.5.
        let d = 9;
        let id = Lut3D::identity(d).unwrap();
        let d3 = d * d * d;
        let mut entries = Vec::with_capacity(3 * 2 * d3);
        for c in 0..3 {
            entries.extend_from_slice(&id.entries()[c * d3..(c + 1) * d3]);
            entries.extend(std::iter::repeat(0.5f32).take(d3));
        }
        let lut = Lut4D::new(d, 2, entries).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let img = random_image(13, 7, &mut rng);

        let zeros = ContextMap::constant(13, 7, 0.0).unwrap();
        let out0 = lut.apply(&img, &zeros).unwrap();
        assert!(out0.max_abs_diff(&img) < 1e-6);

        let ones = ContextMap::constant(13, 7, 1.0).unwrap();
        let out1 = lut.apply(&img, &ones).unwrap();
        for &v in out1.data() {
            assert!((v - 0.5).abs() < 1e-6);
        }

        // γ = 0.5 blends the slices: 0.5·content + 0.25.
        let half = ContextMap::constant(13, 7, 0.5).unwrap();
        let outh = lut.apply(&img, &half).unwrap();
        for (o, i) in outh.data().iter().zip(img.data()) {
            assert!((o - (0.5 * i + 0.25)).abs() < 1e-6);
        }
    }

    #[test]
    fn apply_dimension_mismatch() {
        let lut = Lut4D::identity(5, 2).unwrap();
        let img = ImageBuffer::new(4, 4, ColorSpace::Log).unwrap();
        let ctx = ContextMap::constant(5, 4, 0.0).unwrap();
        assert!(lut.apply(&img, &ctx).is_err());
    }

    #[test]
    fn lut3d_apply_matches_c1_lut4d() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let len = 3 * 125;
        let entries: Vec<f32> = (0..len).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let lut3 = Lut3D::new(5, entries).unwrap();
        let lut4 = Lut4D::from_lut3d(&lut3);
        let img = random_image(16, 5, &mut rng);
        let ctx = random_ctx(16, 5, &mut rng);
        let a = lut3.apply(&img);
        let b = lut4.apply(&img, &ctx).unwrap();
        // Degenerate context axis: bit-identical to the 3D path.
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn lut3d_identity_preserves_input() {
        let lut = Lut3D::identity(9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let img = random_image(11, 6, &mut rng);
        let out = lut.apply(&img);
        assert!(out.max_abs_diff(&img) < 1e-6);
    }

    #[test]
    fn fuse_zero_weights_is_identity_exactly() {
        let bank = BasisLutBank::seeded(4, 5, 2, 0.2, 21).unwrap();
        let fused = bank.fuse(&StyleWeights::zeros(4), true).unwrap();
        assert_eq!(fused.entries(), bank.identity().entries());
    }

    #[test]
    fn fuse_negative_residual_clamps_at_zero() {
        // N=1, α=1, basis ≡ -0.25 → every entry max(0, identity - 0.25).
        let d = 5;
        let len = 3 * 2 * d * d * d;
        let basis = Lut4D::new(d, 2, vec![-0.25; len]).unwrap();
        let bank = BasisLutBank::new(vec![basis]).unwrap();
        let w = StyleWeights::new(vec![1.0]).unwrap();
        let fused = bank.fuse(&w, true).unwrap();
        for (f, i) in fused.entries().iter().zip(bank.identity().entries()) {
            assert!((f - (i - 0.25).max(0.0)).abs() < 1e-7);
        }
    }

    #[test]
    fn fuse_matches_entrywise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let bank = BasisLutBank::seeded(4, 5, 2, 0.3, 23).unwrap();
        // Random simplex weights.
        let raw: Vec<f32> = (0..4).map(|_| rng.gen_range(0.0..1.0f32)).collect();
        let total: f32 = raw.iter().sum();
        let alpha: Vec<f32> = raw.iter().map(|v| v / total).collect();
        let w = StyleWeights::new(alpha.clone()).unwrap();
        let fused = bank.fuse(&w, false).unwrap();
        for e in 0..fused.entries().len() {
            let mut want = bank.identity().entries()[e] as f64;
            for (i, basis) in bank.bases().iter().enumerate() {
                want += alpha[i] as f64 * basis.entries()[e] as f64;
            }
            let got = fused.entries()[e] as f64;
            assert!(
                (got - want).abs() < 1e-7,
                "entry {e}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn fuse_weight_count_mismatch() {
        let bank = BasisLutBank::seeded(4, 5, 2, 0.2, 24).unwrap();
        assert!(bank.fuse(&StyleWeights::zeros(3), true).is_err());
    }

    #[test]
    fn bank_rejects_mixed_dims() {
        let a = Lut4D::identity(5, 2).unwrap();
        let b = Lut4D::identity(9, 2).unwrap();
        assert!(BasisLutBank::new(vec![a, b]).is_err());
    }

    #[test]
    fn style_weights_reject_negative() {
        assert!(StyleWeights::new(vec![0.5, -0.1]).is_err());
        assert!(StyleWeights::new(vec![0.5, f32::NAN]).is_err());
    }

    #[test]
    fn slice_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let lut = random_lut4d(5, 3, &mut rng);
        let s1 = lut.slice(1).unwrap();
        for c in 0..3 {
            for ir in 0..5 {
                for ig in 0..5 {
                    for ib in 0..5 {
                        assert_eq!(s1.entry(c, ir, ig, ib), lut.entry(c, 1, ir, ig, ib));
                    }
                }
            }
        }
        assert!(lut.slice(3).is_err());
    }

    #[test]
    fn out_of_range_diagnostic() {
        let mut lut = Lut4D::identity(5, 1).unwrap();
        assert_eq!(lut.out_of_range(), (0, 0.0));
        lut.entries_mut()[0] = -0.5;
        lut.entries_mut()[1] = 1.25;
        let (count, worst) = lut.out_of_range();
        assert_eq!(count, 2);
        assert!((worst - 0.5).abs() < 1e-7);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn apply_bit_identical_across_thread_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let lut = random_lut4d(9, 2, &mut rng);
        let img = random_image(64, 33, &mut rng);
        let ctx = random_ctx(64, 33, &mut rng);
        let outputs: Vec<Vec<f32>> = [1usize, 2, 8]
            .iter()
            .map(|&n| {
                crate::parallel::with_threads(n, || {
                    lut.apply(&img, &ctx).unwrap().data().to_vec()
                })
            })
            .collect();
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[0], outputs[2]);
        let seq = lut.apply_seq(&img, &ctx).unwrap();
        assert_eq!(outputs[0], seq.data());
    }
}
