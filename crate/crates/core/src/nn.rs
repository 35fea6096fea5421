//! Deterministic forward-pass tensor primitives shared by the weight
//! generator and context generator. Inference only — parameters come from
//! [`WeightArchive`] files, there is no training or autodiff here.
//!
//! Data-path arithmetic is 32-bit; per-channel statistics and softmax
//! normalizations accumulate in f64. Every primitive is a pure function:
//! identical inputs give bit-identical outputs regardless of thread count.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Dense tensor of arbitrary rank; the unit stored in a [`WeightArchive`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let count: usize = dims.iter().product();
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidDimension {
                what: "tensor dim",
                value: 0,
                allowed: "rank >= 1, every dim >= 1",
            });
        }
        if data.len() != count {
            return Err(Error::DimensionMismatch(format!(
                "tensor dims {dims:?} need {count} values, got {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite tensor value {v}")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let count = dims.iter().product();
        Self::new(dims, vec![0.0; count])
    }

    /// Seeded Gaussian tensor, used by the builtin feature provider and the
    /// default parameter generators.
    pub fn gaussian(dims: Vec<usize>, std: f32, rng: &mut impl rand::Rng) -> Result<Self> {
        use rand_distr::StandardNormal;
        let count = dims.iter().product();
        let data = (0..count)
            .map(|_| std * rng.sample::<f32, _>(StandardNormal))
            .collect();
        Self::new(dims, data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Channels × height × width feature map, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidDimension {
                what: "feature map dim",
                value: 0,
                allowed: ">= 1",
            });
        }
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    /// Planar (3, H, W) view of an interleaved RGB image.
    pub fn from_image(img: &ImageBuffer) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut data = vec![0.0f32; 3 * w * h];
        let src = img.data();
        for (i, px) in src.chunks_exact(3).enumerate() {
            data[i] = px[0];
            data[w * h + i] = px[1];
            data[2 * w * h + i] = px[2];
        }
        Self {
            channels: 3,
            height: h,
            width: w,
            data,
        }
    }

    /// Reinterprets a rank-3 [`Tensor`] as a feature map.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected rank-3 tensor, got dims {:?}",
                t.dims()
            )));
        }
        Self::new(t.dims()[0], t.dims()[1], t.dims()[2], t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.channels, self.height, self.width],
            data: self.data.clone(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Stacks two maps along the channel axis; spatial dims must agree.
    pub fn concat_channels(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
        if a.height != b.height || a.width != b.width {
            return Err(Error::DimensionMismatch(format!(
                "concat {}x{} vs {}x{}",
                a.height, a.width, b.height, b.width
            )));
        }
        let mut data = Vec::with_capacity((a.channels + b.channels) * a.height * a.width);
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor3::new(a.channels + b.channels, a.height, a.width, data)
    }
}

/// Ordered, uniquely named tensor collection; the parameter container for
/// every learned component, loadable from the binary weight format.
#[derive(Debug, Clone, Default)]
pub struct WeightArchive {
    names: Vec<String>,
    index: HashMap<String, usize>,
    tensors: Vec<Tensor>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor; duplicate names are rejected.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Format(format!("duplicate tensor name `{name}`")));
        }
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Insertion-ordered iteration (the serialization order).
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// View resolving names under `prefix.`.
    pub fn scoped<'a>(&'a self, prefix: &str) -> ScopedParams<'a> {
        ScopedParams {
            archive: self,
            prefix: prefix.to_string(),
        }
    }
}

/// Prefix-resolving view into a [`WeightArchive`].
pub struct ScopedParams<'a> {
    archive: &'a WeightArchive,
    prefix: String,
}

impl<'a> ScopedParams<'a> {
    pub fn get(&self, name: &str) -> Option<&'a Tensor> {
        self.archive.get(&format!("{}.{name}", self.prefix))
    }

    pub fn require(&self, name: &str) -> Result<&'a Tensor> {
        self.archive.require(&format!("{}.{name}", self.prefix))
    }

    pub fn scoped(&self, sub: &str) -> ScopedParams<'a> {
        ScopedParams {
            archive: self.archive,
            prefix: format!("{}.{sub}", self.prefix),
        }
    }
}

fn conv_out_dim(input: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < k {
        return Err(Error::ShapeMismatch(format!(
            "kernel {k} larger than padded input {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// 2D cross-correlation with zero padding. Kernel dims are
/// `[out_channels, in_channels, kh, kw]`; an empty bias means zero.
pub fn conv2d(
    x: &Tensor3,
    kernel: &Tensor,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor3> {
    if kernel.rank() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv kernel must be rank 4, got {:?}",
            kernel.dims()
        )));
    }
    let (oc, ic, kh, kw) = (
        kernel.dims()[0],
        kernel.dims()[1],
        kernel.dims()[2],
        kernel.dims()[3],
    );
    if ic != x.channels() {
        return Err(Error::ShapeMismatch(format!(
            "kernel expects {ic} input channels, feature map has {}",
            x.channels()
        )));
    }
    if !bias.is_empty() && bias.len() != oc {
        return Err(Error::ShapeMismatch(format!(
            "bias length {} for {oc} output channels",
            bias.len()
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidDimension {
            what: "stride",
            value: 0,
            allowed: ">= 1",
        });
    }
    let (h, w) = (x.height(), x.width());
    let ho = conv_out_dim(h, kh, stride, padding)?;
    let wo = conv_out_dim(w, kw, stride, padding)?;

    let mut out = Tensor3::zeros(oc, ho, wo)?;
    let kdata = kernel.data();
    let run_channel = |o: usize, plane: &mut [f32]| {
        if !bias.is_empty() {
            plane.fill(bias[o]);
        }
        for c in 0..ic {
            let in_plane = x.channel(c);
            for ky in 0..kh {
                for kx in 0..kw {
                    let wgt = kdata[((o * ic + c) * kh + ky) * kw + kx];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut plane[oy * wo..(oy + 1) * wo];
                        for (ox, out_v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            *out_v += wgt * in_row[ix as usize];
                        }
                    }
                }
            }
        }
    };

    let plane = ho * wo;
    #[cfg(feature = "parallel")]
    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(o, p)| run_channel(o, p));
    #[cfg(not(feature = "parallel"))]
    for (o, p) in out.data_mut().chunks_mut(plane).enumerate() {
        run_channel(o, p);
    }
    Ok(out)
}

/// Per-channel normalization over the spatial extent:
/// `(x - mean)/sqrt(var + eps) · gain + bias`. Statistics accumulate in f64.
pub fn instance_norm(x: &Tensor3, gain: &[f32], bias: &[f32], eps: f32) -> Result<Tensor3> {
    if gain.len() != x.channels() || bias.len() != x.channels() {
        return Err(Error::ShapeMismatch(format!(
            "instance norm gain/bias length {}/{} for {} channels",
            gain.len(),
            bias.len(),
            x.channels()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidValue(format!(
            "instance norm eps must be > 0, got {eps}"
        )));
    }
    let mut out = x.clone();
    let plane = x.height() * x.width();
    for c in 0..x.channels() {
        let src = x.channel(c);
        let n = plane as f64;
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = src
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let inv = (1.0 / (var + eps as f64).sqrt()) as f32;
        let mean = mean as f32;
        let (g, b) = (gain[c], bias[c]);
        for v in &mut out.data_mut()[c * plane..(c + 1) * plane] {
            *v = (*v - mean) * inv * g + b;
        }
    }
    Ok(out)
}

pub fn relu_inplace(x: &mut Tensor3) {
    for v in x.data_mut() {
        *v = v.max(0.0);
    }
}

/// conv3×3 → instance_norm → ReLU → conv3×3 → instance_norm, added back to
/// the input. Parameter names under the scope: `conv0.weight/bias`,
/// `norm0.gain/bias`, `conv1.weight/bias`, `norm1.gain/bias`.
pub fn residual_block(x: &Tensor3, params: &ScopedParams) -> Result<Tensor3> {
    let mut y = conv2d(
        x,
        params.require("conv0.weight")?,
        params.require("conv0.bias")?.data(),
        1,
        1,
    )?;
    y = instance_norm(
        &y,
        params.require("norm0.gain")?.data(),
        params.require("norm0.bias")?.data(),
        1e-5,
    )?;
    relu_inplace(&mut y);
    y = conv2d(
        &y,
        params.require("conv1.weight")?,
        params.require("conv1.bias")?.data(),
        1,
        1,
    )?;
    y = instance_norm(
        &y,
        params.require("norm1.gain")?.data(),
        params.require("norm1.bias")?.data(),
        1e-5,
    )?;
    if y.channels() != x.channels() || y.height() != x.height() || y.width() != x.width() {
        return Err(Error::ShapeMismatch(
            "residual block must preserve shape (3x3 kernels, stride 1)".into(),
        ));
    }
    for (o, i) in y.data_mut().iter_mut().zip(x.data()) {
        *o += i;
    }
    Ok(y)
}

/// Per-channel spatial maximum.
pub fn max_pool_global(x: &Tensor3) -> Vec<f32> {
    (0..x.channels())
        .map(|c| {
            x.channel(c)
                .iter()
                .copied()
                .fold(f32::NEG_INFINITY, f32::max)
        })
        .collect()
}

/// Numerically stabilized softmax: positive entries summing to 1, invariant
/// to adding a constant to all inputs.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn require_matrix<'a>(params: &ScopedParams<'a>, name: &str, cols: usize) -> Result<&'a Tensor> {
    let t = params.require(name)?;
    if t.rank() != 2 || t.dims()[1] != cols {
        return Err(Error::ShapeMismatch(format!(
            "`{name}` must be [d, {cols}], got {:?}",
            t.dims()
        )));
    }
    Ok(t)
}

fn affine(w: &Tensor, b: &[f32], x: &[f32]) -> Vec<f32> {
    let (rows, cols) = (w.dims()[0], w.dims()[1]);
    let mut out = vec![0.0f32; rows];
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w.data()[r * cols..(r + 1) * cols];
        let mut acc = 0.0f32;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o = acc + if b.is_empty() { 0.0 } else { b[r] };
    }
    out
}

/// Cross-attention with content features as queries and style features as
/// keys/values. Projections live under the scope as `q.weight/bias`,
/// `k.weight/bias`, `v.weight/bias` (`[d, channels]` matrices). Spatial
/// dims flatten to sequences; each query row softmax-normalizes over style
/// positions; the output is A·V reshaped to the query map's spatial dims.
pub fn cross_attention(
    q_feat: &Tensor3,
    kv_feat: &Tensor3,
    proj: &ScopedParams,
) -> Result<Tensor3> {
    let wq = require_matrix(proj, "q.weight", q_feat.channels())?;
    let wk = require_matrix(proj, "k.weight", kv_feat.channels())?;
    let wv = require_matrix(proj, "v.weight", kv_feat.channels())?;
    let d = wq.dims()[0];
    if wk.dims()[0] != d {
        return Err(Error::ShapeMismatch(format!(
            "q/k projection dims disagree: {d} vs {}",
            wk.dims()[0]
        )));
    }
    let dv = wv.dims()[0];
    let bq = proj.get("q.bias").map(|t| t.data()).unwrap_or(&[]);
    let bk = proj.get("k.bias").map(|t| t.data()).unwrap_or(&[]);
    let bv = proj.get("v.bias").map(|t| t.data()).unwrap_or(&[]);

    let (keys, values) = project_kv(kv_feat, wk, bk, wv, bv);
    let n_kv = kv_feat.height() * kv_feat.width();
    let n_q = q_feat.height() * q_feat.width();
    let scale = 1.0 / (d as f64).sqrt();

    let mut out = Tensor3::zeros(dv, q_feat.height(), q_feat.width())?;
    let compute_query = |i: usize| -> Vec<f32> {
        let xq = gather_position(q_feat, i);
        let q = affine(wq, bq, &xq);
        let mut scores = Vec::with_capacity(n_kv);
        for j in 0..n_kv {
            let k = &keys[j * d..(j + 1) * d];
            let dot: f32 = q.iter().zip(k).map(|(a, b)| a * b).sum();
            scores.push(dot as f64 * scale);
        }
        let attn = softmax(&scores);
        let mut acc = vec![0.0f64; dv];
        for (j, &a) in attn.iter().enumerate() {
            let v = &values[j * dv..(j + 1) * dv];
            for (o, &vv) in acc.iter_mut().zip(v) {
                *o += a * vv as f64;
            }
        }
        acc.into_iter().map(|v| v as f32).collect()
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Vec<f32>> = (0..n_q).into_par_iter().map(compute_query).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Vec<f32>> = (0..n_q).map(compute_query).collect();

    for (i, r) in results.into_iter().enumerate() {
        for (c, v) in r.into_iter().enumerate() {
            out.data_mut()[c * n_q + i] = v;
        }
    }
    Ok(out)
}

/// Diagnostic companion to [`cross_attention`]: the dense attention matrix,
/// row-major `[n_q × n_kv]`. Row i is query position i's distribution over
/// style positions (each row sums to 1).
pub fn attention_matrix(
    q_feat: &Tensor3,
    kv_feat: &Tensor3,
    proj: &ScopedParams,
) -> Result<Vec<f64>> {
    let wq = require_matrix(proj, "q.weight", q_feat.channels())?;
    let wk = require_matrix(proj, "k.weight", kv_feat.channels())?;
    let d = wq.dims()[0];
    if wk.dims()[0] != d {
        return Err(Error::ShapeMismatch(format!(
            "q/k projection dims disagree: {d} vs {}",
            wk.dims()[0]
        )));
    }
    let bq = proj.get("q.bias").map(|t| t.data()).unwrap_or(&[]);
    let bk = proj.get("k.bias").map(|t| t.data()).unwrap_or(&[]);
    let n_kv = kv_feat.height() * kv_feat.width();
    let n_q = q_feat.height() * q_feat.width();
    let scale = 1.0 / (d as f64).sqrt();

    let mut keys = vec![0.0f32; n_kv * d];
    for j in 0..n_kv {
        let xk = gather_position(kv_feat, j);
        keys[j * d..(j + 1) * d].copy_from_slice(&affine(wk, bk, &xk));
    }
    let mut rows = Vec::with_capacity(n_q * n_kv);
    for i in 0..n_q {
        let xq = gather_position(q_feat, i);
        let q = affine(wq, bq, &xq);
        let scores: Vec<f64> = (0..n_kv)
            .map(|j| {
                let k = &keys[j * d..(j + 1) * d];
                q.iter().zip(k).map(|(a, b)| (a * b) as f64).sum::<f64>() * scale
            })
            .collect();
        rows.extend(softmax(&scores));
    }
    Ok(rows)
}

fn gather_position(t: &Tensor3, i: usize) -> Vec<f32> {
    let plane = t.height() * t.width();
    (0..t.channels()).map(|c| t.data()[c * plane + i]).collect()
}

fn project_kv(
    kv: &Tensor3,
    wk: &Tensor,
    bk: &[f32],
    wv: &Tensor,
    bv: &[f32],
) -> (Vec<f32>, Vec<f32>) {
    let n = kv.height() * kv.width();
    let d = wk.dims()[0];
    let dv = wv.dims()[0];
    let mut keys = vec![0.0f32; n * d];
    let mut values = vec![0.0f32; n * dv];
    for j in 0..n {
        let x = gather_position(kv, j);
        keys[j * d..(j + 1) * d].copy_from_slice(&affine(wk, bk, &x));
        values[j * dv..(j + 1) * dv].copy_from_slice(&affine(wv, bv, &x));
    }
    (keys, values)
}

/// General bilinear resize, align-corners-false.
pub fn resize_bilinear(x: &Tensor3, oh: usize, ow: usize) -> Result<Tensor3> {
    if oh == 0 || ow == 0 {
        return Err(Error::InvalidDimension {
            what: "resize target",
            value: 0,
            allowed: ">= 1",
        });
    }
    let (h, w) = (x.height(), x.width());
    let mut out = Tensor3::zeros(x.channels(), oh, ow)?;
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    for c in 0..x.channels() {
        let src = x.channel(c);
        let dst_plane = oh * ow;
        let dst = &mut out.data_mut()[c * dst_plane..(c + 1) * dst_plane];
        for oy in 0..oh {
            let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
            let y0 = fy as usize;
            let y1 = (y0 + 1).min(h - 1);
            let ty = fy - y0 as f32;
            for ox in 0..ow {
                let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
                let x0 = fx as usize;
                let x1 = (x0 + 1).min(w - 1);
                let tx = fx - x0 as f32;
                let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
                let bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
                dst[oy * ow + ox] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    Ok(out)
}

/// Bilinear upsampling by an integer factor (align-corners-false).
pub fn upsample_bilinear(x: &Tensor3, factor: usize) -> Result<Tensor3> {
    if factor == 0 {
        return Err(Error::InvalidDimension {
            what: "upsample factor",
            value: 0,
            allowed: ">= 1",
        });
    }
    resize_bilinear(x, x.height() * factor, x.width() * factor)
}

/// Sequence of affine layers named `fc0`, `fc1`, … under the scope, with
/// ReLU between layers and a linear final layer (softmax is the caller's).
pub fn mlp_forward(v: &[f32], layers: &ScopedParams) -> Result<Vec<f32>> {
    let mut mats = Vec::new();
    let mut i = 0;
    while let Some(w) = layers.get(&format!("fc{i}.weight")) {
        if w.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "fc{i}.weight must be rank 2, got {:?}",
                w.dims()
            )));
        }
        let b = layers.get(&format!("fc{i}.bias")).map(|t| t.data());
        mats.push((w, b.unwrap_or(&[])));
        i += 1;
    }
    if mats.is_empty() {
        return Err(Error::MissingParameter(
            "mlp needs at least fc0.weight".into(),
        ));
    }
    let mut x = v.to_vec();
    let last = mats.len() - 1;
    for (li, (w, b)) in mats.into_iter().enumerate() {
        if w.dims()[1] != x.len() {
            return Err(Error::ShapeMismatch(format!(
                "fc{li} expects input {}, got {}",
                w.dims()[1],
                x.len()
            )));
        }
        x = affine(w, b, &x);
        if li != last {
            for v in &mut x {
                *v = v.max(0.0);
            }
        }
    }
    Ok(x)
}
