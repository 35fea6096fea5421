//! Context-adaptive 4D LUT engine for photorealistic color transformation.
//!
//! A 4D LUT extends the classic 3D color lattice with a context axis: a
//! per-pixel context map selects (and blends between) transformation slices,
//! so pixels with the same color can be graded differently by region. The
//! crate covers the full pipeline:
//!
//! - lattice types, identity construction, weighted fusion of a basis LUT
//!   bank, and trilinear/quadrilinear application ([`lut`])
//! - deterministic forward-pass tensor primitives shared by the weight and
//!   context generators ([`nn`])
//! - style-driven fusion weights and cross-attention context maps
//!   ([`style`], [`context`])
//! - differentiable fitting of LUT parameters with analytic gradients
//!   ([`fit`])
//! - image quality metrics ([`metrics`])
//! - bit-exact file formats: PPM/PGM images, `.cube` LUTs, binary 4D LUTs
//!   and weight archives ([`io`])
//!
//! Pixel loops are data-parallel with rayon when the default `parallel`
//! feature is enabled; without it the same kernels run sequentially. Outputs
//! are bit-identical either way.



mod error;

pub mod image;
pub mod io;
pub mod lut;

pub mod nn;
pub mod parallel;


pub use error::{Error, Result};
pub use image::{ColorSpace, ContextMap, ImageBuffer};
pub use lut::{BasisLutBank, Lut3D, Lut4D, StyleWeights, MAX_LATTICE_SIZE};
