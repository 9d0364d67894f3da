//! Texture segmentation and surface analysis for knitted fabric images.
//!
//! Grayscale I/O, edge-preserving filters, a Haar wavelet pyramid, fuzzy
//! and kernel fuzzy c-means, agreement scores, an image-based roughness
//! index and scalar fabric formulas, tied together by [`pipeline`].

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod evaluation;
pub mod fabric_metrics;
pub mod filtering;
pub mod image;
pub mod pipeline;
pub mod roughness;
pub mod wavelet;

pub use evaluation::LabelMap;
pub use image::GrayImage;
