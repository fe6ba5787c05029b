//! Multimodal wearable gesture recognition with late fusion.
//!
//! This crate holds the algorithmic core: domain types, clap-anchored stream
//! synchronisation, sliding-window segmentation, hand-written differentiable
//! kernels, the fusion network (log-likelihood-ratio and self-attention heads),
//! cross-validated training/evaluation, interpretability exports and a
//! synthetic gesture generator. It is `no_std` + `alloc`; file formats and the
//! command line live in the `gestfuse` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

extern crate alloc;

pub mod error;
pub mod interpret;
pub mod model;
pub mod nn;
pub mod sync;
pub mod synth;
pub mod train;
pub mod types;
pub mod window;

pub use error::{Error, Result};
pub use model::{FusionKind, FusionModel, FusionOutput, ModelConfig};
pub use types::{
    label_map, Annotation, Device, GestureLabel, Hand, LabeledWindow, ModalityPair, SensorStream,
    SensorType, Session, WindowSource,
};
