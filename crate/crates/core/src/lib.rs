//! Fault-aware quantization (FAQ) for DNN accelerators with stuck-at faults
//! in their on-chip weight memory.
//!
//! The pipeline mirrors the evaluation flow of the `faqsim` CLI:
//!
//! 1. [`lut::build_lut`] tabulates, for every per-cell fault pattern and
//!    every representable code, the nearest code the cell reproduces.
//! 2. [`faultmodel::generate_fault_map`] draws random stuck-at faults over
//!    the weight buffer.
//! 3. [`mapper::build_error_mask`] places each weight in a buffer cell
//!    (weight-stationary, one filter per column) and records its pattern.
//! 4. [`numfmt`] quantizes weights to two's-complement codes.
//! 5. [`faq::faq_convert`] replaces each code by its table entry, so the
//!    faulty read returns exactly the stored value.
//!
//! Real-valued parts are generic over [`Scalar`] (`f32`, `f64`); the type
//! aliases below fix the scalar for the common case.

pub mod dataset;
pub mod error;
pub mod faq;
pub mod faultmodel;
pub mod harness;
pub mod io;
pub mod lut;
pub mod mapper;
pub mod model;
pub mod nn;
pub mod numfmt;
pub mod scalar;
pub mod tensor;

pub use error::{FaqError, Result};
pub use faq::{faq_convert, inject, weight_error_metrics, WeightErrorMetrics};
pub use faultmodel::{apply_faults, fault_statistics, generate_fault_map, FaultMap, FaultPattern, FaultStats};
pub use lut::{build_lut, oracle_nearest, reachable_set, LookupTable};
pub use mapper::{build_error_mask, DataflowConfig, ErrorMask};
pub use model::{Layer, LayerSpec, QuantizedModel, WeightTensor};
pub use numfmt::{Code, QuantSpec, ScaleFactor};
pub use scalar::Scalar;

/// Default real type used by the CLI.
pub type Real = f64;

pub type Model = QuantizedModel<f64>;
pub type Model32 = QuantizedModel<f32>;
pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Dataset = dataset::Dataset<f64>;
pub type Dataset32 = dataset::Dataset<f32>;
pub type Scale = ScaleFactor<f64>;
pub type Scale32 = ScaleFactor<f32>;
