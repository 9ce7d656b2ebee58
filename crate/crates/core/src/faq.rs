//! Fault-aware conversion of quantized models and faulty-read simulation.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FaqError, Result};
use crate::faultmodel::{apply_faults, FaultPattern};
use crate::lut::LookupTable;
use crate::mapper::ErrorMask;
use crate::model::QuantizedModel;
use crate::numfmt::Code;
use crate::scalar::Scalar;

/// Replace every weight code by the nearest value its cell reproduces.
///
/// Scales, biases and topology are carried over unchanged.
pub fn faq_convert<T: Scalar>(
    model: &QuantizedModel<T>,
    mask: &ErrorMask,
    lut: &LookupTable,
) -> Result<QuantizedModel<T>> {
    mask.check_against(model)?;
    if lut.bitwidth() != model.bitwidth() {
        return Err(FaqError::Config(format!(
            "lookup table is {}-bit, model is {}-bit",
            lut.bitwidth(),
            model.bitwidth()
        )));
    }
    let patterns = lut.patterns();
    let mut codes: Vec<Option<Vec<Code>>> = vec![None; model.layers.len()];
    for m in &mask.layers {
        let src = &model.layers[m.layer].weights.as_ref().expect("checked").codes;
        if let Some(&bad) = m.patterns.iter().find(|&&p| p as usize >= patterns) {
            return Err(FaqError::Index(format!("pattern index {bad} beyond table")));
        }
        let converted: Vec<Code> = src
            .par_iter()
            .zip(m.patterns.par_iter())
            .with_min_len(1 << 14)
            .map(|(&w, &p)| lut.get(p, w))
            .collect();
        codes[m.layer] = Some(converted);
    }
    Ok(model.with_codes(codes))
}

/// Codes as read back through the faulty buffer, without mitigation.
pub fn inject<T: Scalar>(model: &QuantizedModel<T>, mask: &ErrorMask) -> Result<QuantizedModel<T>> {
    mask.check_against(model)?;
    let b = model.bitwidth();
    let mut codes: Vec<Option<Vec<Code>>> = vec![None; model.layers.len()];
    for m in &mask.layers {
        let src = &model.layers[m.layer].weights.as_ref().expect("checked").codes;
        let read = src
            .par_iter()
            .zip(m.patterns.par_iter())
            .with_min_len(1 << 14)
            .map(|(&w, &p)| Ok(apply_faults(w, &FaultPattern::from_index(p, b)?)))
            .collect::<Result<Vec<Code>>>()?;
        codes[m.layer] = Some(read);
    }
    Ok(model.with_codes(codes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerError {
    pub layer: usize,
    pub weights: usize,
    pub mse: f64,
    pub max_abs: f64,
}

/// Weight-space error of `other` against `reference`, in dequantized units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightErrorMetrics {
    pub layers: Vec<LayerError>,
    pub mse: f64,
    pub max_abs: f64,
}

pub fn weight_error_metrics<T: Scalar>(
    reference: &QuantizedModel<T>,
    other: &QuantizedModel<T>,
) -> Result<WeightErrorMetrics> {
    if reference.layers.len() != other.layers.len() {
        return Err(FaqError::Config("models have different layer counts".into()));
    }
    let mut layers = Vec::new();
    let (mut total_sq, mut total_n, mut max_abs) = (0.0f64, 0usize, 0.0f64);
    for (i, (a, b)) in reference.layers.iter().zip(&other.layers).enumerate() {
        if a.spec != b.spec {
            return Err(FaqError::Config(format!("layer {i} topology differs")));
        }
        let (Some(wa), Some(wb)) = (&a.weights, &b.weights) else {
            continue;
        };
        if wa.codes.len() != wb.codes.len() || wa.scale.scale != wb.scale.scale {
            return Err(FaqError::Config(format!("layer {i} shape or scale differs")));
        }
        let scale = wa.scale.scale.to_f64_lossy();
        let (mut sq, mut mx) = (0.0f64, 0.0f64);
        for (&x, &y) in wa.codes.iter().zip(&wb.codes) {
            let d = scale * (x as f64 - y as f64);
            sq += d * d;
            mx = mx.max(d.abs());
        }
        let n = wa.codes.len();
        layers.push(LayerError {
            layer: i,
            weights: n,
            mse: if n == 0 { 0.0 } else { sq / n as f64 },
            max_abs: mx,
        });
        total_sq += sq;
        total_n += n;
        max_abs = max_abs.max(mx);
    }
    Ok(WeightErrorMetrics {
        layers,
        mse: if total_n == 0 { 0.0 } else { total_sq / total_n as f64 },
        max_abs,
    })
}
