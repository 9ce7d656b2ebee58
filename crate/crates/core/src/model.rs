//! Layer topology and the quantized model container.

use serde::{Deserialize, Serialize};

use crate::error::{FaqError, Result};
use crate::numfmt::{max_code, min_code, Code, QuantSpec, ScaleFactor};
use crate::scalar::Scalar;

/// Kind and hyperparameters of one layer.
///
/// Conv weights are stored `[out_channels][in_channels][kh][kw]` row-major,
/// FC weights `[out_features][in_features]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    },
    Fc {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    #[serde(rename = "maxpool2x2")]
    MaxPool2x2,
    Flatten,
}

impl LayerSpec {
    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Fc { .. })
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(vec![out_channels, in_channels, kernel.0, kernel.1]),
            LayerSpec::Fc {
                in_features,
                out_features,
            } => Some(vec![out_features, in_features]),
            _ => None,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().map_or(0, |s| s.iter().product())
    }

    /// Number of bias entries (one per output channel / feature).
    pub fn bias_len(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { out_channels, .. } => out_channels,
            LayerSpec::Fc { out_features, .. } => out_features,
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = input else {
                    return Err(FaqError::Shape(format!("conv2d expects CxHxW input, got {input:?}")));
                };
                if *c != in_channels {
                    return Err(FaqError::Shape(format!(
                        "conv2d expects {in_channels} channels, got {c}"
                    )));
                }
                if stride == 0 {
                    return Err(FaqError::Config("conv2d stride must be positive".into()));
                }
                let oh = conv_out(*h, kernel.0, stride, padding)?;
                let ow = conv_out(*w, kernel.1, stride, padding)?;
                Ok(vec![out_channels, oh, ow])
            }
            LayerSpec::Fc {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(FaqError::Shape(format!(
                        "fc expects [{in_features}] input, got {input:?}"
                    )));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool2x2 => {
                let [c, h, w] = input else {
                    return Err(FaqError::Shape(format!("maxpool expects CxHxW input, got {input:?}")));
                };
                if *h < 2 || *w < 2 {
                    return Err(FaqError::Shape(format!("maxpool input {h}x{w} too small")));
                }
                Ok(vec![*c, h / 2, w / 2])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// `floor((size + 2·padding − kernel) / stride) + 1`.
pub fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = size + 2 * padding;
    if padded < kernel {
        return Err(FaqError::Shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Quantized weights of one conv/FC layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor<T> {
    pub codes: Vec<Code>,
    pub scale: ScaleFactor<T>,
    /// Kept in real form; biases are not stored in the weight buffer.
    pub bias: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub weights: Option<WeightTensor<T>>,
}

/// Feed-forward network of quantized layers.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel<T> {
    pub quant: QuantSpec,
    /// Per-sample input shape, e.g. `[C, H, W]` or `[D]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer<T>>,
    /// Per-tensor activation scales: entry 0 for the network input, entry
    /// `i + 1` for the output of layer `i`. Empty until calibrated.
    pub activation_scales: Vec<ScaleFactor<T>>,
    /// Fault-free accuracy recorded when the model was produced, if any.
    pub baseline_accuracy: Option<f64>,
}

impl<T: Scalar> QuantizedModel<T> {
    pub fn bitwidth(&self) -> u32 {
        self.quant.bitwidth
    }

    /// Per-sample shape after every layer; the last entry is the logits shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.spec.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn classes(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        match shapes.last().map(Vec::as_slice) {
            Some([n]) => Ok(*n),
            other => Err(FaqError::Shape(format!("model output {other:?} is not a vector"))),
        }
    }

    /// Indices (into `layers`) of conv/FC layers, in order.
    pub fn weighted_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.spec.is_weighted())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.weight_count()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        crate::numfmt::check_bitwidth(self.quant.bitwidth)?;
        let lo = min_code(self.quant.bitwidth) as Code;
        let hi = max_code(self.quant.bitwidth) as Code;
        self.shapes()?;
        for (i, layer) in self.layers.iter().enumerate() {
            match (&layer.weights, layer.spec.is_weighted()) {
                (Some(w), true) => {
                    if w.codes.len() != layer.spec.weight_count() {
                        return Err(FaqError::Shape(format!(
                            "layer {i} holds {} codes, expected {}",
                            w.codes.len(),
                            layer.spec.weight_count()
                        )));
                    }
                    if let Some(&c) = w.codes.iter().find(|&&c| c < lo || c > hi) {
                        return Err(FaqError::Validation(format!(
                            "layer {i} code {c} outside {lo}..={hi}"
                        )));
                    }
                    if !(w.scale.scale > T::zero()) || !w.scale.scale.is_finite() {
                        return Err(FaqError::Validation(format!(
                            "layer {i} scale {} is not positive and finite",
                            w.scale.scale
                        )));
                    }
                    if let Some(b) = &w.bias {
                        if b.len() != layer.spec.bias_len() {
                            return Err(FaqError::Shape(format!(
                                "layer {i} bias has {} entries, expected {}",
                                b.len(),
                                layer.spec.bias_len()
                            )));
                        }
                        if b.iter().any(|x| !x.is_finite()) {
                            return Err(FaqError::Validation(format!("layer {i} bias not finite")));
                        }
                    }
                }
                (None, false) => {}
                (Some(_), false) => {
                    return Err(FaqError::Validation(format!("layer {i} has weights but no parameters")));
                }
                (None, true) => {
                    return Err(FaqError::Validation(format!("layer {i} is missing its weights")));
                }
            }
        }
        for s in &self.activation_scales {
            if !(s.scale > T::zero()) || !s.scale.is_finite() {
                return Err(FaqError::Validation(format!(
                    "activation scale {} of {} invalid",
                    s.scale, s.tensor_id
                )));
            }
        }
        if !self.activation_scales.is_empty() && self.activation_scales.len() != self.layers.len() + 1 {
            return Err(FaqError::Shape(format!(
                "{} activation scales for {} layers",
                self.activation_scales.len(),
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Same topology and scales, codes replaced layer by layer.
    pub(crate) fn with_codes(&self, mut codes: Vec<Option<Vec<Code>>>) -> Self {
        let mut out = self.clone();
        for (layer, new) in out.layers.iter_mut().zip(codes.iter_mut()) {
            if let (Some(w), Some(c)) = (layer.weights.as_mut(), new.take()) {
                w.codes = c;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_shape_formula() {
        for (h, k, s, p) in [(8, 3, 1, 1), (8, 3, 2, 0), (7, 2, 2, 1), (5, 5, 1, 0), (28, 5, 3, 2)] {
            let spec = LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 4,
                kernel: (k, k),
                stride: s,
                padding: p,
            };
            let out = spec.output_shape(&[2, h, h]).unwrap();
            assert_eq!(out, vec![4, (h + 2 * p - k) / s + 1, (h + 2 * p - k) / s + 1]);
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let fc = LayerSpec::Fc {
            in_features: 4,
            out_features: 2,
        };
        assert!(matches!(fc.output_shape(&[3]), Err(FaqError::Shape(_))));
        assert!(LayerSpec::MaxPool2x2.output_shape(&[4]).is_err());
    }

    #[test]
    fn manifest_tags() {
        let json = serde_json::to_string(&LayerSpec::MaxPool2x2).unwrap();
        assert_eq!(json, r#"{"kind":"maxpool2x2"}"#);
        let back: LayerSpec = serde_json::from_str(r#"{"kind":"fc","in_features":3,"out_features":2}"#).unwrap();
        assert_eq!(back.weight_shape(), Some(vec![2, 3]));
    }
}
