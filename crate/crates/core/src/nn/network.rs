//! Real-valued network used for inference and for gradient computation.

use crate::error::{FaqError, Result};
use crate::model::{LayerSpec, QuantizedModel};
use crate::numfmt::{dequantize, quantize_value, QuantSpec, ScaleFactor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros_like(&self) -> Self {
        Params {
            weights: vec![T::zero(); self.weights.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<Option<Params<T>>>,
}

/// Per-sample activations kept by [`Network::forward_cached`]: entry `i` is
/// the input of layer `i`, the last entry the logits.
pub struct Cache<T> {
    pub activations: Vec<Vec<T>>,
    pub shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Network<T> {
    /// Dequantize every weight tensor of `model`.
    pub fn from_model(model: &QuantizedModel<T>) -> Self {
        let params = model
            .layers
            .iter()
            .map(|l| {
                l.weights.as_ref().map(|w| Params {
                    weights: dequantize(&w.codes, &w.scale),
                    bias: w
                        .bias
                        .clone()
                        .unwrap_or_else(|| vec![T::zero(); l.spec.bias_len()]),
                })
            })
            .collect();
        Network {
            input_shape: model.input_shape.clone(),
            layers: model.layers.iter().map(|l| l.spec.clone()).collect(),
            params,
        }
    }

    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for spec in &self.layers {
            let next = spec.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Logits of one sample. With `fake_quant`, the input and every layer
    /// output are rounded to the grid of their activation scale.
    pub fn forward_sample(
        &self,
        x: &[T],
        shapes: &[Vec<usize>],
        fake_quant: Option<(&[ScaleFactor<T>], &QuantSpec)>,
    ) -> Vec<T> {
        let mut cur = x.to_vec();
        if let Some((scales, q)) = fake_quant {
            round_to_grid(&mut cur, scales[0].scale, q);
        }
        for (i, spec) in self.layers.iter().enumerate() {
            cur = layer_forward(spec, self.params[i].as_ref(), &cur, &shapes[i]);
            if let Some((scales, q)) = fake_quant {
                round_to_grid(&mut cur, scales[i + 1].scale, q);
            }
        }
        cur
    }

    pub fn forward_cached(&self, x: &[T], shapes: &[Vec<usize>]) -> Cache<T> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (i, spec) in self.layers.iter().enumerate() {
            let next = layer_forward(spec, self.params[i].as_ref(), &activations[i], &shapes[i]);
            activations.push(next);
        }
        Cache {
            activations,
            shapes: shapes.to_vec(),
        }
    }

    /// Accumulate parameter gradients of one sample into `grads`, given the
    /// loss gradient with respect to the logits.
    pub fn backward(&self, cache: &Cache<T>, dlogits: Vec<T>, grads: &mut [Option<Params<T>>]) {
        let mut grad = dlogits;
        for (i, spec) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[i];
            let output = &cache.activations[i + 1];
            let in_shape = &cache.shapes[i];
            grad = layer_backward(
                spec,
                self.params[i].as_ref(),
                input,
                output,
                in_shape,
                &grad,
                grads[i].as_mut(),
                i > 0,
            );
        }
    }

    pub fn zero_grads(&self) -> Vec<Option<Params<T>>> {
        self.params.iter().map(|p| p.as_ref().map(Params::zeros_like)).collect()
    }

    pub fn check_input(&self, sample_shape: &[usize]) -> Result<()> {
        if sample_shape != self.input_shape.as_slice() {
            return Err(FaqError::Shape(format!(
                "input samples are {sample_shape:?}, network expects {:?}",
                self.input_shape
            )));
        }
        Ok(())
    }
}

fn round_to_grid<T: Scalar>(xs: &mut [T], scale: T, q: &QuantSpec) {
    for x in xs.iter_mut() {
        *x = T::of(quantize_value(*x, scale, q) as f64) * scale;
    }
}

fn layer_forward<T: Scalar>(
    spec: &LayerSpec,
    params: Option<&Params<T>>,
    x: &[T],
    in_shape: &[usize],
) -> Vec<T> {
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: (kh, kw),
            stride,
            padding,
        } => {
            let p = params.expect("conv has parameters");
            let (h, w) = (in_shape[1], in_shape[2]);
            let oh = (h + 2 * padding - kh) / stride + 1;
            let ow = (w + 2 * padding - kw) / stride + 1;
            let mut out = vec![T::zero(); out_channels * oh * ow];
            for k in 0..out_channels {
                let plane = &mut out[k * oh * ow..(k + 1) * oh * ow];
                plane.iter_mut().for_each(|v| *v = p.bias[k]);
                for c in 0..in_channels {
                    let xin = &x[c * h * w..(c + 1) * h * w];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = p.weights[((k * in_channels + c) * kh + ky) * kw + kx];
                            for oy in 0..oh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let row = &xin[iy as usize * w..(iy as usize + 1) * w];
                                for ox in 0..ow {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    plane[oy * ow + ox] += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
            out
        }
        LayerSpec::Fc {
            in_features,
            out_features,
        } => {
            let p = params.expect("fc has parameters");
            (0..out_features)
                .map(|o| {
                    let row = &p.weights[o * in_features..(o + 1) * in_features];
                    p.bias[o] + row.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>()
                })
                .collect()
        }
        LayerSpec::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
        LayerSpec::MaxPool2x2 => {
            let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let (oh, ow) = (h / 2, w / 2);
            let mut out = Vec::with_capacity(c * oh * ow);
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let base = ch * h * w;
                        let (i, j) = (2 * oy, 2 * ox);
                        let m = x[base + i * w + j]
                            .max(x[base + i * w + j + 1])
                            .max(x[base + (i + 1) * w + j])
                            .max(x[base + (i + 1) * w + j + 1]);
                        out.push(m);
                    }
                }
            }
            out
        }
        LayerSpec::Flatten => x.to_vec(),
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_backward<T: Scalar>(
    spec: &LayerSpec,
    params: Option<&Params<T>>,
    x: &[T],
    y: &[T],
    in_shape: &[usize],
    dy: &[T],
    grads: Option<&mut Params<T>>,
    need_dx: bool,
) -> Vec<T> {
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: (kh, kw),
            stride,
            padding,
        } => {
            let p = params.expect("conv has parameters");
            let g = grads.expect("conv has gradients");
            let (h, w) = (in_shape[1], in_shape[2]);
            let oh = (h + 2 * padding - kh) / stride + 1;
            let ow = (w + 2 * padding - kw) / stride + 1;
            let mut dx = if need_dx { vec![T::zero(); x.len()] } else { Vec::new() };
            for k in 0..out_channels {
                let dplane = &dy[k * oh * ow..(k + 1) * oh * ow];
                g.bias[k] += dplane.iter().copied().sum::<T>();
                for c in 0..in_channels {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let widx = ((k * in_channels + c) * kh + ky) * kw + kx;
                            let wv = p.weights[widx];
                            let mut acc = T::zero();
                            for oy in 0..oh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for ox in 0..ow {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = c * h * w + iy as usize * w + ix as usize;
                                    let d = dplane[oy * ow + ox];
                                    acc += d * x[xi];
                                    if need_dx {
                                        dx[xi] += d * wv;
                                    }
                                }
                            }
                            g.weights[widx] += acc;
                        }
                    }
                }
            }
            dx
        }
        LayerSpec::Fc {
            in_features,
            out_features,
        } => {
            let p = params.expect("fc has parameters");
            let g = grads.expect("fc has gradients");
            let mut dx = if need_dx { vec![T::zero(); in_features] } else { Vec::new() };
            for o in 0..out_features {
                let d = dy[o];
                g.bias[o] += d;
                let grow = &mut g.weights[o * in_features..(o + 1) * in_features];
                for (gw, &xi) in grow.iter_mut().zip(x) {
                    *gw += d * xi;
                }
                if need_dx {
                    let row = &p.weights[o * in_features..(o + 1) * in_features];
                    for (dxi, &wv) in dx.iter_mut().zip(row) {
                        *dxi += d * wv;
                    }
                }
            }
            dx
        }
        LayerSpec::Relu => x
            .iter()
            .zip(dy)
            .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
            .collect(),
        LayerSpec::MaxPool2x2 => {
            let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let (oh, ow) = (h / 2, w / 2);
            let mut dx = vec![T::zero(); x.len()];
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let o = ch * oh * ow + oy * ow + ox;
                        let base = ch * h * w;
                        // gradient goes to the first position holding the max
                        for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let xi = base + (2 * oy + di) * w + 2 * ox + dj;
                            if x[xi] == y[o] {
                                dx[xi] += dy[o];
                                break;
                            }
                        }
                    }
                }
            }
            dx
        }
        LayerSpec::Flatten => dy.to_vec(),
    }
}

/// Softmax cross-entropy of one sample: `(loss, dloss/dlogits)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln() + m - logits[label];
    let mut grad: Vec<T> = exps.into_iter().map(|e| e / sum).collect();
    grad[label] -= T::one();
    (loss, grad)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<T: Scalar>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}
