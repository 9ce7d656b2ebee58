//! Fixture training and fault-aware retraining with plain minibatch SGD.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::network::{softmax_cross_entropy, Network, Params};
use super::evaluate;
use crate::dataset::Dataset;
use crate::error::{FaqError, Result};
use crate::faq::{faq_convert, inject};
use crate::lut::LookupTable;
use crate::mapper::ErrorMask;
use crate::model::{Layer, LayerSpec, QuantizedModel, WeightTensor};
use crate::numfmt::{compute_scale, quantize, QuantSpec};
use crate::scalar::Scalar;

const MAX_FIXTURE_PARAMS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Architecture {
    /// Two hidden FC layers with ReLU.
    Mlp2 { hidden: usize },
    /// conv3x3(pad 1) → relu → maxpool → flatten → fc → relu → fc.
    SmallCnn { filters: usize, hidden: usize },
}

impl FromStr for Architecture {
    type Err = FaqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp2" => Ok(Architecture::Mlp2 { hidden: 32 }),
            "smallcnn" => Ok(Architecture::SmallCnn {
                filters: 8,
                hidden: 32,
            }),
            other => Err(FaqError::Kind(format!(
                "unknown architecture '{other}' (expected mlp2 or smallcnn)"
            ))),
        }
    }
}

impl Architecture {
    pub fn layers(&self, input_shape: &[usize], classes: usize) -> Result<Vec<LayerSpec>> {
        let mut layers = Vec::new();
        match *self {
            Architecture::Mlp2 { hidden } => {
                let d: usize = input_shape.iter().product();
                if input_shape.len() > 1 {
                    layers.push(LayerSpec::Flatten);
                }
                layers.extend([
                    LayerSpec::Fc {
                        in_features: d,
                        out_features: hidden,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Fc {
                        in_features: hidden,
                        out_features: hidden,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Fc {
                        in_features: hidden,
                        out_features: classes,
                    },
                ]);
            }
            Architecture::SmallCnn { filters, hidden } => {
                let [c, h, w] = input_shape else {
                    return Err(FaqError::Kind(format!(
                        "smallcnn needs CxHxW inputs, got {input_shape:?}"
                    )));
                };
                layers.extend([
                    LayerSpec::Conv2d {
                        in_channels: *c,
                        out_channels: filters,
                        kernel: (3, 3),
                        stride: 1,
                        padding: 1,
                    },
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2x2,
                    LayerSpec::Flatten,
                    LayerSpec::Fc {
                        in_features: filters * (h / 2) * (w / 2),
                        out_features: hidden,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Fc {
                        in_features: hidden,
                        out_features: classes,
                    },
                ]);
            }
        }
        let params: usize = layers.iter().map(|l| l.weight_count() + l.bias_len()).sum();
        if params > MAX_FIXTURE_PARAMS {
            return Err(FaqError::Kind(format!(
                "{params} parameters exceed the fixture limit of {MAX_FIXTURE_PARAMS}"
            )));
        }
        Ok(layers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub quant: QuantSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 0,
            quant: QuantSpec::default(),
        }
    }
}

/// He-normal weights, zero biases.
pub fn init_network<T: Scalar>(
    arch: &Architecture,
    input_shape: &[usize],
    classes: usize,
    seed: u64,
) -> Result<Network<T>> {
    let layers = arch.layers(input_shape, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = layers
        .iter()
        .map(|spec| {
            spec.weight_shape().map(|shape| {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let n: usize = shape.iter().product();
                Params {
                    weights: (0..n).map(|_| T::of(normal.sample(&mut rng))).collect(),
                    bias: vec![T::zero(); spec.bias_len()],
                }
            })
        })
        .collect();
    let net = Network {
        input_shape: input_shape.to_vec(),
        layers,
        params,
    };
    net.shapes()?;
    Ok(net)
}

/// Gradient of the mean minibatch loss evaluated on `grad_net`, applied to
/// `target`'s parameters.
fn sgd_step<T: Scalar>(
    target: &mut Network<T>,
    grad_net: &Network<T>,
    shapes: &[Vec<usize>],
    data: &Dataset<T>,
    batch: &[usize],
    lr: T,
) {
    let mut grads = grad_net.zero_grads();
    for &i in batch {
        let cache = grad_net.forward_cached(data.inputs.sample(i), shapes);
        let (_, dlogits) = softmax_cross_entropy(cache.activations.last().unwrap(), data.labels[i]);
        grad_net.backward(&cache, dlogits, &mut grads);
    }
    let step = lr / T::of(batch.len() as f64);
    for (p, g) in target.params.iter_mut().zip(&grads) {
        if let (Some(p), Some(g)) = (p.as_mut(), g.as_ref()) {
            for (w, &d) in p.weights.iter_mut().zip(&g.weights) {
                *w -= step * d;
            }
            for (b, &d) in p.bias.iter_mut().zip(&g.bias) {
                *b -= step * d;
            }
        }
    }
}

fn check_dataset<T: Scalar>(data: &Dataset<T>, net: &Network<T>) -> Result<()> {
    if data.is_empty() {
        return Err(FaqError::Input("training set is empty".into()));
    }
    net.check_input(data.sample_shape())
}

/// Train a real-valued network from scratch.
pub fn train_network<T: Scalar>(
    data: &Dataset<T>,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<Network<T>> {
    let mut net = init_network(arch, data.sample_shape(), data.classes, cfg.seed)?;
    check_dataset(data, &net)?;
    let shapes = net.shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let lr = T::of(cfg.learning_rate);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let snapshot = net.clone();
            sgd_step(&mut net, &snapshot, &shapes, data, batch, lr);
        }
    }
    Ok(net)
}

/// Quantize every weight tensor with its own max-abs scale.
pub fn quantize_network<T: Scalar>(net: &Network<T>, quant: &QuantSpec) -> Result<QuantizedModel<T>> {
    let layers = net
        .layers
        .iter()
        .zip(&net.params)
        .enumerate()
        .map(|(i, (spec, p))| {
            let weights = match p {
                Some(p) => {
                    let scale = compute_scale(&p.weights, quant, format!("layer{i}.weight"))?;
                    Some(WeightTensor {
                        codes: quantize(&p.weights, &scale, quant),
                        scale,
                        bias: Some(p.bias.clone()),
                    })
                }
                None => None,
            };
            Ok(Layer {
                spec: spec.clone(),
                weights,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = QuantizedModel {
        quant: *quant,
        input_shape: net.input_shape.clone(),
        layers,
        activation_scales: Vec::new(),
        baseline_accuracy: None,
    };
    model.validate()?;
    Ok(model)
}

/// Train, quantize, and record the quantized model's training-set accuracy.
pub fn train_fixture<T: Scalar>(
    data: &Dataset<T>,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<QuantizedModel<T>> {
    let net = train_network(data, arch, cfg)?;
    let mut model = quantize_network(&net, &cfg.quant)?;
    model.baseline_accuracy = Some(evaluate(&model, data)?);
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub use_faq: bool,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig {
            epochs: 5,
            learning_rate: 0.02,
            batch_size: 16,
            seed: 0,
            use_faq: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainOutcome<T> {
    /// Codes as they would be written to the buffer (FAQ-projected when enabled).
    pub model: QuantizedModel<T>,
    /// Accuracy on the evaluation set of the model read through the faults,
    /// before training and after each epoch (`epochs + 1` entries).
    pub trace: Vec<f64>,
}

struct Deployer<'a, T> {
    base: &'a QuantizedModel<T>,
    mask: &'a ErrorMask,
    lut: &'a LookupTable,
    use_faq: bool,
}

impl<T: Scalar> Deployer<'_, T> {
    /// Codes to store for real weights `net`, with the original scales.
    fn stored(&self, net: &Network<T>) -> Result<QuantizedModel<T>> {
        let mut model = self.base.clone();
        for (layer, p) in model.layers.iter_mut().zip(&net.params) {
            if let (Some(w), Some(p)) = (layer.weights.as_mut(), p) {
                w.codes = quantize(&p.weights, &w.scale, &self.base.quant);
                w.bias = Some(p.bias.clone());
            }
        }
        if self.use_faq {
            faq_convert(&model, self.mask, self.lut)
        } else {
            Ok(model)
        }
    }

    fn read(&self, net: &Network<T>) -> Result<(QuantizedModel<T>, QuantizedModel<T>)> {
        let stored = self.stored(net)?;
        let read = inject(&stored, self.mask)?;
        Ok((stored, read))
    }
}

/// Fault-aware retraining with a straight-through update.
///
/// Before every minibatch the real weights are quantized with the model's
/// fixed scales, optionally projected with FAQ, and read through the fault
/// mask; the gradient taken on those faulty weights updates the real
/// weights.
pub fn retrain_with_faq<T: Scalar>(
    model: &QuantizedModel<T>,
    mask: &ErrorMask,
    lut: &LookupTable,
    train: &Dataset<T>,
    eval: &Dataset<T>,
    cfg: &RetrainConfig,
) -> Result<RetrainOutcome<T>> {
    model.validate()?;
    mask.check_against(model)?;
    let deployer = Deployer {
        base: model,
        mask,
        lut,
        use_faq: cfg.use_faq,
    };
    let mut real = Network::from_model(model);
    check_dataset(train, &real)?;
    let shapes = real.shapes()?;
    let (mut stored, read) = deployer.read(&real)?;
    let mut trace = vec![evaluate(&read, eval)?];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let lr = T::of(cfg.learning_rate);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let (_, read) = deployer.read(&real)?;
            let effective = Network::from_model(&read);
            sgd_step(&mut real, &effective, &shapes, train, batch, lr);
        }
        let (s, read) = deployer.read(&real)?;
        trace.push(evaluate(&read, eval)?);
        stored = s;
    }
    Ok(RetrainOutcome {
        model: stored,
        trace,
    })
}
