//! Small inference engine and SGD trainer for fixture-scale networks.

mod network;
mod train;

pub use network::{argmax, softmax_cross_entropy, Cache, Network, Params};
pub use train::{
    init_network, quantize_network, retrain_with_faq, train_fixture, train_network, Architecture,
    RetrainConfig, RetrainOutcome, TrainConfig,
};

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{FaqError, Result};
use crate::model::QuantizedModel;
use crate::numfmt::{compute_scale, ScaleFactor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Logits for a batch `[N, ...input_shape]`, weights dequantized on the fly.
///
/// With `fake_quant_activations` the model must carry calibrated activation
/// scales (see [`calibrate_activation_scales`]).
pub fn forward<T: Scalar>(
    model: &QuantizedModel<T>,
    input: &Tensor<T>,
    fake_quant_activations: bool,
) -> Result<Tensor<T>> {
    let net = Network::from_model(model);
    net.check_input(input.sample_shape())?;
    let shapes = net.shapes()?;
    let fq = if fake_quant_activations {
        if model.activation_scales.len() != model.layers.len() + 1 {
            return Err(FaqError::Config(
                "activation fake-quantization requested but the model is not calibrated".into(),
            ));
        }
        Some((model.activation_scales.as_slice(), &model.quant))
    } else {
        None
    };
    let out_len: usize = shapes.last().unwrap().iter().product();
    let rows: Vec<Vec<T>> = (0..input.batch())
        .into_par_iter()
        .map(|i| net.forward_sample(input.sample(i), &shapes, fq))
        .collect();
    let mut shape = vec![input.batch()];
    shape.extend(shapes.last().unwrap());
    let mut data = Vec::with_capacity(input.batch() * out_len);
    rows.into_iter().for_each(|r| data.extend(r));
    Tensor::new(shape, data)
}

/// Top-1 accuracy; logits ties resolve to the lowest class index.
pub fn evaluate<T: Scalar>(model: &QuantizedModel<T>, dataset: &Dataset<T>) -> Result<f64> {
    evaluate_with(model, dataset, false)
}

pub fn evaluate_with<T: Scalar>(
    model: &QuantizedModel<T>,
    dataset: &Dataset<T>,
    fake_quant_activations: bool,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(FaqError::Input("cannot evaluate on an empty dataset".into()));
    }
    let logits = forward(model, &dataset.inputs, fake_quant_activations)?;
    let correct = (0..dataset.len())
        .filter(|&i| argmax(logits.sample(i)) == dataset.labels[i])
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Max-abs scale of the network input and of every layer output over one
/// forward pass of `batch`.
pub fn calibrate_activation_scales<T: Scalar>(
    model: &QuantizedModel<T>,
    batch: &Tensor<T>,
) -> Result<Vec<ScaleFactor<T>>> {
    if batch.batch() == 0 {
        return Err(FaqError::Input("calibration batch is empty".into()));
    }
    let net = Network::from_model(model);
    net.check_input(batch.sample_shape())?;
    let shapes = net.shapes()?;
    let maxima = (0..batch.batch())
        .into_par_iter()
        .map(|i| {
            let cache = net.forward_cached(batch.sample(i), &shapes);
            cache
                .activations
                .iter()
                .map(|a| a.iter().fold(T::zero(), |m, x| m.max(x.abs())))
                .collect::<Vec<T>>()
        })
        .reduce(
            || vec![T::zero(); net.layers.len() + 1],
            |a, b| a.iter().zip(&b).map(|(&x, &y)| x.max(y)).collect(),
        );
    maxima
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let id = if i == 0 { "input".to_string() } else { format!("act{}", i - 1) };
            compute_scale(&[m], &model.quant, id)
        })
        .collect()
}
