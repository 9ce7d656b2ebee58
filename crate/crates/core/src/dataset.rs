//! Labelled sample sets and the seeded Gaussian-cluster generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FaqError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Tensor<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return Err(FaqError::Shape(format!(
                "{} samples but {} labels",
                inputs.batch(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(FaqError::Input(format!("label {l} outside 0..{classes}")));
        }
        Ok(Dataset {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.inputs.sample_shape()
    }

    /// Consecutive batches of at most `size` samples.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = (Tensor<T>, &[usize])> + '_ {
        let size = size.max(1);
        let n = self.inputs.sample_len();
        let shape = self.sample_shape().to_vec();
        (0..self.len()).step_by(size).map(move |start| {
            let end = (start + size).min(self.len());
            let mut s = vec![end - start];
            s.extend(&shape);
            let data = self.inputs.data()[start * n..end * n].to_vec();
            (Tensor::new(s, data).expect("slice matches shape"), &self.labels[start..end])
        })
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let n = self.inputs.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.inputs.sample(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend(self.sample_shape());
        Dataset {
            inputs: Tensor::new(shape, data).expect("subset shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

/// Gaussian clusters around per-class prototypes.
///
/// Prototypes are drawn uniformly from `[0, 1]` using `seed`; samples add
/// `N(0, noise²)` per element using `sample_seed` and are clipped to
/// `[0, 1]`. Labels cycle `0, 1, …, classes-1` so every prefix is balanced.
/// Two specs with the same `seed` and different `sample_seed` describe a
/// train/test pair drawn from the same distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    /// Per-sample shape, e.g. `[1, 8, 8]` or `[16]`.
    pub shape: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
    #[serde(default)]
    pub sample_seed: Option<u64>,
}

impl SyntheticSpec {
    pub fn with_sample_seed(&self, sample_seed: u64) -> Self {
        SyntheticSpec {
            sample_seed: Some(sample_seed),
            ..self.clone()
        }
    }

    pub fn generate<T: Scalar>(&self) -> Result<Dataset<T>> {
        if self.classes < 2 || self.samples_per_class == 0 || self.shape.is_empty() {
            return Err(FaqError::Input(
                "synthetic data needs ≥ 2 classes, ≥ 1 sample per class and a shape".into(),
            ));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(FaqError::Input(format!("noise {} must be ≥ 0", self.noise)));
        }
        let dim: usize = self.shape.iter().product();
        let mut proto_rng = ChaCha8Rng::seed_from_u64(self.seed);
        let prototypes: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| (0..dim).map(|_| proto_rng.random::<f64>()).collect())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.sample_seed.unwrap_or(self.seed));
        rng.set_stream(1);
        let normal = Normal::new(0.0, self.noise).map_err(|e| FaqError::Input(e.to_string()))?;
        let n = self.classes * self.samples_per_class;
        let mut data = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % self.classes;
            for &p in &prototypes[class] {
                let x: f64 = p + normal.sample(&mut rng);
                data.push(T::of(x.clamp(0.0, 1.0)));
            }
            labels.push(class);
        }
        let mut shape = vec![n];
        shape.extend(&self.shape);
        Dataset::new(Tensor::new(shape, data)?, labels, self.classes)
    }
}
