#![allow(dead_code)]

use faqsim::dataset::SyntheticSpec;
use faqsim::nn::{train_fixture, Architecture, TrainConfig};
use faqsim::{Dataset, Model, QuantSpec};

/// Seeded 10-class 1×8×8 image clusters; test set shares the prototypes.
pub fn image_spec() -> SyntheticSpec {
    SyntheticSpec {
        classes: 10,
        samples_per_class: 100,
        shape: vec![1, 8, 8],
        noise: 0.3,
        seed: 7,
        sample_seed: None,
    }
}

pub fn vector_spec() -> SyntheticSpec {
    SyntheticSpec {
        classes: 10,
        samples_per_class: 100,
        shape: vec![16],
        noise: 0.3,
        seed: 7,
        sample_seed: None,
    }
}

pub const TEST_SAMPLE_SEED: u64 = 1234;

pub struct Fixture {
    pub model: Model,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn cnn_fixture() -> Fixture {
    let spec = image_spec();
    let train: Dataset = spec.generate().unwrap();
    let test: Dataset = spec.with_sample_seed(TEST_SAMPLE_SEED).generate().unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        learning_rate: 0.05,
        batch_size: 16,
        seed: 1,
        quant: QuantSpec::default(),
    };
    let model = train_fixture(&train, &"smallcnn".parse::<Architecture>().unwrap(), &cfg).unwrap();
    Fixture { model, train, test }
}

pub fn mlp_fixture() -> Fixture {
    let spec = vector_spec();
    let train: Dataset = spec.generate().unwrap();
    let test: Dataset = spec.with_sample_seed(TEST_SAMPLE_SEED).generate().unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 0.05,
        batch_size: 16,
        seed: 1,
        quant: QuantSpec::default(),
    };
    let model = train_fixture(&train, &"mlp2".parse::<Architecture>().unwrap(), &cfg).unwrap();
    Fixture { model, train, test }
}
