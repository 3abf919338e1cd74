#![allow(dead_code)]

use flexbody_core::net::{Activation, LayerStack};
use flexbody_core::sim::StateSample;
use flexbody_core::wtnpb::{Architecture, FeasibleMaskSet, ModelBundle, Normalizer, STATE_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b|` relative to the larger magnitude, floored at 1e-3.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
}

pub fn random_stack(rng: &mut ChaCha8Rng) -> LayerStack {
    let depth = rng.random_range(1..=3);
    let dims: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=6)).collect();
    let output = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Identity };
    let mut stack = LayerStack::glorot(&dims, Activation::Tanh, output, rng);
    for l in &mut stack.layers {
        for b in &mut l.bias {
            *b = rng.random_range(-0.5..=0.5);
        }
    }
    stack
}

pub fn small_architecture(rng: &mut ChaCha8Rng) -> Architecture {
    Architecture {
        encoder_hidden: vec![rng.random_range(3..=10)],
        latent_dim: rng.random_range(2..=5),
        decoder_hidden: vec![rng.random_range(3..=10)],
        pb_dim: rng.random_range(1..=3),
    }
}

pub fn random_normalizer(rng: &mut ChaCha8Rng) -> Normalizer {
    Normalizer {
        mean: core::array::from_fn(|_| rng.random_range(-200.0..=200.0)),
        std: core::array::from_fn(|_| rng.random_range(5.0..=80.0)),
    }
}

/// Untrained bundle with a single-hidden-layer encoder and decoder.
pub fn random_bundle(seed: u64) -> ModelBundle {
    let mut r = rng(seed);
    let arch = small_architecture(&mut r);
    let normalizer = random_normalizer(&mut r);
    ModelBundle::new(arch, normalizer, FeasibleMaskSet::default(), &mut r)
}

/// Sample around the normalizer mean with every modality present.
pub fn random_sample(rng: &mut ChaCha8Rng, bundle: &ModelBundle) -> StateSample {
    let v: [f64; STATE_DIM] =
        core::array::from_fn(|i| bundle.normalizer.mean[i] + bundle.normalizer.std[i] * rng.random_range(-2.0..=2.0));
    StateSample::from_vector(&v, [true; 4])
}
