#![allow(dead_code)]

pub mod netcheck;

use cxrage::network::{NamedTensor, NetworkSpec, Stem};
use cxrage::{Network, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small random architecture with at most `max_params` parameters.
pub fn random_spec(rng: &mut ChaCha8Rng, max_params: usize) -> NetworkSpec {
    loop {
        let blocks = rng.random_range(1..=3usize);
        let imagenet = rng.random_bool(0.25);
        let base = if imagenet { 8 } else { 2 };
        let size = base << (blocks - 1);
        let spec = NetworkSpec {
            input_size: (size, size + if imagenet { 0 } else { 1 << (blocks - 1) }),
            input_channels: rng.random_range(1..=2),
            initial_channels: rng.random_range(2..=6),
            growth_rate: rng.random_range(2..=4),
            block_layers: (0..blocks).map(|_| rng.random_range(1..=3)).collect(),
            compression: if rng.random_bool(0.5) { 0.5 } else { 1.0 },
            bottleneck: rng.random_bool(0.5),
            stem: if imagenet { Stem::Imagenet } else { Stem::Compact },
            seed: rng.random(),
        };
        let Ok(shapes) = spec.parameter_shapes() else { continue };
        let n: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if n <= max_params {
            return spec;
        }
    }
}

/// Replaces the zero biases of a freshly built network with values drawn
/// uniformly from [-scale, scale]; weights keep their Kaiming init.
pub fn randomize_biases<T: Real>(net: Network<T>, rng: &mut ChaCha8Rng, scale: f64) -> Network<T> {
    let spec = net.spec().clone();
    let params = net
        .into_parameters()
        .into_iter()
        .map(|p| {
            if p.name.ends_with(".bias") {
                NamedTensor {
                    tensor: random_tensor(rng, p.tensor.shape(), scale),
                    name: p.name,
                }
            } else {
                p
            }
        })
        .collect();
    Network::from_parameters(spec, params).unwrap()
}

pub fn random_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-scale..=scale)))
        .collect();
    Tensor::new(shape, data).unwrap()
}

pub fn uniform_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::from_f64_lossy(rng.random())).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
