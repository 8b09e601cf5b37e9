mod common;

use cxrage::dataset::{generate_synthetic, split, LabeledImage, Region, SplitDataset, SyntheticSpec};
use cxrage::metrics::evaluate;
use cxrage::network::{NetworkSpec, Stem};
use cxrage::trainer::{batch_gradients, validation_metrics, Sgd, MOMENTUM};
use cxrage::{train, Error, Network, Objective, Preset, Real, Tensor, TrainConfig};
use rand::Rng;

fn small_spec(seed: u64) -> NetworkSpec {
    NetworkSpec {
        input_size: (8, 8),
        input_channels: 1,
        initial_channels: 4,
        growth_rate: 2,
        block_layers: vec![1, 1],
        compression: 0.5,
        bottleneck: false,
        stem: Stem::Compact,
        seed,
    }
}

fn synthetic_split<T: Real>(size: usize, n: usize, noise: f64, region: Region, seed: u64) -> SplitDataset<T> {
    let spec = SyntheticSpec {
        image_size: size,
        n_samples: n,
        noise_sigma: noise,
        signal_region: region,
        seed,
    };
    split(generate_synthetic::<T>(&spec).unwrap().images, 0.8, seed, false).unwrap()
}

fn small_data<T: Real>() -> SplitDataset<T> {
    synthetic_split(8, 60, 0.05, Region::new(2, 2, 6, 6), 9)
}

fn config(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        patience: max_epochs.saturating_sub(1).max(1),
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn bits(net: &Network<f64>) -> Vec<u64> {
    net.parameters()
        .iter()
        .flat_map(|p| p.tensor.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn noiseless_training_lowers_validation_loss() {
    let data = synthetic_split::<f32>(64, 200, 0.0, Region::new(24, 24, 40, 40), 11);
    let net = Network::build(Preset::DenseTiny.spec(11)).unwrap();
    let cfg = TrainConfig {
        max_epochs: 50,
        seed: 11,
        ..TrainConfig::default()
    };
    let out = train(net, &data, &cfg).unwrap();
    let last = out.history.last().unwrap();
    assert!(
        last.val_loss < out.initial_val_loss,
        "final {} vs initial {}",
        last.val_loss,
        out.initial_val_loss
    );
}

#[test]
fn same_seed_gives_bit_identical_history() {
    let data = small_data::<f32>();
    let run = || train(Network::build(small_spec(1)).unwrap(), &data, &config(4)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.epoch, y.epoch);
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.val_loss.to_bits(), y.val_loss.to_bits());
        assert_eq!(x.val_r2.to_bits(), y.val_r2.to_bits());
    }
    assert_eq!(a.best, b.best);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = small_data::<f64>();
    let net = Network::<f64>::build(small_spec(2)).unwrap();
    let before = bits(&net);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..config(3)
    };
    let out = train(net, &data, &cfg).unwrap();
    assert_eq!(bits(&out.last), before);
    assert_eq!(out.history.len(), 3);
    let first = out.history[0].val_loss;
    assert!(out.history.iter().all(|s| s.val_loss == first));
}

fn single_loss(net: &Network<f64>, item: &LabeledImage<f64>) -> f64 {
    batch_gradients(net, &[item], Objective::Mse).unwrap().unwrap().0
}

#[test]
fn small_step_decreases_single_sample_loss() {
    let mut rng = common::rng(77);
    let net = common::randomize_biases(
        Network::<f64>::build(Preset::DenseTiny.spec(77)).unwrap(),
        &mut rng,
        0.1,
    );
    let mut failures = 0;
    for i in 0..20 {
        let pixels = common::uniform_tensor::<f64>(&mut rng, &[1, 64, 64]);
        let item = LabeledImage::new(format!("s{i}"), pixels, rng.random_range(0.0..90.0), None).unwrap();
        let before = single_loss(&net, &item);
        let (_, grads) = batch_gradients(&net, &[&item], Objective::Mse).unwrap().unwrap();
        let mut stepped = net.clone();
        Sgd::new(&net, 1e-4, MOMENTUM).step(&mut stepped, &grads);
        if single_loss(&stepped, &item) >= before {
            failures += 1;
        }
    }
    assert!(failures <= 1, "{failures} of 20 samples did not improve");
}

#[test]
fn evaluation_does_not_touch_parameters() {
    let data = small_data::<f64>();
    let net = Network::<f64>::build(small_spec(4)).unwrap();
    let before = bits(&net);
    validation_metrics(&net, &data.val).unwrap();
    evaluate(&net, &data.val, cxrage::dataset::ViewSelector::Both).unwrap();
    assert_eq!(bits(&net), before);
}

#[test]
fn best_checkpoint_matches_history_minimum() {
    let data = small_data::<f32>();
    let out = train(Network::build(small_spec(5)).unwrap(), &data, &config(6)).unwrap();
    let min = out.history.iter().map(|s| s.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best.best_val_loss, min);
    let best_epoch = out.history.iter().find(|s| s.val_loss == min).unwrap().epoch;
    assert_eq!(out.best.epoch, best_epoch);
    let restored = out.best.to_network().unwrap();
    assert_eq!(validation_metrics(&restored, &data.val).unwrap().0, min);
    for s in &out.history {
        assert!(s.train_loss >= 0.0 && s.val_loss >= 0.0 && s.val_r2 <= 1.0);
    }
}

#[test]
fn r2_objective_still_records_mse() {
    let data = small_data::<f64>();
    let cfg = TrainConfig {
        objective: Objective::R2,
        ..config(3)
    };
    let out = train(Network::build(small_spec(6)).unwrap(), &data, &cfg).unwrap();
    let (mse, r2) = validation_metrics(&out.last, &data.val).unwrap();
    let last = out.history.last().unwrap();
    assert_eq!(last.val_loss, mse);
    assert_eq!(last.val_r2, r2);
}

#[test]
fn plateau_stops_training_early() {
    let data = small_data::<f64>();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        max_epochs: 20,
        patience: 2,
        ..config(20)
    };
    let out = train(Network::build(small_spec(7)).unwrap(), &data, &cfg).unwrap();
    assert_eq!(out.history.len(), 3);
}

#[test]
fn divergence_is_reported_with_history() {
    let mut data = small_data::<f32>();
    let cfg = config(3);
    let bad = Tensor::new(&[1, 8, 8], vec![f32::NAN; 64]).unwrap();
    for item in &mut data.train {
        item.pixels = bad.clone();
    }
    match train(Network::build(small_spec(8)).unwrap(), &data, &cfg) {
        Err(Error::Diverged { epoch, history }) => {
            assert_eq!(epoch, 1);
            assert!(history.is_empty());
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let data = small_data::<f32>();
    let mut empty = data.clone();
    empty.val.clear();
    assert!(train(Network::build(small_spec(9)).unwrap(), &empty, &config(3)).is_err());
    let mut constant = data.clone();
    constant.val.truncate(1);
    assert!(train(Network::build(small_spec(9)).unwrap(), &constant, &config(3)).is_err());
}
