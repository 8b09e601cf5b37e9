//! Whole-network gradient check against central finite differences.

use cxrage::autodiff::check::relative_error;
use cxrage::autodiff::OpKind;
use cxrage::network::NamedTensor;
use cxrage::{Graph, Network, Tensor};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Loss plus the on/off pattern of every ReLU input, which tells whether a
/// probe crossed a kink.
fn loss_and_pattern(net: &Network<f64>, batch: &Tensor<f64>, target: &Tensor<f64>) -> (f64, Vec<bool>) {
    let mut g = Graph::new();
    let x = g.leaf(batch.clone());
    let t = g.leaf(target.clone());
    let out = net.bind(&mut g, x).unwrap().output;
    let l = g.mse_loss(out, t).unwrap();
    let pattern = g
        .node_ids()
        .filter(|&id| g.kind(id) == OpKind::Relu)
        .flat_map(|id| {
            g.value(g.inputs(id)[0])
                .data()
                .iter()
                .map(|&v| v > 0.0)
                .collect::<Vec<_>>()
        })
        .collect();
    (g.value(l).data()[0], pattern)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Outcome {
    pub worst: f64,
    pub checked: usize,
    pub kinks: usize,
}

/// Central differences on every coordinate of `point`, skipping those whose
/// ±ε probes land on different sides of a ReLU kink.
fn check_tensor(
    analytic: &Tensor<f64>,
    point: &Tensor<f64>,
    eval: impl Fn(&Tensor<f64>) -> (f64, Vec<bool>),
) -> Outcome {
    let mut out = Outcome::default();
    let mut probe = point.clone();
    for i in 0..point.numel() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + EPS;
        let (up, p_up) = eval(&probe);
        probe.data_mut()[i] = x0 - EPS;
        let (down, p_down) = eval(&probe);
        probe.data_mut()[i] = x0;
        if p_up != p_down {
            out.kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * EPS);
        out.worst = out.worst.max(relative_error(analytic.data()[i], numeric));
        out.checked += 1;
    }
    out
}

/// Checks d(loss)/d(every parameter) and d(loss)/d(input).
pub fn check_network(net: &Network<f64>, batch: &Tensor<f64>, target: &Tensor<f64>) -> Outcome {
    let mut g = Graph::new();
    let x = g.leaf(batch.clone());
    let t = g.leaf(target.clone());
    let bound = net.bind(&mut g, x).unwrap();
    let l = g.mse_loss(bound.output, t).unwrap();
    let grads = g.backward(l).unwrap();

    let mut total = check_tensor(&grads.wrt(x), batch, |b| loss_and_pattern(net, b, target));
    for (i, &pid) in bound.params.iter().enumerate() {
        let o = check_tensor(&grads.wrt(pid), &net.parameters()[i].tensor, |p| {
            let mut params = net.parameters().to_vec();
            params[i] = NamedTensor {
                name: params[i].name.clone(),
                tensor: p.clone(),
            };
            loss_and_pattern(
                &Network::from_parameters(net.spec().clone(), params).unwrap(),
                batch,
                target,
            )
        });
        total.worst = total.worst.max(o.worst);
        total.checked += o.checked;
        total.kinks += o.kinks;
    }
    total
}

/// Checks `count` random networks of at most 5000 parameters, 64-bit, and
/// returns the per-network outcomes.
pub fn random_network_sweep(seed: u64, count: usize) -> Vec<(NetworkSpecSummary, Outcome)> {
    let mut rng = super::rng(seed);
    (0..count)
        .map(|_| {
            let spec = super::random_spec(&mut rng, 5000);
            let net = super::randomize_biases(Network::<f64>::build(spec.clone()).unwrap(), &mut rng, 0.1);
            let (h, w) = spec.input_size;
            let batch = super::uniform_tensor(&mut rng, &[2, spec.input_channels, h, w]);
            let target = super::uniform_tensor(&mut rng, &[2, 1]);
            let summary = NetworkSpecSummary {
                params: net.param_count(),
                spec: format!("{spec:?}"),
            };
            (summary, check_network(&net, &batch, &target))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct NetworkSpecSummary {
    pub params: usize,
    pub spec: String,
}
