//! Shape arithmetic, gradient linearity and value-range properties of the
//! tensor operations.

mod common;

use cxrage::ops::{
    avg_pool2d, concat_channels, conv2d, fully_connected, global_avg_pool, relu, sigmoid, sigmoid_scalar,
};
use cxrage::{Graph, Tensor};
use proptest::prelude::*;

fn t(shape: &[usize], seed: u64) -> Tensor<f64> {
    common::random_tensor(&mut common::rng(seed), shape, 2.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn conv2d_output_shape(
        n in 1usize..3, c in 1usize..4, h in 1usize..10, w in 1usize..10,
        o in 1usize..4, kh in 1usize..5, kw in 1usize..5, stride in 1usize..4, padding in 0usize..3,
    ) {
        prop_assume!(h + 2 * padding >= kh && w + 2 * padding >= kw);
        let y = conv2d(&t(&[n, c, h, w], 1), &t(&[o, c, kh, kw], 2), &t(&[o], 3), stride, padding).unwrap();
        prop_assert_eq!(y.shape(), &[n, o, (h + 2 * padding - kh) / stride + 1, (w + 2 * padding - kw) / stride + 1]);
        prop_assert!(y.all_finite());
    }

    #[test]
    fn conv2d_rejects_bad_shapes(c in 1usize..4, extra in 1usize..3, h in 1usize..5) {
        let x = t(&[1, c, h, h], 1);
        let err = conv2d(&x, &t(&[2, c + extra, 1, 1], 2), &t(&[2], 3), 1, 0).unwrap_err().to_string();
        prop_assert!(err.contains(&format!("{:?}", x.shape())), "{}", err);
        prop_assert!(conv2d(&x, &t(&[2, c, h + 3, 1], 2), &t(&[2], 3), 1, 1).is_err());
    }

    #[test]
    fn pooling_shapes(n in 1usize..3, c in 1usize..4, h in 1usize..10, w in 1usize..10, window in 1usize..4, stride in 1usize..4) {
        let x = t(&[n, c, h, w], 4);
        match avg_pool2d(&x, window, stride) {
            Ok(y) => {
                prop_assert!(h >= window && w >= window);
                prop_assert_eq!(y.shape(), &[n, c, (h - window) / stride + 1, (w - window) / stride + 1]);
            }
            Err(_) => prop_assert!(h < window || w < window),
        }
        prop_assert_eq!(global_avg_pool(&x).unwrap().shape().to_vec(), vec![n, c]);
    }

    #[test]
    fn concat_then_slice_round_trips(n in 1usize..3, cs in prop::collection::vec(1usize..4, 1..4), h in 1usize..5, w in 1usize..5) {
        let parts: Vec<Tensor<f64>> = cs.iter().enumerate().map(|(i, &c)| t(&[n, c, h, w], 10 + i as u64)).collect();
        let refs: Vec<&Tensor<f64>> = parts.iter().collect();
        let joined = concat_channels(&refs).unwrap();
        prop_assert_eq!(joined.shape(), &[n, cs.iter().sum::<usize>(), h, w]);
        let mut start = 0;
        for (p, &c) in parts.iter().zip(&cs) {
            prop_assert_eq!(&joined.slice_channels(start, c).unwrap(), p);
            start += c;
        }
    }

    #[test]
    fn fully_connected_and_elementwise_shapes(n in 1usize..5, c in 1usize..6, m in 1usize..4) {
        let x = t(&[n, c], 5);
        prop_assert_eq!(fully_connected(&x, &t(&[m, c], 6), &t(&[m], 7)).unwrap().shape().to_vec(), vec![n, m]);
        prop_assert!(fully_connected(&x, &t(&[m, c + 1], 6), &t(&[m], 7)).is_err());
        prop_assert_eq!(relu(&x).shape().to_vec(), x.shape().to_vec());
        prop_assert_eq!(sigmoid(&x).shape().to_vec(), x.shape().to_vec());
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval(x in prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL) {
        let y = sigmoid_scalar(x);
        prop_assert!(y > 0.0 && y < 1.0, "sigmoid({x}) = {y}");
        let y32 = sigmoid_scalar(x as f32);
        prop_assert!(y32 > 0.0 && y32 < 1.0, "sigmoid32({x}) = {y32}");
    }

    #[test]
    fn scaled_loss_scales_gradients(alpha in -50.0f64..50.0, seed in 0u64..1000) {
        let x = t(&[2, 2, 5, 5], seed);
        let k = t(&[3, 2, 3, 3], seed + 1);
        let b = t(&[3], seed + 2);
        let grads = |scale: Option<f64>| {
            let mut g = Graph::new();
            let (xi, ki, bi) = (g.leaf(x.clone()), g.leaf(k.clone()), g.leaf(b.clone()));
            let y = g.conv2d(xi, ki, bi, 1, 1).unwrap();
            let y = g.relu(y);
            let p = g.global_avg_pool(y).unwrap();
            let w = g.leaf(t(&[1, 3], seed + 3));
            let wb = g.leaf(t(&[1], seed + 4));
            let out = g.fully_connected(p, w, wb).unwrap();
            let out = g.sigmoid(out);
            let target = g.leaf(Tensor::full(&[2, 1], 0.3));
            let mut l = g.mse_loss(out, target).unwrap();
            if let Some(a) = scale {
                l = g.scale(l, a);
            }
            let gr = g.backward(l).unwrap();
            [gr.wrt(xi), gr.wrt(ki), gr.wrt(bi)]
        };
        let base = grads(None);
        let scaled = grads(Some(alpha));
        // relative to the tensor's largest entry: summed entries can cancel,
        // so a per-entry bound would measure cancellation, not linearity
        for (a, s) in base.iter().zip(&scaled) {
            let scale = a.data().iter().fold(0.0f64, |m, &u| m.max((alpha * u).abs()));
            for (&u, &v) in a.data().iter().zip(s.data()) {
                prop_assert!((v - alpha * u).abs() <= 1e-12 * scale, "{} vs {}", v, alpha * u);
            }
        }
    }
}

#[test]
fn sigmoid_saturates_without_reaching_one() {
    let y = sigmoid_scalar(100.0f64);
    assert!(y < 1.0 && y > 1.0 - 1e-12);
    assert!(sigmoid_scalar(-800.0f64) > 0.0);
    assert!(sigmoid_scalar(f32::MAX) < 1.0);
}
