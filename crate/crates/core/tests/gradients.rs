mod common;

use common::{check_op, model_gradient_errors, randn};
use mavae_core::model::MavaeConfig;
use mavae_core::rng::substream;
use mavae_core::{Graph, Tensor};

const TOL: f64 = 1e-6;

fn inputs(seed: u64, shapes: &[&[usize]]) -> Vec<Tensor> {
    let mut rng = substream(seed, 0);
    shapes.iter().map(|s| randn(&mut rng, s, 0.7)).collect()
}

#[test]
fn elementwise_ops() {
    let xs = inputs(1, &[&[2, 3, 4], &[2, 3, 4]]);
    assert!(check_op(&xs, |g, v| g.add(v[0], v[1]).unwrap()) < TOL);
    assert!(check_op(&xs, |g, v| g.sub(v[0], v[1]).unwrap()) < TOL);
    assert!(check_op(&xs, |g, v| g.mul(v[0], v[1]).unwrap()) < TOL);
    assert!(check_op(&xs[..1], |g, v| g.exp(v[0])) < TOL);
    assert!(check_op(&xs[..1], |g, v| g.sigmoid(v[0])) < TOL);
    assert!(check_op(&xs[..1], |g, v| g.tanh(v[0])) < TOL);
    assert!(check_op(&xs[..1], |g, v| g.scale(v[0], -2.5)) < TOL);
    assert!(check_op(&xs[..1], |g, v| g.softmax(v[0])) < TOL);
}

#[test]
fn clamp_passes_gradient_inside_only() {
    let x = Tensor::new(vec![4], vec![-3.0, -0.5, 0.4, 2.0]).unwrap();
    let mut g = Graph::new();
    let v = g.param(x);
    let c = g.clamp(v, -1.0, 1.0);
    let s = g.sum_all(c);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(v).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn products_and_shapes() {
    let xs = inputs(2, &[&[2, 3, 4], &[4, 5]]);
    assert!(check_op(&xs, |g, v| g.matmul(v[0], v[1]).unwrap()) < TOL);
    let xs = inputs(3, &[&[2, 3, 4], &[2, 4, 5]]);
    assert!(check_op(&xs, |g, v| g.batch_matmul(v[0], v[1], false).unwrap()) < TOL);
    let xs = inputs(4, &[&[2, 3, 4], &[2, 5, 4]]);
    assert!(check_op(&xs, |g, v| g.batch_matmul(v[0], v[1], true).unwrap()) < TOL);
    let xs = inputs(5, &[&[2, 3, 4], &[4]]);
    assert!(check_op(&xs, |g, v| g.add_bias(v[0], v[1]).unwrap()) < TOL);
    let xs = inputs(6, &[&[2, 3, 4], &[2, 3, 2]]);
    assert!(check_op(&xs, |g, v| g.concat(&[v[0], v[1], v[0]]).unwrap()) < TOL);
    assert!(check_op(&xs[..1], |g, v| g.slice_last(v[0], 1, 2).unwrap()) < TOL);
    assert!(check_op(&xs[..1], |g, v| g.select_step(v[0], 2).unwrap()) < TOL);
    assert!(check_op(&xs[..1], |g, v| g.reshape(v[0], &[6, 4]).unwrap()) < TOL);
}

#[test]
fn likelihood_terms() {
    let xs = inputs(7, &[&[3, 4], &[3, 4], &[3, 4]]);
    assert!(check_op(&xs, |g, v| g.gaussian_log_prob(v[0], v[1], v[2]).unwrap()) < TOL);
    assert!(check_op(&xs[1..], |g, v| g.kl_std_normal(v[0], v[1]).unwrap()) < TOL);
}

#[test]
fn lstm_both_directions() {
    let xs = inputs(8, &[&[2, 5, 3], &[3, 16], &[4, 16], &[16]]);
    for reverse in [false, true] {
        let err = check_op(&xs, |g, v| g.lstm(v[0], v[1], v[2], v[3], reverse).unwrap());
        assert!(err < TOL, "reverse = {reverse}: {err}");
    }
}

#[test]
fn lstm_forward_matches_scalar_recurrence() {
    let xs = inputs(9, &[&[1, 4, 2], &[2, 4], &[1, 4], &[4]]);
    let mut g = Graph::new();
    let v: Vec<_> = xs.iter().map(|t| g.constant(t.clone())).collect();
    let out = g.lstm(v[0], v[1], v[2], v[3], false).unwrap();
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let (mut h, mut c) = (0.0, 0.0);
    for t in 0..4 {
        let gate = |k: usize| {
            xs[3].data()[k] + xs[1].get(&[0, k]) * xs[0].get(&[0, t, 0]) + xs[1].get(&[1, k]) * xs[0].get(&[0, t, 1])
                + xs[2].get(&[0, k]) * h
        };
        c = sig(gate(1)) * c + sig(gate(0)) * gate(2).tanh();
        h = sig(gate(3)) * c.tanh();
        assert!((g.value(out).get(&[0, t, 0]) - h).abs() < 1e-14);
    }
}

#[test]
fn full_model_gradients() {
    for no_attention in [false, true] {
        let cfg = MavaeConfig {
            window: 6,
            input_dim: 3,
            latent_dim: 2,
            heads: 2,
            key_dim: 2,
            outer_units: 3,
            inner_units: 2,
            no_attention,
        };
        for (name, err) in model_gradient_errors(cfg, 5, 2, 1e-5, 0.3) {
            assert!(err < 1e-5, "{name}: {err}");
        }
    }
}
