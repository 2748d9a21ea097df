//! Independent oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use mavae_core::model::{Mavae, MavaeConfig};
use mavae_core::rng::substream;
use mavae_core::training::loss;
use mavae_core::{Graph, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn randn(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn fd_gradient(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    let norm = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let scale = norm(a.data()).max(norm(b.data()));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Builds `Σ out ⊙ probe` from `inputs` (all trainable) and compares the
/// tape gradient of every input with central differences. Returns the
/// largest relative error.
pub fn check_op(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars);
        randn(&mut substream(99, 1), g.shape(out), 1.0)
    };
    let eval = |vals: &[Tensor]| -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars);
        let p = g.constant(probe.clone());
        let prod = g.mul(out, p).unwrap();
        let loss = g.sum_all(prod);
        let grads = g.backward(loss).unwrap();
        let gs = vars.iter().zip(vals).map(|(&v, t)| grads.get_or_zeros(v, t.shape())).collect();
        (g.value(loss).item(), gs)
    };
    let (_, analytic) = eval(inputs);
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let numeric = fd_gradient(x, 1e-6, |probe_x| {
            let mut vals = inputs.to_vec();
            vals[i] = probe_x.clone();
            eval(&vals).0
        });
        worst = worst.max(rel_err(&analytic[i], &numeric));
    }
    worst
}

/// Mean training loss of `model` on `x` with fixed `eps`, computed on the
/// eager (non-tape) path.
pub fn eager_loss(model: &Mavae, x: &[Tensor], eps: &[Tensor], beta: f64) -> f64 {
    let mut total = 0.0;
    for (xi, ei) in x.iter().zip(eps) {
        let (latent, output) = model.forward_train(xi, ei).unwrap();
        total += loss(&latent, &output, xi, beta).unwrap().total;
    }
    total / x.len() as f64
}

/// Per-parameter relative errors between the tape gradient of the batch
/// training loss and central differences of the eager loss.
pub fn model_gradient_errors(config: MavaeConfig, seed: u64, batch: usize, h: f64, beta: f64) -> Vec<(String, f64)> {
    let mut rng = substream(seed, 7);
    let model = Mavae::new(config.clone(), &mut rng).unwrap();
    let x: Vec<Tensor> = (0..batch).map(|_| randn(&mut rng, &[config.window, config.input_dim], 1.0)).collect();
    let eps: Vec<Tensor> = (0..batch).map(|_| randn(&mut rng, &[config.window, config.latent_dim], 1.0)).collect();

    let mut g = Graph::new();
    let p = model.bind(&mut g, true);
    let xv = g.constant(Tensor::stack(&x).unwrap());
    let ev = g.constant(Tensor::stack(&eps).unwrap());
    let f = mavae_core::model::forward_graph(&mut g, &p, xv, Some(ev)).unwrap();
    let l = mavae_core::training::loss_graph(&mut g, &f, xv, beta).unwrap();
    let grads = g.backward(l.total).unwrap();
    let analytic: Vec<Tensor> = p.leaves().into_iter().map(|&v| grads.get_or_zeros(v, g.shape(v))).collect();

    let names = model.params.names();
    let n = names.len();
    (0..n)
        .map(|k| {
            let base = model.params.leaves()[k].clone();
            let numeric = fd_gradient(&base, h, |probe| {
                let mut m = model.clone();
                *m.params.leaves_mut()[k] = probe.clone();
                eager_loss(&m, &x, &eps, beta)
            });
            (names[k].clone(), rel_err(&analytic[k], &numeric))
        })
        .collect()
}

/// Per-step reassembly by explicit bookkeeping: gather every window's
/// estimate for each time step into a list, then reduce the list.
pub fn naive_reverse_window(
    mus: &[Tensor],
    vars: &[Tensor],
    t: usize,
    mode: &str,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let w = mus[0].shape()[0];
    let d = mus[0].shape()[1];
    let n = mus.len();
    let mut mu_out = vec![vec![0.0; d]; t];
    let mut sd_out = vec![vec![0.0; d]; t];
    for step in 0..t {
        let mut cover: Vec<(usize, usize)> = Vec::new();
        for i in 0..n {
            if i <= step && step < i + w {
                cover.push((i, step - i));
            }
        }
        let chosen: Vec<(usize, usize)> = match mode {
            "mean" => cover.clone(),
            // the earliest covering window whose first step it is, or the last window
            "first" => vec![*cover.iter().find(|&&(_, k)| k == 0).unwrap_or(cover.last().unwrap())],
            "last" => vec![*cover.iter().find(|&&(_, k)| k == w - 1).unwrap_or(cover.first().unwrap())],
            _ => unreachable!(),
        };
        for c in 0..d {
            let m: Vec<f64> = chosen.iter().map(|&(i, k)| mus[i].get(&[k, c])).collect();
            let v: Vec<f64> = chosen.iter().map(|&(i, k)| vars[i].get(&[k, c])).collect();
            let mut ms = 0.0;
            let mut vs = 0.0;
            for (a, b) in m.iter().zip(&v) {
                ms += a;
                vs += b;
            }
            mu_out[step][c] = ms / m.len() as f64;
            sd_out[step][c] = (vs / v.len() as f64).sqrt();
        }
    }
    (mu_out, sd_out)
}
