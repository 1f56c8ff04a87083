//! Central finite-difference oracle for layer and model gradients.
//!
//! Each check builds a scalar loss `L = Σ r ⊙ f(x)` with a fixed random `r`,
//! perturbs every input/parameter entry by ±ε, and compares the numeric
//! gradient with the analytic backward pass using
//! `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`.

#![allow(dead_code)]

use dnetpad::nn::{self, PoolMode};
use dnetpad::{Model, ModelConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-6;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Random values kept at least `margin` away from zero (for relu kinks).
pub fn random_away_from_zero(shape: &[usize], margin: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(margin..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

pub fn weighted_sum(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub fn numeric_grad(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + EPS;
        let up = f(&probe);
        probe.data_mut()[i] = orig - EPS;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (2.0 * EPS));
    }
    Tensor::new(x.shape(), grad).unwrap()
}

pub fn rel_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Named relative errors for one layer.
pub type Report = Vec<(&'static str, f64)>;

pub fn check_conv(seed: u64, stride: usize, pad: usize) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&[1, 2, 5, 5], &mut rng);
    let k = random(&[3, 2, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let y = nn::conv2d(&x, &k, &b, stride, pad).unwrap();
    let r = random(y.shape(), &mut rng);
    let g = nn::conv2d_backward(&x, &k, stride, pad, &r).unwrap();
    let loss = |x: &Tensor, k: &Tensor, b: &Tensor| weighted_sum(&nn::conv2d(x, k, b, stride, pad).unwrap(), &r);
    vec![
        ("input", rel_error(&g.input, &numeric_grad(&x, |x| loss(x, &k, &b)))),
        ("weight", rel_error(g.param("weight"), &numeric_grad(&k, |k| loss(&x, k, &b)))),
        ("bias", rel_error(g.param("bias"), &numeric_grad(&b, |b| loss(&x, &k, b)))),
    ]
}

pub fn check_relu(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_away_from_zero(&[2, 3, 4, 4], 1e-3, &mut rng);
    let r = random(x.shape(), &mut rng);
    let g = nn::relu_backward(&x, &r).unwrap();
    vec![("input", rel_error(&g, &numeric_grad(&x, |x| weighted_sum(&nn::relu(x), &r))))]
}

pub fn check_pool(seed: u64, mode: PoolMode, k: usize, stride: usize) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&[2, 2, 6, 6], &mut rng);
    let y = nn::pool2d(&x, mode, k, stride).unwrap();
    let r = random(y.shape(), &mut rng);
    let g = nn::pool2d_backward(&x, mode, k, stride, &r).unwrap();
    let n = numeric_grad(&x, |x| weighted_sum(&nn::pool2d(x, mode, k, stride).unwrap(), &r));
    vec![("input", rel_error(&g, &n))]
}

pub fn check_concat(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random(&[2, 3, 3, 3], &mut rng);
    let b = random(&[2, 2, 3, 3], &mut rng);
    let r = random(&[2, 5, 3, 3], &mut rng);
    let parts = nn::split_channels(&r, &[3, 2]).unwrap();
    let na = numeric_grad(&a, |a| weighted_sum(&nn::concat_channels(&[a, &b]).unwrap(), &r));
    let nb = numeric_grad(&b, |b| weighted_sum(&nn::concat_channels(&[&a, b]).unwrap(), &r));
    vec![("a", rel_error(&parts[0], &na)), ("b", rel_error(&parts[1], &nb))]
}

pub fn check_gap(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&[2, 3, 4, 5], &mut rng);
    let r = random(&[2, 3], &mut rng);
    let g = nn::global_avg_pool_backward(x.shape(), &r).unwrap();
    let n = numeric_grad(&x, |x| weighted_sum(&nn::global_avg_pool(x).unwrap(), &r));
    vec![("input", rel_error(&g, &n))]
}

pub fn check_linear(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(&[3, 5], &mut rng);
    let w = random(&[4, 5], &mut rng);
    let b = random(&[4], &mut rng);
    let r = random(&[3, 4], &mut rng);
    let g = nn::linear_backward(&x, &w, &r).unwrap();
    let loss = |x: &Tensor, w: &Tensor, b: &Tensor| weighted_sum(&nn::linear(x, w, b).unwrap(), &r);
    vec![
        ("input", rel_error(&g.input, &numeric_grad(&x, |x| loss(x, &w, &b)))),
        ("weight", rel_error(g.param("weight"), &numeric_grad(&w, |w| loss(&x, w, &b)))),
        ("bias", rel_error(g.param("bias"), &numeric_grad(&b, |b| loss(&x, &w, b)))),
    ]
}

pub fn check_cross_entropy(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = Tensor::from_fn(&[4, 3], |_| rng.gen_range(-3.0..3.0));
    let labels = [0, 2, 1, 2];
    let ce = nn::softmax_cross_entropy(&logits, &labels).unwrap();
    let n = numeric_grad(&logits, |l| nn::softmax_cross_entropy(l, &labels).unwrap().loss);
    vec![("logits", rel_error(&ce.grad_logits, &n))]
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        input_size: 16,
        ..ModelConfig::default()
    }
}

/// End-to-end check of every parameter tensor of a 16×16 model.
pub fn check_model(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(small_model_config(), seed).unwrap();
    // Non-zero biases so every bias path carries signal.
    for p in model.parameters_mut() {
        if p.rank() == 1 {
            p.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
    let x = Tensor::from_fn(&[2, 1, 16, 16], |_| rng.gen_range(0.0..1.0));
    let labels = [0, 1];
    let cache = model.forward_batch(&x).unwrap();
    let ce = nn::softmax_cross_entropy(cache.logits(), &labels).unwrap();
    let grads = model.backward(&cache, &ce.grad_logits).unwrap();

    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for (i, name) in names.into_iter().enumerate() {
        let original = model.parameters()[i].1.clone();
        let mut probe = model.clone();
        let numeric = numeric_grad(&original, |p| {
            *probe.parameters_mut()[i] = p.clone();
            let logits = probe.forward_batch(&x).unwrap();
            nn::softmax_cross_entropy(logits.logits(), &labels).unwrap().loss
        });
        out.push((name, rel_error(&grads.params[i], &numeric)));
    }
    out
}
