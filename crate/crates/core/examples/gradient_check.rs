// Compares analytic convolution gradients with central finite differences.
//
// Usage: `cargo run --example gradient_check`

use std::error::Error;

use dnetpad::nn;
use dnetpad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(f64::MIN_POSITIVE)
}

fn main() -> Result<(), Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut random = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let x = random(&[1, 2, 5, 5]);
    let w = random(&[3, 2, 3, 3]);
    let b = random(&[3]);
    // Loss is a fixed random projection of the output, so its gradient is that projection.
    let y = nn::conv2d(&x, &w, &b, 1, 1)?;
    let r = random(y.shape());
    let loss = |x: &Tensor, w: &Tensor| -> f64 {
        let y = nn::conv2d(x, w, &b, 1, 1).unwrap();
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let grads = nn::conv2d_backward(&x, &w, 1, 1, &r)?;

    let numeric = |t: &Tensor, f: &dyn Fn(&Tensor) -> f64| -> Vec<f64> {
        (0..t.len())
            .map(|i| {
                let mut plus = t.clone();
                plus.data_mut()[i] += EPS;
                let mut minus = t.clone();
                minus.data_mut()[i] -= EPS;
                (f(&plus) - f(&minus)) / (2.0 * EPS)
            })
            .collect()
    };
    let dx = numeric(&x, &|x| loss(x, &w));
    let dw = numeric(&w, &|w| loss(&x, w));
    println!("input  gradient relative error {:.2e}", rel_error(grads.input.data(), &dx));
    println!("weight gradient relative error {:.2e}", rel_error(grads.param("weight").data(), &dw));
    Ok(())
}
