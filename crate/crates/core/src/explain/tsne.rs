use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::par;
use crate::synthdata::Sample;
use crate::tensor::Tensor;

const ENTROPY_TOL: f64 = 1e-5;
const SEARCH_STEPS: usize = 200;
const MIN_PROB: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub coords: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub block: Option<usize>,
    /// KL(P‖Q) after the last iteration, without exaggeration.
    pub kl: f64,
    /// KL(P‖Q) at every iteration.
    pub kl_trace: Vec<f64>,
    pub params: TsneParams,
}

/// Row-major `n × n` matrix of squared Euclidean distances.
pub fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Shannon entropy (natural log) of a discrete distribution.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Gaussian row `p_{j|i}` for precision `beta` over distances `d` (self excluded); returns the row and its entropy.
fn gaussian_row(d: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut row: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(j, &v)| if j == i { 0.0 } else { (-beta * (v - min)).exp() })
        .collect();
    let sum: f64 = row.iter().sum();
    let weighted: f64 = row.iter().zip(d).map(|(p, &v)| p * (v - min)).sum();
    row.iter_mut().for_each(|p| *p /= sum);
    (row, sum.ln() + beta * weighted / sum)
}

/// Conditional similarities `p_{j|i}` with each row's precision found by bisection so
/// its entropy equals `ln(perplexity)`.
pub fn conditional_probabilities(distances: &[f64], n: usize, perplexity: f64) -> Result<Vec<f64>> {
    if distances.len() != n * n || n < 2 {
        return Err(Error::shape(format!("distance matrix must be {n}x{n} with n >= 2")));
    }
    if !(perplexity > 1.0) {
        return Err(Error::input(format!("perplexity {perplexity} must exceed 1")));
    }
    let target = perplexity.ln();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let d = &distances[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let mut found = None;
        for _ in 0..SEARCH_STEPS {
            let (row, h) = gaussian_row(d, i, beta);
            if (h - target).abs() < ENTROPY_TOL {
                found = Some(row);
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let row = found.ok_or_else(|| {
            Error::Numeric(format!(
                "perplexity search did not converge for point {i}; too many duplicate points?"
            ))
        })?;
        out.extend(row);
    }
    Ok(out)
}

/// Symmetrized joint distribution `(P + Pᵀ) / 2n`.
pub fn joint_probabilities(conditional: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / (2.0 * n as f64);
        }
    }
    p
}

/// Exact t-SNE to two dimensions.
pub fn tsne(points: &[Vec<f64>], labels: &[usize], params: &TsneParams) -> Result<Embedding> {
    let n = points.len();
    if labels.len() != n {
        return Err(Error::input(format!("{} labels for {n} points", labels.len())));
    }
    if params.perplexity < 2.0 {
        return Err(Error::input(format!("perplexity {} must be at least 2", params.perplexity)));
    }
    if (n as f64) < 3.0 * params.perplexity {
        return Err(Error::input(format!(
            "{n} points is too few for perplexity {}; need at least {}",
            params.perplexity,
            (3.0 * params.perplexity).ceil()
        )));
    }
    if let Some(i) = points.iter().position(|p| p.len() != points[0].len()) {
        return Err(Error::shape(format!("point {i} has dimension {}, expected {}", points[i].len(), points[0].len())));
    }
    let d = squared_distances(points);
    let p: Vec<f64> = joint_probabilities(&conditional_probabilities(&d, n, params.perplexity)?, n)
        .into_iter()
        .map(|v| v.max(MIN_PROB))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let init = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut kl_trace = Vec::with_capacity(params.iterations);

    for iter in 0..params.iterations {
        let early = iter < params.exaggeration_iters;
        let exag = if early { params.exaggeration } else { 1.0 };
        let momentum = if early { params.initial_momentum } else { params.final_momentum };

        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dy0 = y[i][0] - y[j][0];
                let dy1 = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[i * n + j] = v;
                num[j * n + i] = v;
                total += 2.0 * v;
            }
        }
        let mut kl = 0.0;
        let mut grad = vec![[0.0; 2]; n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let nij = num[i * n + j];
                let q = (nij / total).max(MIN_PROB);
                let pij = p[i * n + j];
                kl += pij * (pij / q).ln();
                let coeff = 4.0 * (exag * pij - q) * nij;
                grad[i][0] += coeff * (y[i][0] - y[j][0]);
                grad[i][1] += coeff * (y[i][1] - y[j][1]);
            }
        }
        kl_trace.push(kl);

        for i in 0..n {
            for k in 0..2 {
                let g = grad[i][k];
                gains[i][k] = if (g > 0.0) != (update[i][k] > 0.0) { gains[i][k] + 0.2 } else { gains[i][k] * 0.8 };
                gains[i][k] = gains[i][k].max(0.01);
                update[i][k] = momentum * update[i][k] - params.learning_rate * gains[i][k] * g;
                y[i][k] += update[i][k];
            }
        }
        for k in 0..2 {
            let mean = y.iter().map(|c| c[k]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|c| c[k] -= mean);
        }
    }
    if y.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(Error::Numeric("t-SNE produced non-finite coordinates".into()));
    }
    Ok(Embedding {
        coords: y,
        labels: labels.to_vec(),
        block: None,
        kl: kl_trace.last().copied().unwrap_or(f64::NAN),
        kl_trace,
        params: params.clone(),
    })
}

/// Mean silhouette coefficient of `labels` on 2-D coordinates.
pub fn silhouette_score(coords: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    let n = coords.len();
    if labels.len() != n {
        return Err(Error::input(format!("{} labels for {n} points", labels.len())));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::input("silhouette needs at least two distinct labels"));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![(0.0, 0usize); classes.len()];
        for j in 0..n {
            if i == j {
                continue;
            }
            let c = classes.binary_search(&labels[j]).expect("known label");
            sums[c].0 += (coords[i][0] - coords[j][0]).hypot(coords[i][1] - coords[j][1]);
            sums[c].1 += 1;
        }
        let own = classes.binary_search(&labels[i]).expect("known label");
        if sums[own].1 == 0 {
            continue;
        }
        let a = sums[own].0 / sums[own].1 as f64;
        let b = sums
            .iter()
            .enumerate()
            .filter(|&(c, s)| c != own && s.1 > 0)
            .map(|(_, s)| s.0 / s.1 as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

pub fn embedding_csv(embedding: &Embedding) -> String {
    let block = embedding.block.map(|b| b.to_string()).unwrap_or_default();
    let mut out = String::from("x,y,label,block\n");
    for (c, l) in embedding.coords.iter().zip(&embedding.labels) {
        writeln!(out, "{},{},{l},{block}", c[0], c[1]).unwrap();
    }
    out
}

const FEATURE_BATCH: usize = 32;

/// Flattened output of dense block `block` for every sample, one row each.
pub fn extract_block_features(model: &Model, samples: &[Sample], block: usize, jobs: usize) -> Result<Vec<Vec<f64>>> {
    if block >= model.num_blocks() {
        return Err(Error::input(format!("block {block} out of range (model has {})", model.num_blocks())));
    }
    let batches: Vec<&[Sample]> = samples.chunks(FEATURE_BATCH).collect();
    let rows = par::map_ordered(&batches, jobs, |batch| -> Result<Vec<Vec<f64>>> {
        let inputs: Vec<&Tensor> = batch.iter().map(|s| &s.input).collect();
        let cache = model.forward_batch(&Tensor::stack(&inputs)?)?;
        let out = cache.block_output(block);
        let d = out.len() / batch.len();
        Ok(out.data().chunks_exact(d).map(<[f64]>::to_vec).collect())
    });
    let mut all = Vec::with_capacity(samples.len());
    for r in rows {
        all.extend(r?);
    }
    Ok(all)
}
