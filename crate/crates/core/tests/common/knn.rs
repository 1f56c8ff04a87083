//! k-nearest-neighbour label purity, used as an independent judge of embeddings.

pub fn knn_purity(coords: &[[f64; 2]], labels: &[usize], k: usize) -> f64 {
    let n = coords.len();
    let mut agree = 0usize;
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d = (coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2);
                (d, labels[j])
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0));
        agree += others.iter().take(k).filter(|(_, l)| *l == labels[i]).count();
    }
    agree as f64 / (n * k) as f64
}

/// Three isotropic Gaussian blobs, 50 points each, centres 10 apart in 5-D.
pub fn three_blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let centres = [[0.0, 0.0, 0.0, 0.0, 0.0], [10.0, 0.0, 0.0, 0.0, 0.0], [5.0, 8.660254037844386, 0.0, 0.0, 0.0]];
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (label, c) in centres.iter().enumerate() {
        for _ in 0..50 {
            points.push(c.iter().map(|v| v + noise.sample(&mut rng)).collect());
            labels.push(label);
        }
    }
    (points, labels)
}
