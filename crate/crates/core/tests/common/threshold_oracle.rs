//! Exhaustive threshold scan used as an independent reference for threshold selection.

/// Tries every observed bonafide score plus one value above them all, keeping the
/// smallest whose at-or-above fraction stays within the target.
pub fn brute_force_threshold(bonafide: &[f64], target_fdr: f64) -> f64 {
    let max = bonafide.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best = max.next_up();
    for &candidate in bonafide {
        let above = bonafide.iter().filter(|&&s| s >= candidate).count();
        if above as f64 / bonafide.len() as f64 <= target_fdr && candidate < best {
            best = candidate;
        }
    }
    best
}

pub fn brute_force_tdr(bonafide: &[f64], pa: &[f64], target_fdr: f64) -> (f64, f64) {
    let t = brute_force_threshold(bonafide, target_fdr);
    let hits = pa.iter().filter(|&&s| s >= t).count();
    (hits as f64 / pa.len() as f64, t)
}

/// Random score set with deliberate ties so the tie rule is exercised.
pub fn random_case(rng: &mut impl rand::Rng) -> (Vec<f64>, Vec<f64>, f64) {
    let nb = rng.gen_range(1..60);
    let np = rng.gen_range(1..60);
    let levels = rng.gen_range(2..40) as f64;
    let mut draw = |n: usize, shift: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v: f64 = (rng.gen::<f64>() * 0.7 + shift).min(1.0);
                if rng.gen_bool(0.5) { (v * levels).round() / levels } else { v }
            })
            .collect()
    };
    let bonafide = draw(nb, 0.0);
    let pa = draw(np, 0.3);
    let targets = [0.0, 0.002, 0.01, 0.05, 0.2, 0.5, 1.0];
    let target = if rng.gen_bool(0.5) { targets[rng.gen_range(0..targets.len())] } else { rng.gen::<f64>() };
    (bonafide, pa, target)
}
