//! Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails. The scaled model is trained once and shared.

mod common {
    pub mod gradcheck;
    pub mod knn;
    pub mod threshold_oracle;
}

use std::time::Instant;

use common::gradcheck::*;
use common::knn::{knn_purity, three_blobs};
use common::threshold_oracle::{brute_force_tdr, random_case};
use dnetpad::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use dnetpad::explain::{
    average_heatmap, conditional_probabilities, entropy, extract_block_features, grad_cam_batch, radial_band_mean,
    silhouette_score, squared_distances, tsne, TsneParams,
};
use dnetpad::freq::{
    cutoff_sweep, default_cutoffs, default_manipulations, fft2_centered, ifft2_centered, max_radius, radial_filter_raw,
    robustness_table, FilterMode,
};
use dnetpad::metrics::{d_prime, relative_decrease, tdr_at_fdr, EvalReport};
use dnetpad::model::{Model, ModelConfig, PA_CLASS};
use dnetpad::nn::PoolMode;
use dnetpad::synthdata::{generate_split, prepare_samples, DatasetSpec, IrisClass, Sample, Split, SYNTH};
use dnetpad::train::{evaluate_scores, scores_csv, train, ScoredSample, TrainConfig};
use dnetpad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Epochs for the scaled experiment; the loss has converged well before this.
const SCALED_EPOCHS: usize = 20;
const SCALED_FDR: f64 = 0.01;
/// Dense block used for the locality check: the last block is only 4×4.
const LOCALITY_BLOCK: usize = 2;

struct Tally {
    failures: usize,
}

impl Tally {
    fn report(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }
}

struct Scaled {
    model: Model,
    test: Vec<Sample>,
    scored: Vec<ScoredSample>,
}

fn split_scores(scored: &[ScoredSample]) -> (Vec<f64>, Vec<f64>) {
    let bf = scored.iter().filter(|s| s.label != PA_CLASS).map(|s| s.score).collect();
    let pa = scored.iter().filter(|s| s.label == PA_CLASS).map(|s| s.score).collect();
    (bf, pa)
}

fn gradient_suite(t: &mut Tally) {
    let start = Instant::now();
    let mut layer_reports: Vec<(&'static str, f64)> = Vec::new();
    layer_reports.extend(check_conv(1, 1, 0));
    layer_reports.extend(check_conv(2, 1, 1));
    layer_reports.extend(check_conv(3, 2, 1));
    layer_reports.extend(check_relu(4));
    layer_reports.extend(check_pool(5, PoolMode::Max, 2, 2));
    layer_reports.extend(check_pool(6, PoolMode::Avg, 2, 2));
    layer_reports.extend(check_concat(9));
    layer_reports.extend(check_gap(10));
    layer_reports.extend(check_linear(11));
    layer_reports.extend(check_cross_entropy(12));
    let worst_layer = layer_reports.iter().map(|r| r.1).fold(0.0, f64::max);
    let model = check_model(13);
    let worst_model = model.iter().map(|r| r.1).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    t.report(
        "gradient suite",
        worst_layer < 1e-5 && worst_model < 1e-4 && secs < 60.0,
        format!(
            "worst per-layer rel err {worst_layer:.2e} (< 1e-5), worst end-to-end {worst_model:.2e} over {} tensors (< 1e-4), {secs:.1}s (< 60s)",
            model.len()
        ),
    );
}

fn scaled_experiment(t: &mut Tally) -> Scaled {
    let start = Instant::now();
    let spec = DatasetSpec::default();
    let config = ModelConfig::default();
    let train_set = prepare_samples(&generate_split(&spec, Split::Train).unwrap(), config.input_size).unwrap();
    let test = prepare_samples(&generate_split(&spec, Split::Test).unwrap(), config.input_size).unwrap();
    let cfg = TrainConfig { epochs: SCALED_EPOCHS, seed: spec.seed, ..TrainConfig::default() };
    let (model, _) = train(Model::new(config, spec.seed).unwrap(), &train_set, &cfg).unwrap();
    let scored = evaluate_scores(&model, &test, 1).unwrap();
    let (bf, pa) = split_scores(&scored);
    let op = tdr_at_fdr(&bf, &pa, SCALED_FDR).unwrap();
    let secs = start.elapsed().as_secs_f64();
    t.report(
        "scaled experiment",
        op.tdr >= 0.90 && op.realized_fdr <= SCALED_FDR && secs <= 900.0,
        format!(
            "TDR {:.4} (>= 0.90) at realized FDR {:.4} (<= 0.01), {} train / {} test, {SCALED_EPOCHS} epochs, {secs:.0}s (<= 900s)",
            op.tdr,
            op.realized_fdr,
            train_set.len(),
            test.len()
        ),
    );
    Scaled { model, test, scored }
}

fn metric_oracle(t: &mut Tally) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (bf, pa, target) = random_case(&mut rng);
        let op = tdr_at_fdr(&bf, &pa, target).unwrap();
        let (tdr, threshold) = brute_force_tdr(&bf, &pa, target);
        if op.threshold.to_bits() != threshold.to_bits() || op.tdr.to_bits() != tdr.to_bits() {
            mismatches += 1;
        }
    }
    t.report("metric oracle equivalence", mismatches == 0, format!("{mismatches} mismatches over 1000 random score sets"));
}

fn table6_parity(t: &mut Tally) {
    let a = relative_decrease(96.26, 52.33).unwrap();
    let b = relative_decrease(98.58, 81.61).unwrap();
    t.report(
        "relative decrease parity",
        (a - 45.63).abs() <= 0.01 && (b - 17.21).abs() <= 0.01,
        format!("(96.26, 52.33) -> {a:.4} (45.63 ± 0.01); (98.58, 81.61) -> {b:.4} (17.21 ± 0.01)"),
    );
}

fn frequency_suite(t: &mut Tally, s: &Scaled) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = Tensor::from_fn(&[64, 64], |_| rng.gen::<f64>());
    let roundtrip = ifft2_centered(&fft2_centered(&img).unwrap()).unwrap().max_abs_diff(&img);

    let plane = s.test[0].input.clone().reshape(&[64, 64]).unwrap();
    let mut partition: f64 = 0.0;
    for c in [0.0, 3.0, 6.0, 9.0, 14.0, 30.0] {
        let low = radial_filter_raw(&plane, c, FilterMode::Low).unwrap();
        let high = radial_filter_raw(&plane, c, FilterMode::High).unwrap();
        let sum = Tensor::new(&[64, 64], low.data().iter().zip(high.data()).map(|(a, b)| a + b).collect()).unwrap();
        partition = partition.max(sum.max_abs_diff(&plane));
    }

    let mut cutoffs = default_cutoffs(64);
    cutoffs.push(max_radius(64, 64));
    let sweep = cutoff_sweep(&s.model, "scaled", &s.test, &cutoffs, SCALED_FDR, 1).unwrap();
    let n = sweep.points.len();
    let endpoint_exact = sweep.points[n - 1].tdr.to_bits() == sweep.baseline_tdr.to_bits();
    let (smallest, largest) = (sweep.points[0].tdr, sweep.points[n - 2].tdr);
    let trace: Vec<String> = sweep.points.iter().map(|p| format!("{}:{:.3}", p.cutoff, p.tdr)).collect();
    t.report(
        "frequency suite",
        roundtrip < 1e-9 && partition < 1e-9 && endpoint_exact && largest >= smallest,
        format!(
            "roundtrip {roundtrip:.1e}, partition {partition:.1e}, max-radius TDR bit-equal to baseline {:.3}: {endpoint_exact}, sweep [{}] largest {largest:.3} >= smallest {smallest:.3}",
            sweep.baseline_tdr,
            trace.join(" ")
        ),
    );

    let table = robustness_table(&s.model, &s.test, &default_manipulations(64), SCALED_FDR, 0, 1).unwrap();
    let rows: Vec<String> = table.iter().map(|r| format!("{} {:.3} ({:.1}%)", r.name, r.tdr, r.relative_decrease)).collect();
    println!("INFO robustness table: {}", rows.join(", "));
}

fn gradcam_locality(t: &mut Tally, s: &Scaled) {
    let cosmetic: Vec<Sample> = s.test.iter().filter(|x| x.class == IrisClass::CosmeticContact).cloned().collect();
    let ratio = |block: usize| -> f64 {
        let maps = grad_cam_batch(&s.model, &cosmetic, PA_CLASS, block, 1).unwrap();
        let avg = average_heatmap(&maps).unwrap();
        let outer = radial_band_mean(&avg.values, SYNTH.ring_inner, SYNTH.ring_outer).unwrap();
        let inner = radial_band_mean(&avg.values, 0.0, SYNTH.ring_inner).unwrap();
        outer / inner
    };
    let tapped = ratio(LOCALITY_BLOCK);
    let last = ratio(s.model.num_blocks() - 1);
    t.report(
        "grad-cam locality",
        cosmetic.len() >= 50 && tapped >= 1.5,
        format!(
            "{} cosmetic-contact images, outer-annulus / inner-disk mean {tapped:.3} at block {LOCALITY_BLOCK} (>= 1.5); last block {last:.3}",
            cosmetic.len()
        ),
    );
}

fn tsne_suite(t: &mut Tally, s: &Scaled) {
    let perplexity: f64 = 30.0;
    let n = 31;
    let simplex: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let p = conditional_probabilities(&squared_distances(&simplex), n, perplexity).unwrap();
    let entropy_err = (0..n).map(|i| (entropy(&p[i * n..(i + 1) * n]) - perplexity.ln()).abs()).fold(0.0, f64::max);

    let (points, labels) = three_blobs(5);
    let blobs = tsne(&points, &labels, &TsneParams { seed: 1, ..TsneParams::default() }).unwrap();
    let purity = knn_purity(&blobs.coords, &labels, 5);

    let labels: Vec<usize> = s.test.iter().map(Sample::label).collect();
    let silhouette = |block: usize| {
        let feats = extract_block_features(&s.model, &s.test, block, 1).unwrap();
        let emb = tsne(&feats, &labels, &TsneParams { seed: 1, ..TsneParams::default() }).unwrap();
        silhouette_score(&emb.coords, &labels).unwrap()
    };
    let first = silhouette(0);
    let last = silhouette(s.model.num_blocks() - 1);
    t.report(
        "t-SNE suite",
        entropy_err < 1e-5 && purity >= 0.95 && last > first,
        format!(
            "simplex entropy error {entropy_err:.1e} (< 1e-5), 3-blob 5-NN purity {purity:.3} (>= 0.95), silhouette last block {last:.3} > first block {first:.3}"
        ),
    );
}

fn determinism(t: &mut Tally, s: &Scaled) {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec { train: 60, test: 40, seed: 42, image_size: 64 };
    let config = ModelConfig { input_size: 32, block_layers: vec![1, 1], ..ModelConfig::default() };
    let run = |tag: &str| -> (Vec<u8>, String) {
        let tr = prepare_samples(&generate_split(&spec, Split::Train).unwrap(), 32).unwrap();
        let te = prepare_samples(&generate_split(&spec, Split::Test).unwrap(), 32).unwrap();
        let cfg = TrainConfig { epochs: 3, seed: 7, ..TrainConfig::default() };
        let (model, _) = train(Model::new(config.clone(), 7).unwrap(), &tr, &cfg).unwrap();
        let path = dir.path().join(format!("{tag}.ckpt"));
        save_checkpoint(&model, CheckpointMeta { epoch: 3, seed: 7 }, &path).unwrap();
        let scored = evaluate_scores(&model, &te, 2).unwrap();
        let report = EvalReport::from_scores(&scored, 0.05, 10).unwrap();
        (std::fs::read(&path).unwrap(), report.to_csv() + &scores_csv(&scored))
    };
    let (ckpt_a, csv_a) = run("a");
    let (ckpt_b, csv_b) = run("b");

    let path = dir.path().join("scaled.ckpt");
    save_checkpoint(&s.model, CheckpointMeta { epoch: SCALED_EPOCHS, seed: 42 }, &path).unwrap();
    let restored = load_checkpoint(&path).unwrap().model;
    let again = evaluate_scores(&restored, &s.test, 1).unwrap();
    let same_scores = again.iter().zip(&s.scored).all(|(a, b)| a.score.to_bits() == b.score.to_bits());
    t.report(
        "determinism",
        ckpt_a == ckpt_b && csv_a == csv_b && same_scores,
        format!(
            "rerun checkpoint identical: {}, report CSV identical: {}, reloaded scaled model scores bit-exact: {same_scores}",
            ckpt_a == ckpt_b,
            csv_a == csv_b
        ),
    );
}

fn d_prime_fixture(t: &mut Tally) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bf: Vec<f64> = Normal::new(0.2, 0.1).unwrap().sample_iter(&mut rng).take(10_000).collect();
    let pa: Vec<f64> = Normal::new(0.8, 0.1).unwrap().sample_iter(&mut rng).take(10_000).collect();
    let gaussian = d_prime(&bf, &pa).unwrap().value;
    let exact_a = d_prime(&[-1.0, 0.0, 1.0], &[1.0, 2.0, 3.0]).unwrap().value;
    let exact_b = d_prime(&[0.0, 2.0, 4.0], &[2.0, 4.0, 6.0]).unwrap().value;
    let exact_c = d_prime(&[0.3, 0.5, 0.7], &[0.3, 0.5, 0.7]).unwrap().value;
    let exact_err = (exact_a - 2.0).abs().max((exact_b - 1.0).abs()).max(exact_c.abs());
    t.report(
        "d-prime fixture",
        (gaussian - 6.0).abs() <= 0.1 && exact_err <= 1e-12,
        format!("gaussian fixture {gaussian:.4} (6.0 ± 0.1), closed-form max error {exact_err:.1e} (<= 1e-12)"),
    );
}

fn main() {
    let mut t = Tally { failures: 0 };
    gradient_suite(&mut t);
    metric_oracle(&mut t);
    table6_parity(&mut t);
    d_prime_fixture(&mut t);
    let scaled = scaled_experiment(&mut t);
    frequency_suite(&mut t, &scaled);
    gradcam_locality(&mut t, &scaled);
    tsne_suite(&mut t, &scaled);
    determinism(&mut t, &scaled);
    if t.failures > 0 {
        println!("{} criteria failed", t.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
