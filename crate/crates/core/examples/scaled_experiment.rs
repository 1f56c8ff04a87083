// End-to-end run at the default scale: generate data, train, evaluate, explain.
//
// Usage: `cargo run --release --example scaled_experiment -- [epochs] [out_dir]`

use std::error::Error;
use std::path::PathBuf;
use std::time::Instant;

use dnetpad::checkpoint::{save_checkpoint, CheckpointMeta};
use dnetpad::explain::{average_heatmap, extract_block_features, grad_cam_batch, radial_band_mean, silhouette_score, tsne, TsneParams};
use dnetpad::freq::{cutoff_sweep, default_cutoffs, default_manipulations, robustness_table, robustness_csv};
use dnetpad::metrics::EvalReport;
use dnetpad::model::{Model, ModelConfig, PA_CLASS};
use dnetpad::synthdata::{generate_split, prepare_samples, DatasetSpec, IrisClass, Split};
use dnetpad::train::{evaluate_scores, train_with_progress, write_scores_csv, TrainConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "scaled_run".into()));
    std::fs::create_dir_all(&out)?;
    let start = Instant::now();

    let spec = DatasetSpec::default();
    let config = ModelConfig::default();
    let train_set = prepare_samples(&generate_split(&spec, Split::Train)?, config.input_size)?;
    let test_set = prepare_samples(&generate_split(&spec, Split::Test)?, config.input_size)?;
    println!("data ready: {} train, {} test ({:.1}s)", train_set.len(), test_set.len(), start.elapsed().as_secs_f64());

    let train_cfg = TrainConfig { epochs, seed: spec.seed, ..TrainConfig::default() };
    let model = Model::new(config, spec.seed)?;
    let (model, log) = train_with_progress(model, &train_set, &train_cfg, |r| {
        println!("epoch {:>3}  loss {:.4}  acc {:.3}  {:.1}s", r.epoch, r.mean_loss, r.train_accuracy, r.wall_seconds);
    })?;
    std::fs::write(out.join("train_log.csv"), log.to_csv())?;
    save_checkpoint(&model, CheckpointMeta { epoch: epochs, seed: spec.seed }, out.join("model.ckpt"))?;

    let scored = evaluate_scores(&model, &test_set, 1)?;
    write_scores_csv(&scored, &out.join("scores.csv"))?;
    let report = EvalReport::from_scores(&scored, 0.01, 20)?;
    std::fs::write(out.join("report.csv"), report.to_csv())?;
    print!("{}", report.to_text().lines().take(6).collect::<Vec<_>>().join("\n"));
    println!();

    let cosmetic: Vec<_> = test_set.iter().filter(|s| s.class == IrisClass::CosmeticContact).cloned().collect();
    for block in [2, 3] {
        let maps = grad_cam_batch(&model, &cosmetic, PA_CLASS, block, 1)?;
        let avg = average_heatmap(&maps)?;
        let bands: Vec<String> = [(0.0, 0.3), (0.3, 0.62), (0.62, 0.98), (0.98, 1.5)]
            .iter()
            .map(|&(a, b)| Ok::<_, dnetpad::Error>(format!("{:.3}", radial_band_mean(&avg.values, a, b)?)))
            .collect::<Result<_, _>>()?;
        println!("grad-cam block {block}: radial band means {}", bands.join(" / "));
        avg.write_pgm(&out.join(format!("gradcam_cosmetic_block{block}.pgm")))?;
    }

    let labels: Vec<usize> = test_set.iter().map(|s| s.label()).collect();
    for block in [0, 3] {
        let feats = extract_block_features(&model, &test_set, block, 1)?;
        let emb = tsne(&feats, &labels, &TsneParams { seed: 1, ..TsneParams::default() })?;
        println!("t-SNE block {block}: silhouette {:.3}, KL {:.3}", silhouette_score(&emb.coords, &labels)?, emb.kl);
    }

    let sweep = cutoff_sweep(&model, "scaled", &test_set, &default_cutoffs(64), 0.01, 1)?;
    println!("sweep baseline {:.3}: {:?}", sweep.baseline_tdr, sweep.points.iter().map(|p| (p.cutoff, p.tdr)).collect::<Vec<_>>());
    let table = robustness_table(&model, &test_set, &default_manipulations(64), 0.01, 7, 1)?;
    print!("{}", robustness_csv(&table));
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
