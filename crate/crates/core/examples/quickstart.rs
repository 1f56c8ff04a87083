// Smallest useful loop: synthesize a dataset, train briefly, score the test split.
//
// Usage: `cargo run --example quickstart`

use std::error::Error;

use dnetpad::metrics::EvalReport;
use dnetpad::model::{Model, ModelConfig};
use dnetpad::synthdata::{generate_split, prepare_samples, DatasetSpec, Split};
use dnetpad::train::{evaluate_scores, train, TrainConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let spec = DatasetSpec { train: 96, test: 48, seed: 7, image_size: 64 };
    let config = ModelConfig { input_size: 32, block_layers: vec![2, 2], ..ModelConfig::default() };

    let train_set = prepare_samples(&generate_split(&spec, Split::Train)?, config.input_size)?;
    let test_set = prepare_samples(&generate_split(&spec, Split::Test)?, config.input_size)?;

    let model = Model::new(config, spec.seed)?;
    println!("model has {} parameters", model.num_parameters());
    let cfg = TrainConfig { epochs: 3, seed: spec.seed, ..TrainConfig::default() };
    let (model, log) = train(model, &train_set, &cfg)?;
    for r in &log.epochs {
        println!("epoch {}: loss {:.4}, train accuracy {:.3}", r.epoch, r.mean_loss, r.train_accuracy);
    }

    let scored = evaluate_scores(&model, &test_set, 1)?;
    let report = EvalReport::from_scores(&scored, 0.05, 10)?;
    print!("{}", report.to_text());
    Ok(())
}
