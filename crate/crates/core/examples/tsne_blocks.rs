// Embeds the output of every dense block with t-SNE and reports how well
// bonafide and attack samples separate at each depth.
//
// Usage: `cargo run --release --example tsne_blocks -- [epochs] [out_dir]`

use std::error::Error;
use std::path::PathBuf;

use dnetpad::explain::{embedding_csv, extract_block_features, silhouette_score, tsne, TsneParams};
use dnetpad::model::{Model, ModelConfig};
use dnetpad::synthdata::{generate_split, prepare_samples, DatasetSpec, Split};
use dnetpad::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "tsne_out".into()));
    std::fs::create_dir_all(&out)?;

    let spec = DatasetSpec { train: 400, test: 120, seed: 3, image_size: 64 };
    let config = ModelConfig { input_size: 32, block_layers: vec![2, 2, 2], ..ModelConfig::default() };
    let train_set = prepare_samples(&generate_split(&spec, Split::Train)?, config.input_size)?;
    let test_set = prepare_samples(&generate_split(&spec, Split::Test)?, config.input_size)?;
    let cfg = TrainConfig { epochs, seed: 3, ..TrainConfig::default() };
    let (model, _) = train(Model::new(config, 3)?, &train_set, &cfg)?;

    let labels: Vec<usize> = test_set.iter().map(|s| s.label()).collect();
    for block in 0..model.num_blocks() {
        let features = extract_block_features(&model, &test_set, block, 1)?;
        let mut emb = tsne(&features, &labels, &TsneParams { seed: 1, ..TsneParams::default() })?;
        emb.block = Some(block);
        std::fs::write(out.join(format!("block{block}.csv")), embedding_csv(&emb))?;
        println!(
            "block {block}: {} features, KL {:.3}, silhouette {:.3}",
            features[0].len(),
            emb.kl,
            silhouette_score(&emb.coords, &labels)?
        );
    }
    Ok(())
}
