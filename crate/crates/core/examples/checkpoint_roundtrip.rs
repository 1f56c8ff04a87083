// Saves a model, loads it back, and confirms the scores are bit-identical.
//
// Usage: `cargo run --example checkpoint_roundtrip`

use std::error::Error;

use dnetpad::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use dnetpad::model::{Model, ModelConfig};
use dnetpad::Tensor;

fn main() -> Result<(), Box<dyn Error>> {
    let config = ModelConfig { input_size: 32, block_layers: vec![1, 1, 1], ..ModelConfig::default() };
    let model = Model::new(config, 11)?;
    let batch = Tensor::from_fn(&[4, 1, 32, 32], |i| ((i * 37) % 101) as f64 / 100.0);

    let dir = std::env::temp_dir().join(format!("dnetpad-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&model, CheckpointMeta { epoch: 0, seed: 11 }, &path)?;
    let restored = load_checkpoint(&path)?;
    println!("{} bytes, epoch {}, seed {}", std::fs::metadata(&path)?.len(), restored.meta.epoch, restored.meta.seed);

    let before = model.scores(&batch)?;
    let after = restored.model.scores(&batch)?;
    let identical = before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("scores before {before:.6?}");
    println!("bit-identical after reload: {identical}");
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
