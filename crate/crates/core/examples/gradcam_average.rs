// Class-average Grad-CAM maps of the attack logit, written as PGM and colour overlays.
//
// Usage: `cargo run --release --example gradcam_average -- [epochs] [out_dir]`

use std::error::Error;
use std::path::PathBuf;

use dnetpad::explain::{average_heatmap, grad_cam_batch, radial_band_mean};
use dnetpad::model::{Model, ModelConfig, PA_CLASS};
use dnetpad::pnm;
use dnetpad::synthdata::{generate_split, prepare_samples, DatasetSpec, IrisClass, Sample, Split, SYNTH};
use dnetpad::train::{train, TrainConfig};
use dnetpad::Tensor;

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "gradcam_out".into()));
    std::fs::create_dir_all(&out)?;

    let spec = DatasetSpec { train: 400, test: 160, seed: 5, image_size: 64 };
    let config = ModelConfig { input_size: 32, block_layers: vec![2, 2, 2], ..ModelConfig::default() };
    let train_set = prepare_samples(&generate_split(&spec, Split::Train)?, config.input_size)?;
    let test_set = prepare_samples(&generate_split(&spec, Split::Test)?, config.input_size)?;
    let cfg = TrainConfig { epochs, seed: 5, ..TrainConfig::default() };
    let (model, _) = train(Model::new(config, 5)?, &train_set, &cfg)?;

    for class in IrisClass::ALL {
        let samples: Vec<Sample> = test_set.iter().filter(|s| s.class == class).cloned().collect();
        for block in 0..model.num_blocks() {
            let maps = grad_cam_batch(&model, &samples, PA_CLASS, block, 1)?;
            let avg = average_heatmap(&maps)?;
            let outer = radial_band_mean(&avg.values, SYNTH.ring_inner, SYNTH.ring_outer)?;
            let inner = radial_band_mean(&avg.values, 0.0, SYNTH.ring_inner)?;
            println!("{class:>16} block {block}: outer/inner {:.2} over {} maps", outer / inner, maps.len());
            avg.write_pgm(&out.join(format!("{class}_block{block}.pgm")))?;
            let mut mean = Tensor::zeros(avg.values.shape());
            for s in &samples {
                for (m, v) in mean.data_mut().iter_mut().zip(s.input.data()) {
                    *m += v / samples.len() as f64;
                }
            }
            pnm::write_ppm(&avg.overlay(&mean)?, out.join(format!("{class}_block{block}.ppm")))?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
