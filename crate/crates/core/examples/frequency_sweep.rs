// Low-pass filtering of one iris at several cutoffs, with spectra, followed by
// a cutoff sweep and a robustness table for a briefly trained model.
//
// Usage: `cargo run --release --example frequency_sweep -- [epochs] [out_dir]`

use std::error::Error;
use std::path::PathBuf;

use dnetpad::freq::{
    cutoff_sweep, default_manipulations, fft2_centered, max_radius, radial_filter, robustness_csv, robustness_table,
    FilterMode,
};
use dnetpad::model::{Model, ModelConfig};
use dnetpad::pnm::{self, GrayImage};
use dnetpad::synthdata::{crop_and_resize, generate, generate_split, prepare_samples, DatasetSpec, IrisClass, Split};
use dnetpad::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "freq_out".into()));
    std::fs::create_dir_all(&out)?;

    let size = 64;
    let eye = crop_and_resize(&generate(IrisClass::Bonafide, 1, 96)?, size)?.reshape(&[size, size])?;
    for cutoff in [3.0, 6.0, 9.0, 14.0] {
        let low = radial_filter(&eye, cutoff, FilterMode::Low)?;
        let high = radial_filter(&eye, cutoff, FilterMode::High)?;
        pnm::write_pgm(&GrayImage::from_unit(size, size, low.data())?, out.join(format!("low_{cutoff}.pgm")))?;
        pnm::write_pgm(&GrayImage::from_unit(size, size, high.data())?, out.join(format!("high_{cutoff}.pgm")))?;
        pnm::write_pgm(&fft2_centered(&low)?.log_magnitude_image()?, out.join(format!("low_{cutoff}_spectrum.pgm")))?;
    }
    pnm::write_pgm(&fft2_centered(&eye)?.log_magnitude_image()?, out.join("spectrum.pgm"))?;

    let spec = DatasetSpec { train: 400, test: 160, seed: 9, image_size: 96 };
    let config = ModelConfig { input_size: 32, block_layers: vec![2, 2, 2], ..ModelConfig::default() };
    let train_set = prepare_samples(&generate_split(&spec, Split::Train)?, config.input_size)?;
    let test_set = prepare_samples(&generate_split(&spec, Split::Test)?, config.input_size)?;
    let (model, _) = train(Model::new(config, 9)?, &train_set, &TrainConfig { epochs, seed: 9, ..TrainConfig::default() })?;

    let cutoffs = [2.0, 3.0, 5.0, 7.0, max_radius(32, 32)];
    let sweep = cutoff_sweep(&model, "example", &test_set, &cutoffs, 0.05, 1)?;
    print!("{}", sweep.to_csv());
    let table = robustness_table(&model, &test_set, &default_manipulations(32), 0.05, 0, 1)?;
    print!("{}", robustness_csv(&table));
    Ok(())
}
