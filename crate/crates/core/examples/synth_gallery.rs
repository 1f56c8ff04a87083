// Renders every iris class for a few seeds, plus the cropped network input.
//
// Usage: `cargo run --example synth_gallery -- [out_dir]`

use std::error::Error;
use std::path::PathBuf;

use dnetpad::pnm::{self, GrayImage};
use dnetpad::synthdata::{crop_and_resize, generate, IrisClass, DEFAULT_IMAGE_SIZE};

fn main() -> Result<(), Box<dyn Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "gallery".into()));
    std::fs::create_dir_all(&out)?;
    for seed in 0..3u64 {
        for class in IrisClass::ALL {
            let img = generate(class, seed, DEFAULT_IMAGE_SIZE)?;
            pnm::write_pgm(&img.image, out.join(format!("{class}_{seed}.pgm")))?;
            let crop = crop_and_resize(&img, 64)?;
            let crop = GrayImage::from_unit(64, 64, crop.data())?;
            pnm::write_pgm(&crop, out.join(format!("{class}_{seed}_crop.pgm")))?;
            println!(
                "{class:>16} seed {seed}: circle ({:.1}, {:.1}, r={:.1}) eye {:?}",
                img.circle.cx, img.circle.cy, img.circle.r, img.eye_side
            );
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
