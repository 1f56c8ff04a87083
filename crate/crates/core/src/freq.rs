//! Spatial-frequency analysis: centred 2-D FFT, ideal radial filters, noise, and
//! robustness sweeps of a trained model.

use std::fmt::{self, Write as _};

use num_complex::Complex64;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{Model, PA_CLASS};
use crate::par;
use crate::pnm::GrayImage;
use crate::synthdata::Sample;
use crate::tensor::Tensor;
use crate::train;

/// Image size the paper's cutoffs refer to.
pub const REFERENCE_SIZE: usize = 224;
pub const PAPER_CUTOFFS: [f64; 3] = [20.0, 30.0, 50.0];
pub const DEFAULT_SALT_PEPPER: f64 = 0.02;
pub const DEFAULT_SIGMA: f64 = 0.1;

/// A DC-centred complex spectrum, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    /// Distance of the farthest bin from DC.
    pub fn max_radius(&self) -> f64 {
        max_radius(self.height, self.width)
    }

    /// `ln(1 + |F|)` scaled to [0, 1].
    pub fn log_magnitude_image(&self) -> Result<GrayImage> {
        let mut v: Vec<f64> = self.bins.iter().map(|c| c.norm().ln_1p()).collect();
        let max = v.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            v.iter_mut().for_each(|x| *x /= max);
        }
        GrayImage::from_unit(self.width, self.height, &v)
    }
}

pub fn max_radius(height: usize, width: usize) -> f64 {
    ((height / 2) as f64).hypot((width / 2) as f64)
}

/// Distance of centred bin `(y, x)` from DC.
fn bin_radius(y: usize, x: usize, height: usize, width: usize) -> f64 {
    (y as f64 - (height / 2) as f64).hypot(x as f64 - (width / 2) as f64)
}

fn fft2_in_place(bins: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in bins.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = bins[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            bins[y * width + x] = column[y];
        }
    }
}

/// Moves index 0 to the centre (`shift`) or back (`!shift`).
fn roll(bins: &[Complex64], height: usize, width: usize, shift: bool) -> Vec<Complex64> {
    let (dy, dx) = if shift { (height / 2, width / 2) } else { (height - height / 2, width - width / 2) };
    let mut out = vec![Complex64::default(); bins.len()];
    for y in 0..height {
        for x in 0..width {
            out[((y + dy) % height) * width + (x + dx) % width] = bins[y * width + x];
        }
    }
    out
}

/// Forward 2-D DFT of an `[H,W]` image with DC moved to `(H/2, W/2)`.
pub fn fft2_centered(image: &Tensor) -> Result<Spectrum> {
    let (height, width) = image.dims2()?;
    let mut bins: Vec<Complex64> = image.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut bins, height, width, false);
    Ok(Spectrum { height, width, bins: roll(&bins, height, width, true) })
}

/// Inverse of [`fft2_centered`]; returns the real part.
pub fn ifft2_centered(spectrum: &Spectrum) -> Result<Tensor> {
    let (h, w) = (spectrum.height, spectrum.width);
    if spectrum.bins.len() != h * w {
        return Err(Error::shape(format!("spectrum has {} bins, expected {h}x{w}", spectrum.bins.len())));
    }
    let mut bins = roll(&spectrum.bins, h, w, false);
    fft2_in_place(&mut bins, h, w, true);
    let scale = 1.0 / (h * w) as f64;
    Tensor::new(&[h, w], bins.iter().map(|c| c.re * scale).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Keep bins within the cutoff radius.
    Low,
    /// Keep bins beyond the cutoff radius.
    High,
}

/// Ideal radial filter without clamping, so low and high parts sum to the input.
pub fn radial_filter_raw(image: &Tensor, cutoff: f64, mode: FilterMode) -> Result<Tensor> {
    if !(cutoff >= 0.0) {
        return Err(Error::input(format!("cutoff {cutoff} must be >= 0")));
    }
    let (h, w) = image.dims2()?;
    if mode == FilterMode::Low && cutoff >= max_radius(h, w) {
        return Ok(image.clone());
    }
    let mut spectrum = fft2_centered(image)?;
    for y in 0..h {
        for x in 0..w {
            let inside = bin_radius(y, x, h, w) <= cutoff;
            if inside != (mode == FilterMode::Low) {
                spectrum.bins[y * w + x] = Complex64::default();
            }
        }
    }
    ifft2_centered(&spectrum)
}

/// Ideal radial filter, clamped back to [0, 1].
pub fn radial_filter(image: &Tensor, cutoff: f64, mode: FilterMode) -> Result<Tensor> {
    Ok(radial_filter_raw(image, cutoff, mode)?.map(|v| v.clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    SaltPepper { density: f64 },
    Gaussian { sigma: f64 },
}

/// Applies `noise` to an image with values in [0, 1].
pub fn add_noise(image: &Tensor, noise: Noise, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    match noise {
        Noise::SaltPepper { density } => {
            if !(0.0..=1.0).contains(&density) {
                return Err(Error::input(format!("salt-and-pepper density {density} outside [0, 1]")));
            }
            let n = out.len();
            let count = (density * n as f64).round() as usize;
            let salt = count.div_ceil(2);
            for (k, i) in index::sample(&mut rng, n, count).into_iter().enumerate() {
                out.data_mut()[i] = if k < salt { 1.0 } else { 0.0 };
            }
        }
        Noise::Gaussian { sigma } => {
            if !(sigma >= 0.0) || !sigma.is_finite() {
                return Err(Error::input(format!("gaussian sigma {sigma} must be finite and >= 0")));
            }
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                for v in out.data_mut() {
                    *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(out)
}

/// A test-time image manipulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Manipulation {
    Identity,
    LowPass(f64),
    HighPass(f64),
    Noise(Noise),
}

impl fmt::Display for Manipulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Manipulation::Identity => write!(f, "identity"),
            Manipulation::LowPass(c) => write!(f, "lowpass_{c}"),
            Manipulation::HighPass(c) => write!(f, "highpass_{c}"),
            Manipulation::Noise(Noise::SaltPepper { density }) => write!(f, "salt_pepper_{density}"),
            Manipulation::Noise(Noise::Gaussian { sigma }) => write!(f, "gaussian_{sigma}"),
        }
    }
}

impl Manipulation {
    /// Applies the manipulation to one `[1,1,S,S]` network input.
    pub fn apply(&self, input: &Tensor, seed: u64) -> Result<Tensor> {
        let shape = input.shape().to_vec();
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let plane = input.clone().reshape(&[h, w])?;
        let out = match *self {
            Manipulation::Identity => plane,
            Manipulation::LowPass(c) => radial_filter(&plane, c, FilterMode::Low)?,
            Manipulation::HighPass(c) => radial_filter(&plane, c, FilterMode::High)?,
            Manipulation::Noise(n) => add_noise(&plane, n, seed)?,
        };
        out.reshape(&shape)
    }
}

/// Paper cutoffs scaled from 224-pixel inputs to `input_size`, rounded to whole bins.
pub fn default_cutoffs(input_size: usize) -> Vec<f64> {
    PAPER_CUTOFFS
        .iter()
        .map(|c| (c * input_size as f64 / REFERENCE_SIZE as f64).round())
        .collect()
}

pub fn default_manipulations(input_size: usize) -> Vec<Manipulation> {
    let mut m: Vec<Manipulation> = default_cutoffs(input_size).into_iter().map(Manipulation::LowPass).collect();
    m.push(Manipulation::Noise(Noise::SaltPepper { density: DEFAULT_SALT_PEPPER }));
    m.push(Manipulation::Noise(Noise::Gaussian { sigma: DEFAULT_SIGMA }));
    m
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index as u64
}

/// Manipulated copies of `samples`; noise is seeded per sample from `seed`.
pub fn manipulate(samples: &[Sample], m: Manipulation, seed: u64, jobs: usize) -> Result<Vec<Sample>> {
    let indexed: Vec<(usize, &Sample)> = samples.iter().enumerate().collect();
    par::map_ordered(&indexed, jobs, |&(i, s)| {
        Ok(Sample { id: s.id.clone(), class: s.class, input: m.apply(&s.input, sample_seed(seed, i))? })
    })
    .into_iter()
    .collect()
}

fn operating_point(model: &Model, samples: &[Sample], target_fdr: f64, jobs: usize) -> Result<metrics::OperatingPoint> {
    let scored = train::evaluate_scores(model, samples, jobs)?;
    let (pa, bonafide): (Vec<_>, Vec<_>) = scored.iter().partition(|s| s.label == PA_CLASS);
    let pa: Vec<f64> = pa.iter().map(|s| s.score).collect();
    let bonafide: Vec<f64> = bonafide.iter().map(|s| s.score).collect();
    metrics::tdr_at_fdr(&bonafide, &pa, target_fdr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub cutoff: f64,
    /// The same radius expressed for a 224-pixel input.
    pub reference_cutoff: f64,
    pub tdr: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub model_id: String,
    pub target_fdr: f64,
    pub baseline_tdr: f64,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cutoff,reference_cutoff,tdr,threshold,baseline_tdr\n");
        for p in &self.points {
            writeln!(out, "{},{},{},{},{}", p.cutoff, p.reference_cutoff, p.tdr, p.threshold, self.baseline_tdr).unwrap();
        }
        out
    }
}

/// TDR at `target_fdr` after low-pass filtering every test image at each cutoff,
/// reselecting the threshold on the filtered bonafide scores.
pub fn cutoff_sweep(
    model: &Model,
    model_id: &str,
    samples: &[Sample],
    cutoffs: &[f64],
    target_fdr: f64,
    jobs: usize,
) -> Result<SweepResult> {
    if cutoffs.is_empty() {
        return Err(Error::input("cutoff list is empty"));
    }
    if let Some(w) = cutoffs.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::input(format!("cutoffs must be strictly increasing, got {} then {}", w[0], w[1])));
    }
    let baseline = operating_point(model, samples, target_fdr, jobs)?;
    let size = model.config().input_size;
    let mut points = Vec::with_capacity(cutoffs.len());
    for &cutoff in cutoffs {
        let filtered = manipulate(samples, Manipulation::LowPass(cutoff), 0, jobs)?;
        let op = operating_point(model, &filtered, target_fdr, jobs)?;
        points.push(SweepPoint {
            cutoff,
            reference_cutoff: cutoff * REFERENCE_SIZE as f64 / size as f64,
            tdr: op.tdr,
            threshold: op.threshold,
        });
    }
    Ok(SweepResult { model_id: model_id.to_string(), target_fdr, baseline_tdr: baseline.tdr, points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub name: String,
    pub tdr: f64,
    /// Percent drop from the unmanipulated TDR.
    pub relative_decrease: f64,
}

/// TDR and relative decrease per manipulation; the first row is the unmanipulated baseline.
pub fn robustness_table(
    model: &Model,
    samples: &[Sample],
    manipulations: &[Manipulation],
    target_fdr: f64,
    seed: u64,
    jobs: usize,
) -> Result<Vec<RobustnessRow>> {
    let base = operating_point(model, samples, target_fdr, jobs)?.tdr;
    let mut rows = vec![RobustnessRow { name: "original".into(), tdr: base, relative_decrease: 0.0 }];
    for &m in manipulations {
        let changed = manipulate(samples, m, seed, jobs)?;
        let tdr = operating_point(model, &changed, target_fdr, jobs)?.tdr;
        rows.push(RobustnessRow { name: m.to_string(), tdr, relative_decrease: metrics::relative_decrease(base, tdr)? });
    }
    Ok(rows)
}

pub fn robustness_csv(rows: &[RobustnessRow]) -> String {
    let mut out = String::from("manipulation,tdr,relative_decrease_pct\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.name, r.tdr, r.relative_decrease).unwrap();
    }
    out
}
