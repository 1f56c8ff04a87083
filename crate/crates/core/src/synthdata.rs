//! Procedural bonafide and presentation-attack iris images, plus the
//! crop/resize step and loaders for on-disk datasets.
//!
//! Every image is a pure function of `(class, seed, size)`. The geometry
//! (iris circle, pupil, eye side, highlight) is drawn from the seed before
//! anything class specific, so the four classes rendered from one seed share
//! the same eye and differ only in their texture treatment.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{BONAFIDE_CLASS, PA_CLASS};
use crate::pnm::{self, GrayImage};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IrisClass {
    Bonafide,
    Print,
    ArtificialEye,
    CosmeticContact,
}

impl IrisClass {
    pub const ALL: [IrisClass; 4] = [
        IrisClass::Bonafide,
        IrisClass::Print,
        IrisClass::ArtificialEye,
        IrisClass::CosmeticContact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IrisClass::Bonafide => "bonafide",
            IrisClass::Print => "print",
            IrisClass::ArtificialEye => "artificial_eye",
            IrisClass::CosmeticContact => "cosmetic_contact",
        }
    }

    pub fn is_attack(self) -> bool {
        self != IrisClass::Bonafide
    }

    /// 0 for bonafide, 1 for any presentation attack.
    pub fn binary_label(self) -> usize {
        if self.is_attack() {
            PA_CLASS
        } else {
            BONAFIDE_CLASS
        }
    }
}

impl fmt::Display for IrisClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IrisClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        IrisClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::input(format!("unknown class {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EyeSide {
    Left,
    Right,
}

impl EyeSide {
    pub fn name(self) -> &'static str {
        match self {
            EyeSide::Left => "left",
            EyeSide::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrisCircle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub class: IrisClass,
    pub circle: IrisCircle,
    /// Known for generated images; loaded images carry no eye-side information.
    pub eye_side: Option<EyeSide>,
    pub seed: Option<u64>,
    /// File path or `seed:<n>`.
    pub source: String,
    /// True when no circle sidecar existed and the full image was assumed.
    pub circle_assumed: bool,
}

impl LabeledImage {
    pub fn binary_label(&self) -> usize {
        self.class.binary_label()
    }
}

/// Fixed constants of the texture generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    /// Octaves of angular/radial value noise in bonafide irises.
    pub bonafide_octaves: u32,
    /// Octaves kept for artificial eyes.
    pub artificial_octaves: u32,
    /// Angular lattice cells of the coarsest octave (doubles per octave).
    pub angular_cells: usize,
    /// Radial lattice cells of the coarsest octave (doubles per octave).
    pub radial_cells: usize,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
    /// Halftone screen pitch in pixels.
    pub halftone_pitch: usize,
    /// Blend weight of the halftone dot screen over the cell mean.
    pub halftone_strength: f64,
    /// Printed-lens ring as fractions of the iris radius.
    pub ring_inner: f64,
    pub ring_outer: f64,
    /// Blend weight of the printed-lens pattern.
    pub ring_contrast: f64,
    pub ring_spokes: usize,
    pub ring_bands: usize,
}

pub const SYNTH: SynthParams = SynthParams {
    bonafide_octaves: 5,
    artificial_octaves: 2,
    angular_cells: 10,
    radial_cells: 2,
    persistence: 0.85,
    halftone_pitch: 4,
    halftone_strength: 0.55,
    ring_inner: 0.62,
    ring_outer: 0.98,
    ring_contrast: 0.6,
    ring_spokes: 20,
    ring_bands: 3,
};

pub const MIN_SIZE: usize = 32;
pub const DEFAULT_IMAGE_SIZE: usize = 96;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Lattice value in `[-1, 1)`.
fn lattice(seed: u64, octave: u32, i: i64, j: i64) -> f64 {
    let h = splitmix64(
        seed ^ splitmix64((octave as u64) << 40 ^ (i as u64).wrapping_mul(0x1f1f_1f1f) ^ (j as u64) << 20),
    );
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise, periodic with `period` cells along `u`.
fn value_noise(seed: u64, octave: u32, u: f64, v: f64, period: i64) -> f64 {
    let (iu, iv) = (u.floor(), v.floor());
    let (fu, fv) = (smooth(u - iu), smooth(v - iv));
    let (iu, iv) = (iu as i64, iv as i64);
    let wrap = |i: i64| i.rem_euclid(period);
    let a = lattice(seed, octave, wrap(iu), iv);
    let b = lattice(seed, octave, wrap(iu + 1), iv);
    let c = lattice(seed, octave, wrap(iu), iv + 1);
    let d = lattice(seed, octave, wrap(iu + 1), iv + 1);
    let top = a + fu * (b - a);
    let bottom = c + fu * (d - c);
    top + fv * (bottom - top)
}

/// Multi-octave polar texture; `angle` in `[0,1)`, `radial` in `[0,1]`.
///
/// Amplitudes are normalized over the full bonafide octave count, so
/// rendering fewer octaves removes the fine detail without boosting the rest.
fn iris_texture(seed: u64, octaves: u32, angle: f64, radial: f64) -> f64 {
    let norm: f64 = (0..SYNTH.bonafide_octaves).map(|o| SYNTH.persistence.powi(o as i32)).sum();
    let mut sum = 0.0;
    let mut amp = 1.0;
    for o in 0..octaves {
        let scale = (1usize << o) as f64;
        let cells = (SYNTH.angular_cells << o) as i64;
        sum += amp * value_noise(seed, o, angle * cells as f64, radial * SYNTH.radial_cells as f64 * scale, cells);
        amp *= SYNTH.persistence;
    }
    sum / norm
}

/// Per-seed eye geometry and appearance shared by every class.
struct Eye {
    circle: IrisCircle,
    pupil_r: f64,
    side: EyeSide,
    iris_level: f64,
    iris_contrast: f64,
    sclera_level: f64,
    texture_seed: u64,
    ring_phase: f64,
}

impl Eye {
    fn draw(seed: u64, size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = size as f64;
        let side = if rng.gen_bool(0.5) { EyeSide::Left } else { EyeSide::Right };
        let r = s * rng.gen_range(0.34..0.40);
        let slack = (s / 2.0 - r - 1.0).max(0.0).min(0.06 * s);
        let round3 = |v: f64| (v * 1000.0).round() / 1000.0;
        let circle = IrisCircle {
            cx: round3(s / 2.0 + rng.gen_range(-slack..=slack)),
            cy: round3(s / 2.0 + rng.gen_range(-slack..=slack)),
            r: round3(r),
        };
        Self {
            circle,
            pupil_r: circle.r * rng.gen_range(0.28..0.42),
            side,
            iris_level: rng.gen_range(0.32..0.52),
            iris_contrast: rng.gen_range(0.22..0.32),
            sclera_level: rng.gen_range(0.68..0.80),
            texture_seed: rng.gen(),
            ring_phase: rng.gen_range(0.0..1.0),
        }
    }

    /// Renders the eye with the given number of texture octaves.
    fn render(&self, size: usize, octaves: u32) -> Vec<f64> {
        let IrisCircle { cx, cy, r } = self.circle;
        let sign = match self.side {
            EyeSide::Left => -1.0,
            EyeSide::Right => 1.0,
        };
        let (hx, hy) = (cx + sign * 0.45 * self.pupil_r, cy - 0.35 * self.pupil_r);
        let hr = 0.3 * self.pupil_r;
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let d = (dx * dx + dy * dy).sqrt();
                let sclera = self.sclera_level
                    + 0.05 * value_noise(self.texture_seed ^ 0x5c1e, 0, x as f64 / 24.0, y as f64 / 24.0, i64::MAX);
                let angle = (dy.atan2(dx) / (2.0 * PI)).rem_euclid(1.0);
                let radial = ((d - self.pupil_r) / (r - self.pupil_r)).clamp(0.0, 1.0);
                let tex = iris_texture(self.texture_seed, octaves, angle, radial);
                let limbus = 0.15 * smooth(((radial - 0.8) / 0.2).clamp(0.0, 1.0));
                let iris = self.iris_level + self.iris_contrast * tex - limbus;
                let pupil = 0.06;
                // Anti-aliased boundaries.
                let in_iris = (r - d + 0.5).clamp(0.0, 1.0);
                let in_pupil = (self.pupil_r - d + 0.5).clamp(0.0, 1.0);
                let mut v = sclera + in_iris * (iris - sclera);
                v += in_pupil * (pupil - v);
                let hd = ((x as f64 + 0.5 - hx).powi(2) + (y as f64 + 0.5 - hy).powi(2)).sqrt();
                let glint = (hr + 0.75 - hd).clamp(0.0, 1.0);
                v += glint * (0.97 - v);
                out.push(v.clamp(0.0, 1.0));
            }
        }
        out
    }
}

/// Clustered-dot halftone: cell means rendered through a dot screen.
fn halftone(values: &[f64], size: usize) -> Vec<f64> {
    let p = SYNTH.halftone_pitch;
    let mut out = vec![0.0; values.len()];
    for cy in (0..size).step_by(p) {
        for cx in (0..size).step_by(p) {
            let (h, w) = (p.min(size - cy), p.min(size - cx));
            let mut mean = 0.0;
            for y in cy..cy + h {
                for x in cx..cx + w {
                    mean += values[y * size + x];
                }
            }
            mean /= (h * w) as f64;
            let half = p as f64 / 2.0;
            for y in cy..cy + h {
                for x in cx..cx + w {
                    let (dx, dy) = ((x - cx) as f64 + 0.5 - half, (y - cy) as f64 + 0.5 - half);
                    let dist = (dx * dx + dy * dy).sqrt() / (half * std::f64::consts::SQRT_2);
                    let ink = dist < (1.0 - mean).max(0.0).sqrt();
                    let dot = if ink { 0.1 } else { 0.85 };
                    out[y * size + x] = mean + SYNTH.halftone_strength * (dot - mean);
                }
            }
        }
    }
    out
}

/// Overlays the high-contrast printed-lens checker in the outer iris annulus.
fn printed_ring(values: &mut [f64], size: usize, eye: &Eye) {
    let IrisCircle { cx, cy, r } = eye.circle;
    let (inner, outer) = (SYNTH.ring_inner * r, SYNTH.ring_outer * r);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let d = (dx * dx + dy * dy).sqrt();
            let taper = (d - inner + 0.5).clamp(0.0, 1.0) * (outer - d + 0.5).clamp(0.0, 1.0);
            if taper == 0.0 {
                continue;
            }
            let angle = (dy.atan2(dx) / (2.0 * PI)).rem_euclid(1.0);
            let a = (angle * SYNTH.ring_spokes as f64 + eye.ring_phase).floor() as i64;
            let b = ((d - inner) / (outer - inner) * SYNTH.ring_bands as f64).floor() as i64;
            let pattern = if (a + b).rem_euclid(2) == 0 { 0.9 } else { 0.12 };
            let v = &mut values[y * size + x];
            *v += SYNTH.ring_contrast * taper * (pattern - *v);
        }
    }
}

/// Renders one labeled image; deterministic in `(class, seed, size)`.
pub fn generate(class: IrisClass, seed: u64, size: usize) -> Result<LabeledImage> {
    if size < MIN_SIZE {
        return Err(Error::input(format!("image size {size} below minimum {MIN_SIZE}")));
    }
    let eye = Eye::draw(seed, size);
    let values = match class {
        IrisClass::Bonafide => eye.render(size, SYNTH.bonafide_octaves),
        IrisClass::ArtificialEye => eye.render(size, SYNTH.artificial_octaves),
        IrisClass::Print => halftone(&eye.render(size, SYNTH.bonafide_octaves), size),
        IrisClass::CosmeticContact => {
            let mut v = eye.render(size, SYNTH.bonafide_octaves);
            printed_ring(&mut v, size, &eye);
            v
        }
    };
    Ok(LabeledImage {
        image: GrayImage::from_unit(size, size, &values)?,
        class,
        circle: eye.circle,
        eye_side: Some(eye.side),
        seed: Some(seed),
        source: format!("seed:{seed}"),
        circle_assumed: false,
    })
}

/// Crops a tight `2r` square around the iris (shifted to stay inside the
/// image) and bilinearly resizes it to `[1,1,out,out]` with values in `[0,1]`.
pub fn crop_and_resize(img: &LabeledImage, out_size: usize) -> Result<Tensor> {
    let IrisCircle { cx, cy, r } = img.circle;
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::input(format!("degenerate iris radius {r} for {}", img.source)));
    }
    if out_size == 0 {
        return Err(Error::input("output size must be positive"));
    }
    let side = ((2.0 * r).round() as usize).max(1);
    let span = |center: f64, len: usize| -> (usize, usize) {
        if side >= len {
            return (0, len);
        }
        let start = (center - r).round().clamp(0.0, (len - side) as f64) as usize;
        (start, side)
    };
    let (x0, w) = span(cx, img.image.width);
    let (y0, h) = span(cy, img.image.height);
    let src = &img.image;
    let px = |x: usize, y: usize| src.get(x, y) as f64 / 255.0;
    let coord = |i: usize, start: usize, len: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) * len as f64 / out_size as f64 - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (start + i0, start + i1, s - i0 as f64)
    };
    let mut data = Vec::with_capacity(out_size * out_size);
    for oy in 0..out_size {
        let (ya, yb, fy) = coord(oy, y0, h);
        for ox in 0..out_size {
            let (xa, xb, fx) = coord(ox, x0, w);
            let top = px(xa, ya) + fx * (px(xb, ya) - px(xa, ya));
            let bottom = px(xa, yb) + fx * (px(xb, yb) - px(xa, yb));
            data.push((top + fy * (bottom - top)).clamp(0.0, 1.0));
        }
    }
    Tensor::new(&[1, 1, out_size, out_size], data)
}

/// A network-ready sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub class: IrisClass,
    /// `[1,1,S,S]` in `[0,1]`.
    pub input: Tensor,
}

impl Sample {
    pub fn label(&self) -> usize {
        self.class.binary_label()
    }
}

pub fn prepare_samples(images: &[LabeledImage], out_size: usize) -> Result<Vec<Sample>> {
    images
        .iter()
        .map(|img| {
            Ok(Sample {
                id: img.source.clone(),
                class: img.class,
                input: crop_and_resize(img, out_size)?,
            })
        })
        .collect()
}

/// Parameters of a generated train/test dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSpec {
    pub train: usize,
    pub test: usize,
    pub seed: u64,
    pub image_size: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            train: 1200,
            test: 400,
            seed: 42,
            image_size: DEFAULT_IMAGE_SIZE,
        }
    }
}

impl DatasetSpec {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Test => self.test,
        }
    }
}

/// Per-split summary, in the role of a dataset split table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: Split,
    /// Counts in [`IrisClass::ALL`] order.
    pub counts: [usize; 4],
    pub seed: u64,
    pub image_size: usize,
}

/// Half bonafide (rounded up), the rest split evenly over the three attack classes.
pub fn class_counts(total: usize) -> [usize; 4] {
    let bonafide = total.div_ceil(2);
    let attacks = total - bonafide;
    let base = attacks / 3;
    let extra = attacks % 3;
    [
        bonafide,
        base + usize::from(extra > 0),
        base + usize::from(extra > 1),
        base,
    ]
}

/// Per-sample seed; train and test draw from disjoint (even/odd) streams.
pub fn sample_seed(seed: u64, split: Split, index: usize) -> u64 {
    let parity = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    (seed << 32).wrapping_add(2 * index as u64 + parity)
}

pub fn manifest(spec: &DatasetSpec, split: Split) -> DatasetManifest {
    DatasetManifest {
        split,
        counts: class_counts(spec.count(split)),
        seed: spec.seed,
        image_size: spec.image_size,
    }
}

/// Generates one split in class order (all bonafide first, then each attack class).
pub fn generate_split(spec: &DatasetSpec, split: Split) -> Result<Vec<LabeledImage>> {
    let counts = class_counts(spec.count(split));
    let mut out = Vec::with_capacity(spec.count(split));
    for (class, &count) in IrisClass::ALL.iter().zip(&counts) {
        for _ in 0..count {
            let seed = sample_seed(spec.seed, split, out.len());
            out.push(generate(*class, seed, spec.image_size)?);
        }
    }
    Ok(out)
}

fn format_circle(c: &IrisCircle) -> String {
    format!("{:.3} {:.3} {:.3}", c.cx, c.cy, c.r)
}

/// Writes `<out>/<split>/<class>/<index>.pgm` with `.circle` sidecars and `<out>/manifest.csv`.
///
/// Refuses to touch an existing non-empty directory unless `force` is set.
pub fn write_dataset(spec: &DatasetSpec, out: &Path, force: bool) -> Result<Vec<DatasetManifest>> {
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .map_err(|e| Error::io(out, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::input(format!(
                "{} exists and is not empty; pass --force to overwrite",
                out.display()
            )));
        }
        if non_empty {
            for split in [Split::Train, Split::Test] {
                let dir = out.join(split.name());
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                }
            }
        }
    }
    let mut rows = String::from("path,label,split,cx,cy,r,eye_side\n");
    let mut manifests = Vec::new();
    for split in [Split::Train, Split::Test] {
        let images = generate_split(spec, split)?;
        for (i, img) in images.iter().enumerate() {
            let rel = format!("{}/{}/{i:05}.pgm", split.name(), img.class.name());
            let path = out.join(&rel);
            let dir = path.parent().expect("has parent");
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            pnm::write_pgm(&img.image, &path)?;
            let sidecar = path.with_extension("circle");
            fs::write(&sidecar, format_circle(&img.circle) + "\n").map_err(|e| Error::io(&sidecar, e))?;
            rows.push_str(&format!(
                "{rel},{},{},{:.3},{:.3},{:.3},{}\n",
                img.class.name(),
                split.name(),
                img.circle.cx,
                img.circle.cy,
                img.circle.r,
                img.eye_side.map_or("unknown", EyeSide::name)
            ));
        }
        manifests.push(manifest(spec, split));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("manifest.csv");
    fs::write(&path, rows).map_err(|e| Error::io(&path, e))?;
    Ok(manifests)
}

/// A file that could not be loaded.
#[derive(Debug)]
pub struct LoadIssue {
    pub path: PathBuf,
    pub error: Error,
}

#[derive(Debug, Default)]
pub struct LoadedDir {
    pub images: Vec<LabeledImage>,
    /// Files ignored because they are not images or not under a class folder.
    pub skipped: usize,
    pub issues: Vec<LoadIssue>,
}

pub fn parse_circle(text: &str) -> Result<IrisCircle> {
    let nums: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::format("circle", format!("bad number {t:?}"))))
        .collect::<Result<_>>()?;
    match nums[..] {
        [cx, cy, r] => Ok(IrisCircle { cx, cy, r }),
        _ => Err(Error::format("circle", format!("expected \"cx cy r\", got {text:?}"))),
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn load_one(path: &Path, class: IrisClass) -> Result<LabeledImage> {
    let image = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => pnm::read_png(path)?,
        _ => pnm::read_pgm(path)?,
    };
    let sidecar = path.with_extension("circle");
    let (circle, circle_assumed) = if sidecar.exists() {
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        (parse_circle(&text)?, false)
    } else {
        let (w, h) = (image.width as f64, image.height as f64);
        (
            IrisCircle {
                cx: w / 2.0,
                cy: h / 2.0,
                r: w.min(h) / 2.0,
            },
            true,
        )
    };
    Ok(LabeledImage {
        image,
        class,
        circle,
        eye_side: None,
        seed: None,
        source: path.display().to_string(),
        circle_assumed,
    })
}

/// Loads `<split>/<class>/<name>.pgm|png` trees (or `<class>/<name>` below a split directory).
///
/// The class comes from the image's parent folder. With `split` set, only
/// files below a directory of that name are read. Unreadable files are
/// collected in [`LoadedDir::issues`] instead of aborting.
pub fn load_dir(root: &Path, split: Option<&str>) -> Result<LoadedDir> {
    let mut files = Vec::new();
    collect_files(root, &mut files).map_err(|e| Error::io(root, e))?;
    let mut out = LoadedDir::default();
    for path in files {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let is_manifest = path.parent() == Some(root) && path.file_name() == Some("manifest.csv".as_ref());
        if ext == "circle" || is_manifest {
            continue;
        }
        if ext != "pgm" && ext != "png" {
            out.skipped += 1;
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(&path);
        if let Some(split) = split {
            let in_split = rel
                .parent()
                .is_some_and(|p| p.components().any(|c| c.as_os_str() == split));
            if !in_split {
                continue;
            }
        }
        let class = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse::<IrisClass>().ok());
        let Some(class) = class else {
            out.skipped += 1;
            continue;
        };
        match load_one(&path, class) {
            Ok(img) => out.images.push(img),
            Err(error) => out.issues.push(LoadIssue { path, error }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Energy of the centered spectrum above `cutoff` cycles/pixel, by separable direct DFT.
    fn high_frequency_energy(values: &[f64], n: usize, cutoff: f64) -> f64 {
        let tw: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                (a.cos(), a.sin())
            })
            .collect();
        let dft_rows = |input: &[(f64, f64)]| -> Vec<(f64, f64)> {
            let mut out = vec![(0.0, 0.0); n * n];
            for r in 0..n {
                for k in 0..n {
                    let (mut re, mut im) = (0.0, 0.0);
                    for x in 0..n {
                        let (c, s) = tw[(k * x) % n];
                        let (a, b) = input[r * n + x];
                        re += a * c - b * s;
                        im += a * s + b * c;
                    }
                    out[r * n + k] = (re, im);
                }
            }
            out
        };
        let transpose = |m: &[(f64, f64)]| -> Vec<(f64, f64)> {
            let mut t = vec![(0.0, 0.0); n * n];
            for i in 0..n {
                for j in 0..n {
                    t[j * n + i] = m[i * n + j];
                }
            }
            t
        };
        let complex: Vec<_> = values.iter().map(|&v| (v, 0.0)).collect();
        let spec = dft_rows(&transpose(&dft_rows(&complex)));
        let freq = |k: usize| {
            let k = if k > n / 2 { k as f64 - n as f64 } else { k as f64 };
            k / n as f64
        };
        let mut energy = 0.0;
        for ky in 0..n {
            for kx in 0..n {
                if (freq(ky).powi(2) + freq(kx).powi(2)).sqrt() > cutoff {
                    let (re, im) = spec[ky * n + kx];
                    energy += re * re + im * im;
                }
            }
        }
        energy
    }

    #[test]
    fn generation_is_deterministic() {
        for class in IrisClass::ALL {
            let a = generate(class, 17, 64).unwrap();
            let b = generate(class, 17, 64).unwrap();
            assert_eq!(a, b);
        }
        assert_ne!(
            generate(IrisClass::Bonafide, 1, 64).unwrap().image,
            generate(IrisClass::Bonafide, 2, 64).unwrap().image
        );
    }

    #[test]
    fn size_below_minimum_is_rejected() {
        assert!(matches!(generate(IrisClass::Print, 0, 31), Err(Error::Input(_))));
        assert!(matches!("halloween".parse::<IrisClass>(), Err(Error::Input(_))));
    }

    #[test]
    fn iris_circle_inside_image() {
        for seed in 0..200 {
            let img = generate(IrisClass::Bonafide, seed, 40 + (seed as usize % 60)).unwrap();
            let c = img.circle;
            let s = img.image.width as f64;
            assert!(c.cx - c.r >= 0.0 && c.cy - c.r >= 0.0, "seed {seed}: {c:?}");
            assert!(c.cx + c.r <= s && c.cy + c.r <= s, "seed {seed}: {c:?}");
        }
    }

    #[test]
    fn binary_label_follows_class() {
        for class in IrisClass::ALL {
            let img = generate(class, 3, 48).unwrap();
            assert_eq!(img.binary_label() == BONAFIDE_CLASS, class == IrisClass::Bonafide);
        }
    }

    #[test]
    fn bonafide_has_more_high_frequency_energy_than_artificial_eyes() {
        let size = 64;
        let mean_energy = |class| {
            (0..100u64)
                .map(|seed| {
                    let img = generate(class, seed, size).unwrap();
                    high_frequency_energy(&img.image.to_unit(), size, 0.25 * 0.5)
                })
                .sum::<f64>()
                / 100.0
        };
        let bonafide = mean_energy(IrisClass::Bonafide);
        let artificial = mean_energy(IrisClass::ArtificialEye);
        assert!(bonafide > artificial, "bonafide {bonafide} vs artificial {artificial}");
    }

    #[test]
    fn printed_lens_changes_the_outer_annulus() {
        let size = 96;
        let (mut outer_sum, mut outer_n, mut inner_sum, mut inner_n) = (0.0, 0, 0.0, 0);
        for seed in 0..20 {
            let base = generate(IrisClass::Bonafide, seed, size).unwrap();
            let lens = generate(IrisClass::CosmeticContact, seed, size).unwrap();
            let eye = Eye::draw(seed, size);
            let c = base.circle;
            for y in 0..size {
                for x in 0..size {
                    let d = ((x as f64 + 0.5 - c.cx).powi(2) + (y as f64 + 0.5 - c.cy).powi(2)).sqrt();
                    let diff = (base.image.get(x, y) as f64 - lens.image.get(x, y) as f64).abs();
                    if d >= SYNTH.ring_inner * c.r && d <= c.r {
                        outer_sum += diff;
                        outer_n += 1;
                    } else if d >= eye.pupil_r && d < SYNTH.ring_inner * c.r {
                        inner_sum += diff;
                        inner_n += 1;
                    }
                }
            }
        }
        let outer = outer_sum / outer_n as f64;
        let inner = inner_sum / inner_n as f64;
        assert!(outer > 2.0 * inner, "outer {outer}, inner {inner}");
        assert!(outer > 10.0);
    }

    #[test]
    fn eye_side_flips_the_highlight() {
        let size = 96;
        for seed in 0..4 {
            let mut eye = Eye::draw(seed, size);
            let mut brightest_x = |side| {
                eye.side = side;
                let v = eye.render(size, 1);
                let (mut best, mut best_x) = (0.0, 0.0);
                for y in 0..size {
                    for x in 0..size {
                        let d = ((x as f64 + 0.5 - eye.circle.cx).powi(2)
                            + (y as f64 + 0.5 - eye.circle.cy).powi(2))
                        .sqrt();
                        if d < eye.pupil_r && v[y * size + x] > best {
                            best = v[y * size + x];
                            best_x = x as f64 + 0.5;
                        }
                    }
                }
                best_x - eye.circle.cx
            };
            assert!(brightest_x(EyeSide::Left) < 0.0);
            assert!(brightest_x(EyeSide::Right) > 0.0);
        }
    }

    fn labeled(image: GrayImage, circle: IrisCircle) -> LabeledImage {
        LabeledImage {
            image,
            class: IrisClass::Bonafide,
            circle,
            eye_side: None,
            seed: None,
            source: "test".into(),
            circle_assumed: false,
        }
    }

    #[test]
    fn crop_of_whole_image() {
        let pixels: Vec<u8> = (0..64 * 64).map(|i| (i * 7 % 251) as u8).collect();
        let img = GrayImage::new(64, 64, pixels).unwrap();
        let whole = labeled(img.clone(), IrisCircle { cx: 32.0, cy: 32.0, r: 32.0 });
        let t = crop_and_resize(&whole, 64).unwrap();
        assert_eq!(t.data(), img.to_unit().as_slice());
    }

    #[test]
    fn crop_without_resize_is_exact() {
        let pixels: Vec<u8> = (0..64 * 64).map(|i| (i * 13 % 256) as u8).collect();
        let img = GrayImage::new(64, 64, pixels).unwrap();
        let li = labeled(img.clone(), IrisCircle { cx: 32.0, cy: 32.0, r: 30.0 });
        let t = crop_and_resize(&li, 60).unwrap();
        for y in 0..60 {
            for x in 0..60 {
                assert_eq!(t.data()[y * 60 + x], img.get(x + 2, y + 2) as f64 / 255.0);
            }
        }
    }

    #[test]
    fn crop_of_constant_image_is_constant() {
        let img = GrayImage::new(50, 40, vec![77; 2000]).unwrap();
        let li = labeled(img, IrisCircle { cx: 20.0, cy: 21.0, r: 13.7 });
        let t = crop_and_resize(&li, 64).unwrap();
        assert!(t.data().iter().all(|&v| v == 77.0 / 255.0));
    }

    #[test]
    fn degenerate_radius() {
        let img = GrayImage::new(4, 4, vec![0; 16]).unwrap();
        let li = labeled(img, IrisCircle { cx: 2.0, cy: 2.0, r: 0.0 });
        assert!(matches!(crop_and_resize(&li, 8), Err(Error::Input(_))));
    }

    #[test]
    fn class_mix() {
        assert_eq!(class_counts(1200), [600, 200, 200, 200]);
        assert_eq!(class_counts(400), [200, 67, 67, 66]);
        assert_eq!(class_counts(0), [0; 4]);
        assert_eq!(class_counts(1), [1, 0, 0, 0]);
    }

    #[test]
    fn train_and_test_seeds_are_disjoint() {
        let train: std::collections::HashSet<_> =
            (0..1200).map(|i| sample_seed(42, Split::Train, i)).collect();
        assert!((0..400).all(|i| !train.contains(&sample_seed(42, Split::Test, i))));
    }

    #[test]
    fn circle_sidecar_parsing() {
        assert_eq!(
            parse_circle("32 32 30\n").unwrap(),
            IrisCircle { cx: 32.0, cy: 32.0, r: 30.0 }
        );
        assert!(parse_circle("1 2").is_err());
        assert!(parse_circle("a b c").is_err());
    }
}
