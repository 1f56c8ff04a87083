//! Biometric PAD evaluation: thresholds at a fixed FDR, TDR, APCER/BPCER, d′, histograms.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::PA_CLASS;
use crate::pnm::GrayImage;
use crate::synthdata::IrisClass;
use crate::train::ScoredSample;

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::input(format!("{what} score list is empty")));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::input(format!("{what} score {i} is NaN")));
    }
    Ok(())
}

fn check_target(target_fdr: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&target_fdr) {
        return Err(Error::input(format!("target FDR {target_fdr} outside [0, 1]")));
    }
    Ok(())
}

/// Fraction of `scores` at or above `threshold`.
pub fn fraction_at_or_above(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

/// Smallest observed bonafide score whose at-or-above fraction does not exceed
/// `target_fdr`. When no observed score qualifies, the next representable value
/// above the largest bonafide score is returned, which flags no bonafide at all.
pub fn select_threshold(bonafide: &[f64], target_fdr: f64) -> Result<f64> {
    check_scores(bonafide, "bonafide")?;
    check_target(target_fdr)?;
    let mut sorted = bonafide.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    for (i, &s) in sorted.iter().enumerate() {
        if i > 0 && sorted[i - 1] == s {
            continue;
        }
        if (n - i) as f64 / n as f64 <= target_fdr {
            return Ok(s);
        }
    }
    Ok(sorted[n - 1].next_up())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub tdr: f64,
    pub realized_fdr: f64,
}

pub fn tdr_at_fdr(bonafide: &[f64], pa: &[f64], target_fdr: f64) -> Result<OperatingPoint> {
    check_scores(pa, "PA")?;
    let threshold = select_threshold(bonafide, target_fdr)?;
    Ok(OperatingPoint {
        threshold,
        tdr: fraction_at_or_above(pa, threshold),
        realized_fdr: fraction_at_or_above(bonafide, threshold),
    })
}

/// Every distinct operating point as the threshold sweeps over all observed scores.
pub fn roc_points(bonafide: &[f64], pa: &[f64]) -> Result<Vec<OperatingPoint>> {
    check_scores(bonafide, "bonafide")?;
    check_scores(pa, "PA")?;
    let mut thresholds: Vec<f64> = bonafide.iter().chain(pa).copied().collect();
    let top = thresholds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    thresholds.push(top.next_up());
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    Ok(thresholds
        .into_iter()
        .map(|t| OperatingPoint {
            threshold: t,
            tdr: fraction_at_or_above(pa, t),
            realized_fdr: fraction_at_or_above(bonafide, t),
        })
        .collect())
}

pub fn roc_csv(points: &[OperatingPoint]) -> String {
    let mut out = String::from("threshold,fdr,tdr\n");
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.realized_fdr, p.tdr).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DPrime {
    pub value: f64,
    /// Both classes have zero variance; `value` is +inf for distinct means and 0 otherwise.
    pub degenerate: bool,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// `|μ_pa − μ_bf| / sqrt((σ²_pa + σ²_bf) / 2)` with unbiased variances.
pub fn d_prime(bonafide: &[f64], pa: &[f64]) -> Result<DPrime> {
    if bonafide.len() < 2 || pa.len() < 2 {
        return Err(Error::input(format!(
            "d-prime needs at least 2 scores per class, got {} bonafide and {} PA",
            bonafide.len(),
            pa.len()
        )));
    }
    let (mb, vb) = mean_var(bonafide);
    let (mp, vp) = mean_var(pa);
    let pooled = ((vb + vp) / 2.0).sqrt();
    let diff = (mp - mb).abs();
    if pooled == 0.0 {
        let value = if diff == 0.0 { 0.0 } else { f64::INFINITY };
        return Ok(DPrime { value, degenerate: true });
    }
    Ok(DPrime { value: diff / pooled, degenerate: false })
}

/// Equal-width counts over [0, 1]; the last bin includes 1.0.
pub fn histogram(scores: &[f64], bins: usize) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(Error::input("histogram needs at least one bin"));
    }
    let mut counts = vec![0; bins];
    for (i, &s) in scores.iter().enumerate() {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::input(format!("score {i} = {s} outside [0, 1]")));
        }
        counts[((s * bins as f64) as usize).min(bins - 1)] += 1;
    }
    Ok(counts)
}

/// Percentage drop of a manipulated TDR relative to the original.
pub fn relative_decrease(tdr_orig: f64, tdr_manip: f64) -> Result<f64> {
    if !(tdr_orig > 0.0) {
        return Err(Error::input(format!("original TDR must be positive, got {tdr_orig}")));
    }
    Ok(100.0 * (tdr_orig - tdr_manip) / tdr_orig)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub target_fdr: f64,
    pub realized_fdr: f64,
    pub tdr: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub d_prime: DPrime,
    pub n_bonafide: usize,
    pub n_pa: usize,
    /// Misclassified sample ids keyed by class name.
    pub misclassified: BTreeMap<&'static str, Vec<String>>,
    pub bins: usize,
    pub hist_bonafide: Vec<usize>,
    pub hist_pa: Vec<usize>,
}

impl EvalReport {
    pub fn from_scores(scored: &[ScoredSample], target_fdr: f64, bins: usize) -> Result<Self> {
        let split = |label: usize| -> Vec<f64> {
            scored.iter().filter(|s| s.label == label).map(|s| s.score).collect()
        };
        let pa = split(PA_CLASS);
        let bonafide: Vec<f64> = scored.iter().filter(|s| s.label != PA_CLASS).map(|s| s.score).collect();
        let op = tdr_at_fdr(&bonafide, &pa, target_fdr)?;
        let mut misclassified: BTreeMap<&'static str, Vec<String>> =
            IrisClass::ALL.iter().map(|c| (c.name(), Vec::new())).collect();
        for s in scored {
            if (s.score >= op.threshold) != (s.label == PA_CLASS) {
                misclassified.get_mut(s.class.name()).unwrap().push(s.id.clone());
            }
        }
        Ok(Self {
            threshold: op.threshold,
            target_fdr,
            realized_fdr: op.realized_fdr,
            tdr: op.tdr,
            apcer: 1.0 - op.tdr,
            bpcer: op.realized_fdr,
            d_prime: d_prime(&bonafide, &pa)?,
            n_bonafide: bonafide.len(),
            n_pa: pa.len(),
            misclassified,
            bins,
            hist_bonafide: histogram(&bonafide, bins)?,
            hist_pa: histogram(&pa, bins)?,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "threshold,target_fdr,realized_fdr,tdr,apcer,bpcer,d_prime,d_prime_degenerate,n_bonafide,n_pa\n",
        );
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            self.threshold,
            self.target_fdr,
            self.realized_fdr,
            self.tdr,
            self.apcer,
            self.bpcer,
            self.d_prime.value,
            self.d_prime.degenerate,
            self.n_bonafide,
            self.n_pa
        )
        .unwrap();
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,bonafide,pa\n");
        for (i, (b, p)) in self.hist_bonafide.iter().zip(&self.hist_pa).enumerate() {
            let w = 1.0 / self.bins as f64;
            writeln!(out, "{},{},{b},{p}", i as f64 * w, (i + 1) as f64 * w).unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let pct = |x: f64| 100.0 * x;
        writeln!(out, "samples      {} bonafide, {} PA", self.n_bonafide, self.n_pa).unwrap();
        writeln!(out, "threshold    {:.6} (target FDR {:.3}%)", self.threshold, pct(self.target_fdr)).unwrap();
        writeln!(out, "TDR          {:.2}%", pct(self.tdr)).unwrap();
        writeln!(out, "FDR / BPCER  {:.2}%", pct(self.bpcer)).unwrap();
        writeln!(out, "APCER        {:.2}%", pct(self.apcer)).unwrap();
        let flag = if self.d_prime.degenerate { " (zero variance)" } else { "" };
        writeln!(out, "d-prime      {:.4}{flag}", self.d_prime.value).unwrap();
        for (class, ids) in &self.misclassified {
            writeln!(out, "misclassified {class}: {}", ids.len()).unwrap();
            for id in ids {
                writeln!(out, "  {id}").unwrap();
            }
        }
        out
    }

    /// Two-panel bar plot: bonafide counts on top, PA counts below, threshold as a dashed column.
    pub fn histogram_image(&self) -> GrayImage {
        const BAR: usize = 8;
        const PANEL: usize = 100;
        let width = self.bins * BAR;
        let height = 2 * PANEL + 4;
        let mut pixels = vec![255u8; width * height];
        let peak = self.hist_bonafide.iter().chain(&self.hist_pa).copied().max().unwrap_or(0).max(1);
        let mut draw = |counts: &[usize], top: usize, shade: u8| {
            for (b, &c) in counts.iter().enumerate() {
                let h = (c * PANEL).div_ceil(peak);
                for y in top + PANEL - h..top + PANEL {
                    for x in b * BAR + 1..(b + 1) * BAR - 1 {
                        pixels[y * width + x] = shade;
                    }
                }
            }
        };
        draw(&self.hist_bonafide, 0, 150);
        draw(&self.hist_pa, PANEL + 4, 60);
        for x in 0..width {
            pixels[(PANEL + 1) * width + x] = 0;
        }
        if self.threshold <= 1.0 {
            let tx = ((self.threshold * width as f64) as usize).min(width - 1);
            for y in (0..height).step_by(2) {
                pixels[y * width + tx] = 0;
            }
        }
        GrayImage::new(width, height, pixels).expect("histogram image dimensions")
    }
}
