use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::par;
use crate::pnm::{self, GrayImage, RgbImage};
use crate::synthdata::{IrisClass, Sample};
use crate::tensor::Tensor;

/// A saliency map at input resolution, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `[S, S]` grid.
    pub values: Tensor,
    pub class: Option<IrisClass>,
    pub sample_id: String,
    pub target_class: usize,
    pub block: usize,
    /// No positive evidence anywhere; `values` is identically zero.
    pub all_zero: bool,
}

impl Heatmap {
    pub fn size(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn to_gray(&self) -> Result<GrayImage> {
        let s = self.size();
        GrayImage::from_unit(s, s, self.values.data())
    }

    /// Blue-to-red colour ramp blended over the grayscale input.
    pub fn overlay(&self, input: &Tensor) -> Result<RgbImage> {
        let s = self.size();
        if input.len() != s * s {
            return Err(Error::shape(format!(
                "overlay input has {} pixels, heatmap has {}",
                input.len(),
                s * s
            )));
        }
        let mut pixels = Vec::with_capacity(3 * s * s);
        for (&h, &g) in self.values.data().iter().zip(input.data()) {
            let g = g.clamp(0.0, 1.0);
            let rgb = [h, 0.0, 1.0 - h];
            for c in rgb {
                pixels.push(((0.5 * g + 0.5 * c) * 255.0).round() as u8);
            }
        }
        RgbImage::new(s, s, pixels)
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        pnm::write_pgm(&self.to_gray()?, path)
    }
}

/// Scales `values` so the maximum is 1; returns true when every value is zero.
pub fn normalize_max(values: &mut [f64]) -> bool {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return true;
    }
    values.iter_mut().for_each(|v| *v /= max);
    false
}

/// `ReLU(Σ_k α_k A^k)` with `α_k` the spatial mean of `grads^k`; inputs are `[C,h,w]`.
pub fn cam_from_activations(acts: &Tensor, grads: &Tensor) -> Result<Tensor> {
    if acts.shape() != grads.shape() || acts.rank() != 3 {
        return Err(Error::shape(format!(
            "activations {:?} and gradients {:?} must be equal [C,h,w]",
            acts.shape(),
            grads.shape()
        )));
    }
    let (c, h, w) = (acts.shape()[0], acts.shape()[1], acts.shape()[2]);
    let plane = h * w;
    let mut map = vec![0.0; plane];
    for k in 0..c {
        let a = &acts.data()[k * plane..(k + 1) * plane];
        let g = &grads.data()[k * plane..(k + 1) * plane];
        let alpha = g.iter().sum::<f64>() / plane as f64;
        for (m, &v) in map.iter_mut().zip(a) {
            *m += alpha * v;
        }
    }
    map.iter_mut().for_each(|v| *v = v.max(0.0));
    Tensor::new(&[h, w], map)
}

/// Half-pixel bilinear resize of an `[h,w]` map to `[out,out]` with edge clamping.
pub fn upsample_bilinear(map: &Tensor, out: usize) -> Result<Tensor> {
    let (h, w) = map.dims2()?;
    let src = map.data();
    let coord = |i: usize, n: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * n as f64 / out as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let x0 = x.floor() as usize;
        (x0, (x0 + 1).min(n - 1), x - x0 as f64)
    };
    Ok(Tensor::from_fn(&[out, out], |idx| {
        let (y0, y1, ty) = coord(idx / out, h);
        let (x0, x1, tx) = coord(idx % out, w);
        let top = src[y0 * w + x0] + tx * (src[y0 * w + x1] - src[y0 * w + x0]);
        let bottom = src[y1 * w + x0] + tx * (src[y1 * w + x1] - src[y1 * w + x0]);
        top + ty * (bottom - top)
    }))
}

const CAM_BATCH: usize = 16;

/// Grad-CAM of `target_class` at the output of dense block `block` for each sample.
pub fn grad_cam_batch(
    model: &Model,
    samples: &[Sample],
    target_class: usize,
    block: usize,
    jobs: usize,
) -> Result<Vec<Heatmap>> {
    let cfg = model.config();
    if block >= model.num_blocks() {
        return Err(Error::input(format!("block {block} out of range (model has {})", model.num_blocks())));
    }
    if target_class >= cfg.num_classes {
        return Err(Error::input(format!("target class {target_class} out of range")));
    }
    let size = cfg.input_size;
    let batches: Vec<&[Sample]> = samples.chunks(CAM_BATCH).collect();
    let maps = par::map_ordered(&batches, jobs, |batch| -> Result<Vec<Heatmap>> {
        let inputs: Vec<&Tensor> = batch.iter().map(|s| &s.input).collect();
        let cache = model.forward_batch(&Tensor::stack(&inputs)?)?;
        // Summing the target logit over the batch leaves each sample's gradient unchanged.
        let n = batch.len();
        let one_hot = Tensor::from_fn(&[n, cfg.num_classes], |i| f64::from(u8::from(i % cfg.num_classes == target_class)));
        let grads = model.backward(&cache, &one_hot)?;
        let acts = cache.block_output(block);
        let g = &grads.block_outputs[block];
        batch
            .iter()
            .enumerate()
            .map(|(i, sample)| {
                let a = acts.item(i)?.reshape(&acts.shape()[1..])?;
                let gi = g.item(i)?.reshape(&g.shape()[1..])?;
                let coarse = cam_from_activations(&a, &gi)?;
                let mut values = upsample_bilinear(&coarse, size)?;
                let all_zero = normalize_max(values.data_mut());
                Ok(Heatmap {
                    values,
                    class: Some(sample.class),
                    sample_id: sample.id.clone(),
                    target_class,
                    block,
                    all_zero,
                })
            })
            .collect()
    });
    let mut out = Vec::with_capacity(samples.len());
    for m in maps {
        out.extend(m?);
    }
    Ok(out)
}

pub fn grad_cam(model: &Model, sample: &Sample, target_class: usize, block: usize) -> Result<Heatmap> {
    let mut maps = grad_cam_batch(model, std::slice::from_ref(sample), target_class, block, 1)?;
    Ok(maps.pop().expect("one sample in, one map out"))
}

/// Pixelwise mean of same-sized heatmaps, renormalized to a maximum of 1.
pub fn average_heatmap(maps: &[Heatmap]) -> Result<Heatmap> {
    let first = maps.first().ok_or_else(|| Error::input("no heatmaps to average"))?;
    if let Some((i, m)) = maps.iter().enumerate().find(|(_, m)| m.values.shape() != first.values.shape()) {
        return Err(Error::input(format!(
            "heatmap {i} is {:?}, expected {:?}",
            m.values.shape(),
            first.values.shape()
        )));
    }
    let mut sum = vec![0.0; first.values.len()];
    for m in maps {
        for (s, v) in sum.iter_mut().zip(m.values.data()) {
            *s += v;
        }
    }
    sum.iter_mut().for_each(|s| *s /= maps.len() as f64);
    let all_zero = normalize_max(&mut sum);
    let same_class = maps.iter().all(|m| m.class == first.class);
    Ok(Heatmap {
        values: Tensor::new(first.values.shape(), sum)?,
        class: if same_class { first.class } else { None },
        sample_id: format!("mean of {}", maps.len()),
        target_class: first.target_class,
        block: first.block,
        all_zero,
    })
}

/// Mean of an `[S,S]` map over pixels whose distance from the centre, as a fraction
/// of `S/2`, lies in `[inner, outer)`.
pub fn radial_band_mean(map: &Tensor, inner: f64, outer: f64) -> Result<f64> {
    let (h, w) = map.dims2()?;
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let half = h.min(w) as f64 / 2.0;
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let r = ((y as f64 + 0.5 - cy).hypot(x as f64 + 0.5 - cx)) / half;
            if r >= inner && r < outer {
                sum += map.data()[y * w + x];
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::input(format!("no pixels in radial band [{inner}, {outer})")));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn grid(h: usize, w: usize, v: Vec<f64>) -> Tensor {
        Tensor::new(&[1, h, w], v).unwrap()
    }

    #[test]
    fn hand_example() {
        let a = grid(2, 2, vec![1.0, -1.0, 2.0, 0.0]);
        let mut cam = cam_from_activations(&a, &Tensor::full(&[1, 2, 2], 1.0)).unwrap();
        assert_eq!(cam.data(), &[1.0, 0.0, 2.0, 0.0]);
        assert!(!normalize_max(cam.data_mut()));
        assert_eq!(cam.data(), &[0.5, 0.0, 1.0, 0.0]);
        let neg = cam_from_activations(&a, &Tensor::full(&[1, 2, 2], -1.0)).unwrap();
        assert_eq!(neg.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_map_is_flagged() {
        let mut v = vec![0.0; 4];
        assert!(normalize_max(&mut v));
        assert_eq!(v, vec![0.0; 4]);
    }

    #[test]
    fn upsample_preserves_constants_and_bounds() {
        let c = Tensor::full(&[4, 4], 0.3);
        let up = upsample_bilinear(&c, 16).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let m = Tensor::new(&[2, 2], vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        let up = upsample_bilinear(&m, 8).unwrap();
        assert!(up.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(up.data()[0], 0.0);
        assert_eq!(up.data()[7], 1.0);
    }

    fn map(values: Vec<f64>) -> Heatmap {
        let s = (values.len() as f64).sqrt() as usize;
        Heatmap {
            values: Tensor::new(&[s, s], values).unwrap(),
            class: Some(IrisClass::Print),
            sample_id: "x".into(),
            target_class: 1,
            block: 0,
            all_zero: false,
        }
    }

    #[test]
    fn averaging() {
        let a = map(vec![1.0, 0.0, 0.5, 0.0]);
        assert_eq!(average_heatmap(std::slice::from_ref(&a)).unwrap().values, a.values);
        assert_eq!(average_heatmap(&[a.clone(), a.clone(), a.clone()]).unwrap().values, a.values);
        let mirror = map(vec![0.0, 1.0, 0.0, 0.5]);
        let avg = average_heatmap(&[a.clone(), mirror]).unwrap();
        let v = avg.values.data();
        assert_eq!((v[0], v[2]), (v[1], v[3]));
        assert!(average_heatmap(&[]).is_err());
        assert!(average_heatmap(&[a, map(vec![0.0; 9])]).is_err());
    }

    #[test]
    fn band_means() {
        let m = Tensor::from_fn(&[8, 8], |i| if (3..5).contains(&(i / 8)) && (3..5).contains(&(i % 8)) { 1.0 } else { 0.0 });
        assert_eq!(radial_band_mean(&m, 0.0, 0.3).unwrap(), 1.0);
        assert_eq!(radial_band_mean(&m, 0.5, 1.0).unwrap(), 0.0);
        assert!(radial_band_mean(&m, 2.0, 3.0).is_err());
    }

    #[test]
    fn model_heatmaps_are_normalized() {
        let cfg = ModelConfig { input_size: 16, block_layers: vec![1, 1], ..ModelConfig::default() };
        let model = Model::new(cfg, 3).unwrap();
        let samples: Vec<Sample> = (0..3)
            .map(|i| Sample {
                id: format!("s{i}"),
                class: IrisClass::CosmeticContact,
                input: Tensor::from_fn(&[1, 1, 16, 16], |ix| ((ix * 7 + i) % 11) as f64 / 10.0),
            })
            .collect();
        for block in 0..2 {
            let maps = grad_cam_batch(&model, &samples, 1, block, 2).unwrap();
            for (m, s) in maps.iter().zip(&samples) {
                assert_eq!(m.values.shape(), &[16, 16]);
                assert!(m.values.data().iter().all(|v| (0.0..=1.0).contains(v)));
                assert!(m.all_zero || m.values.data().iter().any(|&v| v == 1.0));
                let single = grad_cam(&model, s, 1, block).unwrap();
                assert!(single.values.max_abs_diff(&m.values) < 1e-12);
            }
        }
        assert!(grad_cam(&model, &samples[0], 1, 2).is_err());
        assert!(grad_cam(&model, &samples[0], 2, 0).is_err());
    }
}
