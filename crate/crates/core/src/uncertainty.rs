//! Per-texel uncertainty: windowed SSIM, SSIM-derived oracle maps, a
//! reference-free heuristic, and maps loaded from an external predictor.
//!
//! Uncertainty is dissimilarity: `U = 1 - SSIM`, so high values mark
//! unreliable texels and blending weights them by `1 - U`.

use std::path::Path;

use rayon::prelude::*;

use crate::bake::ViewContribution;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as isize;
        let raw: Vec<f64> = (-r..=r)
            .map(|i| (-((i * i) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 || !(self.sigma > 0.0) || !(self.k1 > 0.0) || !(self.k2 > 0.0) {
            return Err(Error::invalid("SSIM window must be odd and constants positive"));
        }
        Ok(())
    }
}

/// Symmetric (half-sample) reflection of an index into `0..n`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMap {
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl UncertaintyMap {
    pub fn filled(resolution: usize, v: f64) -> Self {
        Self {
            resolution,
            values: vec![v; resolution * resolution],
        }
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec(self.resolution, self.resolution, 1, self.values.clone()).expect("uncertainty size")
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }
}

/// Separable Gaussian blur of one plane with reflective borders.
fn blur_plane(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let src = &plane[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * src[reflect_index(x as isize + k as isize - r, w)];
            }
            *out = acc;
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[reflect_index(y as isize + k as isize - r, h) * w + x];
            }
            *o = acc;
        }
    });
    out
}

/// Per-pixel SSIM averaged over channels and clamped to [0, 1]. Pixels with
/// `mask = false` report 1.
pub fn ssim_map(a: &Image, b: &Image, mask: Option<&[bool]>, config: &SsimConfig) -> Result<Vec<f64>> {
    a.ensure_same_shape(b)?;
    config.validate()?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    if let Some(m) = mask {
        if m.len() != w * h {
            return Err(Error::dims("SSIM mask size"));
        }
    }
    let kernel = config.kernel();
    let (c1, c2) = (config.c1(), config.c2());
    let mut acc = vec![0.0; w * h];
    for c in 0..ch {
        let pa: Vec<f64> = a.data().iter().skip(c).step_by(ch).copied().collect();
        let pb: Vec<f64> = b.data().iter().skip(c).step_by(ch).copied().collect();
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let mu_a = blur_plane(&pa, w, h, &kernel);
        let mu_b = blur_plane(&pb, w, h, &kernel);
        let e_aa = blur_plane(&aa, w, h, &kernel);
        let e_bb = blur_plane(&bb, w, h, &kernel);
        let e_ab = blur_plane(&ab, w, h, &kernel);
        acc.par_iter_mut().enumerate().for_each(|(i, out)| {
            *out += ssim_from_moments(mu_a[i], mu_b[i], e_aa[i], e_bb[i], e_ab[i], c1, c2);
        });
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            if mask.is_some_and(|m| !m[i]) {
                1.0
            } else {
                (s / ch as f64).clamp(0.0, 1.0)
            }
        })
        .collect())
}

#[inline]
pub(crate) fn ssim_from_moments(mu_a: f64, mu_b: f64, e_aa: f64, e_bb: f64, e_ab: f64, c1: f64, c2: f64) -> f64 {
    let var_a = e_aa - mu_a * mu_a;
    let var_b = e_bb - mu_b * mu_b;
    let cov = e_ab - mu_a * mu_b;
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

pub fn mean_ssim(a: &Image, b: &Image, mask: Option<&[bool]>, config: &SsimConfig) -> Result<f64> {
    let map = ssim_map(a, b, None, config)?;
    let (sum, n) = map
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
    if n == 0 {
        return Err(Error::invalid("empty SSIM mask"));
    }
    Ok(sum / n as f64)
}

/// `U = 1 - SSIM(contribution, ground truth)` on covered texels, 1 elsewhere.
///
/// Uncovered texels take the ground-truth value before the windowed
/// statistics are computed, so coverage borders alone do not register as
/// errors.
pub fn oracle_uncertainty(contribution: &ViewContribution, ground_truth: &Image) -> Result<UncertaintyMap> {
    oracle_uncertainty_with(contribution, ground_truth, &SsimConfig::default())
}

pub fn oracle_uncertainty_with(
    contribution: &ViewContribution,
    ground_truth: &Image,
    config: &SsimConfig,
) -> Result<UncertaintyMap> {
    let values = &contribution.values;
    values.ensure_same_shape(ground_truth)?;
    let mut composite = ground_truth.clone();
    for (i, &cov) in contribution.covered.iter().enumerate() {
        if cov {
            composite.pixel_mut(i).copy_from_slice(values.pixel(i));
        }
    }
    let ssim = ssim_map(&composite, ground_truth, Some(&contribution.covered), config)?;
    Ok(UncertaintyMap {
        resolution: values.width(),
        values: ssim
            .into_iter()
            .zip(&contribution.covered)
            .map(|(s, &cov)| if cov { (1.0 - s).clamp(0.0, 1.0) } else { 1.0 })
            .collect(),
    })
}

pub const HOLE_WEIGHT: f64 = 0.7;
pub const CONTRAST_WEIGHT: f64 = 0.3;
pub const HOLE_FALLOFF: f64 = 8.0;
pub const CONTRAST_WINDOW: usize = 7;
/// Gradient energy at which the contrast score reaches one half.
pub const CONTRAST_HALF_ENERGY: f64 = 0.01;

/// Reference-free uncertainty from hole proximity and local contrast.
///
/// Holes are uncovered texels; when `occupancy` is given, texels outside the
/// UV atlas do not count as holes.
pub fn heuristic_uncertainty(contribution: &ViewContribution, occupancy: Option<&[bool]>) -> UncertaintyMap {
    let img = &contribution.values;
    let (w, h) = (img.width(), img.height());
    let covered = &contribution.covered;
    let is_hole = |i: usize| !covered[i] && occupancy.is_none_or(|o| o[i]);

    // Chebyshev distance to the nearest hole by multi-source BFS over
    // 8-neighbors, capped past the falloff range.
    let cap = HOLE_FALLOFF as u32 + 2;
    let mut dist = vec![cap; w * h];
    let mut queue = std::collections::VecDeque::new();
    for (i, d) in dist.iter_mut().enumerate() {
        if is_hole(i) {
            *d = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let d = dist[i];
        if d + 1 >= cap {
            continue;
        }
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if dist[j] > d + 1 {
                    dist[j] = d + 1;
                    queue.push_back(j);
                }
            }
        }
    }

    // gradient energy of luminance over covered neighbors
    let ch = img.channels();
    let lum: Vec<f64> = (0..w * h).map(|i| img.pixel(i).iter().sum::<f64>() / ch as f64).collect();
    let mut energy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !covered[i] {
                continue;
            }
            // mean squared difference to covered 4-neighbors, times two so a
            // unit step scores like a forward-difference gradient
            let mut acc = 0.0;
            let mut k = 0;
            for (ok, j) in [(x > 0, i.wrapping_sub(1)), (x + 1 < w, i + 1), (y > 0, i.wrapping_sub(w)), (y + 1 < h, i + w)] {
                if ok && covered[j] {
                    acc += (lum[j] - lum[i]).powi(2);
                    k += 1;
                }
            }
            if k > 0 {
                energy[i] = 2.0 * acc / k as f64;
            }
        }
    }
    let sum_e = integral(&energy, w, h);
    let cov_f: Vec<f64> = covered.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
    let sum_c = integral(&cov_f, w, h);
    let r = CONTRAST_WINDOW / 2;

    let values = (0..w * h)
        .map(|i| {
            if !covered[i] {
                return 1.0;
            }
            let (x, y) = (i % w, i / w);
            let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
            let (x1, y1) = ((x + r + 1).min(w), (y + r + 1).min(h));
            let e = box_sum(&sum_e, w, x0, y0, x1, y1);
            let n = box_sum(&sum_c, w, x0, y0, x1, y1).max(1.0);
            let g = e / n;
            let contrast = g / (g + CONTRAST_HALF_ENERGY);
            let d = dist[i] as f64;
            let proximity = (1.0 - (d - 1.0) / HOLE_FALLOFF).clamp(0.0, 1.0);
            (HOLE_WEIGHT * proximity + CONTRAST_WEIGHT * (1.0 - contrast)).clamp(0.0, 1.0)
        })
        .collect();
    UncertaintyMap { resolution: w, values }
}

fn integral(v: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += v[y * w + x];
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

fn box_sum(s: &[f64], w: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
    let st = w + 1;
    s[y1 * st + x1] - s[y0 * st + x1] - s[y1 * st + x0] + s[y0 * st + x0]
}

/// Loads a predictor's output: one-channel PFM, or 8-bit grayscale PNG
/// scaled by 1/255. Values are clamped to [0, 1].
pub fn external_uncertainty(path: impl AsRef<Path>, expected_resolution: usize) -> Result<UncertaintyMap> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let (w, h, values): (usize, usize, Vec<f64>) = match ext.as_str() {
        "pfm" => {
            let m = io::read_pfm(path)?;
            if m.channels != 1 {
                return Err(Error::invalid(format!("{}: expected 1-channel PFM", path.display())));
            }
            (m.width, m.height, m.data.iter().map(|&v| v as f64).collect())
        }
        "png" => {
            let p = io::read_png(path)?;
            if p.channels != 1 {
                return Err(Error::invalid(format!("{}: expected grayscale PNG", path.display())));
            }
            (p.width, p.height, p.data.iter().map(|&v| v as f64 / 255.0).collect())
        }
        _ => return Err(Error::invalid(format!("{}: unknown uncertainty format", path.display()))),
    };
    if w != expected_resolution || h != expected_resolution {
        return Err(Error::dims(format!(
            "{}: {w}x{h}, expected {expected_resolution}x{expected_resolution}",
            path.display()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{}: non-finite uncertainty", path.display())));
    }
    let clamped = values.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} uncertainty values into [0,1]", path.display());
    }
    Ok(UncertaintyMap {
        resolution: w,
        values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    })
}
