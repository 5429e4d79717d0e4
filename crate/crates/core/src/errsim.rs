//! Synthetic view-image corruption, uncertainty training pairs, PSNR and the
//! selection-strategy comparison.
//!
//! Corruptions stand in for the failure modes of a generative view
//! synthesizer: holes, blur, color drift and small warps, each confined to
//! seeded elliptical regions of the foreground.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bake::{
    backproject_view, bake_with_context, render_view_image, BackprojectConfig, BakeConfig, BakeContext, BakeResult,
    OracleUncertainty, ViewImage, ViewProvider,
};
use crate::camera::View;
use crate::error::{Error, Result};
use crate::geometry::{compute_vertex_normals, TriMesh};
use crate::image::Image;
use crate::pbrtex::TextureSet;
use crate::raster::{self, rasterize_uv_atlas};
use crate::uncertainty::{oracle_uncertainty, SsimConfig, UncertaintyMap};
use crate::viewsel::Strategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Hole,
    Blur,
    ColorShift,
    Warp,
}

impl FromStr for CorruptionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hole" => Ok(Self::Hole),
            "blur" => Ok(Self::Blur),
            "color_shift" => Ok(Self::ColorShift),
            "warp" => Ok(Self::Warp),
            _ => Err(Error::invalid(format!("unknown corruption kind {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// Blur sigma in pixels, color shift amplitude, or warp displacement in
    /// pixels. Unused for holes.
    pub magnitude: f64,
    pub region_fraction: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.region_fraction) {
            return Err(Error::invalid("region_fraction must lie in [0, 1]"));
        }
        if !(self.magnitude.is_finite() && self.magnitude >= 0.0) {
            return Err(Error::invalid("magnitude must be non-negative"));
        }
        Ok(())
    }

    /// The same corruption reseeded for one view.
    pub fn for_view(&self, view_id: u32) -> Self {
        Self {
            seed: self.seed ^ (u64::from(view_id) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ..*self
        }
    }
}

/// A corrupted image and the pixels that still carry data (holes removed).
#[derive(Clone, Debug, PartialEq)]
pub struct Corrupted {
    pub image: Image,
    pub valid: Vec<bool>,
    pub region: Vec<bool>,
}

/// Seeded union of ellipses covering about `fraction` of the foreground.
/// Each ellipse's area is capped by the area still missing, so the total
/// overshoots by at most one ellipse's rasterization error.
pub fn ellipse_region(width: usize, height: usize, mask: &[bool], fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut region = vec![false; width * height];
    let fg: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if fg.is_empty() || fraction <= 0.0 {
        return region;
    }
    let target = (fraction * fg.len() as f64).round() as usize;
    let mut have = 0usize;
    for _ in 0..4096 {
        let remaining = target.saturating_sub(have);
        if remaining < 4 {
            break;
        }
        let area = (fg.len() as f64 * rng.random_range(0.01..0.05)).min(remaining as f64);
        let aspect: f64 = rng.random_range(0.5..2.0);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let center = fg[rng.random_range(0..fg.len())];
        let (cx, cy) = ((center % width) as f64 + 0.5, (center / width) as f64 + 0.5);
        let a = (area * aspect / std::f64::consts::PI).sqrt();
        let b = (area / (aspect * std::f64::consts::PI)).sqrt();
        let (s, c) = angle.sin_cos();
        let reach = a.max(b).ceil() as isize + 1;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (x, y) = (cx as isize + dx, cy as isize + dy);
                if x < 0 || y < 0 || x >= width as isize || y >= height as isize {
                    continue;
                }
                let i = y as usize * width + x as usize;
                if !mask[i] || region[i] {
                    continue;
                }
                let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let (u, v) = (px * c + py * s, -px * s + py * c);
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    region[i] = true;
                    have += 1;
                }
            }
        }
    }
    region
}

/// Applies one corruption inside seeded regions of the foreground. Pixels
/// outside the region, including all background, are copied unchanged.
pub fn corrupt(image: &Image, mask: &[bool], spec: &CorruptionSpec) -> Result<Corrupted> {
    spec.validate()?;
    if mask.len() != image.pixel_count() {
        return Err(Error::dims("mask does not match the image"));
    }
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let region = ellipse_region(w, h, mask, spec.region_fraction, &mut rng);
    let mut out = image.clone();
    let mut valid = mask.to_vec();
    match spec.kind {
        CorruptionKind::Hole => {
            for (i, &r) in region.iter().enumerate() {
                if r {
                    out.pixel_mut(i).iter_mut().for_each(|v| *v = 0.0);
                    valid[i] = false;
                }
            }
        }
        CorruptionKind::Blur => {
            let blurred = masked_gaussian(image, mask, spec.magnitude);
            for (i, &r) in region.iter().enumerate() {
                if r {
                    out.pixel_mut(i).copy_from_slice(blurred.pixel(i));
                }
            }
        }
        CorruptionKind::ColorShift => {
            let shift: Vec<f64> = (0..ch).map(|_| rng.random_range(-1.0..=1.0) * spec.magnitude).collect();
            for (i, &r) in region.iter().enumerate() {
                if r {
                    for (v, d) in out.pixel_mut(i).iter_mut().zip(&shift) {
                        *v = (*v + d).clamp(0.0, 1.0);
                    }
                }
            }
        }
        CorruptionKind::Warp => {
            let field = WarpField::new(&mut rng, w.max(h) as f64);
            let mut px = vec![0.0; ch];
            for (i, &r) in region.iter().enumerate() {
                if !r {
                    continue;
                }
                let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
                let (dx, dy) = field.at(x, y);
                if image.sample_bilinear(x + spec.magnitude * dx, y + spec.magnitude * dy, Some(mask), &mut px) {
                    out.pixel_mut(i).copy_from_slice(&px);
                }
            }
        }
    }
    Ok(Corrupted {
        image: out,
        valid,
        region,
    })
}

/// Sum of a few random low-frequency sinusoids, scaled to unit maximum
/// displacement.
struct WarpField {
    waves: Vec<[f64; 3]>,
}

impl WarpField {
    fn new(rng: &mut ChaCha8Rng, extent: f64) -> Self {
        let waves = (0..4)
            .map(|_| {
                let f = rng.random_range(1.0..3.0) * std::f64::consts::TAU / extent;
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                [f * theta.cos(), f * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU)]
            })
            .collect();
        Self { waves }
    }

    fn at(&self, x: f64, y: f64) -> (f64, f64) {
        let mut dx = 0.0;
        let mut dy = 0.0;
        for (k, w) in self.waves.iter().enumerate() {
            let s = (w[0] * x + w[1] * y + w[2]).sin();
            if k % 2 == 0 {
                dx += s;
            } else {
                dy += s;
            }
        }
        // two waves per axis, so each component is at most 2 in magnitude
        let len = (dx * dx + dy * dy).sqrt();
        let scale = if len > 2.0 { 2.0 / len } else { 1.0 };
        (dx * scale * 0.5, dy * scale * 0.5)
    }
}

/// Gaussian blur that only mixes masked-in pixels.
pub fn masked_gaussian(image: &Image, mask: &[bool], sigma: f64) -> Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    // premultiplied color plus a weight plane, blurred separably
    let stride = ch + 1;
    let mut buf = vec![0.0; w * h * stride];
    for i in 0..w * h {
        if mask[i] {
            buf[i * stride..i * stride + ch].copy_from_slice(image.pixel(i));
            buf[i * stride + ch] = 1.0;
        }
    }
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; src.len()];
        dst.par_chunks_mut(w * stride).enumerate().for_each(|(y, row)| {
            for x in 0..w {
                let acc = &mut row[x * stride..(x + 1) * stride];
                for (k, kv) in kernel.iter().enumerate() {
                    let d = k as isize - radius;
                    let (sx, sy) = if horizontal { (x as isize + d, y as isize) } else { (x as isize, y as isize + d) };
                    if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                        continue;
                    }
                    let j = (sy as usize * w + sx as usize) * stride;
                    for c in 0..stride {
                        acc[c] += kv * src[j + c];
                    }
                }
            }
        });
        dst
    };
    let buf = pass(&pass(&buf, true), false);
    let mut out = image.clone();
    for i in 0..w * h {
        let wt = buf[i * stride + ch];
        if mask[i] && wt > 0.0 {
            for c in 0..ch {
                out.pixel_mut(i)[c] = buf[i * stride + c] / wt;
            }
        }
    }
    out
}

/// `10 log10(1 / MSE)` over masked pixels and all channels. Identical
/// inputs give `+inf`.
pub fn psnr(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if mask.is_some_and(|m| m.len() != a.pixel_count()) {
        return Err(Error::dims("mask does not match the images"));
    }
    let ch = a.channels();
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.pixel_count() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        for c in 0..ch {
            let d = a.pixel(i)[c] - b.pixel(i)[c];
            sum += d * d;
        }
        n += ch;
    }
    if n == 0 {
        return Err(Error::invalid("PSNR over an empty mask"));
    }
    let mse = sum / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub view_id: u32,
    pub spec_index: usize,
    /// Single-view bake of the corrupted image.
    pub predicted: Image,
    /// Single-view bake of the clean image.
    pub ground_truth: Image,
    pub target: UncertaintyMap,
    pub covered: Vec<bool>,
}

/// One pair per (view, spec): both the clean and the corrupted render are
/// back-projected alone, and the target is `1 - SSIM` between the two bakes
/// (1 on texels the corrupted view does not cover).
pub fn make_uq_training_pairs(
    mesh: &TriMesh,
    textures: &TextureSet,
    views: &[View],
    specs: &[CorruptionSpec],
) -> Result<Vec<TrainingPair>> {
    textures.validate()?;
    for s in specs {
        s.validate()?;
    }
    let mesh = if mesh.vertex_normals.is_some() {
        mesh.clone()
    } else {
        compute_vertex_normals(mesh)
    };
    let tg = rasterize_uv_atlas(&mesh, textures.resolution)?;
    let bp = BackprojectConfig::for_mesh(&mesh, BakeConfig::default().depth_tolerance_scale, 85.0);
    let mut pairs = Vec::with_capacity(views.len() * specs.len());
    for view in views {
        let img = render_view_image(&mesh, textures, view)?;
        let fg = img.valid.clone().expect("renders carry a mask");
        let depth = raster::render_depth(&mesh, view);
        let clean = backproject_view(&tg, view, &img.albedo, &depth, None, &bp)?;
        for (k, spec) in specs.iter().enumerate() {
            let c = corrupt(&img.albedo, &fg, &spec.for_view(view.id))?;
            let pred = backproject_view(&tg, view, &c.image, &depth, Some(&c.valid), &bp)?;
            let target = oracle_uncertainty(&pred, &clean.values)?;
            pairs.push(TrainingPair {
                view_id: view.id,
                spec_index: k,
                predicted: pred.values,
                ground_truth: clean.values.clone(),
                target,
                covered: pred.covered,
            });
        }
    }
    Ok(pairs)
}

/// Renders the textured mesh and applies a chain of corruptions, reseeded
/// per view. Holes shrink the valid mask for both albedo and MR.
pub struct CorruptedProvider<'a> {
    pub mesh: &'a TriMesh,
    pub textures: &'a TextureSet,
    pub specs: &'a [CorruptionSpec],
}

impl ViewProvider for CorruptedProvider<'_> {
    fn acquire(&self, view: &View) -> Result<ViewImage> {
        let mut img = render_view_image(self.mesh, self.textures, view)?;
        let mut valid = img.valid.take().expect("renders carry a mask");
        for spec in self.specs {
            let c = corrupt(&img.albedo, &valid, &spec.for_view(view.id))?;
            img.albedo = c.image;
            valid = c.valid;
        }
        img.valid = Some(valid);
        Ok(img)
    }
}

/// Hole plus blur, the default comparison scenario.
pub fn hole_blur_suite(seed: u64) -> Vec<CorruptionSpec> {
    vec![
        CorruptionSpec {
            kind: CorruptionKind::Hole,
            magnitude: 0.0,
            region_fraction: 0.1,
            seed,
        },
        CorruptionSpec {
            kind: CorruptionKind::Blur,
            magnitude: 4.0,
            region_fraction: 0.35,
            seed: seed.wrapping_add(1),
        },
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPsnr {
    pub view_id: u32,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub seed: u64,
    pub views_used: Vec<u32>,
    pub per_view_psnr: Vec<ViewPsnr>,
    pub worst_view_psnr: f64,
    pub worst_view_id: u32,
    pub uncovered_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub median_worst_view_psnr: f64,
    pub mean_uncovered_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub runs: Vec<StrategyRun>,
    pub summary: Vec<StrategySummary>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Bakes the corrupted views once per strategy and scores each result by
/// rendering it from every candidate and comparing with ground-truth
/// renders. Both strategies select exactly `max_views` views and blend with
/// oracle uncertainty, so only the selection rule differs.
pub fn compare_strategies(
    ctx: &BakeContext,
    textures: &TextureSet,
    suite: &[CorruptionSpec],
    seed: u64,
    config: &BakeConfig,
) -> Result<Vec<(StrategyRun, BakeResult)>> {
    let truth: Vec<(u32, Image, Vec<bool>)> = ctx
        .candidates
        .iter()
        .map(|v| {
            let p = raster::render_preview(&ctx.mesh, textures, v)?;
            Ok((v.id, p.color, p.mask))
        })
        .collect::<Result<_>>()?;
    let provider = CorruptedProvider {
        mesh: &ctx.mesh,
        textures,
        specs: suite,
    };
    let oracle = OracleUncertainty {
        ground_truth: textures.albedo.clone(),
        ssim: SsimConfig::default(),
    };
    [Strategy::Uq, Strategy::Coverage]
        .into_iter()
        .map(|strategy| {
            let cfg = BakeConfig {
                strategy,
                exhaust_views: true,
                ..config.clone()
            };
            let result = bake_with_context(ctx, &provider, &oracle, &cfg)?;
            let mut per_view = Vec::with_capacity(truth.len());
            for (id, gt, mask) in &truth {
                let view = ctx.view(*id).expect("candidate");
                let r = raster::render_preview(&ctx.mesh, &result.textures, view)?;
                let p = if mask.iter().any(|&m| m) { psnr(&r.color, gt, Some(mask))? } else { f64::INFINITY };
                per_view.push(ViewPsnr { view_id: *id, psnr: p });
            }
            let worst = per_view
                .iter()
                .copied()
                .fold(None::<ViewPsnr>, |acc, v| match acc {
                    Some(a) if a.psnr <= v.psnr => Some(a),
                    _ => Some(v),
                })
                .expect("at least one candidate");
            Ok((
                StrategyRun {
                    strategy,
                    seed,
                    views_used: result.views_used.clone(),
                    per_view_psnr: per_view,
                    worst_view_psnr: worst.psnr,
                    worst_view_id: worst.view_id,
                    uncovered_fraction: result.uncovered_fraction(),
                },
                result,
            ))
        })
        .collect()
}

/// Runs [`compare_strategies`] for each seed on the hole+blur suite.
pub fn compare_over_seeds(
    ctx: &BakeContext,
    textures: &TextureSet,
    seeds: &[u64],
    config: &BakeConfig,
) -> Result<CompareReport> {
    let per_seed: Vec<Vec<StrategyRun>> = seeds
        .par_iter()
        .map(|&s| {
            Ok(compare_strategies(ctx, textures, &hole_blur_suite(s), s, config)?
                .into_iter()
                .map(|(r, _)| r)
                .collect())
        })
        .collect::<Result<_>>()?;
    let runs: Vec<StrategyRun> = per_seed.into_iter().flatten().collect();
    let summary = [Strategy::Uq, Strategy::Coverage]
        .into_iter()
        .map(|strategy| {
            let mine: Vec<&StrategyRun> = runs.iter().filter(|r| r.strategy == strategy).collect();
            let worst: Vec<f64> = mine.iter().map(|r| r.worst_view_psnr).collect();
            StrategySummary {
                strategy,
                median_worst_view_psnr: median(&worst),
                mean_uncovered_fraction: mine.iter().map(|r| r.uncovered_fraction).sum::<f64>() / mine.len().max(1) as f64,
            }
        })
        .collect();
    Ok(CompareReport { runs, summary })
}
