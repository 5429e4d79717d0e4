//! Back-projection of view images into the UV atlas, uncertainty-weighted
//! blending, and the iterative select-and-bake loop.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{view_weight, View, ViewScore};
use crate::error::{Error, Result};
use crate::geometry::{compute_vertex_normals, TriMesh};
use crate::image::Image;
use crate::pbrtex::TextureSet;
use crate::raster::{self, rasterize_uv_atlas, DepthBuffer, TexelGeometry};
use crate::uncertainty::{self, SsimConfig, UncertaintyMap};
use crate::viewsel::{self, CandidateScore, SelectionState, Strategy, UqScore};

/// One view's samples in texture space.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewContribution {
    pub view_id: u32,
    pub values: Image,
    pub covered: Vec<bool>,
    pub uncertainty: Vec<f64>,
}

impl ViewContribution {
    /// Zeroes uncovered values; uncertainty starts at 0 on covered texels
    /// and 1 elsewhere.
    pub fn new(view_id: u32, mut values: Image, covered: Vec<bool>) -> Self {
        assert_eq!(values.pixel_count(), covered.len(), "coverage size");
        for (i, &c) in covered.iter().enumerate() {
            if !c {
                values.pixel_mut(i).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let uncertainty = covered.iter().map(|&c| if c { 0.0 } else { 1.0 }).collect();
        Self {
            view_id,
            values,
            covered,
            uncertainty,
        }
    }

    /// Installs an uncertainty map, forcing 1 on uncovered texels.
    pub fn set_uncertainty(&mut self, map: &UncertaintyMap) -> Result<()> {
        if map.values.len() != self.covered.len() {
            return Err(Error::dims("uncertainty map does not match the atlas"));
        }
        for (i, u) in self.uncertainty.iter_mut().enumerate() {
            *u = if self.covered[i] { map.values[i].clamp(0.0, 1.0) } else { 1.0 };
        }
        Ok(())
    }

    pub fn resolution(&self) -> usize {
        self.values.width()
    }

    pub fn covered_count(&self) -> usize {
        self.covered.iter().filter(|&&c| c).count()
    }

    /// Same coverage and uncertainty over different values (e.g. MR samples
    /// from the same view).
    fn with_values(&self, mut values: Image) -> Self {
        for (i, &c) in self.covered.iter().enumerate() {
            if !c {
                values.pixel_mut(i).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Self {
            view_id: self.view_id,
            values,
            covered: self.covered.clone(),
            uncertainty: self.uncertainty.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackprojectConfig {
    /// Absolute depth tolerance in world units.
    pub depth_tolerance: f64,
    pub grazing_deg: f64,
}

impl BackprojectConfig {
    pub fn for_mesh(mesh: &TriMesh, tolerance_scale: f64, grazing_deg: f64) -> Self {
        Self {
            depth_tolerance: tolerance_scale * mesh.aabb_diagonal(),
            grazing_deg,
        }
    }
}

fn check_view_buffers(view: &View, depth: &DepthBuffer) -> Result<()> {
    if depth.resolution != view.resolution || depth.depth.len() != view.resolution * view.resolution {
        return Err(Error::dims(format!(
            "depth buffer is {}px, view {} is {}px",
            depth.resolution, view.id, view.resolution
        )));
    }
    Ok(())
}

/// Continuous view-pixel position of every texel that passes the inside,
/// depth and facing tests. `pixel_mask` removes additional view pixels
/// (e.g. holes in a generated image).
pub fn texel_projection(
    tg: &TexelGeometry,
    view: &View,
    depth: &DepthBuffer,
    pixel_mask: Option<&[bool]>,
    cfg: &BackprojectConfig,
) -> Result<Vec<Option<[f64; 2]>>> {
    check_view_buffers(view, depth)?;
    if pixel_mask.is_some_and(|m| m.len() != depth.mask.len()) {
        return Err(Error::dims("pixel mask does not match the view"));
    }
    let frame = view.frame();
    let res = view.resolution;
    let cos_limit = cfg.grazing_deg.to_radians().cos();
    let valid = |idx: usize| depth.mask[idx] && pixel_mask.is_none_or(|m| m[idx]);

    Ok((0..tg.position.len())
        .into_par_iter()
        .map(|i| {
            if !tg.occupied[i] {
                return None;
            }
            let p = tg.position[i];
            let proj = view.project(&frame, &p);
            if proj.w <= 1e-9 || !(proj.x >= 0.0 && proj.y >= 0.0 && proj.x < res as f64 && proj.y < res as f64) {
                return None;
            }
            if tg.normal[i].dot(&view.toward_camera(&frame, &p)) < cos_limit {
                return None;
            }
            let (nx, ny) = (proj.x as usize, proj.y as usize);
            let nearest = ny * res + nx;
            if !valid(nearest) {
                return None;
            }
            let d = sample_depth(depth, proj.x, proj.y, nearest);
            if (proj.depth - d).abs() > cfg.depth_tolerance {
                return None;
            }
            Some([proj.x, proj.y])
        })
        .collect())
}

/// Bilinear depth when all four taps are foreground, nearest otherwise.
fn sample_depth(g: &DepthBuffer, x: f64, y: f64, nearest: usize) -> f64 {
    let res = g.resolution;
    let fx = x - 0.5;
    let fy = y - 0.5;
    let (x0, y0) = (fx.floor(), fy.floor());
    if x0 < 0.0 || y0 < 0.0 || x0 + 1.0 >= res as f64 || y0 + 1.0 >= res as f64 {
        return g.depth[nearest];
    }
    let (x0, y0) = (x0 as usize, y0 as usize);
    let taps = [y0 * res + x0, y0 * res + x0 + 1, (y0 + 1) * res + x0, (y0 + 1) * res + x0 + 1];
    if taps.iter().any(|&t| !g.mask[t]) {
        return g.depth[nearest];
    }
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let top = g.depth[taps[0]] * (1.0 - tx) + g.depth[taps[1]] * tx;
    let bottom = g.depth[taps[2]] * (1.0 - tx) + g.depth[taps[3]] * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Texel indices a view would cover.
pub fn view_footprint(tg: &TexelGeometry, view: &View, depth: &DepthBuffer, cfg: &BackprojectConfig) -> Result<Vec<u32>> {
    Ok(texel_projection(tg, view, depth, None, cfg)?
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|_| i as u32))
        .collect())
}

/// Samples `image` at every visible texel.
pub fn backproject_view(
    tg: &TexelGeometry,
    view: &View,
    image: &Image,
    depth: &DepthBuffer,
    pixel_mask: Option<&[bool]>,
    cfg: &BackprojectConfig,
) -> Result<ViewContribution> {
    if image.width() != view.resolution || image.height() != view.resolution {
        return Err(Error::dims(format!(
            "view {} image is {}x{}, expected {}²",
            view.id,
            image.width(),
            image.height(),
            view.resolution
        )));
    }
    let proj = texel_projection(tg, view, depth, pixel_mask, cfg)?;
    let valid: Vec<bool> = match pixel_mask {
        Some(m) => depth.mask.iter().zip(m).map(|(&a, &b)| a && b).collect(),
        None => depth.mask.clone(),
    };
    let n = tg.resolution;
    let ch = image.channels();
    let mut values = Image::new(n, n, ch);
    let mut covered = vec![false; n * n];
    values
        .data_mut()
        .par_chunks_mut(ch)
        .zip(covered.par_iter_mut())
        .zip(proj.par_iter())
        .for_each(|((out, cov), p)| {
            if let Some([x, y]) = *p {
                *cov = image.sample_bilinear(x, y, Some(&valid), out);
                if !*cov {
                    out.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        });
    Ok(ViewContribution::new(view.id, values, covered))
}

/// Blended texture with its coverage and residual uncertainty.
#[derive(Clone, Debug, PartialEq)]
pub struct Blend {
    pub values: Image,
    pub coverage: Vec<bool>,
    pub residual: UncertaintyMap,
}

pub fn blend_views(contributions: &[ViewContribution], weights: &[ViewScore], epsilon1: f64) -> Result<Blend> {
    let w: Vec<f64> = weights.iter().map(|s| s.value()).collect();
    blend_weighted(contributions, &w, epsilon1)
}

/// `t = Σ (1-U) c p / (Σ (1-U) c + ε1)` per texel and channel, summed in
/// ascending view-id order. Residual uncertainty is the `c`-weighted mean of
/// the covering views' uncertainties.
///
/// A covered texel whose every contribution has `U = 1` has a zero
/// denominator; it takes the `c`-weighted mean of the values instead of 0.
pub fn blend_weighted(contributions: &[ViewContribution], weights: &[f64], epsilon1: f64) -> Result<Blend> {
    let first = contributions.first().ok_or_else(|| Error::invalid("no contributions to blend"))?;
    if weights.len() != contributions.len() {
        return Err(Error::invalid("one weight per contribution is required"));
    }
    if !(epsilon1.is_finite() && epsilon1 >= 0.0) {
        return Err(Error::invalid("epsilon1 must be finite and non-negative"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid("view weights must be positive"));
    }
    for c in contributions {
        first.values.ensure_same_shape(&c.values)?;
        if c.covered.len() != first.covered.len() || c.uncertainty.len() != first.covered.len() {
            return Err(Error::dims("contribution masks do not match"));
        }
    }
    let mut order: Vec<usize> = (0..contributions.len()).collect();
    order.sort_by_key(|&i| contributions[i].view_id);
    if order.windows(2).any(|w| contributions[w[0]].view_id == contributions[w[1]].view_id) {
        return Err(Error::invalid("duplicate view id in blend"));
    }

    let (w, h, ch) = (first.values.width(), first.values.height(), first.values.channels());
    let mut values = Image::new(w, h, ch);
    let mut coverage = vec![false; w * h];
    let mut residual = vec![1.0; w * h];
    values
        .data_mut()
        .par_chunks_mut(ch)
        .zip(coverage.par_iter_mut())
        .zip(residual.par_iter_mut())
        .enumerate()
        .for_each(|(i, ((out, cov), res))| {
            let mut den = 0.0;
            let mut csum = 0.0;
            let mut usum = 0.0;
            out.iter_mut().for_each(|v| *v = 0.0);
            for &j in &order {
                let c = &contributions[j];
                if !c.covered[i] {
                    continue;
                }
                let u = c.uncertainty[i];
                let wt = (1.0 - u) * weights[j];
                for (o, p) in out.iter_mut().zip(c.values.pixel(i)) {
                    *o += wt * p;
                }
                den += wt;
                csum += weights[j];
                usum += weights[j] * u;
            }
            if csum == 0.0 {
                return;
            }
            *cov = true;
            *res = (usum / csum).clamp(0.0, 1.0);
            if den > 0.0 {
                out.iter_mut().for_each(|o| *o /= den + epsilon1);
            } else {
                out.iter_mut().for_each(|v| *v = 0.0);
                for &j in &order {
                    let c = &contributions[j];
                    if c.covered[i] {
                        for (o, p) in out.iter_mut().zip(c.values.pixel(i)) {
                            *o += weights[j] * p / csum;
                        }
                    }
                }
            }
        });
    Ok(Blend {
        values,
        coverage,
        residual: UncertaintyMap {
            resolution: w,
            values: residual,
        },
    })
}

/// Grows filled texels outward by `rings` steps. Each step fills a texel
/// from the mean of its filled 4-neighbors, or of its filled diagonal
/// neighbors when no 4-neighbor is filled.
pub fn dilate(values: &mut Image, filled: &mut [bool], rings: usize) {
    let (w, h, ch) = (values.width(), values.height(), values.channels());
    for _ in 0..rings {
        let prev_vals = values.clone();
        let prev = filled.to_vec();
        let mut grew = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if prev[i] {
                    continue;
                }
                let gather = |offs: &[(isize, isize)]| -> Vec<usize> {
                    offs.iter()
                        .filter_map(|&(dx, dy)| {
                            let (nx, ny) = (x as isize + dx, y as isize + dy);
                            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                                return None;
                            }
                            let j = ny as usize * w + nx as usize;
                            prev[j].then_some(j)
                        })
                        .collect()
                };
                let mut src = gather(&[(0, -1), (-1, 0), (1, 0), (0, 1)]);
                if src.is_empty() {
                    src = gather(&[(-1, -1), (1, -1), (-1, 1), (1, 1)]);
                }
                if src.is_empty() {
                    continue;
                }
                let px = values.pixel_mut(i);
                for c in 0..ch {
                    px[c] = src.iter().map(|&j| prev_vals.pixel(j)[c]).sum::<f64>() / src.len() as f64;
                }
                filled[i] = true;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
}

/// Dilates, then writes `fill` into whatever remains unfilled.
pub fn finalize_texture(values: &mut Image, coverage: &[bool], rings: usize, fill: f64) {
    let mut filled = coverage.to_vec();
    dilate(values, &mut filled, rings);
    for (i, &f) in filled.iter().enumerate() {
        if !f {
            values.pixel_mut(i).iter_mut().for_each(|v| *v = fill);
        }
    }
}

/// A view image and, optionally, decoded roughness/metallic (two channels)
/// and a validity mask over view pixels.
#[derive(Clone, Debug)]
pub struct ViewImage {
    pub albedo: Image,
    pub mr: Option<Image>,
    pub valid: Option<Vec<bool>>,
}

pub trait ViewProvider: Sync {
    fn acquire(&self, view: &View) -> Result<ViewImage>;
}

/// Per-contribution uncertainty estimator.
pub trait UncertaintySource: Sync {
    fn estimate(&self, view: &View, contribution: &ViewContribution, occupancy: &[bool]) -> Result<UncertaintyMap>;

    fn name(&self) -> String;
}

/// Renders a textured mesh, optionally through a per-view corruption.
pub struct RenderProvider<'a> {
    pub mesh: &'a TriMesh,
    pub textures: &'a TextureSet,
}

impl ViewProvider for RenderProvider<'_> {
    fn acquire(&self, view: &View) -> Result<ViewImage> {
        render_view_image(self.mesh, self.textures, view)
    }
}

/// Albedo and MR renders of a textured mesh, sharing one visibility pass.
pub fn render_view_image(mesh: &TriMesh, textures: &TextureSet, view: &View) -> Result<ViewImage> {
    textures.validate()?;
    view.validate()?;
    let vis = raster::view_visibility(mesh, view);
    let albedo = raster::render_texture_vis(mesh, &textures.albedo, &vis);
    let mr = raster::render_texture_vis(mesh, &textures.mr_image(), &vis);
    Ok(ViewImage {
        albedo: albedo.color,
        mr: Some(mr.color),
        valid: Some(albedo.mask),
    })
}

/// Reads `view_{id:03}.png` and, when present, `mr_{id:03}.png` from a
/// directory.
pub struct ImageDirProvider {
    pub dir: PathBuf,
}

impl ViewProvider for ImageDirProvider {
    fn acquire(&self, view: &View) -> Result<ViewImage> {
        let albedo = crate::io::read_png(self.dir.join(format!("view_{:03}.png", view.id)))?;
        if albedo.channels != 3 {
            return Err(Error::invalid("view images must be RGB"));
        }
        let mr_path = self.dir.join(format!("mr_{:03}.png", view.id));
        let mr = if mr_path.exists() {
            let png = crate::io::read_png(&mr_path)?;
            if png.channels != 3 {
                return Err(Error::invalid("MR images must be RGB"));
            }
            let enc = crate::pbrtex::MrEncodedImage::from_rgb_bytes(png.width, png.height, &png.data)?;
            let (r, m) = crate::pbrtex::decode_mr(&enc);
            Some(Image::from_fn(png.width, png.height, 2, |x, y, c| {
                if c == 0 {
                    r.get(x, y, 0)
                } else {
                    m.get(x, y, 0)
                }
            }))
        } else {
            None
        };
        Ok(ViewImage {
            albedo: albedo.to_image(),
            mr,
            valid: None,
        })
    }
}

/// `1 - SSIM` against a ground-truth albedo texture.
pub struct OracleUncertainty {
    pub ground_truth: Image,
    pub ssim: SsimConfig,
}

impl UncertaintySource for OracleUncertainty {
    fn estimate(&self, _view: &View, contribution: &ViewContribution, _occupancy: &[bool]) -> Result<UncertaintyMap> {
        uncertainty::oracle_uncertainty_with(contribution, &self.ground_truth, &self.ssim)
    }

    fn name(&self) -> String {
        "oracle".into()
    }
}

pub struct HeuristicUncertainty;

impl UncertaintySource for HeuristicUncertainty {
    fn estimate(&self, _view: &View, contribution: &ViewContribution, occupancy: &[bool]) -> Result<UncertaintyMap> {
        Ok(uncertainty::heuristic_uncertainty(contribution, Some(occupancy)))
    }

    fn name(&self) -> String {
        "heuristic".into()
    }
}

/// Precomputed maps named `uq_{id:03}.pfm` (or `.png`) in a directory.
pub struct ExternalUncertainty {
    pub dir: PathBuf,
}

impl UncertaintySource for ExternalUncertainty {
    fn estimate(&self, view: &View, contribution: &ViewContribution, _occupancy: &[bool]) -> Result<UncertaintyMap> {
        let pfm = self.dir.join(format!("uq_{:03}.pfm", view.id));
        let path = if pfm.exists() {
            pfm
        } else {
            self.dir.join(format!("uq_{:03}.png", view.id))
        };
        uncertainty::external_uncertainty(path, contribution.resolution())
    }

    fn name(&self) -> String {
        format!("external:{}", self.dir.display())
    }
}

/// Trusts every covered texel fully.
pub struct ZeroUncertainty;

impl UncertaintySource for ZeroUncertainty {
    fn estimate(&self, _view: &View, contribution: &ViewContribution, _occupancy: &[bool]) -> Result<UncertaintyMap> {
        Ok(UncertaintyMap::filled(contribution.resolution(), 0.0))
    }

    fn name(&self) -> String {
        "zero".into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BakeConfig {
    pub resolution: usize,
    pub strategy: Strategy,
    pub max_views: usize,
    pub threshold: f64,
    pub epsilon1: f64,
    pub uq_score: UqScore,
    pub grazing_deg: f64,
    /// Depth tolerance as a fraction of the mesh bounding-box diagonal.
    pub depth_tolerance_scale: f64,
    pub dilation_rings: usize,
    pub fill_value: f64,
    /// Keep selecting until `max_views` even when the stop test fires.
    pub exhaust_views: bool,
}

impl Default for BakeConfig {
    fn default() -> Self {
        Self {
            resolution: 512,
            strategy: Strategy::Uq,
            max_views: 10,
            threshold: 0.05,
            epsilon1: 1e-6,
            uq_score: UqScore::Mean,
            grazing_deg: 85.0,
            depth_tolerance_scale: 1e-3,
            dilation_rings: 4,
            fill_value: 0.5,
            exhaust_views: false,
        }
    }
}

impl BakeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::invalid("resolution must be positive"));
        }
        if self.max_views < 2 {
            return Err(Error::invalid("max_views must be at least 2"));
        }
        if !(self.epsilon1.is_finite() && self.epsilon1 >= 0.0) {
            return Err(Error::invalid("epsilon1 must be non-negative"));
        }
        if !self.threshold.is_finite() {
            return Err(Error::invalid("threshold must be finite"));
        }
        if !(0.0..=90.0).contains(&self.grazing_deg) {
            return Err(Error::invalid("grazing angle must lie in [0, 90]"));
        }
        if !(self.depth_tolerance_scale.is_finite() && self.depth_tolerance_scale > 0.0) {
            return Err(Error::invalid("depth tolerance must be positive"));
        }
        if !(0.0..=1.0).contains(&self.fill_value) {
            return Err(Error::invalid("fill value must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub views_used: Vec<u32>,
    pub covered_texels: usize,
    pub mean_residual_uncertainty: f64,
    pub scores: Vec<CandidateScore>,
    pub selected: Option<u32>,
    pub stop_reason: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BakeResult {
    pub textures: TextureSet,
    pub coverage: Vec<bool>,
    pub occupancy: Vec<bool>,
    pub residual_uncertainty: UncertaintyMap,
    pub views_used: Vec<u32>,
    pub per_view_scores: Vec<IterationRecord>,
    /// Blended albedo before dilation and fill.
    pub raw_albedo: Image,
}

impl BakeResult {
    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }

    /// Uncovered share of the occupied atlas.
    pub fn uncovered_fraction(&self) -> f64 {
        let occ = self.occupancy.iter().filter(|&&o| o).count();
        if occ == 0 {
            return 0.0;
        }
        let unc = self.occupancy.iter().zip(&self.coverage).filter(|&(&o, &c)| o && !c).count();
        unc as f64 / occ as f64
    }
}

/// Everything about a mesh and candidate pool that does not depend on the
/// view images: the atlas, per-candidate depth buffers and footprints.
#[derive(Clone, Debug)]
pub struct BakeContext {
    pub mesh: TriMesh,
    pub candidates: Vec<View>,
    pub texels: TexelGeometry,
    pub backproject: BackprojectConfig,
    pub depth: BTreeMap<u32, DepthBuffer>,
    pub footprints: BTreeMap<u32, Vec<u32>>,
}

impl BakeContext {
    pub fn new(mesh: &TriMesh, candidates: &[View], config: &BakeConfig) -> Result<Self> {
        config.validate()?;
        let mesh = if mesh.vertex_normals.is_some() {
            mesh.clone()
        } else {
            compute_vertex_normals(mesh)
        };
        let texels = rasterize_uv_atlas(&mesh, config.resolution)?;
        let backproject = BackprojectConfig::for_mesh(&mesh, config.depth_tolerance_scale, config.grazing_deg);
        for v in candidates {
            v.validate()?;
        }
        let rendered: Vec<(DepthBuffer, Vec<u32>)> = candidates
            .iter()
            .map(|v| {
                let d = raster::render_depth(&mesh, v);
                let fp = view_footprint(&texels, v, &d, &backproject)?;
                Ok((d, fp))
            })
            .collect::<Result<_>>()?;
        let mut depth = BTreeMap::new();
        let mut footprints = BTreeMap::new();
        for (v, (d, fp)) in candidates.iter().zip(rendered) {
            if depth.insert(v.id, d).is_some() {
                return Err(Error::invalid(format!("duplicate candidate id {}", v.id)));
            }
            footprints.insert(v.id, fp);
        }
        Ok(Self {
            mesh,
            candidates: candidates.to_vec(),
            texels,
            backproject,
            depth,
            footprints,
        })
    }

    pub fn view(&self, id: u32) -> Option<&View> {
        self.candidates.iter().find(|v| v.id == id)
    }

    pub fn resolution(&self) -> usize {
        self.texels.resolution
    }
}

struct Acquired {
    albedo: ViewContribution,
    mr: Option<ViewContribution>,
}

/// Seeds with views 0 and 1, then alternates blending and greedy selection
/// until `max_views` or the stop test.
pub fn iterative_bake(
    mesh: &TriMesh,
    candidates: &[View],
    provider: &dyn ViewProvider,
    uq: &dyn UncertaintySource,
    config: &BakeConfig,
) -> Result<BakeResult> {
    let ctx = BakeContext::new(mesh, candidates, config)?;
    bake_with_context(&ctx, provider, uq, config)
}

pub fn bake_with_context(
    ctx: &BakeContext,
    provider: &dyn ViewProvider,
    uq: &dyn UncertaintySource,
    config: &BakeConfig,
) -> Result<BakeResult> {
    config.validate()?;
    if ctx.resolution() != config.resolution {
        return Err(Error::dims("bake context was built for another resolution"));
    }
    let by_id: BTreeMap<u32, &View> = ctx.candidates.iter().map(|v| (v.id, v)).collect();
    for seed in [0, 1] {
        if !by_id.contains_key(&seed) {
            return Err(Error::invalid(format!("candidate set lacks seed view {seed}")));
        }
    }
    let tg = &ctx.texels;
    let bp = &ctx.backproject;

    let mut used: Vec<u32> = vec![0, 1];
    let mut acquired: BTreeMap<u32, Acquired> = BTreeMap::new();
    let mut history = Vec::new();

    let blend = loop {
        for &id in &used {
            if acquired.contains_key(&id) {
                continue;
            }
            let view = by_id[&id];
            let acq = acquire_view(tg, view, &ctx.depth[&id], provider, uq, bp)?;
            acquired.insert(id, acq);
        }
        let (contribs, weights): (Vec<ViewContribution>, Vec<f64>) = acquired
            .iter()
            .map(|(id, a)| (a.albedo.clone(), view_weight(by_id[id]).value()))
            .unzip();
        let blend = blend_weighted(&contribs, &weights, config.epsilon1)?;
        let mut record = IterationRecord {
            iteration: history.len(),
            views_used: used.clone(),
            covered_texels: blend.coverage.iter().filter(|&&c| c).count(),
            mean_residual_uncertainty: mean_over(&blend.residual.values, &tg.occupied),
            scores: vec![],
            selected: None,
            stop_reason: None,
        };
        if used.len() >= config.max_views {
            record.stop_reason = Some("max_views".into());
            history.push(record);
            break blend;
        }
        let state = SelectionState {
            residual_uncertainty: blend.residual.clone(),
            coverage: blend.coverage.clone(),
            candidate_footprints: ctx.footprints.clone(),
            used: used.clone(),
        };
        let scores = viewsel::score_candidates(&state, config.strategy, config.uq_score)?;
        let best = viewsel::pick_best(&scores);
        record.scores = scores;
        let Some(best) = best else {
            record.stop_reason = Some("no candidates left".into());
            history.push(record);
            break blend;
        };
        if !config.exhaust_views && viewsel::should_stop(&best, config.strategy, config.threshold) {
            record.stop_reason = Some("below threshold".into());
            history.push(record);
            break blend;
        }
        log::info!("iteration {}: selected view {} (score {:.4})", history.len(), best.view_id, best.score);
        record.selected = Some(best.view_id);
        history.push(record);
        used.push(best.view_id);
    };

    let n = config.resolution;
    let mut albedo = blend.values.clone();
    albedo.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let raw_albedo = albedo.clone();
    finalize_texture(&mut albedo, &blend.coverage, config.dilation_rings, config.fill_value);

    let (mr_contribs, mr_weights): (Vec<ViewContribution>, Vec<f64>) = acquired
        .iter()
        .filter_map(|(id, a)| a.mr.clone().map(|m| (m, view_weight(by_id[id]).value())))
        .unzip();
    let mr = if mr_contribs.is_empty() {
        Image::filled(n, n, 2, config.fill_value)
    } else {
        let b = blend_weighted(&mr_contribs, &mr_weights, config.epsilon1)?;
        let mut v = b.values;
        v.data_mut().iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        finalize_texture(&mut v, &b.coverage, config.dilation_rings, config.fill_value);
        v
    };
    let textures = TextureSet::new(albedo, mr.channel(0), mr.channel(1))?;

    Ok(BakeResult {
        textures,
        coverage: blend.coverage,
        occupancy: tg.occupied.clone(),
        residual_uncertainty: blend.residual,
        views_used: used,
        per_view_scores: history,
        raw_albedo,
    })
}

fn acquire_view(
    tg: &TexelGeometry,
    view: &View,
    depth: &DepthBuffer,
    provider: &dyn ViewProvider,
    uq: &dyn UncertaintySource,
    bp: &BackprojectConfig,
) -> Result<Acquired> {
    let wrap = |e: Error| match e {
        e @ Error::Provider { .. } => e,
        e => Error::Provider {
            view_id: view.id,
            msg: e.to_string(),
        },
    };
    let img = provider.acquire(view).map_err(wrap)?;
    let mut albedo = backproject_view(tg, view, &img.albedo, depth, img.valid.as_deref(), bp).map_err(wrap)?;
    let u = uq.estimate(view, &albedo, &tg.occupied)?;
    albedo.set_uncertainty(&u)?;
    let mr = match &img.mr {
        Some(m) => {
            let c = backproject_view(tg, view, m, depth, img.valid.as_deref(), bp).map_err(wrap)?;
            Some(albedo.with_values(c.values))
        }
        None => None,
    };
    Ok(Acquired { albedo, mr })
}

fn mean_over(values: &[f64], mask: &[bool]) -> f64 {
    let (s, n) = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}
