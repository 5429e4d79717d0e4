//! Software rasterization: per-view G-buffers, the UV-atlas texel geometry,
//! and unlit preview renders.
//!
//! Coverage is decided with exact integer edge functions on vertices snapped
//! to 1/256 pixel, using a top-left fill rule, so shared edges are covered
//! exactly once. Attributes are interpolated from the unsnapped f64
//! coordinates. The image is split into row bands that are rasterized
//! independently; each band walks triangles in index order and depth ties
//! keep the earlier triangle, so the output does not depend on the number
//! of worker threads.

use nalgebra::Point3;
use rayon::prelude::*;

use crate::camera::View;
use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};
use crate::image::Image;
use crate::pbrtex::TextureSet;

pub const NO_TRIANGLE: u32 = u32::MAX;

const SUBPIXEL_BITS: u32 = 8;
const SUBPIXEL: f64 = (1 << SUBPIXEL_BITS) as f64;
const BAND_ROWS: usize = 16;

/// A triangle already mapped to continuous pixel coordinates.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ScreenTri {
    pub xy: [[f64; 2]; 3],
    /// Perspective divisor per corner (1 for affine interpolation).
    pub w: [f64; 3],
    /// Depth-ordering key per corner (view-space z).
    pub key: [f64; 3],
}

/// Per-pixel winning triangle and its perspective-corrected barycentrics.
#[derive(Clone, Debug)]
pub(crate) struct VisBuffer {
    pub width: usize,
    pub height: usize,
    pub tri: Vec<u32>,
    pub bary: Vec<[f64; 3]>,
    /// Pixels covered by more than one triangle (only counted without depth test).
    pub conflicts: usize,
}

#[derive(Clone, Copy)]
struct Prepared {
    index: u32,
    fixed: [[i64; 2]; 3],
    tri: ScreenTri,
    inv_area: f64,
    bias: [i64; 3],
    y_min: usize,
    y_max: usize,
    x_min: usize,
    x_max: usize,
}

fn edge_i(a: [i64; 2], b: [i64; 2], p: [i64; 2]) -> i64 {
    (p[0] - a[0]) * (b[1] - a[1]) - (p[1] - a[1]) * (b[0] - a[0])
}

fn edge_f(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (p[0] - a[0]) * (b[1] - a[1]) - (p[1] - a[1]) * (b[0] - a[0])
}

fn prepare(index: u32, mut tri: ScreenTri, width: usize, height: usize) -> Option<(Prepared, bool)> {
    let snap = |v: f64| (v * SUBPIXEL).round() as i64;
    let mut fixed = tri.xy.map(|p| [snap(p[0]), snap(p[1])]);
    let area = edge_i(fixed[0], fixed[1], fixed[2]);
    if area == 0 {
        return None;
    }
    // normalize winding so that inside means all edge functions >= 0;
    // swapping corners 1 and 2 is undone when barycentrics are emitted
    let swapped = area < 0;
    if swapped {
        fixed.swap(1, 2);
        tri.xy.swap(1, 2);
        tri.w.swap(1, 2);
        tri.key.swap(1, 2);
    }
    let mut bias = [0i64; 3];
    for k in 0..3 {
        let a = fixed[(k + 1) % 3];
        let b = fixed[(k + 2) % 3];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        // top-left rule: pixels exactly on an edge belong to it only for one
        // of the two edge directions
        let owns = dy > 0 || (dy == 0 && dx < 0);
        bias[k] = if owns { 0 } else { -1 };
    }
    let xs = tri.xy.map(|p| p[0]);
    let ys = tri.xy.map(|p| p[1]);
    let lo = |v: [f64; 3]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = |v: [f64; 3]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x_lo = (lo(xs) - 0.5).ceil().max(0.0);
    let x_hi = (hi(xs) - 0.5).floor().min(width as f64 - 1.0);
    let y_lo = (lo(ys) - 0.5).ceil().max(0.0);
    let y_hi = (hi(ys) - 0.5).floor().min(height as f64 - 1.0);
    if !(x_lo <= x_hi && y_lo <= y_hi) {
        return None;
    }
    let farea = edge_f(tri.xy[0], tri.xy[1], tri.xy[2]);
    if farea == 0.0 || !farea.is_finite() {
        return None;
    }
    let p = Prepared {
        index,
        fixed,
        tri,
        inv_area: 1.0 / farea,
        bias,
        y_min: y_lo as usize,
        y_max: y_hi as usize,
        x_min: x_lo as usize,
        x_max: x_hi as usize,
    };
    Some((p, swapped))
}

/// Rasterizes screen triangles. Entry `i` of `tris` is triangle `i`; `None`
/// entries are skipped. With `depth_test` the nearest key wins, otherwise
/// the lowest triangle index wins and overlaps are counted.
pub(crate) fn rasterize(width: usize, height: usize, tris: &[Option<ScreenTri>], depth_test: bool) -> VisBuffer {
    let prepared: Vec<(Prepared, bool)> = tris
        .iter()
        .enumerate()
        .filter_map(|(i, t)| prepare(i as u32, (*t)?, width, height))
        .collect();

    let n = width * height;
    let mut tri = vec![NO_TRIANGLE; n];
    let mut bary = vec![[0.0; 3]; n];
    let mut key = vec![f64::INFINITY; n];
    let mut conflict = vec![false; n];

    let band_len = BAND_ROWS * width;
    tri.par_chunks_mut(band_len)
        .zip(bary.par_chunks_mut(band_len))
        .zip(key.par_chunks_mut(band_len))
        .zip(conflict.par_chunks_mut(band_len))
        .enumerate()
        .for_each(|(band, (((tri, bary), key), conflict))| {
            let y0 = band * BAND_ROWS;
            let y1 = (y0 + BAND_ROWS).min(height) - 1;
            for (p, swapped) in &prepared {
                if p.y_max < y0 || p.y_min > y1 {
                    continue;
                }
                let ya = p.y_min.max(y0);
                let yb = p.y_max.min(y1);
                for y in ya..=yb {
                    let py_i = (y as i64) * (1 << SUBPIXEL_BITS) + (1 << (SUBPIXEL_BITS - 1));
                    let py = y as f64 + 0.5;
                    for x in p.x_min..=p.x_max {
                        let px_i = (x as i64) * (1 << SUBPIXEL_BITS) + (1 << (SUBPIXEL_BITS - 1));
                        let pi = [px_i, py_i];
                        let e0 = edge_i(p.fixed[1], p.fixed[2], pi);
                        let e1 = edge_i(p.fixed[2], p.fixed[0], pi);
                        let e2 = edge_i(p.fixed[0], p.fixed[1], pi);
                        if e0 + p.bias[0] < 0 || e1 + p.bias[1] < 0 || e2 + p.bias[2] < 0 {
                            continue;
                        }
                        let idx = (y - y0) * width + x;
                        let pf = [x as f64 + 0.5, py];
                        let l0 = edge_f(p.tri.xy[1], p.tri.xy[2], pf) * p.inv_area;
                        let l1 = edge_f(p.tri.xy[2], p.tri.xy[0], pf) * p.inv_area;
                        let l2 = 1.0 - l0 - l1;
                        let mut b = [l0 / p.tri.w[0], l1 / p.tri.w[1], l2 / p.tri.w[2]];
                        let s = b[0] + b[1] + b[2];
                        b.iter_mut().for_each(|v| *v /= s);
                        let k = b[0] * p.tri.key[0] + b[1] * p.tri.key[1] + b[2] * p.tri.key[2];
                        if depth_test {
                            if k >= key[idx] {
                                continue;
                            }
                        } else if tri[idx] != NO_TRIANGLE {
                            conflict[idx] = true;
                            continue;
                        }
                        if *swapped {
                            b.swap(1, 2);
                        }
                        tri[idx] = p.index;
                        bary[idx] = b;
                        key[idx] = k;
                    }
                }
            }
        });

    let conflicts = if depth_test { 0 } else { conflict.iter().filter(|&&c| c).count() };
    VisBuffer {
        width,
        height,
        tri,
        bary,
        conflicts,
    }
}

fn interpolate3(v: [Vec3; 3], b: [f64; 3]) -> Vec3 {
    v[0] * b[0] + v[1] * b[1] + v[2] * b[2]
}

fn screen_tris(mesh: &TriMesh, view: &View) -> Vec<Option<ScreenTri>> {
    let frame = view.frame();
    let projected: Vec<_> = mesh
        .positions
        .iter()
        .map(|p| view.project(&frame, &p.coords))
        .collect();
    (0..mesh.triangle_count())
        .map(|t| {
            if mesh.is_degenerate(t) {
                return None;
            }
            let idx = mesh.triangles[t];
            let pr = idx.map(|i| projected[i as usize]);
            if pr.iter().any(|p| !(p.w > 1e-9) || !p.x.is_finite() || !p.y.is_finite()) {
                return None;
            }
            let key = idx.map(|i| (mesh.positions[i as usize].coords - frame.eye).dot(&frame.forward));
            Some(ScreenTri {
                xy: pr.map(|p| [p.x, p.y]),
                w: pr.map(|p| p.w),
                key,
            })
        })
        .collect()
}

pub(crate) fn view_visibility(mesh: &TriMesh, view: &View) -> VisBuffer {
    rasterize(view.resolution, view.resolution, &screen_tris(mesh, view), true)
}

/// Geometry images of one view. Background pixels have `mask = false`,
/// infinite depth and zero normal/position.
#[derive(Clone, Debug)]
pub struct GBuffer {
    pub view_id: u32,
    pub resolution: usize,
    pub normal_map: Vec<Vec3>,
    pub position_map: Vec<Vec3>,
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
    pub triangle_id: Vec<u32>,
}

impl GBuffer {
    pub fn normal_image(&self) -> Image {
        vec3_image(self.resolution, &self.normal_map)
    }

    pub fn position_image(&self) -> Image {
        vec3_image(self.resolution, &self.position_map)
    }

    pub fn depth_image(&self) -> Image {
        Image::from_vec(self.resolution, self.resolution, 1, self.depth.clone()).expect("depth size")
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn vec3_image(res: usize, v: &[Vec3]) -> Image {
    Image::from_vec(res, res, 3, v.iter().flat_map(|n| [n.x, n.y, n.z]).collect()).expect("vec3 image size")
}

fn smooth_normal(mesh: &TriMesh, normals: &[Vec3], t: usize, b: [f64; 3]) -> Vec3 {
    let idx = mesh.triangles[t];
    let n = interpolate3(idx.map(|i| normals[i as usize]), b);
    let len = n.norm();
    if len > 1e-12 {
        n / len
    } else {
        mesh.face_cross(t).normalize()
    }
}

pub fn render_gbuffer(mesh: &TriMesh, view: &View) -> GBuffer {
    let vis = view_visibility(mesh, view);
    gbuffer_from_vis(mesh, view, &vis)
}

pub(crate) fn gbuffer_from_vis(mesh: &TriMesh, view: &View, vis: &VisBuffer) -> GBuffer {
    let normals = mesh.normals();
    let frame = view.frame();
    let n = vis.tri.len();
    let mut normal_map = vec![Vec3::zeros(); n];
    let mut position_map = vec![Vec3::zeros(); n];
    let mut depth = vec![f64::INFINITY; n];
    normal_map
        .par_iter_mut()
        .zip(position_map.par_iter_mut())
        .zip(depth.par_iter_mut())
        .enumerate()
        .for_each(|(i, ((nrm, pos), d))| {
            let t = vis.tri[i];
            if t == NO_TRIANGLE {
                return;
            }
            let t = t as usize;
            let b = vis.bary[i];
            let corners = mesh.corners(t).map(|p| p.coords);
            let p = interpolate3(corners, b);
            *pos = p;
            *nrm = smooth_normal(mesh, &normals, t, b);
            *d = view.depth_of(&frame, &p);
        });
    GBuffer {
        view_id: view.id,
        resolution: view.resolution,
        normal_map,
        position_map,
        depth,
        mask: vis.tri.iter().map(|&t| t != NO_TRIANGLE).collect(),
        triangle_id: vis.tri.clone(),
    }
}

/// Depth and foreground mask of one view, the part of a G-buffer that
/// visibility tests need.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthBuffer {
    pub view_id: u32,
    pub resolution: usize,
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
}

impl GBuffer {
    pub fn depth_buffer(&self) -> DepthBuffer {
        DepthBuffer {
            view_id: self.view_id,
            resolution: self.resolution,
            depth: self.depth.clone(),
            mask: self.mask.clone(),
        }
    }
}

pub fn render_depth(mesh: &TriMesh, view: &View) -> DepthBuffer {
    let vis = view_visibility(mesh, view);
    let frame = view.frame();
    let depth = vis
        .tri
        .par_iter()
        .zip(vis.bary.par_iter())
        .map(|(&t, &b)| {
            if t == NO_TRIANGLE {
                return f64::INFINITY;
            }
            let p = interpolate3(mesh.corners(t as usize).map(|p| p.coords), b);
            view.depth_of(&frame, &p)
        })
        .collect();
    DepthBuffer {
        view_id: view.id,
        resolution: view.resolution,
        depth,
        mask: vis.tri.iter().map(|&t| t != NO_TRIANGLE).collect(),
    }
}

/// Surface samples at the centers of the UV-atlas texels.
#[derive(Clone, Debug)]
pub struct TexelGeometry {
    pub resolution: usize,
    pub position: Vec<Vec3>,
    pub normal: Vec<Vec3>,
    pub occupied: Vec<bool>,
    pub triangle_id: Vec<u32>,
    /// Texels claimed by more than one UV triangle.
    pub conflicts: usize,
}

impl TexelGeometry {
    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }
}

/// Maps a UV coordinate to continuous texel coordinates (row 0 is v = 1).
pub fn uv_to_texel(uv: [f64; 2], resolution: usize) -> [f64; 2] {
    let n = resolution as f64;
    [uv[0] * n, (1.0 - uv[1]) * n]
}

pub fn rasterize_uv_atlas(mesh: &TriMesh, resolution: usize) -> Result<TexelGeometry> {
    if resolution == 0 {
        return Err(Error::invalid("atlas resolution must be positive"));
    }
    let tris: Vec<Option<ScreenTri>> = (0..mesh.triangle_count())
        .map(|t| {
            if mesh.is_degenerate(t) {
                return None;
            }
            let uv = mesh.corner_uvs[t];
            Some(ScreenTri {
                xy: uv.map(|c| uv_to_texel([c.x, c.y], resolution)),
                w: [1.0; 3],
                key: [0.0; 3],
            })
        })
        .collect();
    let vis = rasterize(resolution, resolution, &tris, false);
    if vis.tri.iter().all(|&t| t == NO_TRIANGLE) {
        return Err(Error::EmptyAtlas);
    }
    let normals = mesh.normals();
    let n = vis.tri.len();
    let mut position = vec![Vec3::zeros(); n];
    let mut normal = vec![Vec3::zeros(); n];
    position
        .par_iter_mut()
        .zip(normal.par_iter_mut())
        .enumerate()
        .for_each(|(i, (pos, nrm))| {
            let t = vis.tri[i];
            if t == NO_TRIANGLE {
                return;
            }
            let t = t as usize;
            let b = vis.bary[i];
            *pos = interpolate3(mesh.corners(t).map(|p| p.coords), b);
            *nrm = smooth_normal(mesh, &normals, t, b);
        });
    Ok(TexelGeometry {
        resolution,
        position,
        normal,
        occupied: vis.tri.iter().map(|&t| t != NO_TRIANGLE).collect(),
        triangle_id: vis.tri,
        conflicts: vis.conflicts,
    })
}

/// An unlit render: sampled texture colors plus the foreground mask.
#[derive(Clone, Debug)]
pub struct Preview {
    pub color: Image,
    pub mask: Vec<bool>,
}

/// Renders any texture-space image through a view by bilinear sampling at
/// the interpolated UV. Background pixels are zero.
pub fn render_texture(mesh: &TriMesh, texture: &Image, view: &View) -> Result<Preview> {
    if texture.width() != texture.height() || texture.width() == 0 {
        return Err(Error::dims("textures must be square and non-empty"));
    }
    let vis = view_visibility(mesh, view);
    Ok(render_texture_vis(mesh, texture, &vis))
}

pub(crate) fn render_texture_vis(mesh: &TriMesh, texture: &Image, vis: &VisBuffer) -> Preview {
    let ch = texture.channels();
    let nres = texture.width();
    let mut color = Image::new(vis.width, vis.height, ch);
    color
        .data_mut()
        .par_chunks_mut(ch)
        .enumerate()
        .for_each(|(i, out)| {
            let t = vis.tri[i];
            if t == NO_TRIANGLE {
                return;
            }
            let uv = mesh.corner_uvs[t as usize];
            let b = vis.bary[i];
            let u = uv[0].x * b[0] + uv[1].x * b[1] + uv[2].x * b[2];
            let v = uv[0].y * b[0] + uv[1].y * b[1] + uv[2].y * b[2];
            let [tx, ty] = uv_to_texel([u, v], nres);
            texture.sample_bilinear(tx, ty, None, out);
        });
    Preview {
        color,
        mask: vis.tri.iter().map(|&t| t != NO_TRIANGLE).collect(),
    }
}

/// Unlit albedo render of a textured mesh.
pub fn render_preview(mesh: &TriMesh, textures: &TextureSet, view: &View) -> Result<Preview> {
    textures.validate()?;
    render_texture(mesh, &textures.albedo, view)
}

/// Brute-force nearest hit along a ray (Möller–Trumbore over every
/// triangle). Used as the reference for rasterizer and visibility tests.
pub fn ray_cast_nearest(mesh: &TriMesh, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for t in 0..mesh.triangle_count() {
        let [a, b, c] = mesh.corners(t).map(|p: Point3<f64>| p.coords);
        let e1 = b - a;
        let e2 = c - a;
        let pv = dir.cross(&e2);
        let det = e1.dot(&pv);
        if det.abs() < 1e-14 {
            continue;
        }
        let inv = 1.0 / det;
        let tv = origin - a;
        let u = tv.dot(&pv) * inv;
        if !(0.0..=1.0).contains(&u) {
            continue;
        }
        let qv = tv.cross(&e1);
        let v = dir.dot(&qv) * inv;
        if v < 0.0 || u + v > 1.0 {
            continue;
        }
        let dist = e2.dot(&qv) * inv;
        if dist > t_min && best.is_none_or(|(_, d)| dist < d) {
            best = Some((t, dist));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{make_view, FramingConfig};
    use crate::geometry::{compute_vertex_normals, Vec2};

    fn small_view(res: usize) -> View {
        make_view(
            0.0,
            0.0,
            &FramingConfig {
                resolution: res,
                ..FramingConfig::default()
            },
        )
        .unwrap()
    }

    fn tri_mesh(pts: &[[f64; 3]], tris: &[[u32; 3]]) -> TriMesh {
        let m = TriMesh::new(
            pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect(),
            tris.to_vec(),
            vec![[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]; tris.len()],
        )
        .unwrap();
        compute_vertex_normals(&m)
    }

    #[test]
    fn single_front_triangle() {
        let m = tri_mesh(&[[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.0, 0.5, 0.0]], &[[0, 1, 2]]);
        let g = render_gbuffer(&m, &small_view(64));
        let center = 32 * 64 + 32;
        assert!(g.mask[center]);
        for i in 0..g.mask.len() {
            if g.mask[i] {
                assert!((g.normal_map[i] - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-4);
                assert!((g.depth[i] - 2.0).abs() < 1e-12);
            } else {
                assert_eq!(g.depth[i], f64::INFINITY);
                assert_eq!(g.normal_map[i], Vec3::zeros());
            }
        }
    }

    #[test]
    fn nearer_triangle_wins() {
        // camera at +Z: z = 0.4 is nearer (depth 1.6) than z = 0.2 (depth 1.8)
        let m = tri_mesh(
            &[
                [-0.5, -0.5, 0.2],
                [0.5, -0.5, 0.2],
                [0.0, 0.5, 0.2],
                [-0.5, -0.5, 0.4],
                [0.5, -0.5, 0.4],
                [0.0, 0.5, 0.4],
            ],
            &[[0, 1, 2], [3, 4, 5]],
        );
        let g = render_gbuffer(&m, &small_view(32));
        for i in 0..g.mask.len() {
            if g.mask[i] {
                assert_eq!(g.triangle_id[i], 1);
            }
        }
    }

    #[test]
    fn shared_edge_is_covered_once() {
        // a quad split along its diagonal: every covered pixel belongs to
        // exactly one triangle, and no conflicts arise in the UV atlas
        let quad = crate::fixtures::unit_quad();
        let tg = rasterize_uv_atlas(&quad, 64).unwrap();
        assert_eq!(tg.conflicts, 0);
        assert_eq!(tg.occupied_count(), 64 * 64);
    }

    #[test]
    fn identical_uv_triangles_conflict() {
        let m = tri_mesh(
            &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]],
            &[[0, 1, 2], [3, 4, 5]],
        );
        let tg = rasterize_uv_atlas(&m, 32).unwrap();
        let occupied = tg.occupied_count();
        assert!(occupied > 0);
        assert_eq!(tg.conflicts, occupied);
        assert!(tg.triangle_id.iter().all(|&t| t == 0 || t == NO_TRIANGLE));
    }

    #[test]
    fn planar_quad_texels_match_analytic_map() {
        let quad = crate::fixtures::unit_quad();
        let tg = rasterize_uv_atlas(&quad, 32).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let i = y * 32 + x;
                let u = (x as f64 + 0.5) / 32.0;
                let v = 1.0 - (y as f64 + 0.5) / 32.0;
                // unit_quad spans [-0.5, 0.5]^2 at z = 0
                let expected = Vec3::new(u - 0.5, v - 0.5, 0.0);
                assert!((tg.position[i] - expected).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn empty_atlas_is_error() {
        let m = TriMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
            vec![[Vec2::new(0.5, 0.5); 3]],
        )
        .unwrap();
        assert!(matches!(rasterize_uv_atlas(&m, 16), Err(Error::EmptyAtlas)));
    }

    #[test]
    fn ray_cast_hits_plane() {
        let m = crate::fixtures::unit_quad();
        let hit = ray_cast_nearest(&m, &Vec3::new(0.1, 0.2, 5.0), &Vec3::new(0.0, 0.0, -1.0), 0.0);
        let (_, d) = hit.unwrap();
        assert!((d - 5.0).abs() < 1e-12);
    }
}
