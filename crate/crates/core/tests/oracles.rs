//! Fast implementations checked against slow, obviously-correct references.

mod common;

use nalgebra::{Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nitex::bake::{BakeConfig, BakeContext, BackprojectConfig};
use nitex::camera::{canonical_candidates, make_view, FramingConfig};
use nitex::fixtures;
use nitex::geometry::{compute_vertex_normals, TriMesh};
use nitex::image::Image;
use nitex::kernels::{self, NoiseTensor, TokenMatrix};
use nitex::raster::{render_gbuffer, ray_cast_nearest, NO_TRIANGLE};
use nitex::uncertainty::{mean_ssim, ssim_map, SsimConfig, UncertaintyMap};
use nitex::viewsel::{greedy_select, SelectionState, Strategy};

fn random_mesh(rng: &mut ChaCha8Rng, triangles: usize) -> TriMesh {
    let mut positions = Vec::new();
    let mut tris = Vec::new();
    let mut uvs = Vec::new();
    for t in 0..triangles {
        let center = Vector3::new(rng.random_range(-0.35..0.35), rng.random_range(-0.35..0.35), rng.random_range(-0.35..0.35));
        for _ in 0..3 {
            let off = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
            positions.push(Point3::from(center + off));
        }
        let b = 3 * t as u32;
        tris.push([b, b + 1, b + 2]);
        uvs.push([Vector2::new(0.1, 0.1), Vector2::new(0.9, 0.1), Vector2::new(0.1, 0.9)]);
    }
    TriMesh::new(positions, tris, uvs).unwrap()
}

#[test]
fn rasterizer_matches_ray_cast_on_random_meshes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = FramingConfig {
        resolution: 128,
        ..Default::default()
    };
    let (mut agree, mut total) = (0usize, 0usize);
    for m in 0..6 {
        let mesh = random_mesh(&mut rng, 16);
        let view = make_view(37.0 * m as f64, rng.random_range(-60.0..60.0), &cfg).unwrap();
        let g = render_gbuffer(&mesh, &view);
        let frame = view.frame();
        let n = view.resolution;
        for y in 0..n {
            for x in 0..n {
                let xr = ((x as f64 + 0.5) / n as f64 * 2.0 - 1.0) * view.half_extent;
                let yu = (1.0 - (y as f64 + 0.5) / n as f64 * 2.0) * view.half_extent;
                let origin = frame.eye + frame.right * xr + frame.up * yu;
                let hit = ray_cast_nearest(&mesh, &origin, &frame.forward, 0.0);
                let i = y * n + x;
                let got = g.triangle_id[i];
                let got = (got != NO_TRIANGLE).then_some(got);
                agree += usize::from(hit.map(|(t, _)| t as u32) == got);
                total += 1;
                if let (Some((t, dist)), Some(g_t)) = (hit, got) {
                    if t as u32 == g_t {
                        let p = origin + frame.forward * dist;
                        assert!((p - g.position_map[i]).norm() <= 1e-4);
                    }
                }
            }
        }
    }
    let frac = agree as f64 / total as f64;
    assert!(frac >= 0.999, "agreement {frac}");
}

fn random_image(rng: &mut ChaCha8Rng, n: usize, ch: usize) -> Image {
    Image::from_vec(n, n, ch, (0..n * n * ch).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn ssim_matches_brute_force_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SsimConfig::default();
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let ch = if i % 2 == 0 { 1 } else { 3 };
        let a = random_image(&mut rng, 32, ch);
        let noise = rng.random_range(0.02..0.5);
        let jitter = random_image(&mut rng, 32, ch);
        let b = Image::from_fn(32, 32, ch, |x, y, c| {
            (a.get(x, y, c) + noise * (jitter.get(x, y, c) - 0.5)).clamp(0.0, 1.0)
        });
        let fast = ssim_map(&a, &b, None, &cfg).unwrap();
        let slow = common::brute_ssim(&a, &b, &cfg);
        for (f, s) in fast.iter().zip(&slow) {
            worst = worst.max((f - s).abs());
        }
    }
    assert!(worst <= 1e-6, "max deviation {worst}");
}

#[test]
fn ssim_constant_closed_form_and_identity() {
    let cfg = SsimConfig::default();
    let zero = Image::filled(16, 16, 1, 0.0);
    let one = Image::filled(16, 16, 1, 1.0);
    let expected = cfg.c1() / (1.0 + cfg.c1());
    let got = mean_ssim(&zero, &one, None, &cfg).unwrap();
    assert!((got - expected).abs() <= 1e-8, "{got} vs {expected}");
    assert!((expected - 9.999e-5).abs() < 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_image(&mut rng, 24, 3);
    assert!((mean_ssim(&x, &x, None, &cfg).unwrap() - 1.0).abs() <= 1e-9);
}

fn naive_attention(q: &TokenMatrix, k: &TokenMatrix, v: &TokenMatrix) -> Vec<f64> {
    let d = q.cols() as f64;
    let mut out = Vec::new();
    for i in 0..q.rows() {
        let logits: Vec<f64> = (0..k.rows())
            .map(|j| (0..q.cols()).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / d.sqrt())
            .collect();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for c in 0..v.cols() {
            out.push((0..k.rows()).map(|j| e[j] / s * v.get(j, c)).sum());
        }
    }
    out
}

#[test]
fn attention_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mat = |r: usize, c: usize| TokenMatrix::new(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    for (nq, nk, d, dv) in [(1, 1, 1, 1), (4, 6, 8, 3), (7, 5, 16, 16)] {
        let (q, k, v) = (mat(nq, d), mat(nk, d), mat(nk, dv));
        let fast = kernels::mcaa_attention(&q, &k, &v).unwrap();
        let slow = naive_attention(&q, &k, &v);
        for (a, b) in fast.values().iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn l2_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 48;
    let eps = NoiseTensor::new(vec![3, 4, 4], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let alb = NoiseTensor::new(vec![3, 4, 4], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let g = kernels::loss_l2_grad(&eps, &alb, 2.0).unwrap();
    for i in 0..n {
        let fd = kernels::finite_difference(&eps, &alb, 2.0, i, 1e-5);
        assert!((fd - g[i]).abs() <= 1e-5, "index {i}: {fd} vs {}", g[i]);
    }
}

/// Visible from the view if the facing test passes and nothing lies between
/// the texel and the camera.
fn ray_visible(mesh: &TriMesh, p: &Vector3<f64>, n: &Vector3<f64>, view: &nitex::View, grazing: f64) -> bool {
    let frame = view.frame();
    let to_cam = view.toward_camera(&frame, p);
    if n.dot(&to_cam) < grazing.to_radians().cos() {
        return false;
    }
    let pr = view.project(&frame, p);
    let res = view.resolution as f64;
    if !(0.0..res).contains(&pr.x) || !(0.0..res).contains(&pr.y) {
        return false;
    }
    let origin = p + to_cam * 1e-6;
    ray_cast_nearest(mesh, &origin, &to_cam, 1e-6).is_none()
}

/// Covered fractions of the occupied texels for one view: from the
/// footprint, and from per-texel ray casts.
fn covered_fractions(mesh: TriMesh, resolution: usize, view_id: u32) -> (f64, f64) {
    let mesh = compute_vertex_normals(&mesh);
    let cfg = BakeConfig {
        resolution,
        ..Default::default()
    };
    let views = canonical_candidates();
    let ctx = BakeContext::new(&mesh, &views, &cfg).unwrap();
    let BackprojectConfig { grazing_deg, .. } = ctx.backproject;
    let tg = &ctx.texels;
    let view = ctx.view(view_id).unwrap();
    let occupied = tg.occupied_count() as f64;
    let visible = (0..tg.occupied.len())
        .filter(|&t| tg.occupied[t] && ray_visible(&mesh, &tg.position[t], &tg.normal[t], view, grazing_deg))
        .count();
    (ctx.footprints[&view_id].len() as f64 / occupied, visible as f64 / occupied)
}

#[test]
fn sphere_front_coverage_matches_ray_cast() {
    let (fp, oracle) = covered_fractions(fixtures::uv_sphere(48, 96), 256, 0);
    assert!((fp - oracle).abs() <= 0.01, "footprint {fp} vs ray cast {oracle}");
    assert!(fp < 0.5, "{fp}");
}

#[test]
fn cloth_footprints_never_see_through_folds() {
    let mesh = compute_vertex_normals(&fixtures::draped_cloth(48, 192));
    let cfg = BakeConfig {
        resolution: 256,
        ..Default::default()
    };
    let ctx = BakeContext::new(&mesh, &canonical_candidates(), &cfg).unwrap();
    let tg = &ctx.texels;
    for id in [0, 4, 11, 18] {
        let view = ctx.view(id).unwrap();
        let fp = &ctx.footprints[&id];
        let hidden = fp
            .iter()
            .filter(|&&t| {
                let t = t as usize;
                !ray_visible(&mesh, &tg.position[t], &tg.normal[t], view, ctx.backproject.grazing_deg)
            })
            .count();
        let frac = hidden as f64 / fp.len() as f64;
        assert!(frac <= 0.001, "view {id}: {hidden} of {} footprint texels are occluded", fp.len());
    }
}

#[test]
fn coverage_after_front_picks_back() {
    let mesh = compute_vertex_normals(&fixtures::uv_sphere(24, 48));
    let cfg = BakeConfig {
        resolution: 128,
        ..Default::default()
    };
    let ctx = BakeContext::new(&mesh, &canonical_candidates(), &cfg).unwrap();
    let n = ctx.resolution();
    let mut coverage: Vec<bool> = ctx.texels.occupied.iter().map(|&o| !o).collect();
    for &t in &ctx.footprints[&0] {
        coverage[t as usize] = true;
    }
    let state = SelectionState {
        residual_uncertainty: UncertaintyMap::filled(n, 0.0),
        coverage,
        candidate_footprints: ctx.footprints.clone(),
        used: vec![0],
    };
    let picked = greedy_select(&state, Strategy::Coverage, 2, 0.0).unwrap();
    assert_eq!(picked, vec![0, 1]);
}
