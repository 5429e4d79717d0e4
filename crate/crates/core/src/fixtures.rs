//! Procedural meshes and textures used by tests, examples and the CLI
//! `fixture` command. All meshes fit inside the unit box centered at the
//! origin.

use std::f64::consts::TAU;

use nalgebra::Point3;

use crate::bake::finalize_texture;
use crate::error::Result;
use crate::geometry::{TriMesh, Vec2};
use crate::image::Image;
use crate::pbrtex::{sample_uniform_material, TextureSet};
use crate::raster::rasterize_uv_atlas;

fn uv(u: f64, v: f64) -> Vec2 {
    Vec2::new(u, v)
}

/// `[-0.5, 0.5]²` at `z = 0`, facing `+Z`, UVs spanning the whole atlas.
pub fn unit_quad() -> TriMesh {
    let positions = vec![
        Point3::new(-0.5, -0.5, 0.0),
        Point3::new(0.5, -0.5, 0.0),
        Point3::new(0.5, 0.5, 0.0),
        Point3::new(-0.5, 0.5, 0.0),
    ];
    let uvs = [uv(0.0, 0.0), uv(1.0, 0.0), uv(1.0, 1.0), uv(0.0, 1.0)];
    TriMesh::new(
        positions,
        vec![[0, 1, 2], [0, 2, 3]],
        vec![[uvs[0], uvs[1], uvs[2]], [uvs[0], uvs[2], uvs[3]]],
    )
    .expect("quad is valid")
}

/// Axis-aligned cube centered at the origin with one UV tile per face.
/// Every face is split along the diagonal joining its even-parity corners,
/// so area-weighted corner normals point along the cube diagonals.
pub fn cube(side: f64) -> TriMesh {
    let h = side * 0.5;
    let positions: Vec<Point3<f64>> = (0..8u32)
        .map(|b| {
            let c = |bit: u32| if b >> bit & 1 == 1 { h } else { -h };
            Point3::new(c(0), c(1), c(2))
        })
        .collect();
    let index = |p: [i32; 3]| -> u32 {
        let bit = |v: i32, k: u32| if v > 0 { 1u32 << k } else { 0 };
        bit(p[0], 0) | bit(p[1], 1) | bit(p[2], 2)
    };
    // (normal axis, sign, tangent axis 1, tangent axis 2) with t1 × t2 = n
    let faces: [(usize, i32, usize, usize); 6] = [
        (0, 1, 1, 2),
        (0, -1, 2, 1),
        (1, 1, 2, 0),
        (1, -1, 0, 2),
        (2, 1, 0, 1),
        (2, -1, 1, 0),
    ];
    let margin = 0.01;
    let mut triangles = Vec::new();
    let mut corner_uvs = Vec::new();
    for (f, &(axis, sign, t1, t2)) in faces.iter().enumerate() {
        let (tu, tv) = ((f % 3) as f64 / 3.0, (f / 3) as f64 / 2.0);
        let mut q = [0u32; 4];
        let mut quv = [Vec2::zeros(); 4];
        for (k, (s1, s2)) in [(-1, -1), (1, -1), (1, 1), (-1, 1)].into_iter().enumerate() {
            let mut p = [0i32; 3];
            p[axis] = sign;
            p[t1] = s1;
            p[t2] = s2;
            q[k] = index(p);
            let (a, b) = (((s1 + 1) / 2) as f64, ((s2 + 1) / 2) as f64);
            quv[k] = uv(
                tu + margin + a * (1.0 / 3.0 - 2.0 * margin),
                tv + margin + b * (0.5 - 2.0 * margin),
            );
        }
        let k = (0..4).find(|&k| q[k].count_ones() % 2 == 0).expect("a face has two even corners");
        let r = |o: usize| (k + o) % 4;
        triangles.push([q[r(0)], q[r(1)], q[r(2)]]);
        corner_uvs.push([quv[r(0)], quv[r(1)], quv[r(2)]]);
        triangles.push([q[r(0)], q[r(2)], q[r(3)]]);
        corner_uvs.push([quv[r(0)], quv[r(2)], quv[r(3)]]);
    }
    TriMesh::new(positions, triangles, corner_uvs).expect("cube is valid")
}

/// Latitude-longitude sphere of radius 0.5 with single pole vertices.
/// `v = 1` at the top pole, `u` follows the azimuth from `+Z` toward `+X`.
pub fn uv_sphere(rings: usize, segments: usize) -> TriMesh {
    assert!(rings >= 2 && segments >= 3, "sphere needs at least 2 rings and 3 segments");
    let r = 0.5;
    let mut positions = vec![Point3::new(0.0, r, 0.0)];
    for i in 1..rings {
        let theta = std::f64::consts::PI * i as f64 / rings as f64;
        for j in 0..segments {
            let phi = TAU * j as f64 / segments as f64;
            positions.push(Point3::new(r * theta.sin() * phi.sin(), r * theta.cos(), r * theta.sin() * phi.cos()));
        }
    }
    positions.push(Point3::new(0.0, -r, 0.0));
    let bottom = (positions.len() - 1) as u32;
    let ring = |i: usize, j: usize| (1 + (i - 1) * segments + j % segments) as u32;
    let uj = |j: usize| j as f64 / segments as f64;
    let vi = |i: usize| 1.0 - i as f64 / rings as f64;

    let mut triangles = Vec::new();
    let mut corner_uvs = Vec::new();
    for j in 0..segments {
        let mid = (j as f64 + 0.5) / segments as f64;
        triangles.push([0, ring(1, j), ring(1, j + 1)]);
        corner_uvs.push([uv(mid, 1.0), uv(uj(j), vi(1)), uv(uj(j + 1), vi(1))]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            let (a, b, c, d) = (ring(i, j), ring(i + 1, j), ring(i + 1, j + 1), ring(i, j + 1));
            let (ua, ub, uc, ud) = (
                uv(uj(j), vi(i)),
                uv(uj(j), vi(i + 1)),
                uv(uj(j + 1), vi(i + 1)),
                uv(uj(j + 1), vi(i)),
            );
            triangles.push([a, b, c]);
            corner_uvs.push([ua, ub, uc]);
            triangles.push([a, c, d]);
            corner_uvs.push([ua, uc, ud]);
        }
    }
    for j in 0..segments {
        let mid = (j as f64 + 0.5) / segments as f64;
        triangles.push([ring(rings - 1, j), bottom, ring(rings - 1, j + 1)]);
        corner_uvs.push([uv(uj(j), vi(rings - 1)), uv(mid, 0.0), uv(uj(j + 1), vi(rings - 1))]);
    }
    TriMesh::new(positions, triangles, corner_uvs).expect("sphere is valid")
}

/// An open, skirt-like tube whose radius flares toward the hem and carries
/// eight folds that deepen downward. `u` runs around the tube, `v` up it.
pub fn draped_cloth(rings: usize, segments: usize) -> TriMesh {
    assert!(rings >= 1 && segments >= 3, "cloth needs at least 1 ring and 3 segments");
    let point = |h: f64, theta: f64| {
        let hem = 1.0 - h;
        let radius = (0.18 + 0.162 * hem) * (1.0 + 0.35 * hem * (8.0 * theta + 1.3 * h).sin());
        let sway = 0.036 * hem * hem;
        Point3::new(radius * theta.sin() + sway, h - 0.5, radius * theta.cos())
    };
    let mut positions = Vec::with_capacity((rings + 1) * segments);
    for i in 0..=rings {
        let h = i as f64 / rings as f64;
        for j in 0..segments {
            positions.push(point(h, TAU * j as f64 / segments as f64));
        }
    }
    let idx = |i: usize, j: usize| (i * segments + j % segments) as u32;
    let c = |i: usize, j: usize| uv(j as f64 / segments as f64, i as f64 / rings as f64);
    let mut triangles = Vec::new();
    let mut corner_uvs = Vec::new();
    for i in 0..rings {
        for j in 0..segments {
            // a: (i, j), b: (i, j+1), c: (i+1, j+1), d: (i+1, j)
            triangles.push([idx(i, j), idx(i, j + 1), idx(i + 1, j + 1)]);
            corner_uvs.push([c(i, j), c(i, j + 1), c(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i + 1, j)]);
            corner_uvs.push([c(i, j), c(i + 1, j + 1), c(i + 1, j)]);
        }
    }
    TriMesh::new(positions, triangles, corner_uvs).expect("cloth is valid")
}

/// Concatenates meshes, packing each one's atlas into its own vertical
/// strip (`u` scaled by `1/n` and offset by `k/n`).
pub fn merge_packed(meshes: &[TriMesh]) -> TriMesh {
    let n = meshes.len() as f64;
    let mut positions = Vec::new();
    let mut triangles = Vec::new();
    let mut corner_uvs = Vec::new();
    for (k, m) in meshes.iter().enumerate() {
        let base = positions.len() as u32;
        positions.extend_from_slice(&m.positions);
        triangles.extend(m.triangles.iter().map(|t| t.map(|i| i + base)));
        corner_uvs.extend(m.corner_uvs.iter().map(|c| c.map(|q| uv((k as f64 + q.x) / n, q.y))));
    }
    TriMesh::new(positions, triangles, corner_uvs).expect("merged mesh is valid")
}

/// Smooth solid color field, in [0.1, 0.9] per channel. `detail` scales the
/// spatial frequency (1 gives features about a quarter of the unit box).
pub fn solid_color(p: &Point3<f64>, detail: f64) -> [f64; 3] {
    let s = |v: f64| (TAU * detail * v).sin();
    let c = |v: f64| (TAU * detail * v).cos();
    let (x, y, z) = (p.x, p.y, p.z);
    [
        0.5 + 0.25 * s(1.5 * x + 0.5 * y + 0.2) + 0.15 * c(2.0 * z - 0.7 * y),
        0.5 + 0.3 * s(1.2 * y + 0.8 * z + 0.1) + 0.1 * c(1.7 * x),
        0.45 + 0.2 * c(1.6 * x - 1.1 * z) + 0.15 * s(2.5 * y),
    ]
}

/// Bakes [`solid_color`] into the mesh atlas. Texels outside the atlas are
/// dilated from their neighbors, then filled with mid-gray.
pub fn solid_albedo(mesh: &TriMesh, resolution: usize, detail: f64) -> Result<Image> {
    let tg = rasterize_uv_atlas(mesh, resolution)?;
    let mut img = Image::new(resolution, resolution, 3);
    for (i, (&occ, p)) in tg.occupied.iter().zip(&tg.position).enumerate() {
        if occ {
            img.pixel_mut(i).copy_from_slice(&solid_color(&Point3::from(*p), detail));
        }
    }
    finalize_texture(&mut img, &tg.occupied, 4, 0.5);
    Ok(img)
}

/// Ground-truth texture set: solid albedo plus a uniform material drawn
/// from `seed`.
pub fn ground_truth_textures(mesh: &TriMesh, resolution: usize, detail: f64, seed: u64) -> Result<TextureSet> {
    let (roughness, metallic) = sample_uniform_material(seed);
    TextureSet::uniform_material(solid_albedo(mesh, resolution, detail)?, roughness, metallic)
}

/// Looks up a named fixture mesh.
pub fn by_name(name: &str) -> Option<TriMesh> {
    match name {
        "quad" => Some(unit_quad()),
        "cube" => Some(cube(1.0)),
        "sphere" => Some(uv_sphere(48, 96)),
        "cloth" => Some(draped_cloth(48, 192)),
        _ => None,
    }
}

pub const NAMES: [&str; 4] = ["quad", "cube", "sphere", "cloth"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::compute_vertex_normals;

    fn outward(m: &TriMesh) -> bool {
        (0..m.triangle_count()).all(|t| {
            let [a, b, c] = m.corners(t);
            let centroid = (a.coords + b.coords + c.coords) / 3.0;
            m.is_degenerate(t) || m.face_cross(t).dot(&centroid) > 0.0
        })
    }

    #[test]
    fn sphere_faces_outward() {
        let s = uv_sphere(8, 16);
        assert!(outward(&s));
        assert!(s.positions.iter().all(|p| (p.coords.norm() - 0.5).abs() < 1e-12));
    }

    #[test]
    fn cube_faces_outward() {
        assert!(outward(&cube(2.0)));
    }

    #[test]
    fn cloth_faces_outward_from_axis() {
        let m = draped_cloth(8, 64);
        for t in 0..m.triangle_count() {
            let [a, b, c] = m.corners(t);
            let mut radial = (a.coords + b.coords + c.coords) / 3.0;
            radial.x -= 0.036 * (0.5 - radial.y).powi(2);
            radial.y = 0.0;
            assert!(m.face_cross(t).dot(&radial) > 0.0, "triangle {t}");
        }
    }

    #[test]
    fn fixtures_fit_unit_box() {
        for name in NAMES {
            let m = by_name(name).unwrap();
            let (lo, hi) = m.aabb().unwrap();
            assert!(lo.iter().chain(hi.iter()).all(|v| v.abs() <= 0.5 + 1e-12), "{name}");
        }
    }

    #[test]
    fn merged_uvs_are_disjoint() {
        let m = merge_packed(&[unit_quad(), unit_quad()]);
        assert_eq!(m.triangle_count(), 4);
        assert!(m.corner_uvs[..2].iter().flatten().all(|q| q.x <= 0.5));
        assert!(m.corner_uvs[2..].iter().flatten().all(|q| q.x >= 0.5));
    }

    #[test]
    fn solid_albedo_in_range() {
        let m = compute_vertex_normals(&uv_sphere(8, 16));
        let img = solid_albedo(&m, 32, 1.0).unwrap();
        assert!(img.data().iter().all(|v| (0.1..=0.9).contains(v) || *v == 0.5));
    }
}
