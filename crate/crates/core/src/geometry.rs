//! Triangle meshes with per-corner UV coordinates.
//!
//! UVs live on triangle corners rather than vertices, so meshes with UV seams
//! need no vertex duplication. Degenerate triangles are kept in the index
//! buffer; the rasterizers skip them.

use std::path::Path;

use nalgebra::{Point3, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// UVs within this distance outside [0, 1] are clamped on load.
const UV_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub positions: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub corner_uvs: Vec<[Vec2; 3]>,
    pub vertex_normals: Option<Vec<Vec3>>,
}

impl TriMesh {
    pub fn new(positions: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>, corner_uvs: Vec<[Vec2; 3]>) -> Result<Self> {
        let mesh = Self {
            positions,
            triangles,
            corner_uvs,
            vertex_normals: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.corner_uvs.len() != self.triangles.len() {
            return Err(Error::MissingUvs);
        }
        let n = self.positions.len() as u32;
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(Error::invalid(format!(
                    "triangle {t} references vertex {bad}, mesh has {n}"
                )));
            }
        }
        for (t, uvs) in self.corner_uvs.iter().enumerate() {
            for uv in uvs {
                if !(0.0..=1.0).contains(&uv.x) || !(0.0..=1.0).contains(&uv.y) {
                    return Err(Error::invalid(format!("triangle {t} has UV {uv:?} outside [0,1]")));
                }
            }
        }
        if let Some(normals) = &self.vertex_normals {
            if normals.len() != self.positions.len() {
                return Err(Error::dims("vertex normal count"));
            }
        }
        Ok(())
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn corners(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.positions[a as usize],
            self.positions[b as usize],
            self.positions[c as usize],
        ]
    }

    /// Unnormalized face normal; its length is twice the triangle area.
    pub fn face_cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a))
    }

    pub fn is_degenerate(&self, t: usize) -> bool {
        self.face_cross(t).norm_squared() <= f64::MIN_POSITIVE
    }

    pub fn aabb(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.positions.first()?;
        let (mut lo, mut hi) = (first, first);
        for p in &self.positions {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Some((lo, hi))
    }

    pub fn aabb_diagonal(&self) -> f64 {
        self.aabb().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }

    /// Vertex normals, computing them if the mesh has none yet.
    pub fn normals(&self) -> std::borrow::Cow<'_, [Vec3]> {
        match &self.vertex_normals {
            Some(n) => std::borrow::Cow::Borrowed(n.as_slice()),
            None => std::borrow::Cow::Owned(vertex_normals(self)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationTransform {
    pub center: Point3<f64>,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from((p - self.center) * self.scale)
    }

    pub fn invert(&self, p: &Point3<f64>) -> Point3<f64> {
        self.center + p.coords / self.scale
    }
}

/// Loads a Wavefront OBJ. Polygons are fan-triangulated from their first
/// corner; `vn` records are ignored.
pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut positions = Vec::new();
    let mut uvs: Vec<Vec2> = Vec::new();
    // (line, [(v, vt)]), resolved once all records are known
    let mut faces: Vec<(usize, Vec<(i64, Option<i64>)>)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let perr = |msg: String| Error::Parse { line: line_no, msg };
        match tag {
            "v" => {
                let xyz = parse_floats(&mut parts, 3).map_err(perr)?;
                positions.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            }
            "vt" => {
                let uv = parse_floats(&mut parts, 2).map_err(perr)?;
                uvs.push(Vec2::new(uv[0], uv[1]));
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in parts {
                    let mut fields = tok.split('/');
                    let v = fields
                        .next()
                        .and_then(|s| s.parse::<i64>().ok())
                        .ok_or_else(|| perr(format!("bad face corner {tok:?}")))?;
                    let vt = match fields.next() {
                        Some("") | None => None,
                        Some(s) => Some(
                            s.parse::<i64>()
                                .map_err(|_| perr(format!("bad texture index in {tok:?}")))?,
                        ),
                    };
                    corners.push((v, vt));
                }
                if corners.len() < 3 {
                    return Err(perr(format!("face with {} corners", corners.len())));
                }
                faces.push((line_no, corners));
            }
            _ => {}
        }
    }

    let resolve = |idx: i64, count: usize, what: &str, line: usize| -> Result<u32> {
        let r = if idx > 0 {
            idx - 1
        } else if idx < 0 {
            count as i64 + idx
        } else {
            -1
        };
        if r < 0 || r as usize >= count {
            return Err(Error::Parse {
                line,
                msg: format!("{what} index {idx} out of range ({count} records)"),
            });
        }
        Ok(r as u32)
    };

    let mut triangles = Vec::new();
    let mut corner_uvs = Vec::new();
    for (line, corners) in &faces {
        let mut resolved = Vec::with_capacity(corners.len());
        for &(v, vt) in corners {
            let vi = resolve(v, positions.len(), "vertex", *line)?;
            let vt = vt.ok_or(Error::MissingUvs)?;
            let ti = resolve(vt, uvs.len(), "texture", *line)?;
            let uv = clamp_uv(uvs[ti as usize]).ok_or_else(|| Error::Parse {
                line: *line,
                msg: format!("UV {:?} outside [0,1]", uvs[ti as usize]),
            })?;
            resolved.push((vi, uv));
        }
        for k in 1..resolved.len() - 1 {
            triangles.push([resolved[0].0, resolved[k].0, resolved[k + 1].0]);
            corner_uvs.push([resolved[0].1, resolved[k].1, resolved[k + 1].1]);
        }
    }

    TriMesh::new(positions, triangles, corner_uvs)
}

fn parse_floats<'a>(parts: &mut impl Iterator<Item = &'a str>, n: usize) -> Result<Vec<f64>, String> {
    let vals: Vec<f64> = parts
        .take(n)
        .map(|s| s.parse::<f64>().map_err(|_| format!("bad number {s:?}")))
        .collect::<Result<_, _>>()?;
    if vals.len() < n || vals.iter().any(|v| !v.is_finite()) {
        return Err(format!("expected {n} finite numbers"));
    }
    Ok(vals)
}

fn clamp_uv(uv: Vec2) -> Option<Vec2> {
    let ok = |v: f64| (-UV_SLACK..=1.0 + UV_SLACK).contains(&v);
    (ok(uv.x) && ok(uv.y)).then(|| Vec2::new(uv.x.clamp(0.0, 1.0), uv.y.clamp(0.0, 1.0)))
}

/// Writes the mesh as OBJ with one `vt` record per triangle corner.
pub fn write_obj(mesh: &TriMesh) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    for p in &mesh.positions {
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    for uvs in &mesh.corner_uvs {
        for uv in uvs {
            let _ = writeln!(s, "vt {} {}", uv.x, uv.y);
        }
    }
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let _ = writeln!(
            s,
            "f {}/{} {}/{} {}/{}",
            tri[0] + 1,
            3 * t + 1,
            tri[1] + 1,
            3 * t + 2,
            tri[2] + 1,
            3 * t + 3
        );
    }
    s
}

/// Centers the mesh at the origin and scales its longest AABB side to 1.
pub fn normalize_to_unit(mesh: &TriMesh) -> Result<(TriMesh, NormalizationTransform)> {
    let (lo, hi) = mesh.aabb().ok_or(Error::DegenerateMesh)?;
    let extent = hi - lo;
    let longest = extent.x.max(extent.y).max(extent.z);
    if longest <= 0.0 || !longest.is_finite() {
        return Err(Error::DegenerateMesh);
    }
    let center = Point3::from((lo.coords + hi.coords) * 0.5);
    let xf = NormalizationTransform {
        center,
        scale: 1.0 / longest,
    };
    let mut out = mesh.clone();
    for p in out.positions.iter_mut() {
        *p = xf.apply(p);
    }
    Ok((out, xf))
}

/// Returns a copy of the mesh with area-weighted unit vertex normals.
pub fn compute_vertex_normals(mesh: &TriMesh) -> TriMesh {
    let mut out = mesh.clone();
    out.vertex_normals = Some(vertex_normals(mesh));
    out
}

fn vertex_normals(mesh: &TriMesh) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); mesh.positions.len()];
    for t in 0..mesh.triangles.len() {
        // cross product length is twice the area, which is the weight
        let n = mesh.face_cross(t);
        for &v in &mesh.triangles[t] {
            acc[v as usize] += n;
        }
    }
    let mut fallback = 0usize;
    let normals = acc
        .into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 1e-300 && len.is_finite() {
                n / len
            } else {
                fallback += 1;
                Vec3::new(0.0, 0.0, 1.0)
            }
        })
        .collect();
    if fallback > 0 {
        log::warn!("{fallback} vertices have no incident area; using (0,0,1) normals");
    }
    normals
}
