//! Candidate viewpoints and their blending weights.
//!
//! Cameras orbit the origin. Azimuth 0 looks at the front of the mesh from
//! `+Z`; azimuth increases toward `+X`; elevation raises the camera toward
//! `+Y`. The frame is right-handed with image up aligned to the elevation
//! tangent, so it stays well defined at the poles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const DEFAULT_HALF_EXTENT: f64 = 0.65;
pub const DEFAULT_RESOLUTION: usize = 512;
pub const DEFAULT_DISTANCE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Projection {
    #[default]
    Orthographic,
    /// Pinhole camera; `fov_y` is the full vertical field of view in degrees.
    Perspective { fov_y: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub id: u32,
    pub azimuth: f64,
    pub elevation: f64,
    pub half_extent: f64,
    pub resolution: usize,
    #[serde(default = "default_distance", skip_serializing_if = "is_default_distance")]
    pub distance: f64,
    #[serde(default, skip_serializing_if = "is_ortho")]
    pub projection: Projection,
}

fn default_distance() -> f64 {
    DEFAULT_DISTANCE
}

fn is_default_distance(d: &f64) -> bool {
    *d == DEFAULT_DISTANCE
}

fn is_ortho(p: &Projection) -> bool {
    *p == Projection::Orthographic
}

/// Framing shared by every view built from angles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FramingConfig {
    pub half_extent: f64,
    pub resolution: usize,
    pub distance: f64,
    pub projection: Projection,
}

impl Default for FramingConfig {
    fn default() -> Self {
        Self {
            half_extent: DEFAULT_HALF_EXTENT,
            resolution: DEFAULT_RESOLUTION,
            distance: DEFAULT_DISTANCE,
            projection: Projection::Orthographic,
        }
    }
}

/// Orthonormal camera basis plus eye position.
#[derive(Clone, Copy, Debug)]
pub struct CameraFrame {
    pub eye: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
}

/// A world point mapped into continuous pixel coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Projected {
    pub x: f64,
    pub y: f64,
    /// Distance along the view ray.
    pub depth: f64,
    /// Perspective divisor (1 for orthographic).
    pub w: f64,
}

pub fn make_view(azimuth: f64, elevation: f64, config: &FramingConfig) -> Result<View> {
    if !azimuth.is_finite() || !elevation.is_finite() {
        return Err(Error::invalid("view angles must be finite"));
    }
    if !(-90.0..=90.0).contains(&elevation) {
        return Err(Error::invalid(format!("elevation {elevation} outside [-90, 90]")));
    }
    let view = View {
        id: 0,
        azimuth: azimuth.rem_euclid(360.0),
        elevation,
        half_extent: config.half_extent,
        resolution: config.resolution,
        distance: config.distance,
        projection: config.projection,
    };
    view.validate()?;
    Ok(view)
}

/// The 24-view candidate pool: front and back first, then the 8x3 grid of
/// azimuths and elevations ordered by (elevation, azimuth).
pub fn canonical_candidates() -> Vec<View> {
    canonical_candidates_with(&FramingConfig::default())
}

pub fn canonical_candidates_with(config: &FramingConfig) -> Vec<View> {
    let mut angles = vec![(0.0, 0.0), (180.0, 0.0)];
    for elevation in [-30.0, 0.0, 30.0] {
        for k in 0..8 {
            let azimuth = 45.0 * k as f64;
            if elevation == 0.0 && (azimuth == 0.0 || azimuth == 180.0) {
                continue;
            }
            angles.push((azimuth, elevation));
        }
    }
    angles
        .into_iter()
        .enumerate()
        .map(|(id, (az, el))| {
            let mut v = make_view(az, el, config).expect("canonical angles are valid");
            v.id = id as u32;
            v
        })
        .collect()
}

impl View {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::invalid("view resolution must be positive"));
        }
        if !(self.half_extent > 0.0) {
            return Err(Error::invalid("view half-extent must be positive"));
        }
        if !(0.0..360.0).contains(&self.azimuth) || !(-90.0..=90.0).contains(&self.elevation) {
            return Err(Error::invalid(format!(
                "view {} angles ({}, {}) out of range",
                self.id, self.azimuth, self.elevation
            )));
        }
        if !(self.distance > 0.0) {
            return Err(Error::invalid("view distance must be positive"));
        }
        if let Projection::Perspective { fov_y } = self.projection {
            if !(fov_y > 0.0 && fov_y < 180.0) {
                return Err(Error::invalid("perspective fov must be in (0, 180)"));
            }
        }
        Ok(())
    }

    /// Unit vector from the origin toward the camera.
    pub fn direction(&self) -> Vec3 {
        let (sa, ca) = self.azimuth.to_radians().sin_cos();
        let (se, ce) = self.elevation.to_radians().sin_cos();
        Vec3::new(ce * sa, se, ce * ca)
    }

    pub fn frame(&self) -> CameraFrame {
        let (sa, ca) = self.azimuth.to_radians().sin_cos();
        let (se, ce) = self.elevation.to_radians().sin_cos();
        let dir = Vec3::new(ce * sa, se, ce * ca);
        let up = Vec3::new(-se * sa, ce, -se * ca);
        let forward = -dir;
        let right = forward.cross(&up);
        CameraFrame {
            eye: dir * self.distance,
            forward,
            right,
            up,
        }
    }

    pub fn project(&self, frame: &CameraFrame, p: &Vec3) -> Projected {
        let rel = p - frame.eye;
        let z = rel.dot(&frame.forward);
        let xr = rel.dot(&frame.right);
        let yu = rel.dot(&frame.up);
        let res = self.resolution as f64;
        match self.projection {
            Projection::Orthographic => Projected {
                x: (xr / self.half_extent + 1.0) * 0.5 * res,
                y: (1.0 - yu / self.half_extent) * 0.5 * res,
                depth: z,
                w: 1.0,
            },
            Projection::Perspective { fov_y } => {
                let t = (fov_y.to_radians() * 0.5).tan();
                Projected {
                    x: (xr / (z * t) + 1.0) * 0.5 * res,
                    y: (1.0 - yu / (z * t)) * 0.5 * res,
                    depth: rel.norm(),
                    w: z,
                }
            }
        }
    }

    /// Distance along the view ray used by the depth buffer.
    pub fn depth_of(&self, frame: &CameraFrame, p: &Vec3) -> f64 {
        let rel = p - frame.eye;
        match self.projection {
            Projection::Orthographic => rel.dot(&frame.forward),
            Projection::Perspective { .. } => rel.norm(),
        }
    }

    /// Unit direction from a surface point toward the camera.
    pub fn toward_camera(&self, frame: &CameraFrame, p: &Vec3) -> Vec3 {
        match self.projection {
            Projection::Orthographic => -frame.forward,
            Projection::Perspective { .. } => (frame.eye - p).normalize(),
        }
    }
}

/// Blending weight of a view, attenuated with angular distance from the
/// nearer of the front and back directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViewScore {
    Full,
    Half,
    Quarter,
    Eighth,
    Tenth,
}

impl ViewScore {
    pub const ALL: [ViewScore; 5] = [
        ViewScore::Full,
        ViewScore::Half,
        ViewScore::Quarter,
        ViewScore::Eighth,
        ViewScore::Tenth,
    ];

    pub fn value(self) -> f64 {
        match self {
            ViewScore::Full => 1.0,
            ViewScore::Half => 0.5,
            ViewScore::Quarter => 0.25,
            ViewScore::Eighth => 0.125,
            ViewScore::Tenth => 0.1,
        }
    }

    /// Bins an angular distance in degrees into 45° bands.
    pub fn from_angle(delta_deg: f64) -> Self {
        // round off float noise so that e.g. a 45° view lands on its band edge
        let d = (delta_deg * 1e9).round() / 1e9;
        if d <= 0.0 {
            ViewScore::Full
        } else if d <= 45.0 {
            ViewScore::Half
        } else if d <= 90.0 {
            ViewScore::Quarter
        } else if d <= 135.0 {
            ViewScore::Eighth
        } else {
            ViewScore::Tenth
        }
    }
}

/// Angle in degrees between the view direction and the nearer of the
/// front (`+Z`) and back (`-Z`) directions.
pub fn angular_distance_to_front_back(view: &View) -> f64 {
    let d = view.direction();
    let angle = |c: f64| c.clamp(-1.0, 1.0).acos().to_degrees();
    angle(d.z).min(angle(-d.z))
}

pub fn view_weight(view: &View) -> ViewScore {
    ViewScore::from_angle(angular_distance_to_front_back(view))
}

pub fn read_views(path: impl AsRef<Path>) -> Result<Vec<View>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let views: Vec<View> = serde_json::from_str(&text)?;
    for v in &views {
        v.validate()?;
    }
    let mut ids: Vec<u32> = views.iter().map(|v| v.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != views.len() {
        return Err(Error::invalid("duplicate view ids"));
    }
    Ok(views)
}

pub fn views_to_json(views: &[View]) -> Result<String> {
    crate::io::to_sorted_json(&views)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(az: f64, el: f64) -> View {
        make_view(az, el, &FramingConfig::default()).unwrap()
    }

    #[test]
    fn front_and_back_directions() {
        let f = v(0.0, 0.0).frame();
        assert!((f.forward - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        assert!((f.eye - Vec3::new(0.0, 0.0, DEFAULT_DISTANCE)).norm() < 1e-15);
        assert!((f.right - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((f.up - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        let b = v(180.0, 0.0).frame();
        assert!((b.forward - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn elevated_side_view_position() {
        let view = v(90.0, 30.0);
        let c30 = 30f64.to_radians().cos();
        let expected = Vec3::new(c30 * 1.0, 0.5, c30 * 0.0) * view.distance;
        assert!((view.frame().eye - expected).norm() < 1e-12);
    }

    #[test]
    fn frame_orthonormal_everywhere() {
        for az in [0.0, 33.0, 180.0, 270.0] {
            for el in [-90.0, -45.0, 0.0, 60.0, 90.0] {
                let f = v(az, el).frame();
                assert!((f.right.norm() - 1.0).abs() < 1e-12);
                assert!((f.up.norm() - 1.0).abs() < 1e-12);
                assert!(f.right.dot(&f.up).abs() < 1e-12);
                assert!(f.forward.dot(&f.up).abs() < 1e-12);
                // right-handed: right x up = -forward
                assert!((f.right.cross(&f.up) + f.forward).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(make_view(f64::NAN, 0.0, &FramingConfig::default()).is_err());
        assert!(make_view(0.0, f64::INFINITY, &FramingConfig::default()).is_err());
        assert!(make_view(0.0, 95.0, &FramingConfig::default()).is_err());
    }

    #[test]
    fn canonical_pool_layout() {
        let pool = canonical_candidates();
        assert_eq!(pool.len(), 24);
        assert_eq!((pool[0].azimuth, pool[0].elevation), (0.0, 0.0));
        assert_eq!((pool[1].azimuth, pool[1].elevation), (180.0, 0.0));
        for (i, view) in pool.iter().enumerate() {
            assert_eq!(view.id, i as u32);
        }
        let rest: Vec<_> = pool[2..].iter().map(|v| (v.elevation, v.azimuth)).collect();
        let mut sorted = rest.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rest, sorted);
    }

    #[test]
    fn weights() {
        assert_eq!(view_weight(&v(0.0, 0.0)), ViewScore::Full);
        assert_eq!(view_weight(&v(180.0, 0.0)), ViewScore::Full);
        assert_eq!(view_weight(&v(45.0, 0.0)), ViewScore::Half);
        // (90, 30): direction (cos30, sin30, 0) is 90° from both +Z and -Z
        assert!((angular_distance_to_front_back(&v(90.0, 30.0)) - 90.0).abs() < 1e-9);
        assert_eq!(view_weight(&v(90.0, 30.0)), ViewScore::Quarter);
        assert_eq!(ViewScore::from_angle(100.0), ViewScore::Eighth);
        assert_eq!(ViewScore::from_angle(170.0), ViewScore::Tenth);
    }

    #[test]
    fn weight_symmetries() {
        for az in (0..360).step_by(15) {
            for el in [-60.0, -30.0, 0.0, 30.0, 60.0] {
                let a = az as f64;
                let w = view_weight(&v(a, el));
                assert_eq!(w, view_weight(&v((360.0 - a) % 360.0, el)));
                assert_eq!(w, view_weight(&v((180.0 - a).rem_euclid(360.0), el)));
            }
        }
    }

    #[test]
    fn json_shape() {
        let pool = canonical_candidates();
        let json = views_to_json(&pool[..1]).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(
            parsed,
            serde_json::json!([{"id":0,"azimuth":0.0,"elevation":0.0,"half_extent":0.65,"resolution":512}])
        );
        let back: Vec<View> = serde_json::from_str(&json).unwrap();
        assert_eq!(back[0], pool[0]);
    }
}
