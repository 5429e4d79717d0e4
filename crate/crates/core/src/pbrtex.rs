//! PBR texture maps and the packed metallic/roughness image.
//!
//! The packed form stores `(255, roughness·255, metallic·255)` on foreground
//! pixels and `(0, 0, 0)` on background. The G = roughness, B = metallic
//! order is a convention; swap [`MR_ROUGHNESS_CHANNEL`] and
//! [`MR_METALLIC_CHANNEL`] if a data source disagrees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{quantize_u8, Image};

pub const MR_ROUGHNESS_CHANNEL: usize = 1;
pub const MR_METALLIC_CHANNEL: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TextureSet {
    pub resolution: usize,
    pub albedo: Image,
    pub roughness: Image,
    pub metallic: Image,
}

impl TextureSet {
    pub fn new(albedo: Image, roughness: Image, metallic: Image) -> Result<Self> {
        let set = Self {
            resolution: albedo.width(),
            albedo,
            roughness,
            metallic,
        };
        set.validate()?;
        Ok(set)
    }

    /// Uniform material over an albedo map.
    pub fn uniform_material(albedo: Image, roughness: f64, metallic: f64) -> Result<Self> {
        let n = albedo.width();
        Self::new(
            albedo,
            Image::filled(n, n, 1, roughness),
            Image::filled(n, n, 1, metallic),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.resolution;
        let check = |img: &Image, ch: usize, what: &str| -> Result<()> {
            if img.width() != n || img.height() != n || img.channels() != ch {
                return Err(Error::dims(format!(
                    "{what} is {}x{}x{}, expected {n}x{n}x{ch}",
                    img.width(),
                    img.height(),
                    img.channels()
                )));
            }
            if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("{what} has values outside [0,1]")));
            }
            Ok(())
        };
        if n == 0 {
            return Err(Error::dims("texture resolution must be positive"));
        }
        check(&self.albedo, 3, "albedo")?;
        check(&self.roughness, 1, "roughness")?;
        check(&self.metallic, 1, "metallic")
    }

    /// Roughness and metallic interleaved as a two-channel image.
    pub fn mr_image(&self) -> Image {
        let n = self.resolution;
        Image::from_fn(n, n, 2, |x, y, c| {
            if c == 0 {
                self.roughness.get(x, y, 0)
            } else {
                self.metallic.get(x, y, 0)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MrEncodedImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
    pub foreground: Vec<bool>,
}

impl MrEncodedImage {
    pub fn to_rgb_bytes(&self) -> Vec<u8> {
        self.pixels.iter().flatten().copied().collect()
    }

    /// Rebuilds the packed image from RGB bytes, treating `R = 255` as the
    /// foreground marker.
    pub fn from_rgb_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::dims("MR image byte count"));
        }
        let pixels: Vec<[u8; 3]> = bytes.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let foreground = pixels.iter().map(|p| p[0] == 255).collect();
        Ok(Self {
            width,
            height,
            pixels,
            foreground,
        })
    }
}

pub fn encode_mr(roughness: &Image, metallic: &Image, foreground: &[bool]) -> Result<MrEncodedImage> {
    if !roughness.same_shape(metallic) || roughness.channels() != 1 || foreground.len() != roughness.pixel_count() {
        return Err(Error::dims("roughness, metallic and mask must share one-channel resolution"));
    }
    let mut pixels = Vec::with_capacity(foreground.len());
    for (i, &fg) in foreground.iter().enumerate() {
        if !fg {
            pixels.push([0, 0, 0]);
            continue;
        }
        let (r, m) = (roughness.data()[i], metallic.data()[i]);
        if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&m) {
            return Err(Error::invalid(format!("MR value ({r}, {m}) outside [0,1] at pixel {i}")));
        }
        let mut px = [255u8, 0, 0];
        px[MR_ROUGHNESS_CHANNEL] = quantize_u8(r);
        px[MR_METALLIC_CHANNEL] = quantize_u8(m);
        pixels.push(px);
    }
    Ok(MrEncodedImage {
        width: roughness.width(),
        height: roughness.height(),
        pixels,
        foreground: foreground.to_vec(),
    })
}

/// Returns `(roughness, metallic)`; background texels decode to zero.
pub fn decode_mr(image: &MrEncodedImage) -> (Image, Image) {
    let (w, h) = (image.width, image.height);
    let mut rough = Image::new(w, h, 1);
    let mut metal = Image::new(w, h, 1);
    let mut bad = 0usize;
    for (i, (px, &fg)) in image.pixels.iter().zip(&image.foreground).enumerate() {
        if !fg {
            continue;
        }
        if px[0] != 255 {
            bad += 1;
        }
        rough.data_mut()[i] = px[MR_ROUGHNESS_CHANNEL] as f64 / 255.0;
        metal.data_mut()[i] = px[MR_METALLIC_CHANNEL] as f64 / 255.0;
    }
    if bad > 0 {
        log::warn!("{bad} foreground MR pixels have R != 255; decoded anyway");
    }
    (rough, metal)
}

/// Overwrites every target's foreground with the reference's per-channel
/// median foreground value. Background pixels are left untouched.
pub fn rectify_mr(reference: &MrEncodedImage, targets: &[MrEncodedImage]) -> Result<Vec<MrEncodedImage>> {
    let value = representative_value(reference)?;
    Ok(targets
        .iter()
        .map(|t| {
            let mut out = t.clone();
            for (px, &fg) in out.pixels.iter_mut().zip(&t.foreground) {
                if fg {
                    *px = value;
                }
            }
            out
        })
        .collect())
}

pub fn representative_value(reference: &MrEncodedImage) -> Result<[u8; 3]> {
    let fg: Vec<[u8; 3]> = reference
        .pixels
        .iter()
        .zip(&reference.foreground)
        .filter(|(_, &f)| f)
        .map(|(p, _)| *p)
        .collect();
    if fg.is_empty() {
        return Err(Error::NoForeground);
    }
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut vals: Vec<u8> = fg.iter().map(|p| p[c]).collect();
        vals.sort_unstable();
        let n = vals.len();
        *o = if n % 2 == 1 {
            vals[n / 2]
        } else {
            // even count: midpoint of the two middle values, rounded half up
            ((vals[n / 2 - 1] as u16 + vals[n / 2] as u16 + 1) / 2) as u8
        };
    }
    Ok(out)
}

/// Draws a uniform material: roughness in [0, 1) from a seeded ChaCha8
/// stream, metallic fixed at 0.
pub fn sample_uniform_material(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.random::<f64>(), 0.0)
}
