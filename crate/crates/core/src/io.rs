//! Readers and writers for the on-disk formats: PFM float maps, 8-bit PNG,
//! and sorted-key JSON reports.
//!
//! All writers are deterministic. PFM is always written little-endian with
//! rows bottom-up (scale `-1.0`); PNG uses fixed compression settings and
//! carries no ancillary chunks.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;

/// A float raster as stored in a PFM file. Rows are kept top-down in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatMap {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("PFM supports 1 or 3 channels, got {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("PFM dimensions must be positive"));
        }
        if data.len() != width * height * channels {
            return Err(Error::dims(format!(
                "float map {width}x{height}x{channels} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_image(img: &Image) -> Result<Self> {
        Self::new(
            img.width(),
            img.height(),
            img.channels(),
            img.data().iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("float map invariant")
    }
}

pub fn encode_pfm(map: &FloatMap) -> Vec<u8> {
    let tag = if map.channels == 1 { "Pf" } else { "PF" };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    let row_len = map.width * map.channels;
    out.reserve(map.data.len() * 4);
    for row in map.data.chunks_exact(row_len).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<FloatMap> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let tag_at = cursor.pos;
    let tag = cursor.token()?;
    let channels = match tag {
        "PF" => 3,
        "Pf" => 1,
        other => {
            return Err(Error::Format {
                offset: tag_at,
                msg: format!("bad PFM magic {other:?}"),
            })
        }
    };
    let width = cursor.number::<usize>("width")?;
    let height = cursor.number::<usize>("height")?;
    let scale_at = cursor.pos;
    let scale = cursor.number::<f64>("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format {
            offset: scale_at,
            msg: "scale must be non-zero".into(),
        });
    }
    // exactly one whitespace byte separates the header from the raster
    if cursor.pos >= bytes.len() || !bytes[cursor.pos].is_ascii_whitespace() {
        return Err(Error::Format {
            offset: cursor.pos,
            msg: "missing separator after scale".into(),
        });
    }
    let start = cursor.pos + 1;
    if width == 0 || height == 0 {
        return Err(Error::Format {
            offset: tag_at,
            msg: "zero dimension".into(),
        });
    }
    let count = width * height * channels;
    let need = count * 4;
    if bytes.len() - start < need {
        return Err(Error::Format {
            offset: bytes.len(),
            msg: format!("raster truncated: need {need} bytes, have {}", bytes.len() - start),
        });
    }
    let little = scale < 0.0;
    let raw = &bytes[start..start + need];
    let mut data = vec![0f32; count];
    let row_len = width * channels;
    for (file_row, chunk) in raw.chunks_exact(row_len * 4).enumerate() {
        let dst_row = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let arr = [b[0], b[1], b[2], b[3]];
            data[dst_row * row_len + i] = if little {
                f32::from_le_bytes(arr)
            } else {
                f32::from_be_bytes(arr)
            };
        }
    }
    FloatMap::new(width, height, channels, data)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn token(&mut self) -> Result<&'a str> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format {
                offset: start,
                msg: "unexpected end of header".into(),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Format {
            offset: start,
            msg: "non-ASCII header".into(),
        })
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.token()?;
        tok.parse().map_err(|_| Error::Format {
            offset: self.pos - tok.len(),
            msg: format!("bad {what} {tok:?}"),
        })
    }
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<FloatMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

pub fn write_pfm(map: &FloatMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(map)).map_err(|e| Error::io(path, e))
}

/// 8-bit raster read from or written to PNG.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Png8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Png8 {
    pub fn from_image(img: &Image) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            data: img.to_u8(),
        }
    }

    pub fn from_mask(width: usize, height: usize, mask: &[bool]) -> Self {
        Self {
            width,
            height,
            channels: 1,
            data: mask.iter().map(|&m| if m { 255 } else { 0 }).collect(),
        }
    }

    pub fn to_image(&self) -> Image {
        Image::from_u8(self.width, self.height, self.channels, &self.data).expect("png invariant")
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<Png8> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format { offset: 0, msg: e.to_string() })?;
    let info = reader.info();
    let (color, depth) = (info.color_type, info.bit_depth);
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedPng(format!("{depth:?}-bit samples")));
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::UnsupportedPng(format!("{other:?} color type"))),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format { offset: 0, msg: e.to_string() })?;
    buf.truncate(frame.buffer_size());
    if buf.len() != width * height * channels {
        return Err(Error::Format {
            offset: 0,
            msg: "unexpected PNG line layout".into(),
        });
    }
    Ok(Png8 {
        width,
        height,
        channels,
        data: buf,
    })
}

pub fn encode_png(img: &Png8) -> Result<Vec<u8>> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::invalid(format!("PNG writer supports 1 or 3 channels, got {c}"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        enc.set_filter(png::Filter::Adaptive);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::invalid(format!("png header: {e}")))?;
        w.write_image_data(&img.data)
            .map_err(|e| Error::invalid(format!("png data: {e}")))?;
    }
    Ok(out)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Png8> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

pub fn write_png(img: &Png8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serializes with 2-space indentation and lexicographically sorted keys.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json::Value maps are BTreeMaps, so a round-trip sorts every key
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = to_sorted_json(value)?;
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_bit_exact() {
        let map = FloatMap::new(2, 2, 1, vec![0.0, 0.5, 1.0, -1.0]).unwrap();
        let back = decode_pfm(&encode_pfm(&map)).unwrap();
        assert_eq!(
            back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            map.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn pfm_writer_is_bottom_up_little_endian() {
        let map = FloatMap::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&map);
        let header = b"Pf\n1 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..header.len() + 4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn pfm_big_endian_fixture() {
        // 1x1 RGB, positive scale => big-endian samples
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [0.25f32, -3.5, 1e-3] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let map = decode_pfm(&bytes).unwrap();
        assert_eq!(map.channels, 3);
        assert_eq!(map.data, vec![0.25, -3.5, 1e-3]);
    }

    #[test]
    fn pfm_bad_magic_reports_offset() {
        let err = decode_pfm(b"PX\n1 1\n-1.0\n\0\0\0\0").unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn pfm_truncated_raster() {
        assert!(matches!(
            decode_pfm(b"Pf\n2 2\n-1.0\n\0\0\0\0"),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn png_mask_round_trip() {
        let mask: Vec<bool> = (0..35).map(|i| i % 3 == 0).collect();
        let p = Png8::from_mask(7, 5, &mask);
        let back = decode_png(&encode_png(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn png_16_bit_rejected() {
        let mut bytes = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut bytes, 2, 2);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0u8; 8]).unwrap();
        }
        assert!(matches!(decode_png(&bytes), Err(Error::UnsupportedPng(_))));
    }

    #[test]
    fn png_palette_rejected() {
        let mut bytes = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut bytes, 2, 1);
            enc.set_color(png::ColorType::Indexed);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_palette(vec![0u8, 0, 0, 255, 255, 255]);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0u8, 1]).unwrap();
        }
        assert!(matches!(decode_png(&bytes), Err(Error::UnsupportedPng(_))));
    }

    #[test]
    fn json_keys_sorted() {
        #[derive(Serialize)]
        struct S {
            zeta: u32,
            alpha: u32,
        }
        let s = to_sorted_json(&S { zeta: 1, alpha: 2 }).unwrap();
        assert_eq!(s, "{\n  \"alpha\": 2,\n  \"zeta\": 1\n}\n");
    }
}
