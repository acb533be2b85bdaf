//! Lossless PNG storage: depth as 16-bit grey scaled to the sensor's
//! penetration range, colour images as 8-bit RGB.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder};

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image};
use crate::scalar::Scalar;

pub fn quantize_u8<S: Scalar>(v: S) -> u8 {
    (v.f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Round every value to the nearest 8-bit level, as a PNG round trip would.
pub fn quantize_image<S: Scalar>(img: &Image<S>) -> Image<S> {
    img.map(|v| S::of(quantize_u8(v) as f64 / 255.0))
}

fn encode(
    path: &Path,
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    bytes: &[u8],
    text: &[(&str, String)],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    for (k, v) in text {
        enc.add_text_chunk(k.to_string(), v.clone())
            .map_err(|e| Error::io(path, e))?;
    }
    let mut writer = enc.write_header().map_err(|e| Error::io(path, e))?;
    writer.write_image_data(bytes).map_err(|e| Error::io(path, e))?;
    writer.finish().map_err(|e| Error::io(path, e))
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    bytes: Vec<u8>,
    text: Vec<(String, String)>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| Error::io(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::io(path, "image too large"))?;
    let mut bytes = vec![0; size];
    let info = reader.next_frame(&mut bytes).map_err(|e| Error::io(path, e))?;
    bytes.truncate(info.buffer_size());
    let text = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|c| (c.keyword.clone(), c.text.clone()))
        .collect();
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        bytes,
        text,
    })
}

pub fn write_depth_png<S: Scalar>(path: &Path, depth: &DepthMap<S>) -> Result<()> {
    let scale = 65535.0 / depth.max_penetration_mm();
    let mut bytes = Vec::with_capacity(depth.mm().len() * 2);
    for &v in depth.mm().data() {
        let q = (v.f64() * scale).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    encode(
        path,
        depth.width(),
        depth.height(),
        ColorType::Grayscale,
        BitDepth::Sixteen,
        &bytes,
        &[],
    )
}

pub fn read_depth_png<S: Scalar>(path: &Path, max_penetration_mm: f64) -> Result<DepthMap<S>> {
    let d = decode(path)?;
    if d.color != ColorType::Grayscale || d.depth != BitDepth::Sixteen {
        return Err(Error::io(path, "expected a 16-bit greyscale depth image"));
    }
    let scale = max_penetration_mm / 65535.0;
    let data = d
        .bytes
        .chunks_exact(2)
        .map(|b| S::of(u16::from_be_bytes([b[0], b[1]]) as f64 * scale))
        .collect();
    let mm = Image::from_vec(1, d.height, d.width, data)?;
    DepthMap::new(mm, max_penetration_mm).map_err(|e| Error::io(path, e))
}

/// Writes a 3-channel image in `[0, 1]` with optional tEXt entries.
pub fn write_rgb_png<S: Scalar>(path: &Path, img: &Image<S>, text: &[(&str, String)]) -> Result<()> {
    let (c, h, w) = img.shape();
    if c != 3 {
        return Err(Error::Argument(format!("RGB image needs 3 channels, got {c}")));
    }
    let mut bytes = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                bytes.push(quantize_u8(img.at(ch, y, x)));
            }
        }
    }
    encode(path, w, h, ColorType::Rgb, BitDepth::Eight, &bytes, text)
}

pub fn read_rgb_png<S: Scalar>(path: &Path) -> Result<Image<S>> {
    Ok(read_rgb_png_with_text(path)?.0)
}

pub fn read_rgb_png_with_text<S: Scalar>(path: &Path) -> Result<(Image<S>, Vec<(String, String)>)> {
    let d = decode(path)?;
    if d.color != ColorType::Rgb || d.depth != BitDepth::Eight {
        return Err(Error::io(path, "expected an 8-bit RGB image"));
    }
    let (h, w) = (d.height, d.width);
    let img = Image::from_fn(3, h, w, |c, y, x| S::of(d.bytes[(y * w + x) * 3 + c] as f64 / 255.0));
    Ok((img, d.text))
}
