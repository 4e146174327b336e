use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::{Image, Mask};
use crate::error::{Error, Result};

/// Decoded 8-bit samples, always expanded to RGB triples.
struct Decoded {
    width: usize,
    height: usize,
    rgb: Vec<[u8; 3]>,
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    let mut cursor = Cursor::new(bytes);
    let result = decode_from(&mut cursor);
    result.map_err(|message| Error::Decode {
        offset: cursor.position(),
        message,
    })
}

fn decode_from(cursor: &mut Cursor<&[u8]>) -> std::result::Result<Decoded, String> {
    let mut decoder = png::Decoder::new(cursor);
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let (color, depth) = reader.output_color_type();
    if depth != BitDepth::Eight {
        return Err(format!("expected 8-bit samples, got {depth:?}"));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| "image too large".to_string())?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (width, height) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let channels = match color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err("palette was not expanded".into()),
    };
    let stride = info.line_size;
    let mut rgb = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = &data[y * stride..y * stride + width * channels];
        for px in row.chunks_exact(channels) {
            rgb.push(match channels {
                1 | 2 => [px[0]; 3],
                _ => [px[0], px[1], px[2]],
            });
        }
    }
    Ok(Decoded { width, height, rgb })
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let d = decode(bytes)?;
    let pixels = d
        .rgb
        .iter()
        .map(|p| p.map(|v| v as f32 / 255.0))
        .collect();
    Image::new(d.width, d.height, pixels)
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let data: Vec<u8> = image
        .pixels()
        .iter()
        .flat_map(|p| p.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
        .collect();
    encode_raw(image.width(), image.height(), ColorType::Rgb, &data)
}

fn encode_raw(width: usize, height: usize, color: ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Encode(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::Encode(e.to_string()))?;
        writer.finish().map_err(|e| Error::Encode(e.to_string()))?;
    }
    Ok(out)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_png(&read_bytes(path.as_ref())?)
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_png(image)?).map_err(|e| Error::io(path, e))
}

/// Any nonzero color sample marks an object pixel.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let d = decode(&read_bytes(path.as_ref())?)?;
    let bits = d.rgb.iter().map(|p| p.iter().any(|v| *v != 0)).collect();
    Mask::new(d.width, d.height, bits)
}

/// Masks are written as 8-bit grayscale, 0 or 255.
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u8> = mask.bits().iter().map(|b| if *b { 255 } else { 0 }).collect();
    let bytes = encode_raw(mask.width(), mask.height(), ColorType::Grayscale, &data)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_mapping() {
        let bytes = encode_raw(2, 1, ColorType::Rgb, &[0, 0, 0, 255, 255, 255]).unwrap();
        let img = decode_png(&bytes).unwrap();
        assert_eq!(img.pixels(), &[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
    }

    #[test]
    fn round_trip_within_quantization() {
        let pixels: Vec<_> = (0..12)
            .map(|i| [i as f32 / 11.0, 0.123_456 * (i % 3) as f32, 1.0 - i as f32 / 13.0])
            .collect();
        let img = Image::new(4, 3, pixels).unwrap();
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 1.0 / 255.0);
            }
        }
        // quantized images are a fixed point
        let q = img.quantized();
        assert_eq!(decode_png(&encode_png(&q).unwrap()).unwrap(), q);
    }

    #[test]
    fn truncated_stream_is_decode_error() {
        let img = Image::filled(8, 8, [0.3, 0.6, 0.9]);
        let bytes = encode_png(&img).unwrap();
        let err = decode_png(&bytes[..bytes.len() / 2]).unwrap_err();
        assert!(matches!(err, Error::Decode { .. }), "{err}");
        let err = decode_png(b"not a png at all").unwrap_err();
        assert!(matches!(err, Error::Decode { .. }));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mask::from_fn(5, 4, |x, y| x > y);
        let p = dir.path().join("m.png");
        save_mask(&m, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), m);
    }
}
