//! Grayscale portable float map. Rows are stored bottom-to-top as in the
//! reference format; invalid samples are written as 0.0.

use std::path::Path;

use super::DisparityGrid;
use crate::error::{Error, Result};

pub fn write_pfm(grid: &DisparityGrid) -> Vec<u8> {
    let (w, h) = grid.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            let v = grid.get(x, y).unwrap_or(0.0);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads the three whitespace-separated header tokens after the magic.
fn header_tokens(bytes: &[u8]) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Pfm("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the scale from the raster
    if i >= bytes.len() {
        return Err(Error::Pfm("missing raster".into()));
    }
    Ok((tokens, i + 1))
}

pub fn read_pfm(bytes: &[u8]) -> Result<DisparityGrid> {
    let (tokens, data_start) = header_tokens(bytes)?;
    match tokens[0].as_str() {
        "Pf" => {}
        "PF" => return Err(Error::Pfm("expected grayscale PFM".into())),
        other => return Err(Error::Pfm(format!("header mismatch: magic {other:?}"))),
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Pfm(format!("header mismatch: bad dimension {s:?}")))
    };
    let w = parse_dim(&tokens[1])?;
    let h = parse_dim(&tokens[2])?;
    let scale: f32 = tokens[3]
        .parse()
        .map_err(|_| Error::Pfm(format!("header mismatch: bad scale {:?}", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Pfm("header mismatch: zero scale".into()));
    }
    let little = scale < 0.0;
    let n = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4).map(|b| (n, b)))
        .ok_or_else(|| Error::Pfm(format!("dimension overflow: {w}x{h}")))?;
    let (count, nbytes) = n;
    let data = &bytes[data_start..];
    if data.len() < nbytes {
        return Err(Error::Pfm(format!(
            "dimension overflow: {w}x{h} needs {nbytes} bytes, file has {}",
            data.len()
        )));
    }
    let mut values = vec![0f32; count];
    for (k, chunk) in data[..nbytes].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row_from_bottom, x) = (k / w, k % w);
        values[(h - 1 - row_from_bottom) * w + x] = v;
    }
    DisparityGrid::from_values(w, h, values)
}

pub fn load_disparity(path: impl AsRef<Path>) -> Result<DisparityGrid> {
    let path = path.as_ref();
    read_pfm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_disparity(grid: &DisparityGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_pfm(grid)).map_err(|e| Error::io(path, e))
}
