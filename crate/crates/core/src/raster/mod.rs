//! Image, mask and disparity containers plus the few pixel operations the
//! pipeline needs (dilation, masking).
//!
//! All grids are row-major with `index = y * width + x`.

mod pfm;
mod png_io;

pub use pfm::{load_disparity, read_pfm, save_disparity, write_pfm};
pub use png_io::{decode_png, encode_png, load_image, load_mask, save_image, save_mask};

use crate::error::{Error, Result};

pub type Rgb = [f32; 3];

pub const BLACK: Rgb = [0.0, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        check_len(width, height, pixels.len())?;
        if let Some(p) = pixels
            .iter()
            .position(|c| c.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0))
        {
            return Err(Error::InvalidArgument(format!(
                "pixel {p} has a channel outside [0,1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![clamp_rgb(color); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, color: Rgb) {
        self.pixels[y * self.width + x] = clamp_rgb(color);
    }

    /// Round every channel to the nearest 8-bit level, so the image survives
    /// a PNG round trip bit-exactly.
    pub fn quantized(&self) -> Image {
        let pixels = self
            .pixels
            .iter()
            .map(|c| c.map(|v| (v * 255.0).round() / 255.0))
            .collect();
        Image {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        Image {
            width: w,
            height: h,
            pixels,
        }
    }
}

fn clamp_rgb(c: Rgb) -> Rgb {
    c.map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
}

/// Binary mask; `true` marks an object pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_len(width, height, bits.len())?;
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a || **b)
            .count()
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let union = self.union_count(other);
        if union == 0 {
            return 0.0;
        }
        self.intersection_count(other) as f64 / union as f64
    }

    /// Inclusive pixel bounding box `(x0, y0, x1, y1)` of the set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bb
    }
}

/// Per-pixel inverse depth. Invalid pixels never take part in reductions.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityGrid {
    width: usize,
    height: usize,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl DisparityGrid {
    /// Build from raw samples; non-positive or non-finite samples are invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        check_len(width, height, values.len())?;
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    /// Build from samples plus an explicit validity mask. Samples that are not
    /// strictly positive and finite are forced invalid.
    pub fn with_validity(
        width: usize,
        height: usize,
        values: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        check_len(width, height, values.len())?;
        check_len(width, height, valid.len())?;
        let valid = values
            .iter()
            .zip(valid)
            .map(|(v, ok)| ok && v.is_finite() && *v > 0.0)
            .collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// The sample at `(x, y)` if it is valid.
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.values[i])
    }

    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        let i = y * self.width + x;
        self.values[i] = value;
        self.valid[i] = value.is_finite() && value > 0.0;
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.valid[y * self.width + x] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integers). Falls back to the nearest pixel when any of the four
    /// neighbours is invalid; `None` outside the grid or on an invalid pixel.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        if !(u > -0.5 && v > -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5) {
            return None;
        }
        let x0 = u.floor().max(0.0) as usize;
        let y0 = v.floor().max(0.0) as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (u - x0 as f64).clamp(0.0, 1.0);
        let fy = (v - y0 as f64).clamp(0.0, 1.0);
        match (
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
        ) {
            (Some(a), Some(b), Some(c), Some(d)) => {
                let top = a as f64 * (1.0 - fx) + b as f64 * fx;
                let bottom = c as f64 * (1.0 - fx) + d as f64 * fx;
                Some(top * (1.0 - fy) + bottom * fy)
            }
            _ => {
                let xr = (u.round().max(0.0) as usize).min(self.width - 1);
                let yr = (v.round().max(0.0) as usize).min(self.height - 1);
                self.get(xr, yr).map(f64::from)
            }
        }
    }

    /// Median of the valid samples.
    pub fn median(&self) -> Option<f32> {
        let mut vals: Vec<f32> = self
            .values
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|(v, _)| *v)
            .collect();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(f32::total_cmp);
        Some(vals[vals.len() / 2])
    }

    /// Apply `f` to every valid sample; results that leave the positive
    /// finite range become invalid.
    pub fn map_valid(&self, f: impl Fn(f32) -> f32) -> DisparityGrid {
        let mut out = self.clone();
        for i in 0..out.values.len() {
            if out.valid[i] {
                let v = f(out.values[i]);
                out.values[i] = v;
                out.valid[i] = v.is_finite() && v > 0.0;
            }
        }
        out
    }
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| Error::InvalidArgument(format!("{width}x{height} overflows")))?;
    if expected != len {
        return Err(Error::InvalidArgument(format!(
            "{width}x{height} grid needs {expected} samples, got {len}"
        )));
    }
    Ok(())
}

pub(crate) fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Grow a mask by a square (Chebyshev) structuring element of the given
/// radius. Separable: a horizontal pass followed by a vertical pass.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let mut horizontal = vec![false; w * h];
    for y in 0..h {
        let row = &mask.bits[y * w..(y + 1) * w];
        // prefix counts give a window query in O(1)
        let mut prefix = vec![0usize; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x] as usize;
        }
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius + 1).min(w);
            horizontal[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut bits = vec![false; w * h];
    let mut prefix = vec![0usize; h + 1];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + horizontal[y * w + x] as usize;
        }
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius + 1).min(h);
            bits[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    Mask {
        width: w,
        height: h,
        bits,
    }
}

/// Keep object pixels, replace everything else with `fill`.
pub fn mask_apply(image: &Image, mask: &Mask, fill: Rgb) -> Result<Image> {
    check_dims(image.dims(), mask.dims())?;
    let fill = clamp_rgb(fill);
    let pixels = image
        .pixels
        .iter()
        .zip(&mask.bits)
        .map(|(p, m)| if *m { *p } else { fill })
        .collect();
    Ok(Image {
        width: image.width,
        height: image.height,
        pixels,
    })
}
