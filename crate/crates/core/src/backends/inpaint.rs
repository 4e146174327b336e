use super::Remover;
use crate::error::{Error, Result};
use crate::raster::{Image, Mask};

/// Crop to the mask's bounds plus a context margin, let the inner remover
/// work on the crop, and paste back only the masked pixels.
pub struct CropInpaintRemover<R> {
    pub inner: R,
    pub margin: usize,
}

impl<R: Remover> CropInpaintRemover<R> {
    pub fn new(inner: R, margin: usize) -> Self {
        Self { inner, margin }
    }
}

impl<R: Remover> Remover for CropInpaintRemover<R> {
    fn remove(&mut self, image: &Image, mask: &Mask, label: &str, iteration: usize) -> Result<Image> {
        if image.dims() != mask.dims() {
            return Err(Error::DimensionMismatch {
                expected: image.dims(),
                actual: mask.dims(),
            });
        }
        let Some((x0, y0, x1, y1)) = mask.bounding_box() else {
            return Ok(image.clone());
        };
        let (w, h) = image.dims();
        let cx0 = x0.saturating_sub(self.margin);
        let cy0 = y0.saturating_sub(self.margin);
        let cx1 = (x1 + self.margin).min(w - 1);
        let cy1 = (y1 + self.margin).min(h - 1);
        let (cw, ch) = (cx1 - cx0 + 1, cy1 - cy0 + 1);
        let crop = image.crop(cx0, cy0, cw, ch);
        let crop_mask = Mask::from_fn(cw, ch, |x, y| mask.get(cx0 + x, cy0 + y));
        let filled = self.inner.remove(&crop, &crop_mask, label, iteration)?;
        if filled.dims() != (cw, ch) {
            return Err(Error::backend(
                "remover",
                format!("inpainted crop is {:?}, expected {:?}", filled.dims(), (cw, ch)),
            ));
        }
        let mut out = image.clone();
        for y in 0..ch {
            for x in 0..cw {
                if crop_mask.get(x, y) {
                    out.set(cx0 + x, cy0 + y, filled.get(x, y));
                }
            }
        }
        Ok(out)
    }
}
