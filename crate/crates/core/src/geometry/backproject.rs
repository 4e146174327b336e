use super::{Camera, PointSet, TriangleMesh, Vec3};
use crate::error::{Error, Result};
use crate::raster::{check_dims, DisparityGrid, Image, Mask, Rgb};

/// Lift every selected valid pixel to a camera-space point at depth `1/d`.
/// `select = None` takes all pixels.
pub fn backproject(d: &DisparityGrid, cam: &Camera, select: Option<&Mask>) -> Result<PointSet> {
    check_dims(cam.dims(), d.dims())?;
    if let Some(m) = select {
        check_dims(d.dims(), m.dims())?;
    }
    let mut points = Vec::new();
    for y in 0..d.height() {
        for x in 0..d.width() {
            if select.is_some_and(|m| !m.get(x, y)) {
                continue;
            }
            if let Some(v) = d.get(x, y) {
                points.push(cam.unproject(x as f64, y as f64, 1.0 / v as f64));
            }
        }
    }
    Ok(PointSet::new(points))
}

/// Lift continuous pixel coordinates using a bilinear disparity sample.
/// Entries whose disparity is unavailable come back as `None`.
pub fn backproject_at(d: &DisparityGrid, cam: &Camera, coords: &[(f64, f64)]) -> Vec<Option<Vec3>> {
    coords
        .iter()
        .map(|&(u, v)| {
            d.sample(u, v)
                .filter(|s| *s > 0.0)
                .map(|s| cam.unproject(u, v, 1.0 / s))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TessellateOptions {
    /// Drop triangles whose max/min vertex disparity exceeds this ratio.
    pub discontinuity_ratio: Option<f64>,
}

/// One vertex per valid pixel, two triangles per fully valid pixel quad.
pub fn tessellate_background(
    d: &DisparityGrid,
    cam: &Camera,
    img: &Image,
    opts: TessellateOptions,
) -> Result<TriangleMesh> {
    check_dims(cam.dims(), d.dims())?;
    check_dims(d.dims(), img.dims())?;
    let (w, h) = d.dims();
    let mut index = vec![u32::MAX; w * h];
    let mut vertices = Vec::new();
    let mut colors: Vec<Rgb> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if let Some(v) = d.get(x, y) {
                index[y * w + x] = vertices.len() as u32;
                vertices.push(cam.unproject(x as f64, y as f64, 1.0 / v as f64));
                colors.push(img.get(x, y));
            }
        }
    }
    let disparity = |i: usize| d.values()[i] as f64;
    let keep = |tri: [usize; 3]| match opts.discontinuity_ratio {
        None => true,
        Some(ratio) => {
            let vals = tri.map(disparity);
            let max = vals.iter().cloned().fold(f64::MIN, f64::max);
            let min = vals.iter().cloned().fold(f64::MAX, f64::min);
            max / min <= ratio
        }
    };
    let mut triangles = Vec::new();
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let p00 = y * w + x;
            let p10 = p00 + 1;
            let p01 = p00 + w;
            let p11 = p01 + 1;
            if [p00, p10, p01, p11].iter().any(|&p| index[p] == u32::MAX) {
                continue;
            }
            for tri in [[p00, p10, p01], [p10, p11, p01]] {
                if keep(tri) {
                    triangles.push(tri.map(|p| index[p]));
                }
            }
        }
    }
    if triangles.is_empty() {
        return Err(Error::DegenerateBackground);
    }
    TriangleMesh::new(vertices, Some(colors), triangles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize, v: f32) -> DisparityGrid {
        DisparityGrid::from_values(w, h, vec![v; w * h]).unwrap()
    }

    #[test]
    fn principal_ray() {
        let cam = Camera::new(10.0, 10.0, 2.5, 2.5, 4, 4).unwrap();
        // pixel (2,2) has center (2.5, 2.5) = principal point
        let mask = Mask::from_fn(4, 4, |x, y| x == 2 && y == 2);
        let pts = backproject(&grid(4, 4, 0.5), &cam, Some(&mask)).unwrap();
        assert_eq!(pts.points, vec![Vec3::new(0.0, 0.0, 2.0)]);
    }

    #[test]
    fn two_by_two_closed_form() {
        let cam = Camera::new(1.0, 1.0, 1.0, 1.0, 2, 2).unwrap();
        let pts = backproject(&grid(2, 2, 1.0), &cam, None).unwrap();
        let expected = [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)];
        for (p, (x, y)) in pts.points.iter().zip(expected) {
            assert_eq!(*p, Vec3::new(x, y, 1.0));
        }
    }

    #[test]
    fn empty_selection() {
        let cam = Camera::new(1.0, 1.0, 1.0, 1.0, 2, 2).unwrap();
        let pts = backproject(&grid(2, 2, 1.0), &cam, Some(&Mask::empty(2, 2))).unwrap();
        assert!(pts.is_empty());
    }

    #[test]
    fn tessellation_counts() {
        let cam = Camera::centered(2.0, 2, 2).unwrap();
        let img = Image::filled(2, 2, [0.5; 3]);
        let m = tessellate_background(&grid(2, 2, 1.0), &cam, &img, Default::default()).unwrap();
        assert_eq!((m.vertices.len(), m.triangles.len()), (4, 2));

        let mut holed = grid(2, 2, 1.0);
        holed.invalidate(1, 1);
        let err = tessellate_background(&holed, &cam, &img, Default::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateBackground));

        let cam3 = Camera::centered(2.0, 3, 3).unwrap();
        let img3 = Image::filled(3, 3, [0.5; 3]);
        let m = tessellate_background(&grid(3, 3, 1.0), &cam3, &img3, Default::default()).unwrap();
        assert_eq!((m.vertices.len(), m.triangles.len()), (9, 8));
    }

    #[test]
    fn discontinuity_threshold_drops_stretched_triangles() {
        let cam = Camera::centered(2.0, 3, 2).unwrap();
        let img = Image::filled(3, 2, [0.5; 3]);
        let d = DisparityGrid::from_values(3, 2, vec![1.0, 1.0, 3.0, 1.0, 1.0, 3.0]).unwrap();
        let all = tessellate_background(&d, &cam, &img, Default::default()).unwrap();
        assert_eq!(all.triangles.len(), 4);
        let cut = tessellate_background(
            &d,
            &cam,
            &img,
            TessellateOptions {
                discontinuity_ratio: Some(1.5),
            },
        )
        .unwrap();
        assert_eq!(cut.triangles.len(), 2);
    }
}
