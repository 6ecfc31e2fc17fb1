//! Inverse-mapping image warp with bilinear interpolation and zero padding.

use crate::geometry::{project_with, GeometryError, Homography};
use crate::image::{ImageBuffer, Point2, ScoreMap};

/// Bilinear blend of the four pixel centers around `(x, y)` in channel `ch`.
/// Coordinates outside `[0, w-1] × [0, h-1]` sample as 0.
pub fn bilinear_sample(img: &ImageBuffer, x: f64, y: f64, ch: usize) -> f64 {
    debug_assert!(ch < img.channels());
    let (w, h) = (img.width(), img.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return 0.0;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);

    let top = if fx == 0.0 {
        img.get(x0, y0, ch)
    } else {
        img.get(x0, y0, ch) * (1.0 - fx) + img.get(x1, y0, ch) * fx
    };
    if fy == 0.0 {
        return top;
    }
    let bottom = if fx == 0.0 {
        img.get(x0, y1, ch)
    } else {
        img.get(x0, y1, ch) * (1.0 - fx) + img.get(x1, y1, ch) * fx
    };
    top * (1.0 - fy) + bottom * fy
}

/// Resamples `img` into an `out_w × out_h` raster: each output pixel `p` takes
/// `bilinear_sample(img, H⁻¹ p)`. Pixels whose preimage is on the horizon are 0.
pub fn warp_image(
    img: &ImageBuffer,
    h: &Homography,
    out_w: usize,
    out_h: usize,
) -> Result<ImageBuffer, GeometryError> {
    let inv = h.inverse()?.dehomogenized();
    let channels = img.channels();
    let mut data = Vec::with_capacity(out_w * out_h * channels);
    for y in 0..out_h {
        for x in 0..out_w {
            match project_with(&inv, Point2::new(x as f64, y as f64)) {
                Ok(src) => {
                    for c in 0..channels {
                        data.push(bilinear_sample(img, src.x, src.y, c));
                    }
                }
                Err(_) => data.extend(std::iter::repeat_n(0.0, channels)),
            }
        }
    }
    // convex combinations of in-range samples stay in range; clamp guards rounding
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(ImageBuffer::new(out_w, out_h, channels, data).expect("warp output is well-formed"))
}

pub fn warp_score_map(
    map: &ScoreMap,
    h: &Homography,
    out_w: usize,
    out_h: usize,
) -> Result<ScoreMap, GeometryError> {
    let warped = warp_image(map.as_image(), h, out_w, out_h)?;
    Ok(ScoreMap::try_from(warped).expect("single channel preserved"))
}
