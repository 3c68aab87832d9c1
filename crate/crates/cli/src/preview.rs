use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{GrayImage, RgbImage};
use ravg_tensor::{Scalar, Tensor};

fn srgb(v: f64) -> u8 {
    let c = v.clamp(0.0, 1.0);
    let e = if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (e * 255.0).round() as u8
}

/// Writes a `[3, H, W]` or `[H, W]` tensor as an 8-bit sRGB PNG, clipped to [0, 1].
pub fn write_png<S: Scalar>(t: &Tensor<S>, path: &Path) -> Result<()> {
    let s = t.shape();
    let d = t.data();
    match s.len() {
        2 => {
            let (h, w) = (s[0], s[1]);
            let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([srgb(d[y as usize * w + x as usize].f64())])
            });
            img.save(path)
        }
        3 if s[0] == 3 => {
            let (h, w) = (s[1], s[2]);
            let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let i = y as usize * w + x as usize;
                image::Rgb([0, 1, 2].map(|c| srgb(d[c * h * w + i].f64())))
            });
            img.save(path)
        }
        _ => bail!("cannot preview a tensor of shape {s:?}"),
    }
    .with_context(|| format!("writing {}", path.display()))
}

/// Lays out a `[T, H, W]` stack side by side as one grayscale PNG.
pub fn write_strip<S: Scalar>(t: &Tensor<S>, path: &Path) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 {
        bail!("expected a [T, H, W] stack, got {s:?}");
    }
    let (n, h, w) = (s[0], s[1], s[2]);
    let d = t.data();
    let img = GrayImage::from_fn((n * w) as u32, h as u32, |x, y| {
        let (f, xx) = (x as usize / w, x as usize % w);
        image::Luma([srgb(d[(f * h + y as usize) * w + xx].f64())])
    });
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_endpoints() {
        assert_eq!(srgb(-1.0), 0);
        assert_eq!(srgb(0.0), 0);
        assert_eq!(srgb(1.0), 255);
        assert_eq!(srgb(7.0), 255);
        assert_eq!(srgb(0.5), 188);
    }
}
