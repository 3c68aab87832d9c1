//! Image-quality metrics: PSNR and SSIM on `[0, 1]`-clipped values, and
//! per-pixel temporal variance for flicker measurements.

use ravg_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{check_shape, Error, Result};

/// PSNR in dB after clipping both images to `[0, peak]`. Identical images
/// give `f64::INFINITY`.
pub fn psnr<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, peak: f64) -> Result<f64> {
    check_shape("psnr", x.shape(), y.shape())?;
    if x.is_empty() {
        return Err(Error::Invalid("psnr of empty images".into()));
    }
    let mse = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| {
            let d = a.f64().clamp(0.0, peak) - b.f64().clamp(0.0, peak);
            d * d
        })
        .sum::<f64>()
        / x.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode Gaussian filter of one plane.
fn blur(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over the valid 11×11 Gaussian windows (σ = 1.5, dynamic range 1,
/// inputs clipped to `[0, 1]`), averaged over channels. Accepts `[H, W]` or
/// `[C, H, W]`.
pub fn ssim<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<f64> {
    check_shape("ssim", x.shape(), y.shape())?;
    let (c, h, w) = match *x.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => return Err(Error::Invalid(format!("ssim expects [C, H, W], got {:?}", x.shape()))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW || c == 0 {
        return Err(Error::Invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let hw = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let a: Vec<f64> = x.data()[ch * hw..(ch + 1) * hw].iter().map(|v| v.f64().clamp(0.0, 1.0)).collect();
        let b: Vec<f64> = y.data()[ch * hw..(ch + 1) * hw].iter().map(|v| v.f64().clamp(0.0, 1.0)).collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p * q).collect();
        let (ma, mb) = (blur(&a, h, w, &g), blur(&b, h, w, &g));
        let (saa, sbb, sab) = (blur(&aa, h, w, &g), blur(&bb, h, w, &g), blur(&ab, h, w, &g));
        let n = ma.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (mx, my) = (ma[i], mb[i]);
            let vx = saa[i] - mx * mx;
            let vy = sbb[i] - my * my;
            let cov = sab[i] - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += sum / n as f64;
    }
    Ok(total / c as f64)
}

/// Mean over pixels and channels of the unbiased variance across frames.
pub fn temporal_variance<S: Scalar>(frames: &[Tensor<S>]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::Invalid("temporal variance needs at least 2 frames".into()));
    }
    for f in &frames[1..] {
        check_shape("temporal_variance", frames[0].shape(), f.shape())?;
    }
    let n = frames.len() as f64;
    let len = frames[0].len();
    let mut total = 0.0;
    for i in 0..len {
        let mean = frames.iter().map(|f| f.data()[i].f64()).sum::<f64>() / n;
        total += frames.iter().map(|f| (f.data()[i].f64() - mean).powi(2)).sum::<f64>() / (n - 1.0);
    }
    Ok(total / len.max(1) as f64)
}

/// Serializes infinite PSNR as the string `"inf"`.
pub fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn deserialize_db<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Str(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Db::Str(s) => Err(serde::de::Error::custom(format!("bad dB value {s:?}"))),
    }
}

/// One line of the per-frame metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    #[serde(serialize_with = "serialize_db", deserialize_with = "deserialize_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub frame_weights_avg: Vec<f64>,
    pub frame_weights_max: Vec<f64>,
}

/// Min / mean / max of a metric over samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(serialize_with = "serialize_db", deserialize_with = "deserialize_db")]
    pub min: f64,
    #[serde(serialize_with = "serialize_db", deserialize_with = "deserialize_db")]
    pub avg: f64,
    #[serde(serialize_with = "serialize_db", deserialize_with = "deserialize_db")]
    pub max: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg = values.iter().sum::<f64>() / values.len() as f64;
        Some(Self { min, avg, max })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let x = Tensor::<f64>::full([3, 4, 4], 0.5);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        let y = x.map(|v| v + 0.1);
        assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let z = Tensor::<f64>::zeros([4]);
        let o = Tensor::<f64>::ones([4]);
        assert!(psnr(&z, &o, 1.0).unwrap().abs() < 1e-12);
        // values above the peak are clipped before comparison
        assert_eq!(psnr(&o, &o.map(|v| v * 5.0), 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_identity_and_size_check() {
        let x = Tensor::<f64>::from_fn([3, 16, 16], |i| (i as f64 * 0.13).sin() * 0.5 + 0.5);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let small = Tensor::<f64>::zeros([3, 10, 16]);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn ssim_of_constants_is_the_luminance_term() {
        let a = Tensor::<f64>::full([1, 12, 12], 0.0);
        let b = Tensor::<f64>::full([1, 12, 12], 1.0);
        let c1 = 0.01f64 * 0.01;
        let want = c1 / (1.0 + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
        let a = Tensor::<f64>::full([1, 12, 12], 0.3);
        let b = Tensor::<f64>::full([1, 12, 12], 0.6);
        let want = (2.0 * 0.3 * 0.6 + c1) / (0.09 + 0.36 + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn temporal_variance_examples() {
        let f = Tensor::<f64>::from_fn([2, 3], |i| i as f64);
        assert_eq!(temporal_variance(&[f.clone(), f.clone()]).unwrap(), 0.0);
        assert!(temporal_variance(&[f.clone()]).is_err());
        let g = f.map(|v| v + 1.0);
        let v = temporal_variance(&[f.clone(), g.clone()]).unwrap();
        let v2 = temporal_variance(&[f.map(|v| 2.0 * v), g.map(|v| 2.0 * v)]).unwrap();
        assert!((v2 - 4.0 * v).abs() < 1e-12);
    }

    #[test]
    fn metrics_line_format() {
        let m = FrameMetrics {
            frame: 3,
            psnr: f64::INFINITY,
            ssim: 1.0,
            frame_weights_avg: vec![0.0, 1.0, 0.0],
            frame_weights_max: vec![0.0, 1.0, 0.0],
        };
        let line = serde_json::to_string(&m).unwrap();
        assert_eq!(
            line,
            r#"{"frame":3,"psnr":"inf","ssim":1.0,"frame_weights_avg":[0.0,1.0,0.0],"frame_weights_max":[0.0,1.0,0.0]}"#
        );
        let back: FrameMetrics = serde_json::from_str(&line).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn aggregate() {
        let a = Aggregate::of(&[1.0, 2.0, 6.0]).unwrap();
        assert_eq!((a.min, a.avg, a.max), (1.0, 3.0, 6.0));
        assert!(Aggregate::of(&[]).is_none());
    }
}
