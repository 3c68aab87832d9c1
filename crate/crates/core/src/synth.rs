//! Procedural Monte Carlo stand-in renderer.
//!
//! A scene is a stack of textured layers (quads and disks over a full-frame
//! background) moving with per-layer affine motion. Each pixel sample returns
//! the analytic shading times a random light factor (Gamma, mean 1, variance
//! `light_sigma²`) plus, with probability `firefly_prob`, a spike of
//! `firefly_intensity`. The ground truth is the per-pixel expectation,
//! `shading + firefly_prob * firefly_intensity`.
//!
//! Random streams are keyed by `(seed, frame, pixel)`, so pixels can be
//! rendered in any order or in parallel with identical results.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use ravg_tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::warp::{backward_warp, confidence_mix, warp_confidence, ConfidenceParams, Flow};

pub const LOW_SPP: usize = 4;
pub const PSEUDO_REF_SPP: usize = 4096;

/// Sample counts of the three noise levels plus the pseudo-reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLevel {
    Low,
    Half,
    Noisy,
    PseudoRef,
}

impl NoiseLevel {
    /// `4`, `floor(n / e)`, `n` and `4096` samples per pixel.
    pub fn spp(self, n: usize) -> usize {
        match self {
            NoiseLevel::Low => LOW_SPP,
            NoiseLevel::Half => ((n as f64 / std::f64::consts::E).floor() as usize).max(1),
            NoiseLevel::Noisy => n,
            NoiseLevel::PseudoRef => PSEUDO_REF_SPP,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseLevel::Low => "low",
            NoiseLevel::Half => "half",
            NoiseLevel::Noisy => "noisy",
            NoiseLevel::PseudoRef => "pseudo-ref",
        }
    }
}

/// Input level → target level; always from noisier to cleaner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoisePair {
    pub input: NoiseLevel,
    pub target: NoiseLevel,
}

impl NoisePair {
    pub const ALL: [NoisePair; 5] = [
        NoisePair::new(NoiseLevel::Low, NoiseLevel::Half),
        NoisePair::new(NoiseLevel::Low, NoiseLevel::Noisy),
        NoisePair::new(NoiseLevel::Half, NoiseLevel::Noisy),
        NoisePair::new(NoiseLevel::Noisy, NoiseLevel::PseudoRef),
        NoisePair::new(NoiseLevel::Half, NoiseLevel::PseudoRef),
    ];

    pub const fn new(input: NoiseLevel, target: NoiseLevel) -> Self {
        Self { input, target }
    }

    pub fn label(&self) -> String {
        format!("{}->{}", self.input.name(), self.target.name())
    }

    pub fn validate(&self) -> Result<()> {
        if Self::ALL.contains(self) {
            Ok(())
        } else {
            Err(Error::Config(format!("unsupported noise pair {}", self.label())))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Texture {
    Solid { color: [f64; 3] },
    Checker { size: f64, a: [f64; 3], b: [f64; 3] },
    /// Sinusoidal stripes along `angle` with the given period.
    Stripes { period: f64, angle: f64, a: [f64; 3], b: [f64; 3] },
    /// Bilinear value noise on a lattice of `scale` pixels.
    Noise { scale: f64, a: [f64; 3], b: [f64; 3], seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Shape {
    /// Covers the whole plane.
    Full,
    Quad { half_w: f64, half_h: f64 },
    Disk { radius: f64 },
}

/// Affine motion: `center(t) = start + velocity * t`, `angle(t) = angle + spin * t`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Motion {
    pub start: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default)]
    pub angle: f64,
    #[serde(default)]
    pub spin: f64,
}

impl Motion {
    fn at(&self, t: f64) -> ([f64; 2], f64) {
        (
            [self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t],
            self.angle + self.spin * t,
        )
    }

    /// World point → layer coordinates at time `t`.
    fn to_local(&self, t: f64, p: [f64; 2]) -> [f64; 2] {
        let (c, a) = self.at(t);
        let (s, co) = a.sin_cos();
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        [co * dx + s * dy, -s * dx + co * dy]
    }

    fn to_world(&self, t: f64, q: [f64; 2]) -> [f64; 2] {
        let (c, a) = self.at(t);
        let (s, co) = a.sin_cos();
        [c[0] + co * q[0] - s * q[1], c[1] + s * q[0] + co * q[1]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub shape: Shape,
    pub texture: Texture,
    pub motion: Motion,
    /// In-plane components of the surface normal in layer coordinates.
    #[serde(default)]
    pub tilt: [f64; 2],
    /// Dome strength: the normal bends outward with distance from the center.
    #[serde(default)]
    pub bump: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Bottom to top; the first layer should be `Full`.
    pub layers: Vec<Layer>,
    pub light_dir: [f64; 3],
    pub ambient: f64,
    pub light_sigma: f64,
    pub firefly_prob: f64,
    pub firefly_intensity: f64,
    pub seed: u64,
}

pub const SCENE_PRESETS: [&str; 5] = ["pan-checker", "rotating-disks", "moving-quads", "static", "fireflies"];

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for a named purpose.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    tag.bytes().fold(splitmix(seed), |h, b| splitmix(h ^ b as u64))
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

impl Texture {
    fn eval(&self, q: [f64; 2]) -> [f64; 3] {
        match *self {
            Texture::Solid { color } => color,
            Texture::Checker { size, a, b } => {
                let c = (q[0] / size).floor() as i64 + (q[1] / size).floor() as i64;
                if c.rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
            Texture::Stripes { period, angle, a, b } => {
                let d = q[0] * angle.cos() + q[1] * angle.sin();
                lerp3(a, b, 0.5 + 0.5 * (2.0 * PI * d / period).sin())
            }
            Texture::Noise { scale, a, b, seed } => {
                let (x, y) = (q[0] / scale, q[1] / scale);
                let (x0, y0) = (x.floor(), y.floor());
                let (fx, fy) = (x - x0, y - y0);
                let (ix, iy) = (x0 as i64, y0 as i64);
                let v = lattice(seed, ix, iy) * (1.0 - fx) * (1.0 - fy)
                    + lattice(seed, ix + 1, iy) * fx * (1.0 - fy)
                    + lattice(seed, ix, iy + 1) * (1.0 - fx) * fy
                    + lattice(seed, ix + 1, iy + 1) * fx * fy;
                lerp3(a, b, v)
            }
        }
    }
}

impl Shape {
    fn contains(&self, q: [f64; 2]) -> bool {
        match *self {
            Shape::Full => true,
            Shape::Quad { half_w, half_h } => q[0].abs() <= half_w && q[1].abs() <= half_h,
            Shape::Disk { radius } => q[0] * q[0] + q[1] * q[1] <= radius * radius,
        }
    }

    fn extent(&self) -> f64 {
        match *self {
            Shape::Full => 1.0,
            Shape::Quad { half_w, half_h } => half_w.max(half_h),
            Shape::Disk { radius } => radius,
        }
    }
}

/// Analytic buffers of one pixel.
#[derive(Clone, Copy, Debug)]
struct Surface {
    layer: usize,
    local: [f64; 2],
    albedo: [f64; 3],
    normal: [f64; 3],
    shading: [f64; 3],
}

impl Scene {
    /// Built-in scene with the given size, length and seed.
    pub fn preset(name: &str, width: usize, height: usize, frames: usize, seed: u64) -> Result<Scene> {
        let (w, h) = (width as f64, height as f64);
        let s = derive_seed(seed, name);
        let pick = |tag: &str, lo: f64, hi: f64| {
            let u = (derive_seed(s, tag) >> 11) as f64 / (1u64 << 53) as f64;
            lo + (hi - lo) * u
        };
        let base = |layers: Vec<Layer>| Scene {
            name: name.to_string(),
            width,
            height,
            frames,
            layers,
            light_dir: [0.3, -0.4, 1.0],
            ambient: 0.35,
            light_sigma: 1.0,
            firefly_prob: 0.0,
            firefly_intensity: 0.0,
            seed,
        };
        let noise_bg = |tag: &str| Layer {
            shape: Shape::Full,
            texture: Texture::Noise {
                scale: 6.0,
                a: [0.15, 0.2, 0.3],
                b: [0.75, 0.7, 0.55],
                seed: derive_seed(s, tag),
            },
            motion: Motion::default(),
            tilt: [0.0, 0.0],
            bump: 0.0,
        };
        let scene = match name {
            "pan-checker" => base(vec![Layer {
                shape: Shape::Full,
                texture: Texture::Checker {
                    size: 4.0 + pick("size", 0.0, 3.0).floor(),
                    a: [0.8, 0.75, 0.65],
                    b: [0.15, 0.2, 0.3],
                },
                motion: Motion {
                    start: [pick("x", 0.0, 8.0), pick("y", 0.0, 8.0)],
                    velocity: [1.0, 0.0],
                    ..Motion::default()
                },
                tilt: [0.2, 0.1],
                bump: 0.0,
            }]),
            "rotating-disks" => base(vec![
                noise_bg("bg"),
                Layer {
                    shape: Shape::Disk { radius: 0.3 * w.min(h) },
                    texture: Texture::Checker {
                        size: 3.0,
                        a: [0.9, 0.5, 0.3],
                        b: [0.3, 0.6, 0.9],
                    },
                    motion: Motion {
                        start: [0.35 * w, 0.45 * h],
                        velocity: [pick("v1", 0.3, 0.8), pick("v2", -0.4, 0.4)],
                        angle: 0.0,
                        spin: 0.06,
                    },
                    tilt: [0.0, 0.0],
                    bump: 0.8,
                },
                Layer {
                    shape: Shape::Disk { radius: 0.18 * w.min(h) },
                    texture: Texture::Stripes {
                        period: 5.0,
                        angle: 0.4,
                        a: [0.95, 0.9, 0.4],
                        b: [0.2, 0.25, 0.2],
                    },
                    motion: Motion {
                        start: [0.7 * w, 0.6 * h],
                        velocity: [-0.5, pick("v3", -0.3, 0.3)],
                        angle: 0.0,
                        spin: -0.08,
                    },
                    tilt: [0.1, -0.1],
                    bump: 0.5,
                },
            ]),
            "moving-quads" => base(vec![
                Layer {
                    shape: Shape::Full,
                    texture: Texture::Stripes {
                        period: 9.0,
                        angle: 1.1,
                        a: [0.2, 0.3, 0.25],
                        b: [0.6, 0.65, 0.7],
                    },
                    motion: Motion {
                        start: [0.0, 0.0],
                        velocity: [0.0, 0.5],
                        ..Motion::default()
                    },
                    tilt: [0.0, 0.3],
                    bump: 0.0,
                },
                Layer {
                    shape: Shape::Quad {
                        half_w: 0.22 * w,
                        half_h: 0.14 * h,
                    },
                    texture: Texture::Noise {
                        scale: 3.0,
                        a: [0.9, 0.2, 0.2],
                        b: [0.95, 0.85, 0.6],
                        seed: derive_seed(s, "q1"),
                    },
                    motion: Motion {
                        start: [0.3 * w, 0.35 * h],
                        velocity: [pick("v1", 0.5, 1.0), 0.25],
                        angle: 0.2,
                        spin: 0.03,
                    },
                    tilt: [-0.2, 0.2],
                    bump: 0.0,
                },
                Layer {
                    shape: Shape::Quad {
                        half_w: 0.12 * w,
                        half_h: 0.2 * h,
                    },
                    texture: Texture::Checker {
                        size: 2.0,
                        a: [0.1, 0.1, 0.12],
                        b: [0.85, 0.9, 0.95],
                    },
                    motion: Motion {
                        start: [0.65 * w, 0.6 * h],
                        velocity: [-0.7, pick("v2", -0.5, 0.0)],
                        angle: -0.3,
                        spin: -0.02,
                    },
                    tilt: [0.3, 0.0],
                    bump: 0.0,
                },
            ]),
            "static" => base(vec![
                noise_bg("bg"),
                Layer {
                    shape: Shape::Disk { radius: 0.3 * w.min(h) },
                    texture: Texture::Stripes {
                        period: 6.0,
                        angle: 0.7,
                        a: [0.85, 0.6, 0.3],
                        b: [0.3, 0.4, 0.7],
                    },
                    motion: Motion {
                        start: [0.5 * w, 0.5 * h],
                        ..Motion::default()
                    },
                    tilt: [0.0, 0.0],
                    bump: 0.7,
                },
            ]),
            "fireflies" => {
                let mut sc = Scene::preset("moving-quads", width, height, frames, seed)?;
                sc.name = name.to_string();
                sc.firefly_prob = 0.002;
                sc.firefly_intensity = 20.0;
                sc
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown scene preset {other:?} (expected one of {})",
                    SCENE_PRESETS.join(", ")
                )))
            }
        };
        Ok(scene)
    }

    pub fn from_json(text: &str) -> Result<Scene> {
        let s: Scene = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::Config("scene dimensions and frame count must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("scene needs at least one layer".into()));
        }
        if !(0.0..=1.0).contains(&self.firefly_prob) || self.firefly_intensity < 0.0 || self.light_sigma < 0.0 {
            return Err(Error::Config("invalid noise parameters".into()));
        }
        Ok(())
    }

    fn surface(&self, t: f64, p: [f64; 2]) -> Surface {
        let idx = self
            .layers
            .iter()
            .rposition(|l| l.shape.contains(l.motion.to_local(t, p)))
            .unwrap_or(0);
        let layer = &self.layers[idx];
        let q = layer.motion.to_local(t, p);
        let albedo = layer.texture.eval(q);
        let ext = layer.shape.extent();
        let nl = [
            layer.tilt[0] + layer.bump * q[0] / ext,
            layer.tilt[1] + layer.bump * q[1] / ext,
        ];
        // rotate the in-plane part with the layer
        let (_, a) = layer.motion.at(t);
        let (s, c) = a.sin_cos();
        let n = [c * nl[0] - s * nl[1], s * nl[0] + c * nl[1], 1.0];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let normal = [n[0] / len, n[1] / len, n[2] / len];
        let l = self.light_dir;
        let ll = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
        let ndl = ((normal[0] * l[0] + normal[1] * l[1] + normal[2] * l[2]) / ll).max(0.0);
        let shade = self.ambient + (1.0 - self.ambient) * ndl;
        Surface {
            layer: idx,
            local: q,
            albedo,
            normal,
            shading: [albedo[0] * shade, albedo[1] * shade, albedo[2] * shade],
        }
    }

    /// Backward flow from frame `from` to frame `to` at pixel `(x, y)`.
    fn flow_at(&self, from: f64, to: f64, x: usize, y: usize) -> [f64; 2] {
        let p = [x as f64 + 0.5, y as f64 + 0.5];
        let s = self.surface(from, p);
        let p2 = self.layers[s.layer].motion.to_world(to, s.local);
        [p2[0] - p[0], p2[1] - p[1]]
    }

    /// Exact backward flow `[2, H, W]` from frame `from` to frame `to`.
    pub fn flow(&self, from: usize, to: usize) -> Flow<f32> {
        let (h, w) = (self.height, self.width);
        let mut data = vec![0f32; 2 * h * w];
        for y in 0..h {
            for x in 0..w {
                let f = self.flow_at(from as f64, to as f64, x, y);
                data[y * w + x] = f[0] as f32;
                data[h * w + y * w + x] = f[1] as f32;
            }
        }
        Flow::new(Tensor::new([2, h, w], data).expect("flow shape")).expect("finite flow")
    }

    pub fn is_static(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.motion.velocity == [0.0, 0.0] && l.motion.spin == 0.0)
    }
}

/// One rendered frame with its auxiliary buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameData {
    pub index: usize,
    pub spp: usize,
    pub rgb: Tensor<f32>,
    pub albedo: Tensor<f32>,
    pub normal: Tensor<f32>,
    pub ground_truth: Tensor<f32>,
    /// Backward flows to the frames at offsets `-k..=k` (index `o + k`).
    pub flows: Vec<Flow<f32>>,
}

impl FrameData {
    pub fn window(&self) -> usize {
        self.flows.len() / 2
    }

    pub fn flow(&self, offset: isize) -> Result<&Flow<f32>> {
        let k = self.window() as isize;
        if offset.abs() > k {
            return Err(Error::Invalid(format!("no flow stored for offset {offset} (window ±{k})")));
        }
        Ok(&self.flows[(offset + k) as usize])
    }

    pub fn height(&self) -> usize {
        self.rgb.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.rgb.shape()[2]
    }

    /// RTF record name of the flow at `offset`.
    pub fn flow_name(offset: isize) -> String {
        format!("flow_t{offset:+}")
    }
}

/// Mean of `spp` per-sample light factors and firefly hits for one pixel.
/// The sum of `spp` Gamma(α, θ) draws is Gamma(spp·α, θ) and the number of
/// firefly hits is Binomial(spp, p), so the estimator is sampled exactly in
/// O(1) per pixel.
fn pixel_noise(scene: &Scene, spp: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let n = spp as f64;
    let light = if scene.light_sigma > 0.0 {
        let var = scene.light_sigma * scene.light_sigma;
        Gamma::new(n / var, var / n).expect("valid gamma").sample(rng)
    } else {
        1.0
    };
    let spikes = if scene.firefly_prob > 0.0 {
        Binomial::new(spp as u64, scene.firefly_prob).expect("valid binomial").sample(rng) as f64
    } else {
        0.0
    };
    (light, spikes * scene.firefly_intensity / n)
}

fn pixel_rng(seed: u64, frame: usize, pixel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((frame as u64) << 32) | pixel as u64);
    rng
}

/// Renders frame `t` at `spp` samples per pixel with flows for offsets
/// `-k..=k`.
pub fn render_frame(scene: &Scene, t: usize, spp: usize, seed: u64, k: usize) -> Result<FrameData> {
    if spp == 0 {
        return Err(Error::Config("spp must be at least 1".into()));
    }
    scene.validate()?;
    let (h, w) = (scene.height, scene.width);
    let hw = h * w;
    let bias = scene.firefly_prob * scene.firefly_intensity;
    let px: Vec<[f32; 12]> = (0..hw)
        .into_par_iter()
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let s = scene.surface(t as f64, [x as f64 + 0.5, y as f64 + 0.5]);
            let mut rng = pixel_rng(seed, t, p);
            let (light, spike) = pixel_noise(scene, spp, &mut rng);
            let mut out = [0f32; 12];
            for c in 0..3 {
                out[c] = (s.shading[c] * light + spike) as f32;
                out[3 + c] = s.albedo[c] as f32;
                out[6 + c] = s.normal[c] as f32;
                out[9 + c] = (s.shading[c] + bias) as f32;
            }
            out
        })
        .collect();
    let plane = |off: usize| {
        let mut v = vec![0f32; 3 * hw];
        for (p, vals) in px.iter().enumerate() {
            for c in 0..3 {
                v[c * hw + p] = vals[off + c];
            }
        }
        Tensor::new([3, h, w], v).expect("plane shape")
    };
    let ki = k as isize;
    let flows = (-ki..=ki)
        .map(|o| {
            let to = t as isize + o;
            if o == 0 {
                Flow::zeros(h, w)
            } else {
                // analytic motion is defined for any time, including outside the clip
                let mut data = vec![0f32; 2 * hw];
                for y in 0..h {
                    for x in 0..w {
                        let f = scene.flow_at(t as f64, to as f64, x, y);
                        data[y * w + x] = f[0] as f32;
                        data[hw + y * w + x] = f[1] as f32;
                    }
                }
                Flow::new(Tensor::new([2, h, w], data).expect("flow shape")).expect("finite flow")
            }
        })
        .collect();
    Ok(FrameData {
        index: t,
        spp,
        rgb: plane(0),
        albedo: plane(3),
        normal: plane(6),
        ground_truth: plane(9),
        flows,
    })
}

/// Renders every frame of the scene.
pub fn render_sequence(scene: &Scene, spp: usize, seed: u64, k: usize) -> Result<Vec<FrameData>> {
    (0..scene.frames).map(|t| render_frame(scene, t, spp, seed, k)).collect()
}

/// Aligned network input for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct Prewarped {
    /// `[T, 10, H, W]`: color, albedo, normal, confidence per frame.
    pub input: Tensor<f32>,
    /// Window slots whose frame was replaced by the nearest available one.
    pub clamped: Vec<bool>,
}

/// Warps the window around `frames[center]` to the central frame and mixes
/// in central values where the warp confidence is low. Missing neighbors at
/// the sequence edges repeat the nearest frame. `colors` overrides the RGB
/// buffers (used by multi-pass denoising).
pub fn prewarp(frames: &[FrameData], colors: Option<&[Tensor<f32>]>, center: usize, k: usize) -> Result<Prewarped> {
    if frames.is_empty() {
        return Err(Error::Data("empty frame sequence".into()));
    }
    if center >= frames.len() {
        return Err(Error::Invalid(format!("center {center} outside sequence of {}", frames.len())));
    }
    if let Some(c) = colors {
        if c.len() != frames.len() {
            return Err(Error::Invalid("color override length differs from frame count".into()));
        }
    }
    let color = |i: usize| colors.map(|c| &c[i]).unwrap_or(&frames[i].rgb);
    let c = &frames[center];
    let (h, w) = (c.height(), c.width());
    let hw = h * w;
    let t = 2 * k + 1;
    let mut data = Vec::with_capacity(t * 10 * hw);
    let mut clamped = Vec::with_capacity(t);
    for o in -(k as isize)..=(k as isize) {
        let want = center as isize + o;
        let src = want.clamp(0, frames.len() as isize - 1) as usize;
        clamped.push(src as isize != want);
        let f = &frames[src];
        if o == 0 || src == center {
            data.extend_from_slice(color(center).data());
            data.extend_from_slice(c.albedo.data());
            data.extend_from_slice(c.normal.data());
            data.extend(std::iter::repeat(1f32).take(hw));
            continue;
        }
        let flow = c.flow(src as isize - center as isize)?;
        let (rgb, oob) = backward_warp(color(src), flow)?;
        let (alb, _) = backward_warp(&f.albedo, flow)?;
        let (nrm, _) = backward_warp(&f.normal, flow)?;
        let conf = warp_confidence(&alb, &nrm, &c.albedo, &c.normal, &oob, ConfidenceParams::default())?;
        data.extend_from_slice(confidence_mix(&rgb, color(center), &conf)?.data());
        data.extend_from_slice(confidence_mix(&alb, &c.albedo, &conf)?.data());
        data.extend_from_slice(confidence_mix(&nrm, &c.normal, &conf)?.data());
        data.extend_from_slice(conf.data());
    }
    Ok(Prewarped {
        input: Tensor::new([t, 10, h, w], data)?,
        clamped,
    })
}

/// Warps arbitrary per-frame images `[C, H, W]` to `frames[center]` with the
/// same flows, confidence and edge clamping as [`prewarp`]; returns
/// `[T, C, H, W]`.
pub fn warp_stack(frames: &[FrameData], images: &[Tensor<f32>], center: usize, k: usize) -> Result<Tensor<f32>> {
    if images.len() != frames.len() || frames.is_empty() {
        return Err(Error::Invalid(format!(
            "{} images for {} frames",
            images.len(),
            frames.len()
        )));
    }
    if center >= frames.len() {
        return Err(Error::Invalid(format!("center {center} outside sequence of {}", frames.len())));
    }
    let c = &frames[center];
    let shape = images[center].shape().to_vec();
    let mut data = Vec::with_capacity((2 * k + 1) * images[center].len());
    for o in -(k as isize)..=(k as isize) {
        let src = (center as isize + o).clamp(0, frames.len() as isize - 1) as usize;
        if images[src].shape() != shape.as_slice() {
            return Err(Error::Shape {
                op: "warp_stack",
                expected: shape.clone(),
                got: images[src].shape().to_vec(),
            });
        }
        if src == center {
            data.extend_from_slice(images[center].data());
            continue;
        }
        let flow = c.flow(src as isize - center as isize)?;
        let (img, oob) = backward_warp(&images[src], flow)?;
        let (alb, _) = backward_warp(&frames[src].albedo, flow)?;
        let (nrm, _) = backward_warp(&frames[src].normal, flow)?;
        let conf = warp_confidence(&alb, &nrm, &c.albedo, &c.normal, &oob, ConfidenceParams::default())?;
        data.extend_from_slice(confidence_mix(&img, &images[center], &conf)?.data());
    }
    let mut full = vec![2 * k + 1];
    full.extend(shape);
    Ok(Tensor::new(full, data)?)
}

/// Provenance of a training sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub scene: String,
    pub center: usize,
    pub pair: NoisePair,
    pub input_spp: usize,
    pub target_spp: usize,
    pub seed: u64,
    /// Top-left corner of the tile, if cropped.
    #[serde(default)]
    pub tile: Option<[usize; 2]>,
}

/// One motion-compensated window with its target.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    /// `[T, 10, H, W]`.
    pub input: Tensor<f32>,
    /// Independent render of the central frame at the cleaner level.
    pub target: Tensor<f32>,
    pub ground_truth: Tensor<f32>,
    pub meta: SampleMeta,
}

impl TrainSample {
    pub fn frames(&self) -> usize {
        self.input.shape()[0]
    }

    /// Central noisy color `[3, H, W]`.
    pub fn center_color(&self) -> Tensor<f32> {
        let t = self.input.shape();
        let hw = t[2] * t[3];
        let k = t[0] / 2;
        let start = k * 10 * hw;
        Tensor::new([3, t[2], t[3]], self.input.data()[start..start + 3 * hw].to_vec()).expect("color shape")
    }

    /// Warped color stack `[T, 3, H, W]`.
    pub fn color_stack(&self) -> Tensor<f32> {
        let s = self.input.shape();
        let hw = s[2] * s[3];
        let mut data = Vec::with_capacity(s[0] * 3 * hw);
        for f in 0..s[0] {
            data.extend_from_slice(&self.input.data()[f * 10 * hw..f * 10 * hw + 3 * hw]);
        }
        Tensor::new([s[0], 3, s[2], s[3]], data).expect("stack shape")
    }

    /// Crops a `size × size` tile at `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, size_h: usize, size_w: usize) -> Result<TrainSample> {
        let s = self.input.shape();
        if y + size_h > s[2] || x + size_w > s[3] {
            return Err(Error::Invalid(format!(
                "tile {size_h}x{size_w} at ({y}, {x}) exceeds {}x{}",
                s[2], s[3]
            )));
        }
        let crop = |t: &Tensor<f32>| {
            let sh = t.shape();
            let planes = sh[..sh.len() - 2].iter().product::<usize>();
            let (h, w) = (sh[sh.len() - 2], sh[sh.len() - 1]);
            let mut out = Vec::with_capacity(planes * size_h * size_w);
            for p in 0..planes {
                for r in y..y + size_h {
                    let base = p * h * w + r * w;
                    out.extend_from_slice(&t.data()[base + x..base + x + size_w]);
                }
            }
            let mut shape = sh[..sh.len() - 2].to_vec();
            shape.extend([size_h, size_w]);
            Tensor::new(shape, out).expect("crop shape")
        };
        let mut meta = self.meta.clone();
        let (oy, ox) = meta.tile.map(|t| (t[0], t[1])).unwrap_or((0, 0));
        meta.tile = Some([oy + y, ox + x]);
        Ok(TrainSample {
            input: crop(&self.input),
            target: crop(&self.target),
            ground_truth: crop(&self.ground_truth),
            meta,
        })
    }
}

/// Builds one training window centered at `center` with `2k + 1` frames:
/// inputs at `pair.input` (base count `n`), target an independent render at
/// `pair.target`.
pub fn make_sequence(scene: &Scene, center: usize, k: usize, pair: NoisePair, n: usize, seed: u64) -> Result<TrainSample> {
    pair.validate()?;
    if center < k || center + k >= scene.frames {
        return Err(Error::Config(format!(
            "window ±{k} around frame {center} exceeds the scene's {} frames",
            scene.frames
        )));
    }
    let in_seed = derive_seed(seed, "input");
    let tgt_seed = derive_seed(seed, "target");
    let (in_spp, tgt_spp) = (pair.input.spp(n), pair.target.spp(n));
    let frames = (center - k..=center + k)
        .map(|t| render_frame(scene, t, in_spp, in_seed, k))
        .collect::<Result<Vec<_>>>()?;
    let pre = prewarp(&frames, None, k, k)?;
    let target = render_frame(scene, center, tgt_spp, tgt_seed, 0)?;
    Ok(TrainSample {
        input: pre.input,
        target: target.rgb,
        ground_truth: target.ground_truth,
        meta: SampleMeta {
            scene: scene.name.clone(),
            center,
            pair,
            input_spp: in_spp,
            target_spp: tgt_spp,
            seed,
            tile: None,
        },
    })
}

/// Draws a noise pair uniformly from [`NoisePair::ALL`].
pub fn random_pair(rng: &mut impl Rng) -> NoisePair {
    NoisePair::ALL[rng.gen_range(0..NoisePair::ALL.len())]
}
