//! Network assembly: an embedding conv, shared per-frame residual blocks with
//! RA blocks interleaved at configured depths, and a kernel-predicting head on
//! the central frame's features. The tKPCN baseline replaces the RA blocks by
//! a two-conv temporal fusion module in front of the head.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ravg_tensor::{rtf, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    apply_kernels_var, softmax_normalize_var, threshold_normalize_var, validate_threshold, FallbackMask, KernelField,
    KernelLayout,
};
use crate::ra::{ra_block, Averaging, RaOptions};

/// Per-frame input channels: color, albedo, normal, warp confidence.
pub const INPUT_CHANNELS: usize = 10;
pub const COLOR_CHANNELS: usize = 3;

pub const FORMAT_NAME: &str = "ravg-model";
pub const FORMAT_VERSION: u32 = 1;

/// Initial bias of the final RA weight-head conv (`sigmoid(-2) ≈ 0.12`).
pub const RA_INIT_BIAS: f64 = -2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelNorm {
    #[default]
    Threshold,
    Softmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Half window `k`; the network sees `T = 2k + 1` frames.
    pub window: usize,
    pub channels: usize,
    pub n_res_blocks: usize,
    /// 1-based residual block indices followed by an RA block.
    pub ra_positions: Vec<usize>,
    /// Number of leading RA blocks followed by an additive skip from the
    /// embedding output.
    pub skip_after_ra: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    /// Kernel threshold; `None` means `1 / (2K)`.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub normalization: KernelNorm,
    /// tKPCN baseline: no RA blocks, temporal fusion before the head.
    #[serde(default)]
    pub baseline: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk_tiny()
    }
}

impl ModelConfig {
    /// T = 5, 16 channels, 6 blocks, RA after 2, 4, 6, 3×3 kernels.
    pub fn desk_tiny() -> Self {
        Self {
            window: 2,
            channels: 16,
            n_res_blocks: 6,
            ra_positions: vec![2, 4, 6],
            skip_after_ra: 2,
            kernel_h: 3,
            kernel_w: 3,
            threshold: None,
            normalization: KernelNorm::Threshold,
            baseline: false,
        }
    }

    pub fn desk() -> Self {
        Self {
            channels: 32,
            n_res_blocks: 8,
            ra_positions: vec![2, 4, 6, 8],
            kernel_h: 5,
            kernel_w: 5,
            ..Self::desk_tiny()
        }
    }

    /// Full-size topology: 24 blocks of 80 channels, RA after 3, 6, 9, 12, 15
    /// and 24, skips after the first four RA blocks, 5×5×5 kernels.
    pub fn paper() -> Self {
        Self {
            window: 2,
            channels: 80,
            n_res_blocks: 24,
            ra_positions: vec![3, 6, 9, 12, 15, 24],
            skip_after_ra: 4,
            kernel_h: 5,
            kernel_w: 5,
            threshold: None,
            normalization: KernelNorm::Threshold,
            baseline: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk-tiny" => Ok(Self::desk_tiny()),
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!(
                "unknown model preset {other:?} (expected desk-tiny, desk or paper)"
            ))),
        }
    }

    /// Same spatial stack without RA blocks, with temporal fusion instead.
    pub fn to_tkpcn(&self) -> Self {
        Self {
            ra_positions: Vec::new(),
            skip_after_ra: 0,
            baseline: true,
            ..self.clone()
        }
    }

    pub fn frames(&self) -> usize {
        2 * self.window + 1
    }

    pub fn layout(&self) -> KernelLayout {
        KernelLayout {
            frames: self.frames(),
            kh: self.kernel_h,
            kw: self.kernel_w,
        }
    }

    pub fn taps(&self) -> usize {
        self.layout().taps()
    }

    pub fn effective_threshold(&self) -> f64 {
        self.threshold.unwrap_or_else(|| self.layout().default_threshold())
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.window == 0 {
            problems.push("window must be at least 1".to_string());
        }
        if self.channels == 0 {
            problems.push("channels must be positive".into());
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.kernel_h % 2 == 0 || self.kernel_w % 2 == 0 {
            problems.push(format!(
                "kernel dims must be odd and positive, got {}x{}",
                self.kernel_h, self.kernel_w
            ));
        }
        for (i, &p) in self.ra_positions.iter().enumerate() {
            if p == 0 || p > self.n_res_blocks {
                problems.push(format!("ra position {p} outside [1, {}]", self.n_res_blocks));
            }
            if i > 0 && p <= self.ra_positions[i - 1] {
                problems.push("ra positions must be strictly increasing".into());
            }
        }
        if self.skip_after_ra > self.ra_positions.len() {
            problems.push(format!(
                "skip_after_ra {} exceeds the {} RA blocks",
                self.skip_after_ra,
                self.ra_positions.len()
            ));
        }
        if self.baseline && !self.ra_positions.is_empty() {
            problems.push("the tKPCN baseline has no RA blocks".into());
        }
        if !self.ra_positions.is_empty() && self.frames() < 3 {
            problems.push("RA blocks need at least 3 frames".into());
        }
        if problems.is_empty() {
            if let Some(t) = self.threshold {
                if let Err(e) = validate_threshold(&self.layout(), t) {
                    problems.push(e.to_string());
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
}

#[derive(Clone, Copy, Debug)]
struct ConvIdx {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Topology {
    embed: ConvIdx,
    blocks: Vec<(ConvIdx, ConvIdx)>,
    ra: Vec<(ConvIdx, ConvIdx)>,
    fusion: Option<(ConvIdx, ConvIdx)>,
    head: ConvIdx,
}

/// Parameter names and shapes in storage order, plus where each layer lives.
fn topology(cfg: &ModelConfig) -> (Topology, Vec<(String, Vec<usize>)>) {
    let c = cfg.channels;
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    let mut conv = |name: String, o: usize, i: usize, k: usize| {
        specs.push((format!("{name}.weight"), vec![o, i, k, k]));
        specs.push((format!("{name}.bias"), vec![o]));
        ConvIdx {
            weight: specs.len() - 2,
            bias: specs.len() - 1,
        }
    };
    let embed = conv("embed".into(), c, INPUT_CHANNELS, 3);
    let blocks = (1..=cfg.n_res_blocks)
        .map(|b| (conv(format!("block{b}.conv1"), c, c, 3), conv(format!("block{b}.conv2"), c, c, 3)))
        .collect();
    let ra = (1..=cfg.ra_positions.len())
        .map(|r| (conv(format!("ra{r}.conv1"), c, 2 * c, 3), conv(format!("ra{r}.conv2"), 1, c, 1)))
        .collect();
    let fusion = cfg.baseline.then(|| {
        (
            conv("fusion.conv1".into(), c, cfg.frames() * c, 3),
            conv("fusion.conv2".into(), c, c, 3),
        )
    });
    let head = conv("head".into(), cfg.taps(), c, 3);
    (
        Topology {
            embed,
            blocks,
            ra,
            fusion,
            head,
        },
        specs,
    )
}

/// Kernel-predicting denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    config: ModelConfig,
    params: Vec<Param<S>>,
    topo_cache: TopologyCache,
}

// Topology is a pure function of the config; cached to avoid rebuilding the
// name table on every forward.
#[derive(Clone, Debug)]
struct TopologyCache(Topology);

impl PartialEq for TopologyCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// Graph handles produced by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// Raw kernel weights `[K, H, W]`.
    pub raw: Var,
    /// Normalized kernels `[K, H, W]`.
    pub kernels: Var,
    pub fallback: FallbackMask,
    /// Denoised central color `[3, H, W]`.
    pub denoised: Var,
    /// Set when a 3-frame window forced plain-mean averaging in RA blocks.
    pub mean_fallback: bool,
}

/// Inference overrides.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ForwardOptions {
    pub threshold: Option<f64>,
    pub normalization: Option<KernelNorm>,
}

/// Plain-tensor result of [`Model::infer`].
#[derive(Clone, Debug)]
pub struct Inference<S> {
    pub raw: Tensor<S>,
    pub kernels: KernelField<S>,
    pub denoised: Tensor<S>,
}

impl<S: Scalar> Model<S> {
    /// He-initialized conv weights, zero biases, RA weight heads biased to
    /// `sigmoid(-2)`. The kernel head is scaled to the `1/K` range with bias
    /// `1/K`, so the threshold acts on raw weights of the right magnitude.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (topo, specs) = topology(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inv_k = 1.0 / config.taps() as f64;
        let mut params: Vec<Param<S>> = specs
            .into_iter()
            .map(|(name, shape)| {
                let value = if shape.len() == 4 {
                    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                    let mut std = (2.0 / fan_in).sqrt();
                    if name.starts_with("head.") {
                        std *= inv_k;
                    }
                    let normal = Normal::new(0.0, std).expect("finite std");
                    Tensor::from_fn(shape, |_| S::of(normal.sample(&mut rng)))
                } else {
                    Tensor::zeros(shape)
                };
                Param { name, value }
            })
            .collect();
        for (_, c2) in &topo.ra {
            params[c2.bias].value.data_mut().fill(S::of(RA_INIT_BIAS));
        }
        params[topo.head.bias].value.data_mut().fill(S::of(inv_k));
        Ok(Self {
            config,
            params,
            topo_cache: TopologyCache(topo),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> KernelLayout {
        self.config.layout()
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_threshold(&mut self, t: Option<f64>) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.threshold = t;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            topo_cache: self.topo_cache.clone(),
        }
    }

    /// Sets every RA weight-head output bias (and zeroes its weights), so the
    /// blend weight is the constant `sigmoid(bias)`.
    pub fn set_ra_bias(&mut self, bias: f64) {
        for (_, c2) in self.topo_cache.0.ra.clone() {
            self.params[c2.weight].value.data_mut().fill(S::zero());
            self.params[c2.bias].value.data_mut().fill(S::of(bias));
        }
    }

    /// Makes the head emit the identity kernel everywhere.
    pub fn set_identity_head(&mut self) {
        let head = self.topo_cache.0.head;
        let id = self.layout().identity_channel();
        self.params[head.weight].value.data_mut().fill(S::zero());
        let b = self.params[head.bias].value.data_mut();
        b.fill(S::zero());
        b[id] = S::one();
    }

    /// Records the parameters on `tape`, as trainable leaves or constants.
    pub fn record(&self, tape: &mut Tape<S>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Builds the graph for one window `input [T, 10, H, W]`.
    pub fn forward(&self, tape: &mut Tape<S>, vars: &[Var], input: Var, opts: ForwardOptions) -> Result<Forward> {
        let cfg = &self.config;
        let topo = &self.topo_cache.0;
        if vars.len() != self.params.len() {
            return Err(Error::Invalid(format!(
                "expected {} parameter handles, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        let shape = tape.shape(input).to_vec();
        let t = cfg.frames();
        if shape.len() != 4 || shape[0] != t || shape[1] != INPUT_CHANNELS {
            return Err(Error::Shape {
                op: "model forward",
                expected: vec![t, INPUT_CHANNELS, 0, 0],
                got: shape,
            });
        }
        let (h, w) = (shape[2], shape[3]);
        let conv = |tape: &mut Tape<S>, x: Var, c: ConvIdx| tape.conv2d(x, vars[c.weight], Some(vars[c.bias]));

        let embedded = conv(tape, input, topo.embed)?;
        let mut x = embedded;
        let mut ra_done = 0;
        let mut mean_fallback = false;
        let opts_ra = RaOptions {
            allow_mean_fallback: true,
        };
        for (b, &(c1, c2)) in topo.blocks.iter().enumerate() {
            let y = tape.leaky_relu(x);
            let y = conv(tape, y, c1)?;
            let y = tape.leaky_relu(y);
            let y = conv(tape, y, c2)?;
            x = tape.add(x, y)?;
            if cfg.ra_positions.get(ra_done) == Some(&(b + 1)) {
                let (c1, c2) = topo.ra[ra_done];
                let head = crate::ra::RaHeadVars {
                    w1: vars[c1.weight],
                    b1: vars[c1.bias],
                    w2: vars[c2.weight],
                    b2: vars[c2.bias],
                };
                let (out, averaging) = ra_block(tape, x, &head, opts_ra)?;
                mean_fallback |= averaging == Averaging::MeanFallback;
                x = out;
                if ra_done < cfg.skip_after_ra {
                    x = tape.add(x, embedded)?;
                }
                ra_done += 1;
            }
        }

        let c = cfg.channels;
        let feat = match topo.fusion {
            Some((f1, f2)) => {
                let all = tape.reshape(x, &[1, t * c, h, w])?;
                let y = tape.leaky_relu(all);
                let y = conv(tape, y, f1)?;
                let y = tape.leaky_relu(y);
                conv(tape, y, f2)?
            }
            None => tape.slice(x, 0, cfg.window, cfg.window + 1)?,
        };
        let feat = tape.leaky_relu(feat);
        let raw = conv(tape, feat, topo.head)?;
        let raw = tape.reshape(raw, &[cfg.taps(), h, w])?;

        let layout = self.layout();
        let (kernels, fallback) = match opts.normalization.unwrap_or(cfg.normalization) {
            KernelNorm::Threshold => {
                let th = opts.threshold.unwrap_or_else(|| cfg.effective_threshold());
                threshold_normalize_var(tape, raw, &layout, th)?
            }
            KernelNorm::Softmax => (softmax_normalize_var(tape, raw, &layout)?, vec![false; h * w]),
        };
        let color = tape.slice(input, 1, 0, COLOR_CHANNELS)?;
        let denoised = apply_kernels_var(tape, kernels, &layout, color)?;
        Ok(Forward {
            raw,
            kernels,
            fallback,
            denoised,
            mean_fallback,
        })
    }

    /// Gradient-free forward on plain tensors.
    pub fn infer(&self, input: &Tensor<S>, opts: ForwardOptions) -> Result<Inference<S>> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false);
        let x = tape.constant(input.clone());
        let f = self.forward(&mut tape, &vars, x, opts)?;
        Ok(Inference {
            raw: tape.value(f.raw).clone(),
            kernels: KernelField {
                weights: tape.value(f.kernels).clone(),
                layout: self.layout(),
                fallback: f.fallback,
            },
            denoised: tape.value(f.denoised).clone(),
        })
    }

    /// Writes `model.json` and `params.rtf` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = ModelFile {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            config: self.config.clone(),
            param_count: self.param_count(),
        };
        let json = serde_json::to_string_pretty(&meta)?;
        let json_path = dir.join("model.json");
        fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
        let rtf_path = dir.join("params.rtf");
        rtf::save_all(&rtf_path, self.params.iter().map(|p| (p.name.as_str(), &p.value)))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let json_path = dir.join("model.json");
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let meta: ModelFile = serde_json::from_str(&text)?;
        if meta.format != FORMAT_NAME || meta.version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {} v{} (expected {FORMAT_NAME} v{FORMAT_VERSION})",
                meta.format, meta.version
            )));
        }
        meta.config.validate()?;
        let (topo, specs) = topology(&meta.config);
        let records = rtf::load_all(dir.join("params.rtf"))?;
        if records.len() != specs.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, config expects {}",
                records.len(),
                specs.len()
            )));
        }
        let params = records
            .into_iter()
            .zip(specs)
            .map(|(rec, (name, shape))| {
                if rec.name != name || rec.tensor.shape() != shape.as_slice() {
                    return Err(Error::Config(format!(
                        "checkpoint tensor {} {:?} does not match expected {name} {shape:?}",
                        rec.name,
                        rec.tensor.shape()
                    )));
                }
                Ok(Param {
                    name,
                    value: rec.tensor.into_tensor(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: meta.config,
            params,
            topo_cache: TopologyCache(topo),
        })
    }

    /// Errors unless the checkpoint's kernel dims equal `kh × kw`.
    pub fn expect_kernel(&self, kh: usize, kw: usize) -> Result<()> {
        if (self.config.kernel_h, self.config.kernel_w) != (kh, kw) {
            return Err(Error::Config(format!(
                "checkpoint predicts {}x{} kernels, {kh}x{kw} requested",
                self.config.kernel_h, self.config.kernel_w
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    config: ModelConfig,
    param_count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(t: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.5, 0.3).unwrap();
        Tensor::from_fn([t, INPUT_CHANNELS, h, w], |_| n.sample(&mut rng))
    }

    #[test]
    fn presets_validate() {
        for name in ["desk-tiny", "desk", "paper"] {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("huge").is_err());
        ModelConfig::desk_tiny().to_tkpcn().validate().unwrap();
    }

    #[test]
    fn invalid_configs_name_the_violation() {
        let mut c = ModelConfig::desk_tiny();
        c.ra_positions = vec![2, 9];
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("ra position 9"), "{e}");
        let mut c = ModelConfig::desk_tiny();
        c.kernel_h = 4;
        assert!(c.validate().unwrap_err().to_string().contains("odd"));
        let mut c = ModelConfig::desk_tiny();
        c.threshold = Some(1.0 / 45.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let a = Model::<f32>::build(ModelConfig::desk_tiny(), 7).unwrap();
        let b = Model::<f32>::build(ModelConfig::desk_tiny(), 7).unwrap();
        let c = Model::<f32>::build(ModelConfig::desk_tiny(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn paper_topology_parameter_count_is_in_the_millions() {
        let n = Model::<f32>::build(ModelConfig::paper(), 0).unwrap().param_count();
        assert!((1_000_000..100_000_000).contains(&n), "{n}");
    }

    #[test]
    fn forward_shapes_and_normalization() {
        let model = Model::<f64>::build(ModelConfig::desk_tiny(), 1).unwrap();
        let out = model.infer(&random_input(5, 6, 7, 3), ForwardOptions::default()).unwrap();
        assert_eq!(out.denoised.shape(), &[3, 6, 7]);
        assert_eq!(out.kernels.weights.shape(), &[45, 6, 7]);
        let hw = 42;
        for p in 0..hw {
            let s: f64 = (0..45).map(|j| out.kernels.weights.data()[j * hw + p]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let wrong = random_input(3, 6, 7, 3);
        assert!(model.infer(&wrong, ForwardOptions::default()).is_err());
    }

    #[test]
    fn spatial_only_and_tkpcn_forward() {
        let mut cfg = ModelConfig::desk_tiny();
        cfg.ra_positions.clear();
        cfg.skip_after_ra = 0;
        let m = Model::<f64>::build(cfg.clone(), 2).unwrap();
        assert!(m.params().iter().all(|p| !p.name.starts_with("ra")));
        m.infer(&random_input(5, 4, 4, 1), ForwardOptions::default()).unwrap();
        let tk = Model::<f64>::build(cfg.to_tkpcn(), 2).unwrap();
        assert!(tk.params().iter().any(|p| p.name.starts_with("fusion")));
        tk.infer(&random_input(5, 4, 4, 1), ForwardOptions::default()).unwrap();
    }

    #[test]
    fn identity_override_passes_center_through() {
        let mut model = Model::<f64>::build(ModelConfig::desk_tiny(), 4).unwrap();
        model.set_ra_bias(-20.0);
        model.set_identity_head();
        let x = random_input(5, 5, 5, 9);
        let out = model.infer(&x, ForwardOptions::default()).unwrap();
        let center = x.index0(2);
        for c in 0..3 {
            for p in 0..25 {
                assert_eq!(out.denoised.data()[c * 25 + p], center.data()[c * 25 + p]);
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::<f32>::build(ModelConfig::desk_tiny(), 5).unwrap();
        model.save(dir.path()).unwrap();
        let back = Model::<f32>::load(dir.path()).unwrap();
        assert_eq!(model, back);
        assert!(back.expect_kernel(5, 5).is_err());
        back.expect_kernel(3, 3).unwrap();

        let p = dir.path().join("params.rtf");
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, bytes).unwrap();
        assert!(Model::<f32>::load(dir.path()).is_err());
    }
}
