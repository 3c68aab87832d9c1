//! Sliding-window inference over a rendered sequence, with multi-pass
//! temporal extension and kernel reuse on auxiliary buffers.

use ravg_tensor::Tensor;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{apply_to_aov, frame_contributions, frame_weight_stats, FrameWeightStats, KernelField};
use crate::model::{ForwardOptions, Model};
use crate::synth::{prewarp, warp_stack, FrameData};

/// Output of [`denoise_sequence`]. Per-frame vectors are in sequence order.
#[derive(Clone, Debug)]
pub struct DenoisedSequence {
    pub frames: Vec<Tensor<f32>>,
    /// Kernels of the final pass.
    pub kernels: Vec<KernelField<f32>>,
    pub stats: Vec<FrameWeightStats>,
    /// Window slots filled by repeating an edge frame, per output frame.
    pub clamped: Vec<Vec<bool>>,
    /// Auxiliary buffer filtered with the final pass's color kernels.
    pub aov: Option<Vec<Tensor<f32>>>,
}

impl DenoisedSequence {
    /// Per-frame kernel mass images `[T, H, W]`.
    pub fn contributions(&self) -> Result<Vec<Tensor<f64>>> {
        self.kernels.iter().map(|k| frame_contributions(&k.weights, &k.layout)).collect()
    }
}

/// Denoises every frame with a window of `T` frames around it. Pass `p > 1`
/// feeds the outputs of pass `p - 1` back in as color; AOVs and flows are
/// reused unchanged.
pub fn denoise_sequence(
    model: &Model<f32>,
    frames: &[FrameData],
    passes: usize,
    opts: ForwardOptions,
    aov: Option<&[Tensor<f32>]>,
) -> Result<DenoisedSequence> {
    if frames.is_empty() {
        return Err(Error::Data("cannot denoise an empty sequence".into()));
    }
    if passes == 0 {
        return Err(Error::Config("passes must be at least 1".into()));
    }
    let k = model.config().window;
    if frames.len() < 2 * k + 1 {
        return Err(Error::Data(format!(
            "sequence has {} frames but the model window needs {}",
            frames.len(),
            2 * k + 1
        )));
    }
    if frames[0].window() < k {
        return Err(Error::Data(format!(
            "frames carry flows for ±{} but the model needs ±{k}",
            frames[0].window()
        )));
    }
    let mut colors: Option<Vec<Tensor<f32>>> = None;
    let mut last = Vec::new();
    for _ in 0..passes {
        let results = (0..frames.len())
            .into_par_iter()
            .map(|c| {
                let pre = prewarp(frames, colors.as_deref(), c, k)?;
                let out = model.infer(&pre.input, opts)?;
                Ok((out, pre.clamped))
            })
            .collect::<Result<Vec<_>>>()?;
        colors = Some(results.iter().map(|(o, _)| o.denoised.clone()).collect());
        last = results;
    }
    let aov_out = match aov {
        Some(images) => Some(
            (0..frames.len())
                .map(|c| {
                    let stack = warp_stack(frames, images, c, k)?;
                    let kf = &last[c].0.kernels;
                    apply_to_aov(&kf.weights, &kf.layout, &stack)
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let stats = last
        .iter()
        .map(|(o, _)| frame_weight_stats(&o.kernels.weights, &o.kernels.layout))
        .collect::<Result<Vec<_>>>()?;
    let (outs, clamped): (Vec<_>, Vec<_>) = last.into_iter().unzip();
    let (frames_out, kernels) = outs.into_iter().map(|o| (o.denoised, o.kernels)).unzip();
    Ok(DenoisedSequence {
        frames: frames_out,
        kernels,
        stats,
        clamped,
        aov: aov_out,
    })
}
