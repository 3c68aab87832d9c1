//! Optimization loop: seeded batch sampling, temporal loss, Adam updates with
//! global-norm clipping, a two-phase schedule, validation-based checkpoint
//! selection, and the RA-vs-tKPCN ablation harness.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ravg_tensor::{rtf, Scalar, Tape, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{frame_weight_stats, FrameWeightStats};
use crate::loss::{temporal_loss_var, LossBreakdown, LossConfig, POST_TRAIN_LAMBDA_GLOBAL};
use crate::metrics::{psnr, serialize_db, ssim, Aggregate};
use crate::model::{ForwardOptions, Model, ModelConfig, COLOR_CHANNELS};
use crate::synth::TrainSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm cap.
    pub clip_norm: f64,
    pub loss: LossConfig,
    /// Fraction of steps in the second phase.
    pub phase2_frac: f64,
    /// Adds the down-weighted global term in phase 2.
    pub post_train: bool,
    /// Validate every this many steps (and after the last step).
    pub val_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 2,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 10.0,
            loss: LossConfig::default(),
            phase2_frac: 0.2,
            post_train: true,
            val_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.val_every == 0 {
            return Err(Error::Config("steps, batch and val_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.phase2_frac) {
            return Err(Error::Config(format!("phase2_frac {} outside [0, 1]", self.phase2_frac)));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid optimizer hyperparameters".into()));
        }
        self.loss.validate()
    }

    /// Loss weights in effect during `phase` (1 or 2).
    pub fn phase_loss(&self, phase: u8) -> LossConfig {
        let mut l = self.loss;
        let temporal = l.lambda_center > 0.0 || l.lambda_pair > 0.0;
        if phase == 2 && self.post_train && temporal && l.lambda_global == 0.0 {
            l.lambda_global = POST_TRAIN_LAMBDA_GLOBAL;
        }
        l
    }

    /// Number of phase-1 steps.
    pub fn phase1_steps(&self) -> usize {
        ((self.steps as f64) * (1.0 - self.phase2_frac)).round() as usize
    }
}

/// Forward plus temporal loss for one sample; gradients when `trainable`.
pub fn sample_loss(
    model: &Model<f32>,
    sample: &TrainSample,
    loss: &LossConfig,
    trainable: bool,
) -> Result<(LossBreakdown, Option<Vec<Tensor<f32>>>)> {
    let mut tape = Tape::new();
    let vars = model.record(&mut tape, trainable);
    let input = tape.constant(sample.input.clone());
    let fwd = model.forward(&mut tape, &vars, input, ForwardOptions::default())?;
    let colors = tape.slice(input, 1, 0, COLOR_CHANNELS)?;
    let target = tape.constant(sample.target.clone());
    let tl = temporal_loss_var(&mut tape, fwd.kernels, &model.layout(), colors, target, loss)?;
    let breakdown = LossBreakdown::from_tape(&tape, &tl);
    if !trainable {
        return Ok((breakdown, None));
    }
    if !breakdown.total.is_finite() {
        return Ok((breakdown, None));
    }
    let mut grads = tape.backward(tl.total)?;
    let g = vars
        .iter()
        .zip(model.params())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec())))
        .collect();
    Ok((breakdown, Some(g)))
}

/// Adam moments and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: usize,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn new(model: &Model<f32>) -> Self {
        let z: Vec<_> = model.params().iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self {
            step: 0,
            m: z.clone(),
            v: z,
        }
    }

    fn apply(&mut self, model: &mut Model<f32>, grads: &[Tensor<f32>], cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let lr = (cfg.learning_rate * bc2.sqrt() / bc1) as f32;
        let eps = (cfg.adam_eps * bc2.sqrt()) as f32;
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i].data()[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                *w -= lr * m[j] / (v[j].sqrt() + eps);
            }
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let names: Vec<String> = (0..self.m.len()).flat_map(|i| [format!("m{i}"), format!("v{i}")]).collect();
        let tensors: Vec<&Tensor<f32>> = self.m.iter().zip(&self.v).flat_map(|(m, v)| [m, v]).collect();
        rtf::save_all(dir.join("optimizer.rtf"), names.iter().map(|s| s.as_str()).zip(tensors))?;
        let path = dir.join("trainer.json");
        let text = serde_json::to_string_pretty(&serde_json::json!({ "step": self.step }))? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, model: &Model<f32>) -> Result<Self> {
        let path = dir.join("trainer.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: serde_json::Value = serde_json::from_str(&text)?;
        let step = meta["step"]
            .as_u64()
            .ok_or_else(|| Error::Data(format!("{}: missing step", path.display())))? as usize;
        let recs = rtf::load_all(dir.join("optimizer.rtf"))?;
        if recs.len() != 2 * model.params().len() {
            return Err(Error::Data("optimizer state does not match the model".into()));
        }
        let mut it = recs.into_iter().map(|r| r.tensor.into_tensor::<f32>());
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for p in model.params() {
            let (a, b) = (it.next().expect("len checked"), it.next().expect("len checked"));
            if a.shape() != p.value.shape() || b.shape() != p.value.shape() {
                return Err(Error::Data(format!("optimizer state shape mismatch for {}", p.name)));
            }
            m.push(a);
            v.push(b);
        }
        Ok(Self { step, m, v })
    }
}

fn global_norm(grads: &[Tensor<f32>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: u8,
    pub loss: f64,
    pub terms: Vec<(String, f64)>,
    pub grad_norm: f64,
    pub batch: Vec<usize>,
}

/// Aggregated validation metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub step: usize,
    /// Mean temporal loss with the phase-1 weights.
    pub loss: f64,
    /// Denoised vs the sample's reference.
    pub psnr: Aggregate,
    pub ssim: Aggregate,
    /// Denoised and noisy input vs the analytic ground truth.
    pub psnr_gt: Aggregate,
    pub ssim_gt: Aggregate,
    pub input_psnr_gt: Aggregate,
    pub input_ssim_gt: Aggregate,
    pub frame_weights: FrameWeightStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestCheckpoint {
    pub step: usize,
    #[serde(serialize_with = "serialize_db")]
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub validations: Vec<ValidationReport>,
    pub best: Option<BestCheckpoint>,
}

/// Evaluates `model` on every sample.
pub fn validate(model: &Model<f32>, samples: &[TrainSample], loss: &LossConfig, step: usize) -> Result<ValidationReport> {
    if samples.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    struct One {
        loss: f64,
        psnr: f64,
        ssim: f64,
        psnr_gt: f64,
        ssim_gt: f64,
        in_psnr: f64,
        in_ssim: f64,
        stats: FrameWeightStats,
    }
    let rows = samples
        .par_iter()
        .map(|s| {
            let (lb, _) = sample_loss(model, s, loss, false)?;
            let out = model.infer(&s.input, ForwardOptions::default())?;
            let noisy = s.center_color();
            Ok(One {
                loss: lb.total,
                psnr: psnr(&out.denoised, &s.target, 1.0)?,
                ssim: ssim(&out.denoised, &s.target)?,
                psnr_gt: psnr(&out.denoised, &s.ground_truth, 1.0)?,
                ssim_gt: ssim(&out.denoised, &s.ground_truth)?,
                in_psnr: psnr(&noisy, &s.ground_truth, 1.0)?,
                in_ssim: ssim(&noisy, &s.ground_truth)?,
                stats: frame_weight_stats(&out.kernels.weights, &out.kernels.layout)?,
            })
        })
        .collect::<Result<Vec<One>>>()?;
    let agg = |f: fn(&One) -> f64| Aggregate::of(&rows.iter().map(f).collect::<Vec<_>>()).expect("non-empty");
    let stats: Vec<FrameWeightStats> = rows.iter().map(|r| r.stats.clone()).collect();
    Ok(ValidationReport {
        step,
        loss: rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64,
        psnr: agg(|r| r.psnr),
        ssim: agg(|r| r.ssim),
        psnr_gt: agg(|r| r.psnr_gt),
        ssim_gt: agg(|r| r.ssim_gt),
        input_psnr_gt: agg(|r| r.in_psnr),
        input_ssim_gt: agg(|r| r.in_ssim),
        frame_weights: FrameWeightStats::mean_of(&stats).expect("non-empty"),
    })
}

/// Where a run writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn best(&self) -> PathBuf {
        self.root.join("best")
    }
    pub fn last(&self) -> PathBuf {
        self.root.join("last")
    }
    pub fn step_log(&self) -> PathBuf {
        self.root.join("train_log.jsonl")
    }
    pub fn val_log(&self) -> PathBuf {
        self.root.join("validation.jsonl")
    }
}

/// Result of [`train`]: the best-validation model, the final model and the log.
pub struct TrainOutcome {
    pub best: Model<f32>,
    pub last: Model<f32>,
    pub optimizer: AdamState,
    pub log: TrainLog,
}

fn write_line(w: &mut Option<BufWriter<File>>, value: &impl Serialize) -> Result<()> {
    if let Some(w) = w {
        let line = serde_json::to_string(value)?;
        writeln!(w, "{line}").map_err(|e| Error::io("log", e))?;
    }
    Ok(())
}

fn open_log(path: Option<PathBuf>, append: bool) -> Result<Option<BufWriter<File>>> {
    path.map(|p| {
        let f = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        Ok(BufWriter::new(f))
    })
    .transpose()
}

/// Runs the two-phase schedule for `cfg.steps` steps, continuing from
/// `resume` when given. Batches are drawn with replacement from a stream
/// seeded by `cfg.seed` and the optimizer step; per-sample gradients are
/// reduced in batch order.
pub fn train(
    model: Model<f32>,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
    out: Option<&RunDir>,
    resume: Option<AdamState>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let t = model.config().frames();
    if let Some(s) = train_set.iter().chain(val_set).find(|s| s.frames() != t) {
        return Err(Error::Data(format!(
            "sample has {} frames but the model expects {t}",
            s.frames()
        )));
    }
    let resumed = resume.is_some();
    let mut opt = resume.unwrap_or_else(|| AdamState::new(&model));
    let start = opt.step;
    if let Some(o) = out {
        fs::create_dir_all(&o.root).map_err(|e| Error::io(&o.root, e))?;
    }
    let mut step_log = open_log(out.map(|o| o.step_log()), resumed)?;
    let mut val_log = open_log(out.map(|o| o.val_log()), resumed)?;

    let mut model = model;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Model<f32>)> = None;
    let phase1 = cfg.phase1_steps();
    for i in 0..cfg.steps {
        let step = start + i;
        let phase = if i < phase1 { 1 } else { 2 };
        let loss_cfg = cfg.phase_loss(phase);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(step as u64);
        let batch: Vec<usize> = (0..cfg.batch).map(|_| rng.gen_range(0..train_set.len())).collect();
        let results = batch
            .par_iter()
            .map(|&b| sample_loss(&model, &train_set[b], &loss_cfg, true))
            .collect::<Result<Vec<_>>>()?;
        let n = results.len() as f32;
        let mut loss = 0.0;
        let mut terms: Vec<(String, f64)> = Vec::new();
        let mut grads: Option<Vec<Tensor<f32>>> = None;
        for (lb, g) in results {
            let Some(g) = g.filter(|_| lb.total.is_finite()) else {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("loss {} with terms {:?}", lb.total, lb.terms),
                });
            };
            loss += lb.total / n as f64;
            for (j, (name, v)) in lb.terms.into_iter().enumerate() {
                match terms.get_mut(j) {
                    Some(t) => t.1 += v / n as f64,
                    None => terms.push((name, v / n as f64)),
                }
            }
            match grads.as_mut() {
                None => grads = Some(g.into_iter().map(|t| t.map(|v| v / n)).collect()),
                Some(acc) => {
                    for (a, t) in acc.iter_mut().zip(g) {
                        for (x, y) in a.data_mut().iter_mut().zip(t.data()) {
                            *x += y / n;
                        }
                    }
                }
            }
        }
        let mut grads = grads.expect("batch >= 1");
        let norm = global_norm(&grads);
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("gradient norm {norm}, loss terms {terms:?}"),
            });
        }
        if norm > cfg.clip_norm {
            let s = (cfg.clip_norm / norm) as f32;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        opt.apply(&mut model, &grads, cfg);
        let rec = StepRecord {
            step,
            phase,
            loss,
            terms,
            grad_norm: norm,
            batch,
        };
        write_line(&mut step_log, &rec)?;
        log.steps.push(rec);

        if (i + 1) % cfg.val_every == 0 || i + 1 == cfg.steps {
            let report = validate(&model, val_set, &cfg.phase_loss(1), step + 1)?;
            write_line(&mut val_log, &report)?;
            let better = best.as_ref().map(|(b, _)| report.loss < *b).unwrap_or(true);
            if better {
                best = Some((report.loss, model.clone()));
                log.best = Some(BestCheckpoint {
                    step: step + 1,
                    val_loss: report.loss,
                });
                if let Some(o) = out {
                    model.save(o.best())?;
                }
            }
            log.validations.push(report);
        }
    }
    if let Some(o) = out {
        model.save(o.last())?;
        opt.save(&o.last())?;
        let path = o.root.join("best.json");
        let text = serde_json::to_string_pretty(&log.best)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    for w in [&mut step_log, &mut val_log].into_iter().flatten() {
        w.flush().map_err(|e| Error::io("log", e))?;
    }
    let (_, best_model) = best.expect("at least one validation");
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        optimizer: opt,
        log,
    })
}

/// One configuration of an ablation study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub label: String,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

/// RA / tKPCN × temporal / spatial loss, in the table's row order.
pub fn ra_vs_tkpcn(base: &ModelConfig) -> Vec<AblationArm> {
    let ra = base.clone();
    let tk = base.to_tkpcn();
    vec![
        AblationArm {
            label: "RA + spatial loss".into(),
            model: ra.clone(),
            loss: LossConfig::spatial(),
        },
        AblationArm {
            label: "RA + our loss".into(),
            model: ra,
            loss: LossConfig::default(),
        },
        AblationArm {
            label: "tKPCN + spatial loss".into(),
            model: tk.clone(),
            loss: LossConfig::spatial(),
        },
        AblationArm {
            label: "tKPCN + our loss".into(),
            model: tk,
            loss: LossConfig::default(),
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub frame_weights: FrameWeightStats,
    pub psnr: Aggregate,
    pub ssim: Aggregate,
}

impl AblationRow {
    /// Mean kernel mass on non-central frames.
    pub fn off_center(&self) -> f64 {
        self.frame_weights.off_center_avg()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub steps: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Text table: two lines (avg, max) per row over offsets `-k..=k`, then
    /// PSNR/SSIM against the ground truth.
    pub fn format(&self) -> String {
        let t = self.rows.first().map(|r| r.frame_weights.avg.len()).unwrap_or(0);
        let k = (t / 2) as isize;
        let header: Vec<String> = (-k..=k).map(|o| format!("{:>8}", format!("{o:+}"))).collect();
        let mut out = format!("{:<28} {}\n", format!("frame weights ({} steps)", self.steps), header.join(" "));
        for r in &self.rows {
            out += &r.frame_weights.format_rows(&r.label);
            out.push('\n');
        }
        out.push('\n');
        for r in &self.rows {
            out += &format!(
                "{:<28} psnr {:>7.3} dB  ssim {:.4}\n",
                r.label, r.psnr.avg, r.ssim.avg
            );
        }
        out
    }
}

/// Trains each arm from the same seed for the same number of steps and
/// tabulates validation frame-weight statistics.
pub fn ablate(arms: &[AblationArm], train_set: &[TrainSample], val_set: &[TrainSample], cfg: &TrainConfig) -> Result<AblationTable> {
    if arms.len() < 2 {
        return Err(Error::Config("an ablation needs at least two configurations".into()));
    }
    let mut rows = Vec::with_capacity(arms.len());
    for arm in arms {
        let model = Model::<f32>::build(arm.model.clone(), cfg.seed)?;
        let run = TrainConfig {
            loss: arm.loss,
            post_train: false,
            ..cfg.clone()
        };
        let outcome = train(model, train_set, val_set, &run, None, None)?;
        let report = validate(&outcome.last, val_set, &arm.loss, cfg.steps)?;
        rows.push(AblationRow {
            label: arm.label.clone(),
            frame_weights: report.frame_weights,
            psnr: report.psnr_gt,
            ssim: report.ssim_gt,
        });
    }
    Ok(AblationTable { steps: cfg.steps, rows })
}

/// Mean over samples of the per-sample loss (no gradients).
pub fn mean_loss(model: &Model<f32>, samples: &[TrainSample], loss: &LossConfig) -> Result<f64> {
    let vals = samples
        .par_iter()
        .map(|s| sample_loss(model, s, loss, false).map(|(b, _)| b.total))
        .collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len().max(1) as f64)
}

#[allow(dead_code)]
fn assert_scalar<S: Scalar>() {}
