use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ravg_core::dataset::{dataset_read, dataset_write, read_sequence, write_sequence};
use ravg_core::inference::denoise_sequence;
use ravg_core::kernel::FrameWeightStats;
use ravg_core::loss::LossConfig;
use ravg_core::metrics::{psnr, ssim, FrameMetrics};
use ravg_core::model::{ForwardOptions, Model, ModelConfig};
use ravg_core::synth::{derive_seed, make_sequence, random_pair, render_sequence, NoisePair, Scene, TrainSample, SCENE_PRESETS};
use ravg_core::train::{ablate, ra_vs_tkpcn, train as run_training, AdamState, RunDir, TrainConfig};
use ravg_core::Error;
use ravg_tensor::{rtf, Tensor};

use crate::args::{Ablation, DenoiseArgs, GenDataArgs, InferenceArgs, LossKind, MetricsArgs, StatsArgs, TrainArgs};
use crate::preview::{write_png, write_strip};

/// An error with its exit code: 1 usage, 2 data, 3 numeric.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            error: anyhow!(msg.into()),
        }
    }

    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Invalid(_) => 1,
            Error::NonFinite { .. } => 3,
            _ => 2,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<ravg_tensor::TensorError> for Failure {
    fn from(e: ravg_tensor::TensorError) -> Self {
        Failure::from(Error::from(e))
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::data)
}

fn create_dir(path: &Path) -> Outcome {
    fs::create_dir_all(path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::data)
}

fn json_line(value: &impl serde::Serialize) -> Outcome<String> {
    serde_json::to_string(value).map_err(Failure::data)
}

fn parse_pair(text: &str) -> Outcome<Option<NoisePair>> {
    if text == "random" {
        return Ok(None);
    }
    NoisePair::ALL
        .iter()
        .find(|p| p.label() == text)
        .map(|p| Some(*p))
        .ok_or_else(|| {
            let all: Vec<String> = NoisePair::ALL.iter().map(|p| p.label()).collect();
            Failure::usage(format!("unknown noise pair {text:?} (expected random or one of {})", all.join(", ")))
        })
}

fn load_scenes(a: &GenDataArgs) -> Outcome<Vec<Scene>> {
    let path = Path::new(&a.scene);
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::data)?;
        return Ok(vec![Scene::from_json(&text).map_err(|e| Failure::data(anyhow!("{}: {e}", path.display())))?]);
    }
    a.scene
        .split(',')
        .map(|name| {
            let name = name.trim();
            if !SCENE_PRESETS.contains(&name) {
                return Err(Failure::usage(format!(
                    "unknown scene {name:?} (expected a JSON file or one of {})",
                    SCENE_PRESETS.join(", ")
                )));
            }
            Ok(Scene::preset(name, a.width, a.height, a.frames, derive_seed(a.seed, name))?)
        })
        .collect()
}

pub fn gen_data(a: &GenDataArgs) -> Outcome {
    if a.spp == 0 {
        return Err(Failure::usage("--spp must be at least 1"));
    }
    if a.window == 0 || a.width == 0 || a.height == 0 {
        return Err(Failure::usage("--window, --width and --height must be positive"));
    }
    let pair = parse_pair(&a.pair)?;
    let scenes = load_scenes(a)?;
    let k = a.window;
    for s in &scenes {
        if s.frames < 2 * k + 1 {
            return Err(Failure::usage(format!(
                "scene {} has {} frames, a window needs {}",
                s.name,
                s.frames,
                2 * k + 1
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, "pairs"));
    let mut jobs = Vec::new();
    for scene in &scenes {
        for center in k..scene.frames - k {
            let p = pair.unwrap_or_else(|| random_pair(&mut rng));
            let seed = derive_seed(a.seed, &format!("{}/{center}", scene.name));
            jobs.push((scene, center, p, seed));
        }
    }
    let samples = jobs
        .iter()
        .map(|&(scene, center, p, seed)| make_sequence(scene, center, k, p, a.spp, seed))
        .collect::<Result<Vec<TrainSample>, Error>>()?;
    let tile = (a.tile > 0).then_some(a.tile);
    let count = dataset_write(&samples, &a.out, tile)?;
    for scene in &scenes {
        let seq_seed = derive_seed(a.seed, &format!("{}/sequence", scene.name));
        let frames = render_sequence(scene, a.spp, seq_seed, k)?;
        let dir = a.out.join("sequences").join(&scene.name);
        write_sequence(&frames, &dir, &scene.name, seq_seed)?;
        if a.png {
            for f in &frames {
                write_png(&f.rgb, &dir.join(format!("rgb_{:04}.png", f.index))).map_err(Failure::data)?;
                write_png(&f.ground_truth, &dir.join(format!("ground_truth_{:04}.png", f.index))).map_err(Failure::data)?;
            }
        }
    }
    println!("wrote {count} samples from {} windows to {}", samples.len(), a.out.display());
    Ok(())
}

fn model_config(spec: &str) -> Outcome<ModelConfig> {
    let path = Path::new(spec);
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::data)?;
        let cfg: ModelConfig = serde_json::from_str(&text).map_err(|e| Failure::data(anyhow!("{}: {e}", path.display())))?;
        cfg.validate()?;
        return Ok(cfg);
    }
    Ok(ModelConfig::preset(spec)?)
}

fn split_validation(a: &TrainArgs, data: Vec<TrainSample>) -> Outcome<(Vec<TrainSample>, Vec<TrainSample>)> {
    if let Some(dir) = &a.val {
        return Ok((data, dataset_read(dir)?));
    }
    if !(0.0..1.0).contains(&a.val_frac) || a.val_frac == 0.0 {
        return Err(Failure::usage("--val-frac must lie in (0, 1)"));
    }
    let n_val = ((data.len() as f64) * a.val_frac).ceil() as usize;
    if n_val >= data.len() {
        return Err(Failure::data(anyhow!(
            "{} samples are too few to hold out {n_val} for validation",
            data.len()
        )));
    }
    let mut data = data;
    let val = data.split_off(data.len() - n_val);
    Ok((data, val))
}

pub fn train(a: &TrainArgs) -> Outcome {
    let loss = match a.loss {
        LossKind::Temporal => LossConfig::default(),
        LossKind::Spatial => LossConfig::spatial(),
    };
    let cfg = TrainConfig {
        steps: a.steps,
        batch: a.batch,
        learning_rate: a.lr,
        loss,
        phase2_frac: a.phase2_frac,
        post_train: a.post_train,
        val_every: a.val_every,
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let model_cfg = model_config(&a.config)?;
    let data = dataset_read(&a.data)?;
    let (train_set, val_set) = split_validation(a, data)?;
    create_dir(&a.out)?;
    if a.ablate == Ablation::RaVsTkpcn {
        let table = ablate(&ra_vs_tkpcn(&model_cfg), &train_set, &val_set, &cfg)?;
        let text = table.format();
        write_text(&a.out.join("ablation.txt"), &text)?;
        let json = serde_json::to_string_pretty(&table).map_err(Failure::data)? + "\n";
        write_text(&a.out.join("ablation.json"), &json)?;
        print!("{text}");
        return Ok(());
    }
    let run = RunDir { root: a.out.clone() };
    let (model, resume) = if a.resume {
        let model = Model::<f32>::load(run.last())?;
        if model.config() != &model_cfg {
            eprintln!("note: resuming with the checkpoint's model configuration");
        }
        let opt = AdamState::load(&run.last(), &model)?;
        (model, Some(opt))
    } else {
        (Model::<f32>::build(model_cfg, a.seed)?, None)
    };
    println!(
        "training {} parameters on {} samples ({} held out)",
        model.param_count(),
        train_set.len(),
        val_set.len()
    );
    let outcome = run_training(model, &train_set, &val_set, &cfg, Some(&run), resume)?;
    if let (Some(best), Some(report)) = (&outcome.log.best, outcome.log.validations.iter().find(|v| Some(v.step) == outcome.log.best.as_ref().map(|b| b.step))) {
        println!(
            "best checkpoint at step {}: val loss {:.5}, psnr {:.3} dB (input {:.3} dB), ssim {:.4} (input {:.4})",
            best.step, best.val_loss, report.psnr_gt.avg, report.input_psnr_gt.avg, report.ssim_gt.avg, report.input_ssim_gt.avg
        );
    }
    Ok(())
}

fn parse_kernel(spec: &str) -> Outcome<Option<(usize, usize)>> {
    if spec == "auto" {
        return Ok(None);
    }
    let (h, w) = spec
        .split_once('x')
        .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)))
        .ok_or_else(|| Failure::usage(format!("--kernel expects auto or HxW, got {spec:?}")))?;
    Ok(Some((h, w)))
}

struct Loaded {
    model: Model<f32>,
    frames: Vec<ravg_core::synth::FrameData>,
    opts: ForwardOptions,
}

fn load_inference(a: &InferenceArgs) -> Outcome<Loaded> {
    let kernel = parse_kernel(&a.kernel)?;
    let model = Model::<f32>::load(&a.checkpoint).map_err(|e| match e {
        Error::Io { .. } | Error::Json(_) => Failure::data(anyhow!("loading checkpoint {}: {e}", a.checkpoint.display())),
        other => other.into(),
    })?;
    if let Some((kh, kw)) = kernel {
        model.expect_kernel(kh, kw)?;
    }
    let mut model = model;
    if let Some(t) = a.kernel_threshold {
        model.set_threshold(Some(t))?;
    }
    let (_, frames) = read_sequence(&a.input)?;
    Ok(Loaded {
        model,
        frames,
        opts: ForwardOptions::default(),
    })
}

fn read_aov(path: &Path, n: usize) -> Outcome<Vec<Tensor<f32>>> {
    let recs = rtf::load_all(path).map_err(|e| Failure::data(anyhow!("{}: {e}", path.display())))?;
    let images: Vec<Tensor<f32>> = if recs.len() == 1 && recs[0].tensor.shape().len() == 4 {
        let t: Tensor<f32> = recs.into_iter().next().expect("one record").tensor.into_tensor();
        (0..t.shape()[0]).map(|i| t.index0(i)).collect()
    } else {
        recs.into_iter().map(|r| r.tensor.into_tensor()).collect()
    };
    if images.len() != n {
        return Err(Failure::data(anyhow!(
            "{} holds {} images for a {n}-frame sequence",
            path.display(),
            images.len()
        )));
    }
    Ok(images)
}

pub fn denoise(a: &DenoiseArgs) -> Outcome {
    if a.passes == 0 {
        return Err(Failure::usage("--passes must be at least 1"));
    }
    let Loaded { model, frames, opts } = load_inference(&a.inference)?;
    let aov = a.aov.as_deref().map(|p| read_aov(p, frames.len())).transpose()?;
    let out = denoise_sequence(&model, &frames, a.passes, opts, aov.as_deref())?;
    create_dir(&a.out)?;
    let mut metrics = String::new();
    let (mut sum_in, mut sum_out) = (0.0, 0.0);
    for (i, (img, f)) in out.frames.iter().zip(&frames).enumerate() {
        rtf::save(a.out.join(format!("denoised_{i:04}.rtf")), "denoised", img)?;
        if let Some(aov) = &out.aov {
            rtf::save(a.out.join(format!("aov_{i:04}.rtf")), "aov", &aov[i])?;
        }
        if a.png {
            write_png(img, &a.out.join(format!("denoised_{i:04}.png"))).map_err(Failure::data)?;
        }
        let row = FrameMetrics {
            frame: i,
            psnr: psnr(img, &f.ground_truth, 1.0)?,
            ssim: ssim(img, &f.ground_truth).unwrap_or(f64::NAN),
            frame_weights_avg: out.stats[i].avg.clone(),
            frame_weights_max: out.stats[i].max.clone(),
        };
        sum_in += psnr(&f.rgb, &f.ground_truth, 1.0)?;
        sum_out += row.psnr;
        metrics += &json_line(&row)?;
        metrics.push('\n');
    }
    write_text(&a.out.join("metrics.jsonl"), &metrics)?;
    let n = frames.len() as f64;
    println!(
        "denoised {} frames ({} pass{}): mean psnr {:.3} dB, input {:.3} dB",
        frames.len(),
        a.passes,
        if a.passes == 1 { "" } else { "es" },
        sum_out / n,
        sum_in / n
    );
    Ok(())
}

pub fn stats(a: &StatsArgs) -> Outcome {
    let Loaded { model, frames, opts } = load_inference(&a.inference)?;
    let out = denoise_sequence(&model, &frames, 1, opts, None)?;
    create_dir(&a.out)?;
    let mut lines = String::new();
    let mut table = String::new();
    for (i, s) in out.stats.iter().enumerate() {
        lines += &json_line(&serde_json::json!({ "frame": i, "avg": s.avg, "max": s.max }))?;
        lines.push('\n');
        table += &s.format_rows(&format!("frame {i}"));
        table.push('\n');
    }
    let mean = FrameWeightStats::mean_of(&out.stats).expect("non-empty sequence");
    table += &mean.format_rows("mean");
    table.push('\n');
    write_text(&a.out.join("stats.jsonl"), &lines)?;
    write_text(&a.out.join("stats.txt"), &table)?;
    if a.contributions {
        for (i, c) in out.contributions()?.iter().enumerate() {
            rtf::save(a.out.join(format!("contrib_{i:04}.rtf")), "contributions", c)?;
            write_strip(c, &a.out.join(format!("contrib_{i:04}.png"))).map_err(Failure::data)?;
        }
    }
    print!("{table}");
    Ok(())
}

fn read_image(path: &PathBuf, record: Option<&str>) -> Outcome<Tensor<f64>> {
    let recs = rtf::load_all(path).map_err(|e| Failure::data(anyhow!("{}: {e}", path.display())))?;
    // a single-record file is used as is, whatever the record is called
    let single = recs.len() == 1;
    let rec = match record {
        Some(name) => recs.into_iter().find(|r| single || r.name == name),
        None => recs.into_iter().next(),
    }
    .ok_or_else(|| Failure::data(anyhow!("{}: no matching record", path.display())))?;
    Ok(rec.tensor.into_tensor())
}

pub fn metrics(a: &MetricsArgs) -> Outcome {
    if !(a.peak > 0.0) {
        return Err(Failure::usage("--peak must be positive"));
    }
    let x = read_image(&a.test, a.record.as_deref())?;
    let y = read_image(&a.reference, a.record.as_deref())?;
    let p = psnr(&x, &y, a.peak)?;
    let s = if a.peak == 1.0 { ssim(&x, &y)? } else { ssim(&x.map(|v| v / a.peak), &y.map(|v| v / a.peak))? };
    let row = serde_json::json!({
        "psnr": if p.is_finite() { serde_json::json!(p) } else { serde_json::json!("inf") },
        "ssim": s,
    });
    println!("{}", json_line(&row)?);
    Ok(())
}
