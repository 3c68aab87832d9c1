//! On-disk datasets and frame sequences.
//!
//! A dataset directory holds `manifest.json` and one `sample_NNNNN/`
//! subdirectory per (tiled) sample with `input.rtf`, `target.rtf`,
//! `ground_truth.rtf` and `sample.json`. A sequence directory holds
//! `sequence.json` and one multi-record `frame_NNNN.rtf` per frame.

use std::fs;
use std::path::{Path, PathBuf};

use ravg_tensor::{rtf, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{FrameData, SampleMeta, TrainSample};
use crate::warp::Flow;

pub const DATASET_FORMAT: &str = "ravg-dataset";
pub const SEQUENCE_FORMAT: &str = "ravg-sequence";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TILE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dir: String,
    pub scene: String,
    pub center: usize,
    pub pair: String,
    pub seed: u64,
    #[serde(default)]
    pub tile: Option<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub count: usize,
    pub samples: Vec<ManifestEntry>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Non-overlapping `tile × tile` crops covering as much of the sample as fits.
/// Samples no larger than the tile are kept whole.
pub fn tile_sample(sample: &TrainSample, tile: usize) -> Result<Vec<TrainSample>> {
    let s = sample.input.shape();
    let (h, w) = (s[2], s[3]);
    if tile == 0 {
        return Err(Error::Config("tile size must be positive".into()));
    }
    if h <= tile && w <= tile {
        return Ok(vec![sample.clone()]);
    }
    let (th, tw) = (tile.min(h), tile.min(w));
    let mut out = Vec::new();
    for ty in 0..h / th {
        for tx in 0..w / tw {
            out.push(sample.crop(ty * th, tx * tw, th, tw)?);
        }
    }
    Ok(out)
}

/// Writes samples (tiled when `tile` is set) and the manifest. Returns the
/// number of records written.
pub fn dataset_write(samples: &[TrainSample], dir: impl AsRef<Path>, tile: Option<usize>) -> Result<usize> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for s in samples {
        let parts = match tile {
            Some(t) => tile_sample(s, t)?,
            None => vec![s.clone()],
        };
        for part in parts {
            let name = format!("sample_{:05}", entries.len());
            let sub = dir.join(&name);
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            rtf::save(sub.join("input.rtf"), "input", &part.input)?;
            rtf::save(sub.join("target.rtf"), "target", &part.target)?;
            rtf::save(sub.join("ground_truth.rtf"), "ground_truth", &part.ground_truth)?;
            write_json(&sub.join("sample.json"), &part.meta)?;
            entries.push(ManifestEntry {
                dir: name,
                scene: part.meta.scene.clone(),
                center: part.meta.center,
                pair: part.meta.pair.label(),
                seed: part.meta.seed,
                tile: part.meta.tile,
            });
        }
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        count: entries.len(),
        samples: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest.count)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join("manifest.json");
    if !path.exists() {
        return Err(Error::Data(format!("missing manifest {}", path.display())));
    }
    let m: Manifest = read_json(&path)?;
    if m.format != DATASET_FORMAT || m.version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported dataset format {} v{}",
            path.display(),
            m.format,
            m.version
        )));
    }
    if m.count != m.samples.len() {
        return Err(Error::Data(format!(
            "{}: count {} disagrees with {} listed samples",
            path.display(),
            m.count,
            m.samples.len()
        )));
    }
    Ok(m)
}

fn load_named(path: PathBuf, name: &str) -> Result<Tensor<f32>> {
    let (got, t) = rtf::load::<f32>(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if got != name {
        return Err(Error::Data(format!("{}: expected record {name:?}, found {got:?}", path.display())));
    }
    Ok(t)
}

pub fn dataset_read(dir: impl AsRef<Path>) -> Result<Vec<TrainSample>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    manifest
        .samples
        .iter()
        .map(|e| {
            let sub = dir.join(&e.dir);
            let meta: SampleMeta = read_json(&sub.join("sample.json"))?;
            Ok(TrainSample {
                input: load_named(sub.join("input.rtf"), "input")?,
                target: load_named(sub.join("target.rtf"), "target")?,
                ground_truth: load_named(sub.join("ground_truth.rtf"), "ground_truth")?,
                meta,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceInfo {
    pub format: String,
    pub version: u32,
    pub scene: String,
    pub frames: usize,
    pub window: usize,
    pub spp: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

/// Writes rendered frames as a sequence directory.
pub fn write_sequence(frames: &[FrameData], dir: impl AsRef<Path>, scene: &str, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    let first = frames.first().ok_or_else(|| Error::Data("empty sequence".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let k = first.window() as isize;
    for f in frames {
        let names: Vec<String> = (-k..=k).map(FrameData::flow_name).collect();
        let mut items: Vec<(&str, &Tensor<f32>)> = vec![
            ("rgb", &f.rgb),
            ("albedo", &f.albedo),
            ("normal", &f.normal),
            ("ground_truth", &f.ground_truth),
        ];
        for (n, fl) in names.iter().zip(&f.flows) {
            items.push((n.as_str(), fl.tensor()));
        }
        rtf::save_all(dir.join(format!("frame_{:04}.rtf", f.index)), items)?;
    }
    let info = SequenceInfo {
        format: SEQUENCE_FORMAT.into(),
        version: FORMAT_VERSION,
        scene: scene.into(),
        frames: frames.len(),
        window: first.window(),
        spp: first.spp,
        height: first.height(),
        width: first.width(),
        seed,
    };
    write_json(&dir.join("sequence.json"), &info)
}

pub fn read_sequence(dir: impl AsRef<Path>) -> Result<(SequenceInfo, Vec<FrameData>)> {
    let dir = dir.as_ref();
    let info_path = dir.join("sequence.json");
    if !info_path.exists() {
        return Err(Error::Data(format!("missing {}", info_path.display())));
    }
    let info: SequenceInfo = read_json(&info_path)?;
    if info.format != SEQUENCE_FORMAT || info.version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported sequence format {} v{}", info.format, info.version)));
    }
    let k = info.window as isize;
    let mut frames = Vec::with_capacity(info.frames);
    for i in 0..info.frames {
        let path = dir.join(format!("frame_{i:04}.rtf"));
        let recs = rtf::load_all(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let get = |name: &str| -> Result<Tensor<f32>> {
            let pos = recs
                .iter()
                .position(|r| r.name == name)
                .ok_or_else(|| Error::Data(format!("{}: missing record {name:?}", path.display())))?;
            Ok(recs[pos].tensor.clone().into_tensor())
        };
        let flows = (-k..=k)
            .map(|o| Flow::new(get(&FrameData::flow_name(o))?))
            .collect::<Result<Vec<_>>>()?;
        frames.push(FrameData {
            index: i,
            spp: info.spp,
            rgb: get("rgb")?,
            albedo: get("albedo")?,
            normal: get("normal")?,
            ground_truth: get("ground_truth")?,
            flows,
        });
    }
    Ok((info, frames))
}
