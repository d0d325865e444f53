//! Desk-scale synthetic corpus: three timbre families at seeded fundamentals.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav, PIPELINE_RATE};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestRow, Split};
use crate::model::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Sine with a few decaying harmonics.
    Harmonic,
    /// Odd harmonics at 1/k, cut below Nyquist.
    Square,
    /// White noise, one-pole low-passed in higher bands.
    Noise,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Harmonic, Family::Square, Family::Noise];

    pub fn name(self) -> &'static str {
        match self {
            Family::Harmonic => "sine",
            Family::Square => "square",
            Family::Noise => "noise",
        }
    }
}

/// Class `c` renders family `c % 3` in fundamental band `c / 3`.
pub fn class_family(class: usize) -> (Family, usize) {
    (Family::ALL[class % 3], class / 3)
}

pub fn class_name(class: usize) -> String {
    let (f, band) = class_family(class);
    if band == 0 {
        f.name().to_string()
    } else {
        format!("{}_b{band}", f.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub clips_per_class: usize,
    pub seed: u64,
    /// Each clip mixes a random nonempty subset of the classes.
    pub multi_label: bool,
    pub sample_rate: u32,
    pub min_secs: f64,
    pub max_secs: f64,
}

impl SyntheticConfig {
    pub fn new(classes: usize, clips_per_class: usize, seed: u64) -> Self {
        SyntheticConfig {
            classes,
            clips_per_class,
            seed,
            multi_label: false,
            sample_rate: PIPELINE_RATE,
            min_secs: 3.0,
            max_secs: 5.0,
        }
    }
}

/// Lower edge of a band's fundamental range; each band spans one octave
/// and consecutive bands are two octaves apart.
fn band_low(band: usize) -> f64 {
    110.0 * 4f64.powi(band as i32)
}

fn render(family: Family, band: usize, len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let nyquist = rate / 2.0;
    let lo = band_low(band);
    let f0 = rng.random_range(lo..2.0 * lo).min(nyquist * 0.45);
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    match family {
        Family::Harmonic => {
            let partials: usize = rng.random_range(2..=4);
            let amps: Vec<f64> = (1..=partials).map(|k| 0.6f64.powi(k as i32 - 1)).collect();
            let norm: f64 = amps.iter().sum();
            (0..len)
                .map(|i| {
                    let t = i as f64 / rate;
                    amps.iter()
                        .enumerate()
                        .filter(|(k, _)| (*k as f64 + 1.0) * f0 < nyquist)
                        .map(|(k, a)| a * (2.0 * PI * (k as f64 + 1.0) * f0 * t + phase).sin())
                        .sum::<f64>()
                        / norm
                })
                .collect()
        }
        Family::Square => {
            let limit = ((nyquist / f0) as usize).max(1);
            let odd: Vec<usize> = (1..=limit).step_by(2).take(15).collect();
            (0..len)
                .map(|i| {
                    let t = i as f64 / rate;
                    4.0 / PI
                        * odd
                            .iter()
                            .map(|&k| (2.0 * PI * k as f64 * f0 * t + phase).sin() / k as f64)
                            .sum::<f64>()
                        * 0.8
                })
                .collect()
        }
        Family::Noise => {
            // Smoothing grows with the band so higher bands stay distinct.
            let alpha = 1.0 / (1.0 + band as f64);
            let mut y = 0.0;
            (0..len)
                .map(|_| {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    y += alpha * (x - y);
                    y
                })
                .collect()
        }
    }
}

fn split_for(k: usize, n: usize) -> Split {
    let train = (n as f64 * 0.6).round() as usize;
    let valid = (n as f64 * 0.2).round() as usize;
    if k < train {
        Split::Train
    } else if k < train + valid {
        Split::Valid
    } else {
        Split::Test
    }
}

/// Writes `wav/<id>.wav` files and `manifest.tsv` under `out`. Splits are
/// 60/20/20, stratified per class in the single-label corpus.
pub fn make_synthetic(out: &Path, cfg: &SyntheticConfig) -> Result<DatasetManifest> {
    if cfg.classes == 0 || cfg.clips_per_class == 0 {
        return Err(Error::Config("classes and clips per class must be >= 1".into()));
    }
    if cfg.sample_rate == 0 || !(cfg.min_secs > 0.0 && cfg.max_secs >= cfg.min_secs) {
        return Err(Error::Config("bad synthetic rate or duration".into()));
    }
    let wav_dir = out.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let rate = cfg.sample_rate as f64;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.classes * cfg.clips_per_class;
    let mut rows = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let secs = if cfg.max_secs > cfg.min_secs {
            rng.random_range(cfg.min_secs..cfg.max_secs)
        } else {
            cfg.min_secs
        };
        let len = (secs * rate) as usize;
        let (id, labels, split) = if cfg.multi_label {
            let mut present: Vec<usize> = (0..cfg.classes).filter(|_| rng.random_bool(0.5)).collect();
            if present.is_empty() {
                present.push(rng.random_range(0..cfg.classes));
            }
            (format!("mix_{idx:04}"), present, split_for(idx, total))
        } else {
            let class = idx / cfg.clips_per_class;
            let k = idx % cfg.clips_per_class;
            (format!("c{class}_{k:03}"), vec![class], split_for(k, cfg.clips_per_class))
        };
        let mut mix = vec![0.0; len];
        for &c in &labels {
            let (family, band) = class_family(c);
            for (m, v) in mix.iter_mut().zip(render(family, band, len, rate, &mut rng)) {
                *m += v;
            }
        }
        let gain = rng.random_range(0.3..0.8) / labels.len() as f64;
        let samples: Vec<f32> = mix.iter().map(|v| (v * gain).clamp(-1.0, 1.0) as f32).collect();
        let rel = PathBuf::from("wav").join(format!("{id}.wav"));
        write_wav(&out.join(&rel), &samples, cfg.sample_rate)?;
        rows.push(ManifestRow {
            clip_id: id,
            path: rel,
            split,
            labels,
        });
    }
    let manifest = DatasetManifest {
        task: if cfg.multi_label {
            Task::MultiLabel
        } else {
            Task::SingleLabel
        },
        labels: (0..cfg.classes).map(class_name).collect(),
        rows,
        base_dir: out.to_path_buf(),
    };
    manifest.write(&out.join(MANIFEST_NAME))?;
    Ok(manifest)
}

pub const MANIFEST_NAME: &str = "manifest.tsv";
