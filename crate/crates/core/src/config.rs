//! Flat `key = value` pipeline configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::aggregate::Summary;
use crate::audio::PIPELINE_RATE;
use crate::error::{Error, Result};
use crate::model::{parse_levels, LevelIndex, ModelSpec, Scale};
use crate::trainer::{Precision, TrainConfig};

/// Everything a pipeline run needs besides the manifest.
///
/// Keys prefixed `dcnn.` and `clf.` address the two [`TrainConfig`] blocks.
/// Lines starting with `#` and blank lines are ignored; later lines win.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub sample_rate: u32,
    /// Kept sorted and deduplicated.
    pub scales: Vec<Scale>,
    pub levels: Vec<LevelIndex>,
    pub channels: usize,
    pub summary: Summary,
    pub seed: u64,
    pub runs: usize,
    /// Retrain the sample-level networks in every evaluation run instead of
    /// only the song classifier.
    pub retrain_dcnn: bool,
    pub dcnn: TrainConfig,
    pub clf: TrainConfig,
    pub clf_hidden: Vec<usize>,
    pub clf_dropout: f64,
    pub checkpoint_dir: PathBuf,
    pub feature_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sample_rate: PIPELINE_RATE,
            scales: vec![Scale::new(2, 4).expect("valid"), Scale::new(3, 3).expect("valid")],
            levels: LevelIndex::ALL.to_vec(),
            channels: ModelSpec::DEFAULT_CHANNELS,
            summary: Summary::Mean,
            seed: 0,
            runs: 10,
            retrain_dcnn: false,
            dcnn: TrainConfig::default(),
            clf: TrainConfig::default(),
            clf_hidden: vec![512],
            clf_dropout: 0.5,
            checkpoint_dir: PathBuf::from("checkpoints"),
            feature_dir: PathBuf::from("features"),
            report_dir: PathBuf::from("reports"),
        }
    }
}

fn value<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value {v:?} for {key}"))),
    }
}

fn parse_precision(key: &str, v: &str) -> Result<Precision> {
    match v {
        "32" | "f32" => Ok(Precision::F32),
        "64" | "f64" => Ok(Precision::F64),
        _ => Err(Error::Config(format!("bad value {v:?} for {key}"))),
    }
}

fn precision_str(p: Precision) -> &'static str {
    match p {
        Precision::F32 => "32",
        Precision::F64 => "64",
    }
}

pub fn parse_scales(s: &str) -> Result<Vec<Scale>> {
    let mut v = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Scale>>>()?;
    v.sort();
    v.dedup();
    if v.is_empty() {
        return Err(Error::Config("empty scale list".into()));
    }
    Ok(v)
}

fn join<D: std::fmt::Display>(items: &[D]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn apply_train(t: &mut TrainConfig, key: &str, field: &str, v: &str) -> Result<()> {
    match field {
        "lr" => t.lr = value(key, v)?,
        "momentum" => t.momentum = value(key, v)?,
        "nesterov" => t.nesterov = parse_bool(key, v)?,
        "batch_size" => t.batch_size = value(key, v)?,
        "lr_drop_factor" => t.lr_drop_factor = value(key, v)?,
        "patience" => t.patience = value(key, v)?,
        "max_lr_drops" => t.max_lr_drops = value(key, v)?,
        "max_epochs" => t.max_epochs = value(key, v)?,
        "max_steps" => {
            t.max_steps = match v {
                "none" | "" => None,
                _ => Some(value(key, v)?),
            }
        }
        "segments_per_clip" => t.segments_per_clip = value(key, v)?,
        "precision" => t.precision = parse_precision(key, v)?,
        _ => return Err(Error::Config(format!("unknown key {key}"))),
    }
    Ok(())
}

fn write_train(s: &mut String, prefix: &str, t: &TrainConfig) {
    let _ = writeln!(s, "{prefix}.lr = {}", t.lr);
    let _ = writeln!(s, "{prefix}.momentum = {}", t.momentum);
    let _ = writeln!(s, "{prefix}.nesterov = {}", t.nesterov);
    let _ = writeln!(s, "{prefix}.batch_size = {}", t.batch_size);
    let _ = writeln!(s, "{prefix}.lr_drop_factor = {}", t.lr_drop_factor);
    let _ = writeln!(s, "{prefix}.patience = {}", t.patience);
    let _ = writeln!(s, "{prefix}.max_lr_drops = {}", t.max_lr_drops);
    let _ = writeln!(s, "{prefix}.max_epochs = {}", t.max_epochs);
    let steps = t.max_steps.map_or_else(|| "none".to_string(), |n| n.to_string());
    let _ = writeln!(s, "{prefix}.max_steps = {steps}");
    let _ = writeln!(s, "{prefix}.segments_per_clip = {}", t.segments_per_clip);
    let _ = writeln!(s, "{prefix}.precision = {}", precision_str(t.precision));
}

impl PipelineConfig {
    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let key = key.trim();
        let v = v.trim();
        match key {
            "sample_rate" => self.sample_rate = value(key, v)?,
            "scales" => self.scales = parse_scales(v)?,
            "levels" => self.levels = parse_levels(v)?,
            "channels" => self.channels = value(key, v)?,
            "summary" => self.summary = v.parse()?,
            "seed" => self.seed = value(key, v)?,
            "runs" => self.runs = value(key, v)?,
            "retrain_dcnn" => self.retrain_dcnn = parse_bool(key, v)?,
            "clf.hidden" => {
                self.clf_hidden = match v {
                    "none" | "" => Vec::new(),
                    _ => v.split(',').map(|h| value(key, h.trim())).collect::<Result<_>>()?,
                }
            }
            "clf.dropout" => self.clf_dropout = value(key, v)?,
            "checkpoint_dir" => self.checkpoint_dir = PathBuf::from(v),
            "feature_dir" => self.feature_dir = PathBuf::from(v),
            "report_dir" => self.report_dir = PathBuf::from(v),
            _ => {
                if let Some(f) = key.strip_prefix("dcnn.") {
                    apply_train(&mut self.dcnn, key, f, v)?;
                } else if let Some(f) = key.strip_prefix("clf.") {
                    apply_train(&mut self.clf, key, f, v)?;
                } else {
                    return Err(Error::Config(format!("unknown key {key}")));
                }
            }
        }
        Ok(())
    }

    /// Applies `key=value` (or `key = value`) assignments in order.
    pub fn set_all<'a>(&mut self, assignments: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for a in assignments {
            let (k, v) = a
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {a:?}")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            cfg.set_all([line])
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be >= 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if self.scales.is_empty() || self.levels.is_empty() {
            return Err(Error::Config("scales and levels must be nonempty".into()));
        }
        if self.clf_hidden.contains(&0) {
            return Err(Error::Config("clf.hidden widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.clf_dropout) {
            return Err(Error::Config("clf.dropout must be in [0, 1)".into()));
        }
        self.dcnn.validate()?;
        self.clf.validate()
    }

    /// Canonical text form, reparseable to an equal value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sample_rate = {}", self.sample_rate);
        let _ = writeln!(s, "scales = {}", join(&self.scales));
        let _ = writeln!(s, "levels = {}", join(&self.levels));
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "summary = {}", self.summary);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "runs = {}", self.runs);
        let _ = writeln!(s, "retrain_dcnn = {}", self.retrain_dcnn);
        write_train(&mut s, "dcnn", &self.dcnn);
        write_train(&mut s, "clf", &self.clf);
        let hidden = if self.clf_hidden.is_empty() {
            "none".to_string()
        } else {
            join(&self.clf_hidden)
        };
        let _ = writeln!(s, "clf.hidden = {hidden}");
        let _ = writeln!(s, "clf.dropout = {}", self.clf_dropout);
        let _ = writeln!(s, "checkpoint_dir = {}", self.checkpoint_dir.display());
        let _ = writeln!(s, "feature_dir = {}", self.feature_dir.display());
        let _ = writeln!(s, "report_dir = {}", self.report_dir.display());
        s
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }
}

pub const EFFECTIVE_CONFIG: &str = "effective_config.txt";
