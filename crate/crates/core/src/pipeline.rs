//! Stage orchestration shared by the command-line tool and the tests:
//! per-scale network training, feature extraction, song classification
//! and the repeated-run evaluation protocol.

use std::fs;
use std::path::{Path, PathBuf};

use crate::aggregate::{extract_songs, FeatureFile};
use crate::audio::{decode_wav, WaveClip};
use crate::classifier::{predict_split, train_classifier, ClassifierSpec, LabeledSongs, SongClassifier};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Split};
use crate::metrics::{accuracy, macro_auc, repeat_runs, EvalReport, RunOutcome};
use crate::model::{load_checkpoint, save_checkpoint, ModelSpec, SampleCnn, Scale, Task};
use crate::scalar::Scalar;
use crate::trainer::{train_dcnn, write_train_log, TrainConfig, TrainLog};

pub const SPLITS: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

pub fn checkpoint_name(scale: Scale) -> String {
    format!("dcnn_{}_{}.ckpt", scale.m(), scale.n())
}

pub fn train_log_name(scale: Scale) -> String {
    format!("dcnn_{}_{}.log.tsv", scale.m(), scale.n())
}

pub fn feature_name(split: Split) -> String {
    format!("features_{split}.slfeat")
}

pub fn model_spec(cfg: &PipelineConfig, manifest: &DatasetManifest, scale: Scale) -> ModelSpec {
    ModelSpec {
        scale,
        channels: cfg.channels,
        num_outputs: manifest.num_labels(),
        task: manifest.task,
    }
}

fn with_seed(t: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..t.clone() }
}

pub fn train_scale<T: Scalar>(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    scale: Scale,
    seed: u64,
) -> Result<(SampleCnn<T>, TrainLog)> {
    train_dcnn(
        model_spec(cfg, manifest, scale),
        manifest,
        &with_seed(&cfg.dcnn, seed),
        cfg.sample_rate,
    )
}

/// Trains every configured scale and writes `dcnn_<m>_<n>.ckpt` plus its
/// log into `dir`.
pub fn train_scales_into<T: Scalar>(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    seed: u64,
    dir: &Path,
) -> Result<Vec<SampleCnn<T>>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut models = Vec::new();
    for &scale in &cfg.scales {
        let (model, log) = train_scale::<T>(cfg, manifest, scale, seed)?;
        save_checkpoint(&model, cfg.sample_rate, &dir.join(checkpoint_name(scale)))?;
        write_train_log(&log, &dir.join(train_log_name(scale)))?;
        models.push(model);
    }
    Ok(models)
}

/// Loads one checkpoint per configured scale from `dir`.
pub fn load_scales<T: Scalar>(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<SampleCnn<T>>> {
    let mut models = Vec::new();
    for &scale in &cfg.scales {
        let path = dir.join(checkpoint_name(scale));
        if !path.exists() {
            return Err(Error::MissingCheckpoint(format!("{scale} (expected {})", path.display())));
        }
        let (model, rate) = load_checkpoint::<T>(&path)?;
        if model.spec().scale != scale {
            return Err(Error::Config(format!(
                "{} holds a {} model, expected {scale}",
                path.display(),
                model.spec().scale
            )));
        }
        if rate != cfg.sample_rate {
            return Err(Error::Config(format!(
                "{} was trained at {rate} Hz, pipeline runs at {} Hz",
                path.display(),
                cfg.sample_rate
            )));
        }
        models.push(model);
    }
    Ok(models)
}

/// Decodes the clips of one split in manifest order, ids taken from the manifest.
pub fn load_clips(manifest: &DatasetManifest, split: Split) -> Result<Vec<WaveClip>> {
    manifest
        .split(split)
        .map(|row| {
            let mut clip = decode_wav(&manifest.resolve(row))?;
            clip.id = row.clip_id.clone();
            Ok(clip)
        })
        .collect()
}

pub fn extract_split<T: Scalar>(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    models: &[SampleCnn<T>],
    split: Split,
) -> Result<FeatureFile<T>> {
    let clips = load_clips(manifest, split)?;
    let refs: Vec<&SampleCnn<T>> = models.iter().collect();
    let songs = extract_songs(&refs, &clips, &cfg.levels, cfg.sample_rate, cfg.summary)?;
    FeatureFile::from_songs(&songs)
}

/// Song features of the three splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFeatures<T> {
    pub train: FeatureFile<T>,
    pub valid: FeatureFile<T>,
    pub test: FeatureFile<T>,
}

impl<T: Scalar> SplitFeatures<T> {
    pub fn get(&self, split: Split) -> &FeatureFile<T> {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn write_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in SPLITS {
            self.get(s).write(&dir.join(feature_name(s)))?;
        }
        Ok(())
    }

    pub fn read_from(dir: &Path) -> Result<Self> {
        let read = |s| FeatureFile::read(&dir.join(feature_name(s)));
        Ok(SplitFeatures {
            train: read(Split::Train)?,
            valid: read(Split::Valid)?,
            test: read(Split::Test)?,
        })
    }

    /// Keeps only the configured scales and levels.
    pub fn select(&self, cfg: &PipelineConfig) -> Result<Self> {
        Ok(SplitFeatures {
            train: self.train.select(&cfg.scales, &cfg.levels)?,
            valid: self.valid.select(&cfg.scales, &cfg.levels)?,
            test: self.test.select(&cfg.scales, &cfg.levels)?,
        })
    }
}

pub fn extract_all<T: Scalar>(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    models: &[SampleCnn<T>],
) -> Result<SplitFeatures<T>> {
    Ok(SplitFeatures {
        train: extract_split(cfg, manifest, models, Split::Train)?,
        valid: extract_split(cfg, manifest, models, Split::Valid)?,
        test: extract_split(cfg, manifest, models, Split::Test)?,
    })
}

/// Labels for the rows of `file`, which must list the split's songs in
/// manifest order.
pub fn split_labels<T>(manifest: &DatasetManifest, split: Split, file: &FeatureFile<T>) -> Result<Vec<Vec<usize>>> {
    let rows: Vec<_> = manifest.split(split).collect();
    if rows.len() != file.rows.len() {
        return Err(Error::FeatureFile(format!(
            "{split} features have {} rows, manifest lists {} songs",
            file.rows.len(),
            rows.len()
        )));
    }
    rows.iter()
        .zip(&file.rows)
        .map(|(r, (id, _))| {
            if &r.clip_id != id {
                return Err(Error::FeatureFile(format!(
                    "{split} row {id:?} does not match manifest song {:?}",
                    r.clip_id
                )));
            }
            Ok(r.labels.clone())
        })
        .collect()
}

pub fn classifier_spec(cfg: &PipelineConfig, manifest: &DatasetManifest, input_dim: usize) -> ClassifierSpec {
    ClassifierSpec {
        input_dim,
        hidden: cfg.clf_hidden.clone(),
        dropout: cfg.clf_dropout,
        num_outputs: manifest.num_labels(),
        task: manifest.task,
    }
}

pub fn train_song_classifier<T: Scalar>(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    feats: &SplitFeatures<T>,
    seed: u64,
) -> Result<(SongClassifier<T>, TrainLog)> {
    let train_songs = feats.train.songs();
    let valid_songs = feats.valid.songs();
    let train_labels = split_labels(manifest, Split::Train, &feats.train)?;
    let valid_labels = split_labels(manifest, Split::Valid, &feats.valid)?;
    if feats.valid.layout != feats.train.layout {
        return Err(Error::FeatureFile("train and valid layouts differ".into()));
    }
    train_classifier(
        &LabeledSongs {
            features: &train_songs,
            labels: &train_labels,
        },
        &LabeledSongs {
            features: &valid_songs,
            labels: &valid_labels,
        },
        &classifier_spec(cfg, manifest, feats.train.dim()),
        &with_seed(&cfg.clf, seed),
    )
}

/// Accuracy for single-label tasks, macro AUC with the per-tag table otherwise.
pub fn score(task: Task, num_labels: usize, scores: &[Vec<f64>], labels: &[Vec<usize>]) -> Result<RunOutcome> {
    match task {
        Task::SingleLabel => {
            let flat: Vec<usize> = labels.iter().map(|l| l[0]).collect();
            Ok(RunOutcome::scalar(accuracy(scores, &flat)?))
        }
        Task::MultiLabel => {
            let truth: Vec<Vec<bool>> = labels
                .iter()
                .map(|l| (0..num_labels).map(|k| l.contains(&k)).collect())
                .collect();
            let m = macro_auc(scores, &truth)?;
            Ok(RunOutcome {
                metric: m.mean,
                per_tag: Some(m.per_tag),
            })
        }
    }
}

/// Test-split outcome of a trained classifier.
pub fn score_test<T: Scalar>(
    clf: &SongClassifier<T>,
    manifest: &DatasetManifest,
    feats: &SplitFeatures<T>,
) -> Result<RunOutcome> {
    if feats.test.layout != feats.train.layout {
        return Err(Error::FeatureFile("train and test layouts differ".into()));
    }
    let labels = split_labels(manifest, Split::Test, &feats.test)?;
    let scores = predict_split(clf, &feats.test.songs())?;
    score(manifest.task, manifest.num_labels(), &scores, &labels)
}

/// Repeated-run protocol over fixed features: each run trains the song
/// classifier with its own seed.
pub fn evaluate_features<T: Scalar>(
    cfg: &PipelineConfig,
    manifest: &DatasetManifest,
    feats: &SplitFeatures<T>,
) -> Result<EvalReport> {
    repeat_runs(
        |seed| {
            let (clf, _) = train_song_classifier(cfg, manifest, feats, seed)?;
            score_test(&clf, manifest, feats)
        },
        cfg.runs,
        cfg.seed,
        manifest.task,
        &manifest.labels,
    )
}

/// Repeated-run protocol that also retrains every sample-level network
/// with the run seed.
pub fn evaluate_retraining<T: Scalar>(cfg: &PipelineConfig, manifest: &DatasetManifest) -> Result<EvalReport> {
    repeat_runs(
        |seed| {
            let mut models = Vec::new();
            for &scale in &cfg.scales {
                models.push(train_scale::<T>(cfg, manifest, scale, seed)?.0);
            }
            let feats = extract_all(cfg, manifest, &models)?;
            let (clf, _) = train_song_classifier(cfg, manifest, &feats, seed)?;
            score_test(&clf, manifest, &feats)
        },
        cfg.runs,
        cfg.seed,
        manifest.task,
        &manifest.labels,
    )
}

pub const REPORT_TABLE: &str = "report.txt";
pub const REPORT_RUNS: &str = "runs.tsv";
pub const REPORT_TAGS: &str = "tags.tsv";

/// Writes the table, the per-run records and, for multi-label tasks, the
/// per-tag AUC lines.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = vec![
        (dir.join(REPORT_TABLE), report.table()),
        (dir.join(REPORT_RUNS), report.records_tsv()),
    ];
    if report.task == Task::MultiLabel {
        out.push((dir.join(REPORT_TAGS), report.per_tag_tsv()));
    }
    for (path, text) in &out {
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(out.into_iter().map(|(p, _)| p).collect())
}

/// Every stage in sequence with artifacts under `out`: `checkpoints/`,
/// `features/` and `reports/`, each carrying the effective configuration.
pub fn run_pipeline<T: Scalar>(cfg: &PipelineConfig, manifest: &DatasetManifest, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let ck = out.join("checkpoints");
    let fe = out.join("features");
    let re = out.join("reports");
    let models = train_scales_into::<T>(cfg, manifest, cfg.seed, &ck)?;
    cfg.echo_into(&ck)?;
    let feats = extract_all(cfg, manifest, &models)?;
    feats.write_into(&fe)?;
    cfg.echo_into(&fe)?;
    let report = if cfg.retrain_dcnn {
        evaluate_retraining::<T>(cfg, manifest)?
    } else {
        evaluate_features(cfg, manifest, &feats)?
    };
    write_report(&report, &re)?;
    cfg.echo_into(&re)?;
    Ok(report)
}
