//! `slcnn` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slcnn::aggregate::FeatureFile;
use slcnn::classifier::SongClassifier;
use slcnn::config::{parse_scales, PipelineConfig};
use slcnn::manifest::{DatasetManifest, Split};
use slcnn::model::{parse_levels, save_checkpoint, LevelIndex, Scale};
use slcnn::pipeline::{self, SplitFeatures};
use slcnn::synthetic::{make_synthetic, SyntheticConfig};
use slcnn::trainer::{write_train_log, Precision};
use slcnn::{Error, Result, Scalar};

#[derive(Parser)]
#[command(name = "slcnn", version, about = "Sample-level CNN music classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Levels to tap, e.g. `-1,-2,-3`.
    #[arg(long, allow_hyphen_values = true, value_parser = levels_arg)]
    levels: Option<Levels>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Comma-separated scale names.
#[derive(Clone, Debug)]
struct Scales(Vec<Scale>);

/// Comma-separated level indices.
#[derive(Clone, Debug)]
struct Levels(Vec<LevelIndex>);

fn scales_arg(s: &str) -> Result<Scales> {
    parse_scales(s).map(Scales)
}

fn levels_arg(s: &str) -> Result<Levels> {
    parse_levels(s).map(Levels)
}

#[derive(Subcommand)]
enum Command {
    /// Train one network per scale on the manifest's train split.
    TrainDcnn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Scale(s) to train, e.g. `3^9` or `2^4,3^3`; defaults to the configured list.
        #[arg(long, value_parser = scales_arg)]
        scale: Option<Scales>,
    },
    /// Write song-level feature files for every split.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding `dcnn_<m>_<n>.ckpt` files.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, value_parser = scales_arg)]
        scale: Option<Scales>,
    },
    /// Train one song classifier and score it on the test split.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding `features_<split>.slfeat` files.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, value_parser = scales_arg)]
        scale: Option<Scales>,
    },
    /// Repeated-run evaluation with mean and standard deviation.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, value_parser = scales_arg)]
        scale: Option<Scales>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Generate the synthetic timbre corpus.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// Clips per class.
        #[arg(long, default_value_t = 40)]
        clips: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        multi_label: bool,
        #[arg(long, default_value_t = slcnn::audio::PIPELINE_RATE)]
        sample_rate: u32,
        #[arg(long, default_value_t = 3.0)]
        min_secs: f64,
        #[arg(long, default_value_t = 5.0)]
        max_secs: f64,
    },
    /// Re-emit a feature file keeping only some scales and levels.
    ExportFeatures {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_parser = scales_arg)]
        scale: Option<Scales>,
        #[arg(long, allow_hyphen_values = true, value_parser = levels_arg)]
        levels: Option<Levels>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.set_all(common.set.iter().map(String::as_str))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(levels) = &common.levels {
        cfg.levels = levels.0.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_scales(mut cfg: PipelineConfig, scales: &Option<Scales>) -> PipelineConfig {
    if let Some(s) = scales {
        cfg.scales = s.0.clone();
    }
    cfg
}

macro_rules! by_precision {
    ($p:expr, $f:ident($($a:expr),*)) => {
        match $p {
            Precision::F32 => $f::<f32>($($a),*),
            Precision::F64 => $f::<f64>($($a),*),
        }
    };
}

fn train_dcnn<T: Scalar>(cfg: &PipelineConfig, manifest: &DatasetManifest, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for &scale in &cfg.scales {
        let (model, log) = pipeline::train_scale::<T>(cfg, manifest, scale, cfg.seed)?;
        let path = out.join(pipeline::checkpoint_name(scale));
        save_checkpoint(&model, cfg.sample_rate, &path)?;
        write_train_log(&log, &out.join(pipeline::train_log_name(scale)))?;
        println!(
            "{scale}: {} epochs, best valid loss {:.6}, wrote {}",
            log.records.len(),
            log.best_valid_loss().unwrap_or(f64::NAN),
            path.display()
        );
    }
    cfg.echo_into(out)
}

fn extract<T: Scalar>(cfg: &PipelineConfig, manifest: &DatasetManifest, ck: &Path, out: &Path) -> Result<()> {
    let models = pipeline::load_scales::<T>(cfg, ck)?;
    let feats = pipeline::extract_all(cfg, manifest, &models)?;
    feats.write_into(out)?;
    for s in pipeline::SPLITS {
        println!("{s}: {} songs, dim {}", feats.get(s).rows.len(), feats.get(s).dim());
    }
    cfg.echo_into(out)
}

fn read_features<T: Scalar>(cfg: &PipelineConfig, dir: &Path) -> Result<SplitFeatures<T>> {
    SplitFeatures::<T>::read_from(dir)?.select(cfg)
}

fn train_classifier<T: Scalar>(cfg: &PipelineConfig, manifest: &DatasetManifest, fe: &Path, out: &Path) -> Result<()> {
    manifest.require_split(Split::Test)?;
    let feats = read_features::<T>(cfg, fe)?;
    let (clf, log) = pipeline::train_song_classifier(cfg, manifest, &feats, cfg.seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    clf.save(&out.join(CLASSIFIER_FILE))?;
    write_train_log(&log, &out.join("classifier.log.tsv"))?;
    let outcome = pipeline::score_test(&clf, manifest, &feats)?;
    let report = slcnn::metrics::repeat_runs(|_| Ok(outcome.clone()), 1, cfg.seed, manifest.task, &manifest.labels)?;
    pipeline::write_report(&report, out)?;
    print!("{}", report.table());
    cfg.echo_into(out)?;
    // Loading back guards against a checkpoint that cannot be read.
    SongClassifier::<T>::load(&out.join(CLASSIFIER_FILE))?;
    Ok(())
}

const CLASSIFIER_FILE: &str = "classifier.ckpt";

fn evaluate<T: Scalar>(cfg: &PipelineConfig, manifest: &DatasetManifest, fe: &Path, out: &Path) -> Result<()> {
    manifest.require_split(Split::Test)?;
    let report = if cfg.retrain_dcnn {
        pipeline::evaluate_retraining::<T>(cfg, manifest)?
    } else {
        pipeline::evaluate_features(cfg, manifest, &read_features::<T>(cfg, fe)?)?
    };
    pipeline::write_report(&report, out)?;
    print!("{}", report.table());
    cfg.echo_into(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainDcnn { common, manifest, scale } => {
            let cfg = with_scales(load_config(&common)?, &scale);
            let manifest = DatasetManifest::load(&manifest)?;
            let out = common.out.unwrap_or_else(|| cfg.checkpoint_dir.clone());
            by_precision!(cfg.dcnn.precision, train_dcnn(&cfg, &manifest, &out))
        }
        Command::Extract {
            common,
            manifest,
            checkpoints,
            scale,
        } => {
            let cfg = with_scales(load_config(&common)?, &scale);
            let manifest = DatasetManifest::load(&manifest)?;
            let ck = checkpoints.unwrap_or_else(|| cfg.checkpoint_dir.clone());
            let out = common.out.unwrap_or_else(|| cfg.feature_dir.clone());
            by_precision!(cfg.dcnn.precision, extract(&cfg, &manifest, &ck, &out))
        }
        Command::TrainClassifier {
            common,
            manifest,
            features,
            scale,
        } => {
            let cfg = with_scales(load_config(&common)?, &scale);
            let manifest = DatasetManifest::load(&manifest)?;
            let fe = features.unwrap_or_else(|| cfg.feature_dir.clone());
            let out = common.out.unwrap_or_else(|| cfg.report_dir.clone());
            by_precision!(cfg.clf.precision, train_classifier(&cfg, &manifest, &fe, &out))
        }
        Command::Evaluate {
            common,
            manifest,
            features,
            scale,
            runs,
        } => {
            let mut cfg = with_scales(load_config(&common)?, &scale);
            if let Some(r) = runs {
                cfg.runs = r;
            }
            cfg.validate()?;
            let manifest = DatasetManifest::load(&manifest)?;
            let fe = features.unwrap_or_else(|| cfg.feature_dir.clone());
            let out = common.out.unwrap_or_else(|| cfg.report_dir.clone());
            by_precision!(cfg.clf.precision, evaluate(&cfg, &manifest, &fe, &out))
        }
        Command::MakeSynthetic {
            out,
            classes,
            clips,
            seed,
            multi_label,
            sample_rate,
            min_secs,
            max_secs,
        } => {
            let cfg = SyntheticConfig {
                classes,
                clips_per_class: clips,
                seed,
                multi_label,
                sample_rate,
                min_secs,
                max_secs,
            };
            let m = make_synthetic(&out, &cfg)?;
            println!(
                "wrote {} clips and {}",
                m.rows.len(),
                out.join(slcnn::synthetic::MANIFEST_NAME).display()
            );
            Ok(())
        }
        Command::ExportFeatures {
            features,
            scale,
            levels,
            out,
        } => {
            let file = FeatureFile::<f64>::read(&features)?;
            let scales = scale.map_or_else(|| file.layout.scales(), |s| s.0);
            let levels = levels.map_or_else(|| file.layout.levels(), |l| l.0);
            let sub = file.select(&scales, &levels)?;
            sub.write(&out)?;
            println!("{} songs, dim {} -> {}", sub.rows.len(), sub.dim(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
