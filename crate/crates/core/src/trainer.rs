//! Mini-batch SGD with plateau-driven learning-rate drops and best-validation
//! selection, shared by the sample-level networks and the song classifier.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{decode_wav, resample, segment, segment_count};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Split};
use crate::model::{ModelSpec, SampleCnn, Task};
use crate::numerics::{sgd_step, Mode, Targets};
use crate::scalar::Scalar;
use crate::tensor::{Parameterized, Tensor};

/// Arithmetic precision of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub batch_size: usize,
    pub lr_drop_factor: f64,
    /// Epochs without validation improvement before the learning rate drops.
    pub patience: usize,
    pub max_lr_drops: usize,
    pub max_epochs: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub precision: Precision,
    /// Evenly spaced training segments kept per clip; 0 keeps all.
    pub segments_per_clip: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            nesterov: true,
            batch_size: 23,
            lr_drop_factor: 5.0,
            patience: 3,
            max_lr_drops: 2,
            max_epochs: 50,
            max_steps: None,
            seed: 0,
            precision: Precision::F32,
            segments_per_clip: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_drop_factor >= 1.0) {
            return Err(Error::Config("lr_drop_factor must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub steps: usize,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub wall_clock_secs: f64,
}

impl TrainLog {
    pub fn best_valid_loss(&self) -> Option<f64> {
        self.records.iter().map(|r| r.valid_loss).reduce(f64::min)
    }

    /// One `epoch\ttrain_loss\tvalid_loss\tlr` line per epoch.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.epoch, r.train_loss, r.valid_loss, r.lr);
        }
        s
    }
}

/// A network the trainer can drive: its head emits probabilities and its
/// backward pass starts from the logit gradient.
pub trait Network<T: Scalar>: Parameterized<T> + Clone {
    fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>>;
    fn backward_logits(&mut self, grad_logits: &Tensor<T>) -> Result<()>;
    fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar> Network<T> for SampleCnn<T> {
    fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(x, Mode::Train)
    }

    fn backward_logits(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        SampleCnn::backward_logits(self, grad_logits).map(|_| ())
    }

    fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        SampleCnn::predict(self, x)
    }
}

/// Examples stacked along the batch axis with their label sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet<T: Scalar> {
    pub inputs: Tensor<T>,
    pub labels: Vec<Vec<usize>>,
    pub task: Task,
    pub num_outputs: usize,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn new(inputs: Tensor<T>, labels: Vec<Vec<usize>>, task: Task, num_outputs: usize) -> Result<Self> {
        if inputs.shape().batch != labels.len() {
            return Err(Error::LengthMismatch {
                op: "labeled set",
                left: inputs.shape().batch,
                right: labels.len(),
            });
        }
        for l in &labels {
            if let Some(&bad) = l.iter().find(|&&i| i >= num_outputs) {
                return Err(Error::LabelRange {
                    op: "labeled set",
                    label: bad,
                    classes: num_outputs,
                });
            }
            if task == Task::SingleLabel && l.len() != 1 {
                return Err(Error::Manifest(format!("single-label example with {} labels", l.len())));
            }
        }
        Ok(LabeledSet {
            inputs,
            labels,
            task,
            num_outputs,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn targets(&self, indices: &[usize]) -> Targets<T> {
        match self.task {
            Task::SingleLabel => Targets::Single(indices.iter().map(|&i| self.labels[i][0]).collect()),
            Task::MultiLabel => {
                let mut t = Tensor::zeros([indices.len(), self.num_outputs, 1]);
                for (b, &i) in indices.iter().enumerate() {
                    for &l in &self.labels[i] {
                        t.set(b, l, 0, T::one());
                    }
                }
                Targets::Multi(t)
            }
        }
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Targets<T>) {
        (self.inputs.gather_batch(indices), self.targets(indices))
    }
}

/// Splits a permutation into batches, folding a trailing single example into
/// the previous batch so batch statistics stay defined.
pub fn make_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// Per-epoch visiting order: a seeded permutation of `0..n`.
pub fn epoch_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Loss and task metric on a labelled set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentEval {
    pub loss: f64,
    /// Accuracy (single-label) or per-label binary accuracy at 0.5 (multi-label).
    pub metric: f64,
    pub count: usize,
}

const EVAL_CHUNK: usize = 256;

/// Inference-mode loss over `set` in index order.
pub fn evaluate_set<T: Scalar, N: Network<T>>(net: &N, set: &LabeledSet<T>) -> Result<SegmentEval> {
    if set.is_empty() {
        return Err(Error::EmptyInput("evaluate"));
    }
    let mut loss = 0.0;
    let mut hits = 0.0;
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, targets) = set.batch(chunk);
        let probs = net.predict(&x)?;
        loss += targets.loss(&probs)?.to_f64().unwrap_or(f64::NAN) * chunk.len() as f64;
        for (b, &i) in chunk.iter().enumerate() {
            let row = probs.item(b);
            match set.task {
                Task::SingleLabel => {
                    if crate::metrics::argmax(row) == set.labels[i][0] {
                        hits += 1.0;
                    }
                }
                Task::MultiLabel => {
                    let correct = row
                        .iter()
                        .enumerate()
                        .filter(|(k, &p)| (p >= T::lit(0.5)) == set.labels[i].contains(k))
                        .count();
                    hits += correct as f64 / set.num_outputs as f64;
                }
            }
        }
    }
    let n = set.len() as f64;
    Ok(SegmentEval {
        loss: loss / n,
        metric: hits / n,
        count: set.len(),
    })
}

/// Trains `net` in place and leaves it holding the best-validation parameters.
pub fn fit<T: Scalar, N: Network<T>>(
    net: &mut N,
    train: &LabeledSet<T>,
    valid: &LabeledSet<T>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if valid.is_empty() {
        return Err(Error::EmptySplit("valid".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lr = cfg.lr;
    let lr_t = |lr: f64| T::lit(lr);
    let momentum = T::lit(cfg.momentum);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, N)> = None;
    let mut stale = 0;
    let mut drops = 0;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let order = epoch_order(train.len(), &mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        let mut out_of_steps = false;
        for batch in make_batches(&order, cfg.batch_size) {
            let (x, targets) = train.batch(&batch);
            net.zero_grad();
            let probs = net.forward_train(&x)?;
            let (loss, grad) = targets.loss_and_grad(&probs)?;
            net.backward_logits(&grad)?;
            sgd_step(net, lr_t(lr), momentum, cfg.nesterov);
            total += loss.to_f64().unwrap_or(f64::NAN) * batch.len() as f64;
            seen += batch.len();
            log.steps += 1;
            if cfg.max_steps.is_some_and(|m| log.steps >= m) {
                out_of_steps = true;
                break;
            }
        }
        let valid_loss = evaluate_set(net, valid)?.loss;
        log.records.push(EpochRecord {
            epoch,
            train_loss: total / seen as f64,
            valid_loss,
            lr,
        });
        if best.as_ref().is_none_or(|(b, _)| valid_loss < *b) {
            best = Some((valid_loss, net.clone()));
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                if drops >= cfg.max_lr_drops {
                    break 'epochs;
                }
                lr /= cfg.lr_drop_factor;
                drops += 1;
                stale = 0;
            }
        }
        if out_of_steps {
            break;
        }
    }
    if let Some((_, b)) = best {
        *net = b;
    }
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Evenly spaced indices `floor(i * count / keep)`, or all of them.
pub fn spread_indices(count: usize, keep: usize) -> Vec<usize> {
    if keep == 0 || keep >= count {
        return (0..count).collect();
    }
    (0..keep).map(|i| i * count / keep).collect()
}

/// Decodes, resamples and segments every clip of `split`, each segment
/// inheriting its song's labels.
pub fn load_segments<T: Scalar>(
    manifest: &DatasetManifest,
    split: Split,
    segment_length: usize,
    sample_rate: u32,
    segments_per_clip: usize,
) -> Result<LabeledSet<T>> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for row in manifest.split(split) {
        let clip = resample(&decode_wav(&manifest.resolve(row))?, sample_rate);
        let batch = segment::<T>(&clip, segment_length)?;
        debug_assert_eq!(batch.len(), segment_count(clip.samples.len(), segment_length));
        for i in spread_indices(batch.len(), segments_per_clip) {
            data.extend_from_slice(batch.data.item(i));
            labels.push(row.labels.clone());
        }
    }
    let n = labels.len();
    LabeledSet::new(
        Tensor::from_vec([n, 1, segment_length], data)?,
        labels,
        manifest.task,
        manifest.num_labels(),
    )
}

/// Builds a network for `spec` and trains it on the manifest's train split,
/// selecting on segment-level validation loss.
pub fn train_dcnn<T: Scalar>(
    spec: ModelSpec,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    sample_rate: u32,
) -> Result<(SampleCnn<T>, TrainLog)> {
    cfg.validate()?;
    manifest.require_split(Split::Train)?;
    manifest.require_split(Split::Valid)?;
    if spec.num_outputs != manifest.num_labels() || spec.task != manifest.task {
        return Err(Error::InvalidSpec(format!(
            "model has {} {} outputs, manifest has {} {} labels",
            spec.num_outputs,
            spec.task,
            manifest.num_labels(),
            manifest.task
        )));
    }
    let len = spec.input_length()?;
    let train = load_segments(manifest, Split::Train, len, sample_rate, cfg.segments_per_clip)?;
    let valid = load_segments(manifest, Split::Valid, len, sample_rate, cfg.segments_per_clip)?;
    // Both splits are decoded above, so unreadable audio fails before any step.
    let mut net = SampleCnn::new(spec, cfg.seed)?;
    let log = fit(&mut net, &train, &valid, cfg)?;
    Ok((net, log))
}

/// Segment-level loss and metric on one split, in manifest order.
pub fn evaluate_segments<T: Scalar>(
    model: &SampleCnn<T>,
    manifest: &DatasetManifest,
    split: &str,
    sample_rate: u32,
) -> Result<SegmentEval> {
    let split: Split = split.parse()?;
    manifest.require_split(split)?;
    let set = load_segments(manifest, split, model.input_length(), sample_rate, 0)?;
    evaluate_set(model, &set)
}

/// Writes the log as TSV.
pub fn write_train_log(log: &TrainLog, path: &Path) -> Result<()> {
    std::fs::write(path, log.to_tsv()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_permutation_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 5, 23, 24, 47, 100] {
            let order = epoch_order(n, &mut rng);
            let mut sorted = order.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            let batches = make_batches(&order, 23);
            let flat: Vec<usize> = batches.iter().flatten().copied().collect();
            assert_eq!(flat, order);
            if n > 1 {
                assert!(batches.iter().all(|b| b.len() >= 2));
            }
        }
    }

    #[test]
    fn spread_is_even_and_sorted() {
        assert_eq!(spread_indices(10, 0), (0..10).collect::<Vec<_>>());
        assert_eq!(spread_indices(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(spread_indices(3, 8), vec![0, 1, 2]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_tsv_has_one_line_per_epoch() {
        let log = TrainLog {
            records: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 0.5,
                    valid_loss: 0.6,
                    lr: 0.01,
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 0.25,
                    valid_loss: 0.4,
                    lr: 0.002,
                },
            ],
            ..TrainLog::default()
        };
        assert_eq!(log.to_tsv(), "1\t0.5\t0.6\t0.01\n2\t0.25\t0.4\t0.002\n");
        assert_eq!(log.best_valid_loss(), Some(0.4));
    }
}
