//! Song-level fully connected classifier on aggregated features.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{FeatureTransform, SongFeature};
use crate::error::{Error, Result};
use crate::model::{Container, Task};
use crate::numerics::{Activation, ActivationKind, Dense, Dropout, Mode};
use crate::scalar::Scalar;
use crate::tensor::{Param, Parameterized, Tensor};
use crate::trainer::{fit, LabeledSet, Network, TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub num_outputs: usize,
    pub task: Task,
}

impl ClassifierSpec {
    pub const DEFAULT_HIDDEN: usize = 512;
    pub const DEFAULT_DROPOUT: f64 = 0.5;

    pub fn new(input_dim: usize, num_outputs: usize, task: Task) -> Self {
        ClassifierSpec {
            input_dim,
            hidden: vec![Self::DEFAULT_HIDDEN],
            dropout: Self::DEFAULT_DROPOUT,
            num_outputs,
            task,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_outputs == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidSpec(format!("classifier dims must be >= 1: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidSpec(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Hidden<T: Scalar> {
    dense: Dense<T>,
    act: Activation<T>,
    dropout: Dropout<T>,
}

/// `[dense -> ReLU -> dropout] * k -> dense -> sigmoid|softmax`, with the
/// z-scoring fitted on its training features applied to every input.
#[derive(Clone, Debug)]
pub struct SongClassifier<T: Scalar> {
    spec: ClassifierSpec,
    hidden: Vec<Hidden<T>>,
    head: Dense<T>,
    head_act: Activation<T>,
    pub transform: FeatureTransform<T>,
}

impl<T: Scalar> SongClassifier<T> {
    pub fn new(spec: ClassifierSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut width = spec.input_dim;
        let mut hidden = Vec::new();
        for (i, &h) in spec.hidden.iter().enumerate() {
            hidden.push(Hidden {
                dense: Dense::new(width, h, &mut rng),
                act: Activation::new(ActivationKind::Relu),
                dropout: Dropout::new(spec.dropout, seed.wrapping_add(0x9e37_79b9).wrapping_add(i as u64)),
            });
            width = h;
        }
        let head = Dense::new(width, spec.num_outputs, &mut rng);
        let head_act = Activation::new(match spec.task {
            Task::SingleLabel => ActivationKind::Softmax,
            Task::MultiLabel => ActivationKind::Sigmoid,
        });
        let transform = FeatureTransform {
            mean: vec![T::zero(); spec.input_dim],
            std: vec![T::one(); spec.input_dim],
        };
        Ok(SongClassifier {
            spec,
            hidden,
            head,
            head_act,
            transform,
        })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    /// Number of dense layers, head included.
    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.channels != self.spec.input_dim || s.time != 1 {
            return Err(Error::shape(
                "classifier input",
                format!("(B, {}, 1)", self.spec.input_dim),
                s,
            ));
        }
        Ok(())
    }

    /// Logits for already standardized inputs, inference mode.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let mut h = x.clone();
        for l in &self.hidden {
            h = l.act.infer(&l.dense.infer(&h)?);
        }
        self.head.infer(&h)
    }

    /// Scores for raw (unstandardized) song vectors.
    pub fn predict_raw(&self, rows: &[&[T]]) -> Result<Vec<Vec<T>>> {
        let mut data = Vec::with_capacity(rows.len() * self.spec.input_dim);
        for r in rows {
            data.extend(self.transform.apply(r)?);
        }
        let x = Tensor::from_vec([rows.len(), self.spec.input_dim, 1], data)?;
        let p = Network::predict(self, &x)?;
        Ok((0..rows.len()).map(|b| p.item(b).to_vec()).collect())
    }

    pub fn predict(&self, song: &SongFeature<T>) -> Result<Vec<T>> {
        if song.vector.len() != self.spec.input_dim {
            return Err(Error::LengthMismatch {
                op: "predict",
                left: self.spec.input_dim,
                right: song.vector.len(),
            });
        }
        Ok(self.predict_raw(&[&song.vector])?.remove(0))
    }

    pub fn to_container(&self) -> Container {
        let mut model = self.clone();
        let mut c = Container::new(CLASSIFIER_KIND);
        let hidden = if self.spec.hidden.is_empty() {
            "none".to_string()
        } else {
            self.spec
                .hidden
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        c.field("input_dim", self.spec.input_dim)
            .field("hidden", hidden)
            .field("dropout", self.spec.dropout)
            .field("num_outputs", self.spec.num_outputs)
            .field("task", self.spec.task);
        c.store_from(&mut model);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != CLASSIFIER_KIND {
            return Err(Error::MalformedHeader(format!("kind {:?} is not {CLASSIFIER_KIND}", c.kind)));
        }
        let hidden_raw = c.get("hidden")?;
        let hidden = if hidden_raw == "none" {
            Vec::new()
        } else {
            hidden_raw
                .split(',')
                .map(|h| h.parse().map_err(|_| Error::MalformedHeader(format!("hidden {hidden_raw:?}"))))
                .collect::<Result<_>>()?
        };
        let task: Task = c.get("task")?.parse().map_err(|e: Error| Error::MalformedHeader(e.to_string()))?;
        let spec = ClassifierSpec {
            input_dim: c.parse("input_dim")?,
            hidden,
            dropout: c.parse("dropout")?,
            num_outputs: c.parse("num_outputs")?,
            task,
        };
        let mut model = Self::new(spec, 0).map_err(|e| Error::MalformedHeader(e.to_string()))?;
        c.load_into(&mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_container().to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

pub const CLASSIFIER_KIND: &str = "classifier";

impl<T: Scalar> Network<T> for SongClassifier<T> {
    fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let mut h = x.clone();
        for l in &mut self.hidden {
            h = l.dense.forward(&h)?;
            h = l.act.forward(&h);
            h = l.dropout.forward(&h, Mode::Train);
        }
        let logits = self.head.forward(&h)?;
        Ok(self.head_act.infer(&logits))
    }

    fn backward_logits(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        let mut g = self.head.backward(grad_logits)?;
        for l in self.hidden.iter_mut().rev() {
            g = l.dropout.backward(&g)?;
            g = l.act.backward(&g)?;
            g = l.dense.backward(&g)?;
        }
        Ok(())
    }

    fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.head_act.infer(&self.logits(x)?))
    }
}

impl<T: Scalar> Parameterized<T> for SongClassifier<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, l) in self.hidden.iter_mut().enumerate() {
            f(&format!("hidden{}.weight", i + 1), &mut l.dense.weight);
            f(&format!("hidden{}.bias", i + 1), &mut l.dense.bias);
        }
        f("head.weight", &mut self.head.weight);
        f("head.bias", &mut self.head.bias);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        let d = self.spec.input_dim;
        let mut mean = Tensor::from_vec([1, d, 1], self.transform.mean.clone()).expect("transform dim");
        let mut std = Tensor::from_vec([1, d, 1], self.transform.std.clone()).expect("transform dim");
        f("transform.mean", &mut mean);
        f("transform.std", &mut std);
        self.transform.mean = mean.into_vec();
        self.transform.std = std.into_vec();
    }
}

/// Songs of one split with their label sets.
#[derive(Debug, Clone)]
pub struct LabeledSongs<'a, T> {
    pub features: &'a [SongFeature<T>],
    pub labels: &'a [Vec<usize>],
}

fn to_set<T: Scalar>(
    songs: &LabeledSongs<'_, T>,
    transform: &FeatureTransform<T>,
    spec: &ClassifierSpec,
) -> Result<LabeledSet<T>> {
    if songs.features.len() != songs.labels.len() {
        return Err(Error::LengthMismatch {
            op: "classifier data",
            left: songs.features.len(),
            right: songs.labels.len(),
        });
    }
    let mut data = Vec::with_capacity(songs.features.len() * spec.input_dim);
    for f in songs.features {
        if f.vector.len() != spec.input_dim {
            return Err(Error::LengthMismatch {
                op: "classifier input dim",
                left: spec.input_dim,
                right: f.vector.len(),
            });
        }
        data.extend(transform.apply(&f.vector)?);
    }
    LabeledSet::new(
        Tensor::from_vec([songs.features.len(), spec.input_dim, 1], data)?,
        songs.labels.to_vec(),
        spec.task,
        spec.num_outputs,
    )
}

/// Fits z-scoring on the training songs, then trains with the shared SGD
/// contract and returns the best-validation classifier.
pub fn train_classifier<T: Scalar>(
    train: &LabeledSongs<'_, T>,
    valid: &LabeledSongs<'_, T>,
    spec: &ClassifierSpec,
    cfg: &TrainConfig,
) -> Result<(SongClassifier<T>, TrainLog)> {
    spec.validate()?;
    if train.features.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if valid.features.is_empty() {
        return Err(Error::EmptySplit("valid".into()));
    }
    let rows: Vec<&[T]> = train.features.iter().map(|f| f.vector.as_slice()).collect();
    if let Some(bad) = rows.iter().find(|r| r.len() != spec.input_dim) {
        return Err(Error::LengthMismatch {
            op: "classifier input dim",
            left: spec.input_dim,
            right: bad.len(),
        });
    }
    let transform = FeatureTransform::fit(&rows)?;
    let train_set = to_set(train, &transform, spec)?;
    let valid_set = to_set(valid, &transform, spec)?;
    let mut clf = SongClassifier::new(spec.clone(), cfg.seed)?;
    clf.transform = transform;
    let log = fit(&mut clf, &train_set, &valid_set, cfg)?;
    Ok((clf, log))
}

/// Song-level scores for a split, one row per song.
pub fn predict_split<T: Scalar>(clf: &SongClassifier<T>, songs: &[SongFeature<T>]) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<&[T]> = songs.iter().map(|s| s.vector.as_slice()).collect();
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    Ok(clf
        .predict_raw(&rows)?
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
        .collect())
}
