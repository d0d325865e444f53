//! Song-level accuracy, rank-based ROC-AUC and the repeated-run protocol.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::Task;

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy<R: AsRef<[f64]>>(predictions: &[R], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            op: "accuracy",
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("accuracy"));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &l)| argmax(p.as_ref()) == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Mann-Whitney U from mid-ranks, `O(n log n)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            op: "roc_auc",
            left: scores.len(),
            right: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based mid-ranks of the positives, doubled to stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j) as u128;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_mid * tied_pos;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroAuc {
    pub mean: f64,
    /// `None` for tags with a single class in the evaluated songs.
    pub per_tag: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

/// Unweighted mean of per-tag AUC over tags with both classes present.
/// `scores` and `labels` are songs x tags.
pub fn macro_auc<S: AsRef<[f64]>, L: AsRef<[bool]>>(scores: &[S], labels: &[L]) -> Result<MacroAuc> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            op: "macro_auc",
            left: scores.len(),
            right: labels.len(),
        });
    }
    let tags = scores.first().map(|r| r.as_ref().len()).unwrap_or(0);
    for (s, l) in scores.iter().zip(labels) {
        if s.as_ref().len() != tags || l.as_ref().len() != tags {
            return Err(Error::LengthMismatch {
                op: "macro_auc row",
                left: s.as_ref().len(),
                right: l.as_ref().len(),
            });
        }
    }
    let mut per_tag = Vec::with_capacity(tags);
    let mut skipped = Vec::new();
    for t in 0..tags {
        let col: Vec<f64> = scores.iter().map(|r| r.as_ref()[t]).collect();
        let lab: Vec<bool> = labels.iter().map(|r| r.as_ref()[t]).collect();
        match roc_auc(&col, &lab) {
            Ok(a) => per_tag.push(Some(a)),
            Err(Error::UndefinedAuc) => {
                per_tag.push(None);
                skipped.push(t);
            }
            Err(e) => return Err(e),
        }
    }
    let valid: Vec<f64> = per_tag.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::NoEvaluableTags);
    }
    Ok(MacroAuc {
        mean: valid.iter().sum::<f64>() / valid.len() as f64,
        per_tag,
        skipped,
    })
}

/// What one run of a pipeline reports back.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub metric: f64,
    pub per_tag: Option<Vec<Option<f64>>>,
}

impl RunOutcome {
    pub fn scalar(metric: f64) -> Self {
        RunOutcome { metric, per_tag: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    /// Tag names with AUC averaged over the runs where the tag was evaluable.
    pub per_tag: Vec<(String, Option<f64>)>,
}

impl EvalReport {
    pub fn metric_name(&self) -> &'static str {
        match self.task {
            Task::SingleLabel => "accuracy",
            Task::MultiLabel => "macro_auc",
        }
    }

    /// `run\tseed\tmetric` lines.
    pub fn records_tsv(&self) -> String {
        let mut s = String::new();
        for (i, (seed, v)) in self.seeds.iter().zip(&self.values).enumerate() {
            let _ = writeln!(s, "{}\t{}\t{}", i + 1, seed, v);
        }
        s
    }

    /// `tag\tauc` lines; unevaluable tags print `nan`.
    pub fn per_tag_tsv(&self) -> String {
        let mut s = String::new();
        for (tag, auc) in &self.per_tag {
            let _ = writeln!(s, "{tag}\t{}", auc.unwrap_or(f64::NAN));
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task      {}", self.task);
        let _ = writeln!(s, "metric    {}", self.metric_name());
        let _ = writeln!(s, "runs      {} (seeds vary init and shuffling; splits fixed)", self.values.len());
        let _ = writeln!(s, "{:>5}  {:>12}  {:>10}", "run", "seed", "value");
        for (i, (seed, v)) in self.seeds.iter().zip(&self.values).enumerate() {
            let _ = writeln!(s, "{:>5}  {:>12}  {:>10.6}", i + 1, seed, v);
        }
        let _ = writeln!(s, "mean      {:.6}", self.mean);
        let _ = writeln!(s, "std       {:.6}", self.std);
        s
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let rough = values.iter().sum::<f64>() / n;
    // One corrective pass removes the rounding of the first sum.
    let mean = rough + values.iter().map(|v| v - rough).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `pipeline` with seeds `base_seed..base_seed + runs` in order and
/// collects the results. The first failing run aborts with its seed.
pub fn repeat_runs<F>(mut pipeline: F, runs: usize, base_seed: u64, task: Task, tags: &[String]) -> Result<EvalReport>
where
    F: FnMut(u64) -> Result<RunOutcome>,
{
    if runs == 0 {
        return Err(Error::Config("run count must be >= 1".into()));
    }
    let mut seeds = Vec::with_capacity(runs);
    let mut values = Vec::with_capacity(runs);
    let mut tag_sums = vec![(0.0, 0usize); tags.len()];
    for seed in (0..runs as u64).map(|k| base_seed + k) {
        let out = pipeline(seed).map_err(|e| Error::RunFailed {
            seed,
            source: Box::new(e),
        })?;
        if let Some(pt) = &out.per_tag {
            for (acc, v) in tag_sums.iter_mut().zip(pt) {
                if let Some(v) = v {
                    acc.0 += v;
                    acc.1 += 1;
                }
            }
        }
        seeds.push(seed);
        values.push(out.metric);
    }
    let (mean, std) = mean_std(&values);
    let per_tag = tags
        .iter()
        .zip(tag_sums)
        .filter(|_| task == Task::MultiLabel)
        .map(|(t, (sum, n))| (t.clone(), (n > 0).then(|| sum / n as f64)))
        .collect();
    Ok(EvalReport {
        task,
        seeds,
        values,
        mean,
        std,
        per_tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        let p = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.3, 0.7]];
        assert_eq!(accuracy(&p, &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&p, &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&p, &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(accuracy::<Vec<f64>>(&[], &[]).is_err());
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert_eq!(
            roc_auc(&[0.9, 0.6, 0.4, 0.1], &[true, false, true, false]).unwrap(),
            0.75
        );
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedAuc)));
    }

    #[test]
    fn macro_auc_skips_single_class_tags() {
        let scores = vec![vec![0.9, 0.5, 0.3], vec![0.1, 0.5, 0.2]];
        let labels = vec![vec![true, true, true], vec![false, false, true]];
        let m = macro_auc(&scores, &labels).unwrap();
        assert_eq!(m.per_tag, vec![Some(1.0), Some(0.5), None]);
        assert_eq!(m.skipped, vec![2]);
        assert_eq!(m.mean, 0.75);
        let none = vec![vec![true], vec![true]];
        assert!(matches!(
            macro_auc(&[vec![0.1], vec![0.2]], &none),
            Err(Error::NoEvaluableTags)
        ));
    }

    #[test]
    fn repeat_runs_statistics() {
        let r = repeat_runs(|_| Ok(RunOutcome::scalar(0.7)), 10, 5, Task::SingleLabel, &[]).unwrap();
        assert_eq!(r.std, 0.0);
        assert_eq!(r.seeds, (5..15).collect::<Vec<_>>());
        let mut vals = [0.8, 0.9].into_iter();
        let r = repeat_runs(|_| Ok(RunOutcome::scalar(vals.next().unwrap())), 2, 0, Task::SingleLabel, &[]).unwrap();
        assert!((r.mean - 0.85).abs() < 1e-12);
        let r1 = repeat_runs(|s| Ok(RunOutcome::scalar(s as f64)), 1, 3, Task::SingleLabel, &[]).unwrap();
        assert_eq!(r1.std, 0.0);
    }

    #[test]
    fn repeat_runs_reports_failing_seed() {
        let e = repeat_runs(
            |s| if s == 12 { Err(Error::EmptyInput("x")) } else { Ok(RunOutcome::scalar(1.0)) },
            5,
            10,
            Task::SingleLabel,
            &[],
        )
        .unwrap_err();
        assert!(matches!(e, Error::RunFailed { seed: 12, .. }));
    }
}
