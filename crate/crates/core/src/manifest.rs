//! Tab-separated dataset manifests.
//!
//! ```text
//! #task=single-label
//! #labels=sine,square,noise
//! clip_0001	wav/clip_0001.wav	train	sine
//! ```
//!
//! Accepted on input in addition to the canonical form: other `#` comment
//! lines, blank lines, a `clip_id	path	split	labels` column header, split
//! aliases `training`/`validation`/`val`/`eval`, label references by name or
//! by zero-based index, and `;` as label separator.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "valid" | "validation" | "val" => Ok(Split::Valid),
            "test" | "eval" => Ok(Split::Test),
            _ => Err(Error::UnknownSplit(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub clip_id: String,
    /// As written in the manifest; relative paths resolve against the manifest directory.
    pub path: PathBuf,
    pub split: Split,
    /// Indices into the label vocabulary, ascending.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub task: Task,
    pub labels: Vec<String>,
    pub rows: Vec<ManifestRow>,
    /// Directory used to resolve relative audio paths.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut task = None;
        let mut labels: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            let err = |msg: String| Error::Manifest(format!("line {}: {msg}", lineno + 1));
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some(v) = meta.strip_prefix("task=") {
                    task = Some(v.parse::<Task>().map_err(|e| err(e.to_string()))?);
                } else if let Some(v) = meta.strip_prefix("labels=") {
                    let v: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
                    if v.iter().any(String::is_empty) {
                        return Err(err("empty label name".into()));
                    }
                    if v.iter().collect::<HashSet<_>>().len() != v.len() {
                        return Err(err("duplicate label name".into()));
                    }
                    labels = Some(v);
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.first().map(|c| c.trim()) == Some("clip_id") {
                continue;
            }
            if cols.len() < 3 || cols.len() > 4 {
                return Err(err(format!("expected 4 tab-separated columns, got {}", cols.len())));
            }
            let vocab = labels
                .as_ref()
                .ok_or_else(|| err("#labels= must precede rows".into()))?;
            let task = task.ok_or_else(|| err("#task= must precede rows".into()))?;
            let clip_id = cols[0].trim().to_string();
            if clip_id.is_empty() {
                return Err(err("empty clip id".into()));
            }
            if !seen.insert(clip_id.clone()) {
                return Err(err(format!("duplicate clip id {clip_id:?}")));
            }
            let split: Split = cols[2].parse().map_err(|e: Error| err(e.to_string()))?;
            let mut ids = Vec::new();
            for tok in cols.get(3).copied().unwrap_or("").split([',', ';']) {
                let tok = tok.trim();
                if tok.is_empty() {
                    continue;
                }
                let id = match vocab.iter().position(|l| l == tok) {
                    Some(i) => i,
                    None => match tok.parse::<usize>() {
                        Ok(i) if i < vocab.len() => i,
                        _ => return Err(err(format!("label {tok:?} not in vocabulary"))),
                    },
                };
                ids.push(id);
            }
            ids.sort_unstable();
            ids.dedup();
            if task == Task::SingleLabel && ids.len() != 1 {
                return Err(err(format!(
                    "single-label row {clip_id:?} has {} labels",
                    ids.len()
                )));
            }
            rows.push(ManifestRow {
                clip_id,
                path: PathBuf::from(cols[1].trim()),
                split,
                labels: ids,
            });
        }
        Ok(DatasetManifest {
            task: task.ok_or_else(|| Error::Manifest("missing #task= header".into()))?,
            labels: labels.ok_or_else(|| Error::Manifest("missing #labels= header".into()))?,
            rows,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        if row.path.is_absolute() {
            row.path.clone()
        } else {
            self.base_dir.join(&row.path)
        }
    }

    /// Rows of one split in manifest order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn require_split(&self, split: Split) -> Result<()> {
        if self.split_len(split) == 0 {
            return Err(Error::EmptySplit(split.to_string()));
        }
        Ok(())
    }
}

impl fmt::Display for DatasetManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "#task={}", self.task)?;
        writeln!(f, "#labels={}", self.labels.join(","))?;
        for r in &self.rows {
            let names: Vec<&str> = r.labels.iter().map(|&i| self.labels[i].as_str()).collect();
            writeln!(
                f,
                "{}\t{}\t{}\t{}",
                r.clip_id,
                r.path.display(),
                r.split,
                names.join(",")
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "#task=multi-label\n#labels=a,b,c\nclip_id\tpath\tsplit\tlabels\n# comment\nx\tw/x.wav\ttrain\ta,c\ny\t/abs/y.wav\tvalidation\t1\n\nz\tz.wav\ttest\t\n";

    #[test]
    fn parses_superset_and_round_trips() {
        let m = DatasetManifest::parse(SAMPLE, Path::new("/data")).unwrap();
        assert_eq!(m.rows.len(), 3);
        assert_eq!(m.rows[0].labels, vec![0, 2]);
        assert_eq!(m.rows[1].split, Split::Valid);
        assert_eq!(m.rows[1].labels, vec![1]);
        assert!(m.rows[2].labels.is_empty());
        assert_eq!(m.resolve(&m.rows[0]), PathBuf::from("/data/w/x.wav"));
        assert_eq!(m.resolve(&m.rows[1]), PathBuf::from("/abs/y.wav"));
        let again = DatasetManifest::parse(&m.to_string(), Path::new("/data")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn rejects_duplicates_and_unknown_labels() {
        let dup = "#task=multi-label\n#labels=a\nx\tx.wav\ttrain\ta\nx\tx2.wav\ttest\ta\n";
        assert!(DatasetManifest::parse(dup, Path::new(".")).is_err());
        let unk = "#task=multi-label\n#labels=a\nx\tx.wav\ttrain\tq\n";
        assert!(DatasetManifest::parse(unk, Path::new(".")).is_err());
        let range = "#task=multi-label\n#labels=a\nx\tx.wav\ttrain\t3\n";
        assert!(DatasetManifest::parse(range, Path::new(".")).is_err());
    }

    #[test]
    fn single_label_rows_need_one_label() {
        let two = "#task=single-label\n#labels=a,b\nx\tx.wav\ttrain\ta,b\n";
        assert!(DatasetManifest::parse(two, Path::new(".")).is_err());
    }

    #[test]
    fn unknown_split() {
        let bad = "#task=single-label\n#labels=a\nx\tx.wav\tholdout\ta\n";
        let e = DatasetManifest::parse(bad, Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("holdout"));
        assert!("bogus".parse::<Split>().is_err());
    }
}
