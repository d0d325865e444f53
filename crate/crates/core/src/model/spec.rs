use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Labelling regime of a dataset and the matching output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Exactly one class per song; softmax head, cross-entropy loss.
    SingleLabel,
    /// Any subset of tags per song; sigmoid head, binary cross-entropy loss.
    MultiLabel,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::SingleLabel => "single-label",
            Task::MultiLabel => "multi-label",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "single-label" | "single" => Ok(Task::SingleLabel),
            "multi-label" | "multi" => Ok(Task::MultiLabel),
            other => Err(Error::InvalidSpec(format!("unknown task {other:?}"))),
        }
    }
}

/// The `m^n` pair naming a network: downsampling factor `m` and `n` hidden blocks.
///
/// Ordering is lexicographic on `(m, n)`, which is the canonical order used
/// when concatenating multi-scale features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scale {
    m: usize,
    n: usize,
}

impl Scale {
    pub const MIN_FACTOR: usize = 2;
    pub const MAX_FACTOR: usize = 5;

    pub fn new(m: usize, n: usize) -> Result<Self> {
        if !(Self::MIN_FACTOR..=Self::MAX_FACTOR).contains(&m) {
            return Err(Error::InvalidSpec(format!("downsampling factor m = {m} outside 2..=5")));
        }
        if n == 0 {
            return Err(Error::InvalidSpec("block count n must be >= 1".into()));
        }
        Ok(Scale { m, n })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Samples consumed by one forward pass: `m^(n+1)`.
    pub fn input_length(&self) -> Result<usize> {
        u32::try_from(self.n + 1)
            .ok()
            .and_then(|e| self.m.checked_pow(e))
            .ok_or(Error::Overflow { m: self.m, n: self.n })
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}^{}", self.m, self.n)
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ScaleName(s.to_string());
        let (m, n) = s.trim().split_once('^').ok_or_else(bad)?;
        let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
        if !digits(m) || !digits(n) {
            return Err(bad());
        }
        let m = m.parse().map_err(|_| bad())?;
        let n = n.parse().map_err(|_| bad())?;
        Scale::new(m, n).map_err(|_| bad())
    }
}

/// The eight scales combined in the largest multi-scale configuration.
pub fn reference_scales() -> Vec<Scale> {
    [(2, 13), (2, 14), (3, 8), (3, 9), (4, 6), (4, 7), (5, 5), (5, 6)]
        .into_iter()
        .map(|(m, n)| Scale { m, n })
        .collect()
}

/// A hidden block counted downward from the output: `-1` is the top block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LevelIndex(i32);

impl LevelIndex {
    pub const TOP: LevelIndex = LevelIndex(-1);
    /// Canonical concatenation order: deepest first.
    pub const ALL: [LevelIndex; 3] = [LevelIndex(-3), LevelIndex(-2), LevelIndex(-1)];

    pub fn new(level: i32) -> Result<Self> {
        if !(-3..=-1).contains(&level) {
            return Err(Error::Config(format!("level {level} not in {{-1, -2, -3}}")));
        }
        Ok(LevelIndex(level))
    }

    pub fn get(self) -> i32 {
        self.0
    }

    /// Number of blocks below the output, `j` for level `-j`.
    pub fn depth(self) -> usize {
        (-self.0) as usize
    }

    pub fn check(self, blocks: usize) -> Result<()> {
        if self.depth() > blocks {
            return Err(Error::InvalidLevel {
                level: self.0,
                blocks,
            });
        }
        Ok(())
    }
}

impl fmt::Display for LevelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for LevelIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: i32 = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad level {s:?}")))?;
        LevelIndex::new(v)
    }
}

/// Parses a comma-separated level list such as `-1,-2,-3`, deduplicated and
/// sorted into canonical order.
pub fn parse_levels(s: &str) -> Result<Vec<LevelIndex>> {
    let mut v = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<LevelIndex>>>()?;
    v.sort();
    v.dedup();
    if v.is_empty() {
        return Err(Error::Config("empty level list".into()));
    }
    Ok(v)
}

/// Architecture of one sample-level network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub scale: Scale,
    /// Output channels of the front-end and of every hidden block.
    pub channels: usize,
    pub num_outputs: usize,
    pub task: Task,
}

impl ModelSpec {
    pub const DEFAULT_CHANNELS: usize = 64;

    pub fn new(scale: Scale, channels: usize, num_outputs: usize, task: Task) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidSpec("channels must be >= 1".into()));
        }
        if num_outputs == 0 {
            return Err(Error::InvalidSpec("num_outputs must be >= 1".into()));
        }
        scale.input_length()?;
        Ok(ModelSpec {
            scale,
            channels,
            num_outputs,
            task,
        })
    }

    pub fn m(&self) -> usize {
        self.scale.m()
    }

    pub fn n(&self) -> usize {
        self.scale.n()
    }

    pub fn input_length(&self) -> Result<usize> {
        self.scale.input_length()
    }

    /// Trainable scalar count, from the layer stack: front-end conv
    /// (`m·C + C`), its batchnorm (`2C`), `n` blocks of (`m·C² + C + 2C`) and
    /// the 1-tap head (`C·K + K`).
    pub fn param_count(&self) -> usize {
        let (m, c, k) = (self.m(), self.channels, self.num_outputs);
        let frontend = m * c + c + 2 * c;
        let block = m * c * c + c + 2 * c;
        frontend + self.n() * block + c * k + k
    }

    /// Running-statistic scalars stored alongside the parameters.
    pub fn buffer_count(&self) -> usize {
        2 * self.channels * (self.n() + 1)
    }
}

/// Length of the input to the network's output layer at level `-j`: `m^(j-1)`.
pub fn level_time(scale: Scale, level: LevelIndex) -> usize {
    scale.m().pow(level.depth() as u32 - 1)
}
