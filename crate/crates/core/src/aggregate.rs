//! Multi-level, multi-scale song features.
//!
//! Per segment, each tapped block activation (channels x time) is averaged
//! over time. Per song, those vectors are averaged over segments, summing in
//! segment-offset order so the result does not depend on how segments were
//! enumerated. Song vectors of every (scale, level) block are then
//! concatenated by scale (ascending `(m, n)`) and level (-3, -2, -1).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::audio::{resample, segment, SegmentBatch, WaveClip};
use crate::error::{Error, Result};
use crate::model::{LevelIndex, SampleCnn, Scale};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Time-averaged activation of one block for one segment (or song).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelFeature<T> {
    pub scale: Scale,
    pub level: LevelIndex,
    pub vector: Vec<T>,
}

/// All level features of a single segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures<T> {
    pub offset: usize,
    pub features: Vec<LevelFeature<T>>,
}

/// How per-segment vectors are summarized into a song vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Summary {
    #[default]
    Mean,
    /// Mean followed by the per-dimension population std; doubles block length.
    MeanStd,
}

impl Summary {
    pub fn factor(self) -> usize {
        match self {
            Summary::Mean => 1,
            Summary::MeanStd => 2,
        }
    }
}

impl FromStr for Summary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(Summary::Mean),
            "mean+std" | "mean_std" => Ok(Summary::MeanStd),
            other => Err(Error::Config(format!("unknown summary {other:?}"))),
        }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Summary::Mean => "mean",
            Summary::MeanStd => "mean+std",
        })
    }
}

const EXTRACT_CHUNK: usize = 64;

fn time_mean<T: Scalar>(t: &Tensor<T>, b: usize) -> Vec<T> {
    let s = t.shape();
    let inv = T::one() / T::from_usize_lossy(s.time);
    (0..s.channels)
        .map(|c| t.row(b, c).iter().copied().sum::<T>() * inv)
        .collect()
}

/// Inference-mode level features for every segment of `batch`.
pub fn extract_level_features<T: Scalar>(
    model: &SampleCnn<T>,
    batch: &SegmentBatch<T>,
    levels: &[LevelIndex],
) -> Result<Vec<SegmentFeatures<T>>> {
    let scale = model.spec().scale;
    for l in levels {
        l.check(scale.n())?;
    }
    if batch.segment_length != model.input_length() {
        return Err(Error::SegmentLength {
            expected: model.input_length(),
            actual: batch.segment_length,
        });
    }
    let mut out = Vec::with_capacity(batch.len());
    let idx: Vec<usize> = (0..batch.len()).collect();
    for chunk in idx.chunks(EXTRACT_CHUNK) {
        let x = batch.data.gather_batch(chunk);
        let taps = model.forward_with_taps(&x, levels)?;
        for (b, &i) in chunk.iter().enumerate() {
            let features = levels
                .iter()
                .map(|&level| LevelFeature {
                    scale,
                    level,
                    vector: time_mean(&taps[&level], b),
                })
                .collect();
            out.push(SegmentFeatures {
                offset: batch.offsets[i],
                features,
            });
        }
    }
    Ok(out)
}

/// Song vectors keyed by block.
pub type SongBlocks<T> = BTreeMap<(Scale, LevelIndex), Vec<T>>;

/// Averages segment features per (scale, level), summing in offset order.
pub fn aggregate_song<T: Scalar>(segments: &[SegmentFeatures<T>], summary: Summary) -> Result<SongBlocks<T>> {
    if segments.is_empty() {
        return Err(Error::EmptyInput("aggregate_song"));
    }
    let mut grouped: BTreeMap<(Scale, LevelIndex), Vec<(usize, &[T])>> = BTreeMap::new();
    for seg in segments {
        for f in &seg.features {
            grouped
                .entry((f.scale, f.level))
                .or_default()
                .push((seg.offset, &f.vector));
        }
    }
    let mut out = BTreeMap::new();
    for (key, mut vs) in grouped {
        vs.sort_by_key(|(off, _)| *off);
        let dim = vs[0].1.len();
        if let Some((_, bad)) = vs.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::LengthMismatch {
                op: "aggregate_song",
                left: dim,
                right: bad.len(),
            });
        }
        let inv = T::one() / T::from_usize_lossy(vs.len());
        let mut mean = vec![T::zero(); dim];
        for (_, v) in &vs {
            for (m, &x) in mean.iter_mut().zip(*v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv);
        if summary == Summary::MeanStd {
            let mut var = vec![T::zero(); dim];
            for (_, v) in &vs {
                for ((s, &x), &m) in var.iter_mut().zip(*v).zip(&mean) {
                    *s += (x - m) * (x - m);
                }
            }
            mean.extend(var.into_iter().map(|s| (s * inv).sqrt()));
        }
        out.insert(key, mean);
    }
    Ok(out)
}

/// Position of one block inside a song vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub scale: Scale,
    pub level: LevelIndex,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, tiling block table of a song vector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    pub blocks: Vec<BlockLayout>,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.blocks.last().map(|b| b.offset + b.len).unwrap_or(0)
    }

    /// Offsets start at zero and each block begins where the previous ended.
    pub fn is_tiling(&self) -> bool {
        let mut at = 0;
        for b in &self.blocks {
            if b.offset != at || b.len == 0 {
                return false;
            }
            at += b.len;
        }
        true
    }

    pub fn scales(&self) -> Vec<Scale> {
        let mut v: Vec<Scale> = self.blocks.iter().map(|b| b.scale).collect();
        v.dedup();
        v
    }

    pub fn levels(&self) -> Vec<LevelIndex> {
        let mut v: Vec<LevelIndex> = self.blocks.iter().map(|b| b.level).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Sub-layout with only the requested blocks, plus the source ranges to copy.
    pub fn select(&self, scales: &[Scale], levels: &[LevelIndex]) -> Result<(Layout, Vec<std::ops::Range<usize>>)> {
        let (scales, levels) = canonical(scales, levels);
        let mut blocks = Vec::new();
        let mut ranges = Vec::new();
        let mut at = 0;
        for &scale in &scales {
            for &level in &levels {
                let b = self
                    .blocks
                    .iter()
                    .find(|b| b.scale == scale && b.level == level)
                    .ok_or(Error::MissingBlock {
                        scale: scale.to_string(),
                        level: level.get(),
                    })?;
                blocks.push(BlockLayout {
                    scale,
                    level,
                    offset: at,
                    len: b.len,
                });
                ranges.push(b.offset..b.offset + b.len);
                at += b.len;
            }
        }
        Ok((Layout { blocks }, ranges))
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}:{}:{}", b.scale, b.level, b.offset, b.len)?;
        }
        Ok(())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::FeatureFile(format!("bad block {m:?}"));
        let mut blocks = Vec::new();
        for part in s.split(',').filter(|p| !p.is_empty()) {
            let f: Vec<&str> = part.split(':').collect();
            if f.len() != 4 {
                return Err(bad(part));
            }
            blocks.push(BlockLayout {
                scale: f[0].parse().map_err(|_| bad(part))?,
                level: f[1].parse().map_err(|_| bad(part))?,
                offset: f[2].parse().map_err(|_| bad(part))?,
                len: f[3].parse().map_err(|_| bad(part))?,
            });
        }
        let layout = Layout { blocks };
        if !layout.is_tiling() {
            return Err(Error::FeatureFile(format!("blocks do not tile the vector: {s}")));
        }
        Ok(layout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SongFeature<T> {
    pub song_id: String,
    pub vector: Vec<T>,
    pub layout: Layout,
}

fn canonical(scales: &[Scale], levels: &[LevelIndex]) -> (Vec<Scale>, Vec<LevelIndex>) {
    let mut s = scales.to_vec();
    s.sort();
    s.dedup();
    let mut l = levels.to_vec();
    l.sort();
    l.dedup();
    (s, l)
}

/// Concatenates the requested blocks in canonical order.
pub fn concat_scales<T: Scalar>(
    song_id: &str,
    blocks: &SongBlocks<T>,
    scales: &[Scale],
    levels: &[LevelIndex],
) -> Result<SongFeature<T>> {
    let (scales, levels) = canonical(scales, levels);
    let mut vector = Vec::new();
    let mut layout = Layout::default();
    for &scale in &scales {
        for &level in &levels {
            let v = blocks.get(&(scale, level)).ok_or(Error::MissingBlock {
                scale: scale.to_string(),
                level: level.get(),
            })?;
            layout.blocks.push(BlockLayout {
                scale,
                level,
                offset: vector.len(),
                len: v.len(),
            });
            vector.extend_from_slice(v);
        }
    }
    Ok(SongFeature {
        song_id: song_id.to_string(),
        vector,
        layout,
    })
}

/// Per-dimension z-scoring fitted on training songs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTransform<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl<T: Scalar> FeatureTransform<T> {
    pub fn fit(rows: &[&[T]]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::EmptyInput("standardize needs at least 2 training songs"));
        }
        let dim = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::LengthMismatch {
                op: "standardize",
                left: dim,
                right: bad.len(),
            });
        }
        let inv = T::one() / T::from_usize_lossy(rows.len());
        let mut mean = vec![T::zero(); dim];
        for r in rows {
            for (m, &x) in mean.iter_mut().zip(*r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv);
        let mut var = vec![T::zero(); dim];
        for r in rows {
            for ((v, &x), &m) in var.iter_mut().zip(*r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let floor = T::lit(STD_FLOOR);
        let std = var.into_iter().map(|v| (v * inv).sqrt().max(floor)).collect();
        Ok(FeatureTransform { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch {
                op: "standardize apply",
                left: self.dim(),
                right: x.len(),
            });
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect())
    }

    pub fn apply_song(&self, f: &SongFeature<T>) -> Result<SongFeature<T>> {
        Ok(SongFeature {
            song_id: f.song_id.clone(),
            vector: self.apply(&f.vector)?,
            layout: f.layout.clone(),
        })
    }
}

/// Fits a transform on `train` and returns it with the transformed songs.
pub fn standardize<T: Scalar>(train: &[SongFeature<T>]) -> Result<(FeatureTransform<T>, Vec<SongFeature<T>>)> {
    let rows: Vec<&[T]> = train.iter().map(|f| f.vector.as_slice()).collect();
    let t = FeatureTransform::fit(&rows)?;
    let applied = train.iter().map(|f| t.apply_song(f)).collect::<Result<_>>()?;
    Ok((t, applied))
}

/// Song-level feature vector of one clip from every model.
pub fn extract_song<T: Scalar>(
    models: &[&SampleCnn<T>],
    clip: &WaveClip,
    levels: &[LevelIndex],
    sample_rate: u32,
    summary: Summary,
) -> Result<SongFeature<T>> {
    let clip = resample(clip, sample_rate);
    let mut segs = Vec::new();
    for model in models {
        let batch = segment::<T>(&clip, model.input_length())?;
        segs.extend(extract_level_features(model, &batch, levels)?);
    }
    let blocks = aggregate_song(&segs, summary)?;
    let scales: Vec<Scale> = models.iter().map(|m| m.spec().scale).collect();
    concat_scales(&clip.id, &blocks, &scales, levels)
}

/// [`extract_song`] over many clips in parallel; results keep input order.
pub fn extract_songs<T: Scalar>(
    models: &[&SampleCnn<T>],
    clips: &[WaveClip],
    levels: &[LevelIndex],
    sample_rate: u32,
    summary: Summary,
) -> Result<Vec<SongFeature<T>>> {
    clips
        .par_iter()
        .map(|c| extract_song(models, c, levels, sample_rate, summary))
        .collect()
}

/// `SLFEAT1` feature file: a `#SLFEAT1 dim=<D> blocks=<scale:level:offset:len,...>`
/// header, then one `<song_id>\t<D floats>` line per song.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile<T> {
    pub layout: Layout,
    pub rows: Vec<(String, Vec<T>)>,
}

impl<T: Scalar> FeatureFile<T> {
    pub fn from_songs(songs: &[SongFeature<T>]) -> Result<Self> {
        let layout = songs.first().map(|s| s.layout.clone()).unwrap_or_default();
        if let Some(bad) = songs.iter().find(|s| s.layout != layout) {
            return Err(Error::FeatureFile(format!("song {} has a different layout", bad.song_id)));
        }
        Ok(FeatureFile {
            layout,
            rows: songs.iter().map(|s| (s.song_id.clone(), s.vector.clone())).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn songs(&self) -> Vec<SongFeature<T>> {
        self.rows
            .iter()
            .map(|(id, v)| SongFeature {
                song_id: id.clone(),
                vector: v.clone(),
                layout: self.layout.clone(),
            })
            .collect()
    }

    pub fn get(&self, song_id: &str) -> Option<&[T]> {
        self.rows.iter().find(|(id, _)| id == song_id).map(|(_, v)| v.as_slice())
    }

    /// Keeps only the requested blocks, re-laid out canonically.
    pub fn select(&self, scales: &[Scale], levels: &[LevelIndex]) -> Result<Self> {
        let (layout, ranges) = self.layout.select(scales, levels)?;
        let rows = self
            .rows
            .iter()
            .map(|(id, v)| {
                let sub = ranges.iter().flat_map(|r| v[r.clone()].iter().copied()).collect();
                (id.clone(), sub)
            })
            .collect();
        Ok(FeatureFile { layout, rows })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("#SLFEAT1 dim={} blocks={}\n", self.dim(), self.layout);
        for (id, v) in &self.rows {
            s.push_str(id);
            for x in v {
                s.push('\t');
                s.push_str(&x.to_string());
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::FeatureFile("empty file".into()))?;
        let rest = header
            .strip_prefix("#SLFEAT1 ")
            .ok_or_else(|| Error::FeatureFile("missing #SLFEAT1 header".into()))?;
        let mut dim = None;
        let mut layout = None;
        for tok in rest.split(' ') {
            if let Some(d) = tok.strip_prefix("dim=") {
                dim = Some(
                    d.parse::<usize>()
                        .map_err(|_| Error::FeatureFile(format!("bad dim {d:?}")))?,
                );
            } else if let Some(b) = tok.strip_prefix("blocks=") {
                layout = Some(b.parse::<Layout>()?);
            }
        }
        let dim = dim.ok_or_else(|| Error::FeatureFile("header lacks dim=".into()))?;
        let layout = layout.ok_or_else(|| Error::FeatureFile("header lacks blocks=".into()))?;
        if layout.dim() != dim {
            return Err(Error::FeatureFile(format!(
                "dim={dim} but blocks cover {}",
                layout.dim()
            )));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let id = parts.next().unwrap_or_default().to_string();
            let v: Vec<T> = parts
                .map(|p| {
                    p.parse::<T>()
                        .map_err(|_| Error::FeatureFile(format!("row {}: bad value {p:?}", i + 1)))
                })
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(Error::FeatureFile(format!(
                    "row {} ({id}) has {} values, expected {dim}",
                    i + 1,
                    v.len()
                )));
            }
            rows.push((id, v));
        }
        Ok(FeatureFile { layout, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
