//! WAV decoding, resampling and fixed-length segmentation.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PIPELINE_RATE: u32 = 22050;

/// Mono audio in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct WaveClip {
    pub id: String,
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl WaveClip {
    pub fn new(id: impl Into<String>, sample_rate: u32, samples: Vec<f32>) -> Self {
        WaveClip {
            id: id.into(),
            sample_rate,
            samples,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        // hound reports short reads as `Other`.
        hound::Error::IoError(io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::InvalidData | std::io::ErrorKind::Other
            ) =>
        {
            Error::MalformedWav(format!("{}: {io}", path.display()))
        }
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(msg) => Error::MalformedWav(format!("{}: {msg}", path.display())),
        hound::Error::UnfinishedSample => Error::MalformedWav(format!("{}: unfinished sample", path.display())),
        other => Error::UnsupportedWav(format!("{}: {other}", path.display())),
    }
}

/// Reads 16-bit PCM or 32-bit float WAV with one or two channels. Stereo is
/// averaged to mono; the clip id is the file stem.
pub fn decode_wav(path: &Path) -> Result<WaveClip> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::UnsupportedWav(format!(
            "{}: {} channels (only mono or stereo)",
            path.display(),
            spec.channels
        )));
    }
    let raw: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedWav(format!(
                "{}: {bits}-bit {fmt:?} samples (only 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::MalformedWav(format!("{}: non-finite sample {bad}", path.display())));
    }
    let samples = if spec.channels == 2 {
        raw.chunks_exact(2).map(|f| (f[0] + f[1]) * 0.5).collect()
    } else {
        raw
    };
    let samples = samples.into_iter().map(|v: f32| v.clamp(-1.0, 1.0)).collect();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(WaveClip {
        id,
        sample_rate: spec.sample_rate,
        samples,
    })
}

/// Writes mono 16-bit PCM, rounding `x * 32768` and saturating.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q).map_err(|e| map_hound(path, e))?;
    }
    w.finalize().map_err(|e| map_hound(path, e))
}

/// Linear-interpolation resampling; returns the clip unchanged when rates match.
pub fn resample(clip: &WaveClip, target_rate: u32) -> WaveClip {
    if clip.sample_rate == target_rate || clip.samples.is_empty() {
        return WaveClip {
            sample_rate: target_rate,
            ..clip.clone()
        };
    }
    let src = &clip.samples;
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let out_len = (((src.len() - 1) as f64) / ratio).floor() as usize + 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            match src.get(j + 1) {
                Some(&next) if frac > 0.0 => ((1.0 - frac) * src[j] as f64 + frac * next as f64) as f32,
                _ => src[j.min(src.len() - 1)],
            }
        })
        .collect();
    WaveClip {
        id: clip.id.clone(),
        sample_rate: target_rate,
        samples,
    }
}

/// Fixed-length excerpts of one clip, shape (segments, 1, segment_length).
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBatch<T: Scalar> {
    pub clip_id: String,
    pub segment_length: usize,
    pub data: Tensor<T>,
    /// Start sample of each segment in the source clip.
    pub offsets: Vec<usize>,
}

impl<T: Scalar> SegmentBatch<T> {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Number of segments [`segment`] produces for a clip of `len` samples.
pub fn segment_count(len: usize, segment_length: usize) -> usize {
    (len / segment_length).max(1)
}

/// Non-overlapping windows with hop `segment_length`. A trailing partial
/// window is dropped; a clip shorter than one window yields one right-padded
/// segment.
pub fn segment<T: Scalar>(clip: &WaveClip, segment_length: usize) -> Result<SegmentBatch<T>> {
    if segment_length == 0 {
        return Err(Error::InvalidSpec("segment length must be >= 1".into()));
    }
    if clip.samples.is_empty() {
        return Err(Error::EmptyClip(clip.id.clone()));
    }
    let count = segment_count(clip.samples.len(), segment_length);
    let mut data = Vec::with_capacity(count * segment_length);
    let mut offsets = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * segment_length;
        let end = (start + segment_length).min(clip.samples.len());
        data.extend(clip.samples[start..end].iter().map(|&v| T::of_f32(v)));
        data.resize((k + 1) * segment_length, T::zero());
        offsets.push(start);
    }
    Ok(SegmentBatch {
        clip_id: clip.id.clone(),
        segment_length,
        data: Tensor::from_vec([count, 1, segment_length], data)?,
        offsets,
    })
}
