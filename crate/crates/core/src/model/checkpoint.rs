//! `SLCNNCK1` container: 8-byte magic, a `u32` little-endian header length,
//! a UTF-8 `key=value` header, then raw little-endian `f32` tensor data in
//! header order.
//!
//! Header layout:
//!
//! ```text
//! format_version=1
//! kind=<samplecnn|classifier>
//! <spec fields, one key=value per line>
//! tensor_count=<K>
//! tensor=<name> <batch>x<channels>x<time> <byte offset into data>
//! ...
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Parameterized, Shape, Tensor};

use super::network::SampleCnn;
use super::spec::{ModelSpec, Scale, Task};

pub const MAGIC: &[u8; 8] = b"SLCNNCK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f32>,
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    /// Spec fields in file order.
    pub fields: Vec<(String, String)>,
    pub tensors: Vec<TensorEntry>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Container {
            kind: kind.to_string(),
            fields: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn field(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::MalformedHeader(format!("missing field {key:?}")))
    }

    pub fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::MalformedHeader(format!("bad value {raw:?} for {key:?}")))
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        self.tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape(),
            data: t.as_slice().iter().map(|v| v.as_f32()).collect(),
        });
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("format_version={FORMAT_VERSION}\nkind={}\n", self.kind);
        for (k, v) in &self.fields {
            header.push_str(&format!("{k}={v}\n"));
        }
        header.push_str(&format!("tensor_count={}\n", self.tensors.len()));
        let mut offset = 0usize;
        for t in &self.tensors {
            let [b, c, tm] = t.shape.dims();
            header.push_str(&format!("tensor={} {b}x{c}x{tm} {offset}\n", t.name));
            offset += 4 * t.data.len();
        }
        let mut out = Vec::with_capacity(12 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(bytes) {
                Error::Truncated("magic".into())
            } else {
                Error::BadMagic
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        let len_bytes = bytes
            .get(8..12)
            .ok_or_else(|| Error::Truncated("header length".into()))?;
        let hlen = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        let header = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::Truncated(format!("header of {hlen} bytes")))?;
        let header = std::str::from_utf8(header).map_err(|e| Error::MalformedHeader(e.to_string()))?;
        let data = &bytes[12 + hlen..];

        let mut lines = header.lines();
        let version = lines
            .next()
            .and_then(|l| l.strip_prefix("format_version="))
            .ok_or_else(|| Error::MalformedHeader("first line must be format_version".into()))?;
        let version: u32 = version
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("bad version {version:?}")))?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }

        let mut kind = None;
        let mut fields = Vec::new();
        let mut tensors = Vec::new();
        let mut expected_count = None;
        let mut expected_offset = 0usize;
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::MalformedHeader(format!("line {line:?}")))?;
            match k {
                "kind" => kind = Some(v.to_string()),
                "tensor_count" => {
                    expected_count = Some(
                        v.parse::<usize>()
                            .map_err(|_| Error::MalformedHeader(format!("tensor_count {v:?}")))?,
                    )
                }
                "tensor" => {
                    let entry = parse_tensor_line(v, expected_offset, data)?;
                    expected_offset += 4 * entry.data.len();
                    tensors.push(entry);
                }
                _ => fields.push((k.to_string(), v.to_string())),
            }
        }
        let kind = kind.ok_or_else(|| Error::MalformedHeader("missing kind".into()))?;
        if expected_count != Some(tensors.len()) {
            return Err(Error::MalformedHeader(format!(
                "tensor_count {:?} but {} tensor lines",
                expected_count,
                tensors.len()
            )));
        }
        if data.len() != expected_offset {
            return Err(Error::MalformedHeader(format!(
                "{} trailing data bytes",
                data.len() - expected_offset
            )));
        }
        Ok(Container { kind, fields, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies the named tensors into `model`. Names and shapes must match exactly.
    pub fn load_into<T: Scalar>(&self, model: &mut (impl Parameterized<T> + ?Sized)) -> Result<()> {
        let mut it = self.tensors.iter();
        let mut err = None;
        let mut take = |name: &str, dst: &mut Tensor<T>| {
            if err.is_some() {
                return;
            }
            match it.next() {
                Some(e) if e.name == name && e.shape == dst.shape() => {
                    for (d, &s) in dst.as_mut_slice().iter_mut().zip(&e.data) {
                        *d = T::of_f32(s);
                    }
                }
                Some(e) => {
                    err = Some(Error::MalformedHeader(format!(
                        "expected tensor {name} {}, found {} {}",
                        dst.shape(),
                        e.name,
                        e.shape
                    )))
                }
                None => err = Some(Error::MalformedHeader(format!("missing tensor {name}"))),
            }
        };
        model.visit_params(&mut |name, p| take(name, &mut p.value));
        model.visit_buffers(&mut |name, b| take(name, b));
        if let Some(e) = err {
            return Err(e);
        }
        if it.next().is_some() {
            return Err(Error::MalformedHeader("unexpected extra tensors".into()));
        }
        Ok(())
    }

    /// Appends every parameter, then every buffer, of `model`.
    pub fn store_from<T: Scalar>(&mut self, model: &mut (impl Parameterized<T> + ?Sized)) {
        let mut entries = Vec::new();
        model.visit_params(&mut |name, p| entries.push((name.to_string(), p.value.clone())));
        model.visit_buffers(&mut |name, b| entries.push((name.to_string(), b.clone())));
        for (name, t) in entries {
            self.push_tensor(&name, &t);
        }
    }
}

fn parse_tensor_line(v: &str, expected_offset: usize, data: &[u8]) -> Result<TensorEntry> {
    let bad = || Error::MalformedHeader(format!("tensor line {v:?}"));
    let mut parts = v.split(' ');
    let name = parts.next().ok_or_else(bad)?.to_string();
    let dims: Vec<usize> = parts
        .next()
        .ok_or_else(bad)?
        .split('x')
        .map(|d| d.parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let offset: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    if dims.len() != 3 || parts.next().is_some() || offset != expected_offset {
        return Err(bad());
    }
    let shape = Shape::new(dims[0], dims[1], dims[2]);
    let bytes = shape.len().checked_mul(4).ok_or_else(bad)?;
    let raw = data
        .get(offset..offset + bytes)
        .ok_or_else(|| Error::Truncated(format!("tensor {name}")))?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(TensorEntry { name, shape, data })
}

pub const SAMPLECNN_KIND: &str = "samplecnn";

/// Serializes a network with its pipeline sample rate.
pub fn checkpoint_bytes<T: Scalar>(model: &SampleCnn<T>, sample_rate: u32) -> Vec<u8> {
    let mut model = model.clone();
    let spec = *model.spec();
    let mut c = Container::new(SAMPLECNN_KIND);
    c.field("m", spec.m())
        .field("n", spec.n())
        .field("channels", spec.channels)
        .field("num_outputs", spec.num_outputs)
        .field("task", spec.task)
        .field("sample_rate", sample_rate);
    c.store_from(&mut model);
    c.to_bytes()
}

pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(SampleCnn<T>, u32)> {
    let c = Container::from_bytes(bytes)?;
    if c.kind != SAMPLECNN_KIND {
        return Err(Error::MalformedHeader(format!("kind {:?} is not {SAMPLECNN_KIND}", c.kind)));
    }
    let scale = Scale::new(c.parse("m")?, c.parse("n")?).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let task: Task = c.get("task")?.parse().map_err(|e: Error| Error::MalformedHeader(e.to_string()))?;
    let spec = ModelSpec::new(scale, c.parse("channels")?, c.parse("num_outputs")?, task)
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let sample_rate = c.parse("sample_rate")?;
    let mut model = SampleCnn::new(spec, 0)?;
    c.load_into(&mut model)?;
    Ok((model, sample_rate))
}

pub fn save_checkpoint<T: Scalar>(model: &SampleCnn<T>, sample_rate: u32, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model, sample_rate)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(SampleCnn<T>, u32)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SampleCnn<f32> {
        let spec = ModelSpec::new(Scale::new(2, 2).unwrap(), 4, 3, Task::MultiLabel).unwrap();
        SampleCnn::new(spec, 7).unwrap()
    }

    #[test]
    fn byte_length_matches_formula() {
        let net = small();
        let bytes = checkpoint_bytes(&net, 22050);
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let spec = net.spec();
        assert_eq!(bytes.len(), 8 + 4 + hlen + 4 * (spec.param_count() + spec.buffer_count()));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = checkpoint_bytes(&small(), 22050);
        bytes[0] = b'X';
        assert!(matches!(model_from_bytes::<f32>(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn version_mismatch() {
        let bytes = checkpoint_bytes(&small(), 22050);
        let text = String::from_utf8_lossy(&bytes).replacen("format_version=1", "format_version=9", 1);
        assert!(matches!(
            model_from_bytes::<f32>(text.as_bytes()),
            Err(Error::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn truncation_at_every_region() {
        let bytes = checkpoint_bytes(&small(), 22050);
        for cut in [4, 10, 30, bytes.len() - 1] {
            assert!(
                matches!(model_from_bytes::<f32>(&bytes[..cut]), Err(Error::Truncated(_))),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn trailing_garbage_is_malformed() {
        let mut bytes = checkpoint_bytes(&small(), 22050);
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(model_from_bytes::<f32>(&bytes), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn kind_must_match() {
        let mut c = Container::new("classifier");
        c.field("x", 1);
        assert!(model_from_bytes::<f32>(&c.to_bytes()).is_err());
    }
}
