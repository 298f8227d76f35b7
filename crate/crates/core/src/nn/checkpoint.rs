//! Single-file checkpoints.
//!
//! ```text
//! crossalign-ckpt-v1
//! meta variant proposed
//! param speech_enc.fwd.W_x 400x34 0
//! param speech_enc.fwd.W_h 400x100 54400
//! ...
//! end
//! <raw little-endian f32 values, row-major, at the listed byte offsets>
//! ```
//!
//! Offsets count from the first byte after the `end` line.

use std::fs;
use std::path::Path;

use super::param::Parameter;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const VERSION_TAG: &str = "crossalign-ckpt-v1";

#[derive(Debug, Clone)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub entries: Vec<CheckpointEntry>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_params<F: Real>(meta: Vec<(String, String)>, params: &[&Parameter<F>]) -> Self {
        Checkpoint {
            meta,
            entries: params
                .iter()
                .map(|p| CheckpointEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().iter().map(|v| v.as_f64() as f32).collect(),
                })
                .collect(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{VERSION_TAG}\n");
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(usize::to_string).collect();
            header.push_str(&format!("param {} {} {}\n", e.name, dims.join("x"), offset));
            offset += e.values.len() * 4;
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.reserve(offset);
        for e in &self.entries {
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut ckpt = Checkpoint::default();
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| ckpt_err("truncated header"))?;
            let line = std::str::from_utf8(&rest[..end]).map_err(|_| ckpt_err("header is not UTF-8"))?;
            *pos += end + 1;
            Ok(line.to_string())
        };
        let tag = next_line(&mut pos)?;
        if tag != VERSION_TAG {
            return Err(ckpt_err(format!("unsupported version tag {tag:?}, expected {VERSION_TAG}")));
        }
        let mut layout = Vec::new();
        loop {
            let line = next_line(&mut pos)?;
            if line == "end" {
                break;
            }
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), v) => ckpt.meta.push((k.to_string(), v.unwrap_or("").to_string())),
                (Some("param"), Some(name), Some(rest)) => {
                    let (shape, offset) = rest
                        .split_once(' ')
                        .ok_or_else(|| ckpt_err(format!("bad param line {line:?}")))?;
                    let shape: Vec<usize> = shape
                        .split('x')
                        .map(|d| d.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| ckpt_err(format!("bad shape for {name}")))?;
                    let offset: usize = offset
                        .parse()
                        .map_err(|_| ckpt_err(format!("bad offset for {name}")))?;
                    layout.push((name.to_string(), shape, offset));
                }
                _ => return Err(ckpt_err(format!("unrecognized header line {line:?}"))),
            }
        }
        let data = &bytes[pos..];
        for (name, shape, offset) in layout {
            let n: usize = shape.iter().product();
            let end = offset + n * 4;
            if end > data.len() {
                return Err(ckpt_err(format!("data for {name} runs past end of file")));
            }
            let values = data[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ckpt.entries.push(CheckpointEntry { name, shape, values });
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Copies stored values into `params`, which must match by name and shape
    /// one to one.
    pub fn restore<F: Real>(&self, params: Vec<&mut Parameter<F>>) -> Result<()> {
        if params.len() != self.entries.len() {
            return Err(ckpt_err(format!(
                "model has {} parameters, checkpoint has {}",
                params.len(),
                self.entries.len()
            )));
        }
        for p in params {
            let e = self
                .entries
                .iter()
                .find(|e| e.name == p.name)
                .ok_or_else(|| ckpt_err(format!("parameter {} missing from checkpoint", p.name)))?;
            if e.shape != p.value.shape() {
                return Err(ckpt_err(format!(
                    "parameter {}: checkpoint shape {:?}, model shape {:?}",
                    p.name,
                    e.shape,
                    p.value.shape()
                )));
            }
            let values = e.values.iter().map(|&v| F::lit(f64::from(v))).collect();
            p.value = Tensor::from_vec(&e.shape, values)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<Parameter<f64>> {
        let mut a = Parameter::zeros("enc.W", &[2, 3]);
        a.value.data_mut().copy_from_slice(&[1.0, -2.0, 3.5, 0.25, 0.0, -1e-3]);
        let mut b = Parameter::zeros("head.W", &[4]);
        b.value.data_mut().copy_from_slice(&[9.0, 8.0, 7.0, 6.0]);
        vec![a, b]
    }

    #[test]
    fn header_is_text_then_raw_floats() {
        let ps = params();
        let ckpt = Checkpoint::from_params(vec![("variant".into(), "proposed".into())], &ps.iter().collect::<Vec<_>>());
        let bytes = ckpt.to_bytes();
        let header = "crossalign-ckpt-v1\nmeta variant proposed\nparam enc.W 2x3 0\nparam head.W 4 24\nend\n";
        assert!(bytes.starts_with(header.as_bytes()));
        assert_eq!(bytes.len(), header.len() + 40);
        assert_eq!(&bytes[header.len()..header.len() + 4], &1.0f32.to_le_bytes());
    }

    #[test]
    fn restore_round_trips_and_rejects_mismatch() {
        let ps = params();
        let ckpt = Checkpoint::from_bytes(&Checkpoint::from_params(vec![], &ps.iter().collect::<Vec<_>>()).to_bytes()).unwrap();
        let mut fresh = vec![Parameter::<f64>::zeros("head.W", &[4]), Parameter::zeros("enc.W", &[2, 3])];
        ckpt.restore(fresh.iter_mut().collect()).unwrap();
        assert_eq!(fresh[1].value.data()[2], 3.5);

        let mut wrong = vec![Parameter::<f64>::zeros("head.W", &[5]), Parameter::zeros("enc.W", &[2, 3])];
        let err = ckpt.restore(wrong.iter_mut().collect()).unwrap_err().to_string();
        assert!(err.contains("head.W"), "{err}");
    }

    #[test]
    fn rejects_unknown_version() {
        assert!(Checkpoint::from_bytes(b"crossalign-ckpt-v0\nend\n").is_err());
    }
}
