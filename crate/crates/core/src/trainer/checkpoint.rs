//! Versioned binary checkpoint: magic, version, JSON header, raw f64 blobs.
//!
//! Layout: `b"LEOCLRCK"`, `u32` version, `u64` header length, the UTF-8 JSON
//! header, then every tensor as little-endian `f64` in header order.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, IxDyn};
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::seeding::{self, tag};

const MAGIC: &[u8; 8] = b"LEOCLRCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    pub buffer: Array2<f64>,
    pub write_pointer: usize,
    pub filled: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: RunConfig,
    pub query: Vec<Tensor>,
    pub key: Vec<Tensor>,
    pub velocity: Vec<Tensor>,
    pub queue: Option<QueueState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    config: RunConfig,
    config_hash: String,
    /// The key encoder is updated after each optimizer step.
    ema_after_optimizer_step: bool,
    sections: Vec<Section>,
    queue: Option<QueueHeader>,
}

#[derive(Serialize, Deserialize)]
struct Section {
    name: String,
    shapes: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct QueueHeader {
    write_pointer: usize,
    filled: usize,
}

fn shapes(ts: &[Tensor]) -> Vec<Vec<usize>> {
    ts.iter().map(|t| t.shape().to_vec()).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections = vec![
            Section {
                name: "query".into(),
                shapes: shapes(&self.query),
            },
            Section {
                name: "key".into(),
                shapes: shapes(&self.key),
            },
            Section {
                name: "velocity".into(),
                shapes: shapes(&self.velocity),
            },
        ];
        if let Some(q) = &self.queue {
            sections.push(Section {
                name: "queue".into(),
                shapes: vec![q.buffer.shape().to_vec()],
            });
        }
        let header = Header {
            step: self.step,
            config: self.config.clone(),
            config_hash: self.config.hash(),
            ema_after_optimizer_step: true,
            sections,
            queue: self.queue.as_ref().map(|q| QueueHeader {
                write_pointer: q.write_pointer,
                filled: q.filled,
            }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let blobs = self
            .query
            .iter()
            .chain(&self.key)
            .chain(&self.velocity)
            .map(|t| t.as_standard_layout().into_owned())
            .chain(self.queue.iter().map(|q| q.buffer.clone().into_dyn()));
        for t in blobs {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.config.hash() != header.config_hash {
            return Err(bad("config hash does not match the stored config"));
        }
        let mut cursor = 20 + hlen;
        let mut read = |shape: &[usize]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let raw = bytes
                .get(cursor..cursor + 8 * n)
                .ok_or_else(|| bad("truncated tensor data"))?;
            cursor += 8 * n;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Ok(Tensor::from_shape_vec(IxDyn(shape), data).expect("shape matches length"))
        };
        let mut query = Vec::new();
        let mut key = Vec::new();
        let mut velocity = Vec::new();
        let mut queue_buf = None;
        for sec in &header.sections {
            let dst = match sec.name.as_str() {
                "query" => &mut query,
                "key" => &mut key,
                "velocity" => &mut velocity,
                "queue" => {
                    let t = read(sec.shapes.first().ok_or_else(|| bad("queue section without shape"))?)?;
                    queue_buf = Some(t.into_dimensionality().map_err(|_| bad("queue buffer is not 2-d"))?);
                    continue;
                }
                other => return Err(Error::Checkpoint(format!("unknown section {other:?}"))),
            };
            for s in &sec.shapes {
                dst.push(read(s)?);
            }
        }
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let queue = match (queue_buf, header.queue) {
            (Some(buffer), Some(q)) => Some(QueueState {
                buffer,
                write_pointer: q.write_pointer,
                filled: q.filled,
            }),
            (None, None) => None,
            _ => return Err(bad("queue header and data disagree")),
        };
        Ok(Self {
            step: header.step,
            config: header.config,
            query,
            key,
            velocity,
            queue,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("bin.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The trained query encoder (backbone and projection head).
    pub fn query_encoder(&self) -> Result<Encoder> {
        let mut rng = seeding::stream(self.config.seed, &[tag::INIT]);
        let mut enc = Encoder::new(&self.config.arch, &mut rng)?;
        enc.load_state_tensors(&self.query)?;
        Ok(enc)
    }
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_step{step}.bin")
}

pub const LATEST: &str = "latest";

/// Resolves a checkpoint argument: a file, or a run directory with a `latest` pointer.
pub fn resolve_checkpoint(path: &Path) -> Result<std::path::PathBuf> {
    if path.is_dir() {
        let pointer = path.join(LATEST);
        let name = std::fs::read_to_string(&pointer).map_err(|e| Error::io(&pointer, e))?;
        return Ok(path.join(name.trim()));
    }
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    Ok(path.to_path_buf())
}
