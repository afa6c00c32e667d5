//! Checkpoint container.
//!
//! Layout:
//!
//! ```text
//! FUNCNET-CKPT <version> <header bytes>\n
//! <JSON header>
//! <zero padding to a 64-byte boundary>
//! <blob section>
//! ```
//!
//! The blob section holds little-endian f32 arrays, each starting on a
//! 64-byte boundary relative to the section start and followed by zero
//! padding. Descriptors in the header must tile the section exactly, and a
//! CRC32 of the whole section is stored in the header.

use std::fs;
use std::path::Path;

use funcnet_tensor::{Shape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelKind, NetworkConfig};
use crate::train::{AdamState, TrainConfig, Trainer, TrainerState};

pub const MAGIC: &str = "FUNCNET-CKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const BLOB_ALIGN: usize = 64;
const FORMAT_NAME: &str = "funcnet-checkpoint";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobDesc {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub network: NetworkConfig,
    pub train: Option<TrainConfig>,
    pub iteration: u64,
    pub seed: u64,
    /// Parameter value a plain export was materialized at.
    pub materialized_at: Option<f64>,
    pub trainer: Option<TrainerState>,
    pub blobs: Vec<BlobDesc>,
    pub blob_bytes: u64,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn align_up(n: usize) -> usize {
    n.div_ceil(BLOB_ALIGN) * BLOB_ALIGN
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Checkpoint of a model without optimizer state.
    pub fn from_model(
        model: &Model<f32>,
        train: Option<TrainConfig>,
        iteration: u64,
        seed: u64,
    ) -> Self {
        let tensors = model
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        Checkpoint::assemble(
            model.kind(),
            model.config().clone(),
            train,
            iteration,
            seed,
            None,
            None,
            tensors,
        )
    }

    /// Full training state: model, optimizer moments and trainer counters.
    pub fn from_trainer(trainer: &Trainer) -> Self {
        let named = trainer.model.named_tensors();
        let mut tensors: Vec<_> = named
            .iter()
            .map(|(n, t)| (n.clone(), (*t).clone()))
            .collect();
        for (prefix, moments) in [(ADAM_M, &trainer.adam.m), (ADAM_V, &trainer.adam.v)] {
            for ((n, _), m) in named.iter().zip(moments) {
                tensors.push((format!("{prefix}{n}"), m.clone()));
            }
        }
        Checkpoint::assemble(
            trainer.model.kind(),
            trainer.model.config().clone(),
            Some(trainer.config.clone()),
            trainer.iteration,
            trainer.config.seed,
            None,
            Some(trainer.state()),
            tensors,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        kind: ModelKind,
        network: NetworkConfig,
        train: Option<TrainConfig>,
        iteration: u64,
        seed: u64,
        materialized_at: Option<f64>,
        trainer: Option<TrainerState>,
        tensors: Vec<(String, Tensor<f32>)>,
    ) -> Self {
        let mut blobs = Vec::with_capacity(tensors.len());
        let mut cursor = 0usize;
        for (name, t) in &tensors {
            let length = 4 * t.numel();
            blobs.push(BlobDesc {
                name: name.clone(),
                shape: t.dims().to_vec(),
                offset: cursor as u64,
                length: length as u64,
            });
            cursor = align_up(cursor + length);
        }
        let mut ckpt = Checkpoint {
            header: Header {
                format: FORMAT_NAME.into(),
                version: FORMAT_VERSION,
                kind,
                network,
                train,
                iteration,
                seed,
                materialized_at,
                trainer,
                blobs,
                blob_bytes: cursor as u64,
                crc32: 0,
            },
            tensors,
        };
        ckpt.header.crc32 = crc32fast::hash(&ckpt.blob_section());
        ckpt
    }

    fn blob_section(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.header.blob_bytes as usize];
        for (desc, (_, t)) in self.header.blobs.iter().zip(&self.tensors) {
            let start = desc.offset as usize;
            for (i, v) in t.data().iter().enumerate() {
                out[start + 4 * i..start + 4 * i + 4].copy_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let json = serde_json::to_string(&self.header).expect("header serializes");
        let mut out = format!("{MAGIC} {FORMAT_VERSION} {}\n", json.len()).into_bytes();
        out.extend_from_slice(json.as_bytes());
        out.resize(align_up(out.len()), 0);
        out.extend(self.blob_section());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .take(64)
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing preamble line"))?;
        let preamble =
            std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("preamble is not text"))?;
        let fields: Vec<&str> = preamble.split(' ').collect();
        if fields.len() != 3 || fields[0] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        if fields[1] != FORMAT_VERSION.to_string() {
            return Err(bad(format!("unsupported format version {}", fields[1])));
        }
        let header_len: usize = fields[2].parse().map_err(|_| bad("bad header length"))?;
        let header_end = nl + 1 + header_len;
        let json = bytes
            .get(nl + 1..header_end)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(bad("header format mismatch"));
        }
        let data_start = align_up(header_end);
        let padding = bytes
            .get(header_end..data_start)
            .ok_or_else(|| bad("truncated header padding"))?;
        if padding.iter().any(|&b| b != 0) {
            return Err(bad("nonzero header padding"));
        }
        let section = &bytes[data_start.min(bytes.len())..];
        if section.len() as u64 != header.blob_bytes {
            return Err(bad(format!(
                "blob section is {} bytes, header declares {}",
                section.len(),
                header.blob_bytes
            )));
        }
        if crc32fast::hash(section) != header.crc32 {
            return Err(bad("blob checksum mismatch"));
        }
        let mut cursor = 0usize;
        let mut tensors = Vec::with_capacity(header.blobs.len());
        for d in &header.blobs {
            let shape = Shape::new(d.shape.clone()).map_err(|e| bad(format!("{}: {e}", d.name)))?;
            if d.offset as usize != cursor || d.length as usize != 4 * shape.numel() {
                return Err(bad(format!(
                    "descriptor {} does not tile the blob section",
                    d.name
                )));
            }
            let end = cursor + d.length as usize;
            let padded = align_up(end);
            if padded > section.len() {
                return Err(bad(format!(
                    "descriptor {} runs past the blob section",
                    d.name
                )));
            }
            if section[end..padded].iter().any(|&b| b != 0) {
                return Err(bad(format!("nonzero padding after {}", d.name)));
            }
            let data = section[cursor..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((d.name.clone(), Tensor::new(shape, data)?));
            cursor = padded;
        }
        if cursor != section.len() {
            return Err(bad("descriptors do not cover the blob section"));
        }
        Ok(Checkpoint { header, tensors })
    }

    /// Writes through a temporary file so a failed write leaves no partial
    /// checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn is_optimizer(name: &str) -> bool {
        name.starts_with(ADAM_M) || name.starts_with(ADAM_V)
    }

    /// Bytes of the blob section excluding optimizer state.
    pub fn parameter_blob_bytes(&self) -> u64 {
        self.header
            .blobs
            .iter()
            .filter(|d| !Self::is_optimizer(&d.name))
            .map(|d| align_up(d.length as usize) as u64)
            .sum()
    }

    pub fn model(&self) -> Result<Model<f32>> {
        let params: Vec<_> = self
            .tensors
            .iter()
            .filter(|(n, _)| !Self::is_optimizer(n))
            .map(|(_, t)| t.clone())
            .collect();
        let model = Model::from_tensors(self.header.kind, self.header.network.clone(), params)?;
        for ((expected, _), (found, _)) in model.named_tensors().iter().zip(&self.tensors) {
            if expected != found {
                return Err(bad(format!("expected blob {expected}, found {found}")));
            }
        }
        Ok(model)
    }

    /// Restores a trainer, including optimizer moments.
    pub fn trainer(&self) -> Result<Trainer> {
        let train = self
            .header
            .train
            .clone()
            .ok_or_else(|| bad("checkpoint has no training configuration"))?;
        let state = self
            .header
            .trainer
            .ok_or_else(|| bad("checkpoint has no optimizer state"))?;
        let model = self.model()?;
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        let moments = |prefix: &str| -> Result<Vec<Tensor<f32>>> {
            names
                .iter()
                .map(|n| {
                    let key = format!("{prefix}{n}");
                    self.tensors
                        .iter()
                        .find(|(k, _)| *k == key)
                        .map(|(_, t)| t.clone())
                        .ok_or_else(|| bad(format!("missing optimizer blob {key}")))
                })
                .collect()
        };
        let adam = AdamState {
            m: moments(ADAM_M)?,
            v: moments(ADAM_V)?,
            step: state.adam_step,
        };
        let mut trainer = Trainer::from_model(model, train)?;
        for ((a, b), name) in adam.m.iter().zip(&trainer.adam.m).zip(&names) {
            if a.shape() != b.shape() {
                return Err(bad(format!(
                    "optimizer blob for {name} has the wrong shape"
                )));
            }
        }
        trainer.adam = adam;
        trainer.iteration = self.header.iteration;
        trainer.initial_loss = state.initial_loss;
        trainer.diverge_run = state.diverge_run;
        Ok(trainer)
    }
}
