//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "D2FC"
//! 4       4     format version, u32 little-endian
//! 8       8     header length H in bytes, u64 little-endian
//! 16      H     UTF-8 JSON header
//! 16+H    ...   tensor payload: IEEE-754 f32 values, little-endian
//! ```
//!
//! The header holds the layer specs of every network, a tensor directory
//! (`name`, `shape`, byte `offset` into the payload, element `len`), the
//! batch-norm tracking counters, optional optimizer hyperparameters and step
//! counts, the training step and a free-form config snapshot.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiscriminatorNet, GeneratorNet, LayerSpec, Sequential};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::training::{AdamConfig, AdamState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"D2FC";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub generator: AdamState,
    pub discriminator: Option<AdamState>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub generator: GeneratorNet,
    pub discriminator: Option<DiscriminatorNet>,
    pub optimizer: Option<OptimizerState>,
    pub step: u64,
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct SequentialHeader {
    in_channels: usize,
    layers: Vec<serde_json::Value>,
    /// Batch-norm layer index -> number of batches folded into its running stats.
    bn_tracked: BTreeMap<usize, u64>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    config: AdamConfig,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    networks: BTreeMap<String, SequentialHeader>,
    optimizers: BTreeMap<String, AdamHeader>,
    tensors: Vec<TensorEntry>,
    step: u64,
    config: serde_json::Value,
}

struct Writer {
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl Writer {
    fn push(&mut self, name: String, shape: Shape, data: &[f32]) {
        self.entries.push(TensorEntry {
            name,
            shape: shape.0,
            offset: self.payload.len() as u64,
            len: data.len() as u64,
        });
        for v in data {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn sequential(&mut self, prefix: &str, net: &Sequential) -> SequentialHeader {
        let mut bn_tracked = BTreeMap::new();
        for (i, layer) in net.layers().iter().enumerate() {
            for (pname, t) in layer.param_names().iter().zip(layer.params()) {
                self.push(format!("{prefix}.{i}.{pname}"), t.shape(), t.data());
            }
            if let Some(st) = layer.running_stats() {
                let shape = Shape::new(st.mean.len(), 1, 1, 1);
                self.push(format!("{prefix}.{i}.running_mean"), shape, &st.mean);
                self.push(format!("{prefix}.{i}.running_var"), shape, &st.var);
                bn_tracked.insert(i, st.tracked);
            }
        }
        SequentialHeader {
            in_channels: net.in_channels(),
            layers: net
                .specs()
                .iter()
                .map(|s| serde_json::to_value(s).expect("layer specs serialize"))
                .collect(),
            bn_tracked,
        }
    }

    fn adam(&mut self, prefix: &str, state: &AdamState, names: &[(String, Shape)]) -> AdamHeader {
        for ((name, shape), (m, v)) in names.iter().zip(state.m.iter().zip(&state.v)) {
            self.push(format!("{prefix}.m.{name}"), *shape, m);
            self.push(format!("{prefix}.v.{name}"), *shape, v);
        }
        AdamHeader {
            config: state.config,
            t: state.t,
        }
    }
}

struct Reader<'a> {
    directory: BTreeMap<String, &'a TensorEntry>,
    payload: &'a [u8],
}

impl Reader<'_> {
    fn tensor(&self, name: &str, expected: Shape) -> Result<Vec<f32>> {
        let e = self
            .directory
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if Shape(e.shape) != expected {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {expected}",
                Shape(e.shape)
            )));
        }
        if e.len as usize != expected.numel() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} length {} does not match its shape",
                e.len
            )));
        }
        let start = e.offset as usize;
        let end = start
            .checked_add(e.len as usize * 4)
            .filter(|&end| end <= self.payload.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!("truncated file: tensor {name} extends past the end"))
            })?;
        Ok(self.payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    fn sequential(&self, prefix: &str, h: &SequentialHeader) -> Result<Sequential> {
        let specs = h
            .layers
            .iter()
            .enumerate()
            .map(|(i, v)| {
                serde_json::from_value::<LayerSpec>(v.clone()).map_err(|e| {
                    let kind = v.get("kind").and_then(|k| k.as_str()).unwrap_or("<none>");
                    Error::Checkpoint(format!(
                        "{prefix} layer {i}: unknown or malformed layer kind `{kind}`: {e}"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut net = Sequential::from_specs(h.in_channels, specs)
            .map_err(|e| Error::Checkpoint(format!("{prefix}: {e}")))?;
        for (i, layer) in net.layers_mut().iter_mut().enumerate() {
            let names = layer.param_names();
            for (pname, t) in names.iter().zip(layer.params_mut().iter_mut()) {
                let data = self.tensor(&format!("{prefix}.{i}.{pname}"), t.shape())?;
                t.data_mut().copy_from_slice(&data);
            }
            if let Some(st) = layer.running_stats_mut() {
                let shape = Shape::new(st.mean.len(), 1, 1, 1);
                st.mean = self.tensor(&format!("{prefix}.{i}.running_mean"), shape)?;
                st.var = self.tensor(&format!("{prefix}.{i}.running_var"), shape)?;
                st.tracked = *h.bn_tracked.get(&i).ok_or_else(|| {
                    Error::Checkpoint(format!("{prefix} layer {i}: missing batch-norm counter"))
                })?;
            }
        }
        Ok(net)
    }

    fn adam(&self, prefix: &str, h: &AdamHeader, names: &[(String, Shape)]) -> Result<AdamState> {
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for (name, shape) in names {
            m.push(self.tensor(&format!("{prefix}.m.{name}"), *shape)?);
            v.push(self.tensor(&format!("{prefix}.v.{name}"), *shape)?);
        }
        Ok(AdamState {
            config: h.config,
            t: h.t,
            m,
            v,
        })
    }
}

fn shapes(named: Vec<(String, &Tensor)>) -> Vec<(String, Shape)> {
    named.into_iter().map(|(n, t)| (n, t.shape())).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer {
            entries: Vec::new(),
            payload: Vec::new(),
        };
        let mut networks = BTreeMap::new();
        networks.insert(
            "generator.encoder".to_string(),
            w.sequential("generator.encoder", &self.generator.encoder),
        );
        networks.insert(
            "generator.decoder".to_string(),
            w.sequential("generator.decoder", &self.generator.decoder),
        );
        if let Some(d) = &self.discriminator {
            networks.insert(
                "discriminator.features".to_string(),
                w.sequential("discriminator.features", &d.features),
            );
            networks.insert(
                "discriminator.head".to_string(),
                w.sequential("discriminator.head", &d.head),
            );
        }
        let mut optimizers = BTreeMap::new();
        if let Some(opt) = &self.optimizer {
            let names = shapes(self.generator.named_params());
            optimizers.insert(
                "generator".to_string(),
                w.adam("adam.generator", &opt.generator, &names),
            );
            if let (Some(ds), Some(d)) = (&opt.discriminator, &self.discriminator) {
                let names = shapes(d.named_params());
                optimizers.insert(
                    "discriminator".to_string(),
                    w.adam("adam.discriminator", ds, &names),
                );
            }
        }
        let header = Header {
            networks,
            optimizers,
            tensors: w.entries,
            step: self.step,
            config: self.config.clone(),
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + w.payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&w.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE {
            return Err(Error::Checkpoint(format!(
                "truncated file: {} bytes is shorter than the preamble",
                bytes.len()
            )));
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic bytes {:?}, expected \"D2FC\"",
                &bytes[0..4]
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads version {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[PREAMBLE..];
        if hlen > body.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: header claims {hlen} bytes, {} available",
                body.len()
            )));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        let reader = Reader {
            directory: header.tensors.iter().map(|e| (e.name.clone(), e)).collect(),
            payload: &body[hlen..],
        };
        let net = |name: &str| -> Result<Option<Sequential>> {
            header
                .networks
                .get(name)
                .map(|h| reader.sequential(name, h))
                .transpose()
        };
        let missing = |name: &str| Error::Checkpoint(format!("missing network {name}"));
        let generator = GeneratorNet::from_parts(
            net("generator.encoder")?.ok_or_else(|| missing("generator.encoder"))?,
            net("generator.decoder")?.ok_or_else(|| missing("generator.decoder"))?,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let discriminator = match (net("discriminator.features")?, net("discriminator.head")?) {
            (Some(f), Some(h)) => Some(
                DiscriminatorNet::from_parts(f, h).map_err(|e| Error::Checkpoint(e.to_string()))?,
            ),
            (None, None) => None,
            _ => return Err(Error::Checkpoint("incomplete discriminator".into())),
        };
        let optimizer = match header.optimizers.get("generator") {
            Some(gh) => {
                let gstate =
                    reader.adam("adam.generator", gh, &shapes(generator.named_params()))?;
                let dstate = match (header.optimizers.get("discriminator"), &discriminator) {
                    (Some(dh), Some(d)) => {
                        Some(reader.adam("adam.discriminator", dh, &shapes(d.named_params()))?)
                    }
                    (Some(_), None) => {
                        return Err(Error::Checkpoint(
                            "discriminator optimizer state without a discriminator".into(),
                        ))
                    }
                    _ => None,
                };
                Some(OptimizerState {
                    generator: gstate,
                    discriminator: dstate,
                })
            }
            None => None,
        };
        Ok(Checkpoint {
            generator,
            discriminator,
            optimizer,
            step: header.step,
            config: header.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
