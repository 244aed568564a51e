//! Checkpoint container: magic, header length, JSON header, little-endian
//! f64 parameter blocks, and a SHA-256 over everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::ClassicalModel;
use crate::circuits::{CircuitSpec, ParamStore};
use crate::error::{Error, Result};
use crate::kgdata::Vocab;
use crate::model::{EntityRepr, Model, ModelKind, QceEntity, QuantumModel};
use crate::qtree::AmplitudeTree;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"QKGECKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitDescriptor {
    pub n_qubits: usize,
    pub block_ranges: Vec<usize>,
    pub entity_prelude: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: ModelKind,
    pub num_entities: usize,
    pub num_predicates: usize,
    pub rank: usize,
    pub lambda: f64,
    pub circuit: Option<CircuitDescriptor>,
    pub entity_vocab_sha256: String,
    pub predicate_vocab_sha256: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub metrics: serde_json::Value,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub header: Header,
    pub blocks: Vec<Vec<f64>>,
}

pub fn vocab_hash(v: &Vocab) -> String {
    let mut h = Sha256::new();
    for n in v.names() {
        h.update(n.as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn model_blocks(model: &Model) -> Vec<(String, Vec<f64>)> {
    let mut blocks = model.param_blocks();
    if let Model::Quantum(QuantumModel {
        entities: EntityRepr::Amplitude(v),
        ..
    }) = model
    {
        blocks.push(("entity_trees".to_string(), v.iter().flat_map(|e| e.tree.to_flat()).collect()));
    }
    blocks
}

impl ModelCheckpoint {
    pub fn new(
        model: &Model,
        entities: &Vocab,
        predicates: &Vocab,
        config: &TrainConfig,
        metrics: serde_json::Value,
    ) -> Self {
        let (rank, lambda, circuit) = match model {
            Model::Quantum(q) => (
                q.predicate_spec.dim(),
                0.0,
                Some(CircuitDescriptor {
                    n_qubits: q.n_qubits(),
                    block_ranges: q.predicate_spec.block_ranges(),
                    entity_prelude: q.entity_spec.hadamard_prelude,
                }),
            ),
            Model::Classical(c) => (c.rank, c.lambda, None),
        };
        let named = model_blocks(model);
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: model.kind(),
            num_entities: model.num_entities(),
            num_predicates: model.num_predicates(),
            rank,
            lambda,
            circuit,
            entity_vocab_sha256: vocab_hash(entities),
            predicate_vocab_sha256: vocab_hash(predicates),
            config: config.clone(),
            seed: config.seed,
            metrics,
            blocks: named
                .iter()
                .map(|(name, b)| BlockInfo {
                    name: name.clone(),
                    len: b.len(),
                })
                .collect(),
        };
        Self {
            header,
            blocks: named.into_iter().map(|(_, b)| b).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let payload: usize = self.blocks.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(8 + 4 + header.len() + 8 * payload + 32);
        out.extend_from_slice(MAGIC);
        let len = u32::try_from(header.len()).map_err(|_| Error::TooLarge(header.len()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&header);
        for b in &self.blocks {
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::ChecksumMismatch);
        }
        let len = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
        let header_end = 12usize
            .checked_add(len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::Checkpoint("header length out of range".into()))?;
        let probe: serde_json::Value = serde_json::from_slice(&body[12..header_end])?;
        let found = probe.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found,
                expected: FORMAT_VERSION,
            });
        }
        let header: Header = serde_json::from_value(probe)?;
        let mut at = header_end;
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for info in &header.blocks {
            let end = at + 8 * info.len;
            if end > body.len() {
                return Err(Error::Checkpoint(format!("block {} truncated", info.name)));
            }
            blocks.push(
                body[at..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            );
            at = end;
        }
        if at != body.len() {
            return Err(Error::Checkpoint("trailing bytes after parameter blocks".into()));
        }
        Ok(Self { header, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn block(&self, name: &str) -> Result<&[f64]> {
        self.header
            .blocks
            .iter()
            .position(|b| b.name == name)
            .map(|i| self.blocks[i].as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))
    }

    /// Rebuilds the model exactly as saved.
    pub fn model(&self) -> Result<Model> {
        let h = &self.header;
        if !h.kind.is_quantum() {
            let mut m = ClassicalModel::zeros(h.kind, h.rank, h.num_entities, h.num_predicates, h.lambda)?;
            let fill = |dst: &mut Vec<f64>, src: &[f64], name: &str| {
                if dst.len() != src.len() {
                    return Err(Error::Checkpoint(format!("block {name} has the wrong size")));
                }
                dst.copy_from_slice(src);
                Ok(())
            };
            fill(&mut m.entities, self.block("entities")?, "entities")?;
            fill(&mut m.predicates, self.block("predicates")?, "predicates")?;
            if h.kind == ModelKind::Tucker {
                fill(&mut m.core, self.block("core")?, "core")?;
            }
            return Ok(Model::Classical(m));
        }
        let c = h
            .circuit
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("circuit descriptor missing".into()))?;
        let predicate_spec = CircuitSpec::build(c.n_qubits, false)?;
        let entity_spec = CircuitSpec::build(c.n_qubits, c.entity_prelude)?;
        if predicate_spec.block_ranges() != c.block_ranges {
            return Err(Error::Checkpoint("circuit layout differs from this build".into()));
        }
        let per = predicate_spec.param_count();
        let split_stores = |flat: &[f64], n: usize| -> Result<Vec<ParamStore>> {
            if flat.len() != n * per {
                return Err(Error::Checkpoint("gate block has the wrong size".into()));
            }
            Ok(flat.chunks_exact(per).enumerate().map(|(i, c)| ParamStore::from_flat(i, c)).collect())
        };
        let predicates = split_stores(self.block("predicates")?, h.num_predicates)?;
        let entities = match h.kind {
            ModelKind::Fqce => EntityRepr::Circuit(split_stores(self.block("entity_circuits")?, h.num_entities)?),
            _ => {
                let dim = predicate_spec.dim();
                let vectors = self.block("entity_vectors")?;
                let trees = self.block("entity_trees")?;
                let tlen = 3 * dim - 1;
                if vectors.len() != h.num_entities * dim || trees.len() != h.num_entities * tlen {
                    return Err(Error::Checkpoint("entity block has the wrong size".into()));
                }
                let mut ents = Vec::with_capacity(h.num_entities);
                for (v, t) in vectors.chunks_exact(dim).zip(trees.chunks_exact(tlen)) {
                    ents.push(QceEntity {
                        vector: v.to_vec(),
                        tree: AmplitudeTree::from_flat(c.n_qubits, t)?,
                    });
                }
                EntityRepr::Amplitude(ents)
            }
        };
        Ok(Model::Quantum(QuantumModel {
            kind: h.kind,
            predicate_spec,
            entity_spec,
            predicates,
            entities,
        }))
    }

    pub fn check_vocab(&self, entities: &Vocab, predicates: &Vocab) -> Result<()> {
        if vocab_hash(entities) != self.header.entity_vocab_sha256
            || vocab_hash(predicates) != self.header.predicate_vocab_sha256
        {
            return Err(Error::Checkpoint("dataset vocabulary does not match the checkpoint".into()));
        }
        Ok(())
    }
}
