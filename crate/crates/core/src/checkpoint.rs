//! Versioned binary checkpoint: magic, format version, a JSON header (config,
//! seeds, epoch, selection metric, topology, partition, parameter layout), then
//! every parameter value as little-endian f64.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::Partition;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Matrix, ParamEntry, ParamStore};
use crate::skeleton::SkeletonTopology;

pub const MAGIC: &[u8; 8] = b"GMAUCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub seed: u64,
    pub dropout_seed: u64,
    pub mc_seed: u64,
    pub augment_seed: u64,
}

impl Seeds {
    pub fn from_config(cfg: &Config) -> Self {
        Seeds {
            seed: cfg.train.seed,
            dropout_seed: cfg.train.dropout_seed,
            mc_seed: cfg.train.mc_seed,
            augment_seed: cfg.train.augment_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamLayout {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: Config,
    seeds: Seeds,
    epoch: usize,
    /// Validation AUC-ROC of the selected epoch.
    val_auc_roc: Option<f64>,
    val_loss: Option<f64>,
    topology: SkeletonTopology,
    partition: Option<Partition>,
    params: Vec<ParamLayout>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: Config,
    pub seeds: Seeds,
    pub epoch: usize,
    pub val_auc_roc: Option<f64>,
    pub val_loss: Option<f64>,
    pub topology: SkeletonTopology,
    pub partition: Option<Partition>,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        epoch: usize,
        val_auc_roc: Option<f64>,
        val_loss: Option<f64>,
        partition: Option<Partition>,
    ) -> Self {
        Checkpoint {
            config: model.config.clone(),
            seeds: Seeds::from_config(&model.config),
            epoch,
            val_auc_roc,
            val_loss,
            topology: model.topology.clone(),
            partition,
            store: model.store.clone(),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        Model::from_store(self.config.clone(), self.topology.clone(), self.store.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            seeds: self.seeds,
            epoch: self.epoch,
            val_auc_roc: self.val_auc_roc,
            val_loss: self.val_loss,
            topology: self.topology.clone(),
            partition: self.partition.clone(),
            params: self
                .store
                .entries()
                .iter()
                .map(|e| ParamLayout {
                    name: e.name.clone(),
                    rows: e.value.rows(),
                    cols: e.value.cols(),
                    trainable: e.trainable,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(json.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in self.store.entries() {
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let mut word = [0u8; 4];
        bytes.read_exact(&mut word).map_err(|_| bad("truncated version"))?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let mut len = [0u8; 8];
        bytes.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
        let len = u64::from_le_bytes(len) as usize;
        if bytes.len() < len {
            return Err(bad("truncated header"));
        }
        let (json, mut rest) = bytes.split_at(len);
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut entries = Vec::with_capacity(header.params.len());
        for p in header.params {
            let n = p.rows * p.cols;
            if rest.len() < n * 8 {
                return Err(bad("truncated parameter data"));
            }
            let data = rest[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            rest = &rest[n * 8..];
            entries.push(ParamEntry {
                name: p.name,
                value: Matrix::from_vec(p.rows, p.cols, data),
                trainable: p.trainable,
            });
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after parameter data"));
        }
        Ok(Checkpoint {
            config: header.config,
            seeds: header.seeds,
            epoch: header.epoch,
            val_auc_roc: header.val_auc_roc,
            val_loss: header.val_loss,
            topology: header.topology,
            partition: header.partition,
            store: ParamStore::from_entries(entries),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut cfg = Config::default();
        cfg.encoder.widths = vec![4];
        cfg.encoder.strides = vec![2];
        cfg.encoder.embedding_dim = 8;
        cfg.udm.hidden = vec![4];
        cfg.ufm.widths = [8, 2];
        let model = Model::new(cfg, SkeletonTopology::coco17()).unwrap();
        let ck = Checkpoint::from_model(&model, 3, Some(91.5), Some(0.3), None);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.store.max_abs_diff(&ck.store), 0.0);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.epoch, 3);
        assert_eq!(back.to_bytes(), ck.to_bytes());
        assert!(back.to_model().is_ok());
        let mut corrupt = ck.to_bytes();
        corrupt[0] = b'X';
        assert!(Checkpoint::from_bytes(&corrupt).is_err());
        assert!(Checkpoint::from_bytes(&ck.to_bytes()[..40]).is_err());
    }
}
