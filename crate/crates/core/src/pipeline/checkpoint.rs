//! Checkpoint directories: `meta.json` (kind, config snapshot, step and a
//! name -> offset/shape table) and `params.bin` (little-endian f64, in
//! table order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Conditioning;
use crate::diffcore::{ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::foresight::{ForesightConfig, ForesightModel};
use crate::policy::{ActionNorm, PolicyConfig, PolicyModel};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Foresight,
    Policy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    /// In scalars from the start of `params.bin`.
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub kind: ModelKind,
    pub global_step: usize,
    pub dtype: String,
    pub total_scalars: usize,
    pub digest: String,
    pub params: Vec<ParamEntry>,
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParameterStore,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, config: serde_json::Value, global_step: usize, params: ParameterStore) -> Self {
        let mut offset = 0;
        let entries = params
            .iter()
            .map(|(n, t)| {
                let e = ParamEntry {
                    name: n.clone(),
                    offset,
                    shape: t.shape().to_vec(),
                };
                offset += t.len();
                e
            })
            .collect();
        Checkpoint {
            meta: CheckpointMeta {
                version: CHECKPOINT_VERSION,
                kind,
                global_step,
                dtype: "f64le".into(),
                total_scalars: offset,
                digest: params.digest(),
                params: entries,
                config,
            },
            params,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob = Vec::with_capacity(self.meta.total_scalars * 8);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bin = dir.join("params.bin");
        fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))?;
        let meta = dir.join("meta.json");
        fs::write(&meta, serde_json::to_string_pretty(&self.meta)?).map_err(|e| Error::io(&meta, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("meta.json");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        if meta.version != CHECKPOINT_VERSION || meta.dtype != "f64le" {
            return Err(Error::Checkpoint(format!("unsupported checkpoint {} / {}", meta.version, meta.dtype)));
        }
        let bpath = dir.join("params.bin");
        let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        if blob.len() != meta.total_scalars * 8 {
            return Err(Error::Checkpoint(format!(
                "params.bin holds {} bytes, meta expects {}",
                blob.len(),
                meta.total_scalars * 8
            )));
        }
        let mut params = ParameterStore::new();
        for e in &meta.params {
            let n: usize = e.shape.iter().product();
            if e.offset + n > meta.total_scalars {
                return Err(Error::Checkpoint(format!("{} runs past the end of params.bin", e.name)));
            }
            let data = blob[e.offset * 8..(e.offset + n) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
        }
        if params.digest() != meta.digest {
            return Err(Error::Checkpoint("parameter digest mismatch".into()));
        }
        Ok(Checkpoint { meta, params })
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.meta.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind:?} checkpoint, found {:?}", self.meta.kind)));
        }
        Ok(())
    }
}

/// Requires `loaded` to carry exactly the parameter names and shapes of a
/// freshly built model.
fn check_layout(fresh: &ParameterStore, loaded: &ParameterStore) -> Result<()> {
    let same = fresh.len() == loaded.len()
        && fresh
            .iter()
            .all(|(n, t)| loaded.get(n).is_some_and(|l| l.shape() == t.shape()));
    if !same {
        return Err(Error::Checkpoint("parameter layout does not match the stored config".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForesightSnapshot {
    pub model: ForesightConfig,
    pub frame_stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForesightBundle {
    pub model: ForesightModel,
    pub frame_stride: usize,
    pub global_step: usize,
}

impl ForesightBundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let snap = ForesightSnapshot {
            model: self.model.config.clone(),
            frame_stride: self.frame_stride,
        };
        Checkpoint::new(ModelKind::Foresight, serde_json::to_value(snap)?, self.global_step, self.model.params.clone()).save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ck = Checkpoint::load(dir)?;
        ck.expect_kind(ModelKind::Foresight)?;
        let snap: ForesightSnapshot = serde_json::from_value(ck.meta.config.clone())?;
        let mut model = ForesightModel::new(snap.model, 0)?;
        check_layout(&model.params, &ck.params)?;
        model.params = ck.params;
        Ok(ForesightBundle {
            model,
            frame_stride: snap.frame_stride,
            global_step: ck.meta.global_step,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub model: PolicyConfig,
    pub norm: ActionNorm,
    pub conditioning: Conditioning,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyBundle {
    pub model: PolicyModel,
    pub conditioning: Conditioning,
    pub global_step: usize,
}

impl PolicyBundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let snap = PolicySnapshot {
            model: self.model.config.clone(),
            norm: self.model.norm.clone(),
            conditioning: self.conditioning.clone(),
        };
        Checkpoint::new(ModelKind::Policy, serde_json::to_value(snap)?, self.global_step, self.model.params.clone()).save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ck = Checkpoint::load(dir)?;
        ck.expect_kind(ModelKind::Policy)?;
        let snap: PolicySnapshot = serde_json::from_value(ck.meta.config.clone())?;
        let mut model = PolicyModel::new(snap.model, 0)?;
        check_layout(&model.params, &ck.params)?;
        model.params = ck.params;
        model.norm = snap.norm;
        Ok(PolicyBundle {
            model,
            conditioning: snap.conditioning,
            global_step: ck.meta.global_step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_foresight() -> ForesightModel {
        ForesightModel::new(
            ForesightConfig {
                n_layers: 1,
                hidden: 6,
                heads: 2,
                mlp_ratio: 2,
                max_frames: 3,
                patch_rows: 2,
                patch_cols: 2,
                feat_dim: 3,
            },
            4,
        )
        .unwrap()
    }

    #[test]
    fn foresight_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let b = ForesightBundle {
            model: tiny_foresight(),
            frame_stride: 2,
            global_step: 17,
        };
        b.save(dir.path()).unwrap();
        let back = ForesightBundle::load(dir.path()).unwrap();
        assert!(back.model.params.bitwise_eq(&b.model.params));
        assert_eq!(back, b);
    }

    #[test]
    fn truncated_blob_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let b = ForesightBundle {
            model: tiny_foresight(),
            frame_stride: 1,
            global_step: 0,
        };
        b.save(dir.path()).unwrap();
        let bin = dir.path().join("params.bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 5]).unwrap();
        let err = ForesightBundle::load(dir.path()).unwrap_err();
        assert_eq!(err.kind(), "checkpoint");
    }

    #[test]
    fn flipped_byte_fails_digest() {
        let dir = tempfile::tempdir().unwrap();
        let b = ForesightBundle {
            model: tiny_foresight(),
            frame_stride: 1,
            global_step: 0,
        };
        b.save(dir.path()).unwrap();
        let bin = dir.path().join("params.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[3] ^= 1;
        fs::write(&bin, bytes).unwrap();
        assert!(ForesightBundle::load(dir.path()).is_err());
    }

    #[test]
    fn kind_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        ForesightBundle {
            model: tiny_foresight(),
            frame_stride: 1,
            global_step: 0,
        }
        .save(dir.path())
        .unwrap();
        assert!(PolicyBundle::load(dir.path()).is_err());
    }
}
