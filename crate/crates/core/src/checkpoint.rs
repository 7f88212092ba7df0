//! Model checkpoints: the canonical architecture descriptor followed by every
//! parameter and running statistic as little-endian `f32`.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::container::{self, ContainerError, DType, TensorEntry};
use crate::model::{Param, RunningStats, VaeModel};
use crate::tensor::{Real, Tensor};
use crate::zoo::{ArchitectureSpec, ModelError, ModelKind};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCVZ";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("checkpoint descriptor is invalid: {0}")]
    Descriptor(ModelError),
    #[error("checkpoint descriptor and tensor payload disagree: {0}")]
    Inconsistent(String),
    #[error("architecture mismatch: expected {expected}, checkpoint holds {found}")]
    ArchitectureMismatch {
        expected: ModelKind,
        found: ModelKind,
    },
}

fn entries<T: Real>(model: &VaeModel<T>) -> Vec<TensorEntry> {
    let entry = |name: String, t: &Tensor<T>| TensorEntry {
        name,
        dtype: DType::F32,
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|v| v.as_f64() as f32 as f64).collect(),
    };
    let mut out: Vec<_> = model
        .params()
        .iter()
        .map(|p| entry(p.name.clone(), &p.value))
        .collect();
    for s in model.running_stats() {
        out.push(entry(format!("{}.running_mean", s.block), &s.mean));
        out.push(entry(format!("{}.running_var", s.block), &s.var));
    }
    out
}

pub fn to_bytes<T: Real>(model: &VaeModel<T>) -> Vec<u8> {
    container::encode(CHECKPOINT_MAGIC, &model.arch().to_string(), &entries(model))
        .expect("model tensors are well-formed")
}

/// Exact byte length of the checkpoint `save_checkpoint` would write.
pub fn serialized_size<T: Real>(model: &VaeModel<T>) -> usize {
    container::encoded_len(&model.arch().to_string(), &entries(model))
}

pub fn from_bytes(bytes: &[u8]) -> Result<VaeModel<f32>, CheckpointError> {
    let c = container::decode(CHECKPOINT_MAGIC, bytes)?;
    let arch: ArchitectureSpec = c.header.parse().map_err(CheckpointError::Descriptor)?;
    let mut tensors = c.tensors.into_iter();
    let mut next = |expected: &str| -> Result<Tensor<f32>, CheckpointError> {
        let t = tensors
            .next()
            .ok_or_else(|| CheckpointError::Inconsistent(format!("missing tensor `{expected}`")))?;
        if t.name != expected {
            return Err(CheckpointError::Inconsistent(format!(
                "expected tensor `{expected}`, found `{}`",
                t.name
            )));
        }
        if t.dtype != DType::F32 {
            return Err(CheckpointError::Inconsistent(format!(
                "tensor `{expected}` is not f32"
            )));
        }
        Tensor::new(t.shape, t.data.into_iter().map(|v| v as f32).collect())
            .map_err(|e| CheckpointError::Inconsistent(e.to_string()))
    };
    // Layout of a fresh model of the same architecture gives the expected names and shapes.
    let reference = VaeModel::init(arch.clone(), 0).map_err(CheckpointError::Descriptor)?;
    let mut params = Vec::with_capacity(reference.params().len());
    for p in reference.params() {
        params.push(Param {
            name: p.name.clone(),
            value: next(&p.name)?,
        });
    }
    let mut stats = Vec::with_capacity(reference.running_stats().len());
    for s in reference.running_stats() {
        stats.push(RunningStats {
            block: s.block.clone(),
            mean: next(&format!("{}.running_mean", s.block))?,
            var: next(&format!("{}.running_var", s.block))?,
        });
    }
    if let Some(extra) = tensors.next() {
        return Err(CheckpointError::Inconsistent(format!(
            "unexpected extra tensor `{}`",
            extra.name
        )));
    }
    VaeModel::from_parts(arch, params, stats)
        .map_err(|e| CheckpointError::Inconsistent(e.to_string()))
}

pub fn save_checkpoint<T: Real>(model: &VaeModel<T>, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(model)).map_err(ContainerError::Io)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<VaeModel<f32>, CheckpointError> {
    let bytes = fs::read(path).map_err(ContainerError::Io)?;
    from_bytes(&bytes)
}

pub fn load_checkpoint_as(
    path: &Path,
    expected: ModelKind,
) -> Result<VaeModel<f32>, CheckpointError> {
    let model = load_checkpoint(path)?;
    if model.kind() != expected {
        return Err(CheckpointError::ArchitectureMismatch {
            expected,
            found: model.kind(),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_cnn_vae, build_scvae};

    #[test]
    fn round_trip_preserves_f32_model() {
        let model = build_cnn_vae(4, 3, 2, 3).unwrap();
        let loaded = from_bytes(&to_bytes(&model)).unwrap();
        assert_eq!(loaded, model.cast::<f32>());
        assert_eq!(to_bytes(&loaded), to_bytes(&model));
    }

    #[test]
    fn size_matches_bytes() {
        let model = build_scvae(8, 5, 10, 1).unwrap();
        assert_eq!(serialized_size(&model), to_bytes(&model).len());
        assert_eq!(serialized_size(&model), serialized_size(&model.clone()));
    }

    #[test]
    fn descriptor_payload_disagreement_is_inconsistent() {
        let model = build_scvae(4, 3, 2, 1).unwrap();
        let other = build_scvae(4, 4, 2, 1).unwrap();
        let bytes = container::encode(
            CHECKPOINT_MAGIC,
            &model.arch().to_string(),
            &entries(&other),
        )
        .unwrap();
        assert!(matches!(
            from_bytes(&bytes),
            Err(CheckpointError::Inconsistent(_))
        ));
    }

    #[test]
    fn wrong_kind_is_architecture_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&build_cnn_vae(4, 3, 2, 1).unwrap(), &path).unwrap();
        assert!(load_checkpoint_as(&path, ModelKind::CnnVae).is_ok());
        assert!(matches!(
            load_checkpoint_as(&path, ModelKind::Scvae),
            Err(CheckpointError::ArchitectureMismatch { .. })
        ));
    }
}
