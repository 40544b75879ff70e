//! Checkpoint archives: a JSON manifest (kind tag, config, seed, step
//! count, loss history) followed by raw parameter blocks keyed by name.
//!
//! Layout, bit-exact:
//!
//! ```text
//! bytes 0..4   magic "SVCK"
//! u32le        manifest length L
//! L bytes      UTF-8 JSON manifest
//! u32le        block count
//! per block:   u32le name length, name bytes,
//!              u32le ndim, ndim x u32le dims,
//!              payload of f32 little-endian values
//! ```
//!
//! Adam moments are stored alongside the weights as `<name>.adam_m` /
//! `<name>.adam_v` blocks so a resumed run continues bitwise identically.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::interp::{InterpConfig, InterpStepLoss, InterpTrainer};
use crate::motion::{MotionConfig, MotionStepLoss, MotionTrainer};
use crate::params::{Adam, ParamSet};

const MAGIC: &[u8; 4] = b"SVCK";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    seed: u64,
    steps: u64,
    adam_t: u64,
    config: serde_json::Value,
    loss_history: serde_json::Value,
}

fn write_archive(path: &Path, manifest: &Manifest, params: &ParamSet) -> Result<()> {
    let manifest_json = serde_json::to_vec(manifest)
        .map_err(|e| NetError::Checkpoint(format!("manifest serialization: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&manifest_json);
    let blocks: Vec<(String, &ArrayD<f32>)> = params
        .blocks
        .iter()
        .flat_map(|b| {
            [
                (b.name.clone(), &b.value),
                (format!("{}.adam_m", b.name), &b.m),
                (format!("{}.adam_v", b.name), &b.v),
            ]
        })
        .collect();
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, data) in blocks {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let shape = data.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in data.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Archive {
    manifest: Manifest,
    blocks: Vec<(String, ArrayD<f32>)>,
}

fn read_archive(path: &Path) -> Result<Archive> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(NetError::Checkpoint(format!(
                "truncated archive at offset {pos}"
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let magic = take(&mut pos, 4)?;
    if magic != MAGIC {
        return Err(NetError::Checkpoint(format!(
            "bad magic {magic:?}, expected \"SVCK\""
        )));
    }
    let mlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let manifest: Manifest = serde_json::from_slice(take(&mut pos, mlen)?)
        .map_err(|e| NetError::Checkpoint(format!("manifest parse: {e}")))?;
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, nlen)?.to_vec())
            .map_err(|e| NetError::Checkpoint(format!("block name: {e}")))?;
        let ndim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let payload = take(&mut pos, n * 4)?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blocks.push((
            name,
            ArrayD::from_shape_vec(IxDyn(&shape), values)
                .map_err(|e| NetError::Checkpoint(format!("block shape: {e}")))?,
        ));
    }
    Ok(Archive { manifest, blocks })
}

fn restore_params(params: &mut ParamSet, archive: &Archive) -> Result<()> {
    let lookup = |name: &str| -> Result<&ArrayD<f32>> {
        archive
            .blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
            .ok_or_else(|| NetError::Checkpoint(format!("missing block {name}")))
    };
    for block in &mut params.blocks {
        let value = lookup(&block.name)?;
        let m = lookup(&format!("{}.adam_m", block.name))?;
        let v = lookup(&format!("{}.adam_v", block.name))?;
        if value.shape() != block.value.shape() {
            return Err(NetError::Checkpoint(format!(
                "block {} has shape {:?}, expected {:?}",
                block.name,
                value.shape(),
                block.value.shape()
            )));
        }
        block.value = value.clone();
        block.m = m.clone();
        block.v = v.clone();
    }
    Ok(())
}

/// Write a motion trainer checkpoint.
pub fn save_motion(trainer: &MotionTrainer, path: impl AsRef<Path>) -> Result<()> {
    let manifest = Manifest {
        kind: "motion".into(),
        seed: trainer.seed,
        steps: trainer.history.len() as u64,
        adam_t: trainer.adam.t,
        config: serde_json::to_value(&trainer.net.config)
            .map_err(|e| NetError::Checkpoint(e.to_string()))?,
        loss_history: serde_json::to_value(&trainer.history)
            .map_err(|e| NetError::Checkpoint(e.to_string()))?,
    };
    write_archive(path.as_ref(), &manifest, &trainer.net.params)
}

/// Load a motion trainer checkpoint (weights, Adam moments, history).
pub fn load_motion(path: impl AsRef<Path>) -> Result<MotionTrainer> {
    let archive = read_archive(path.as_ref())?;
    if archive.manifest.kind != "motion" {
        return Err(NetError::Checkpoint(format!(
            "checkpoint kind is {:?}, expected \"motion\"",
            archive.manifest.kind
        )));
    }
    let config: MotionConfig = serde_json::from_value(archive.manifest.config.clone())
        .map_err(|e| NetError::Checkpoint(format!("config parse: {e}")))?;
    let history: Vec<MotionStepLoss> =
        serde_json::from_value(archive.manifest.loss_history.clone())
            .map_err(|e| NetError::Checkpoint(format!("history parse: {e}")))?;
    let mut trainer = MotionTrainer::new(config, archive.manifest.seed)?;
    restore_params(&mut trainer.net.params, &archive)?;
    trainer.adam = Adam {
        t: archive.manifest.adam_t,
        ..Adam::new(trainer.net.config.learning_rate)
    };
    trainer.history = history;
    Ok(trainer)
}

/// Write an interpolation trainer checkpoint.
pub fn save_interp(trainer: &InterpTrainer, path: impl AsRef<Path>) -> Result<()> {
    let manifest = Manifest {
        kind: "interp".into(),
        seed: trainer.seed,
        steps: trainer.history.len() as u64,
        adam_t: trainer.adam.t,
        config: serde_json::to_value(&trainer.net.config)
            .map_err(|e| NetError::Checkpoint(e.to_string()))?,
        loss_history: serde_json::to_value(&trainer.history)
            .map_err(|e| NetError::Checkpoint(e.to_string()))?,
    };
    write_archive(path.as_ref(), &manifest, &trainer.net.params)
}

/// Load an interpolation trainer checkpoint.
pub fn load_interp(path: impl AsRef<Path>) -> Result<InterpTrainer> {
    let archive = read_archive(path.as_ref())?;
    if archive.manifest.kind != "interp" {
        return Err(NetError::Checkpoint(format!(
            "checkpoint kind is {:?}, expected \"interp\"",
            archive.manifest.kind
        )));
    }
    let config: InterpConfig = serde_json::from_value(archive.manifest.config.clone())
        .map_err(|e| NetError::Checkpoint(format!("config parse: {e}")))?;
    let history: Vec<InterpStepLoss> =
        serde_json::from_value(archive.manifest.loss_history.clone())
            .map_err(|e| NetError::Checkpoint(format!("history parse: {e}")))?;
    let mut trainer = InterpTrainer::new(config, archive.manifest.seed)?;
    restore_params(&mut trainer.net.params, &archive)?;
    trainer.adam = Adam {
        t: archive.manifest.adam_t,
        ..Adam::new(trainer.net.config.learning_rate)
    };
    trainer.history = history;
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmp(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("svck_{tag}_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir.join("ckpt.svck")
    }

    #[test]
    fn motion_round_trip_is_bitwise() {
        let path = tmp("motion");
        let mut trainer = MotionTrainer::new(
            MotionConfig {
                base_width: 4,
                encoder_convs: 0,
                ..MotionConfig::default()
            },
            9,
        )
        .unwrap();
        trainer.history.push(MotionStepLoss {
            step: 0,
            total: 0.5,
            similarity: 0.4,
            smoothness: 0.1,
        });
        trainer.adam.t = 1;
        save_motion(&trainer, &path).unwrap();
        let loaded = load_motion(&path).unwrap();
        assert!(loaded.net.params.values_bitwise_eq(&trainer.net.params));
        assert_eq!(loaded.adam.t, 1);
        assert_eq!(loaded.history.len(), 1);
        assert_eq!(loaded.history[0].total.to_bits(), 0.5f64.to_bits());
        assert_eq!(loaded.seed, 9);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let path = tmp("kind");
        let trainer = MotionTrainer::new(
            MotionConfig {
                base_width: 4,
                encoder_convs: 0,
                ..MotionConfig::default()
            },
            2,
        )
        .unwrap();
        save_motion(&trainer, &path).unwrap();
        assert!(matches!(
            load_interp(&path),
            Err(NetError::Checkpoint(_))
        ));
    }

    #[test]
    fn truncated_archive_is_rejected() {
        let path = tmp("trunc");
        let trainer = MotionTrainer::new(
            MotionConfig {
                base_width: 4,
                encoder_convs: 0,
                ..MotionConfig::default()
            },
            3,
        )
        .unwrap();
        save_motion(&trainer, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 17]).unwrap();
        assert!(matches!(load_motion(&path), Err(NetError::Checkpoint(_))));
    }
}
