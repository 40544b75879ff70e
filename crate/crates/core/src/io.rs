//! The `.svv` volume file format and the on-disk dataset layout.
//!
//! File layout, bit-exact:
//!
//! ```text
//! bytes 0..4    magic "SVV1"
//! bytes 4..8    u32 little-endian header length L
//! bytes 8..8+L  UTF-8 JSON header:
//!               {"dims":[D,H,W],"spacing":[sz,sy,sx],"dtype":"f32le","kind":...}
//! remainder     D*H*W (x3 for fields) f32 little-endian values,
//!               x fastest-varying; fields store (dx,dy,dz) per voxel
//! ```
//!
//! `kind` is `"volume"`, `"field"` or `"mask"`. Round-trips are bitwise
//! exact: payload bytes are the IEEE-754 bit patterns of the stored values.
//!
//! A dataset directory holds one subdirectory per sample with `ed.svv`,
//! `es.svv`, `t_<k>.svv` for the interiors and a `sample.json` manifest
//! listing the phase values; masks and exact fields, when present, are
//! stored as `mask_<stem>.svv` and `field_<stem>.svv`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::phantom::PhaseSample;
use crate::volume::{VectorField, Volume};

const MAGIC: &[u8; 4] = b"SVV1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SvvHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: String,
    kind: String,
}

fn write_svv(
    path: &Path,
    dims: [usize; 3],
    spacing: [f64; 3],
    kind: &str,
    values: impl Iterator<Item = f32>,
    count: usize,
) -> Result<()> {
    let header = SvvHeader {
        dims,
        spacing,
        dtype: "f32le".into(),
        kind: kind.into(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CoreError::BadHeader(format!("header serialization failed: {e}")))?;
    let mut buf = Vec::with_capacity(8 + header_json.len() + count * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    let mut written = 0usize;
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
        written += 1;
    }
    debug_assert_eq!(written, count);
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

fn read_svv(path: &Path) -> Result<(SvvHeader, Vec<f32>)> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 4 {
        return Err(CoreError::Truncated("file shorter than magic".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(CoreError::BadMagic {
            got: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    if bytes.len() < 8 {
        return Err(CoreError::Truncated("file ends inside header length".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(CoreError::Truncated(format!(
            "header declares {header_len} bytes, only {} available",
            bytes.len() - 8
        )));
    }
    let header: SvvHeader = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| CoreError::BadHeader(e.to_string()))?;
    if header.dtype != "f32le" {
        return Err(CoreError::BadHeader(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }
    let payload = &bytes[8 + header_len..];
    if payload.len() % 4 != 0 {
        return Err(CoreError::Truncated(format!(
            "payload length {} is not a multiple of 4",
            payload.len()
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let voxels = header.dims[0] * header.dims[1] * header.dims[2];
    let expected = match header.kind.as_str() {
        "field" => voxels * 3,
        "volume" | "mask" => voxels,
        other => {
            return Err(CoreError::BadHeader(format!("unknown kind {other:?}")));
        }
    };
    if values.len() != expected {
        return Err(CoreError::PayloadSize {
            expected,
            got: values.len(),
        });
    }
    Ok((header, values))
}

/// Write a scalar volume with kind `"volume"`.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    save_scalar(v, path.as_ref(), "volume")
}

/// Write a scalar volume with kind `"mask"`.
pub fn save_mask(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    save_scalar(v, path.as_ref(), "mask")
}

fn save_scalar(v: &Volume, path: &Path, kind: &str) -> Result<()> {
    let dims = v.dims();
    write_svv(
        path,
        dims,
        v.spacing(),
        kind,
        v.data().iter().cloned(),
        v.num_voxels(),
    )
}

/// Load a scalar grid (kind `"volume"` or `"mask"`).
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let (header, values) = read_svv(path.as_ref())?;
    if header.kind == "field" {
        return Err(CoreError::KindMismatch {
            expected: "volume or mask",
            got: header.kind,
        });
    }
    let data = Array3::from_shape_vec(
        (header.dims[0], header.dims[1], header.dims[2]),
        values,
    )
    .map_err(|e| CoreError::BadHeader(e.to_string()))?;
    Volume::new(data, header.spacing)
}

/// Write a displacement field with kind `"field"`; values are stored
/// x-fastest with the 3 components interleaved per voxel as (dx, dy, dz).
pub fn save_field(f: &VectorField, spacing: [f64; 3], path: impl AsRef<Path>) -> Result<()> {
    let dims = f.dims();
    let data = f.data();
    let count = dims[0] * dims[1] * dims[2] * 3;
    let iter = (0..dims[0]).flat_map(move |z| {
        (0..dims[1]).flat_map(move |y| {
            (0..dims[2]).flat_map(move |x| (0..3).map(move |c| data[[c, z, y, x]]))
        })
    });
    write_svv(path.as_ref(), dims, spacing, "field", iter, count)
}

/// Load a displacement field, returning it with the spacing recorded in the
/// header.
pub fn load_field(path: impl AsRef<Path>) -> Result<(VectorField, [f64; 3])> {
    let (header, values) = read_svv(path.as_ref())?;
    if header.kind != "field" {
        return Err(CoreError::KindMismatch {
            expected: "field",
            got: header.kind,
        });
    }
    let [d, h, w] = header.dims;
    let mut data = Array4::zeros((3, d, h, w));
    let mut i = 0usize;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[[c, z, y, x]] = values[i];
                    i += 1;
                }
            }
        }
    }
    Ok((VectorField::new(data)?, header.spacing))
}

/// Per-sample manifest stored as `sample.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleManifest {
    /// All phase values including the endpoints 0 and 1.
    pub phases: Vec<f64>,
    pub has_masks: bool,
    pub has_fields: bool,
}

/// File stem for phase slot `i` of `n`: `ed`, `t_<i>` or `es`.
pub fn phase_stem(i: usize, n: usize) -> String {
    if i == 0 {
        "ed".into()
    } else if i == n - 1 {
        "es".into()
    } else {
        format!("t_{i}")
    }
}

/// Write one sample into `dir` using the dataset layout.
pub fn save_sample(sample: &PhaseSample, dir: impl AsRef<Path>) -> Result<()> {
    sample.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let n = sample.num_phases();
    let manifest = SampleManifest {
        phases: sample.phases(),
        has_masks: sample.masks.is_some(),
        has_fields: sample.true_fields.is_some(),
    };
    fs::write(
        dir.join("sample.json"),
        serde_json::to_vec_pretty(&manifest)
            .map_err(|e| CoreError::BadHeader(e.to_string()))?,
    )?;
    for i in 0..n {
        let stem = phase_stem(i, n);
        save_volume(sample.volume_at(i), dir.join(format!("{stem}.svv")))?;
        if let Some(masks) = &sample.masks {
            save_mask(&masks[i], dir.join(format!("mask_{stem}.svv")))?;
        }
        if let Some(fields) = &sample.true_fields {
            save_field(
                &fields[i],
                sample.ed.spacing(),
                dir.join(format!("field_{stem}.svv")),
            )?;
        }
    }
    Ok(())
}

/// Load one sample directory written by [`save_sample`].
pub fn load_sample(dir: impl AsRef<Path>) -> Result<PhaseSample> {
    let dir = dir.as_ref();
    let manifest_bytes = fs::read(dir.join("sample.json"))?;
    let manifest: SampleManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| CoreError::BadHeader(format!("sample.json: {e}")))?;
    let n = manifest.phases.len();
    if n < 3 {
        return Err(CoreError::Validation(format!(
            "sample manifest lists {n} phases, need >= 3"
        )));
    }
    let mut volumes = Vec::with_capacity(n);
    let mut masks = Vec::new();
    let mut fields = Vec::new();
    for i in 0..n {
        let stem = phase_stem(i, n);
        volumes.push(load_volume(dir.join(format!("{stem}.svv")))?);
        if manifest.has_masks {
            masks.push(load_volume(dir.join(format!("mask_{stem}.svv")))?);
        }
        if manifest.has_fields {
            fields.push(load_field(dir.join(format!("field_{stem}.svv")))?.0);
        }
    }
    let es = volumes.pop().unwrap();
    let ed = volumes.remove(0);
    let sample = PhaseSample {
        ed,
        es,
        intermediates: manifest.phases[1..n - 1]
            .iter()
            .cloned()
            .zip(volumes)
            .collect(),
        masks: manifest.has_masks.then_some(masks),
        true_fields: manifest.has_fields.then_some(fields),
    };
    sample.validate()?;
    Ok(sample)
}

/// Dataset-level manifest stored as `dataset.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<String>,
}

/// Write a list of samples as `sample_<i>/` subdirectories plus the dataset
/// manifest.
pub fn save_dataset(samples: &[PhaseSample], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let name = format!("sample_{i:03}");
        save_sample(sample, dir.join(&name))?;
        names.push(name);
    }
    fs::write(
        dir.join("dataset.json"),
        serde_json::to_vec_pretty(&DatasetManifest { samples: names })
            .map_err(|e| CoreError::BadHeader(e.to_string()))?,
    )?;
    Ok(())
}

/// Load every sample listed in a dataset manifest, in manifest order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<PhaseSample>> {
    let dir = dir.as_ref();
    let manifest_bytes = fs::read(dir.join("dataset.json"))?;
    let manifest: DatasetManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| CoreError::BadHeader(format!("dataset.json: {e}")))?;
    manifest
        .samples
        .iter()
        .map(|name| load_sample(dir.join(name)))
        .collect()
}

/// Paths of every sample directory in a dataset, in manifest order.
pub fn dataset_sample_dirs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let manifest_bytes = fs::read(dir.join("dataset.json"))?;
    let manifest: DatasetManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| CoreError::BadHeader(format!("dataset.json: {e}")))?;
    Ok(manifest.samples.iter().map(|n| dir.join(n)).collect())
}
