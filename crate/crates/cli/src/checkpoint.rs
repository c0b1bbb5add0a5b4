//! Two-file checkpoints: `manifest.toml` describes the topology and indexes
//! every tensor; `tensors.bin` holds the values as little-endian `f64`s in
//! manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use svdtrain::model::{Block, Model, ParamLayer};
use svdtrain::{ConvGeometry, DecompositionScheme, DenseLayer, LayerGeometry, SvdLayer, Tensor};

use crate::CheckpointError;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const BLOB_FILE: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub name: String,
    pub input_shape: Vec<usize>,
    pub blob: String,
    /// Blob size in bytes.
    pub blob_bytes: u64,
    pub blocks: Vec<BlockEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BlockEntry {
    Relu,
    MaxPool { size: usize },
    Flatten,
    Dense {
        geometry: GeometryEntry,
        tensors: Vec<TensorEntry>,
    },
    Svd {
        scheme: String,
        geometry: GeometryEntry,
        rank: usize,
        tensors: Vec<TensorEntry>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeometryEntry {
    Linear {
        out_features: usize,
        in_features: usize,
    },
    Conv {
        n: usize,
        c: usize,
        w: usize,
        h: usize,
        stride: usize,
        padding: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub role: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
}

fn scheme_name(s: DecompositionScheme) -> &'static str {
    match s {
        DecompositionScheme::FullyConnected => "fully-connected",
        DecompositionScheme::ChannelWise => "channel-wise",
        DecompositionScheme::SpatialWise => "spatial-wise",
    }
}

fn parse_scheme(s: &str) -> Result<DecompositionScheme, CheckpointError> {
    match s {
        "fully-connected" => Ok(DecompositionScheme::FullyConnected),
        "channel-wise" => Ok(DecompositionScheme::ChannelWise),
        "spatial-wise" => Ok(DecompositionScheme::SpatialWise),
        other => Err(CheckpointError::Manifest(format!("unknown scheme `{other}`"))),
    }
}

impl From<&LayerGeometry> for GeometryEntry {
    fn from(g: &LayerGeometry) -> Self {
        match *g {
            LayerGeometry::Linear {
                out_features,
                in_features,
            } => GeometryEntry::Linear {
                out_features,
                in_features,
            },
            LayerGeometry::Conv(c) => GeometryEntry::Conv {
                n: c.n,
                c: c.c,
                w: c.w,
                h: c.h,
                stride: c.stride,
                padding: c.padding,
            },
        }
    }
}

impl GeometryEntry {
    fn to_geometry(&self) -> Result<LayerGeometry, CheckpointError> {
        Ok(match *self {
            GeometryEntry::Linear {
                out_features,
                in_features,
            } => LayerGeometry::linear(out_features, in_features),
            GeometryEntry::Conv {
                n,
                c,
                w,
                h,
                stride,
                padding,
            } => LayerGeometry::Conv(ConvGeometry::new(n, c, w, h, stride, padding).map_err(manifest_err)?),
        })
    }
}

fn manifest_err(e: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Manifest(e.to_string())
}

struct BlobWriter {
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn push(&mut self, role: &str, t: &Tensor) -> TensorEntry {
        let offset = self.bytes.len() as u64;
        for v in t.data() {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        TensorEntry {
            role: role.into(),
            shape: t.shape().to_vec(),
            offset,
        }
    }
}

/// Manifest and blob bytes for `model`.
pub fn encode(model: &Model) -> (Manifest, Vec<u8>) {
    let mut blob = BlobWriter { bytes: Vec::new() };
    let blocks = model
        .blocks
        .iter()
        .map(|b| match b {
            Block::Relu => BlockEntry::Relu,
            Block::MaxPool(k) => BlockEntry::MaxPool { size: *k },
            Block::Flatten => BlockEntry::Flatten,
            Block::Layer(ParamLayer::Dense(d)) => {
                let mut tensors = vec![blob.push("weight", &d.weight)];
                tensors.extend(d.bias.as_ref().map(|b| blob.push("bias", b)));
                BlockEntry::Dense {
                    geometry: (&d.geometry).into(),
                    tensors,
                }
            }
            Block::Layer(ParamLayer::Svd(s)) => {
                let mut tensors = vec![blob.push("u", &s.u), blob.push("s", &s.s), blob.push("v", &s.v)];
                tensors.extend(s.bias.as_ref().map(|b| blob.push("bias", b)));
                BlockEntry::Svd {
                    scheme: scheme_name(s.scheme).into(),
                    geometry: (&s.geometry).into(),
                    rank: s.rank(),
                    tensors,
                }
            }
        })
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        name: model.name.clone(),
        input_shape: model.input_shape.clone(),
        blob: BLOB_FILE.into(),
        blob_bytes: blob.bytes.len() as u64,
        blocks,
    };
    (manifest, blob.bytes)
}

pub fn save_checkpoint(model: &Model, dir: &Path) -> Result<(), CheckpointError> {
    let (manifest, blob) = encode(model);
    fs::create_dir_all(dir)?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    fs::write(
        dir.join(MANIFEST_FILE),
        toml::to_string(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

/// Parses manifest text, checking the format version before anything else.
pub fn parse_manifest(text: &str) -> Result<Manifest, CheckpointError> {
    let value: toml::Table = text.parse().map_err(manifest_err)?;
    let version = value
        .get("format_version")
        .and_then(toml::Value::as_integer)
        .ok_or_else(|| CheckpointError::Manifest("missing integer `format_version`".into()))?;
    if version != i64::from(FORMAT_VERSION) {
        return Err(CheckpointError::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    toml::from_str(text).map_err(manifest_err)
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    /// Next expected offset; tensors must tile the blob in manifest order.
    cursor: u64,
}

impl BlobReader<'_> {
    fn take(&mut self, entry: &TensorEntry, role: &str) -> Result<Tensor, CheckpointError> {
        if entry.role != role {
            return Err(CheckpointError::Manifest(format!("expected tensor `{role}`, found `{}`", entry.role)));
        }
        if entry.offset != self.cursor {
            return Err(CheckpointError::Manifest(format!(
                "tensor `{role}` starts at byte {}, expected {}",
                entry.offset, self.cursor
            )));
        }
        let len = entry.shape.iter().product::<usize>() as u64 * 8;
        let end = self.cursor + len;
        if end > self.bytes.len() as u64 {
            return Err(CheckpointError::BlobLength {
                expected: end,
                found: self.bytes.len() as u64,
            });
        }
        let data = self.bytes[self.cursor as usize..end as usize]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        self.cursor = end;
        Tensor::new(entry.shape.clone(), data).map_err(manifest_err)
    }
}

fn roles(tensors: &[TensorEntry], main: &[&str]) -> Result<bool, CheckpointError> {
    match tensors.len() {
        n if n == main.len() => Ok(false),
        n if n == main.len() + 1 => Ok(true),
        n => Err(CheckpointError::Manifest(format!("layer lists {n} tensors"))),
    }
}

/// Rebuilds a model from manifest and blob bytes.
pub fn decode(manifest: &Manifest, blob: &[u8]) -> Result<Model, CheckpointError> {
    if manifest.blob_bytes != blob.len() as u64 {
        return Err(CheckpointError::BlobLength {
            expected: manifest.blob_bytes,
            found: blob.len() as u64,
        });
    }
    let mut reader = BlobReader { bytes: blob, cursor: 0 };
    let mut blocks = Vec::with_capacity(manifest.blocks.len());
    for entry in &manifest.blocks {
        blocks.push(match entry {
            BlockEntry::Relu => Block::Relu,
            BlockEntry::MaxPool { size } => Block::MaxPool(*size),
            BlockEntry::Flatten => Block::Flatten,
            BlockEntry::Dense { geometry, tensors } => {
                let has_bias = roles(tensors, &["weight"])?;
                let weight = reader.take(&tensors[0], "weight")?;
                let bias = if has_bias { Some(reader.take(&tensors[1], "bias")?) } else { None };
                Block::Layer(ParamLayer::Dense(
                    DenseLayer::new(geometry.to_geometry()?, weight, bias).map_err(manifest_err)?,
                ))
            }
            BlockEntry::Svd {
                scheme,
                geometry,
                rank,
                tensors,
            } => {
                let has_bias = roles(tensors, &["u", "s", "v"])?;
                let u = reader.take(&tensors[0], "u")?;
                let s = reader.take(&tensors[1], "s")?;
                let v = reader.take(&tensors[2], "v")?;
                let bias = if has_bias { Some(reader.take(&tensors[3], "bias")?) } else { None };
                let layer = SvdLayer::new(parse_scheme(scheme)?, geometry.to_geometry()?, u, s, v, bias)
                    .map_err(manifest_err)?;
                if layer.rank() != *rank {
                    return Err(CheckpointError::Manifest(format!(
                        "layer declares rank {rank} but its factors have rank {}",
                        layer.rank()
                    )));
                }
                Block::Layer(ParamLayer::Svd(layer))
            }
        });
    }
    if reader.cursor != blob.len() as u64 {
        return Err(CheckpointError::BlobLength {
            expected: reader.cursor,
            found: blob.len() as u64,
        });
    }
    let model = Model {
        name: manifest.name.clone(),
        input_shape: manifest.input_shape.clone(),
        blocks,
    };
    model.layer_input_shapes().map_err(manifest_err)?;
    Ok(model)
}

pub fn load_checkpoint(dir: &Path) -> Result<Model, CheckpointError> {
    let manifest = parse_manifest(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.blob.contains(['/', '\\']) {
        return Err(CheckpointError::Manifest(format!("blob `{}` must be a file name", manifest.blob)));
    }
    let blob = fs::read(dir.join(&manifest.blob))?;
    decode(&manifest, &blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Model::cnn_s(&[1, 4, 4], 3, &mut rng)
            .unwrap()
            .decompose(DecompositionScheme::SpatialWise)
            .unwrap()
    }

    #[test]
    fn encode_decode_is_exact() {
        let m = model();
        let (manifest, blob) = encode(&m);
        assert_eq!(blob.len() as u64, manifest.blob_bytes);
        assert_eq!(decode(&manifest, &blob).unwrap(), m);
        let text = toml::to_string(&manifest).unwrap();
        assert_eq!(parse_manifest(&text).unwrap(), manifest);
    }

    #[test]
    fn version_error_names_both_versions() {
        let (manifest, _) = encode(&model());
        let text = toml::to_string(&manifest).unwrap().replace("format_version = 1", "format_version = 2");
        let err = parse_manifest(&text).unwrap_err();
        assert!(matches!(err, CheckpointError::Version { found: 2, supported: 1 }));
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('1'));
    }

    #[test]
    fn offsets_must_tile_the_blob() {
        let (mut manifest, blob) = encode(&model());
        if let BlockEntry::Svd { tensors, .. } = &mut manifest.blocks[0] {
            tensors[1].offset += 8;
        }
        assert!(matches!(decode(&manifest, &blob), Err(CheckpointError::Manifest(_))));
    }
}
