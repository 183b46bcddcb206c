//! Single-file network container.
//!
//! ```text
//! b"ENORMNET" | manifest length (u64 LE) | JSON manifest | blob
//! ```
//!
//! The blob holds every tensor row-major as little-endian IEEE-754 values of
//! the network dtype, at the byte offsets declared in the manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Conv2d, Dtype, Layer, Linear, Network, ResBlockC, Shape};
use crate::tensor::{Matrix, Tensor4};

const MAGIC: &[u8; 8] = b"ENORMNET";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Number of elements.
    pub len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerEntry {
    Linear {
        tensors: Vec<TensorEntry>,
    },
    Conv2d {
        stride: usize,
        padding: usize,
        tensors: Vec<TensorEntry>,
    },
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    ResblockC {
        conv1: ConvGeometry,
        conv2: ConvGeometry,
        skip: ConvGeometry,
        tensors: Vec<TensorEntry>,
    },
}

impl LayerEntry {
    fn tensors(&self) -> &[TensorEntry] {
        match self {
            LayerEntry::Linear { tensors }
            | LayerEntry::Conv2d { tensors, .. }
            | LayerEntry::ResblockC { tensors, .. } => tensors,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dtype: Dtype,
    pub input_shape: Shape,
    pub blob_len: u64,
    pub layers: Vec<LayerEntry>,
}

struct BlobWriter {
    dtype: Dtype,
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn push(&mut self, name: &str, shape: Vec<usize>, data: &[f64]) -> TensorEntry {
        let offset = self.bytes.len() as u64;
        for &v in data {
            match self.dtype {
                Dtype::F32 => self.bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => self.bytes.extend_from_slice(&v.to_le_bytes()),
            }
        }
        TensorEntry {
            name: name.to_string(),
            shape,
            offset,
            len: data.len() as u64,
        }
    }

    fn conv(&mut self, prefix: &str, c: &Conv2d, out: &mut Vec<TensorEntry>) {
        let w = &c.weight;
        let shape = vec![w.out_channels(), w.in_channels(), w.kernel_h(), w.kernel_w()];
        out.push(self.push(&format!("{prefix}weight"), shape, w.data()));
        if let Some(b) = &c.bias {
            out.push(self.push(&format!("{prefix}bias"), vec![b.len()], b));
        }
    }
}

fn geometry(c: &Conv2d) -> ConvGeometry {
    ConvGeometry {
        stride: c.stride,
        padding: c.padding,
    }
}

/// Serializes a network to bytes. Values of single-precision networks are
/// written as `f32`.
pub fn encode_network(net: &Network) -> Result<Vec<u8>> {
    let mut blob = BlobWriter {
        dtype: net.dtype,
        bytes: Vec::new(),
    };
    let mut layers = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let mut tensors = Vec::new();
        let entry = match layer {
            Layer::Linear(l) => {
                let w = &l.weight;
                tensors.push(blob.push("weight", vec![w.rows(), w.cols()], w.data()));
                if let Some(b) = &l.bias {
                    tensors.push(blob.push("bias", vec![b.len()], b));
                }
                LayerEntry::Linear { tensors }
            }
            Layer::Conv2d(c) => {
                blob.conv("", c, &mut tensors);
                LayerEntry::Conv2d {
                    stride: c.stride,
                    padding: c.padding,
                    tensors,
                }
            }
            Layer::ResBlockC(b) => {
                blob.conv("conv1.", &b.conv1, &mut tensors);
                blob.conv("conv2.", &b.conv2, &mut tensors);
                blob.conv("skip.", &b.skip, &mut tensors);
                LayerEntry::ResblockC {
                    conv1: geometry(&b.conv1),
                    conv2: geometry(&b.conv2),
                    skip: geometry(&b.skip),
                    tensors,
                }
            }
            Layer::Relu => LayerEntry::Relu,
            Layer::MaxPool2d { kernel, stride } => LayerEntry::MaxPool2d {
                kernel: *kernel,
                stride: *stride,
            },
            Layer::Flatten => LayerEntry::Flatten,
        };
        layers.push(entry);
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        dtype: net.dtype,
        input_shape: net.input_shape,
        blob_len: blob.bytes.len() as u64,
        layers,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::format("manifest", e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob.bytes);
    Ok(out)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_network(net)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_network(&bytes)
}

/// Splits a container into its manifest and blob.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::format("header", "not a network container"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = 16u64
        .checked_add(len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| Error::format("header", "manifest extends past the end of the file"))? as usize;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..end]).map_err(|e| Error::format("manifest", e.to_string()))?;
    Ok((manifest, &bytes[end..]))
}

fn layer_context(i: usize, entry: &LayerEntry) -> String {
    let kind = match entry {
        LayerEntry::Linear { .. } => "linear",
        LayerEntry::Conv2d { .. } => "conv2d",
        LayerEntry::Relu => "relu",
        LayerEntry::MaxPool2d { .. } => "maxpool2d",
        LayerEntry::Flatten => "flatten",
        LayerEntry::ResblockC { .. } => "resblock_c",
    };
    format!("layer {i} ({kind})")
}

/// Checks version, declared sizes and offsets against the blob.
fn validate(manifest: &Manifest, blob: &[u8]) -> Result<()> {
    if manifest.version != FORMAT_VERSION {
        return Err(Error::format(
            "manifest",
            format!("unsupported version {} (expected {FORMAT_VERSION})", manifest.version),
        ));
    }
    let width = manifest.dtype.width() as u64;
    let mut cursor = 0u64;
    let mut total = 0u64;
    for (i, entry) in manifest.layers.iter().enumerate() {
        for t in entry.tensors() {
            let ctx = format!("{} tensor {}", layer_context(i, entry), t.name);
            let elements = t.shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
            if elements != Some(t.len) {
                return Err(Error::format(ctx, format!("shape {:?} does not hold {} elements", t.shape, t.len)));
            }
            if t.offset < cursor {
                return Err(Error::format(ctx, format!("offset {} overlaps the previous tensor", t.offset)));
            }
            let end = t
                .len
                .checked_mul(width)
                .and_then(|b| b.checked_add(t.offset))
                .ok_or_else(|| Error::format(ctx.clone(), "size overflows"))?;
            if end > manifest.blob_len {
                return Err(Error::format(ctx, format!("ends at byte {end}, past the declared blob length {}", manifest.blob_len)));
            }
            if end > blob.len() as u64 {
                return Err(Error::format(ctx, format!("truncated blob: needs {end} bytes, file has {}", blob.len())));
            }
            cursor = end;
            total += t.len * width;
        }
    }
    if total != manifest.blob_len {
        return Err(Error::format(
            "manifest",
            format!("declared blob length {} but tensors take {total} bytes", manifest.blob_len),
        ));
    }
    if blob.len() as u64 != manifest.blob_len {
        return Err(Error::format(
            "blob",
            format!("declared {} bytes, file has {}", manifest.blob_len, blob.len()),
        ));
    }
    Ok(())
}

struct TensorReader<'a> {
    blob: &'a [u8],
    dtype: Dtype,
    ctx: String,
    tensors: &'a [TensorEntry],
    used: usize,
}

impl TensorReader<'_> {
    fn find(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn values(&mut self, t: &TensorEntry) -> Vec<f64> {
        self.used += 1;
        let start = t.offset as usize;
        match self.dtype {
            Dtype::F32 => self.blob[start..start + 4 * t.len as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::F64 => self.blob[start..start + 8 * t.len as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        }
    }

    fn require(&mut self, name: &str, rank: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let t = self
            .find(name)
            .cloned()
            .ok_or_else(|| Error::format(self.ctx.clone(), format!("missing tensor {name}")))?;
        if t.shape.len() != rank {
            return Err(Error::format(
                self.ctx.clone(),
                format!("tensor {name} has rank {}, expected {rank}", t.shape.len()),
            ));
        }
        let v = self.values(&t);
        Ok((t.shape, v))
    }

    fn bias(&mut self, name: &str, n: usize) -> Result<Option<Vec<f64>>> {
        let Some(t) = self.find(name).cloned() else { return Ok(None) };
        if t.shape != [n] {
            return Err(Error::format(
                self.ctx.clone(),
                format!("bias {name} has shape {:?}, expected [{n}]", t.shape),
            ));
        }
        Ok(Some(self.values(&t)))
    }

    fn conv(&mut self, prefix: &str, g: ConvGeometry) -> Result<Conv2d> {
        let (s, data) = self.require(&format!("{prefix}weight"), 4)?;
        let weight = Tensor4::new(s[0], s[1], s[2], s[3], data).map_err(|e| Error::format(self.ctx.clone(), e.to_string()))?;
        let bias = self.bias(&format!("{prefix}bias"), s[0])?;
        Ok(Conv2d {
            weight,
            bias,
            stride: g.stride,
            padding: g.padding,
        })
    }

    fn finish(self) -> Result<()> {
        if self.used != self.tensors.len() {
            return Err(Error::format(self.ctx, "unexpected extra tensors"));
        }
        Ok(())
    }
}

pub fn decode_network(bytes: &[u8]) -> Result<Network> {
    let (manifest, blob) = read_manifest(bytes)?;
    validate(&manifest, blob)?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, entry) in manifest.layers.iter().enumerate() {
        let mut r = TensorReader {
            blob,
            dtype: manifest.dtype,
            ctx: layer_context(i, entry),
            tensors: entry.tensors(),
            used: 0,
        };
        let layer = match entry {
            LayerEntry::Linear { .. } => {
                let (s, data) = r.require("weight", 2)?;
                let weight = Matrix::new(s[0], s[1], data).map_err(|e| Error::format(r.ctx.clone(), e.to_string()))?;
                let bias = r.bias("bias", s[1])?;
                Layer::Linear(Linear { weight, bias })
            }
            LayerEntry::Conv2d { stride, padding, .. } => Layer::Conv2d(r.conv(
                "",
                ConvGeometry {
                    stride: *stride,
                    padding: *padding,
                },
            )?),
            LayerEntry::ResblockC { conv1, conv2, skip, .. } => Layer::ResBlockC(ResBlockC {
                conv1: r.conv("conv1.", *conv1)?,
                conv2: r.conv("conv2.", *conv2)?,
                skip: r.conv("skip.", *skip)?,
            }),
            LayerEntry::Relu => Layer::Relu,
            LayerEntry::MaxPool2d { kernel, stride } => Layer::MaxPool2d {
                kernel: *kernel,
                stride: *stride,
            },
            LayerEntry::Flatten => Layer::Flatten,
        };
        r.finish()?;
        layers.push(layer);
    }
    Network::new(manifest.input_shape, layers, manifest.dtype)
        .map_err(|e| Error::format("network", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{mlp, resnet18c};

    #[test]
    fn round_trip_is_bit_exact() {
        let net = mlp(&[5, 7, 3], true, &mut crate::rng(0)).unwrap();
        let back = decode_network(&encode_network(&net).unwrap()).unwrap();
        assert_eq!(net, back);
        for (a, b) in net.tensors().iter().zip(back.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn single_precision_round_trip() {
        let mut net = resnet18c(10, &mut crate::rng(1)).unwrap();
        net.round_to_dtype();
        let bytes = encode_network(&net).unwrap();
        let (m, blob) = read_manifest(&bytes).unwrap();
        assert_eq!(m.dtype, Dtype::F32);
        assert_eq!(blob.len() as u64, m.blob_len);
        assert_eq!(decode_network(&bytes).unwrap(), net);
    }

    fn with_manifest(bytes: &[u8], edit: impl FnOnce(&mut Manifest)) -> Vec<u8> {
        let (mut m, blob) = read_manifest(bytes).unwrap();
        edit(&mut m);
        let json = serde_json::to_vec(&m).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(blob);
        out
    }

    fn format_context(err: Error) -> String {
        match err {
            Error::Format { context, .. } => context,
            other => panic!("expected a format error, got {other}"),
        }
    }

    #[test]
    fn rejects_corrupt_containers() {
        let net = mlp(&[2, 3, 1], true, &mut crate::rng(2)).unwrap();
        let bytes = encode_network(&net).unwrap();

        let truncated = &bytes[..bytes.len() - 8];
        assert!(format_context(decode_network(truncated).unwrap_err()).starts_with("layer 2 (linear)"));

        let longer = with_manifest(&bytes, |m| m.blob_len += 8);
        assert!(decode_network(&longer).is_err());

        let version = with_manifest(&bytes, |m| m.version = 2);
        assert_eq!(format_context(decode_network(&version).unwrap_err()), "manifest");

        let overlap = with_manifest(&bytes, |m| {
            if let LayerEntry::Linear { tensors } = &mut m.layers[2] {
                tensors[0].offset = 0;
            }
        });
        assert!(format_context(decode_network(&overlap).unwrap_err()).starts_with("layer 2 (linear)"));

        assert!(decode_network(b"not a container at all").is_err());
    }
}
