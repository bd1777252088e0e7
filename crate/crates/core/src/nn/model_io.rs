//! `.gsm` model files.
//!
//! Layout (little-endian): `"GSM1"`, u32 version, u16 topology-name length
//! and UTF-8 name, u16 layer count; per layer a kind byte, kernel height and
//! width (u16), input and output channels (u16), vertical and horizontal
//! stride (u8); then, for every weighted layer in order, its kernel and
//! bias as f64.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::{write_atomic, Reader};

use super::network::{LayerKind, LayerSpec, LayerWeights, NetworkSpec, Topology};
use super::ops::Stride;
use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GSM1";
const VERSION: u32 = 1;

pub fn model_to_bytes(net: &NetworkSpec) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let name = net.topology.name().as_bytes();
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name);
    out.extend_from_slice(&(net.layers.len() as u16).to_le_bytes());
    for l in &net.layers {
        out.push(l.kind.to_byte());
        for v in [l.kernel.0, l.kernel.1, l.in_channels, l.out_channels] {
            out.extend_from_slice(&(v as u16).to_le_bytes());
        }
        out.push(l.stride.vertical as u8);
        out.push(l.stride.horizontal as u8);
    }
    for w in net.weights.iter().flatten() {
        for v in w.kernel.data.iter().chain(&w.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<NetworkSpec> {
    let truncated = || Error::Format("truncated model file".into());
    let mut r = Reader::new(bytes);
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32().ok_or_else(truncated)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let name_len = r.u16().ok_or_else(truncated)? as usize;
    let name = std::str::from_utf8(r.take(name_len).ok_or_else(truncated)?)
        .map_err(|_| Error::Format("topology name is not UTF-8".into()))?
        .to_owned();
    let count = r.u16().ok_or_else(truncated)? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.u8().ok_or_else(truncated)?;
        let kind = LayerKind::from_byte(kind).ok_or_else(|| Error::Format(format!("unknown layer kind {kind}")))?;
        let kh = r.u16().ok_or_else(truncated)? as usize;
        let kw = r.u16().ok_or_else(truncated)? as usize;
        let cin = r.u16().ok_or_else(truncated)? as usize;
        let cout = r.u16().ok_or_else(truncated)? as usize;
        let sv = r.u8().ok_or_else(truncated)? as usize;
        let sh = r.u8().ok_or_else(truncated)? as usize;
        layers.push(LayerSpec { kind, kernel: (kh, kw), in_channels: cin, out_channels: cout, stride: Stride::new(sv, sh) });
    }
    let mut weights = Vec::with_capacity(count);
    for l in &layers {
        if !l.has_weights() {
            weights.push(None);
            continue;
        }
        let shape = l.kernel_shape();
        let n: usize = shape.iter().product();
        let kernel = (0..n).map(|_| r.f64()).collect::<Option<Vec<_>>>().ok_or_else(truncated)?;
        let bias = (0..l.out_channels).map(|_| r.f64()).collect::<Option<Vec<_>>>().ok_or_else(truncated)?;
        weights.push(Some(LayerWeights { kernel: Tensor { shape, data: kernel }, bias }));
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
    }
    let topology: Topology =
        name.parse().map_err(|_| Error::Corruption(format!("unknown topology `{name}`")))?;
    if layers != topology.layers() {
        return Err(Error::Corruption(format!("layer table does not match topology {topology}")));
    }
    let net = NetworkSpec { topology, layers, weights };
    net.validate()?;
    Ok(net)
}

pub fn save_model(net: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    let bytes = model_to_bytes(net);
    write_atomic(path.as_ref(), |w: &mut dyn Write| w.write_all(&bytes))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

/// Load a model and insist on a particular topology.
pub fn load_model_as(path: impl AsRef<Path>, expected: Topology) -> Result<NetworkSpec> {
    let net = load_model(path)?;
    if net.topology != expected {
        return Err(Error::Corruption(format!("model is {}, expected {expected}", net.topology)));
    }
    Ok(net)
}
