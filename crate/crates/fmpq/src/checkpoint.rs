//! Checkpoint container.
//!
//! Layout: the 8-byte magic `FMPQCKPT`, a little-endian `u64` header length,
//! a JSON header, then the tensor payloads back to back. The header names
//! every tensor with its dtype, shape and byte offset into the payload, plus
//! everything needed to rebuild the model skeleton, so a file can be read
//! without the configuration that produced it.

use std::fs;
use std::path::Path;

use fmpq_core::model::{build_model_with_lambda, LicModel, Variant, WidthConfig};
use fmpq_core::quant::{attach_quantizers, QuantParams, QuantizedModel};
use fmpq_core::{BitAssignment, Real};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"FMPQCKPT";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthsHeader {
    pub main: usize,
    pub latent: usize,
    pub hyper: usize,
    pub main_strides: [usize; 4],
    pub hyper_strides: [usize; 2],
    pub negative_slope: f64,
}

impl From<WidthConfig> for WidthsHeader {
    fn from(w: WidthConfig) -> Self {
        Self {
            main: w.main,
            latent: w.latent,
            hyper: w.hyper,
            main_strides: w.main_strides,
            hyper_strides: w.hyper_strides,
            negative_slope: w.negative_slope,
        }
    }
}

impl From<&WidthsHeader> for WidthConfig {
    fn from(w: &WidthsHeader) -> Self {
        WidthConfig {
            main: w.main,
            latent: w.latent,
            hyper: w.hyper,
            main_strides: w.main_strides,
            hyper_strides: w.hyper_strides,
            negative_slope: w.negative_slope,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizerHeader {
    pub bits: Vec<u32>,
    pub b_max: u32,
    pub beta_used: f64,
    pub activation_bits: u32,
    pub leak: f64,
    pub granularity: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub variant: String,
    pub widths: WidthsHeader,
    pub quality_index: usize,
    pub lambda: f64,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub quantizer: Option<QuantizerHeader>,
    /// Last completed training epoch, for resuming.
    #[serde(default)]
    pub epoch: Option<usize>,
    /// Configuration of the run that wrote the file.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metadata {
    pub epoch: Option<usize>,
    pub config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizerState<T> {
    pub weight: Vec<QuantParams<T>>,
    pub bit_assignment: BitAssignment,
    pub activation_bits: u32,
    pub leak: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: LicModel<T>,
    pub quantizer: Option<QuantizerState<T>>,
    pub meta: Metadata,
}

impl<T: Real> Checkpoint<T> {
    pub fn is_quantized(&self) -> bool {
        self.quantizer.is_some()
    }

    /// Rebuild the quantized model; fails for float checkpoints.
    pub fn into_quantized(self) -> Result<QuantizedModel<T>> {
        let q = self
            .quantizer
            .ok_or_else(|| Error::InvalidCheckpoint("checkpoint has no quantizer state".into()))?;
        let mut qm = attach_quantizers(self.model, &q.bit_assignment, q.activation_bits, None)?;
        qm.weight_quantizers = q.weight;
        qm.leak = q.leak;
        Ok(qm)
    }
}

/// Named views of every tensor of a model, in file order.
fn model_tensors<T: Real>(m: &LicModel<T>) -> Vec<(String, Vec<usize>, &[T])> {
    let mut v = Vec::new();
    for (i, l) in m.layers.iter().enumerate() {
        let s = l.spec;
        v.push((format!("layers.{i}.weight"), vec![s.c_out, s.c_in, s.k, s.k], l.weight.as_slice()));
        v.push((format!("layers.{i}.bias"), vec![s.c_out], l.bias.as_slice()));
    }
    let c = m.prior.channels;
    for (k, t) in m.prior.matrices.iter().enumerate() {
        let out = m.prior.biases[k].len() / c;
        v.push((format!("prior.matrices.{k}"), vec![c, out, t.len() / (c * out)], t.as_slice()));
    }
    for (k, t) in m.prior.biases.iter().enumerate() {
        v.push((format!("prior.biases.{k}"), vec![c, t.len() / c], t.as_slice()));
    }
    for (k, t) in m.prior.factors.iter().enumerate() {
        v.push((format!("prior.factors.{k}"), vec![c, t.len() / c], t.as_slice()));
    }
    v
}

fn model_tensors_mut<T: Real>(m: &mut LicModel<T>) -> Vec<(String, &mut Vec<T>)> {
    let mut v = Vec::new();
    for (i, l) in m.layers.iter_mut().enumerate() {
        v.push((format!("layers.{i}.weight"), &mut l.weight));
        v.push((format!("layers.{i}.bias"), &mut l.bias));
    }
    for (k, t) in m.prior.matrices.iter_mut().enumerate() {
        v.push((format!("prior.matrices.{k}"), t));
    }
    for (k, t) in m.prior.biases.iter_mut().enumerate() {
        v.push((format!("prior.biases.{k}"), t));
    }
    for (k, t) in m.prior.factors.iter_mut().enumerate() {
        v.push((format!("prior.factors.{k}"), t));
    }
    v
}

fn encode<T: Real>(model: &LicModel<T>, quant: Option<(&[QuantParams<T>], QuantizerHeader)>, meta: &Metadata) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, data: &[T]| {
        let offset = payload.len() as u64;
        for &x in data {
            x.to_le_bytes_vec(&mut payload);
        }
        tensors.push(TensorEntry {
            name,
            dtype: T::DTYPE.into(),
            shape,
            offset,
            nbytes: payload.len() as u64 - offset,
        });
    };
    for (name, shape, data) in model_tensors(model) {
        push(name, shape, data);
    }
    let quantizer = quant.map(|(params, header)| {
        for (i, p) in params.iter().enumerate() {
            push(format!("quant.{i}.scale"), vec![p.scale.len()], &p.scale);
            push(format!("quant.{i}.zero_point"), vec![p.zero_point.len()], &p.zero_point);
        }
        header
    });
    let header = Header {
        schema_version: SCHEMA_VERSION,
        variant: model.variant.to_string(),
        widths: model.widths.into(),
        quality_index: model.quality_index,
        lambda: model.lambda,
        seed: model.seed,
        tensors,
        quantizer,
        epoch: meta.epoch,
        config: meta.config.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn model_to_bytes<T: Real>(model: &LicModel<T>, meta: &Metadata) -> Result<Vec<u8>> {
    encode(model, None, meta)
}

pub fn quantized_to_bytes<T: Real>(q: &QuantizedModel<T>, meta: &Metadata) -> Result<Vec<u8>> {
    let header = QuantizerHeader {
        bits: q.bit_assignment.bits.clone(),
        b_max: q.bit_assignment.b_max,
        beta_used: q.bit_assignment.beta_used,
        activation_bits: q.activation_bits,
        leak: q.leak,
        granularity: "per-channel".into(),
    };
    encode(&q.base, Some((&q.weight_quantizers, header)), meta)
}

/// Parse only the header of a checkpoint.
pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 16 {
        return Err(Error::Truncated("file shorter than the fixed prefix".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic("<bytes>".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::Truncated("header".into()))?;
    let header: Header = serde_json::from_slice(json)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: header.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok((header, &bytes[16 + len..]))
}

fn decode_into<T: Real>(entry: &TensorEntry, payload: &[u8], dst: &mut [T]) -> Result<()> {
    if entry.dtype != T::DTYPE {
        return Err(Error::DtypeMismatch {
            found: entry.dtype.clone(),
            expected: T::DTYPE.into(),
        });
    }
    let numel: usize = entry.shape.iter().product();
    if numel != dst.len() || entry.nbytes as usize != numel * T::BYTES {
        return Err(Error::InvalidCheckpoint(format!(
            "tensor `{}` has shape {:?}, expected {} elements",
            entry.name,
            entry.shape,
            dst.len()
        )));
    }
    let start = entry.offset as usize;
    let bytes = payload
        .get(start..start + entry.nbytes as usize)
        .ok_or_else(|| Error::Truncated(format!("payload of `{}`", entry.name)))?;
    for (d, chunk) in dst.iter_mut().zip(bytes.chunks_exact(T::BYTES)) {
        *d = T::from_le_slice(chunk);
    }
    Ok(())
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let (header, payload) = read_header(bytes)?;
    let variant: Variant = header.variant.parse()?;
    let widths = WidthConfig::from(&header.widths);
    let mut model = build_model_with_lambda::<T>(variant, widths, header.quality_index, header.lambda, header.seed)?;

    let mut quant = match &header.quantizer {
        Some(qh) => {
            let assignment = BitAssignment::new(qh.bits.clone(), qh.b_max, qh.beta_used);
            let mut q = attach_quantizers(model.clone(), &assignment, qh.activation_bits, None)?;
            q.leak = qh.leak;
            Some(q)
        }
        None => None,
    };

    let mut seen = std::collections::BTreeSet::new();
    {
        let mut slots: std::collections::BTreeMap<String, &mut Vec<T>> = model_tensors_mut(&mut model).into_iter().collect();
        if let Some(q) = quant.as_mut() {
            for (i, p) in q.weight_quantizers.iter_mut().enumerate() {
                slots.insert(format!("quant.{i}.scale"), &mut p.scale);
                slots.insert(format!("quant.{i}.zero_point"), &mut p.zero_point);
            }
        }
        for entry in &header.tensors {
            let slot = slots
                .get_mut(&entry.name)
                .ok_or_else(|| Error::UnknownTensor(entry.name.clone()))?;
            decode_into(entry, payload, slot)?;
            seen.insert(entry.name.clone());
        }
        if let Some(missing) = slots.keys().find(|k| !seen.contains(*k)) {
            return Err(Error::MissingTensor(missing.clone()));
        }
    }

    let quantizer = quant.map(|q| QuantizerState {
        weight: q.weight_quantizers,
        bit_assignment: q.bit_assignment,
        activation_bits: q.activation_bits,
        leak: q.leak,
    });
    Ok(Checkpoint {
        model,
        quantizer,
        meta: Metadata {
            epoch: header.epoch,
            config: header.config,
        },
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub fn save_model<T: Real>(path: &Path, model: &LicModel<T>, meta: &Metadata) -> Result<()> {
    write_atomic(path, &model_to_bytes(model, meta)?)
}

pub fn save_quantized<T: Real>(path: &Path, q: &QuantizedModel<T>, meta: &Metadata) -> Result<()> {
    write_atomic(path, &quantized_to_bytes(q, meta)?)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).at(path)?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::BadMagic(_) => Error::BadMagic(path.to_owned()),
        other => other,
    })
}

/// Content hash of a model's weights and structure.
pub fn model_hash<T: Real>(model: &LicModel<T>) -> String {
    let bytes = model_to_bytes(model, &Metadata::default()).expect("in-memory encoding cannot fail");
    hex::encode(Sha256::digest(&bytes))
}
