//! Checkpoint files: magic, version, JSON header (configuration, vocabulary,
//! parameter shapes, training log), then raw little-endian parameter arrays.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{AnyNetwork, NeuralLM};
use super::network::Network;
use super::train::EpochLog;
use super::{NeuralError, NeuralLMConfig, Precision, Real};
use crate::corpus::Vocabulary;

pub(super) const MAGIC: &[u8; 8] = b"AUXINVNN";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: NeuralLMConfig,
    vocab_tsv: String,
    min_count: u64,
    params: Vec<(String, usize, usize)>,
    log: Vec<EpochLog>,
}

trait LeBytes: Real {
    const WIDTH: usize;
    fn put(self, out: &mut Vec<u8>);
    fn get(b: &[u8]) -> Self;
}

impl LeBytes for f32 {
    const WIDTH: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(b: &[u8]) -> Self {
        f32::from_le_bytes(b.try_into().expect("4 bytes"))
    }
}

impl LeBytes for f64 {
    const WIDTH: usize = 8;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn get(b: &[u8]) -> Self {
        f64::from_le_bytes(b.try_into().expect("8 bytes"))
    }
}

fn encode<T: LeBytes>(lm: &NeuralLM, net: &Network<T>) -> Vec<u8> {
    let params = net
        .store
        .ids()
        .map(|id| {
            let (r, c) = net.store.value(id).dim();
            (net.store.name(id).to_string(), r, c)
        })
        .collect();
    let header = Header {
        config: net.config.clone(),
        vocab_tsv: lm.vocab.to_tsv(),
        min_count: lm.vocab.min_count(),
        params,
        log: lm.log.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for id in net.store.ids() {
        for &x in net.store.value(id).iter() {
            x.put(&mut out);
        }
    }
    out
}

pub(super) fn to_bytes(lm: &NeuralLM) -> Vec<u8> {
    match &lm.net {
        AnyNetwork::F32(n) => encode(lm, n),
        AnyNetwork::F64(n) => encode(lm, n),
    }
}

fn decode_values<T: LeBytes>(header: &Header, body: &[u8]) -> Result<Vec<Array2<T>>, NeuralError> {
    let total: usize = header.params.iter().map(|(_, r, c)| r * c).sum();
    if body.len() != total * T::WIDTH {
        return Err(NeuralError::Format(format!(
            "expected {} parameter bytes, found {}",
            total * T::WIDTH,
            body.len()
        )));
    }
    let mut pos = 0;
    let mut values = Vec::with_capacity(header.params.len());
    for (_, r, c) in &header.params {
        let n = r * c;
        let data: Vec<T> = body[pos..pos + n * T::WIDTH].chunks_exact(T::WIDTH).map(T::get).collect();
        pos += n * T::WIDTH;
        values.push(Array2::from_shape_vec((*r, *c), data).map_err(|e| NeuralError::Format(e.to_string()))?);
    }
    Ok(values)
}

pub(super) fn from_bytes(bytes: &[u8]) -> Result<NeuralLM, NeuralError> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(NeuralError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(NeuralError::Format(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body_start = 20usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| NeuralError::Format("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[20..body_start])
        .map_err(|e| NeuralError::Format(format!("bad header: {e}")))?;
    let vocab = Vocabulary::from_tsv(&header.vocab_tsv, "checkpoint header")
        .map_err(|e| NeuralError::Format(e.to_string()))?
        .with_min_count(header.min_count);
    let body = &bytes[body_start..];
    let net = match header.config.precision {
        Precision::F32 => AnyNetwork::F32(Network::with_values(
            &header.config,
            vocab.len(),
            decode_values(&header, body)?,
        )?),
        Precision::F64 => AnyNetwork::F64(Network::with_values(
            &header.config,
            vocab.len(),
            decode_values(&header, body)?,
        )?),
    };
    Ok(NeuralLM {
        vocab,
        net,
        log: header.log,
    })
}
