//! Binary model files: magic, version, JSON header, then per order the
//! sorted n-gram and context tables as little-endian `(u128, f64)` records.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{KneserNey, NGramError, NGramModel};
use crate::corpus::Vocabulary;

pub(super) const MAGIC: &[u8; 8] = b"AUXINVNG";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    order: usize,
    modified: bool,
    num_types: usize,
    bits: u32,
    discounts: Vec<[f64; 3]>,
    min_count: u64,
    vocab_tsv: String,
}

fn put_table(out: &mut Vec<u8>, table: &HashMap<u128, f64>) {
    let mut entries: Vec<(u128, f64)> = table.iter().map(|(&k, &v)| (k, v)).collect();
    entries.sort_unstable_by_key(|e| e.0);
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (k, v) in entries {
        out.extend_from_slice(&k.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(super) fn to_bytes(model: &NGramModel) -> Vec<u8> {
    let kn = &model.kn;
    let header = Header {
        order: kn.order,
        modified: kn.modified,
        num_types: kn.num_types,
        bits: kn.bits,
        discounts: kn.discounts.clone(),
        min_count: model.vocab.min_count(),
        vocab_tsv: model.vocab.to_tsv(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for k in 0..kn.order {
        put_table(&mut out, &kn.alpha[k]);
        put_table(&mut out, &kn.gamma[k]);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NGramError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NGramError::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NGramError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NGramError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn table(&mut self) -> Result<HashMap<u128, f64>, NGramError> {
        let n = self.u64()? as usize;
        if n > self.bytes.len() / 24 {
            return Err(NGramError::Format("table length exceeds file size".into()));
        }
        let mut t = HashMap::with_capacity(n);
        for _ in 0..n {
            let k = u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes"));
            let v = f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
            t.insert(k, v);
        }
        Ok(t)
    }
}

pub(super) fn from_bytes(bytes: &[u8]) -> Result<NGramModel, NGramError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(NGramError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NGramError::Format(format!("unsupported version {version}")));
    }
    let len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)
        .map_err(|e| NGramError::Format(format!("bad header: {e}")))?;
    let vocab = Vocabulary::from_tsv(&header.vocab_tsv, "model header")
        .map_err(|e| NGramError::Format(e.to_string()))?
        .with_min_count(header.min_count);
    if vocab.len() != header.num_types || header.order == 0 || header.discounts.len() != header.order {
        return Err(NGramError::Format("inconsistent header".into()));
    }
    let mut alpha = Vec::with_capacity(header.order);
    let mut gamma = Vec::with_capacity(header.order);
    for _ in 0..header.order {
        alpha.push(r.table()?);
        gamma.push(r.table()?);
    }
    if r.pos != bytes.len() {
        return Err(NGramError::Format("trailing bytes".into()));
    }
    Ok(NGramModel {
        vocab,
        kn: KneserNey {
            order: header.order,
            modified: header.modified,
            num_types: header.num_types,
            bits: header.bits,
            discounts: header.discounts,
            alpha,
            gamma,
        },
    })
}
