//! Interpolated modified Kneser-Ney n-gram language models.
//!
//! Every utterance is preceded by a single `<s>` context symbol, which is
//! never predicted. Counts at the highest order are raw; below it they are
//! continuation counts (number of distinct left extensions), except for
//! n-grams starting with `<s>`, which keep raw counts. Probabilities
//! interpolate down to a uniform distribution over the vocabulary.

mod arpa;
mod io;

use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Vocabulary};
use crate::lm::LanguageModel;

pub use arpa::{parse_arpa, ArpaModel};

pub const DEFAULT_ORDER: usize = 5;
pub const FALLBACK_DISCOUNT: f64 = 0.75;
const MAX_ORDER: usize = 8;

#[derive(Debug, Error)]
pub enum NGramError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("order must be between 1 and {MAX_ORDER}, got {0}")]
    BadOrder(usize),
    #[error("vocabulary of {types} types is too large for an order-{order} model")]
    VocabularyTooLarge { types: usize, order: usize },
    #[error("token id {id} is outside the {types}-type vocabulary")]
    TokenOutOfRange { id: u32, types: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("not an n-gram model file: {0}")]
    Format(String),
    #[error("ARPA line {line}: {message}")]
    Arpa { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGramConfig {
    pub order: usize,
    /// Three discounts per order (modified KN) instead of one.
    pub modified: bool,
}

impl Default for NGramConfig {
    fn default() -> Self {
        Self {
            order: DEFAULT_ORDER,
            modified: true,
        }
    }
}

/// Count-based estimator over dense ids `0..num_types`. The context symbol
/// `<s>` is id `num_types`.
#[derive(Debug, Clone, PartialEq)]
pub struct KneserNey {
    order: usize,
    modified: bool,
    num_types: usize,
    bits: u32,
    /// Discounts for counts 1, 2 and 3+, per order (index 0 = unigrams).
    discounts: Vec<[f64; 3]>,
    /// Discounted-mass term of every n-gram, per order, keyed by packed n-gram.
    alpha: Vec<HashMap<u128, f64>>,
    /// Interpolation weight of every observed context, per order, keyed by packed context.
    gamma: Vec<HashMap<u128, f64>>,
}

fn pack(ids: &[u32], bits: u32) -> u128 {
    ids.iter().fold(0u128, |acc, &id| (acc << bits) | u128::from(id))
}

fn low_mask(len: usize, bits: u32) -> u128 {
    let b = bits as usize * len;
    if b >= 128 {
        u128::MAX
    } else {
        (1u128 << b) - 1
    }
}

fn discount(d: &[f64; 3], count: u64) -> f64 {
    match count {
        0 => 0.0,
        1 => d[0],
        2 => d[1],
        _ => d[2],
    }
}

/// Discounts from count-of-counts `n[0..4]` = n1..n4 of one order.
/// Returns `None` when the estimate is degenerate.
pub fn estimate_discounts(n: [u64; 4], modified: bool) -> Option<[f64; 3]> {
    let [n1, n2, n3, n4] = n.map(|x| x as f64);
    if n1 == 0.0 || n2 == 0.0 {
        return None;
    }
    let y = n1 / (n1 + 2.0 * n2);
    if !modified {
        return (y > 0.0 && y < 1.0).then_some([y; 3]);
    }
    if n3 == 0.0 || n4 == 0.0 {
        return None;
    }
    let d = [
        1.0 - 2.0 * y * n2 / n1,
        2.0 - 3.0 * y * n3 / n2,
        3.0 - 4.0 * y * n4 / n3,
    ];
    let ok = d.iter().enumerate().all(|(i, &di)| di > 0.0 && di < (i + 1) as f64);
    ok.then_some(d)
}

impl KneserNey {
    /// Estimates a model from id sentences. When `eos` is given it is
    /// appended to every sentence and predicted like any other token.
    pub fn train(
        sentences: &[Vec<u32>],
        num_types: usize,
        eos: Option<u32>,
        config: NGramConfig,
    ) -> Result<Self, NGramError> {
        let order = config.order;
        if order == 0 || order > MAX_ORDER {
            return Err(NGramError::BadOrder(order));
        }
        let bits = (128 / order as u32).min(32);
        if (num_types as u128 + 1) >= (1u128 << bits) {
            return Err(NGramError::VocabularyTooLarge {
                types: num_types,
                order,
            });
        }
        let bos = num_types as u32;
        let mut any = false;

        // counts[k-1] holds order-k counts: raw at the top order and for
        // n-grams starting with <s>, continuation counts otherwise.
        let mut counts: Vec<HashMap<u128, u64>> = vec![HashMap::new(); order];
        let mut padded: Vec<u32> = Vec::new();
        for s in sentences {
            padded.clear();
            padded.push(bos);
            padded.extend_from_slice(s);
            if let Some(e) = eos {
                padded.push(e);
            }
            for &id in &padded[1..] {
                if id as usize >= num_types {
                    return Err(NGramError::TokenOutOfRange { id, types: num_types });
                }
            }
            for i in 1..padded.len() {
                any = true;
                let k = order.min(i + 1);
                let start = i + 1 - k;
                // Below the top order this is an n-gram starting at <s>.
                *counts[k - 1].entry(pack(&padded[start..=i], bits)).or_default() += 1;
            }
        }
        if !any {
            return Err(NGramError::EmptyCorpus);
        }
        // Continuation counts: each distinct order-(k+1) n-gram is one left
        // extension of its suffix.
        for k in (1..order).rev() {
            let (lower, upper) = counts.split_at_mut(k);
            let lower = &mut lower[k - 1];
            let mask = low_mask(k, bits);
            for &g in upper[0].keys() {
                *lower.entry(g & mask).or_default() += 1;
            }
        }

        let mut discounts = Vec::with_capacity(order);
        for (k, table) in counts.iter().enumerate() {
            let mut n = [0u64; 4];
            for &c in table.values() {
                if (1..=4).contains(&c) {
                    n[c as usize - 1] += 1;
                }
            }
            let d = estimate_discounts(n, config.modified).unwrap_or_else(|| {
                warn!(
                    "order {}: degenerate count-of-counts {n:?}, using fixed discount {FALLBACK_DISCOUNT}",
                    k + 1
                );
                [FALLBACK_DISCOUNT; 3]
            });
            discounts.push(d);
        }

        let mut alpha = Vec::with_capacity(order);
        let mut gamma = Vec::with_capacity(order);
        for (k, table) in counts.iter().enumerate() {
            let d = &discounts[k];
            // context -> (total, n1, n2, n3+)
            let mut ctx: HashMap<u128, (u64, u64, u64, u64)> = HashMap::new();
            for (&g, &c) in table {
                let e = ctx.entry(g >> bits).or_default();
                e.0 += c;
                match c {
                    1 => e.1 += 1,
                    2 => e.2 += 1,
                    _ => e.3 += 1,
                }
            }
            let mut a = HashMap::with_capacity(table.len());
            for (&g, &c) in table {
                let total = ctx[&(g >> bits)].0 as f64;
                a.insert(g, (c as f64 - discount(d, c)).max(0.0) / total);
            }
            let mut gm = HashMap::with_capacity(ctx.len());
            for (h, (total, n1, n2, n3)) in ctx {
                let mass = d[0] * n1 as f64 + d[1] * n2 as f64 + d[2] * n3 as f64;
                gm.insert(h, mass / total as f64);
            }
            alpha.push(a);
            gamma.push(gm);
        }

        Ok(Self {
            order,
            modified: config.modified,
            num_types,
            bits,
            discounts,
            alpha,
            gamma,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    /// Id of the `<s>` context symbol.
    pub fn bos(&self) -> u32 {
        self.num_types as u32
    }

    pub fn discounts(&self) -> &[[f64; 3]] {
        &self.discounts
    }

    pub fn is_modified(&self) -> bool {
        self.modified
    }

    /// p(w | context). `context` is the full history, usually starting with
    /// [`Self::bos`]; only its last `order - 1` ids matter.
    pub fn prob(&self, context: &[u32], w: u32) -> f64 {
        let mut p = 1.0 / self.num_types as f64;
        let mut g = [0u32; MAX_ORDER];
        for k in 1..=self.order {
            let hlen = k - 1;
            if context.len() < hlen {
                break;
            }
            let h = &context[context.len() - hlen..];
            let hkey = pack(h, self.bits);
            let Some(&gm) = self.gamma[k - 1].get(&hkey) else {
                break;
            };
            g[..hlen].copy_from_slice(h);
            g[hlen] = w;
            let a = self.alpha[k - 1]
                .get(&pack(&g[..k], self.bits))
                .copied()
                .unwrap_or(0.0);
            p = a + gm * p;
        }
        p
    }

    pub fn logprob(&self, context: &[u32], w: u32) -> f64 {
        self.prob(context, w).ln()
    }

    /// Observed contexts of order `k` (length `k - 1`), unpacked.
    pub fn contexts(&self, k: usize) -> Vec<Vec<u32>> {
        let mut v: Vec<Vec<u32>> = self.gamma[k - 1]
            .keys()
            .map(|&h| self.unpack(h, k - 1))
            .collect();
        v.sort();
        v
    }

    /// Observed n-grams of order `k`, unpacked and sorted.
    pub fn ngrams(&self, k: usize) -> Vec<Vec<u32>> {
        let mut v: Vec<Vec<u32>> = self.alpha[k - 1]
            .keys()
            .map(|&g| self.unpack(g, k))
            .collect();
        v.sort();
        v
    }

    fn unpack(&self, key: u128, len: usize) -> Vec<u32> {
        let m = low_mask(1, self.bits);
        (0..len)
            .rev()
            .map(|i| ((key >> (self.bits as usize * i)) & m) as u32)
            .collect()
    }

    /// Interpolation weight of an observed context.
    pub fn backoff_weight(&self, context: &[u32]) -> Option<f64> {
        self.gamma
            .get(context.len())
            .and_then(|t| t.get(&pack(context, self.bits)))
            .copied()
    }
}

/// A Kneser-Ney model tied to a token vocabulary, predicting `<eos>`.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    vocab: Vocabulary,
    kn: KneserNey,
}

impl NGramModel {
    pub fn train(
        sentences: &[Vec<String>],
        vocab: Vocabulary,
        config: NGramConfig,
    ) -> Result<Self, NGramError> {
        let ids: Vec<Vec<u32>> = sentences.iter().map(|s| vocab.encode(s)).collect();
        let kn = KneserNey::train(&ids, vocab.len(), Some(Vocabulary::EOS_ID), config)?;
        Ok(Self { vocab, kn })
    }

    pub fn train_documents(
        docs: &[Document],
        vocab: Vocabulary,
        config: NGramConfig,
    ) -> Result<Self, NGramError> {
        let sentences: Vec<Vec<String>> = docs.iter().flat_map(|d| d.utterances.iter().cloned()).collect();
        Self::train(&sentences, vocab, config)
    }

    pub fn estimator(&self) -> &KneserNey {
        &self.kn
    }

    pub fn order(&self) -> usize {
        self.kn.order
    }

    /// Natural-log probability of `next` after `context` (both unk-mapped);
    /// the context is taken to start at an utterance boundary.
    pub fn logprob<S: AsRef<str>>(&self, context: &[S], next: &str) -> f64 {
        let mut ids = vec![self.kn.bos()];
        ids.extend(self.vocab.encode(context));
        self.kn.logprob(&ids, self.vocab.id_or_unk(next))
    }

    /// Corpus perplexity; `<eos>` predictions are conditioned on in both
    /// cases but only averaged in when `include_eos` is set.
    pub fn perplexity(&self, sentences: &[Vec<String>], include_eos: bool) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for s in sentences {
            let mut ids = self.vocab.encode(s);
            ids.push(Vocabulary::EOS_ID);
            let lp = self.sentence_logprobs(&ids);
            let keep = if include_eos { lp.len() } else { lp.len() - 1 };
            total += lp[..keep].iter().sum::<f64>();
            n += keep;
        }
        (-total / n.max(1) as f64).exp()
    }

    pub fn to_arpa(&self) -> String {
        arpa::write_arpa(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        io::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NGramError> {
        io::from_bytes(bytes)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NGramError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| NGramError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NGramError> {
        let bytes = std::fs::read(path).map_err(|e| NGramError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }

    /// True when `bytes` starts with the n-gram model file magic.
    pub fn sniff(bytes: &[u8]) -> bool {
        bytes.starts_with(io::MAGIC)
    }
}

impl LanguageModel for NGramModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn sentence_logprobs(&self, ids: &[u32]) -> Vec<f64> {
        let mut ctx = Vec::with_capacity(ids.len() + 1);
        ctx.push(self.kn.bos());
        let mut out = Vec::with_capacity(ids.len());
        for &w in ids {
            out.push(self.kn.logprob(&ctx, w));
            ctx.push(w);
        }
        out
    }

    fn next_distribution(&self, prefix: &[u32]) -> Vec<f64> {
        let mut ctx = Vec::with_capacity(prefix.len() + 1);
        ctx.push(self.kn.bos());
        ctx.extend_from_slice(prefix);
        (0..self.vocab.len() as u32).map(|w| self.kn.prob(&ctx, w)).collect()
    }

    fn document_logprobs(&self, stream: &[u32]) -> Vec<f64> {
        let mut ctx = vec![self.kn.bos()];
        let mut out = Vec::with_capacity(stream.len());
        for &w in stream {
            out.push(self.kn.logprob(&ctx, w));
            if w == Vocabulary::EOS_ID {
                ctx.clear();
                ctx.push(self.kn.bos());
            } else {
                ctx.push(w);
            }
        }
        out
    }

    fn describe(&self) -> String {
        format!("{}-gram {}KN", self.kn.order, if self.kn.modified { "modified " } else { "" })
    }
}
