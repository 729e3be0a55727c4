use std::path::Path;

use log::warn;
use rand::Rng;

use super::graph::{log_softmax_at, Graph};
use super::network::Network;
use super::train::{evaluate_stream, EpochLog};
use super::{Architecture, NeuralError, NeuralLMConfig, Real};
use crate::corpus::Vocabulary;
use crate::lm::LanguageModel;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyNetwork {
    F32(Network<f32>),
    F64(Network<f64>),
}

macro_rules! dispatch {
    ($self:expr, $n:ident => $body:expr) => {
        match $self {
            AnyNetwork::F32($n) => $body,
            AnyNetwork::F64($n) => $body,
        }
    };
}

impl AnyNetwork {
    pub fn config(&self) -> &NeuralLMConfig {
        dispatch!(self, n => &n.config)
    }
}

/// A trained neural language model with its vocabulary and training log.
/// `<eos>` doubles as the beginning-of-sequence input for fresh contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralLM {
    pub vocab: Vocabulary,
    pub net: AnyNetwork,
    pub log: Vec<EpochLog>,
}

const SCORE_CHUNK: usize = 256;
const SCORE_BATCH: usize = 32;

/// Log-probability of `targets[i]` given `inputs[..=i]`, starting from a zero state.
fn stream_logprobs<T: Real>(net: &Network<T>, inputs: &[u32], targets: &[u32]) -> Result<Vec<f64>, NeuralError> {
    let mut out = Vec::with_capacity(targets.len());
    if inputs.is_empty() {
        return Ok(out);
    }
    match net.config.architecture {
        Architecture::Lstm => {
            let mut state = net.zero_state(1);
            for (ci, co) in inputs.chunks(SCORE_CHUNK).zip(targets.chunks(SCORE_CHUNK)) {
                let mut g = Graph::new();
                let steps: Vec<Vec<u32>> = ci.iter().map(|&x| vec![x]).collect();
                let (o, s) = net.forward_lstm(&mut g, &steps, &state, None)?;
                state = s;
                let v = g.value(o);
                for (r, &t) in co.iter().enumerate() {
                    out.push(log_softmax_at(v.row(r), t as usize).to_f64().unwrap_or(f64::NAN));
                }
            }
        }
        Architecture::Transformer => {
            let ctx = net.config.context;
            if inputs.len() > ctx {
                warn!("sequence of {} tokens exceeds context {ctx}; scoring with a sliding window", inputs.len());
            }
            let stride = (ctx / 2).max(1);
            // Each window after the first predicts `stride` new positions
            // with `ctx - stride` tokens of left context.
            let mut done = 0;
            let mut start = 0;
            while done < inputs.len() {
                let end = (start + ctx).min(inputs.len());
                let logits = net.logits_batch(&[inputs[start..end].to_vec()])?;
                for pos in done..end {
                    let r = pos - start;
                    out.push(log_softmax_at(logits.row(r), targets[pos] as usize).to_f64().unwrap_or(f64::NAN));
                }
                done = end;
                start = (done + stride).saturating_sub(ctx);
            }
        }
    }
    Ok(out)
}

fn batch_logprobs<T: Real>(net: &Network<T>, batch: &[Vec<u32>], bos: u32) -> Result<Vec<Vec<f64>>, NeuralError> {
    let mut results = vec![Vec::new(); batch.len()];
    let fits = |s: &Vec<u32>| net.config.architecture == Architecture::Lstm || s.len() <= net.config.context;
    let mut order: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].is_empty()).collect();
    // Long sequences go through the sliding-window path one at a time.
    for &i in order.iter().filter(|&&i| !fits(&batch[i])) {
        let mut inputs = vec![bos];
        inputs.extend_from_slice(&batch[i][..batch[i].len() - 1]);
        results[i] = stream_logprobs(net, &inputs, &batch[i])?;
    }
    order.retain(|&i| fits(&batch[i]));
    for group in order.chunks(SCORE_BATCH) {
        let width = group.iter().map(|&i| batch[i].len()).max().unwrap_or(0);
        let seqs: Vec<Vec<u32>> = group
            .iter()
            .map(|&i| {
                let mut s = vec![bos];
                s.extend_from_slice(&batch[i][..batch[i].len() - 1]);
                s.resize(width, bos);
                s
            })
            .collect();
        let logits = net.logits_batch(&seqs)?;
        for (b, &i) in group.iter().enumerate() {
            results[i] = batch[i]
                .iter()
                .enumerate()
                .map(|(t, &tok)| {
                    log_softmax_at(logits.row(b * width + t), tok as usize)
                        .to_f64()
                        .unwrap_or(f64::NAN)
                })
                .collect();
        }
    }
    Ok(results)
}

fn next_dist<T: Real>(net: &Network<T>, prefix: &[u32], bos: u32) -> Result<Vec<f64>, NeuralError> {
    let mut inputs = vec![bos];
    inputs.extend_from_slice(prefix);
    let row = match net.config.architecture {
        Architecture::Lstm => {
            let mut state = net.zero_state(1);
            let mut last = None;
            for chunk in inputs.chunks(SCORE_CHUNK) {
                let mut g = Graph::new();
                let steps: Vec<Vec<u32>> = chunk.iter().map(|&x| vec![x]).collect();
                let (o, s) = net.forward_lstm(&mut g, &steps, &state, None)?;
                state = s;
                let v = g.value(o);
                last = Some(v.row(v.nrows() - 1).to_owned());
            }
            last.expect("at least one input")
        }
        Architecture::Transformer => {
            let ctx = net.config.context;
            if inputs.len() > ctx {
                warn!("prefix of {} tokens exceeds context {ctx}; truncating", inputs.len());
                inputs.drain(..inputs.len() - ctx);
            }
            let logits = net.logits_batch(&[inputs])?;
            logits.row(logits.nrows() - 1).to_owned()
        }
    };
    Ok(softmax_f64(row.view()))
}

fn softmax_f64<T: Real>(row: ndarray::ArrayView1<T>) -> Vec<f64> {
    let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b.to_f64().unwrap_or(f64::NAN)));
    let exps: Vec<f64> = row.iter().map(|&x| (x.to_f64().unwrap_or(f64::NAN) - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// All next-token distributions of one sequence from a single pass, or
/// `None` when the sequence overflows a Transformer context.
fn prefix_dists<T: Real>(net: &Network<T>, ids: &[u32], bos: u32) -> Result<Option<Vec<Vec<f64>>>, NeuralError> {
    if ids.is_empty() {
        return Ok(Some(Vec::new()));
    }
    if net.config.architecture == Architecture::Transformer && ids.len() > net.config.context {
        return Ok(None);
    }
    let mut inputs = vec![bos];
    inputs.extend_from_slice(&ids[..ids.len() - 1]);
    let logits = net.logits_batch(&[inputs])?;
    Ok(Some(logits.rows().into_iter().map(softmax_f64).collect()))
}

impl NeuralLM {
    pub fn config(&self) -> &NeuralLMConfig {
        self.net.config()
    }

    fn bos(&self) -> u32 {
        Vocabulary::EOS_ID
    }

    pub fn try_batch_logprobs(&self, batch: &[Vec<u32>]) -> Result<Vec<Vec<f64>>, NeuralError> {
        dispatch!(&self.net, n => batch_logprobs(n, batch, self.bos()))
    }

    pub fn try_next_distribution(&self, prefix: &[u32]) -> Result<Vec<f64>, NeuralError> {
        dispatch!(&self.net, n => next_dist(n, prefix, self.bos()))
    }

    pub fn try_document_logprobs(&self, stream: &[u32]) -> Result<Vec<f64>, NeuralError> {
        if stream.is_empty() {
            return Ok(Vec::new());
        }
        let mut inputs = vec![self.bos()];
        inputs.extend_from_slice(&stream[..stream.len() - 1]);
        dispatch!(&self.net, n => stream_logprobs(n, &inputs, stream))
    }

    /// Perplexity of an id stream with the batched training-time evaluator.
    pub fn evaluate(&self, stream: &[u32]) -> Result<f64, NeuralError> {
        dispatch!(&self.net, n => evaluate_stream(n, stream))
    }

    /// `epoch,train_ppl,valid_ppl,lr` CSV.
    pub fn training_log_csv(&self) -> String {
        let mut s = String::from("epoch,train_ppl,valid_ppl,lr\n");
        for e in &self.log {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_ppl, e.valid_ppl, e.lr));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        std::fs::write(path, super::checkpoint::to_bytes(self)).map_err(|e| NeuralError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        let bytes = std::fs::read(path).map_err(|e| NeuralError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        super::checkpoint::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NeuralError> {
        super::checkpoint::from_bytes(bytes)
    }

    /// True when `bytes` starts with the checkpoint magic.
    pub fn sniff(bytes: &[u8]) -> bool {
        bytes.starts_with(super::checkpoint::MAGIC)
    }

    /// Sets every output-layer weight and bias to zero, giving a uniform model.
    pub fn zero_output_layer(&mut self) {
        dispatch!(&mut self.net, n => {
            let ids: Vec<_> = n.store.ids().collect();
            for id in ids {
                if n.store.name(id).starts_with("output.") {
                    n.store.value_mut(id).fill(num_traits::Zero::zero());
                }
            }
        })
    }
}

impl LanguageModel for NeuralLM {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn sentence_logprobs(&self, ids: &[u32]) -> Vec<f64> {
        self.batch_sentence_logprobs(std::slice::from_ref(&ids.to_vec()))
            .pop()
            .unwrap_or_default()
    }

    fn next_distribution(&self, prefix: &[u32]) -> Vec<f64> {
        self.try_next_distribution(prefix).expect("prefix ids are within the vocabulary")
    }

    fn document_logprobs(&self, stream: &[u32]) -> Vec<f64> {
        self.try_document_logprobs(stream).expect("stream ids are within the vocabulary")
    }

    fn batch_sentence_logprobs(&self, batch: &[Vec<u32>]) -> Vec<Vec<f64>> {
        self.try_batch_logprobs(batch).expect("sentence ids are within the vocabulary")
    }

    fn prefix_distributions(&self, ids: &[u32]) -> Vec<Vec<f64>> {
        let single = dispatch!(&self.net, n => prefix_dists(n, ids, self.bos()))
            .expect("sentence ids are within the vocabulary");
        single.unwrap_or_else(|| (0..ids.len()).map(|i| self.next_distribution(&ids[..i])).collect())
    }

    fn describe(&self) -> String {
        let c = self.config();
        format!("{} {}x{}", c.architecture, c.layers, c.hidden)
    }
}

/// Draws an index from `dist`. Temperature 1 samples the distribution as
/// given; temperature 0 returns the argmax (lowest index on ties).
pub fn sample_index<R: Rng + ?Sized>(dist: &[f64], rng: &mut R, temperature: f64) -> usize {
    if temperature <= 0.0 {
        let mut best = 0;
        for (i, &p) in dist.iter().enumerate() {
            if p > dist[best] {
                best = i;
            }
        }
        return best;
    }
    let weights: Vec<f64> = if (temperature - 1.0).abs() < f64::EPSILON {
        dist.to_vec()
    } else {
        dist.iter().map(|&p| p.powf(1.0 / temperature)).collect()
    };
    let z: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * z;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Ancestral sampling: repeatedly draw the next token from the model's
/// distribution given the prefix plus everything drawn so far.
pub fn generate_text<M: LanguageModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    prefix: &[u32],
    rng: &mut R,
    length: usize,
    temperature: f64,
) -> Vec<u32> {
    let mut ctx = prefix.to_vec();
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let dist = model.next_distribution(&ctx);
        let next = sample_index(&dist, rng, temperature) as u32;
        out.push(next);
        ctx.push(next);
    }
    out
}
