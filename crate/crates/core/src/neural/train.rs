use std::time::Instant;

use log::{info, warn};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{log_softmax_at, Graph};
use super::model::{AnyNetwork, NeuralLM};
use super::network::{Dropout, Network};
use super::params::{clip_global_norm, ParamId};
use super::{Architecture, NeuralError, NeuralLMConfig, Precision, Real};
use crate::corpus::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_ppl: f64,
    pub valid_ppl: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Stop an epoch after this many updates.
    pub max_batches_per_epoch: Option<usize>,
    /// Stop training once this many seconds have elapsed (checked between epochs).
    pub time_limit_secs: Option<f64>,
    /// Stop once validation perplexity is at or below this value.
    pub target_valid_ppl: Option<f64>,
}

/// Splits a stream into `batch` contiguous rows of equal length, dropping the remainder.
pub fn batchify(stream: &[u32], batch: usize) -> Vec<Vec<u32>> {
    let len = stream.len() / batch.max(1);
    (0..batch).map(|b| stream[b * len..(b + 1) * len].to_vec()).collect()
}

/// One training or evaluation segment: inputs and their next-token targets.
struct Segment {
    /// Row-major `[batch][steps]`.
    inputs: Vec<Vec<u32>>,
    targets: Vec<Vec<u32>>,
}

fn segments(rows: &[Vec<u32>], width: usize) -> Vec<Segment> {
    let len = rows.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < len {
        let n = width.min(len - 1 - i);
        out.push(Segment {
            inputs: rows.iter().map(|r| r[i..i + n].to_vec()).collect(),
            targets: rows.iter().map(|r| r[i + 1..i + 1 + n].to_vec()).collect(),
        });
        i += n;
    }
    out
}

fn time_major(rows: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let n = rows[0].len();
    (0..n).map(|t| rows.iter().map(|r| r[t]).collect()).collect()
}

/// Targets flattened in the row order of the network's logits.
fn flat_targets(arch: Architecture, targets: &[Vec<u32>]) -> Vec<Option<u32>> {
    match arch {
        Architecture::Lstm => time_major(targets).into_iter().flatten().map(Some).collect(),
        Architecture::Transformer => targets.iter().flatten().copied().map(Some).collect(),
    }
}

fn segment_width<T: Real>(net: &Network<T>) -> usize {
    match net.config.architecture {
        Architecture::Lstm => net.config.bptt,
        Architecture::Transformer => net.config.context,
    }
}

/// Perplexity of a stream under batched evaluation without dropout.
pub(crate) fn evaluate_stream<T: Real>(net: &Network<T>, stream: &[u32]) -> Result<f64, NeuralError> {
    // Rows span at least a few segments so zero-state starts stay rare.
    let batch = net
        .config
        .batch_size
        .min(stream.len() / (4 * segment_width(net)))
        .max(1);
    if stream.len() < 2 {
        return Err(NeuralError::TooLittleData("validation stream needs at least 2 tokens".into()));
    }
    let rows = batchify(stream, batch);
    let mut state = net.zero_state(batch);
    let mut nll = 0.0;
    let mut count = 0usize;
    for seg in segments(&rows, segment_width(net)) {
        let mut g = Graph::new();
        let out = match net.config.architecture {
            Architecture::Lstm => {
                let (o, s) = net.forward_lstm(&mut g, &time_major(&seg.inputs), &state, None)?;
                state = s;
                o
            }
            Architecture::Transformer => net.forward_transformer(&mut g, &seg.inputs, None)?,
        };
        let logits = g.value(out);
        for (r, t) in flat_targets(net.config.architecture, &seg.targets).iter().enumerate() {
            let t = t.expect("all targets present");
            nll -= log_softmax_at(logits.row(r), t as usize).to_f64().unwrap_or(f64::NAN);
            count += 1;
        }
    }
    Ok((nll / count.max(1) as f64).exp())
}

fn train_network<T: Real>(
    net: &mut Network<T>,
    train: &[u32],
    valid: &[u32],
    opts: &TrainOptions,
) -> Result<Vec<EpochLog>, NeuralError> {
    let cfg = net.config.clone();
    let batch = cfg.batch_size;
    if train.len() < 2 * batch {
        return Err(NeuralError::TooLittleData(format!(
            "{} training tokens for batch size {batch}",
            train.len()
        )));
    }
    let rows = batchify(train, batch);
    let segs = segments(&rows, segment_width(net));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9));
    let mut lr = cfg.lr;
    let mut best: Option<(f64, Vec<Array2<T>>)> = None;
    let mut log = Vec::new();
    let started = Instant::now();

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let mut state = net.zero_state(batch);
        let mut nll = 0.0;
        let mut count = 0usize;
        for (step, seg) in segs.iter().enumerate() {
            if opts.max_batches_per_epoch.is_some_and(|m| step >= m) {
                break;
            }
            let mut g = Graph::new();
            let drop = Some(Dropout {
                rate: cfg.dropout,
                rng: &mut rng,
            });
            let out = match cfg.architecture {
                Architecture::Lstm => {
                    let (o, s) = net.forward_lstm(&mut g, &time_major(&seg.inputs), &state, drop)?;
                    state = s;
                    o
                }
                Architecture::Transformer => net.forward_transformer(&mut g, &seg.inputs, drop)?,
            };
            let targets = flat_targets(cfg.architecture, &seg.targets);
            let loss = g.softmax_cross_entropy(out, &targets)?;
            let loss_value = g.value(loss)[[0, 0]].to_f64().unwrap_or(f64::NAN);
            if !loss_value.is_finite() {
                return Err(NeuralError::NumericFault(format!(
                    "non-finite loss {loss_value} at epoch {epoch}, step {step}, lr {lr}"
                )));
            }
            g.backward(loss)?;
            let mut grads: Vec<(ParamId, Array2<T>)> =
                g.param_grads().into_iter().map(|(p, a)| (p, a.clone())).collect();
            let norm = clip_global_norm(&mut grads, cfg.clip);
            if !norm.is_finite() {
                return Err(NeuralError::NumericFault(format!(
                    "non-finite gradient norm at epoch {epoch}, step {step}, loss {loss_value}, lr {lr}"
                )));
            }
            net.store.sgd_step(&grads, lr);
            if !net.store.all_finite() {
                return Err(NeuralError::NumericFault(format!(
                    "non-finite parameters after step {step} of epoch {epoch} (gradient norm {norm}, lr {lr})"
                )));
            }
            nll += loss_value * targets.len() as f64;
            count += targets.len();
        }
        let train_ppl = (nll / count.max(1) as f64).exp();
        let valid_ppl = evaluate_stream(net, valid)?;
        let entry = EpochLog {
            epoch,
            train_ppl,
            valid_ppl,
            lr,
            seconds: t0.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: train ppl {train_ppl:.4}, valid ppl {valid_ppl:.4}, lr {lr}, {:.1}s",
            entry.seconds
        );
        log.push(entry);
        let improved = best.as_ref().is_none_or(|(b, _)| valid_ppl < *b);
        if improved {
            let snapshot = net.store.ids().map(|id| net.store.value(id).clone()).collect();
            best = Some((valid_ppl, snapshot));
        } else {
            lr /= cfg.anneal;
        }
        if opts.target_valid_ppl.is_some_and(|t| valid_ppl <= t) {
            break;
        }
        if opts.time_limit_secs.is_some_and(|t| started.elapsed().as_secs_f64() >= t) {
            warn!("time limit reached after epoch {epoch}");
            break;
        }
    }
    if let Some((_, values)) = best {
        for (id, v) in net.store.ids().collect::<Vec<_>>().into_iter().zip(values) {
            *net.store.value_mut(id) = v;
        }
    }
    Ok(log)
}

/// Trains a fresh network on id streams (utterances separated by `<eos>`),
/// keeping the parameters with the best validation perplexity.
pub fn train_lm(
    config: &NeuralLMConfig,
    vocab: &Vocabulary,
    train: &[u32],
    valid: &[u32],
    opts: &TrainOptions,
) -> Result<NeuralLM, NeuralError> {
    let net = match config.precision {
        Precision::F64 => {
            let mut n = Network::<f64>::new(config, vocab.len())?;
            let log = train_network(&mut n, train, valid, opts)?;
            (AnyNetwork::F64(n), log)
        }
        Precision::F32 => {
            let mut n = Network::<f32>::new(config, vocab.len())?;
            let log = train_network(&mut n, train, valid, opts)?;
            (AnyNetwork::F32(n), log)
        }
    };
    Ok(NeuralLM {
        vocab: vocab.clone(),
        net: net.0,
        log: net.1,
    })
}
