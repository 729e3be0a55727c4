//! LSTM and pre-norm Transformer networks built on [`Graph`].

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::{Architecture, NeuralError, NeuralLMConfig, Real};

#[derive(Debug, Clone, PartialEq)]
struct LstmLayer {
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct TransformerLayer {
    ln1_g: ParamId,
    ln1_b: ParamId,
    w_qkv: ParamId,
    b_qkv: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w_1: ParamId,
    b_1: ParamId,
    w_2: ParamId,
    b_2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Lstm(Vec<LstmLayer>),
    Transformer {
        positions: ParamId,
        layers: Vec<TransformerLayer>,
        lnf_g: ParamId,
        lnf_b: ParamId,
    },
}

/// Parameters and structure of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real> {
    pub config: NeuralLMConfig,
    pub vocab_size: usize,
    pub store: ParamStore<T>,
    embed: ParamId,
    body: Body,
    out_w: ParamId,
    out_b: ParamId,
}

/// Per-layer `(h, c)` carried between LSTM segments.
pub type LstmState<T> = Vec<(Array2<T>, Array2<T>)>;

/// Source of dropout masks; `None` disables dropout.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn mask<T: Real>(&mut self, shape: (usize, usize)) -> Array2<T> {
        let keep = T::from(1.0 / (1.0 - self.rate)).expect("representable");
        let rate = self.rate;
        let rng = &mut *self.rng;
        Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < rate { T::zero() } else { keep })
    }
}

fn apply_dropout<T: Real>(g: &mut Graph<T>, x: Var, drop: &mut Option<Dropout<'_>>) -> Result<Var, NeuralError> {
    match drop {
        Some(d) if d.rate > 0.0 => {
            let m = d.mask(g.shape(x));
            g.dropout(x, m)
        }
        _ => Ok(x),
    }
}

impl<T: Real> Network<T> {
    /// Fresh parameters initialized from `config.seed`.
    pub fn new(config: &NeuralLMConfig, vocab_size: usize) -> Result<Self, NeuralError> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(NeuralError::Config("empty vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let r = config.init_range;
        let mut store = ParamStore::new();
        let (e, h, v) = (config.embedding, config.hidden, vocab_size);
        let embed = store.add_uniform("embedding", (v, e), r, &mut rng);
        let body = match config.architecture {
            Architecture::Lstm => {
                let mut layers = Vec::new();
                for l in 0..config.layers {
                    let inp = if l == 0 { e } else { h };
                    layers.push(LstmLayer {
                        w_x: store.add_uniform(&format!("lstm{l}.w_x"), (inp, 4 * h), r, &mut rng),
                        w_h: store.add_uniform(&format!("lstm{l}.w_h"), (h, 4 * h), r, &mut rng),
                        b: store.add_constant(&format!("lstm{l}.b"), (1, 4 * h), 0.0),
                    });
                }
                Body::Lstm(layers)
            }
            Architecture::Transformer => {
                let positions = store.add_uniform("positions", (config.context, h), r, &mut rng);
                let mut layers = Vec::new();
                for l in 0..config.layers {
                    let p = |n: &str| format!("block{l}.{n}");
                    layers.push(TransformerLayer {
                        ln1_g: store.add_constant(&p("ln1.g"), (1, h), 1.0),
                        ln1_b: store.add_constant(&p("ln1.b"), (1, h), 0.0),
                        w_qkv: store.add_uniform(&p("w_qkv"), (h, 3 * h), r, &mut rng),
                        b_qkv: store.add_constant(&p("b_qkv"), (1, 3 * h), 0.0),
                        w_o: store.add_uniform(&p("w_o"), (h, h), r, &mut rng),
                        b_o: store.add_constant(&p("b_o"), (1, h), 0.0),
                        ln2_g: store.add_constant(&p("ln2.g"), (1, h), 1.0),
                        ln2_b: store.add_constant(&p("ln2.b"), (1, h), 0.0),
                        w_1: store.add_uniform(&p("w_1"), (h, 4 * h), r, &mut rng),
                        b_1: store.add_constant(&p("b_1"), (1, 4 * h), 0.0),
                        w_2: store.add_uniform(&p("w_2"), (4 * h, h), r, &mut rng),
                        b_2: store.add_constant(&p("b_2"), (1, h), 0.0),
                    });
                }
                Body::Transformer {
                    positions,
                    layers,
                    lnf_g: store.add_constant("ln_f.g", (1, h), 1.0),
                    lnf_b: store.add_constant("ln_f.b", (1, h), 0.0),
                }
            }
        };
        let out_w = store.add_uniform("output.w", (h, v), r, &mut rng);
        let out_b = store.add_constant("output.b", (1, v), 0.0);
        Ok(Self {
            config: config.clone(),
            vocab_size,
            store,
            embed,
            body,
            out_w,
            out_b,
        })
    }

    /// Rebuilds a network around previously saved parameter values.
    pub fn with_values(config: &NeuralLMConfig, vocab_size: usize, values: Vec<Array2<T>>) -> Result<Self, NeuralError> {
        let mut net = Self::new(config, vocab_size)?;
        if values.len() != net.store.len() {
            return Err(NeuralError::Format(format!(
                "expected {} parameter arrays, found {}",
                net.store.len(),
                values.len()
            )));
        }
        for (id, v) in net.store.ids().collect::<Vec<_>>().into_iter().zip(values) {
            if v.dim() != net.store.value(id).dim() {
                return Err(NeuralError::Format(format!("parameter `{}` has the wrong shape", net.store.name(id))));
            }
            *net.store.value_mut(id) = v;
        }
        Ok(net)
    }

    pub fn zero_state(&self, batch: usize) -> LstmState<T> {
        let h = self.config.hidden;
        (0..self.config.layers)
            .map(|_| (Array2::zeros((batch, h)), Array2::zeros((batch, h))))
            .collect()
    }

    fn output(&self, g: &mut Graph<T>, x: Var) -> Result<Var, NeuralError> {
        let w = g.param(&self.store, self.out_w);
        let b = g.param(&self.store, self.out_b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    /// Time-major LSTM pass: `inputs[t][b]`. Logit row `t * B + b` predicts
    /// the token after `inputs[t][b]`.
    pub fn forward_lstm(
        &self,
        g: &mut Graph<T>,
        inputs: &[Vec<u32>],
        state: &LstmState<T>,
        mut drop: Option<Dropout<'_>>,
    ) -> Result<(Var, LstmState<T>), NeuralError> {
        let Body::Lstm(layers) = &self.body else {
            return Err(NeuralError::Config("not an LSTM".into()));
        };
        let steps = inputs.len();
        let batch = inputs.first().map_or(0, Vec::len);
        if steps == 0 || batch == 0 || inputs.iter().any(|r| r.len() != batch) {
            return Err(NeuralError::Shape("LSTM input must be a non-empty rectangle".into()));
        }
        let flat: Vec<u32> = inputs.iter().flatten().copied().collect();
        let table = g.param(&self.store, self.embed);
        let mut x = g.embedding(table, &flat)?;
        x = apply_dropout(g, x, &mut drop)?;
        let hsz = self.config.hidden;
        let mut new_state = Vec::with_capacity(layers.len());
        for (l, layer) in layers.iter().enumerate() {
            let w_x = g.param(&self.store, layer.w_x);
            let w_h = g.param(&self.store, layer.w_h);
            let b = g.param(&self.store, layer.b);
            let xw = g.matmul(x, w_x)?;
            let xw = g.add_row(xw, b)?;
            let mut h = g.constant(state[l].0.clone());
            let mut c = g.constant(state[l].1.clone());
            let mut outs = Vec::with_capacity(steps);
            for t in 0..steps {
                let xt = g.slice_rows(xw, t * batch, (t + 1) * batch)?;
                let hw = g.matmul(h, w_h)?;
                let z = g.add(xt, hw)?;
                let zi = g.slice_cols(z, 0, hsz)?;
                let zf = g.slice_cols(z, hsz, 2 * hsz)?;
                let zg = g.slice_cols(z, 2 * hsz, 3 * hsz)?;
                let zo = g.slice_cols(z, 3 * hsz, 4 * hsz)?;
                let i = g.sigmoid(zi);
                let f = g.sigmoid(zf);
                let gg = g.tanh(zg);
                let o = g.sigmoid(zo);
                let fc = g.mul(f, c)?;
                let ig = g.mul(i, gg)?;
                c = g.add(fc, ig)?;
                let tc = g.tanh(c);
                h = g.mul(o, tc)?;
                outs.push(h);
            }
            new_state.push((g.value(h).clone(), g.value(c).clone()));
            x = g.concat_rows(&outs)?;
            x = apply_dropout(g, x, &mut drop)?;
        }
        Ok((self.output(g, x)?, new_state))
    }

    /// Batch-major Transformer pass over equal-length sequences. Logit row
    /// `b * T + t` predicts the token after `seqs[b][t]`.
    pub fn forward_transformer(
        &self,
        g: &mut Graph<T>,
        seqs: &[Vec<u32>],
        mut drop: Option<Dropout<'_>>,
    ) -> Result<Var, NeuralError> {
        let Body::Transformer {
            positions,
            layers,
            lnf_g,
            lnf_b,
        } = &self.body
        else {
            return Err(NeuralError::Config("not a Transformer".into()));
        };
        let batch = seqs.len();
        let len = seqs.first().map_or(0, Vec::len);
        if batch == 0 || len == 0 || seqs.iter().any(|s| s.len() != len) {
            return Err(NeuralError::Shape("Transformer input must be a non-empty rectangle".into()));
        }
        if len > self.config.context {
            return Err(NeuralError::Shape(format!(
                "sequence length {len} exceeds context {}",
                self.config.context
            )));
        }
        let d = self.config.hidden;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = T::from(1.0 / (dh as f64).sqrt()).expect("representable");

        let flat: Vec<u32> = seqs.iter().flatten().copied().collect();
        let pos_ids: Vec<u32> = (0..batch).flat_map(|_| 0..len as u32).collect();
        let table = g.param(&self.store, self.embed);
        let ptable = g.param(&self.store, *positions);
        let te = g.embedding(table, &flat)?;
        let pe = g.embedding(ptable, &pos_ids)?;
        let mut x = g.add(te, pe)?;
        x = apply_dropout(g, x, &mut drop)?;

        for layer in layers {
            let p = |g: &mut Graph<T>, id: ParamId| g.param(&self.store, id);
            let (g1, b1) = (p(g, layer.ln1_g), p(g, layer.ln1_b));
            let h = g.layer_norm(x, g1, b1)?;
            let (wqkv, bqkv) = (p(g, layer.w_qkv), p(g, layer.b_qkv));
            let qkv = g.matmul(h, wqkv)?;
            let qkv = g.add_row(qkv, bqkv)?;
            let mut per_seq = Vec::with_capacity(batch);
            for b in 0..batch {
                let rows = g.slice_rows(qkv, b * len, (b + 1) * len)?;
                let mut per_head = Vec::with_capacity(heads);
                for hd in 0..heads {
                    let q = g.slice_cols(rows, hd * dh, (hd + 1) * dh)?;
                    let k = g.slice_cols(rows, d + hd * dh, d + (hd + 1) * dh)?;
                    let v = g.slice_cols(rows, 2 * d + hd * dh, 2 * d + (hd + 1) * dh)?;
                    let s = g.matmul_t(q, k)?;
                    let s = g.scale(s, scale);
                    let a = g.causal_softmax(s)?;
                    per_head.push(g.matmul(a, v)?);
                }
                per_seq.push(g.concat_cols(&per_head)?);
            }
            let att = g.concat_rows(&per_seq)?;
            let (wo, bo) = (p(g, layer.w_o), p(g, layer.b_o));
            let att = g.matmul(att, wo)?;
            let att = g.add_row(att, bo)?;
            let att = apply_dropout(g, att, &mut drop)?;
            x = g.add(x, att)?;

            let (g2, b2) = (p(g, layer.ln2_g), p(g, layer.ln2_b));
            let h = g.layer_norm(x, g2, b2)?;
            let (w1, bb1, w2, bb2) = (p(g, layer.w_1), p(g, layer.b_1), p(g, layer.w_2), p(g, layer.b_2));
            let f = g.matmul(h, w1)?;
            let f = g.add_row(f, bb1)?;
            let f = g.relu(f);
            let f = g.matmul(f, w2)?;
            let f = g.add_row(f, bb2)?;
            let f = apply_dropout(g, f, &mut drop)?;
            x = g.add(x, f)?;
        }
        let (gf, bf) = (g.param(&self.store, *lnf_g), g.param(&self.store, *lnf_b));
        let x = g.layer_norm(x, gf, bf)?;
        self.output(g, x)
    }

    /// Log-softmax rows for the positions of equal-length sequences, in
    /// batch-major order, with no dropout. Sequences must fit the context
    /// for Transformers.
    pub fn logits_batch(&self, seqs: &[Vec<u32>]) -> Result<Array2<T>, NeuralError> {
        let mut g = Graph::new();
        match self.config.architecture {
            Architecture::Transformer => {
                let out = self.forward_transformer(&mut g, seqs, None)?;
                Ok(g.value(out).clone())
            }
            Architecture::Lstm => {
                let len = seqs[0].len();
                let batch = seqs.len();
                let inputs: Vec<Vec<u32>> = (0..len).map(|t| seqs.iter().map(|s| s[t]).collect()).collect();
                let (out, _) = self.forward_lstm(&mut g, &inputs, &self.zero_state(batch), None)?;
                let v = g.value(out);
                // Reorder time-major rows to batch-major.
                let mut res = Array2::zeros(v.dim());
                for t in 0..len {
                    for b in 0..batch {
                        res.row_mut(b * len + t).assign(&v.row(t * batch + b));
                    }
                }
                Ok(res)
            }
        }
    }
}
