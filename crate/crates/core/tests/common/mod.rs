#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

/// Textbook interpolated Kneser-Ney over string n-grams, written directly
/// from the defining recursion. Slow but independent of the library.
pub struct KnOracle {
    pub order: usize,
    pub vocab: Vec<String>,
    adjusted: HashMap<Vec<String>, f64>,
    discounts: Vec<[f64; 3]>,
}

pub const BOS: &str = "<s>";

impl KnOracle {
    /// `sentences` are predicted token sequences; `eos`, when given, is
    /// appended to each. `vocab` is the full predicted-type inventory.
    pub fn new(sentences: &[Vec<String>], vocab: &[String], eos: Option<&str>, order: usize, modified: bool) -> Self {
        let mut raw: HashMap<Vec<String>, f64> = HashMap::new();
        for s in sentences {
            let mut padded = vec![BOS.to_string()];
            padded.extend(s.iter().cloned());
            if let Some(e) = eos {
                padded.push(e.to_string());
            }
            for end in 1..padded.len() {
                for len in 1..=order.min(end + 1) {
                    *raw.entry(padded[end + 1 - len..=end].to_vec()).or_insert(0.0) += 1.0;
                }
            }
        }
        let mut adjusted = HashMap::new();
        for (g, &c) in &raw {
            let a = if g.len() == order || g[0] == BOS {
                c
            } else {
                raw.keys()
                    .filter(|x| x.len() == g.len() + 1 && x[1..] == g[..])
                    .map(|x| x[0].clone())
                    .collect::<HashSet<_>>()
                    .len() as f64
            };
            adjusted.insert(g.clone(), a);
        }
        let mut discounts = Vec::new();
        for k in 1..=order {
            let mut n = [0.0f64; 5];
            for (g, &a) in &adjusted {
                if g.len() == k && (1.0..=4.0).contains(&a) {
                    n[a as usize] += 1.0;
                }
            }
            let d = if n[1] > 0.0 && n[2] > 0.0 {
                let y = n[1] / (n[1] + 2.0 * n[2]);
                if !modified {
                    [y, y, y]
                } else if n[3] > 0.0 && n[4] > 0.0 {
                    let d1 = 1.0 - 2.0 * y * n[2] / n[1];
                    let d2 = 2.0 - 3.0 * y * n[3] / n[2];
                    let d3 = 3.0 - 4.0 * y * n[4] / n[3];
                    if d1 > 0.0 && d1 < 1.0 && d2 > 0.0 && d2 < 2.0 && d3 > 0.0 && d3 < 3.0 {
                        [d1, d2, d3]
                    } else {
                        [0.75; 3]
                    }
                } else {
                    [0.75; 3]
                }
            } else {
                [0.75; 3]
            };
            discounts.push(d);
        }
        Self {
            order,
            vocab: vocab.to_vec(),
            adjusted,
            discounts,
        }
    }

    fn a(&self, g: &[String]) -> f64 {
        self.adjusted.get(g).copied().unwrap_or(0.0)
    }

    fn d(&self, k: usize, a: f64) -> f64 {
        if a == 0.0 {
            0.0
        } else if a == 1.0 {
            self.discounts[k - 1][0]
        } else if a == 2.0 {
            self.discounts[k - 1][1]
        } else {
            self.discounts[k - 1][2]
        }
    }

    /// p(w | history) where history starts with `<s>`.
    pub fn prob(&self, history: &[String], w: &str) -> f64 {
        let keep = history.len().min(self.order - 1);
        self.p(&history[history.len() - keep..], w)
    }

    fn p(&self, h: &[String], w: &str) -> f64 {
        let lower = if h.is_empty() {
            1.0 / self.vocab.len() as f64
        } else {
            self.p(&h[1..], w)
        };
        let k = h.len() + 1;
        let mut denom = 0.0;
        let mut mass = 0.0;
        for x in &self.vocab {
            let mut g = h.to_vec();
            g.push(x.clone());
            let a = self.a(&g);
            denom += a;
            mass += self.d(k, a);
        }
        if denom == 0.0 {
            return lower;
        }
        let mut g = h.to_vec();
        g.push(w.to_string());
        let a = self.a(&g);
        (a - self.d(k, a)).max(0.0) / denom + mass / denom * lower
    }

    /// Every history (ending at a predicted position) seen in training.
    pub fn histories(&self) -> Vec<Vec<String>> {
        let mut v: Vec<Vec<String>> = self
            .adjusted
            .keys()
            .filter(|g| g.len() < self.order)
            .cloned()
            .collect();
        v.sort();
        v
    }
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// First-order Markov source used for entropy-rate checks.
pub struct MarkovSource {
    pub transitions: Vec<Vec<f64>>,
}

impl MarkovSource {
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.transitions.len();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..10_000 {
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[j] += pi[i] * self.transitions[i][j];
                }
            }
            pi = next;
        }
        pi
    }

    /// Entropy rate in nats per token.
    pub fn entropy_rate(&self) -> f64 {
        let pi = self.stationary();
        let mut h = 0.0;
        for (i, row) in self.transitions.iter().enumerate() {
            for &p in row {
                if p > 0.0 {
                    h -= pi[i] * p * p.ln();
                }
            }
        }
        h
    }
}

/// A model defined by a next-token rule over string prefixes. Handy for
/// constructing oracles with known behaviour.
pub struct FnModel {
    pub vocab: auxinv::corpus::Vocabulary,
    pub next: Box<dyn Fn(&[String]) -> Vec<f64>>,
}

impl FnModel {
    pub fn new(vocab: auxinv::corpus::Vocabulary, next: impl Fn(&[String]) -> Vec<f64> + 'static) -> Self {
        Self {
            vocab,
            next: Box::new(next),
        }
    }

    /// Puts `1 - eps` on `token` and spreads `eps` over the rest.
    pub fn peaked(vocab: &auxinv::corpus::Vocabulary, token: &str, eps: f64) -> Vec<f64> {
        let n = vocab.len();
        let mut d = vec![eps / (n - 1) as f64; n];
        d[vocab.id_or_unk(token) as usize] = 1.0 - eps;
        d
    }
}

impl auxinv::lm::LanguageModel for FnModel {
    fn vocab(&self) -> &auxinv::corpus::Vocabulary {
        &self.vocab
    }
    fn sentence_logprobs(&self, ids: &[u32]) -> Vec<f64> {
        (0..ids.len())
            .map(|i| self.next_distribution(&ids[..i])[ids[i] as usize].ln())
            .collect()
    }
    fn next_distribution(&self, prefix: &[u32]) -> Vec<f64> {
        (self.next)(&self.vocab.decode(prefix))
    }
    fn document_logprobs(&self, stream: &[u32]) -> Vec<f64> {
        self.sentence_logprobs(stream)
    }
    fn describe(&self) -> String {
        "oracle".into()
    }
}
