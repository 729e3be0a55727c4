//! ARPA text export and a small reader used to cross-check exports.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{NGramError, NGramModel};

pub const BOS_TOKEN: &str = "<s>";
const LOG10_ZERO: f64 = -99.0;

pub(super) fn write_arpa(model: &NGramModel) -> String {
    let kn = &model.kn;
    let name = |id: u32| -> &str {
        if id == kn.bos() {
            BOS_TOKEN
        } else {
            model.vocab.token(id)
        }
    };
    let mut sections: Vec<Vec<String>> = Vec::with_capacity(kn.order);
    for k in 1..=kn.order {
        let mut grams = kn.ngrams(k);
        if k == 1 {
            // Every type is listed, including zero-count ones and <s>.
            grams = (0..=kn.bos()).map(|i| vec![i]).collect();
        }
        let mut lines = Vec::with_capacity(grams.len());
        for g in grams {
            let (h, w) = g.split_at(k - 1);
            let lp = if w[0] == kn.bos() {
                LOG10_ZERO
            } else {
                kn.prob(h, w[0]).log10()
            };
            let words: Vec<&str> = g.iter().map(|&i| name(i)).collect();
            let mut line = format!("{lp}\t{}", words.join(" "));
            if k < kn.order {
                if let Some(b) = kn.backoff_weight(&g) {
                    let _ = write!(line, "\t{}", b.log10());
                }
            }
            lines.push(line);
        }
        sections.push(lines);
    }
    let mut out = String::from("\\data\\\n");
    for (k, s) in sections.iter().enumerate() {
        let _ = writeln!(out, "ngram {}={}", k + 1, s.len());
    }
    for (k, s) in sections.iter().enumerate() {
        let _ = writeln!(out, "\n\\{}-grams:", k + 1);
        for line in s {
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

/// A back-off model read from ARPA text; probabilities in log10.
#[derive(Debug, Clone, Default)]
pub struct ArpaModel {
    order: usize,
    entries: Vec<HashMap<Vec<String>, (f64, f64)>>,
}

pub fn parse_arpa(text: &str) -> Result<ArpaModel, NGramError> {
    let mut model = ArpaModel::default();
    let mut current: Option<usize> = None;
    let mut declared: Vec<usize> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |message: String| NGramError::Arpa { line: i + 1, message };
        if line.is_empty() || line == "\\data\\" {
            continue;
        }
        if line == "\\end\\" {
            break;
        }
        if let Some(rest) = line.strip_prefix("ngram ") {
            let (_, n) = rest.split_once('=').ok_or_else(|| err("bad count line".into()))?;
            declared.push(n.trim().parse().map_err(|_| err("bad count".into()))?);
            continue;
        }
        if let Some(k) = line.strip_prefix('\\').and_then(|l| l.strip_suffix("-grams:")) {
            let k: usize = k.parse().map_err(|_| err("bad section header".into()))?;
            while model.entries.len() < k {
                model.entries.push(HashMap::new());
            }
            model.order = model.order.max(k);
            current = Some(k);
            continue;
        }
        let k = current.ok_or_else(|| err("entry outside a section".into()))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(err("expected `logprob<TAB>words[<TAB>backoff]`".into()));
        }
        let lp: f64 = fields[0].parse().map_err(|_| err("bad log-probability".into()))?;
        let words: Vec<String> = fields[1].split(' ').map(String::from).collect();
        if words.len() != k {
            return Err(err(format!("expected {k} words")));
        }
        let bo: f64 = match fields.get(2) {
            Some(b) => b.parse().map_err(|_| err("bad back-off".into()))?,
            None => 0.0,
        };
        model.entries[k - 1].insert(words, (lp, bo));
    }
    for (k, &n) in declared.iter().enumerate() {
        let got = model.entries.get(k).map_or(0, HashMap::len);
        if got != n {
            return Err(NGramError::Arpa {
                line: 0,
                message: format!("order {} declares {n} entries but lists {got}", k + 1),
            });
        }
    }
    Ok(model)
}

impl ArpaModel {
    pub fn order(&self) -> usize {
        self.order
    }

    /// log10 p(w | history) with standard back-off.
    pub fn log10_prob(&self, history: &[&str], w: &str) -> f64 {
        let keep = history.len().min(self.order.saturating_sub(1));
        let h: Vec<String> = history[history.len() - keep..].iter().map(|s| s.to_string()).collect();
        self.score(&h, w)
    }

    fn score(&self, h: &[String], w: &str) -> f64 {
        let mut g = h.to_vec();
        g.push(w.to_string());
        if let Some(&(lp, _)) = self.entries.get(g.len() - 1).and_then(|t| t.get(&g)) {
            return lp;
        }
        if h.is_empty() {
            return LOG10_ZERO;
        }
        let bo = self
            .entries
            .get(h.len() - 1)
            .and_then(|t| t.get(h))
            .map_or(0.0, |e| e.1);
        bo + self.score(&h[1..], w)
    }

    /// Natural-log probability of each token of an utterance (plus `<eos>`).
    pub fn sentence_logprobs(&self, tokens: &[&str]) -> Vec<f64> {
        let mut hist = vec![BOS_TOKEN];
        let mut out = Vec::with_capacity(tokens.len() + 1);
        for &t in tokens.iter().chain(std::iter::once(&crate::corpus::EOS)) {
            out.push(self.log10_prob(&hist, t) * std::f64::consts::LN_10);
            hist.push(t);
        }
        out
    }

    pub fn vocabulary_size(&self) -> usize {
        self.entries.first().map_or(0, |u| {
            u.keys().filter(|k| k[0] != BOS_TOKEN).count()
        })
    }
}
