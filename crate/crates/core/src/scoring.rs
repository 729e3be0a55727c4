//! Sentence scoring and the forced-choice and minimal-pair evaluations.
//!
//! Every sentence is scored from a fresh context and `<eos>` is not scored;
//! the final punctuation token terminates the sentence.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::lm::LanguageModel;
use crate::ngram::{NGramConfig, NGramError, NGramModel};
use crate::transform::{six_way_index, AuxRole, Deletion, SixTuple, SIX_WAY_ORDER};

/// Relative tolerance under which two candidate scores count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Perplexity,
    Slor,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Perplexity => "perplexity",
            Metric::Slor => "slor",
        })
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "perplexity" | "ppl" => Ok(Metric::Perplexity),
            "slor" => Ok(Metric::Slor),
            _ => Err(format!("unknown metric `{s}` (expected perplexity or slor)")),
        }
    }
}

fn encode(model: &(impl LanguageModel + ?Sized), tokens: &[String]) -> Vec<u32> {
    model.vocab().encode(tokens)
}

/// Total log-probability of a token sequence from a fresh context.
pub fn sentence_logprob<M: LanguageModel + ?Sized>(model: &M, tokens: &[String]) -> f64 {
    model.sentence_logprobs(&encode(model, tokens)).iter().sum()
}

/// `exp(-mean log p)` over every token, final punctuation included.
pub fn per_word_perplexity<M: LanguageModel + ?Sized>(model: &M, tokens: &[String]) -> f64 {
    let lps = model.sentence_logprobs(&encode(model, tokens));
    (-lps.iter().sum::<f64>() / lps.len().max(1) as f64).exp()
}

/// Length-normalized log-odds of the model against a unigram model.
pub fn slor<M: LanguageModel + ?Sized, U: LanguageModel + ?Sized>(model: &M, unigram: &U, tokens: &[String]) -> f64 {
    let n = tokens.len().max(1) as f64;
    (sentence_logprob(model, tokens) - sentence_logprob(unigram, tokens)) / n
}

/// Unigram reference model for SLOR, estimated on the same sentences and
/// vocabulary as the model under test.
pub fn unigram_model(sentences: &[Vec<String>], vocab: Vocabulary) -> Result<NGramModel, NGramError> {
    NGramModel::train(sentences, vocab, NGramConfig { order: 1, modified: true })
}

/// Scores of one candidate sentence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub logprob: f64,
    pub tokens: usize,
    pub perplexity: f64,
    pub slor: Option<f64>,
}

impl SentenceScore {
    fn from_logprobs(model_lp: f64, unigram_lp: Option<f64>, n: usize) -> Self {
        let nn = n.max(1) as f64;
        Self {
            logprob: model_lp,
            tokens: n,
            perplexity: (-model_lp / nn).exp(),
            slor: unigram_lp.map(|u| (model_lp - u) / nn),
        }
    }
}

/// Scores many sentences, batching the model calls.
pub fn score_sentences<M: LanguageModel + ?Sized>(
    model: &M,
    unigram: Option<&dyn LanguageModel>,
    sentences: &[Vec<String>],
) -> Vec<SentenceScore> {
    let ids: Vec<Vec<u32>> = sentences.iter().map(|s| encode(model, s)).collect();
    let model_lps = model.batch_sentence_logprobs(&ids);
    let uni_lps = unigram.map(|u| u.batch_sentence_logprobs(&ids));
    model_lps
        .iter()
        .enumerate()
        .map(|(i, lp)| {
            let u = uni_lps.as_ref().map(|u| u[i].iter().sum());
            SentenceScore::from_logprobs(lp.iter().sum(), u, lp.len())
        })
        .collect()
}

/// Index of the best value (lowest when `lower_is_better`), ties within a
/// relative tolerance going to the earliest index. Also reports whether a
/// tie was broken.
pub fn best_with_ties(values: &[f64], lower_is_better: bool) -> (usize, bool) {
    let better = |a: f64, b: f64| if lower_is_better { a < b } else { a > b };
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if better(v, values[best]) {
            best = i;
        }
    }
    let target = values[best];
    let tol = TIE_TOLERANCE * target.abs().max(f64::MIN_POSITIVE);
    let first = values.iter().position(|&v| (v - target).abs() <= tol).unwrap_or(best);
    let tied = values.iter().filter(|&&v| (v - target).abs() <= tol).count() > 1;
    (first, tied)
}

/// One forced-choice decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SixWayChoice {
    pub prepose: AuxRole,
    pub delete: Deletion,
    pub tie: bool,
    /// Candidate scores in report order.
    pub scores: Vec<SentenceScore>,
}

/// Picks the best candidate of a six-tuple: lowest per-word perplexity or
/// highest SLOR. Candidates may arrive in any order; ties go to the earliest
/// label in report order.
pub fn forced_choice_six<M: LanguageModel + ?Sized>(
    model: &M,
    unigram: Option<&dyn LanguageModel>,
    tuple: &SixTuple,
    metric: Metric,
) -> Result<SixWayChoice, ScoringError> {
    let mut ordered: Vec<Option<Vec<String>>> = vec![None; 6];
    for c in &tuple.candidates {
        ordered[six_way_index(c.prepose, c.delete)] = Some(c.tokens.clone());
    }
    let sentences: Vec<Vec<String>> = ordered
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.ok_or_else(|| {
                let (p, d) = SIX_WAY_ORDER[i];
                ScoringError::IncompleteTuple(format!(
                    "`{}` lacks the prepose {p} / delete {d} candidate",
                    tuple.declarative.join(" ")
                ))
            })
        })
        .collect::<Result<_, _>>()?;
    let unigram = match (metric, unigram) {
        (Metric::Slor, None) => return Err(ScoringError::MissingUnigram),
        (Metric::Slor, u) => u,
        (Metric::Perplexity, _) => None,
    };
    let scores = score_sentences(model, unigram, &sentences);
    let (best, tie) = match metric {
        Metric::Perplexity => best_with_ties(&scores.iter().map(|s| s.perplexity).collect::<Vec<_>>(), true),
        Metric::Slor => best_with_ties(&scores.iter().map(|s| s.slor.unwrap_or(f64::NAN)).collect::<Vec<_>>(), false),
    };
    let (prepose, delete) = SIX_WAY_ORDER[best];
    Ok(SixWayChoice {
        prepose,
        delete,
        tie,
        scores,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("incomplete six-tuple: {0}")]
    IncompleteTuple(String),
    #[error("SLOR needs a unigram reference model")]
    MissingUnigram,
    #[error("no items to evaluate")]
    Empty,
}

/// Aggregate of six-way choices over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedChoiceResult {
    pub model: String,
    pub metric: Metric,
    pub items: usize,
    /// Choice counts in report order.
    pub counts: [usize; 6],
    pub proportions: [f64; 6],
    pub ties: usize,
}

impl ForcedChoiceResult {
    pub fn from_choices(model: &str, metric: Metric, choices: &[SixWayChoice]) -> Result<Self, ScoringError> {
        if choices.is_empty() {
            return Err(ScoringError::Empty);
        }
        let mut counts = [0usize; 6];
        for c in choices {
            counts[six_way_index(c.prepose, c.delete)] += 1;
        }
        let n = choices.len();
        Ok(Self {
            model: model.to_string(),
            metric,
            items: n,
            counts,
            proportions: counts.map(|c| c as f64 / n as f64),
            ties: choices.iter().filter(|c| c.tie).count(),
        })
    }

    pub fn proportion(&self, prepose: AuxRole, delete: Deletion) -> f64 {
        self.proportions[six_way_index(prepose, delete)]
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("result serializes");
        let labels: serde_json::Map<String, serde_json::Value> = SIX_WAY_ORDER
            .iter()
            .enumerate()
            .map(|(i, (p, d))| (format!("prepose_{p}/delete_{d}"), self.proportions[i].into()))
            .collect();
        v["by_label"] = serde_json::Value::Object(labels);
        serde_json::to_string_pretty(&v).expect("result serializes")
    }

    /// Proportions as a table: rows are delete rules, columns prepose rules.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("delete,prepose_first,prepose_main\n");
        for d in [Deletion::First, Deletion::Main, Deletion::None] {
            s.push_str(&format!(
                "{d},{},{}\n",
                self.proportion(AuxRole::First, d),
                self.proportion(AuxRole::Main, d)
            ));
        }
        s
    }
}

/// Runs the six-way forced choice over a dataset.
pub fn evaluate_six_way<M: LanguageModel + ?Sized>(
    model: &M,
    unigram: Option<&dyn LanguageModel>,
    tuples: &[SixTuple],
    metric: Metric,
) -> Result<(ForcedChoiceResult, Vec<SixWayChoice>), ScoringError> {
    let choices = tuples
        .iter()
        .map(|t| forced_choice_six(model, unigram, t, metric))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((ForcedChoiceResult::from_choices(&model.describe(), metric, &choices)?, choices))
}

/// A grammatical sentence and its ungrammatical counterpart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub good: Vec<String>,
    pub bad: Vec<String>,
}

/// A line of a pair file that could not be used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

/// Parses `good<TAB>bad` lines of pre-tokenized text. Blank lines are
/// ignored; malformed lines are skipped and reported.
pub fn parse_minimal_pairs(text: &str) -> (Vec<MinimalPair>, Vec<SkippedLine>) {
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let toks = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        let reason = if fields.len() != 2 {
            Some(format!("expected 2 tab-separated fields, got {}", fields.len()))
        } else if toks(fields[0]).is_empty() || toks(fields[1]).is_empty() {
            Some("empty sentence".to_string())
        } else {
            None
        };
        match reason {
            Some(reason) => {
                warn!("minimal pairs line {}: {reason}", i + 1);
                skipped.push(SkippedLine { line: i + 1, reason });
            }
            None => pairs.push(MinimalPair {
                good: toks(fields[0]),
                bad: toks(fields[1]),
            }),
        }
    }
    (pairs, skipped)
}

pub fn format_minimal_pairs(pairs: &[MinimalPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}\t{}\n", p.good.join(" "), p.bad.join(" ")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalPairResult {
    pub model: String,
    pub items: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub skipped: Vec<SkippedLine>,
    /// `log p(good) - log p(bad)` per item; correct iff strictly positive.
    pub margins: Vec<f64>,
}

impl MinimalPairResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("item,margin,correct\n");
        for (i, m) in self.margins.iter().enumerate() {
            s.push_str(&format!("{i},{m},{}\n", *m > 0.0));
        }
        s
    }
}

/// Fraction of pairs whose good member has strictly higher total
/// log-probability; ties count as incorrect.
pub fn minimal_pair_accuracy<M: LanguageModel + ?Sized>(
    model: &M,
    pairs: &[MinimalPair],
    skipped: Vec<SkippedLine>,
) -> MinimalPairResult {
    let sentences: Vec<Vec<String>> = pairs.iter().flat_map(|p| [p.good.clone(), p.bad.clone()]).collect();
    let scores = score_sentences(model, None, &sentences);
    let margins: Vec<f64> = scores.chunks(2).map(|c| c[0].logprob - c[1].logprob).collect();
    let correct = margins.iter().filter(|&&m| m > 0.0).count();
    MinimalPairResult {
        model: model.describe(),
        items: pairs.len(),
        correct,
        accuracy: if pairs.is_empty() { 0.0 } else { correct as f64 / pairs.len() as f64 },
        skipped,
        margins,
    }
}
