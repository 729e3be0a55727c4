//! Evaluation and training datasets sampled from the bundled grammars.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::grammar::{Grammar, GrammarError, Sampler};
use crate::qfeval::AuxPair;
use crate::scoring::MinimalPair;
use crate::transform::{
    build_move_one_pair, build_six_tuple, find_auxiliaries, make_pair, selectional_filter, AnnotatedSentence,
    PairExample, SixTuple, TransformError,
};

pub const DEFAULT_MAX_DEPTH: usize = 40;
/// Draws allowed per requested item before giving up.
pub const ATTEMPTS_PER_ITEM: usize = 200;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("only {found} of {wanted} items after {attempts} draws; the grammar cannot supply enough")]
    Exhausted { wanted: usize, found: usize, attempts: usize },
    #[error("count must be at least 1")]
    ZeroCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    SixTuple,
    MoveOne,
    PairsEq,
    PairsNeq,
    Corpus,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 5] = [
        DatasetKind::SixTuple,
        DatasetKind::MoveOne,
        DatasetKind::PairsEq,
        DatasetKind::PairsNeq,
        DatasetKind::Corpus,
    ];

    /// Bundled grammar used when none is named.
    pub fn default_grammar(self) -> &'static str {
        match self {
            DatasetKind::SixTuple | DatasetKind::Corpus => "prepose_delete",
            DatasetKind::PairsEq => "first_eq_main",
            DatasetKind::PairsNeq | DatasetKind::MoveOne => "first_neq_main",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::SixTuple => "six-tuple",
            DatasetKind::MoveOne => "move-one",
            DatasetKind::PairsEq => "pairs-eq",
            DatasetKind::PairsNeq => "pairs-neq",
            DatasetKind::Corpus => "corpus",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown dataset kind `{s}`"))
    }
}

/// How corpus utterances are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorpusLayout {
    /// Declarative and question on one line.
    #[default]
    Pairs,
    /// Declarative line followed by question line.
    Separate,
    /// Questions only.
    Questions,
}

impl FromStr for CorpusLayout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pairs" => Ok(CorpusLayout::Pairs),
            "separate" => Ok(CorpusLayout::Separate),
            "questions" => Ok(CorpusLayout::Questions),
            _ => Err(format!("unknown corpus layout `{s}`")),
        }
    }
}

/// Draws distinct annotated declaratives accepted by `keep` until `count`
/// are found. Returns them with the number of draws used.
pub fn sample_declaratives(
    grammar: &Grammar,
    count: usize,
    seed: u64,
    max_depth: usize,
    mut keep: impl FnMut(&AnnotatedSentence) -> bool,
) -> Result<(Vec<AnnotatedSentence>, usize), DatasetError> {
    if count == 0 {
        return Err(DatasetError::ZeroCount);
    }
    let mut sampler = Sampler::new(grammar, seed, max_depth)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let limit = count.saturating_mul(ATTEMPTS_PER_ITEM);
    let mut attempts = 0;
    while out.len() < count {
        if attempts >= limit {
            return Err(DatasetError::Exhausted {
                wanted: count,
                found: out.len(),
                attempts,
            });
        }
        attempts += 1;
        let (tokens, deriv) = sampler.sample();
        if !seen.insert(tokens) {
            continue;
        }
        let a = find_auxiliaries(grammar, &deriv)?;
        if keep(&a) {
            out.push(a);
        }
    }
    Ok((out, attempts))
}

/// Six-tuples from declaratives that pass the selectional filter.
pub fn six_tuples(grammar: &Grammar, count: usize, seed: u64, max_depth: usize) -> Result<Vec<SixTuple>, DatasetError> {
    let (decls, _) = sample_declaratives(grammar, count, seed, max_depth, selectional_filter)?;
    decls
        .iter()
        .map(|d| {
            Ok(SixTuple {
                declarative: d.tokens.clone(),
                candidates: build_six_tuple(d)?,
            })
        })
        .collect()
}

/// Move-One pairs (hierarchical as the good member) from declaratives whose
/// two auxiliaries share a surface form.
pub fn move_one_pairs(
    grammar: &Grammar,
    count: usize,
    seed: u64,
    max_depth: usize,
) -> Result<Vec<MinimalPair>, DatasetError> {
    let (decls, _) = sample_declaratives(grammar, count, seed, max_depth, |a| {
        a.has_distinct_auxiliaries() && a.first_aux() == a.main_aux()
    })?;
    decls
        .iter()
        .map(|d| {
            let (good, bad) = build_move_one_pair(d)?;
            Ok(MinimalPair { good, bad })
        })
        .collect()
}

/// Declarative/question pairs with auxiliary annotations. With
/// `distinct_tokens`, only declaratives whose first and main auxiliaries
/// differ in surface form are kept.
pub fn question_pairs(
    grammar: &Grammar,
    count: usize,
    seed: u64,
    max_depth: usize,
    distinct_tokens: bool,
) -> Result<(Vec<PairExample>, Vec<AuxPair>), DatasetError> {
    let (decls, _) =
        sample_declaratives(grammar, count, seed, max_depth, |a| !distinct_tokens || a.first_aux() != a.main_aux())?;
    let pairs = decls.iter().map(make_pair).collect::<Result<Vec<_>, _>>()?;
    Ok((pairs, decls.iter().map(AuxPair::from_annotation).collect()))
}

/// A training corpus of hierarchical question pairs split into documents
/// of `doc_size` items. Sampling stops at `count` items or once `max_tokens`
/// tokens are written, whichever comes first.
pub fn pair_corpus(
    grammar: &Grammar,
    count: usize,
    max_tokens: Option<usize>,
    seed: u64,
    max_depth: usize,
    layout: CorpusLayout,
    doc_size: usize,
) -> Result<Vec<Document>, DatasetError> {
    if count == 0 {
        return Err(DatasetError::ZeroCount);
    }
    // Corpora may repeat sentences, as natural text does.
    let mut sampler = Sampler::new(grammar, seed, max_depth)?;
    let mut utterances: Vec<Vec<String>> = Vec::new();
    let mut tokens = 0usize;
    for _ in 0..count {
        if max_tokens.is_some_and(|m| tokens >= m) {
            break;
        }
        let (_, deriv) = sampler.sample();
        let pair = make_pair(&find_auxiliaries(grammar, &deriv)?)?;
        let lines = match layout {
            CorpusLayout::Pairs => vec![pair.concatenated],
            CorpusLayout::Separate => vec![pair.declarative, pair.question],
            CorpusLayout::Questions => vec![pair.question],
        };
        for l in lines {
            tokens += l.len();
            utterances.push(l);
        }
    }
    Ok(utterances
        .chunks(doc_size.max(1))
        .enumerate()
        .map(|(i, c)| Document {
            id: format!("doc{i:05}.txt"),
            utterances: c.to_vec(),
        })
        .collect())
}

/// A bundled grammar by name, or a grammar file by path.
pub fn load_grammar(name_or_path: &str) -> Result<Grammar, GrammarError> {
    if crate::grammar::bundled_source(name_or_path).is_some() {
        crate::grammar::bundled_grammar(name_or_path)
    } else {
        crate::grammar::parse_grammar_file(std::path::Path::new(name_or_path))
    }
}
