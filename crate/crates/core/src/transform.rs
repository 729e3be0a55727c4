//! Auxiliary identification and question construction.
//!
//! Declaratives carry a trailing `"."` token. Questions are built by exact
//! string surgery on the declarative: copy one auxiliary to the front, delete
//! one original auxiliary occurrence (or none), and swap `"."` for `"?"`.
//! Indices always refer to the original declarative.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{
    bundled_grammar, parse_trees, Derivation, Grammar, GrammarBuilder, GrammarError, Symbol,
    SymbolKind,
};

pub const PERIOD: &str = ".";
pub const QUESTION_MARK: &str = "?";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("token `{token}` at position {index} is not an auxiliary")]
    NotAuxiliary { token: String, index: usize },
    #[error("auxiliary index {index} out of range for a {len}-token sentence")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("first auxiliary index {first} comes after main auxiliary index {main}")]
    BadOrder { first: usize, main: usize },
    #[error("an auxiliary precedes position {first} so it is not the first auxiliary")]
    NotFirst { first: usize },
    #[error("declarative must end with \".\"")]
    MissingPeriod,
    #[error("derivation has no matrix-clause auxiliary")]
    NoMainAuxiliary,
    #[error("first and main auxiliary coincide; prepose {prepose} / delete {delete} is ill-defined")]
    Degenerate { prepose: AuxRole, delete: Deletion },
    #[error("declarative fails the selectional filter (auxiliaries share an inflection class)")]
    FilterRejected,
    #[error("move-one pairs need two auxiliary occurrences with identical surface forms")]
    MoveOnePrecondition,
    #[error("sentence is not in the grammar's language")]
    NotInLanguage,
    #[error("parses of the sentence disagree about auxiliary positions")]
    Ambiguous,
    #[error("malformed pair `{0}`")]
    MalformedPair(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

/// Verb form an auxiliary selects for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum InflectionClass {
    Bare,
    Prog,
    PastPart,
}

impl InflectionClass {
    /// Class implied by an auxiliary preterminal name (`Aux_S_BE`, `Aux_P_HAS`, ...).
    pub fn from_preterminal(name: &str) -> Self {
        if name.ends_with("_BE") {
            InflectionClass::Prog
        } else if name.ends_with("_HAS") {
            InflectionClass::PastPart
        } else {
            InflectionClass::Bare
        }
    }
}

/// Auxiliary vocabulary and each item's inflection class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxLexicon {
    classes: HashMap<String, InflectionClass>,
}

impl AuxLexicon {
    /// Collects every lexical nonterminal whose name starts with `Aux_`.
    pub fn from_grammar(grammar: &Grammar) -> Self {
        let mut classes = HashMap::new();
        for (id, name) in grammar.nonterminals().iter().enumerate() {
            if !name.starts_with(AUX_PREFIX) {
                continue;
            }
            if let Some(items) = grammar.lexical_items(id as u32) {
                for item in items {
                    classes.insert(item.to_string(), InflectionClass::from_preterminal(name));
                }
            }
        }
        Self { classes }
    }

    /// The auxiliaries of the bundled lexicon.
    pub fn standard() -> Self {
        let g = bundled_grammar("prepose_delete").expect("bundled grammar parses");
        Self::from_grammar(&g)
    }

    pub fn class_of(&self, token: &str) -> Option<InflectionClass> {
        self.classes.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.classes.contains_key(token)
    }

    /// Sorted auxiliary tokens.
    pub fn tokens(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.classes.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

const AUX_PREFIX: &str = "Aux_";

/// How the matrix-clause auxiliary is located in a derivation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainAuxRule {
    /// Zero-width marker whose following auxiliary is the main one.
    pub marker: String,
    /// Nonterminal prefix of matrix verb phrases.
    pub matrix_vp_prefix: String,
}

impl Default for MainAuxRule {
    fn default() -> Self {
        Self {
            marker: "MAIN-AUX".into(),
            matrix_vp_prefix: "VP_M_".into(),
        }
    }
}

/// A declarative with its first and main auxiliaries located.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub first_aux_index: usize,
    pub main_aux_index: usize,
    pub first_aux_class: InflectionClass,
    pub main_aux_class: InflectionClass,
    pub derivation: Option<Derivation>,
}

impl AnnotatedSentence {
    /// Builds an annotation from explicit indices, checking every invariant.
    pub fn from_indices<S: AsRef<str>>(
        tokens: &[S],
        first_aux_index: usize,
        main_aux_index: usize,
        lexicon: &AuxLexicon,
    ) -> Result<Self, TransformError> {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        if tokens.last().map(String::as_str) != Some(PERIOD) {
            return Err(TransformError::MissingPeriod);
        }
        let class = |i: usize| -> Result<InflectionClass, TransformError> {
            let tok = tokens.get(i).ok_or(TransformError::IndexOutOfRange {
                index: i,
                len: tokens.len(),
            })?;
            lexicon.class_of(tok).ok_or_else(|| TransformError::NotAuxiliary {
                token: tok.clone(),
                index: i,
            })
        };
        let first_aux_class = class(first_aux_index)?;
        let main_aux_class = class(main_aux_index)?;
        if first_aux_index > main_aux_index {
            return Err(TransformError::BadOrder {
                first: first_aux_index,
                main: main_aux_index,
            });
        }
        if tokens[..first_aux_index].iter().any(|t| lexicon.contains(t)) {
            return Err(TransformError::NotFirst {
                first: first_aux_index,
            });
        }
        Ok(Self {
            tokens,
            first_aux_index,
            main_aux_index,
            first_aux_class,
            main_aux_class,
            derivation: None,
        })
    }

    pub fn first_aux(&self) -> &str {
        &self.tokens[self.first_aux_index]
    }

    pub fn main_aux(&self) -> &str {
        &self.tokens[self.main_aux_index]
    }

    /// True when the first auxiliary is not the main one.
    pub fn has_distinct_auxiliaries(&self) -> bool {
        self.first_aux_index != self.main_aux_index
    }

    fn index_of(&self, role: AuxRole) -> usize {
        match role {
            AuxRole::First => self.first_aux_index,
            AuxRole::Main => self.main_aux_index,
        }
    }
}

/// Locates the first and main auxiliaries of a derivation produced by one of
/// the bundled grammars (or any grammar following the same naming scheme).
pub fn find_auxiliaries(
    grammar: &Grammar,
    derivation: &Derivation,
) -> Result<AnnotatedSentence, TransformError> {
    find_auxiliaries_with(grammar, derivation, &MainAuxRule::default())
}

pub fn find_auxiliaries_with(
    grammar: &Grammar,
    derivation: &Derivation,
    rule: &MainAuxRule,
) -> Result<AnnotatedSentence, TransformError> {
    let leaves = derivation.leaves();
    // (position, preterminal name, parent of preterminal)
    let aux_leaves: Vec<(usize, &str, Option<&str>)> = leaves
        .iter()
        .filter_map(|leaf| {
            let pre = grammar.nonterminal_name(*leaf.ancestors.last()?);
            if !pre.starts_with(AUX_PREFIX) {
                return None;
            }
            let parent = leaf
                .ancestors
                .len()
                .checked_sub(2)
                .map(|i| grammar.nonterminal_name(leaf.ancestors[i]));
            Some((leaf.position, pre, parent))
        })
        .collect();
    let first = *aux_leaves.first().ok_or(TransformError::NoMainAuxiliary)?;

    let marker_id = grammar.marker_id(&rule.marker);
    let marker_pos = derivation
        .marker_positions()
        .into_iter()
        .find(|(m, _)| Some(*m) == marker_id)
        .map(|(_, p)| p);
    let main = match marker_pos {
        Some(p) => aux_leaves.iter().find(|(pos, _, _)| *pos >= p),
        None => aux_leaves
            .iter()
            .find(|(_, _, parent)| parent.is_some_and(|n| n.starts_with(&rule.matrix_vp_prefix))),
    }
    .copied()
    .ok_or(TransformError::NoMainAuxiliary)?;

    let mut tokens = derivation.tokens(grammar);
    tokens.push(PERIOD.to_string());
    Ok(AnnotatedSentence {
        tokens,
        first_aux_index: first.0,
        main_aux_index: main.0,
        first_aux_class: InflectionClass::from_preterminal(first.1),
        main_aux_class: InflectionClass::from_preterminal(main.1),
        derivation: Some(derivation.clone()),
    })
}

/// Parses a declarative (with or without the trailing `"."`) and annotates it.
/// Every parse (up to a small limit) must agree on the auxiliary positions.
pub fn annotate<S: AsRef<str>>(
    grammar: &Grammar,
    tokens: &[S],
) -> Result<AnnotatedSentence, TransformError> {
    let mut words: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    if words.last() == Some(&PERIOD) {
        words.pop();
    }
    let trees = parse_trees(grammar, &words, 8);
    let mut result: Option<AnnotatedSentence> = None;
    for t in &trees {
        let a = find_auxiliaries(grammar, t)?;
        match &result {
            None => result = Some(a),
            Some(r) if r.first_aux_index == a.first_aux_index && r.main_aux_index == a.main_aux_index => {}
            Some(_) => return Err(TransformError::Ambiguous),
        }
    }
    result.ok_or(TransformError::NotInLanguage)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxRole {
    First,
    Main,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deletion {
    First,
    Main,
    None,
}

impl fmt::Display for AuxRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuxRole::First => "first",
            AuxRole::Main => "main",
        })
    }
}

impl fmt::Display for Deletion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Deletion::First => "first",
            Deletion::Main => "main",
            Deletion::None => "none",
        })
    }
}

impl FromStr for AuxRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "first" => Ok(AuxRole::First),
            "main" => Ok(AuxRole::Main),
            _ => Err(format!("unknown prepose rule `{s}`")),
        }
    }
}

impl FromStr for Deletion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "first" => Ok(Deletion::First),
            "main" => Ok(Deletion::Main),
            "none" => Ok(Deletion::None),
            _ => Err(format!("unknown delete rule `{s}`")),
        }
    }
}

/// The six (prepose, delete) combinations in report order.
pub const SIX_WAY_ORDER: [(AuxRole, Deletion); 6] = [
    (AuxRole::First, Deletion::First),
    (AuxRole::First, Deletion::Main),
    (AuxRole::First, Deletion::None),
    (AuxRole::Main, Deletion::First),
    (AuxRole::Main, Deletion::Main),
    (AuxRole::Main, Deletion::None),
];

/// Position of a label within [`SIX_WAY_ORDER`].
pub fn six_way_index(prepose: AuxRole, delete: Deletion) -> usize {
    SIX_WAY_ORDER
        .iter()
        .position(|&l| l == (prepose, delete))
        .expect("every label is in the report order")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuestionCandidate {
    pub tokens: Vec<String>,
    pub prepose: AuxRole,
    pub delete: Deletion,
}

/// Copies the `prepose` auxiliary to the front, removes the `delete`
/// occurrence, and turns the final `"."` into `"?"`.
pub fn prepose_delete(
    decl: &AnnotatedSentence,
    prepose: AuxRole,
    delete: Deletion,
) -> Result<QuestionCandidate, TransformError> {
    if decl.tokens.last().map(String::as_str) != Some(PERIOD) {
        return Err(TransformError::MissingPeriod);
    }
    if !decl.has_distinct_auxiliaries() {
        let crosses = matches!(
            (prepose, delete),
            (AuxRole::First, Deletion::Main) | (AuxRole::Main, Deletion::First)
        );
        if crosses {
            return Err(TransformError::Degenerate { prepose, delete });
        }
    }
    let moved = decl.tokens[decl.index_of(prepose)].clone();
    let removed = match delete {
        Deletion::First => Some(decl.first_aux_index),
        Deletion::Main => Some(decl.main_aux_index),
        Deletion::None => None,
    };
    let last = decl.tokens.len() - 1;
    let mut tokens = Vec::with_capacity(decl.tokens.len() + 1);
    tokens.push(moved);
    for (i, t) in decl.tokens.iter().enumerate() {
        if Some(i) == removed {
            continue;
        }
        if i == last {
            tokens.push(QUESTION_MARK.to_string());
        } else {
            tokens.push(t.clone());
        }
    }
    Ok(QuestionCandidate {
        tokens,
        prepose,
        delete,
    })
}

/// True iff the two auxiliaries select different verb inflections, so no
/// candidate question is consistent with both the linear and hierarchical rule.
pub fn selectional_filter(decl: &AnnotatedSentence) -> bool {
    decl.has_distinct_auxiliaries() && decl.first_aux_class != decl.main_aux_class
}

/// All six prepose/delete candidates in report order.
pub fn build_six_tuple(decl: &AnnotatedSentence) -> Result<Vec<QuestionCandidate>, TransformError> {
    if !selectional_filter(decl) {
        return Err(TransformError::FilterRejected);
    }
    SIX_WAY_ORDER
        .iter()
        .map(|&(p, d)| prepose_delete(decl, p, d))
        .collect()
}

/// Question formed by fronting the main auxiliary.
pub fn hierarchical_question(decl: &AnnotatedSentence) -> Result<Vec<String>, TransformError> {
    Ok(prepose_delete(decl, AuxRole::Main, Deletion::Main)?.tokens)
}

/// Question formed by fronting the linearly first auxiliary.
pub fn linear_question(decl: &AnnotatedSentence) -> Result<Vec<String>, TransformError> {
    Ok(prepose_delete(decl, AuxRole::First, Deletion::First)?.tokens)
}

/// (hierarchical, linear) variants for a declarative whose two auxiliaries
/// share a surface form.
pub fn build_move_one_pair(
    decl: &AnnotatedSentence,
) -> Result<(Vec<String>, Vec<String>), TransformError> {
    if !decl.has_distinct_auxiliaries() || decl.first_aux() != decl.main_aux() {
        return Err(TransformError::MoveOnePrecondition);
    }
    Ok((hierarchical_question(decl)?, linear_question(decl)?))
}

/// A declarative followed by its question, as used for question-formation training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub declarative: Vec<String>,
    pub question: Vec<String>,
    pub concatenated: Vec<String>,
}

impl PairExample {
    pub fn new(declarative: Vec<String>, question: Vec<String>) -> Self {
        let mut concatenated = declarative.clone();
        concatenated.extend(question.iter().cloned());
        Self {
            declarative,
            question,
            concatenated,
        }
    }

    /// Splits a concatenated pair after its first `"."`.
    pub fn split<S: AsRef<str>>(concatenated: &[S]) -> Result<Self, TransformError> {
        let toks: Vec<String> = concatenated.iter().map(|t| t.as_ref().to_string()).collect();
        let cut = toks
            .iter()
            .position(|t| t == PERIOD)
            .ok_or_else(|| TransformError::MalformedPair(toks.join(" ")))?;
        let (d, q) = toks.split_at(cut + 1);
        if q.is_empty() {
            return Err(TransformError::MalformedPair(toks.join(" ")));
        }
        Ok(Self::new(d.to_vec(), q.to_vec()))
    }
}

pub fn make_pair(decl: &AnnotatedSentence) -> Result<PairExample, TransformError> {
    Ok(PairExample::new(
        decl.tokens.clone(),
        hierarchical_question(decl)?,
    ))
}

/// Grammar of main-auxiliary-fronted questions, derived mechanically from a
/// declarative grammar: each start alternative `X VP Y` whose matrix verb
/// phrase has an alternative `Aux Z` yields `Aux X Z Y ?`.
pub fn question_grammar(grammar: &Grammar, rule: &MainAuxRule) -> Result<Grammar, TransformError> {
    let start = grammar.start();
    let mut question_alts: Vec<Vec<(String, SymbolKind)>> = Vec::new();
    for alt in grammar.alternatives(start) {
        let syms = &alt.symbols;
        let vp_index = syms
            .iter()
            .position(|s| matches!(s, Symbol::Marker(m) if grammar.marker_name(*m) == rule.marker))
            .map(|i| i + 1)
            .or_else(|| {
                syms.iter().position(|s| {
                    matches!(s, Symbol::Nonterminal(n) if grammar.nonterminal_name(*n).starts_with(&rule.matrix_vp_prefix))
                })
            })
            .ok_or(TransformError::NoMainAuxiliary)?;
        let Some(Symbol::Nonterminal(vp)) = syms.get(vp_index) else {
            return Err(TransformError::NoMainAuxiliary);
        };
        for vp_alt in grammar.alternatives(*vp) {
            let Some(Symbol::Nonterminal(aux)) = vp_alt.symbols.first() else {
                continue;
            };
            if !grammar.nonterminal_name(*aux).starts_with(AUX_PREFIX) {
                continue;
            }
            let mut q: Vec<Symbol> = vec![Symbol::Nonterminal(*aux)];
            q.extend(syms[..vp_index].iter().filter(|s| !matches!(s, Symbol::Marker(_))));
            q.extend(vp_alt.symbols[1..].iter());
            q.extend(syms[vp_index + 1..].iter().filter(|s| !matches!(s, Symbol::Marker(_))));
            let mut spelled = grammar.spell(&q);
            spelled.push((QUESTION_MARK.to_string(), SymbolKind::Terminal));
            if !question_alts.contains(&spelled) {
                question_alts.push(spelled);
            }
        }
    }
    if question_alts.is_empty() {
        return Err(TransformError::NoMainAuxiliary);
    }

    let mut qname = String::from("Q");
    while grammar.nonterminal_id(&qname).is_some() {
        qname.push('_');
    }
    // Keep only rules reachable from the new start symbol.
    let mut reachable: HashSet<u32> = HashSet::new();
    let mut stack: Vec<u32> = question_alts
        .iter()
        .flatten()
        .filter(|(_, k)| *k == SymbolKind::Nonterminal)
        .filter_map(|(n, _)| grammar.nonterminal_id(n))
        .collect();
    while let Some(a) = stack.pop() {
        if !reachable.insert(a) {
            continue;
        }
        for alt in grammar.alternatives(a) {
            for s in &alt.symbols {
                if let Symbol::Nonterminal(b) = s {
                    stack.push(*b);
                }
            }
        }
    }
    let mut b = GrammarBuilder::new();
    b.start(&qname);
    for m in grammar.markers() {
        b.marker(m);
    }
    for alt in question_alts {
        b.rule(&qname, alt, 1.0, 0);
    }
    for a in 0..grammar.nonterminals().len() as u32 {
        if reachable.contains(&a) {
            for alt in grammar.alternatives(a) {
                b.rule(grammar.nonterminal_name(a), grammar.spell(&alt.symbols), alt.weight, 0);
            }
        }
    }
    // Markers that no longer occur are harmless; unreachable rules were skipped.
    Ok(b.build()?)
}

/// One declarative and its six candidates, as stored in a six-tuple TSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SixTuple {
    pub declarative: Vec<String>,
    pub candidates: Vec<QuestionCandidate>,
}

/// `decl<TAB>prepose<TAB>delete<TAB>question`, six consecutive lines per declarative.
pub fn format_six_tuple(decl: &[String], candidates: &[QuestionCandidate]) -> String {
    let d = decl.join(" ");
    let mut out = String::new();
    for c in candidates {
        out.push_str(&format!("{d}\t{}\t{}\t{}\n", c.prepose, c.delete, c.tokens.join(" ")));
    }
    out
}

pub fn parse_six_tuples(text: &str) -> Result<Vec<SixTuple>, TransformError> {
    let mut out: Vec<SixTuple> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let fmt_err = |message: String| TransformError::Format {
            line: i + 1,
            message,
        };
        if fields.len() != 4 {
            return Err(fmt_err(format!("expected 4 tab-separated fields, got {}", fields.len())));
        }
        let decl: Vec<String> = fields[0].split_whitespace().map(String::from).collect();
        let prepose: AuxRole = fields[1].parse().map_err(fmt_err)?;
        let delete: Deletion = fields[2].parse().map_err(fmt_err)?;
        let cand = QuestionCandidate {
            tokens: fields[3].split_whitespace().map(String::from).collect(),
            prepose,
            delete,
        };
        match out.last_mut() {
            Some(t) if t.declarative == decl && t.candidates.len() < 6 => t.candidates.push(cand),
            _ => out.push(SixTuple {
                declarative: decl,
                candidates: vec![cand],
            }),
        }
    }
    if let Some(bad) = out.iter().position(|t| t.candidates.len() != 6) {
        return Err(TransformError::Format {
            line: 0,
            message: format!("group {} has {} candidates, expected 6", bad + 1, out[bad].candidates.len()),
        });
    }
    Ok(out)
}
