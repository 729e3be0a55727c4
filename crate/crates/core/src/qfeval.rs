//! Question-formation evaluation: first-word and full-question accuracy,
//! rule-consistency of the predicted first word, and the breakdown by
//! auxiliary identities.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::LanguageModel;
use crate::transform::{AnnotatedSentence, AuxLexicon, PairExample, PERIOD, QUESTION_MARK};

#[derive(Debug, Error)]
pub enum QfError {
    #[error("pair {index}: {message}")]
    Format { index: usize, message: String },
    #[error("{0} annotations for {1} pairs")]
    AnnotationCount(usize, usize),
    #[error("annotations line {line}: {message}")]
    Annotation { line: usize, message: String },
}

/// Which rules a predicted first word is consistent with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Consistency {
    pub linear: bool,
    pub hierarchical: bool,
}

impl Consistency {
    /// Report categories in chart order.
    pub const LABELS: [&'static str; 4] = ["linear_only", "hierarchical_only", "both", "neither"];

    pub fn label(self) -> &'static str {
        match (self.linear, self.hierarchical) {
            (true, false) => Self::LABELS[0],
            (false, true) => Self::LABELS[1],
            (true, true) => Self::LABELS[2],
            (false, false) => Self::LABELS[3],
        }
    }
}

/// The two auxiliaries of a declarative, by token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxPair {
    pub first: String,
    pub main: String,
}

impl AuxPair {
    pub fn from_annotation(a: &AnnotatedSentence) -> Self {
        Self {
            first: a.first_aux().to_string(),
            main: a.main_aux().to_string(),
        }
    }

    /// Without an annotation: the first auxiliary is the earliest lexicon
    /// token of the declarative and, since gold questions front the main
    /// auxiliary, the main auxiliary is the gold question's first token.
    pub fn infer(pair: &PairExample, lexicon: &AuxLexicon) -> Option<Self> {
        let first = pair.declarative.iter().find(|t| lexicon.contains(t))?;
        let main = pair.question.first().filter(|t| lexicon.contains(t))?;
        Some(Self {
            first: first.clone(),
            main: main.clone(),
        })
    }
}

/// Consistency of a predicted first word and the identity of the chosen
/// auxiliary (`other` when it is not an auxiliary).
pub fn classify_first_word(auxes: &AuxPair, predicted: &str, lexicon: &AuxLexicon) -> (Consistency, String) {
    let c = Consistency {
        linear: predicted == auxes.first,
        hierarchical: predicted == auxes.main,
    };
    let identity = if lexicon.contains(predicted) { predicted } else { "other" };
    (c, identity.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Decoding {
    /// Each position predicted from the gold history.
    #[default]
    TeacherForced,
    /// Greedy continuation of the model's own output; qualitative only.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFJudgment {
    pub declarative: Vec<String>,
    pub gold_question: Vec<String>,
    pub predicted_first: String,
    pub predicted_question: Vec<String>,
    pub first_word_correct: bool,
    pub full_correct: bool,
    pub consistency: Consistency,
    pub chosen_aux: String,
    pub first_aux: Option<String>,
    pub main_aux: Option<String>,
}

fn argmax(d: &[f64]) -> usize {
    (0..d.len()).fold(0, |b, i| if d[i] > d[b] { i } else { b })
}

/// Judges one pair. `auxes` enables the consistency classification.
pub fn judge_pair<M: LanguageModel + ?Sized>(
    model: &M,
    pair: &PairExample,
    auxes: Option<&AuxPair>,
    lexicon: &AuxLexicon,
    decoding: Decoding,
    index: usize,
) -> Result<QFJudgment, QfError> {
    let fmt = |m: &str| QfError::Format {
        index,
        message: m.to_string(),
    };
    if pair.declarative.last().map(String::as_str) != Some(PERIOD) {
        return Err(fmt("declarative does not end with `.`"));
    }
    if pair.question.is_empty() {
        return Err(fmt("empty question"));
    }
    let vocab = model.vocab();
    // Gold comparison happens in the model's vocabulary, so an out-of-vocabulary
    // gold token is matched by a predicted `<unk>`.
    let gold = vocab.encode(&pair.question);
    let d = pair.declarative.len();
    let ids = vocab.encode(&pair.concatenated);
    let dists = model.prefix_distributions(&ids);
    let forced: Vec<u32> = dists[d..].iter().map(|p| argmax(p) as u32).collect();
    let predicted_ids = match decoding {
        Decoding::TeacherForced => forced.clone(),
        Decoding::Free => {
            let mut ctx = ids[..d].to_vec();
            let stop = vocab.id(QUESTION_MARK);
            let mut out = Vec::new();
            for _ in 0..2 * gold.len() + 5 {
                let next = argmax(&model.next_distribution(&ctx)) as u32;
                out.push(next);
                ctx.push(next);
                if Some(next) == stop || next == crate::corpus::Vocabulary::EOS_ID {
                    break;
                }
            }
            out
        }
    };
    let predicted_first = vocab.token(forced[0]).to_string();
    let first_word_correct = forced[0] == gold[0];
    let full_correct = forced == gold;
    let (consistency, chosen_aux) = match auxes {
        Some(a) => classify_first_word(a, &predicted_first, lexicon),
        None => (
            Consistency::default(),
            if lexicon.contains(&predicted_first) { predicted_first.clone() } else { "other".into() },
        ),
    };
    Ok(QFJudgment {
        declarative: pair.declarative.clone(),
        gold_question: pair.question.clone(),
        predicted_first,
        predicted_question: vocab.decode(&predicted_ids),
        first_word_correct,
        full_correct,
        consistency,
        chosen_aux,
        first_aux: auxes.map(|a| a.first.clone()),
        main_aux: auxes.map(|a| a.main.clone()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFSummary {
    pub model: String,
    pub items: usize,
    pub first_word_accuracy: f64,
    pub full_question_accuracy: f64,
    /// Proportion of items per consistency category, keyed by label.
    pub consistency: BTreeMap<String, f64>,
    pub linear_rate: f64,
    pub hierarchical_rate: f64,
}

impl QFSummary {
    pub fn from_judgments(model: &str, judgments: &[QFJudgment]) -> Self {
        let n = judgments.len().max(1) as f64;
        let rate = |f: &dyn Fn(&QFJudgment) -> bool| judgments.iter().filter(|j| f(j)).count() as f64 / n;
        let consistency = Consistency::LABELS
            .iter()
            .map(|l| (l.to_string(), rate(&|j: &QFJudgment| j.consistency.label() == *l)))
            .collect();
        Self {
            model: model.to_string(),
            items: judgments.len(),
            first_word_accuracy: rate(&|j| j.first_word_correct),
            full_question_accuracy: rate(&|j| j.full_correct),
            consistency,
            linear_rate: rate(&|j| j.consistency.linear),
            hierarchical_rate: rate(&|j| j.consistency.hierarchical),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        s.push_str(&format!("items,{}\n", self.items));
        s.push_str(&format!("first_word_accuracy,{}\n", self.first_word_accuracy));
        s.push_str(&format!("full_question_accuracy,{}\n", self.full_question_accuracy));
        for l in Consistency::LABELS {
            s.push_str(&format!("{l},{}\n", self.consistency[l]));
        }
        s
    }
}

/// Judges every pair. Annotations, when given, are parallel to `pairs`;
/// otherwise auxiliaries are inferred from the tokens.
pub fn evaluate_pairs<M: LanguageModel + ?Sized>(
    model: &M,
    pairs: &[PairExample],
    annotations: Option<&[AuxPair]>,
    lexicon: &AuxLexicon,
    decoding: Decoding,
) -> Result<(QFSummary, Vec<QFJudgment>), QfError> {
    if let Some(a) = annotations {
        if a.len() != pairs.len() {
            return Err(QfError::AnnotationCount(a.len(), pairs.len()));
        }
    }
    let mut judgments = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let inferred;
        let auxes = match annotations {
            Some(a) => Some(&a[i]),
            None => {
                inferred = AuxPair::infer(p, lexicon);
                inferred.as_ref()
            }
        };
        judgments.push(judge_pair(model, p, auxes, lexicon, decoding, i)?);
    }
    Ok((QFSummary::from_judgments(&model.describe(), &judgments), judgments))
}

/// One JSON object per line.
pub fn judgments_jsonl(judgments: &[QFJudgment]) -> String {
    judgments
        .iter()
        .map(|j| serde_json::to_string(j).expect("judgment serializes") + "\n")
        .collect()
}

/// Annotation sidecar: one `{"first": .., "main": ..}` object per pair.
pub fn annotations_jsonl(auxes: &[AuxPair]) -> String {
    auxes
        .iter()
        .map(|a| serde_json::to_string(a).expect("annotation serializes") + "\n")
        .collect()
}

pub fn parse_annotations(text: &str) -> Result<Vec<AuxPair>, QfError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| QfError::Annotation {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Breakdown row for one unordered auxiliary pair `{aux_x, aux_y}`, with
/// `aux_x < aux_y`. Both orderings of the pair contribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub aux_x: String,
    pub aux_y: String,
    pub n: usize,
    pub p_first: f64,
    pub p_main: f64,
    pub p_aux_x: f64,
    pub p_aux_y: f64,
    pub p_other: f64,
}

/// Groups judgments with two distinct auxiliary tokens by their unordered
/// pair. Judgments without auxiliaries or with identical ones are ignored.
pub fn lexical_breakdown(judgments: &[QFJudgment]) -> Vec<BreakdownRow> {
    let mut groups: BTreeMap<(String, String), Vec<&QFJudgment>> = BTreeMap::new();
    for j in judgments {
        let (Some(f), Some(m)) = (&j.first_aux, &j.main_aux) else {
            continue;
        };
        if f == m {
            continue;
        }
        let key = if f < m { (f.clone(), m.clone()) } else { (m.clone(), f.clone()) };
        groups.entry(key).or_default().push(j);
    }
    groups
        .into_iter()
        .map(|((x, y), js)| {
            let n = js.len() as f64;
            let p = |f: &dyn Fn(&QFJudgment) -> bool| js.iter().filter(|j| f(j)).count() as f64 / n;
            let p_first = p(&|j| j.consistency.linear);
            let p_main = p(&|j| j.consistency.hierarchical);
            BreakdownRow {
                n: js.len(),
                p_first,
                p_main,
                p_aux_x: p(&|j| j.predicted_first == x),
                p_aux_y: p(&|j| j.predicted_first == y),
                p_other: p(&|j| !j.consistency.linear && !j.consistency.hierarchical),
                aux_x: x,
                aux_y: y,
            }
        })
        .collect()
}

pub fn breakdown_csv(rows: &[BreakdownRow]) -> String {
    let mut s = String::from("pair,n,p_first,p_main,p_auxX,p_auxY,p_other\n");
    for r in rows {
        s.push_str(&format!(
            "{}/{},{},{},{},{},{},{}\n",
            r.aux_x, r.aux_y, r.n, r.p_first, r.p_main, r.p_aux_x, r.p_aux_y, r.p_other
        ));
    }
    s
}

/// Pair file: one concatenated pair per line.
pub fn parse_pairs(text: &str) -> Result<Vec<PairExample>, QfError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let toks: Vec<&str> = l.split_whitespace().collect();
            PairExample::split(&toks).map_err(|e| QfError::Format {
                index: i,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn format_pairs(pairs: &[PairExample]) -> String {
    pairs.iter().map(|p| p.concatenated.join(" ") + "\n").collect()
}
