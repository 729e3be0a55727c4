//! Experiment configuration, evaluation reports and aggregation across seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{parse_partition, Vocabulary};
use crate::lm::{corpus_perplexity, LanguageModel};
use crate::neural::NeuralLMConfig;
use crate::ngram::NGramConfig;
use crate::qfeval::{self, Decoding};
use crate::scoring::{self, Metric};
use crate::transform::{parse_six_tuples, AuxLexicon};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Data { path: String, message: String },
    #[error("missing checkpoints:\n{0}")]
    Missing(String),
    #[error("no evaluation reports found under {0}")]
    NoReports(String),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>, ReportError> {
    std::fs::read(path).map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ReportError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| ReportError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
    }
    std::fs::write(path, contents).map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Perplexity,
    SixWay,
    MinimalPairs,
    QuestionFormation,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::Perplexity,
        Protocol::SixWay,
        Protocol::MinimalPairs,
        Protocol::QuestionFormation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Perplexity => "perplexity",
            Protocol::SixWay => "six-way",
            Protocol::MinimalPairs => "minimal-pairs",
            Protocol::QuestionFormation => "question-formation",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown protocol `{s}`"))
    }
}

/// Options shared by every protocol; unused ones are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub metric: Metric,
    /// Partition used to estimate the unigram model for SLOR.
    pub unigram_train: Option<PathBuf>,
    /// Annotation sidecar for question-formation pairs.
    pub annotations: Option<PathBuf>,
    pub decoding: Decoding,
    /// Whether `<eos>` predictions count toward corpus perplexity.
    pub include_eos: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metric: Metric::Perplexity,
            unigram_train: None,
            annotations: None,
            decoding: Decoding::TeacherForced,
            include_eos: true,
        }
    }
}

/// Provenance and headline numbers of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub model: String,
    pub model_sha256: String,
    pub dataset: String,
    pub dataset_sha256: String,
    pub config_hash: String,
    pub grammar_hashes: BTreeMap<String, String>,
    pub options: EvalOptions,
    pub metrics: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in &self.metrics {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }
}

/// A report plus protocol-specific files (name, contents).
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub artifacts: Vec<(String, String)>,
}

/// Grammar hashes recorded in a dataset manifest next to `data`, if any.
fn manifest_grammar_hashes(data: &Path) -> BTreeMap<String, String> {
    let Some(dir) = data.parent() else {
        return BTreeMap::new();
    };
    let Ok(text) = std::fs::read_to_string(dir.join("manifest.json")) else {
        return BTreeMap::new();
    };
    serde_json::from_str::<DatasetManifest>(&text)
        .map(|m| BTreeMap::from([(m.grammar, m.grammar_sha256)]))
        .unwrap_or_default()
}

fn data_err(path: &Path, e: impl fmt::Display) -> ReportError {
    ReportError::Data {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn text(path: &Path, bytes: &[u8]) -> Result<String, ReportError> {
    String::from_utf8(bytes.to_vec()).map_err(|e| data_err(path, e))
}

/// Runs one protocol. The result depends only on the model bytes, the
/// dataset bytes (plus sidecars) and the options.
pub fn run_eval(
    model: &dyn LanguageModel,
    model_bytes: &[u8],
    protocol: Protocol,
    data: &Path,
    options: &EvalOptions,
) -> Result<EvalOutput, ReportError> {
    let data_bytes = read(data)?;
    let body = text(data, &data_bytes)?;
    let mut metrics = BTreeMap::new();
    let mut artifacts = Vec::new();
    match protocol {
        Protocol::Perplexity => {
            let docs = parse_partition(&body);
            let tokens: usize = docs.iter().map(|d| d.token_count()).sum();
            if tokens == 0 {
                return Err(data_err(data, "no tokens"));
            }
            metrics.insert("perplexity".into(), corpus_perplexity(model, &docs, options.include_eos));
            metrics.insert("tokens".into(), tokens as f64);
        }
        Protocol::SixWay => {
            let tuples = parse_six_tuples(&body).map_err(|e| data_err(data, e))?;
            let unigram = match (&options.metric, &options.unigram_train) {
                (Metric::Slor, Some(p)) => {
                    let docs = parse_partition(&text(p, &read(p)?)?);
                    let sentences: Vec<Vec<String>> = docs.into_iter().flat_map(|d| d.utterances).collect();
                    Some(scoring::unigram_model(&sentences, model.vocab().clone()).map_err(|e| data_err(p, e))?)
                }
                (Metric::Slor, None) => {
                    return Err(ReportError::Config("SLOR needs a unigram training partition".into()));
                }
                _ => None,
            };
            let (result, choices) = scoring::evaluate_six_way(
                model,
                unigram.as_ref().map(|u| u as &dyn LanguageModel),
                &tuples,
                options.metric,
            )
            .map_err(|e| data_err(data, e))?;
            for (i, (p, d)) in crate::transform::SIX_WAY_ORDER.iter().enumerate() {
                metrics.insert(format!("prepose_{p}/delete_{d}"), result.proportions[i]);
            }
            metrics.insert("items".into(), result.items as f64);
            metrics.insert("ties".into(), result.ties as f64);
            artifacts.push(("six_way.json".into(), result.to_json()));
            artifacts.push(("six_way.csv".into(), result.to_csv()));
            let per_item: String = choices
                .iter()
                .map(|c| serde_json::to_string(c).expect("choice serializes") + "\n")
                .collect();
            artifacts.push(("six_way_items.jsonl".into(), per_item));
        }
        Protocol::MinimalPairs => {
            let (pairs, skipped) = scoring::parse_minimal_pairs(&body);
            let result = scoring::minimal_pair_accuracy(model, &pairs, skipped);
            metrics.insert("accuracy".into(), result.accuracy);
            metrics.insert("items".into(), result.items as f64);
            metrics.insert("skipped".into(), result.skipped.len() as f64);
            artifacts.push(("minimal_pairs.json".into(), result.to_json()));
            artifacts.push(("minimal_pairs.csv".into(), result.to_csv()));
        }
        Protocol::QuestionFormation => {
            let pairs = qfeval::parse_pairs(&body).map_err(|e| data_err(data, e))?;
            let annotations = match &options.annotations {
                Some(p) => Some(qfeval::parse_annotations(&text(p, &read(p)?)?).map_err(|e| data_err(p, e))?),
                None => None,
            };
            let (summary, judgments) = qfeval::evaluate_pairs(
                model,
                &pairs,
                annotations.as_deref(),
                &AuxLexicon::standard(),
                options.decoding,
            )
            .map_err(|e| data_err(data, e))?;
            metrics.insert("first_word_accuracy".into(), summary.first_word_accuracy);
            metrics.insert("full_question_accuracy".into(), summary.full_question_accuracy);
            metrics.insert("linear_rate".into(), summary.linear_rate);
            metrics.insert("hierarchical_rate".into(), summary.hierarchical_rate);
            for (k, v) in &summary.consistency {
                metrics.insert(k.clone(), *v);
            }
            metrics.insert("items".into(), summary.items as f64);
            artifacts.push(("qf_summary.json".into(), summary.to_json()));
            artifacts.push(("qf_summary.csv".into(), summary.to_csv()));
            artifacts.push(("qf_judgments.jsonl".into(), qfeval::judgments_jsonl(&judgments)));
            artifacts.push(("qf_breakdown.csv".into(), qfeval::breakdown_csv(&qfeval::lexical_breakdown(&judgments))));
        }
    }
    let options_json = serde_json::to_string(options).expect("options serialize");
    let report = EvalReport {
        protocol,
        model: model.describe(),
        model_sha256: sha256_hex(model_bytes),
        dataset: data.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        dataset_sha256: sha256_hex(&data_bytes),
        config_hash: sha256_hex(format!("{protocol}\n{options_json}").as_bytes()),
        grammar_hashes: manifest_grammar_hashes(data),
        options: options.clone(),
        metrics,
    };
    Ok(EvalOutput { report, artifacts })
}

/// Manifest written next to every generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: String,
    pub grammar: String,
    pub grammar_sha256: String,
    pub seed: u64,
    pub count: usize,
    pub items: usize,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelKind {
    Ngram {
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default = "default_true")]
        modified: bool,
    },
    Neural {
        #[serde(default)]
        config: NeuralLMConfig,
    },
}

fn default_order() -> usize {
    NGramConfig::default().order
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub protocol: Protocol,
    pub data: PathBuf,
    #[serde(default)]
    pub options: EvalOptions,
}

/// A whole experiment as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Preprocessed directory with `train.txt`, `valid.txt`, `test.txt`, `vocab.tsv`.
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub grammars: Vec<String>,
    pub models: Vec<ModelSpec>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub evaluations: Vec<EvalSpec>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let bytes = read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| data_err(path, e))
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        let err = |m: String| Err(ReportError::Config(m));
        if self.seeds.is_empty() {
            return err("at least one seed is required".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return err("seeds must be distinct".into());
        }
        let names: BTreeSet<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
        if names.len() != self.models.len() {
            return err("model names must be distinct".into());
        }
        if self.models.iter().any(|m| m.name.is_empty() || m.name.contains(['/', '\\'])) {
            return err("model names must be non-empty and contain no path separators".into());
        }
        for m in &self.models {
            if let ModelKind::Neural { config } = &m.kind {
                config.validate().map_err(|e| ReportError::Config(format!("{}: {e}", m.name)))?;
            }
        }
        let mut outputs = BTreeSet::new();
        for e in &self.evaluations {
            let stem = e.data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if !outputs.insert((e.protocol, stem.clone())) {
                return err(format!("two {} evaluations on datasets named `{stem}` would overwrite each other", e.protocol));
            }
        }
        let mut paths: Vec<&Path> = vec![&self.data_dir];
        paths.extend(self.evaluations.iter().map(|e| e.data.as_path()));
        for e in &self.evaluations {
            paths.extend(e.options.annotations.as_deref());
            paths.extend(e.options.unigram_train.as_deref());
        }
        for p in paths {
            if !p.exists() {
                return err(format!("{} does not exist", p.display()));
            }
        }
        for g in &self.grammars {
            if crate::grammar::bundled_source(g).is_none() && !Path::new(g).exists() {
                return err(format!("grammar {g} is neither bundled nor a file"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Content hashes of the configured grammars.
    pub fn grammar_hashes(&self) -> Result<BTreeMap<String, String>, ReportError> {
        self.grammars
            .iter()
            .map(|g| {
                let grammar = crate::datasets::load_grammar(g).map_err(|e| ReportError::Config(format!("{g}: {e}")))?;
                Ok((g.clone(), grammar.content_hash()))
            })
            .collect()
    }

    pub fn run_dir(&self, model: &str, seed: u64) -> PathBuf {
        self.output_dir.join(model).join(format!("seed-{seed}"))
    }

    pub fn checkpoint(&self, model: &str, seed: u64) -> PathBuf {
        self.run_dir(model, seed).join("model.bin")
    }

    /// Checkpoints the configuration expects but that do not exist.
    pub fn missing_checkpoints(&self) -> Vec<PathBuf> {
        self.models
            .iter()
            .flat_map(|m| self.seeds.iter().map(|&s| self.checkpoint(&m.name, s)))
            .filter(|p| !p.exists())
            .collect()
    }

    pub fn vocabulary(&self) -> Result<Vocabulary, ReportError> {
        let p = self.data_dir.join("vocab.tsv");
        Vocabulary::load(&p).map_err(|e| data_err(&p, e))
    }
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub protocol: Protocol,
    pub dataset: String,
    pub metric: String,
    pub runs: usize,
    pub mean: f64,
    /// Population standard deviation across runs.
    pub std: f64,
}

/// Groups reports by (model group, protocol, dataset) and summarizes each
/// metric across runs. `group` labels each report, typically the model name.
pub fn aggregate(reports: &[(String, EvalReport)]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, Protocol, String, String), Vec<f64>> = BTreeMap::new();
    for (group, r) in reports {
        for (metric, v) in &r.metrics {
            groups
                .entry((group.clone(), r.protocol, r.dataset.clone(), metric.clone()))
                .or_default()
                .push(*v);
        }
    }
    groups
        .into_iter()
        .map(|((model, protocol, dataset, metric), values)| {
            let (mean, std) = mean_std(&values);
            AggregateRow {
                model,
                protocol,
                dataset,
                metric,
                runs: values.len(),
                mean,
                std,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub std_convention: String,
    pub config_hash: Option<String>,
    pub grammar_hashes: BTreeMap<String, String>,
    pub rows: Vec<AggregateRow>,
}

impl AggregateReport {
    pub fn new(rows: Vec<AggregateRow>, config_hash: Option<String>, grammar_hashes: BTreeMap<String, String>) -> Self {
        Self {
            std_convention: "population".into(),
            config_hash,
            grammar_hashes,
            rows,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("aggregate serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# std = population standard deviation; config {}\nmodel,protocol,dataset,metric,runs,mean,std\n",
            self.config_hash.as_deref().unwrap_or("-")
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.model, r.protocol, r.dataset, r.metric, r.runs, r.mean, r.std
            ));
        }
        s
    }
}

/// Every `eval/*.report.json` below `dir`, labelled by the model directory
/// two levels above the seed directory (`<model>/seed-<s>/eval/..`).
pub fn collect_reports(dir: &Path) -> Result<Vec<(String, EvalReport)>, ReportError> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| ReportError::Io {
            path: d.display().to_string(),
            message: e.to_string(),
        })?;
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".report.json")) {
                found.push(p);
            }
        }
    }
    found.sort();
    found
        .into_iter()
        .map(|p| {
            let report: EvalReport = serde_json::from_slice(&read(&p)?).map_err(|e| data_err(&p, e))?;
            let seed_dir = p.parent().and_then(Path::parent);
            let label = seed_dir
                .filter(|s| s.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-")))
                .and_then(Path::parent)
                .and_then(Path::file_name)
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| report.model.clone());
            Ok((label, report))
        })
        .collect()
}
