//! Corpus ingestion, tokenization, document-level splitting and vocabularies.
//!
//! A corpus directory holds one document per file and one utterance per line.
//! Partition files written by [`write_partition`] keep one utterance per line
//! and separate documents with a blank line.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";
pub const DEFAULT_MIN_COUNT: u64 = 3;
pub const DEFAULT_RATIOS: [f64; 3] = [0.90, 0.05, 0.05];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error("need at least {needed} documents, found {found}")]
    TooFewDocuments { needed: usize, found: usize },
    #[error("split ratios must be three non-negative numbers summing to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub utterances: Vec<Vec<String>>,
}

impl Document {
    pub fn token_count(&self) -> usize {
        self.utterances.iter().map(Vec::len).sum()
    }
}

const CONTRACTIONS: [&str; 7] = ["n't", "'s", "'re", "'ll", "'ve", "'d", "'m"];
const DETACHED_PUNCT: [char; 4] = ['.', '?', '!', ','];

/// Lowercases, splits on whitespace, detaches trailing sentence punctuation
/// and splits clitics off as separate tokens (`don't` -> `do n't`).
pub fn normalize(raw_line: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in raw_line.split_whitespace() {
        let word = word.to_lowercase().replace('\u{2019}', "'");
        let mut trailing = Vec::new();
        let mut stem = word.as_str();
        while stem.chars().count() > 1 {
            let Some(c) = stem.chars().last() else { break };
            if !DETACHED_PUNCT.contains(&c) {
                break;
            }
            trailing.push(c.to_string());
            stem = &stem[..stem.len() - c.len_utf8()];
        }
        let mut clitic = None;
        for c in CONTRACTIONS {
            if stem.len() > c.len() && stem.ends_with(c) {
                clitic = Some(c);
                stem = &stem[..stem.len() - c.len()];
                break;
            }
        }
        out.push(stem.to_string());
        if let Some(c) = clitic {
            out.push(c.to_string());
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

/// Reads every regular file of `dir` (sorted by name) as one document.
pub fn load_corpus_dir(dir: &Path) -> Result<Vec<Document>, CorpusError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut docs = Vec::with_capacity(paths.len());
    for p in paths {
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        let utterances: Vec<Vec<String>> = text
            .lines()
            .map(normalize)
            .filter(|u| !u.is_empty())
            .collect();
        let id = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        docs.push(Document { id, utterances });
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Valid,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Valid, Partition::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Partition::Train => "train.txt",
            Partition::Valid => "valid.txt",
            Partition::Test => "test.txt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub target_ratios: [f64; 3],
    pub realized_ratios: [f64; 3],
    pub token_counts: [usize; 3],
    pub document_counts: [usize; 3],
    pub assignments: Vec<(String, Partition)>,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Document>,
    pub valid: Vec<Document>,
    pub test: Vec<Document>,
    pub manifest: SplitManifest,
}

/// Assigns whole documents to train/valid/test: shuffle under `seed`, then
/// give each document to the partition furthest below its token budget.
pub fn split_corpus(docs: &[Document], ratios: [f64; 3], seed: u64) -> Result<Split, CorpusError> {
    if docs.len() < 3 {
        return Err(CorpusError::TooFewDocuments {
            needed: 3,
            found: docs.len(),
        });
    }
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total: usize = docs.iter().map(Document::token_count).sum();
    let targets: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();

    let mut assigned = vec![0usize; docs.len()];
    let mut tokens = [0usize; 3];
    for &d in &order {
        let k = (0..3)
            .max_by(|&a, &b| {
                let da = targets[a] - tokens[a] as f64;
                let db = targets[b] - tokens[b] as f64;
                // Ties go to the lower partition index.
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a))
            })
            .unwrap_or(0);
        assigned[d] = k;
        tokens[k] += docs[d].token_count();
    }
    // Partitions with a positive target must not be empty.
    for k in 1..3 {
        if ratios[k] > 0.0 && !assigned.contains(&k) {
            let donor = (0..docs.len())
                .filter(|&d| assigned[d] == 0)
                .min_by_key(|&d| (docs[d].token_count(), d));
            if let Some(d) = donor {
                assigned[d] = k;
                tokens[0] -= docs[d].token_count();
                tokens[k] += docs[d].token_count();
            }
        }
    }

    let realized: [f64; 3] = std::array::from_fn(|k| {
        if total == 0 { 0.0 } else { tokens[k] as f64 / total as f64 }
    });
    if (0..3).any(|k| (realized[k] - ratios[k]).abs() > 0.02) {
        warn!("document sizes make the requested split infeasible: realized token ratios {realized:?}, targets {ratios:?}");
    }

    let mut parts: [Vec<Document>; 3] = Default::default();
    let mut assignments = Vec::with_capacity(docs.len());
    for (d, doc) in docs.iter().enumerate() {
        parts[assigned[d]].push(doc.clone());
        assignments.push((doc.id.clone(), Partition::ALL[assigned[d]]));
    }
    let document_counts = std::array::from_fn(|k| parts[k].len());
    let [train, valid, test] = parts;
    Ok(Split {
        train,
        valid,
        test,
        manifest: SplitManifest {
            seed,
            target_ratios: ratios,
            realized_ratios: realized,
            token_counts: tokens,
            document_counts,
            assignments,
        },
    })
}

/// Dense token ids with `<unk>` = 0 and `<eos>` = 1, then by descending
/// training count and lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    min_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UnkStats {
    pub total: usize,
    pub replaced: usize,
}

impl UnkStats {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.replaced as f64 / self.total as f64
        }
    }
}

impl Vocabulary {
    pub const UNK_ID: u32 = 0;
    pub const EOS_ID: u32 = 1;

    /// Keeps tokens that occur at least `min_count` times.
    pub fn build<'a, I>(utterances: I, min_count: u64) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut specials = [0u64; 2];
        for u in utterances {
            for t in u {
                match t.as_str() {
                    UNK => specials[0] += 1,
                    EOS => specials[1] += 1,
                    _ => *counts.entry(t.as_str()).or_default() += 1,
                }
            }
        }
        let mut kept: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens = vec![UNK.to_string(), EOS.to_string()];
        let mut cs = specials.to_vec();
        for (t, c) in kept {
            tokens.push(t.to_string());
            cs.push(c);
        }
        Self::from_parts(tokens, cs, min_count)
    }

    /// Builds from documents' training text.
    pub fn from_documents(docs: &[Document], min_count: u64) -> Self {
        Self::build(docs.iter().flat_map(|d| d.utterances.iter().map(Vec::as_slice)), min_count)
    }

    /// A vocabulary over exactly the given tokens (specials are added first).
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut all = vec![UNK.to_string(), EOS.to_string()];
        for t in tokens {
            let t = t.as_ref();
            if !all.iter().any(|x| x == t) {
                all.push(t.to_string());
            }
        }
        let n = all.len();
        Self::from_parts(all, vec![0; n], 1)
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<u64>, min_count: u64) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            counts,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn with_min_count(mut self, min_count: u64) -> Self {
        self.min_count = min_count;
        self
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Replaces out-of-vocabulary tokens with `<unk>`.
    pub fn apply_unk<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        self.apply_unk_counted(tokens, &mut UnkStats::default())
    }

    pub fn apply_unk_counted<S: AsRef<str>>(&self, tokens: &[S], stats: &mut UnkStats) -> Vec<String> {
        tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                stats.total += 1;
                if self.contains(t) {
                    t.to_string()
                } else {
                    stats.replaced += 1;
                    UNK.to_string()
                }
            })
            .collect()
    }

    /// Unk-applies every utterance of every document in place.
    pub fn apply_unk_documents(&self, docs: &mut [Document]) -> UnkStats {
        let mut stats = UnkStats::default();
        for d in docs {
            for u in &mut d.utterances {
                *u = self.apply_unk_counted(u, &mut stats);
            }
        }
        stats
    }

    /// Id stream with `<eos>` after every utterance, documents concatenated.
    pub fn encode_documents(&self, docs: &[Document]) -> Vec<u32> {
        let mut out = Vec::new();
        for d in docs {
            for u in &d.utterances {
                out.extend(u.iter().map(|t| self.id_or_unk(t)));
                out.push(Self::EOS_ID);
            }
        }
        out
    }

    /// `token<TAB>id<TAB>count` lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            s.push_str(&format!("{t}\t{i}\t{}\n", self.counts[i]));
        }
        s
    }

    pub fn from_tsv(text: &str, path: &str) -> Result<Self, CorpusError> {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |message: &str| CorpusError::Format {
                path: path.to_string(),
                line: i + 1,
                message: message.to_string(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(err("expected token<TAB>id<TAB>count"));
            }
            let id: usize = f[1].parse().map_err(|_| err("bad id"))?;
            if id != tokens.len() {
                return Err(err("ids must be dense and in order"));
            }
            tokens.push(f[0].to_string());
            counts.push(f[2].parse().map_err(|_| err("bad count"))?);
        }
        if tokens.first().map(String::as_str) != Some(UNK) || tokens.get(1).map(String::as_str) != Some(EOS) {
            return Err(CorpusError::Format {
                path: path.to_string(),
                line: 1,
                message: format!("first two entries must be {UNK} and {EOS}"),
            });
        }
        let min_count = counts[2..].iter().copied().min().unwrap_or(1);
        Ok(Self::from_parts(tokens, counts, min_count))
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_tsv(&text, &path.display().to_string())
    }
}

pub fn write_partition(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for (i, d) in docs.iter().enumerate() {
        if i > 0 {
            writeln!(w).map_err(io_err(path))?;
        }
        for u in &d.utterances {
            writeln!(w, "{}", u.join(" ")).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Reads a partition file; blank lines separate documents. Tokens are taken
/// as already normalized.
pub fn read_partition(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(parse_partition(&text))
}

pub fn parse_partition(text: &str) -> Vec<Document> {
    let mut docs = Vec::new();
    let mut current: Vec<Vec<String>> = Vec::new();
    let flush = |current: &mut Vec<Vec<String>>, docs: &mut Vec<Document>| {
        if !current.is_empty() {
            docs.push(Document {
                id: format!("doc{}", docs.len()),
                utterances: std::mem::take(current),
            });
        }
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut current, &mut docs);
        } else {
            current.push(line.split_whitespace().map(String::from).collect());
        }
    }
    flush(&mut current, &mut docs);
    docs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub documents: usize,
    pub vocabulary_size: usize,
    pub unk_rate_train: f64,
    pub unk_rate_valid: f64,
    pub unk_rate_test: f64,
    pub manifest: SplitManifest,
}

/// Loads a corpus directory, splits it, builds the vocabulary on train,
/// unk-applies all partitions and writes `train.txt`, `valid.txt`,
/// `test.txt`, `vocab.tsv` and `split.json` into `out_dir`.
pub fn preprocess(
    corpus_dir: &Path,
    out_dir: &Path,
    ratios: [f64; 3],
    seed: u64,
    min_count: u64,
) -> Result<PreprocessSummary, CorpusError> {
    let docs = load_corpus_dir(corpus_dir)?;
    let Split {
        mut train,
        mut valid,
        mut test,
        manifest,
    } = split_corpus(&docs, ratios, seed)?;
    let vocab = Vocabulary::from_documents(&train, min_count);
    let s_train = vocab.apply_unk_documents(&mut train);
    let s_valid = vocab.apply_unk_documents(&mut valid);
    let s_test = vocab.apply_unk_documents(&mut test);
    info!(
        "vocabulary {} types; unk rate train {:.4} valid {:.4} test {:.4}",
        vocab.len(),
        s_train.rate(),
        s_valid.rate(),
        s_test.rate()
    );
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_partition(&out_dir.join(Partition::Train.file_name()), &train)?;
    write_partition(&out_dir.join(Partition::Valid.file_name()), &valid)?;
    write_partition(&out_dir.join(Partition::Test.file_name()), &test)?;
    vocab.save(&out_dir.join("vocab.tsv"))?;
    let manifest_path = out_dir.join("split.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&manifest_path))?;
    Ok(PreprocessSummary {
        documents: docs.len(),
        vocabulary_size: vocab.len(),
        unk_rate_train: s_train.rate(),
        unk_rate_valid: s_valid.rate(),
        unk_rate_test: s_test.rate(),
        manifest,
    })
}
