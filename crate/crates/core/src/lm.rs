//! The interface shared by n-gram and neural language models.

use crate::corpus::Vocabulary;

pub trait LanguageModel {
    fn vocab(&self) -> &Vocabulary;

    /// Natural-log probability of each token of `ids`, starting from a fresh
    /// context (utterance boundary). No `<eos>` is appended.
    fn sentence_logprobs(&self, ids: &[u32]) -> Vec<f64>;

    /// Distribution over the vocabulary for the token after `prefix`,
    /// starting from a fresh context.
    fn next_distribution(&self, prefix: &[u32]) -> Vec<f64>;

    /// Log-probabilities of every token of a document stream (utterances
    /// each followed by `<eos>`), carrying context as far as the model allows.
    fn document_logprobs(&self, stream: &[u32]) -> Vec<f64>;

    /// Scores several sentences; results match calling
    /// [`LanguageModel::sentence_logprobs`] on each one.
    fn batch_sentence_logprobs(&self, batch: &[Vec<u32>]) -> Vec<Vec<f64>> {
        batch.iter().map(|s| self.sentence_logprobs(s)).collect()
    }

    /// Element `i` is the distribution for the token after `ids[..i]`,
    /// starting from a fresh context.
    fn prefix_distributions(&self, ids: &[u32]) -> Vec<Vec<f64>> {
        (0..ids.len()).map(|i| self.next_distribution(&ids[..i])).collect()
    }

    fn describe(&self) -> String;
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }
    fn sentence_logprobs(&self, ids: &[u32]) -> Vec<f64> {
        (**self).sentence_logprobs(ids)
    }
    fn next_distribution(&self, prefix: &[u32]) -> Vec<f64> {
        (**self).next_distribution(prefix)
    }
    fn document_logprobs(&self, stream: &[u32]) -> Vec<f64> {
        (**self).document_logprobs(stream)
    }
    fn batch_sentence_logprobs(&self, batch: &[Vec<u32>]) -> Vec<Vec<f64>> {
        (**self).batch_sentence_logprobs(batch)
    }
    fn prefix_distributions(&self, ids: &[u32]) -> Vec<Vec<f64>> {
        (**self).prefix_distributions(ids)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Uniform distribution over a vocabulary; useful as a reference model.
#[derive(Debug, Clone)]
pub struct UniformModel {
    vocab: Vocabulary,
}

impl UniformModel {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl LanguageModel for UniformModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }
    fn sentence_logprobs(&self, ids: &[u32]) -> Vec<f64> {
        vec![-(self.vocab.len() as f64).ln(); ids.len()]
    }
    fn next_distribution(&self, _prefix: &[u32]) -> Vec<f64> {
        vec![1.0 / self.vocab.len() as f64; self.vocab.len()]
    }
    fn document_logprobs(&self, stream: &[u32]) -> Vec<f64> {
        self.sentence_logprobs(stream)
    }
    fn describe(&self) -> String {
        "uniform".into()
    }
}

/// Perplexity of a document collection, carrying context within each document.
pub fn corpus_perplexity<M: LanguageModel + ?Sized>(
    model: &M,
    docs: &[crate::corpus::Document],
    include_eos: bool,
) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for d in docs {
        let stream = model.vocab().encode_documents(std::slice::from_ref(d));
        let lp = model.document_logprobs(&stream);
        for (lp, &id) in lp.iter().zip(&stream) {
            if include_eos || id != Vocabulary::EOS_ID {
                total += lp;
                n += 1;
            }
        }
    }
    (-total / n.max(1) as f64).exp()
}

/// Either model family, loaded from a file by its magic bytes.
#[derive(Debug, Clone)]
pub enum AnyModel {
    NGram(crate::ngram::NGramModel),
    Neural(crate::neural::NeuralLM),
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}: not an n-gram model or neural checkpoint")]
    UnknownFormat(String),
    #[error(transparent)]
    NGram(#[from] crate::ngram::NGramError),
    #[error(transparent)]
    Neural(#[from] crate::neural::NeuralError),
}

impl AnyModel {
    pub fn from_bytes(bytes: &[u8], label: &str) -> Result<Self, LoadError> {
        if crate::ngram::NGramModel::sniff(bytes) {
            Ok(AnyModel::NGram(crate::ngram::NGramModel::from_bytes(bytes)?))
        } else if crate::neural::NeuralLM::sniff(bytes) {
            Ok(AnyModel::Neural(crate::neural::NeuralLM::from_bytes(bytes)?))
        } else {
            Err(LoadError::UnknownFormat(label.to_string()))
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LoadError> {
        let bytes = std::fs::read(path).map_err(|source| LoadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    pub fn as_dyn(&self) -> &dyn LanguageModel {
        match self {
            AnyModel::NGram(m) => m,
            AnyModel::Neural(m) => m,
        }
    }
}

impl LanguageModel for AnyModel {
    fn vocab(&self) -> &Vocabulary {
        self.as_dyn().vocab()
    }
    fn sentence_logprobs(&self, ids: &[u32]) -> Vec<f64> {
        self.as_dyn().sentence_logprobs(ids)
    }
    fn next_distribution(&self, prefix: &[u32]) -> Vec<f64> {
        self.as_dyn().next_distribution(prefix)
    }
    fn document_logprobs(&self, stream: &[u32]) -> Vec<f64> {
        self.as_dyn().document_logprobs(stream)
    }
    fn batch_sentence_logprobs(&self, batch: &[Vec<u32>]) -> Vec<Vec<f64>> {
        self.as_dyn().batch_sentence_logprobs(batch)
    }
    fn prefix_distributions(&self, ids: &[u32]) -> Vec<Vec<f64>> {
        self.as_dyn().prefix_distributions(ids)
    }
    fn describe(&self) -> String {
        self.as_dyn().describe()
    }
}
