//! Command-line interface. Exit status 0 on success, 1 for user errors
//! (bad flags, missing or malformed inputs) and 2 for internal failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{self, read_partition, Vocabulary, DEFAULT_MIN_COUNT, DEFAULT_RATIOS};
use crate::datasets::{self, CorpusLayout, DatasetKind, DEFAULT_MAX_DEPTH};
use crate::lm::{AnyModel, LanguageModel};
use crate::neural::{generate_text, train_lm, Architecture, NeuralError, NeuralLMConfig, Precision, TrainOptions};
use crate::ngram::{NGramConfig, NGramModel};
use crate::qfeval::{self, Decoding};
use crate::report::{
    self, aggregate, collect_reports, run_eval, AggregateReport, DatasetManifest, EvalOptions, ExperimentConfig,
    ModelKind, Protocol, ReportError,
};
use crate::scoring::{self, Metric};
use crate::transform::format_six_tuple;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        user(e)
    }
}

impl From<NeuralError> for CliError {
    fn from(e: NeuralError) -> Self {
        match e {
            NeuralError::NumericFault(_) => CliError::Internal(e.to_string()),
            _ => user(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "auxinv", version, about = "Question-formation generalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample evaluation or training data from a grammar.
    GenData(GenDataArgs),
    /// Split a corpus directory and build the vocabulary.
    Preprocess(PreprocessArgs),
    /// Estimate a Kneser-Ney n-gram model.
    TrainNgram(TrainNgramArgs),
    /// Train an LSTM or Transformer language model.
    TrainLm(TrainLmArgs),
    /// Evaluate a model under one protocol.
    Eval(EvalArgs),
    /// Sample text from a model.
    GenerateText(GenerateArgs),
    /// Aggregate evaluation reports across seeds.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    kind: DatasetKind,
    /// Bundled grammar name or grammar file; defaults per kind.
    #[arg(long)]
    grammar: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
    max_depth: usize,
    /// Corpus only: utterance layout.
    #[arg(long, default_value = "pairs")]
    layout: CorpusLayout,
    /// Corpus only: utterances per document file.
    #[arg(long, default_value_t = 100)]
    doc_size: usize,
    /// Corpus only: stop once this many tokens are written.
    #[arg(long)]
    max_tokens: Option<usize>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MIN_COUNT)]
    min_count: u64,
    /// Train, validation and test proportions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    ratios: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct TrainNgramArgs {
    /// Preprocessed data directory.
    #[arg(long, required_unless_present = "config")]
    data: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = NGramConfig::default().order)]
    order: usize,
    /// Use a single discount per order instead of three.
    #[arg(long)]
    unmodified: bool,
    /// Also write the model in ARPA format.
    #[arg(long)]
    arpa: Option<PathBuf>,
    /// Train every n-gram model of an experiment configuration.
    #[arg(long, conflicts_with_all = ["data", "out"])]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainLmArgs {
    #[arg(long, required_unless_present = "config")]
    data: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    #[arg(long, default_value = "lstm")]
    arch: Architecture,
    /// JSON model configuration; flags below override it.
    #[arg(long)]
    lm_config: Option<PathBuf>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embedding: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    context: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    bptt: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    anneal: Option<f64>,
    /// Train in 32-bit floats.
    #[arg(long)]
    f32: bool,
    #[arg(long)]
    max_batches: Option<usize>,
    /// Seconds; checked between epochs.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Train every neural model of an experiment configuration.
    #[arg(long, conflicts_with_all = ["data", "out"])]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "config")]
    model: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    protocol: Option<Protocol>,
    #[arg(long, required_unless_present = "config")]
    data: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    out: Option<PathBuf>,
    #[arg(long, default_value = "perplexity")]
    metric: Metric,
    /// Training partition for the SLOR unigram model.
    #[arg(long)]
    unigram_train: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long, default_value = "teacher-forced", value_parser = parse_decoding)]
    decoding: Decoding,
    /// Leave `<eos>` predictions out of corpus perplexity.
    #[arg(long)]
    no_eos: bool,
    /// Run every evaluation of an experiment configuration.
    #[arg(long, conflicts_with_all = ["model", "data", "out"])]
    config: Option<PathBuf>,
    #[arg(long)]
    allow_partial: bool,
}

fn parse_decoding(s: &str) -> Result<Decoding, String> {
    match s {
        "teacher-forced" => Ok(Decoding::TeacherForced),
        "free" => Ok(Decoding::Free),
        _ => Err(format!("unknown decoding `{s}` (teacher-forced or free)")),
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Space-separated prefix tokens.
    #[arg(long, default_value = "")]
    prefix: String,
    #[arg(long, default_value_t = 30)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// 0 selects greedy decoding.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, required_unless_present = "config")]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    allow_partial: bool,
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Preprocess(a) => preprocess(a),
        Command::TrainNgram(a) => train_ngram(a),
        Command::TrainLm(a) => train_neural(a),
        Command::Eval(a) => eval(a),
        Command::GenerateText(a) => generate(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let grammar_name = a.grammar.clone().unwrap_or_else(|| a.kind.default_grammar().to_string());
    let grammar = datasets::load_grammar(&grammar_name).map_err(user)?;
    let count = usize::try_from(a.count).map_err(user)?;
    let mut files: Vec<(String, String)> = Vec::new();
    let items;
    match a.kind {
        DatasetKind::SixTuple => {
            let tuples = datasets::six_tuples(&grammar, count, a.seed, a.max_depth).map_err(user)?;
            items = tuples.len();
            let body: String = tuples.iter().map(|t| format_six_tuple(&t.declarative, &t.candidates)).collect();
            files.push(("six_tuples.tsv".into(), body));
        }
        DatasetKind::MoveOne => {
            let pairs = datasets::move_one_pairs(&grammar, count, a.seed, a.max_depth).map_err(user)?;
            items = pairs.len();
            files.push(("move_one.tsv".into(), scoring::format_minimal_pairs(&pairs)));
        }
        DatasetKind::PairsEq | DatasetKind::PairsNeq => {
            let distinct = a.kind == DatasetKind::PairsNeq;
            let (pairs, auxes) =
                datasets::question_pairs(&grammar, count, a.seed, a.max_depth, distinct).map_err(user)?;
            items = pairs.len();
            files.push(("pairs.txt".into(), qfeval::format_pairs(&pairs)));
            files.push(("annotations.jsonl".into(), qfeval::annotations_jsonl(&auxes)));
        }
        DatasetKind::Corpus => {
            let docs =
                datasets::pair_corpus(&grammar, count, a.max_tokens, a.seed, a.max_depth, a.layout, a.doc_size)
                    .map_err(user)?;
            items = docs.iter().map(|d| d.utterances.len()).sum();
            for d in &docs {
                let body: String = d.utterances.iter().map(|u| u.join(" ") + "\n").collect();
                files.push((format!("corpus/{}", d.id), body));
            }
        }
    }
    for (name, body) in &files {
        report::write(&a.out.join(name), body)?;
    }
    let manifest = DatasetManifest {
        kind: a.kind.to_string(),
        grammar: grammar_name,
        grammar_sha256: grammar.content_hash(),
        seed: a.seed,
        count,
        items,
        files: files
            .iter()
            .map(|(n, b)| (n.clone(), report::sha256_hex(b.as_bytes())))
            .collect(),
    };
    report::write(
        &a.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?,
    )?;
    info!("wrote {items} {} items to {}", a.kind, a.out.display());
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<(), CliError> {
    let ratios = match a.ratios {
        Some(r) => [r[0], r[1], r[2]],
        None => DEFAULT_RATIOS,
    };
    let summary = corpus::preprocess(&a.corpus, &a.out, ratios, a.seed, a.min_count).map_err(user)?;
    report::write(
        &a.out.join("preprocess.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?,
    )?;
    println!(
        "{} documents, vocabulary {}, unk rate train {:.4}",
        summary.documents, summary.vocabulary_size, summary.unk_rate_train
    );
    Ok(())
}

struct Partitions {
    vocab: Vocabulary,
    train: Vec<corpus::Document>,
    valid: Vec<corpus::Document>,
    test: Vec<corpus::Document>,
}

fn load_partitions(dir: &Path) -> Result<Partitions, CliError> {
    let vocab = Vocabulary::load(&dir.join("vocab.tsv")).map_err(user)?;
    let part = |n: &str| read_partition(&dir.join(n)).map_err(user);
    Ok(Partitions {
        vocab,
        train: part("train.txt")?,
        valid: part("valid.txt")?,
        test: part("test.txt")?,
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => {
            std::fs::create_dir_all(d).map_err(|e| user(format!("{}: {e}", d.display())))
        }
        _ => Ok(()),
    }
}

fn fit_ngram(data: &Partitions, config: NGramConfig, out: &Path, arpa: Option<&Path>) -> Result<(), CliError> {
    ensure_parent(out)?;
    let model = NGramModel::train_documents(&data.train, data.vocab.clone(), config).map_err(user)?;
    model.save(out).map_err(user)?;
    if let Some(p) = arpa {
        report::write(p, model.to_arpa())?;
    }
    let metrics = serde_json::json!({
        "order": config.order,
        "modified": config.modified,
        "valid_perplexity": crate::lm::corpus_perplexity(&model, &data.valid, true),
        "test_perplexity": crate::lm::corpus_perplexity(&model, &data.test, true),
    });
    report::write(&with_suffix(out, ".metrics.json"), metrics.to_string())?;
    println!("{metrics}");
    Ok(())
}

fn train_ngram(a: TrainNgramArgs) -> Result<(), CliError> {
    if let Some(cfg_path) = &a.config {
        let cfg = ExperimentConfig::load(cfg_path)?;
        cfg.validate()?;
        let data = load_partitions(&cfg.data_dir)?;
        for m in &cfg.models {
            if let ModelKind::Ngram { order, modified } = m.kind {
                // Estimation is deterministic; every seed gets the same model.
                for &seed in &cfg.seeds {
                    fit_ngram(&data, NGramConfig { order, modified }, &cfg.checkpoint(&m.name, seed), None)?;
                }
            }
        }
        return Ok(());
    }
    let data = load_partitions(a.data.as_deref().expect("required by clap"))?;
    let config = NGramConfig {
        order: a.order,
        modified: !a.unmodified,
    };
    fit_ngram(&data, config, a.out.as_deref().expect("required by clap"), a.arpa.as_deref())
}

fn fit_neural(data: &Partitions, config: &NeuralLMConfig, opts: &TrainOptions, out: &Path) -> Result<(), CliError> {
    let train = data.vocab.encode_documents(&data.train);
    let valid = data.vocab.encode_documents(&data.valid);
    let lm = train_lm(config, &data.vocab, &train, &valid, opts)?;
    ensure_parent(out)?;
    lm.save(out)?;
    report::write(&with_suffix(out, ".log.csv"), lm.training_log_csv())?;
    let test = data.vocab.encode_documents(&data.test);
    if test.len() >= 2 {
        println!("test perplexity {:.4}", lm.evaluate(&test)?);
    }
    Ok(())
}

fn train_neural(a: TrainLmArgs) -> Result<(), CliError> {
    let opts = TrainOptions {
        max_batches_per_epoch: a.max_batches,
        time_limit_secs: a.time_limit,
        target_valid_ppl: None,
    };
    if let Some(cfg_path) = &a.config {
        let cfg = ExperimentConfig::load(cfg_path)?;
        cfg.validate()?;
        let data = load_partitions(&cfg.data_dir)?;
        for m in &cfg.models {
            if let ModelKind::Neural { config } = &m.kind {
                for &seed in &cfg.seeds {
                    let mut c = config.clone();
                    c.seed = seed;
                    info!("training {} seed {seed}", m.name);
                    fit_neural(&data, &c, &opts, &cfg.checkpoint(&m.name, seed))?;
                }
            }
        }
        return Ok(());
    }
    let mut c = match &a.lm_config {
        Some(p) => serde_json::from_slice::<NeuralLMConfig>(&report::read(p)?)
            .map_err(|e| user(format!("{}: {e}", p.display())))?,
        None => NeuralLMConfig::desk(a.arch),
    };
    if a.lm_config.is_some() && c.architecture != a.arch {
        warn!("--arch ignored; the configuration file selects {}", c.architecture);
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { c.$f = v; })* };
    }
    set!(layers, hidden, embedding, heads, context, dropout, lr, batch_size, bptt, clip, seed, epochs, anneal);
    if a.f32 {
        c.precision = Precision::F32;
    }
    c.validate()?;
    let data = load_partitions(a.data.as_deref().expect("required by clap"))?;
    fit_neural(&data, &c, &opts, a.out.as_deref().expect("required by clap"))
}

fn load_model(path: &Path) -> Result<(AnyModel, Vec<u8>), CliError> {
    let bytes = report::read(path)?;
    let model = AnyModel::from_bytes(&bytes, &path.display().to_string()).map_err(user)?;
    Ok((model, bytes))
}

fn write_eval(out_dir: &Path, protocol: Protocol, data: &Path, output: &report::EvalOutput) -> Result<(), CliError> {
    let stem = data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let base = format!("{protocol}-{stem}");
    report::write(&out_dir.join(format!("{base}.report.json")), output.report.to_json())?;
    report::write(&out_dir.join(format!("{base}.report.csv")), output.report.metrics_csv())?;
    for (name, body) in &output.artifacts {
        report::write(&out_dir.join(format!("{base}.{name}")), body)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    if let Some(cfg_path) = &a.config {
        let cfg = ExperimentConfig::load(cfg_path)?;
        cfg.validate()?;
        check_missing(&cfg, a.allow_partial)?;
        for m in &cfg.models {
            for &seed in &cfg.seeds {
                let ckpt = cfg.checkpoint(&m.name, seed);
                if !ckpt.exists() {
                    continue;
                }
                let (model, bytes) = load_model(&ckpt)?;
                for spec in &cfg.evaluations {
                    let out = run_eval(&model, &bytes, spec.protocol, &spec.data, &spec.options)?;
                    write_eval(&cfg.run_dir(&m.name, seed).join("eval"), spec.protocol, &spec.data, &out)?;
                }
            }
        }
        return Ok(());
    }
    let (model, bytes) = load_model(a.model.as_deref().expect("required by clap"))?;
    let options = EvalOptions {
        metric: a.metric,
        unigram_train: a.unigram_train,
        annotations: a.annotations,
        decoding: a.decoding,
        include_eos: !a.no_eos,
    };
    let protocol = a.protocol.expect("required by clap");
    let data = a.data.expect("required by clap");
    let out = run_eval(&model, &bytes, protocol, &data, &options)?;
    write_eval(a.out.as_deref().expect("required by clap"), protocol, &data, &out)?;
    for (k, v) in &out.report.metrics {
        println!("{k}\t{v}");
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let (model, _) = load_model(&a.model)?;
    let prefix_tokens: Vec<&str> = a.prefix.split_whitespace().collect();
    let prefix = model.vocab().encode(&prefix_tokens);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let out = generate_text(&model, &prefix, &mut rng, a.length, a.temperature);
    println!("{}", model.vocab().decode(&out).join(" "));
    Ok(())
}

fn check_missing(cfg: &ExperimentConfig, allow_partial: bool) -> Result<(), CliError> {
    let missing = cfg.missing_checkpoints();
    if missing.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = missing.iter().map(|p| format!("  {}", p.display())).collect();
    if allow_partial {
        warn!("continuing without {} missing checkpoints", missing.len());
        Ok(())
    } else {
        Err(ReportError::Missing(list.join("\n")).into())
    }
}

fn report_cmd(a: ReportArgs) -> Result<(), CliError> {
    let (dir, config_hash, grammar_hashes) = match &a.config {
        Some(p) => {
            let cfg = ExperimentConfig::load(p)?;
            check_missing(&cfg, a.allow_partial)?;
            (cfg.output_dir.clone(), Some(cfg.hash()), cfg.grammar_hashes()?)
        }
        None => (a.run_dir.clone().expect("required by clap"), None, Default::default()),
    };
    let reports = collect_reports(&dir)?;
    if reports.is_empty() {
        return Err(ReportError::NoReports(dir.display().to_string()).into());
    }
    let mut grammar_hashes = grammar_hashes;
    for (_, r) in &reports {
        grammar_hashes.extend(r.grammar_hashes.clone());
    }
    let agg = AggregateReport::new(aggregate(&reports), config_hash, grammar_hashes);
    report::write(&a.out.join("aggregate.json"), agg.to_json())?;
    report::write(&a.out.join("aggregate.csv"), agg.to_csv())?;
    println!("aggregated {} reports into {} rows", reports.len(), agg.rows.len());
    Ok(())
}
