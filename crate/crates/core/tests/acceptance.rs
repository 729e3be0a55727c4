//! Acceptance run: one PASS/FAIL/SKIP line per criterion.
//!
//! Slow criteria can be skipped with `AUXINV_ACCEPTANCE_SKIP=6,7`. The
//! optional full-corpus check runs when `AUXINV_FULL_CORPUS` names a
//! preprocessed directory (train.txt, valid.txt, test.txt, vocab.tsv).

mod common;

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use auxinv::cli::run_from;
use auxinv::corpus::{read_partition, Vocabulary, EOS};
use auxinv::datasets::{self, CorpusLayout, DEFAULT_MAX_DEPTH};
use auxinv::grammar::{bundled_grammar, enumerate_language, generate, recognize, Sampler, DEFAULT_ENUMERATION_CAP};
use auxinv::lm::{corpus_perplexity, LanguageModel};
use auxinv::neural::{train_lm, Architecture, Graph, NeuralLMConfig, Network, Precision, TrainOptions, Var};
use auxinv::ngram::{NGramConfig, NGramModel};
use auxinv::transform::{
    build_six_tuple, find_auxiliaries, format_six_tuple, hierarchical_question, linear_question, make_pair,
    parse_six_tuples, AnnotatedSentence, AuxLexicon, AuxRole, Deletion,
};
use common::{KnOracle, MarkovSource, BOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances.
const GOLDEN_MAX_SECS: f64 = 1.0;
const GRAMMAR_MAX_SECS: f64 = 120.0;
const GRAMMAR_SAMPLES: usize = 10_000;
const DISAMBIGUATION_SAMPLES: usize = 10_000;
const KN_TOL: f64 = 1e-9;
const KN_CONTEXTS: usize = 100;
const FD_TOL: f64 = 1e-3;
const FD_EPS: f64 = 1e-5;
const ENTROPY_SLACK: f64 = 0.10;
const TRAIN_MAX_SECS: f64 = 15.0 * 60.0;
const ZERO_ENTROPY_TOL: f64 = 0.01;
const DESK_TOKENS: usize = 500_000;
const PROPORTION_TOL: f64 = 1e-9;
const DIAGNOSTIC_MIN: f64 = 0.90;
const FULL_PPL_RANGE: (f64, f64) = (20.0, 30.0);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

// 1. Golden strings.

fn golden() -> Verdict {
    let t0 = Instant::now();
    let lex = AuxLexicon::standard();
    let six = AnnotatedSentence::from_indices(&toks("the dog who has seen a boy did try ."), 3, 7, &lex).unwrap();
    let want = [
        "has the dog who seen a boy did try ?",
        "has the dog who has seen a boy try ?",
        "has the dog who has seen a boy did try ?",
        "did the dog who seen a boy did try ?",
        "did the dog who has seen a boy try ?",
        "did the dog who has seen a boy did try ?",
    ];
    let got: Vec<String> = build_six_tuple(&six).unwrap().iter().map(|c| c.tokens.join(" ")).collect();
    let mut bad = Vec::new();
    for (g, w) in got.iter().zip(want) {
        if g != w {
            bad.push(format!("`{g}` != `{w}`"));
        }
    }
    let pairs = [
        ("you can spell your name .", 1, 1, "you can spell your name . can you spell your name ?"),
        ("a boy who is playing can try .", 3, 5, "a boy who is playing can try . can a boy who is playing try ?"),
    ];
    for (decl, f, m, want) in pairs {
        let a = AnnotatedSentence::from_indices(&toks(decl), f, m, &lex).unwrap();
        let got = make_pair(&a).unwrap().concatenated.join(" ");
        if got != want {
            bad.push(format!("`{got}` != `{want}`"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= GOLDEN_MAX_SECS {
        bad.push(format!("took {secs:.3} s"));
    }
    let ok = bad.is_empty();
    verdict(ok, if ok { format!("8 strings exact in {secs:.3} s") } else { bad.join("; ") })
}

// 2. Grammar fidelity.

fn grammar_fidelity() -> Verdict {
    let t0 = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for name in ["prepose_delete", "first_eq_main", "first_neq_main"] {
        let g = bundled_grammar(name).unwrap();
        let samples = generate(&g, 17, GRAMMAR_SAMPLES, DEFAULT_MAX_DEPTH).unwrap();
        let rejected = samples.iter().filter(|(s, _)| recognize(&g, s) == 0).count();
        let r = g.reduce_lexicon(1).unwrap();
        let language = enumerate_language(&r, DEFAULT_MAX_DEPTH, DEFAULT_ENUMERATION_CAP).unwrap();
        // Enough draws that every sentence of the reduced language appears
        // with overwhelming probability.
        let draws = 200 * language.len().max(100);
        let support: BTreeSet<Vec<String>> =
            generate(&r, 5, draws, DEFAULT_MAX_DEPTH).unwrap().into_iter().map(|(s, _)| s).collect();
        let same = support == language;
        ok &= rejected == 0 && same;
        notes.push(format!(
            "{name}: {rejected}/{GRAMMAR_SAMPLES} rejected, reduced support {}/{} {}",
            support.len(),
            language.len(),
            if same { "equal" } else { "DIFFERENT" }
        ));
    }
    let secs = t0.elapsed().as_secs_f64();
    ok &= secs < GRAMMAR_MAX_SECS;
    notes.push(format!("{secs:.1} s"));
    verdict(ok, notes.join("; "))
}

// 3. Disambiguation.

fn disambiguation() -> Verdict {
    let neq = bundled_grammar("first_neq_main").unwrap();
    let mut sampler = Sampler::new(&neq, 23, DEFAULT_MAX_DEPTH).unwrap();
    let (mut n, mut differ, mut same_token) = (0, 0, 0);
    while n < DISAMBIGUATION_SAMPLES {
        let (_, d) = sampler.sample();
        let a = find_auxiliaries(&neq, &d).unwrap();
        if a.first_aux() == a.main_aux() {
            // Same surface token in both positions: routed to Move-One.
            same_token += 1;
            continue;
        }
        n += 1;
        if hierarchical_question(&a).unwrap()[0] != linear_question(&a).unwrap()[0] {
            differ += 1;
        }
    }
    let eq = bundled_grammar("first_eq_main").unwrap();
    let identical = generate(&eq, 29, DISAMBIGUATION_SAMPLES, DEFAULT_MAX_DEPTH)
        .unwrap()
        .iter()
        .filter(|(_, d)| {
            let a = find_auxiliaries(&eq, d).unwrap();
            hierarchical_question(&a).unwrap() == linear_question(&a).unwrap()
        })
        .count();
    verdict(
        differ == n && identical == DISAMBIGUATION_SAMPLES,
        format!(
            "first!=main: token 0 differs on {differ}/{n} ({same_token} same-token draws set aside); \
             first=main: identical on {identical}/{DISAMBIGUATION_SAMPLES}"
        ),
    )
}

// 4. Kneser-Ney oracle equivalence.

fn kn_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for trial in 0..5 {
        let types = ["a", "b", "c", "d", "e", "f", "g"];
        let mut sents: Vec<Vec<String>> = Vec::new();
        let mut n = 0;
        loop {
            let len = rng.gen_range(1..8);
            if n + len + 1 > 200 {
                break;
            }
            n += len + 1;
            sents.push((0..len).map(|_| types[rng.gen_range(0..types.len())].to_string()).collect());
        }
        let order = 1 + trial % 3;
        let modified = trial % 2 == 0;
        let vocab = Vocabulary::build(sents.iter().map(Vec::as_slice), 1);
        let oracle = KnOracle::new(&sents, vocab.tokens(), Some(EOS), order, modified);
        let model = NGramModel::train(&sents, vocab, NGramConfig { order, modified }).unwrap();
        let kn = model.estimator();
        let mut histories = oracle.histories();
        histories.push(vec![BOS.to_string()]);
        for h in histories {
            let ids: Vec<u32> = h
                .iter()
                .map(|t| if t == BOS { kn.bos() } else { model.vocab().id(t).unwrap() })
                .collect();
            for (w, tok) in model.vocab().tokens().iter().enumerate() {
                worst = worst.max((kn.prob(&ids, w as u32) - oracle.prob(&h, tok)).abs());
                checked += 1;
            }
        }
    }

    let g = bundled_grammar("prepose_delete").unwrap();
    let docs = datasets::pair_corpus(&g, usize::MAX, Some(DESK_TOKENS), 3, DEFAULT_MAX_DEPTH, CorpusLayout::Pairs, 100)
        .unwrap();
    let vocab = Vocabulary::from_documents(&docs, 1);
    let model = NGramModel::train_documents(&docs, vocab, NGramConfig::default()).unwrap();
    let kn = model.estimator();
    let mut contexts: Vec<Vec<u32>> = (1..=kn.order()).flat_map(|k| kn.contexts(k)).collect();
    let mut pick = ChaCha8Rng::seed_from_u64(43);
    let mut norm_worst: f64 = 0.0;
    for _ in 0..KN_CONTEXTS {
        let h = contexts.swap_remove(pick.gen_range(0..contexts.len()));
        let s: f64 = (0..kn.num_types() as u32).map(|w| kn.prob(&h, w)).sum();
        norm_worst = norm_worst.max((s - 1.0).abs());
    }
    verdict(
        worst <= KN_TOL && norm_worst <= KN_TOL,
        format!(
            "max |model - oracle| = {worst:.2e} over {checked} probabilities; \
             max |sum - 1| = {norm_worst:.2e} over {KN_CONTEXTS} desk contexts"
        ),
    )
}

// 5. Gradient correctness.

fn fd_config(arch: Architecture) -> NeuralLMConfig {
    let mut c = NeuralLMConfig::desk(arch);
    c.layers = 2;
    c.hidden = 8;
    c.embedding = 8;
    c.heads = 2;
    c.context = 8;
    c.dropout = 0.0;
    c.init_range = 0.5;
    c
}

fn model_loss(net: &Network<f64>, seqs: &[Vec<u32>], targets: &[Vec<u32>]) -> (f64, Graph<f64>) {
    let mut g = Graph::new();
    let (out, flat): (Var, Vec<Option<u32>>) = match net.config.architecture {
        Architecture::Lstm => {
            let steps: Vec<Vec<u32>> = (0..seqs[0].len()).map(|t| seqs.iter().map(|s| s[t]).collect()).collect();
            let (o, _) = net.forward_lstm(&mut g, &steps, &net.zero_state(seqs.len()), None).unwrap();
            let flat = (0..seqs[0].len()).flat_map(|t| targets.iter().map(move |s| Some(s[t]))).collect();
            (o, flat)
        }
        Architecture::Transformer => {
            let o = net.forward_transformer(&mut g, seqs, None).unwrap();
            (o, targets.iter().flatten().map(|&t| Some(t)).collect())
        }
    };
    let loss = g.softmax_cross_entropy(out, &flat).unwrap();
    let v = g.value(loss)[[0, 0]];
    g.backward(loss).unwrap();
    (v, g)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn gradients() -> Verdict {
    let seqs = vec![vec![1, 2, 3, 4, 5], vec![3, 0, 5, 2, 1]];
    let targets = vec![vec![2, 3, 4, 5, 1], vec![0, 5, 2, 1, 4]];
    let mut ok = true;
    let mut notes = Vec::new();
    for arch in [Architecture::Lstm, Architecture::Transformer] {
        let mut net = Network::<f64>::new(&fd_config(arch), 6).unwrap();
        let (_, g) = model_loss(&net, &seqs, &targets);
        let grads: Vec<_> = g.param_grads().into_iter().map(|(p, a)| (p, a.clone())).collect();
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for (id, grad) in &grads {
            for j in 0..grad.len() {
                let orig = net.store.value(*id).as_slice().unwrap()[j];
                net.store.value_mut(*id).as_slice_mut().unwrap()[j] = orig + FD_EPS;
                let up = model_loss(&net, &seqs, &targets).0;
                net.store.value_mut(*id).as_slice_mut().unwrap()[j] = orig - FD_EPS;
                let down = model_loss(&net, &seqs, &targets).0;
                net.store.value_mut(*id).as_slice_mut().unwrap()[j] = orig;
                analytic.push(grad.as_slice().unwrap()[j]);
                numeric.push((up - down) / (2.0 * FD_EPS));
            }
        }
        let e = rel_err(&analytic, &numeric);
        let complete = grads.len() == net.store.len();

        let base = vec![1u32, 2, 3, 4, 5, 0, 2, 3];
        let reference = net.logits_batch(std::slice::from_ref(&base)).unwrap();
        let mut leaks = 0;
        for t in 0..base.len() {
            let mut changed = base.clone();
            changed[t] = (changed[t] + 1) % 6;
            let logits = net.logits_batch(&[changed]).unwrap();
            leaks += (0..t).filter(|&p| logits.row(p) != reference.row(p)).count();
        }
        ok &= e < FD_TOL && complete && leaks == 0;
        notes.push(format!(
            "{arch}: rel err {e:.2e} over {} params, {leaks} causality leaks",
            analytic.len()
        ));
    }
    verdict(ok, notes.join("; "))
}

// 6. Trainability.

fn markov_source() -> (MarkovSource, ChaCha8Rng) {
    let n = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let transitions = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(4)).collect();
            let z: f64 = w.iter().sum();
            w.iter().map(|x| x / z).collect()
        })
        .collect();
    (MarkovSource { transitions }, rng)
}

fn markov_stream(src: &MarkovSource, len: usize, rng: &mut ChaCha8Rng, state: &mut usize) -> Vec<u32> {
    let n = src.transitions.len();
    (0..len)
        .map(|_| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut next = n - 1;
            for (j, p) in src.transitions[*state].iter().enumerate() {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            *state = next;
            // Ids 0 and 1 are `<unk>` and `<eos>`.
            (next + 2) as u32
        })
        .collect()
}

fn trainability() -> Verdict {
    let (src, mut rng) = markov_source();
    let h = src.entropy_rate();
    let target = (1.0 + ENTROPY_SLACK) * h.exp();
    let names: Vec<String> = (0..src.transitions.len()).map(|i| format!("s{i}")).collect();
    let vocab = Vocabulary::from_tokens(&names);
    let mut state = 0;
    let train = markov_stream(&src, DESK_TOKENS, &mut rng, &mut state);
    let valid = markov_stream(&src, 20_000, &mut rng, &mut state);
    let mut ok = true;
    let mut notes = vec![format!("exp(H) = {:.4}, target <= {target:.4}", h.exp())];
    for (arch, epochs) in [(Architecture::Lstm, 8), (Architecture::Transformer, 6)] {
        let mut cfg = NeuralLMConfig::desk(arch);
        cfg.precision = Precision::F32;
        cfg.epochs = epochs;
        let opts = TrainOptions {
            target_valid_ppl: Some(target),
            time_limit_secs: Some(TRAIN_MAX_SECS - 60.0),
            ..Default::default()
        };
        let t0 = Instant::now();
        let lm = train_lm(&cfg, &vocab, &train, &valid, &opts).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        let ppl = lm.evaluate(&valid).unwrap();
        ok &= ppl <= target && secs < TRAIN_MAX_SECS;
        notes.push(format!("{arch}: valid ppl {ppl:.4} after {} epochs in {secs:.0} s", lm.log.len()));
    }

    let abc = Vocabulary::from_tokens(&["a", "b", "c"]);
    let unit = abc.encode(&["a", "b", "c", EOS]);
    let cycle = |n: usize| -> Vec<u32> { unit.iter().copied().cycle().take(4 * n).collect() };
    let (train, valid) = (cycle(1000), cycle(50));
    for arch in [Architecture::Lstm, Architecture::Transformer] {
        let mut cfg = NeuralLMConfig::desk(arch);
        cfg.epochs = 50;
        let opts = TrainOptions {
            target_valid_ppl: Some(1.0 + ZERO_ENTROPY_TOL),
            ..Default::default()
        };
        let lm = train_lm(&cfg, &abc, &train, &valid, &opts).unwrap();
        let ppl = lm.evaluate(&valid).unwrap();
        ok &= (ppl - 1.0).abs() <= ZERO_ENTROPY_TOL;
        notes.push(format!("{arch} zero-entropy ppl {ppl:.4}"));
    }
    verdict(ok, notes.join("; "))
}

// 7. End-to-end pipeline.

fn cli(args: &[&str]) -> Result<(), String> {
    let mut v = vec!["auxinv"];
    v.extend_from_slice(args);
    match run_from(&v) {
        0 => Ok(()),
        code => Err(format!("`{}` exited {code}", args.join(" "))),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

struct E2e {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

const MODELS: [&str; 3] = ["kn5", "lstm", "transformer"];

fn end_to_end() -> (Verdict, Option<E2e>) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let t0 = Instant::now();
    let run = || -> Result<(), String> {
        let tokens = DESK_TOKENS.to_string();
        cli(&["gen-data", "--kind", "corpus", "--count", "1000000", "--max-tokens", &tokens, "--seed", "1", "--out",
            s(&root.join("raw"))])?;
        cli(&["preprocess", "--corpus", s(&root.join("raw/corpus")), "--out", s(&root.join("data")), "--seed", "1"])?;
        let data = root.join("data");
        cli(&["train-ngram", "--data", s(&data), "--out", s(&root.join("kn5.bin")), "--order", "5"])?;
        for arch in ["lstm", "transformer"] {
            cli(&["train-lm", "--data", s(&data), "--out", s(&root.join(format!("{arch}.bin"))), "--arch", arch,
                "--epochs", "1", "--f32"])?;
        }
        for (kind, n) in [("six-tuple", "1000"), ("move-one", "500"), ("pairs-neq", "500"), ("pairs-eq", "500")] {
            cli(&["gen-data", "--kind", kind, "--count", n, "--seed", "2", "--out", s(&root.join(kind))])?;
        }
        for m in MODELS {
            let model = root.join(format!("{m}.bin"));
            let out = |sub: &str| root.join("eval").join(m).join(sub);
            let evals: [(&str, PathBuf, Vec<String>, PathBuf); 5] = [
                ("perplexity", data.join("test.txt"), vec![], out("ppl")),
                ("six-way", root.join("six-tuple/six_tuples.tsv"), vec![], out("six")),
                ("minimal-pairs", root.join("move-one/move_one.tsv"), vec![], out("move")),
                (
                    "question-formation",
                    root.join("pairs-neq/pairs.txt"),
                    vec!["--annotations".into(), s(&root.join("pairs-neq/annotations.jsonl")).into()],
                    out("neq"),
                ),
                (
                    "question-formation",
                    root.join("pairs-eq/pairs.txt"),
                    vec!["--annotations".into(), s(&root.join("pairs-eq/annotations.jsonl")).into()],
                    out("eq"),
                ),
            ];
            for (protocol, data, extra, out) in &evals {
                let mut args = vec!["eval", "--model", s(&model), "--protocol", protocol, "--data", s(data), "--out", s(out)];
                args.extend(extra.iter().map(String::as_str));
                cli(&args)?;
            }
        }
        cli(&["report", "--run-dir", s(&root.join("eval")), "--out", s(&root.join("report"))])
    };
    if let Err(e) = run() {
        return (verdict(false, e), None);
    }

    let mut ok = true;
    let mut notes = Vec::new();
    for m in MODELS {
        let six = json(&root.join("eval").join(m).join("six/six-way-six_tuples.six_way.json"));
        let sum: f64 = six["proportions"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        let neq = json(&root.join("eval").join(m).join("neq/question-formation-pairs.qf_summary.json"));
        let eq = json(&root.join("eval").join(m).join("eq/question-formation-pairs.qf_summary.json"));
        let ordered = [&neq, &eq].iter().all(|q| {
            q["first_word_accuracy"].as_f64().unwrap() >= q["full_question_accuracy"].as_f64().unwrap()
        });
        // Equal to the last digit: compare the serialized numbers.
        let equal = eq["linear_rate"] == eq["hierarchical_rate"];
        let ppl = json(&root.join("eval").join(m).join("ppl/perplexity-test.report.json"));
        ok &= (sum - 1.0).abs() <= PROPORTION_TOL && ordered && equal;
        notes.push(format!(
            "{m}: test ppl {:.3}, six-way sum {sum:.12}, first-word {:.3} >= full {:.3}, eq rates {}/{}",
            ppl["metrics"]["perplexity"].as_f64().unwrap_or(f64::NAN),
            neq["first_word_accuracy"].as_f64().unwrap(),
            neq["full_question_accuracy"].as_f64().unwrap(),
            eq["linear_rate"],
            eq["hierarchical_rate"],
        ));
    }
    ok &= root.join("report/aggregate.json").exists() && root.join("report/aggregate.csv").exists();
    notes.push(format!("{:.0} s", t0.elapsed().as_secs_f64()));
    (verdict(ok, notes.join("; ")), Some(E2e { _dir: dir, root }))
}

// 8. Diagnostic.

fn diagnostic(e2e: &E2e) -> Verdict {
    let root = &e2e.root;
    let run = || -> Result<(), String> {
        let tokens = DESK_TOKENS.to_string();
        cli(&["gen-data", "--kind", "corpus", "--layout", "questions", "--count", "1000000", "--max-tokens", &tokens,
            "--seed", "1", "--out", s(&root.join("qraw"))])?;
        cli(&["preprocess", "--corpus", s(&root.join("qraw/corpus")), "--out", s(&root.join("qdata")), "--seed", "1"])?;
        cli(&["train-ngram", "--data", s(&root.join("qdata")), "--out", s(&root.join("q5.bin")), "--order", "5"])
    };
    if let Err(e) = run() {
        return verdict(false, e);
    }
    let mut seen = HashSet::new();
    for part in ["train.txt", "valid.txt", "test.txt"] {
        for d in read_partition(&root.join("qdata").join(part)).unwrap() {
            seen.extend(d.utterances);
        }
    }
    let tuples = parse_six_tuples(&fs::read_to_string(root.join("six-tuple/six_tuples.tsv")).unwrap()).unwrap();
    let held: String = tuples
        .iter()
        .filter(|t| {
            let gold = t.candidates.iter().find(|c| (c.prepose, c.delete) == (AuxRole::Main, Deletion::Main));
            !seen.contains(&gold.unwrap().tokens)
        })
        .map(|t| format_six_tuple(&t.declarative, &t.candidates))
        .collect();
    let held_path = root.join("held/six_tuples.tsv");
    fs::create_dir_all(held_path.parent().unwrap()).unwrap();
    fs::write(&held_path, &held).unwrap();
    let out = root.join("eval/q5");
    if let Err(e) = cli(&["eval", "--model", s(&root.join("q5.bin")), "--protocol", "six-way", "--data",
        s(&held_path), "--out", s(&out)])
    {
        return verdict(false, e);
    }
    let r = json(&out.join("six-way-six_tuples.six_way.json"));
    let p: Vec<f64> = r["proportions"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let items = r["items"].as_u64().unwrap();
    // Report order: (F,F) (F,M) (F,N) (M,F) (M,M) (M,N).
    verdict(
        p[4] > DIAGNOSTIC_MIN,
        format!(
            "(PM,DM) chosen on {:.3} of {items} held-out tuples (need > {DIAGNOSTIC_MIN}); \
             (PF,DM) {:.3}, others {:.3}",
            p[4],
            p[1],
            1.0 - p[4] - p[1]
        ),
    )
}

// 9. Optional full-data check.

fn full_corpus(dir: &Path) -> Verdict {
    let vocab = Vocabulary::load(&dir.join("vocab.tsv")).unwrap();
    let train = read_partition(&dir.join("train.txt")).unwrap();
    let test = read_partition(&dir.join("test.txt")).unwrap();
    let model = NGramModel::train_documents(&train, vocab, NGramConfig { order: 5, modified: true }).unwrap();
    let ppl = corpus_perplexity(&model, &test, true);
    verdict(
        (FULL_PPL_RANGE.0..=FULL_PPL_RANGE.1).contains(&ppl),
        format!("5-gram test perplexity {ppl:.2}, accepted range [{}, {}]", FULL_PPL_RANGE.0, FULL_PPL_RANGE.1),
    )
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())
    })
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let skip: HashSet<u32> = std::env::var("AUXINV_ACCEPTANCE_SKIP")
        .unwrap_or_default()
        .split(',')
        .filter_map(|x| x.trim().parse().ok())
        .collect();
    let mut gating_failures = 0;
    let mut report = |id: u32, name: &str, gating: bool, v: Option<Result<Verdict, String>>| {
        let (tag, detail) = match v {
            None => ("SKIP", "skipped".to_string()),
            Some(Ok(v)) if v.pass => ("PASS", v.detail),
            Some(Ok(v)) => ("FAIL", v.detail),
            Some(Err(e)) => ("FAIL", format!("panicked: {e}")),
        };
        if tag == "FAIL" && gating {
            gating_failures += 1;
        }
        let kind = if gating { "" } else { " (non-gating)" };
        println!("{tag} criterion {id} {name}{kind}: {detail}");
    };
    let run = |id: u32, f: fn() -> Verdict| if skip.contains(&id) { None } else { Some(guarded(f)) };

    report(1, "golden strings", true, run(1, golden));
    report(2, "grammar fidelity", true, run(2, grammar_fidelity));
    report(3, "disambiguation", true, run(3, disambiguation));
    report(4, "Kneser-Ney oracle", true, run(4, kn_oracle));
    report(5, "gradient correctness", true, run(5, gradients));
    report(6, "trainability", true, run(6, trainability));
    let e2e = if skip.contains(&7) { None } else { Some(guarded(end_to_end)) };
    let state = match e2e {
        None => {
            report(7, "end-to-end pipeline", true, None);
            None
        }
        Some(Ok((v, state))) => {
            report(7, "end-to-end pipeline", true, Some(Ok(v)));
            state
        }
        Some(Err(e)) => {
            report(7, "end-to-end pipeline", true, Some(Err(e)));
            None
        }
    };
    let diag = match (&state, skip.contains(&8)) {
        (Some(st), false) => Some(guarded(|| diagnostic(st))),
        (None, false) if !skip.contains(&7) => Some(Ok(verdict(false, "needs the end-to-end run"))),
        _ => None,
    };
    report(8, "hierarchical preference diagnostic", false, diag);
    let full = std::env::var_os("AUXINV_FULL_CORPUS").map(PathBuf::from);
    match full {
        Some(dir) if !skip.contains(&9) => report(9, "full-corpus 5-gram perplexity", false, Some(guarded(|| full_corpus(&dir)))),
        _ => report(9, "full-corpus 5-gram perplexity", false, None),
    }
    drop(state);
    if gating_failures > 0 {
        std::process::exit(1);
    }
}
