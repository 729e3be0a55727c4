mod common;

use std::collections::HashMap;

use auxinv::corpus::Vocabulary;
use auxinv::datasets;
use auxinv::ngram::{NGramConfig, NGramModel};
use auxinv::qfeval::*;
use auxinv::transform::{AuxLexicon, PairExample};
use common::{toks, FnModel};

fn pair(s: &str) -> PairExample {
    PairExample::split(&toks(s)).unwrap()
}

fn vocab_of(pairs: &[PairExample]) -> Vocabulary {
    let mut all: Vec<String> = pairs.iter().flat_map(|p| p.concatenated.clone()).collect();
    all.extend(AuxLexicon::standard().tokens().iter().map(|t| t.to_string()));
    Vocabulary::from_tokens(&all)
}

/// Continues any prefix of a stored sequence exactly.
fn memorizer(pairs: &[PairExample]) -> FnModel {
    let vocab = vocab_of(pairs);
    let mut next: HashMap<Vec<String>, String> = HashMap::new();
    for p in pairs {
        for i in 0..p.concatenated.len() {
            next.insert(p.concatenated[..i].to_vec(), p.concatenated[i].clone());
        }
    }
    let v = vocab.clone();
    FnModel::new(vocab, move |prefix| match next.get(prefix) {
        Some(t) => FnModel::peaked(&v, t, 0.01),
        None => vec![1.0 / v.len() as f64; v.len()],
    })
}

/// After the declarative's period, always predicts `token`.
fn constant_after_period(vocab: Vocabulary, rule: impl Fn(&[String]) -> String + 'static) -> FnModel {
    let v = vocab.clone();
    FnModel::new(vocab, move |prefix| {
        if prefix.last().map(String::as_str) == Some(".") {
            FnModel::peaked(&v, &rule(prefix), 0.01)
        } else {
            vec![1.0 / v.len() as f64; v.len()]
        }
    })
}

#[test]
fn example_nine_classification() {
    let lex = AuxLexicon::standard();
    let a = AuxPair {
        first: "is".into(),
        main: "can".into(),
    };
    let (c, id) = classify_first_word(&a, "can", &lex);
    assert_eq!((c.linear, c.hierarchical), (false, true));
    assert_eq!((c.label(), id.as_str()), ("hierarchical_only", "can"));
    let (c, _) = classify_first_word(&a, "is", &lex);
    assert_eq!(c.label(), "linear_only");
    let (c, id) = classify_first_word(&a, "did", &lex);
    assert_eq!((c.label(), id.as_str()), ("neither", "did"));
    let (c, id) = classify_first_word(&a, "boy", &lex);
    assert_eq!((c.label(), id.as_str()), ("neither", "other"));
    let same = AuxPair {
        first: "can".into(),
        main: "can".into(),
    };
    assert_eq!(classify_first_word(&same, "can", &lex).0.label(), "both");
}

#[test]
fn memorized_pairs_are_fully_correct() {
    let g = auxinv::grammar::bundled_grammar("first_neq_main").unwrap();
    let (pairs, auxes) = datasets::question_pairs(&g, 10, 4, datasets::DEFAULT_MAX_DEPTH, true).unwrap();
    let m = memorizer(&pairs);
    let lex = AuxLexicon::standard();
    let (s, js) = evaluate_pairs(&m, &pairs, Some(&auxes), &lex, Decoding::TeacherForced).unwrap();
    assert_eq!(s.first_word_accuracy, 1.0);
    assert_eq!(s.full_question_accuracy, 1.0);
    assert_eq!(s.hierarchical_rate, 1.0);
    assert_eq!(s.linear_rate, 0.0);
    assert!(js.iter().all(|j| j.predicted_question == j.gold_question));
    let (free, _) = evaluate_pairs(&m, &pairs, Some(&auxes), &lex, Decoding::Free).unwrap();
    assert_eq!(free.full_question_accuracy, 1.0);
}

#[test]
fn constant_model_on_matching_gold() {
    let pairs = vec![
        pair("you can spell your name . can you spell your name ?"),
        pair("the boy who is playing can try . can the boy who is playing try ?"),
        pair("she can sing . can she sing ?"),
    ];
    let m = constant_after_period(vocab_of(&pairs), |_| "can".into());
    let lex = AuxLexicon::standard();
    let (s, js) = evaluate_pairs(&m, &pairs, None, &lex, Decoding::TeacherForced).unwrap();
    assert_eq!(s.first_word_accuracy, 1.0);
    assert!(s.full_question_accuracy <= s.first_word_accuracy);
    assert!(js.iter().all(|j| j.chosen_aux == "can"));
}

#[test]
fn lexical_substitution_breaks_full_match_only() {
    let train = vec![toks("the child did learn . did the child learn ?")];
    let vocab = Vocabulary::build(train.iter().map(Vec::as_slice), 1);
    let m = NGramModel::train(&train, vocab, NGramConfig { order: 4, modified: true }).unwrap();
    let lex = AuxLexicon::standard();
    let seen = judge_pair(&m, &pair(&train[0].join(" ")), None, &lex, Decoding::TeacherForced, 0).unwrap();
    assert!(seen.first_word_correct && seen.full_correct);
    let p = pair("the baby did learn . did the baby learn ?");
    let j = judge_pair(&m, &p, None, &lex, Decoding::TeacherForced, 0).unwrap();
    assert!(j.first_word_correct);
    assert!(!j.full_correct);
}

#[test]
fn malformed_pairs_are_rejected() {
    let lex = AuxLexicon::standard();
    let m = constant_after_period(Vocabulary::from_tokens(&["a", "."]), |_| "a".into());
    let no_period = PairExample::new(toks("a a"), toks("a ?"));
    assert!(matches!(
        judge_pair(&m, &no_period, None, &lex, Decoding::TeacherForced, 3),
        Err(QfError::Format { index: 3, .. })
    ));
    let empty = PairExample::new(toks("a ."), vec![]);
    assert!(judge_pair(&m, &empty, None, &lex, Decoding::TeacherForced, 0).is_err());
    assert!(parse_pairs("a b c\n").is_err());
    assert!(parse_pairs("a b .\n").is_err());
    let one = vec![pair("a . a ?")];
    let auxes = vec![];
    assert!(matches!(
        evaluate_pairs(&m, &one, Some(&auxes), &lex, Decoding::TeacherForced),
        Err(QfError::AnnotationCount(0, 1))
    ));
}

#[test]
fn always_first_aux_fills_first_column() {
    let g = auxinv::grammar::bundled_grammar("first_neq_main").unwrap();
    let (pairs, auxes) = datasets::question_pairs(&g, 200, 8, datasets::DEFAULT_MAX_DEPTH, true).unwrap();
    let lex = AuxLexicon::standard();
    let lex2 = lex.clone();
    let m = constant_after_period(vocab_of(&pairs), move |p| {
        p.iter().find(|t| lex2.contains(t)).cloned().unwrap()
    });
    let (s, js) = evaluate_pairs(&m, &pairs, Some(&auxes), &lex, Decoding::TeacherForced).unwrap();
    assert_eq!(s.linear_rate, 1.0);
    assert_eq!(s.consistency["linear_only"], 1.0);
    let rows = lexical_breakdown(&js);
    assert!(!rows.is_empty());
    for r in &rows {
        assert_eq!((r.p_first, r.p_main, r.p_other), (1.0, 0.0, 0.0));
        assert!((r.p_aux_x + r.p_aux_y - 1.0).abs() < 1e-12);
    }
    assert_eq!(rows.iter().map(|r| r.n).sum::<usize>(), 200);
    let csv = breakdown_csv(&rows);
    assert!(csv.starts_with("pair,n,p_first,p_main,p_auxX,p_auxY,p_other\n"));
    assert_eq!(csv.lines().count(), rows.len() + 1);
}

#[test]
fn preference_for_one_auxiliary_is_position_independent() {
    let pairs = vec![
        pair("the boy who is playing can try . can the boy who is playing try ?"),
        pair("the boy who can try is playing . is the boy who can try playing ?"),
        pair("the dog who is eating can sing . can the dog who is eating sing ?"),
        pair("the dog who can sing is eating . is the dog who can sing eating ?"),
    ];
    let lex = AuxLexicon::standard();
    let auxes: Vec<AuxPair> = pairs.iter().map(|p| AuxPair::infer(p, &lex).unwrap()).collect();
    assert_eq!(auxes[0].first, "is");
    assert_eq!(auxes[0].main, "can");
    let m = constant_after_period(vocab_of(&pairs), |p| {
        if p.iter().any(|t| t == "can") { "can" } else { "is" }.to_string()
    });
    let (_, js) = evaluate_pairs(&m, &pairs, Some(&auxes), &lex, Decoding::TeacherForced).unwrap();
    let rows = lexical_breakdown(&js);
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!((r.aux_x.as_str(), r.aux_y.as_str(), r.n), ("can", "is", 4));
    assert_eq!((r.p_aux_x, r.p_aux_y), (1.0, 0.0));
    assert_eq!((r.p_first, r.p_main), (0.5, 0.5));
}

#[test]
fn identical_auxiliaries_give_equal_rule_rates() {
    let g = auxinv::grammar::bundled_grammar("first_eq_main").unwrap();
    let (pairs, auxes) = datasets::question_pairs(&g, 100, 2, datasets::DEFAULT_MAX_DEPTH, false).unwrap();
    let docs: Vec<Vec<String>> = pairs.iter().take(50).map(|p| p.concatenated.clone()).collect();
    let vocab = Vocabulary::build(docs.iter().map(Vec::as_slice), 1);
    let m = NGramModel::train(&docs, vocab, NGramConfig::default()).unwrap();
    let lex = AuxLexicon::standard();
    let (s, _) = evaluate_pairs(&m, &pairs, Some(&auxes), &lex, Decoding::TeacherForced).unwrap();
    assert!(auxes.iter().all(|a| a.first == a.main));
    assert_eq!(s.linear_rate.to_bits(), s.hierarchical_rate.to_bits());
    assert!(s.first_word_accuracy >= s.full_question_accuracy);
}

#[test]
fn sidecar_and_pair_files_round_trip() {
    let g = auxinv::grammar::bundled_grammar("first_neq_main").unwrap();
    let (pairs, auxes) = datasets::question_pairs(&g, 20, 1, datasets::DEFAULT_MAX_DEPTH, true).unwrap();
    assert_eq!(parse_pairs(&format_pairs(&pairs)).unwrap(), pairs);
    assert_eq!(parse_annotations(&annotations_jsonl(&auxes)).unwrap(), auxes);
    assert!(matches!(
        parse_annotations("{\"first\": \"is\"}\n"),
        Err(QfError::Annotation { line: 1, .. })
    ));
    let m = memorizer(&pairs);
    let (s, js) =
        evaluate_pairs(&m, &pairs, Some(&auxes), &AuxLexicon::standard(), Decoding::TeacherForced).unwrap();
    assert_eq!(judgments_jsonl(&js).lines().count(), 20);
    let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
    assert_eq!(v["items"], 20);
    assert_eq!(s.to_csv().lines().count(), 8);
}
