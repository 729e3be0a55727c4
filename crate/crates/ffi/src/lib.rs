//! C ABI over the grammar, transform and language-model layers.
//!
//! Every fallible call returns an [`AuxinvStatus`] and writes its result
//! through an out-pointer. On failure a message is kept per thread and can be
//! fetched with [`auxinv_last_error`]. Strings returned to the caller are
//! owned by the caller and must be released with [`auxinv_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use auxinv::grammar::{recognize, Grammar, Sampler};
use auxinv::lm::{AnyModel, LanguageModel};
use auxinv::scoring;
use auxinv::transform::{build_six_tuple, format_six_tuple, hierarchical_question, linear_question};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxinvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Internal = 6,
}

/// Which question-formation rule to apply.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxinvRule {
    /// Front the main-clause auxiliary.
    Hierarchical = 0,
    /// Front the linearly first auxiliary.
    Linear = 1,
}

/// A parsed context-free grammar.
pub struct AuxinvGrammar {
    inner: Grammar,
}

/// An n-gram model or neural checkpoint.
pub struct AuxinvModel {
    inner: AnyModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AuxinvStatus, String);

type Outcome<T> = Result<T, Failure>;

fn fail<T>(status: AuxinvStatus, msg: impl ToString) -> Outcome<T> {
    Err(Failure(status, msg.to_string()))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome<()>) -> AuxinvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AuxinvStatus::Ok,
        Ok(Err(Failure(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            AuxinvStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Outcome<&'a str> {
    if p.is_null() {
        return fail(AuxinvStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(AuxinvStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Outcome<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(AuxinvStatus::NullPointer, format!("{name} is null")))
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Message of the last failed call on this thread, or null. The caller owns
/// the returned string.
#[no_mangle]
pub extern "C" fn auxinv_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn auxinv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn auxinv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a bundled grammar by name (`prepose_delete`, `first_eq_main`,
/// `first_neq_main`) or a grammar file by path.
///
/// # Safety
/// `name_or_path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auxinv_grammar_load(name_or_path: *const c_char, out: *mut *mut AuxinvGrammar) -> AuxinvStatus {
    guard(|| {
        let name = str_arg(name_or_path, "name_or_path")?;
        let out = out_arg(out, "out")?;
        let g = auxinv::datasets::load_grammar(name).or_else(|e| fail(AuxinvStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(AuxinvGrammar { inner: g }));
        Ok(())
    })
}

/// # Safety
/// `g` must come from [`auxinv_grammar_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn auxinv_grammar_free(g: *mut AuxinvGrammar) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Samples `count` sentences, one per line, without final periods.
///
/// # Safety
/// `g` must be a live grammar handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auxinv_grammar_sample(
    g: *const AuxinvGrammar,
    seed: u64,
    count: usize,
    max_depth: usize,
    out: *mut *mut c_char,
) -> AuxinvStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| Failure(AuxinvStatus::NullPointer, "grammar is null".into()))?;
        let out = out_arg(out, "out")?;
        let mut s = Sampler::new(&g.inner, seed, max_depth).or_else(|e| fail(AuxinvStatus::InvalidArgument, e))?;
        let text: String = (0..count).map(|_| s.sample().0.join(" ") + "\n").collect();
        *out = to_c(text);
        Ok(())
    })
}

/// Number of derivations of a space-separated sentence (0 if rejected).
/// Grammar sentences carry no final period.
///
/// # Safety
/// `g` must be a live grammar handle, `sentence` a valid C string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auxinv_grammar_recognize(
    g: *const AuxinvGrammar,
    sentence: *const c_char,
    out: *mut u64,
) -> AuxinvStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| Failure(AuxinvStatus::NullPointer, "grammar is null".into()))?;
        let s = str_arg(sentence, "sentence")?;
        let out = out_arg(out, "out")?;
        *out = recognize(&g.inner, &tokens(s));
        Ok(())
    })
}

unsafe fn annotate(
    g: *const AuxinvGrammar,
    sentence: *const c_char,
) -> Outcome<auxinv::transform::AnnotatedSentence> {
    let g = g.as_ref().ok_or_else(|| Failure(AuxinvStatus::NullPointer, "grammar is null".into()))?;
    let s = str_arg(sentence, "sentence")?;
    auxinv::transform::annotate(&g.inner, &tokens(s)).or_else(|e| fail(AuxinvStatus::InvalidArgument, format!("`{s}`: {e}")))
}

/// Forms the yes/no question of a declarative the grammar generates. The
/// final `.` is optional.
///
/// # Safety
/// `g` must be a live grammar handle, `declarative` a valid C string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auxinv_make_question(
    g: *const AuxinvGrammar,
    declarative: *const c_char,
    rule: AuxinvRule,
    out: *mut *mut c_char,
) -> AuxinvStatus {
    guard(|| {
        let a = annotate(g, declarative)?;
        let out = out_arg(out, "out")?;
        let q = match rule {
            AuxinvRule::Hierarchical => hierarchical_question(&a),
            AuxinvRule::Linear => linear_question(&a),
        }
        .or_else(|e| fail(AuxinvStatus::InvalidArgument, e))?;
        *out = to_c(q.join(" "));
        Ok(())
    })
}

/// The six prepose/delete candidates as TSV lines
/// (`declarative, prepose, delete, question`).
///
/// # Safety
/// As for [`auxinv_make_question`].
#[no_mangle]
pub unsafe extern "C" fn auxinv_six_tuple(
    g: *const AuxinvGrammar,
    declarative: *const c_char,
    out: *mut *mut c_char,
) -> AuxinvStatus {
    guard(|| {
        let a = annotate(g, declarative)?;
        let out = out_arg(out, "out")?;
        let c = build_six_tuple(&a).or_else(|e| fail(AuxinvStatus::InvalidArgument, e))?;
        *out = to_c(format_six_tuple(&a.tokens, &c));
        Ok(())
    })
}

/// Loads an n-gram model or neural checkpoint, detected by its header.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auxinv_model_load(path: *const c_char, out: *mut *mut AuxinvModel) -> AuxinvStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let m = AnyModel::load(Path::new(p)).or_else(|e| {
            let status = match e {
                auxinv::lm::LoadError::Io { .. } => AuxinvStatus::Io,
                _ => AuxinvStatus::Parse,
            };
            fail(status, e)
        })?;
        *out = Box::into_raw(Box::new(AuxinvModel { inner: m }));
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`auxinv_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn auxinv_model_free(m: *mut AuxinvModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Vocabulary size including `<unk>` and `<eos>`; 0 for a null handle.
///
/// # Safety
/// `m` must be a live model handle or null.
#[no_mangle]
pub unsafe extern "C" fn auxinv_model_vocab_size(m: *const AuxinvModel) -> usize {
    m.as_ref().map_or(0, |m| m.inner.vocab().len())
}

unsafe fn score(
    m: *const AuxinvModel,
    sentence: *const c_char,
    out: *mut f64,
    f: impl FnOnce(&AnyModel, &[String]) -> f64,
) -> AuxinvStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| Failure(AuxinvStatus::NullPointer, "model is null".into()))?;
        let s = str_arg(sentence, "sentence")?;
        let out = out_arg(out, "out")?;
        let toks = tokens(s);
        if toks.is_empty() {
            return fail(AuxinvStatus::InvalidArgument, "empty sentence");
        }
        *out = f(&m.inner, &toks);
        Ok(())
    })
}

/// Natural-log probability of a sentence from a fresh context, without `<eos>`.
///
/// # Safety
/// `m` must be a live model handle, `sentence` a valid C string and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auxinv_model_logprob(
    m: *const AuxinvModel,
    sentence: *const c_char,
    out: *mut f64,
) -> AuxinvStatus {
    score(m, sentence, out, scoring::sentence_logprob)
}

/// Per-word perplexity of a sentence.
///
/// # Safety
/// As for [`auxinv_model_logprob`].
#[no_mangle]
pub unsafe extern "C" fn auxinv_model_perplexity(
    m: *const AuxinvModel,
    sentence: *const c_char,
    out: *mut f64,
) -> AuxinvStatus {
    score(m, sentence, out, scoring::per_word_perplexity)
}
