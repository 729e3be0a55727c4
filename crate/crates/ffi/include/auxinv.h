#ifndef AUXINV_H
#define AUXINV_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which question-formation rule to apply.
typedef enum AuxinvRule {
  // Front the main-clause auxiliary.
  AUXINV_RULE_HIERARCHICAL = 0,
  // Front the linearly first auxiliary.
  AUXINV_RULE_LINEAR = 1,
} AuxinvRule;

// Result code of every fallible call.
typedef enum AuxinvStatus {
  AUXINV_STATUS_OK = 0,
  AUXINV_STATUS_NULL_POINTER = 1,
  AUXINV_STATUS_INVALID_UTF8 = 2,
  AUXINV_STATUS_INVALID_ARGUMENT = 3,
  AUXINV_STATUS_IO = 4,
  AUXINV_STATUS_PARSE = 5,
  AUXINV_STATUS_INTERNAL = 6,
} AuxinvStatus;

// A parsed context-free grammar.
typedef struct AuxinvGrammar AuxinvGrammar;

// An n-gram model or neural checkpoint.
typedef struct AuxinvModel AuxinvModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The caller owns
// the returned string.
char *auxinv_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void auxinv_string_free(char *s);

// Library version as a static string.
const char *auxinv_version(void);

// Loads a bundled grammar by name (`prepose_delete`, `first_eq_main`,
// `first_neq_main`) or a grammar file by path.
//
// # Safety
// `name_or_path` must be a valid C string and `out` a valid pointer.
enum AuxinvStatus auxinv_grammar_load(const char *name_or_path, struct AuxinvGrammar **out);

// # Safety
// `g` must come from [`auxinv_grammar_load`] or be null.
void auxinv_grammar_free(struct AuxinvGrammar *g);

// Samples `count` sentences, one per line, without final periods.
//
// # Safety
// `g` must be a live grammar handle and `out` a valid pointer.
enum AuxinvStatus auxinv_grammar_sample(const struct AuxinvGrammar *g,
                                        uint64_t seed,
                                        size_t count,
                                        size_t max_depth,
                                        char **out);

// Number of derivations of a space-separated sentence (0 if rejected).
// Grammar sentences carry no final period.
//
// # Safety
// `g` must be a live grammar handle, `sentence` a valid C string and `out`
// a valid pointer.
enum AuxinvStatus auxinv_grammar_recognize(const struct AuxinvGrammar *g,
                                           const char *sentence,
                                           uint64_t *out);

// Forms the yes/no question of a declarative the grammar generates. The
// final `.` is optional.
//
// # Safety
// `g` must be a live grammar handle, `declarative` a valid C string and
// `out` a valid pointer.
enum AuxinvStatus auxinv_make_question(const struct AuxinvGrammar *g,
                                       const char *declarative,
                                       enum AuxinvRule rule,
                                       char **out);

// The six prepose/delete candidates as TSV lines
// (`declarative, prepose, delete, question`).
//
// # Safety
// As for [`auxinv_make_question`].
enum AuxinvStatus auxinv_six_tuple(const struct AuxinvGrammar *g,
                                   const char *declarative,
                                   char **out);

// Loads an n-gram model or neural checkpoint, detected by its header.
//
// # Safety
// `path` must be a valid C string and `out` a valid pointer.
enum AuxinvStatus auxinv_model_load(const char *path, struct AuxinvModel **out);

// # Safety
// `m` must come from [`auxinv_model_load`] or be null.
void auxinv_model_free(struct AuxinvModel *m);

// Vocabulary size including `<unk>` and `<eos>`; 0 for a null handle.
//
// # Safety
// `m` must be a live model handle or null.
size_t auxinv_model_vocab_size(const struct AuxinvModel *m);

// Natural-log probability of a sentence from a fresh context, without `<eos>`.
//
// # Safety
// `m` must be a live model handle, `sentence` a valid C string and `out` a
// valid pointer.
enum AuxinvStatus auxinv_model_logprob(const struct AuxinvModel *m,
                                       const char *sentence,
                                       double *out);

// Per-word perplexity of a sentence.
//
// # Safety
// As for [`auxinv_model_logprob`].
enum AuxinvStatus auxinv_model_perplexity(const struct AuxinvModel *m,
                                          const char *sentence,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUXINV_H */
