#ifndef QDA_H
#define QDA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values are stable.
typedef enum QdaStatus {
  QDA_STATUS_OK = 0,
  QDA_STATUS_NULL_ARGUMENT = 1,
  QDA_STATUS_INVALID_UTF8 = 2,
  QDA_STATUS_INGEST = 3,
  QDA_STATUS_CONFLICT = 4,
  QDA_STATUS_CONFIG = 5,
  QDA_STATUS_VALIDATION = 6,
  QDA_STATUS_EMPTY = 7,
  QDA_STATUS_UNDEFINED = 8,
  QDA_STATUS_NOT_FOUND = 9,
  QDA_STATUS_CORRUPT = 10,
  QDA_STATUS_STALE = 11,
  QDA_STATUS_DEPENDENCY = 12,
  QDA_STATUS_STORAGE = 13,
  QDA_STATUS_PANIC = 14,
} QdaStatus;

// Lemma dictionary usable without a project.
typedef struct QdaLemmatizer QdaLemmatizer;

// Opened project with its pipeline configuration.
typedef struct QdaProject QdaProject;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after success.
// The pointer stays valid until the next call on the same thread.
const char *qda_last_error(void);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void qda_string_free(char *s);

// Creates (if needed) and opens a project directory.
//
// # Safety
// `root` must be a nul-terminated string; `out` a valid pointer.
enum QdaStatus qda_project_init(const char *root, struct QdaProject **out_project);

// Opens an existing project with its `qda.toml`.
//
// # Safety
// `root` must be a nul-terminated string; `out` a valid pointer.
enum QdaStatus qda_project_open(const char *root, struct QdaProject **out_project);

// # Safety
// `project` must come from `qda_project_open`/`qda_project_init` or be null.
void qda_project_close(struct QdaProject *project);

// Writes the seeded synthetic corpus into `root/input`.
//
// # Safety
// `root` must be a nul-terminated string.
enum QdaStatus qda_synth_write(const char *root, uint64_t seed, bool validated);

// Runs `stage` (a stage name or `all`) under the project lock and returns
// the run summary as JSON.
//
// # Safety
// Pointers must be valid; `out_json` receives a string to free.
enum QdaStatus qda_project_run(struct QdaProject *project,
                               const char *stage,
                               bool force,
                               char **out_json);

// Stage states as JSON.
//
// # Safety
// Pointers must be valid; `out_json` receives a string to free.
enum QdaStatus qda_project_status(struct QdaProject *project, char **out_json);

// The report summary JSON. The report stage must be fresh.
//
// # Safety
// Pointers must be valid; `out_json` receives a string to free.
enum QdaStatus qda_project_report(struct QdaProject *project, char **out_json);

// Sets a dictionary entry. `base_version < 0` skips the version check.
//
// # Safety
// Pointers must be valid.
enum QdaStatus qda_dictionary_set(struct QdaProject *project,
                                  const char *key,
                                  const char *lemma,
                                  int64_t base_version,
                                  uint64_t *out_version);

// Applies a review action (`accept`, `reject`, `reassign`) to segment
// `<set>:<document>:<sentence>`. `categories` is a comma-separated list
// (may be null unless reassigning). Returns the updated segment as JSON.
//
// # Safety
// Pointers must be valid; `out_json` receives a string to free.
enum QdaStatus qda_review_apply(struct QdaProject *project,
                                const char *segment,
                                const char *action,
                                const char *categories,
                                char **out_json);

// Pearson correlation of two series of length `n`.
//
// # Safety
// `x` and `y` must point to `n` doubles.
enum QdaStatus qda_pearson(const double *x, const double *y, size_t n, double *out_r);

// Two-sided Wilcoxon rank-sum test. The statistic is the rank sum of `a`.
//
// # Safety
// `a`/`b` must point to `na`/`nb` doubles.
enum QdaStatus qda_wilcoxon_rank_sum(const double *a,
                                     size_t na,
                                     const double *b,
                                     size_t nb,
                                     double *out_statistic,
                                     double *out_p);

// Two-sided Fisher exact test on `[[a, b], [c, d]]`.
//
// # Safety
// `out_p` must be valid.
enum QdaStatus qda_fisher_exact(uint64_t a, uint64_t b, uint64_t c, uint64_t d, double *out_p);

// Builds a lemmatiser from dictionary CSV text (`key,lemma,pos_hint,provenance`).
//
// # Safety
// `csv` must be a nul-terminated string; `out` a valid pointer.
enum QdaStatus qda_lemmatizer_new(const char *csv, struct QdaLemmatizer **out_lemmatizer);

// Lemmatises `text` and returns the unigram stream as JSON (lemma, sentence
// and byte span per item).
//
// # Safety
// Pointers must be valid; `out_json` receives a string to free.
enum QdaStatus qda_lemmatize(const struct QdaLemmatizer *lemmatizer,
                             const char *input,
                             char **out_json);

// # Safety
// `lemmatizer` must come from `qda_lemmatizer_new` or be null.
void qda_lemmatizer_free(struct QdaLemmatizer *lemmatizer);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QDA_H */
