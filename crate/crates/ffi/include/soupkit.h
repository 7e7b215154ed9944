#ifndef SOUPKIT_H
#define SOUPKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SoupStatus {
  SOUP_STATUS_OK = 0,
  SOUP_STATUS_NULL_POINTER = 1,
  SOUP_STATUS_INVALID_ARGUMENT = 2,
  SOUP_STATUS_MISSING_ARTIFACT = 3,
  SOUP_STATUS_CORRUPT_ARTIFACT = 4,
  SOUP_STATUS_NON_FINITE = 5,
  SOUP_STATUS_BUFFER_TOO_SMALL = 6,
  SOUP_STATUS_PANIC = 7,
  SOUP_STATUS_OTHER = 8,
} SoupStatus;

typedef enum SoupSplit {
  SOUP_SPLIT_PRETRAIN = 0,
  SOUP_SPLIT_FINETUNE = 1,
  SOUP_SPLIT_VALIDATION = 2,
  SOUP_SPLIT_TEST = 3,
} SoupSplit;

typedef struct SoupCache SoupCache;

typedef struct SoupDataset SoupDataset;

/**
 * A loaded zoo: architecture plus weights in manifest order.
 */
typedef struct SoupZoo SoupZoo;

typedef struct SoupEval {
  double accuracy;
  double mean_loss;
  size_t n_examples;
} SoupEval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *soup_last_error(void);

/**
 * Loads a zoo manifest and every weight file it lists.
 *
 * # Safety
 * `manifest_path` must be a NUL-terminated string; `out` must be writable.
 */
enum SoupStatus soup_zoo_load(const char *manifest_path, struct SoupZoo **out);

/**
 * # Safety
 * `zoo` must come from [`soup_zoo_load`] and not be freed twice. NULL is a no-op.
 */
void soup_zoo_free(struct SoupZoo *zoo);

/**
 * Number of models, or 0 for NULL.
 *
 * # Safety
 * `zoo` must be NULL or a live handle.
 */
size_t soup_zoo_len(const struct SoupZoo *zoo);

/**
 * Parameter count of the zoo architecture, or 0 for NULL.
 *
 * # Safety
 * `zoo` must be NULL or a live handle.
 */
size_t soup_zoo_param_count(const struct SoupZoo *zoo);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SoupStatus soup_dataset_load(const char *path, enum SoupSplit split, struct SoupDataset **out);

/**
 * # Safety
 * `ds` must come from [`soup_dataset_load`] and not be freed twice. NULL is a no-op.
 */
void soup_dataset_free(struct SoupDataset *ds);

/**
 * Number of examples, or 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live handle.
 */
size_t soup_dataset_len(const struct SoupDataset *ds);

/**
 * Caches every model's logits on a validation split.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum SoupStatus soup_cache_build(const struct SoupZoo *zoo,
                                 const struct SoupDataset *val,
                                 struct SoupCache **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SoupStatus soup_cache_load(const char *path, struct SoupCache **out);

/**
 * # Safety
 * `cache` must be live; `path` must be a NUL-terminated string.
 */
enum SoupStatus soup_cache_save(const struct SoupCache *cache, const char *path);

/**
 * # Safety
 * `cache` must come from a cache constructor and not be freed twice. NULL is a no-op.
 */
void soup_cache_free(struct SoupCache *cache);

/**
 * Accuracy and loss of the `p`-weighted logit ensemble. Free of budget.
 *
 * # Safety
 * `p` must point to `n` doubles; `out` must be writable.
 */
enum SoupStatus soup_ensemble_eval(const struct SoupCache *cache,
                                   const double *p,
                                   size_t n,
                                   struct SoupEval *out);

/**
 * Full evaluation of the weight soup `sum_k p_k w_k` on `data`.
 *
 * # Safety
 * `p` must point to `n` doubles; handles must be live; `out` writable.
 */
enum SoupStatus soup_evaluate_soup(const struct SoupZoo *zoo,
                                   const double *p,
                                   size_t n,
                                   const struct SoupDataset *data,
                                   struct SoupEval *out);

/**
 * Greedy soup over all models. The winner's member indices are written to
 * `members` (capacity `capacity`), their count to `out_len`. `out_eval`
 * and `out_spent` may be NULL.
 *
 * # Safety
 * Handles must be live; `members` must hold `capacity` entries.
 */
enum SoupStatus soup_greedy(const struct SoupZoo *zoo,
                            const struct SoupCache *cache,
                            const struct SoupDataset *val,
                            size_t *members,
                            size_t capacity,
                            size_t *out_len,
                            struct SoupEval *out_eval,
                            size_t *out_spent);

/**
 * Ranked selection over `n_candidates` Monte-Carlo masks (plus the
 * uniform soup when `include_uniform`), full evaluation of the top
 * `budget`. Output conventions as in [`soup_greedy`].
 *
 * # Safety
 * Handles must be live; `members` must hold `capacity` entries.
 */
enum SoupStatus soup_radin_mc(const struct SoupZoo *zoo,
                              const struct SoupCache *cache,
                              const struct SoupDataset *val,
                              size_t n_candidates,
                              uint64_t seed,
                              bool include_uniform,
                              size_t budget,
                              double lambda,
                              size_t *members,
                              size_t capacity,
                              size_t *out_len,
                              struct SoupEval *out_eval,
                              size_t *out_spent);

/**
 * Spearman rank correlation with average ranks for ties.
 *
 * # Safety
 * `xs` and `ys` must each point to `n` doubles; `out` must be writable.
 */
enum SoupStatus soup_spearman(const double *xs, const double *ys, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOUPKIT_H */
