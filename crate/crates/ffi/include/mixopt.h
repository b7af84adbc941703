#ifndef MIXOPT_H
#define MIXOPT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MixoptStatus {
  MIXOPT_STATUS_OK = 0,
  MIXOPT_STATUS_NULL_POINTER = 1,
  MIXOPT_STATUS_INVALID_UTF8 = 2,
  MIXOPT_STATUS_SHAPE = 3,
  MIXOPT_STATUS_VALIDATION = 4,
  MIXOPT_STATUS_CONDITIONING = 5,
  MIXOPT_STATUS_FITTING = 6,
  MIXOPT_STATUS_INSUFFICIENT_DATA = 7,
  MIXOPT_STATUS_CONFIG = 8,
  MIXOPT_STATUS_INFEASIBLE = 9,
  MIXOPT_STATUS_SCHEMA = 10,
  MIXOPT_STATUS_ROW = 11,
  MIXOPT_STATUS_MIGRATION = 12,
  MIXOPT_STATUS_INTEGRITY = 13,
  MIXOPT_STATUS_NOT_FOUND = 14,
  MIXOPT_STATUS_IO = 15,
  MIXOPT_STATUS_JSON = 16,
  MIXOPT_STATUS_CSV = 17,
  MIXOPT_STATUS_PANIC = 99,
} MixoptStatus;

/**
 * Fitted strength model.
 */
typedef struct MixoptModel MixoptModel;

/**
 * Campaign store rooted at a directory.
 */
typedef struct MixoptStore MixoptStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library on the same thread.
 */
const char *mixopt_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void mixopt_string_free(char *s);

size_t mixopt_ingredient_count(void);

/**
 * Static name of ingredient `i` in quantity-array order, or NULL.
 */
const char *mixopt_ingredient_name(size_t i);

/**
 * Hypervolume of `n` points with `m` objectives (row-major, maximized)
 * above `reference`.
 *
 * # Safety
 * `points` holds `n * m` doubles, `reference` holds `m`, `out` is writable.
 */
enum MixoptStatus mixopt_hypervolume(const double *points,
                                     size_t n,
                                     size_t m,
                                     const double *reference,
                                     double *out);

/**
 * Indices of the non-dominated rows. `out_indices` needs room for `n`
 * entries; `out_len` receives the count.
 *
 * # Safety
 * `points` holds `n * m` doubles; `out_indices` has room for `n` entries.
 */
enum MixoptStatus mixopt_pareto_filter(const double *points,
                                       size_t n,
                                       size_t m,
                                       size_t *out_indices,
                                       size_t *out_len);

/**
 * Fits a strength model. `observations_json` is a JSON array of
 * observations; `constraints_json` may be NULL, in which case the design
 * space spans the observed quantities.
 *
 * # Safety
 * String arguments are NUL-terminated; `out` is writable.
 */
enum MixoptStatus mixopt_model_fit(const char *observations_json,
                                   const char *constraints_json,
                                   struct MixoptModel **out);

/**
 * Restores a model from its JSON snapshot.
 *
 * # Safety
 * `json` is NUL-terminated; `out` is writable.
 */
enum MixoptStatus mixopt_model_from_json(const char *json, struct MixoptModel **out);

/**
 * # Safety
 * `model` is a live handle; `out` is writable.
 */
enum MixoptStatus mixopt_model_to_json(const struct MixoptModel *model, char **out);

/**
 * Posterior strength mean and sd (MPa) at each age for one mixture given
 * as `mixopt_ingredient_count()` quantities in kg/m³.
 *
 * # Safety
 * `quantities` holds the ingredient count; `ages`, `out_mean` and `out_sd`
 * hold `n_ages` doubles each.
 */
enum MixoptStatus mixopt_model_predict(const struct MixoptModel *model,
                                       const double *quantities,
                                       const double *ages,
                                       size_t n_ages,
                                       double *out_mean,
                                       double *out_sd);

/**
 * # Safety
 * `model` is NULL or a handle not yet freed.
 */
void mixopt_model_free(struct MixoptModel *model);

/**
 * Opens (creating if needed) a campaign store directory.
 *
 * # Safety
 * `path` is NUL-terminated; `out` is writable.
 */
enum MixoptStatus mixopt_store_open(const char *path, struct MixoptStore **out);

/**
 * # Safety
 * `store` is NULL or a handle not yet freed.
 */
void mixopt_store_free(struct MixoptStore *store);

/**
 * Campaign summary as JSON.
 *
 * # Safety
 * `store` is a live handle, `campaign` NUL-terminated, `out` writable.
 */
enum MixoptStatus mixopt_campaign_state(const struct MixoptStore *store,
                                        const char *campaign,
                                        char **out);

/**
 * Appends a measurement CSV; writes the ingest report as JSON.
 *
 * # Safety
 * `store` is a live handle, strings NUL-terminated, `out` writable.
 */
enum MixoptStatus mixopt_ingest_csv(const struct MixoptStore *store,
                                    const char *campaign,
                                    const char *csv_path,
                                    bool strict,
                                    char **out);

/**
 * Fits, proposes and records a batch of `q` mixtures; writes the batch as JSON.
 *
 * # Safety
 * `store` is a live handle, `campaign` NUL-terminated, `out` writable.
 */
enum MixoptStatus mixopt_propose(const struct MixoptStore *store,
                                 const char *campaign,
                                 size_t q,
                                 uint64_t seed,
                                 char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIXOPT_H */
