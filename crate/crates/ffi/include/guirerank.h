#ifndef GUIRERANK_H
#define GUIRERANK_H

#include <stddef.h>
#include <stdint.h>

typedef enum GrrStatus {
  GRR_STATUS_OK = 0,
  GRR_STATUS_NULL_ARGUMENT = 1,
  GRR_STATUS_INVALID_UTF8 = 2,
  GRR_STATUS_INVALID_ARGUMENT = 3,
  GRR_STATUS_NOT_FOUND = 4,
  GRR_STATUS_IO = 5,
  GRR_STATUS_CORRUPT = 6,
  GRR_STATUS_GATEWAY = 7,
  GRR_STATUS_INTERNAL = 8,
} GrrStatus;

/**
 * Datasets plus model access; runs search and rerank.
 */
typedef struct GrrEngine GrrEngine;

/**
 * Loaded embedding index.
 */
typedef struct GrrIndex GrrIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Valid until the
 * next call into this library on the same thread.
 */
const char *grr_last_error(void);

/**
 * Library version, static storage.
 */
const char *grr_version(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void grr_string_free(char *s);

/**
 * Loads an index file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GrrStatus grr_index_load(const char *path, struct GrrIndex **out);

/**
 * # Safety
 * `index` must come from [`grr_index_load`] or be NULL.
 */
void grr_index_free(struct GrrIndex *index);

/**
 * Number of GUIs, or 0 for NULL.
 *
 * # Safety
 * `index` must be a live handle or NULL.
 */
size_t grr_index_gui_count(const struct GrrIndex *index);

/**
 * Embedding width, or 0 for NULL.
 *
 * # Safety
 * `index` must be a live handle or NULL.
 */
size_t grr_index_width(const struct GrrIndex *index);

/**
 * JSON description: `{dataset, model, gui_ids, dimensions, width}`.
 *
 * # Safety
 * `index` must be a live handle; `out_json` must be writable.
 */
enum GrrStatus grr_index_info(const struct GrrIndex *index, char **out_json);

/**
 * Creates an engine from a TOML config file (NULL for defaults). `stub`
 * non-zero forces the offline provider.
 *
 * # Safety
 * `config_path` must be NULL or a NUL-terminated string; `out` writable.
 */
enum GrrStatus grr_engine_new(const char *config_path, int32_t stub, struct GrrEngine **out);

/**
 * # Safety
 * `engine` must come from [`grr_engine_new`] or be NULL.
 */
void grr_engine_free(struct GrrEngine *engine);

/**
 * Registers a dataset under `name`. `store_path` NULL means
 * `<name>.annotations.jsonl` beside the index.
 *
 * # Safety
 * String arguments must be NUL-terminated (store_path may be NULL).
 */
enum GrrStatus grr_engine_add_dataset(struct GrrEngine *engine,
                                      const char *name,
                                      const char *index_path,
                                      const char *store_path);

/**
 * Stage-one search. `weights` is NULL or `"domain=1,design=2"`; `top` 0
 * returns every GUI. Writes the JSON response to `out_json`.
 *
 * # Safety
 * Pointers must be valid as documented; `out_json` writable.
 */
enum GrrStatus grr_engine_search(struct GrrEngine *engine,
                                 const char *dataset,
                                 const char *query,
                                 const char *weights,
                                 size_t top,
                                 char **out_json);

/**
 * Stage-one search plus rerank of the top `k`. `mode` is `"text"` or
 * `"image"`; `model` NULL uses the configured rerank model.
 *
 * # Safety
 * Pointers must be valid as documented; `out_json` writable.
 */
enum GrrStatus grr_engine_rerank(struct GrrEngine *engine,
                                 const char *dataset,
                                 const char *query,
                                 const char *mode,
                                 size_t k,
                                 const char *weights,
                                 const char *model,
                                 char **out_json);

/**
 * Average precision of `rels` (non-zero = relevant, in rank order) with
 * `total_relevant` relevant items in the pool.
 *
 * # Safety
 * `rels` must point to `len` bytes; `out` writable.
 */
enum GrrStatus grr_average_precision(const uint8_t *rels,
                                     size_t len,
                                     size_t total_relevant,
                                     double *out);

/**
 * # Safety
 * `rels` must point to `len` bytes; `out` writable.
 */
enum GrrStatus grr_reciprocal_rank(const uint8_t *rels, size_t len, double *out);

/**
 * # Safety
 * `rels` must point to `len` bytes; `out` writable.
 */
enum GrrStatus grr_precision_at(const uint8_t *rels, size_t len, size_t k, double *out);

/**
 * # Safety
 * `rels` must point to `len` bytes; `out` writable.
 */
enum GrrStatus grr_hits_at(const uint8_t *rels, size_t len, size_t k, double *out);

/**
 * NDCG@k of `grades` (rank order) against the ideal ordering of `pool`.
 * `exp_gain` non-zero uses 2^g - 1 instead of g.
 *
 * # Safety
 * Arrays must hold the given lengths; `out` writable.
 */
enum GrrStatus grr_ndcg_at(const uint32_t *grades,
                           size_t len,
                           const uint32_t *pool,
                           size_t pool_len,
                           size_t k,
                           int32_t exp_gain,
                           double *out);

/**
 * Dollar cost of reranking `k` GUIs given per-GUI mean token counts,
 * priced with the built-in table.
 *
 * # Safety
 * `model` must be NUL-terminated; `out` writable.
 */
enum GrrStatus grr_project_cost(const char *model,
                                double input_per_gui,
                                double output_per_gui,
                                size_t k,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GUIRERANK_H */
