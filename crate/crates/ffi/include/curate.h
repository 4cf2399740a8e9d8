#ifndef CURATE_H
#define CURATE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum CurateStatus {
  CURATE_STATUS_OK = 0,
  /**
   * Null pointer, invalid UTF-8 or an out-of-range parameter.
   */
  CURATE_STATUS_INVALID_ARGUMENT = 1,
  CURATE_STATUS_IO = 2,
  CURATE_STATUS_PARSE = 3,
  /**
   * A stage or pipeline failed while running.
   */
  CURATE_STATUS_STAGE = 4,
  CURATE_STATUS_PANIC = 5,
} CurateStatus;

/**
 * Opaque in-memory near-duplicate session.
 */
typedef struct CurateDedup CurateDedup;

/**
 * Opaque MinHash signature.
 */
typedef struct CurateSignature CurateSignature;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread; do not free.
 */
const char *curate_last_error_message(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void curate_string_free(char *s);

/**
 * Cleans `text` and returns a newly allocated string in `out`.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum CurateStatus curate_clean_text(const char *text, char **out);

/**
 * Probability that two sets with Jaccard similarity `s` share at least one
 * LSH bucket under `bands` bands of `rows` rows.
 *
 * # Safety
 * `out` must be writable.
 */
enum CurateStatus curate_lsh_collision_probability(double s,
                                                   size_t bands,
                                                   size_t rows,
                                                   double *out);

/**
 * Shingles `text` (`unit` 0 = word, 1 = char) and signs it with
 * `num_hashes` seeded hash functions.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum CurateStatus curate_signature_from_text(const char *text,
                                             size_t k,
                                             uint32_t unit,
                                             size_t num_hashes,
                                             uint64_t seed,
                                             struct CurateSignature **out);

/**
 * Number of values in the signature.
 *
 * # Safety
 * `sig` must be a live handle.
 */
size_t curate_signature_len(const struct CurateSignature *sig);

/**
 * Pointer to the signature's values, valid while the handle lives.
 *
 * # Safety
 * `sig` must be a live handle.
 */
const uint64_t *curate_signature_values(const struct CurateSignature *sig);

/**
 * Fraction of agreeing positions, an estimate of Jaccard similarity.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum CurateStatus curate_signature_similarity(const struct CurateSignature *a,
                                              const struct CurateSignature *b,
                                              double *out);

/**
 * # Safety
 * `sig` must come from [`curate_signature_from_text`] and not be freed twice.
 */
void curate_signature_free(struct CurateSignature *sig);

/**
 * Starts a session with default shingling and banding, the given
 * similarity threshold, anchor fraction and seed.
 *
 * # Safety
 * `out` must be writable.
 */
enum CurateStatus curate_dedup_new(double tau,
                                   double anchor_fraction,
                                   uint64_t seed,
                                   struct CurateDedup **out);

/**
 * Adds one document. Ids must be unique within the session.
 *
 * # Safety
 * `dedup` must be a live handle; `text` a NUL-terminated string.
 */
enum CurateStatus curate_dedup_add(struct CurateDedup *dedup, uint64_t id, const char *text);

/**
 * Runs deduplication over the added documents and writes up to `capacity`
 * retained ids, ascending, into `ids`. `count` receives the total number
 * retained; call again with a larger buffer if it exceeds `capacity`.
 *
 * # Safety
 * `dedup` must be a live handle; `ids` must hold `capacity` values (may be
 * null when `capacity` is 0); `count` must be writable.
 */
enum CurateStatus curate_dedup_run(const struct CurateDedup *dedup,
                                   uint64_t *ids,
                                   size_t capacity,
                                   size_t *count);

/**
 * # Safety
 * `dedup` must come from [`curate_dedup_new`] and not be freed twice.
 */
void curate_dedup_free(struct CurateDedup *dedup);

/**
 * Runs the pipeline described by a JSON config file.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string.
 */
enum CurateStatus curate_pipeline_run(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CURATE_H */
