#ifndef SYMDIFF_H
#define SYMDIFF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SdStatus {
  SD_STATUS_OK = 0,
  SD_STATUS_NULL_POINTER = 1,
  SD_STATUS_INVALID_ARGUMENT = 2,
  SD_STATUS_OUT_OF_RANGE = 3,
  SD_STATUS_INVALID_PERMUTATION = 4,
  SD_STATUS_NUMERICAL = 5,
  SD_STATUS_IO = 6,
  SD_STATUS_PARSE = 7,
  SD_STATUS_PANIC = 8,
} SdStatus;

/**
 * Precomputed rising-sequence counts for riffle shuffles on `n` cards.
 */
typedef struct SdEulerian SdEulerian;

/**
 * A trained score network with its denoising schedule.
 */
typedef struct SdModel SdModel;

/**
 * Seeded random generator.
 */
typedef struct SdRandom SdRandom;

/**
 * One reverse-transition distribution.
 */
typedef struct SdReverse SdReverse;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *sd_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 */
void sd_string_free(char *s);

/**
 * Library version, statically allocated.
 */
const char *sd_version(void);

/**
 * Number of rising sequences of `perm`.
 */
enum SdStatus sd_rising_sequences(const size_t *perm, size_t n, size_t *out);

/**
 * One-step probability of `perm` under shuffle `kind` ("RT", "RI", "RS").
 */
enum SdStatus sd_pmf_one_step(const char *kind, const size_t *perm, size_t n, double *out);

/**
 * Probability of `perm` after `t` riffle shuffles.
 */
enum SdStatus sd_pmf_rs_tstep(const size_t *perm, size_t n, uint32_t t, double *out);

enum SdStatus sd_eulerian_new(size_t n, struct SdEulerian **out);

void sd_eulerian_free(struct SdEulerian *h);

/**
 * Total variation between `t` riffle shuffles and the uniform distribution.
 */
enum SdStatus sd_eulerian_tv_to_uniform(const struct SdEulerian *h, uint32_t t, double *out);

/**
 * Total variation between `t` and `t_prime` riffle shuffles.
 */
enum SdStatus sd_eulerian_tv_between(const struct SdEulerian *h,
                                     uint32_t t,
                                     uint32_t t_prime,
                                     double *out);

/**
 * Planned horizon and schedule as a JSON object `{n, T, schedule, consecutive_tv}`.
 */
enum SdStatus sd_plan_schedule(size_t n, double eps_t, double gap, char **out_json);

enum SdStatus sd_rng_new(uint64_t seed, struct SdRandom **out);

/**
 * Independent stream `index` under `seed`.
 */
enum SdStatus sd_rng_stream(uint64_t seed, uint64_t index, struct SdRandom **out);

void sd_rng_free(struct SdRandom *h);

/**
 * Draws one step of shuffle `kind` on `n` cards into `out_perm`.
 */
enum SdStatus sd_sample_shuffle_step(const char *kind,
                                     size_t n,
                                     struct SdRandom *rng,
                                     size_t *out_perm);

/**
 * Builds a reverse distribution from JSON such as
 * `{"kind":"PL","s":[0.1,0.2]}` or `{"kind":"GPL","S":[[...],...]}`.
 */
enum SdStatus sd_reverse_from_json(const char *json, struct SdReverse **out);

void sd_reverse_free(struct SdReverse *h);

enum SdStatus sd_reverse_n(const struct SdReverse *h, size_t *out);

/**
 * Natural log-probability of `perm`; `-inf` off the support.
 */
enum SdStatus sd_reverse_log_prob(const struct SdReverse *h,
                                  const size_t *perm,
                                  size_t n,
                                  double *out);

enum SdStatus sd_reverse_sample(const struct SdReverse *h,
                                struct SdRandom *rng,
                                size_t *out_perm,
                                size_t n);

/**
 * Up to `k` most likely permutations, best first. `out_perms` holds
 * `k * n` entries and `out_log_probs` holds `k`; `out_count` receives the
 * number actually written.
 */
enum SdStatus sd_reverse_top_k(const struct SdReverse *h,
                               size_t k,
                               size_t inner_beam,
                               size_t *out_perms,
                               double *out_log_probs,
                               size_t *out_count);

/**
 * Loads a training checkpoint from a JSON string.
 */
enum SdStatus sd_model_from_json(const char *json, struct SdModel **out);

/**
 * Loads a training checkpoint file.
 */
enum SdStatus sd_model_load(const char *path, struct SdModel **out);

void sd_model_free(struct SdModel *h);

/**
 * List length the model was trained on.
 */
enum SdStatus sd_model_n(const struct SdModel *h, size_t *out);

/**
 * Reverse distribution the network predicts for scalars `values` at time
 * `t`, as JSON in the format accepted by [`sd_reverse_from_json`].
 */
enum SdStatus sd_model_forward_json(const struct SdModel *h,
                                    const double *values,
                                    size_t n,
                                    uint32_t t,
                                    char **out_json);

/**
 * Beam-search decoding over the model's schedule. `out_perm[i]` is the
 * index of the value placed at position `i`.
 */
enum SdStatus sd_model_decode(const struct SdModel *h,
                              const double *values,
                              size_t n,
                              size_t outer_beam,
                              size_t inner_beam,
                              size_t restarts,
                              uint64_t seed,
                              size_t *out_perm,
                              double *out_log_prob);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYMDIFF_H */
