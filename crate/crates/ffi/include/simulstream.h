#ifndef SIMULSTREAM_H
#define SIMULSTREAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SimStatus {
  SIM_STATUS_OK = 0,
  SIM_STATUS_NULL_ARGUMENT = 1,
  SIM_STATUS_CONFIG = 2,
  SIM_STATUS_VALIDATION = 3,
  SIM_STATUS_IO = 4,
  SIM_STATUS_REPLAY_MISS = 5,
  SIM_STATUS_INVALID_UTF8 = 6,
  SIM_STATUS_UNDEFINED_METRIC = 7,
  SIM_STATUS_BUFFER_TOO_SMALL = 8,
  SIM_STATUS_PANIC = 9,
  SIM_STATUS_INTERNAL = 10,
} SimStatus;

typedef enum SimPolicy {
  SIM_POLICY_ATTENTION_GUIDED = 0,
  SIM_POLICY_LOCAL_AGREEMENT = 1,
} SimPolicy;

typedef enum SimLatencyMode {
  SIM_LATENCY_MODE_UNAWARE = 0,
  SIM_LATENCY_MODE_AWARE = 1,
} SimLatencyMode;

// A streaming model: scripted or trace replay.
typedef struct SimModel SimModel;

// Outcome of one session.
typedef struct SimResult SimResult;

// Truncation-detector weights.
typedef struct SimTdmWeights SimTdmWeights;

// Session parameters. Fill with [`sim_session_config_default`] and adjust.
typedef struct SimSessionConfig {
  enum SimPolicy policy;
  double chunk_len_s;
  size_t l_threshold_frames;
  size_t median_window;
  double fire_threshold;
  double max_context_s;
  size_t agreement_n;
  size_t max_tokens_per_chunk;
  size_t pad_to_frames;
  // Nonzero charges the default synthetic per-step costs to aware latency.
  uint8_t synthetic_timing;
} SimSessionConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *sim_last_error(void);

// Writes the library defaults into `out`.
//
// # Safety
// `out` must be null or point to writable memory for one config.
enum SimStatus sim_session_config_default(struct SimSessionConfig *out);

// Builds a scripted model from a corpus generator config (TOML text).
//
// # Safety
// `toml` must be null or a NUL-terminated string; `out` must be null or
// writable.
enum SimStatus sim_model_from_corpus(const char *toml, struct SimModel **out);

// Loads a scripted model config (TOML file).
//
// # Safety
// `path` must be null or a NUL-terminated string; `out` must be null or
// writable.
enum SimStatus sim_model_load_scripted(const char *path, struct SimModel **out);

// Opens a trace file for replay.
//
// # Safety
// `path` must be null or a NUL-terminated string; `out` must be null or
// writable.
enum SimStatus sim_model_load_trace(const char *path, struct SimModel **out);

// # Safety
// `model` must be null or a handle from a `sim_model_*` constructor that
// has not been freed.
void sim_model_free(struct SimModel *model);

// Loads truncation-detector weights.
//
// # Safety
// `path` must be null or a NUL-terminated string; `out` must be null or
// writable.
enum SimStatus sim_tdm_weights_load(const char *path, struct SimTdmWeights **out);

// # Safety
// `weights` must be null or a live handle from [`sim_tdm_weights_load`].
void sim_tdm_weights_free(struct SimTdmWeights *weights);

// Streams the model's whole input through one session. `weights` may be
// null to disable truncation detection.
//
// # Safety
// `model` and `config` must be live and non-null; `weights` null or live;
// `out` writable.
enum SimStatus sim_run_session(const struct SimModel *model,
                               const struct SimSessionConfig *config,
                               const struct SimTdmWeights *weights,
                               struct SimResult **out);

// # Safety
// `result` must be null or a live handle from [`sim_run_session`].
void sim_result_free(struct SimResult *result);

// Committed transcript, owned by `result`. Null if `result` is null.
//
// # Safety
// `result` must be null or live.
const char *sim_result_transcript(const struct SimResult *result);

// Number of committed tokens, 0 if `result` is null.
//
// # Safety
// `result` must be null or live.
size_t sim_result_token_count(const struct SimResult *result);

// Copies per-token commit times (seconds) into `out`, which must hold
// `sim_result_token_count` values.
//
// # Safety
// `result` live; `out` null or writable for `cap` doubles.
enum SimStatus sim_result_token_times(const struct SimResult *result,
                                      enum SimLatencyMode mode,
                                      double *out,
                                      size_t cap);

// Word-level DAL of the session in seconds.
//
// # Safety
// `result` live; `out` writable.
enum SimStatus sim_result_dal(const struct SimResult *result,
                              enum SimLatencyMode mode,
                              double *out);

// Integrate-and-fire scan. Writes up to `cap` fire indices to `fires`, the
// total count to `n_fires` and the leftover integral to `residual`.
// Returns `BufferTooSmall` (with counts still written) if `cap` is short.
//
// # Safety
// `alpha` readable for `len` doubles; `fires` writable for `cap` entries;
// `n_fires` and `residual` writable.
enum SimStatus sim_if_scan(const double *alpha,
                           size_t len,
                           double threshold,
                           size_t *fires,
                           size_t cap,
                           size_t *n_fires,
                           double *residual);

// Median filter with reflect padding into `out` (`len` values).
//
// # Safety
// `input` readable and `out` writable for `len` doubles.
enum SimStatus sim_median_filter(const double *input, size_t len, size_t width, double *out);

// DAL of emission times `g` against a source of `source_s` seconds.
//
// # Safety
// `g` readable for `len` doubles; `out` writable.
enum SimStatus sim_dal(const double *g, size_t len, double source_s, double *out);

// Word error rate after normalization.
//
// # Safety
// `reference` and `hypothesis` NUL-terminated; `out` writable.
enum SimStatus sim_wer(const char *reference, const char *hypothesis, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMULSTREAM_H */
