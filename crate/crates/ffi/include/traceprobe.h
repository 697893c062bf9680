#ifndef TRACEPROBE_H
#define TRACEPROBE_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum TpStatus {
  TP_STATUS_OK = 0,
  // A required pointer argument was NULL.
  TP_STATUS_NULL_ARGUMENT = 1,
  TP_STATUS_INVALID_ARGUMENT = 2,
  // Malformed message bytes or file contents.
  TP_STATUS_DECODE = 3,
  TP_STATUS_IO = 4,
  // Connection, protocol or simulator failure.
  TP_STATUS_SIMULATOR = 5,
  // The result is numerically degenerate (for example all weights zero).
  TP_STATUS_NUMERICAL = 6,
  // An internal panic was caught at the boundary.
  TP_STATUS_PANIC = 7,
} TpStatus;

// MCMC proposal kernel.
typedef enum TpKernel {
  // Single-site resampling from the prior.
  TP_KERNEL_LMH = 0,
  // Gaussian random walk at continuous sites, prior elsewhere.
  TP_KERNEL_RMH = 1,
} TpKernel;

typedef struct TpChain TpChain;

typedef struct TpMessage TpMessage;

typedef struct TpNetwork TpNetwork;

typedef struct TpPosterior TpPosterior;

// A pool of simulators; inference runs one worker per member.
typedef struct TpSimulator TpSimulator;

// Heap bytes owned by the caller. `data[len]` is an extra NUL so text
// results can be used as C strings.
typedef struct TpBuffer {
  uint8_t *data;
  size_t len;
} TpBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static C string.
const char *tp_version(void);

// Message of the last failure on this thread, or NULL. Valid until the
// next failing call on the same thread.
const char *tp_last_error(void);

// # Safety
// `buf` must come from this library and not have been freed.
void tp_buffer_free(struct TpBuffer buf);

// Decodes one message body (without the length prefix).
//
// # Safety
// `data` must point to `len` readable bytes; `out` must be writable.
enum TpStatus tp_message_decode(const uint8_t *data, size_t len, struct TpMessage **out);

// Canonical body bytes of `msg`.
//
// # Safety
// `msg` must be a live handle; `out` must be writable.
enum TpStatus tp_message_encode(const struct TpMessage *msg, struct TpBuffer *out);

// Kind byte of `msg` (0 for NULL).
//
// # Safety
// `msg` must be NULL or a live handle.
uint8_t tp_message_kind(const struct TpMessage *msg);

// Human-readable rendering of `msg`.
//
// # Safety
// `msg` must be a live handle; `out` must be writable.
enum TpStatus tp_message_describe(const struct TpMessage *msg, struct TpBuffer *out);

// # Safety
// `msg` must be NULL or a handle not yet freed.
void tp_message_free(struct TpMessage *msg);

// Connects to every endpoint of a comma-separated list
// (`tcp://host:port`, `ipc://path`). `timeout_secs <= 0` uses the default.
//
// # Safety
// `endpoints` must be a NUL-terminated string; `out` must be writable.
enum TpStatus tp_simulator_connect(const char *endpoints,
                                   double timeout_secs,
                                   struct TpSimulator **out);

// `workers` in-process instances of a built-in reference model.
//
// # Safety
// `model` must be a NUL-terminated string; `out` must be writable.
enum TpStatus tp_simulator_local(const char *model, size_t workers, struct TpSimulator **out);

// # Safety
// `sim` must be NULL or a handle not yet freed.
void tp_simulator_free(struct TpSimulator *sim);

// Prior-proposal importance sampling over `n` traces. On
// [`TpStatus::Numerical`] (all weights zero) `*out` is still set and must be freed.
//
// # Safety
// `sim` must be a live handle, `obs` NULL or `obs_len` readable doubles,
// `out` writable.
enum TpStatus tp_infer_is(struct TpSimulator *sim,
                          const double *obs,
                          size_t obs_len,
                          size_t n,
                          uint64_t seed,
                          struct TpPosterior **out);

// Importance sampling with a trained network's proposals. The network
// conditions on the observation, so `obs` is required.
//
// # Safety
// As [`tp_infer_is`], and `net` must be a live handle.
enum TpStatus tp_infer_ic(struct TpSimulator *sim,
                          const struct TpNetwork *net,
                          const double *obs,
                          size_t obs_len,
                          size_t n,
                          uint64_t seed,
                          struct TpPosterior **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum TpStatus tp_network_load(const char *path, struct TpNetwork **out);

// # Safety
// `net` must be NULL or a handle not yet freed.
void tp_network_free(struct TpNetwork *net);

// Number of weighted traces (0 for NULL).
//
// # Safety
// `post` must be NULL or a live handle.
size_t tp_posterior_len(const struct TpPosterior *post);

// Effective sample size `(Σw)² / Σw²`.
//
// # Safety
// `post` must be a live handle; `out` must be writable.
enum TpStatus tp_posterior_ess(const struct TpPosterior *post, double *out);

// Log of the mean unnormalized weight.
//
// # Safety
// `post` must be a live handle; `out` must be writable.
enum TpStatus tp_posterior_log_evidence(const struct TpPosterior *post, double *out);

// Unnormalized log weight of trace `index`.
//
// # Safety
// `post` must be a live handle; `out` must be writable.
enum TpStatus tp_posterior_log_weight(const struct TpPosterior *post, size_t index, double *out);

// Weighted mean and variance of the value at `address#instance`.
//
// # Safety
// `post` must be a live handle, `address` NUL-terminated, `mean` and
// `variance` writable.
enum TpStatus tp_posterior_moments(const struct TpPosterior *post,
                                   const char *address,
                                   uint32_t instance,
                                   double *mean,
                                   double *variance);

// Weighted marginal over integer classes `0..classes` at `address#instance`.
// Writes `classes` masses to `out`; mass of traces lacking the site or
// with values outside the classes is not included.
//
// # Safety
// `post` must be a live handle, `address` NUL-terminated, `out` writable
// for `classes` doubles.
enum TpStatus tp_posterior_class_marginal(const struct TpPosterior *post,
                                          const char *address,
                                          uint32_t instance,
                                          size_t classes,
                                          double *out);

// # Safety
// `post` must be a live handle; `path` NUL-terminated.
enum TpStatus tp_posterior_save(const struct TpPosterior *post, const char *path);

// # Safety
// `path` must be NUL-terminated; `out` writable.
enum TpStatus tp_posterior_load(const char *path, struct TpPosterior **out);

// # Safety
// `post` must be NULL or a handle not yet freed.
void tp_posterior_free(struct TpPosterior *post);

// Runs one chain from a prior draw on the pool's first simulator. Samples
// are kept after `burn_in` steps, every `thinning`-th step.
//
// # Safety
// `sim` must be a live handle, `obs` NULL or `obs_len` readable doubles,
// `out` writable.
enum TpStatus tp_chain_run(struct TpSimulator *sim,
                           enum TpKernel kernel,
                           double sigma,
                           size_t steps,
                           size_t burn_in,
                           size_t thinning,
                           uint64_t seed,
                           const double *obs,
                           size_t obs_len,
                           struct TpChain **out);

// Number of kept samples (0 for NULL).
//
// # Safety
// `chain` must be NULL or a live handle.
size_t tp_chain_len(const struct TpChain *chain);

// Number of steps run, the length of the log-joint series (0 for NULL).
//
// # Safety
// `chain` must be NULL or a live handle.
size_t tp_chain_steps(const struct TpChain *chain);

// # Safety
// `chain` must be a live handle; `out` writable.
enum TpStatus tp_chain_acceptance_rate(const struct TpChain *chain, double *out);

// Copies the per-step joint log density into `out`, which must hold
// [`tp_chain_steps`] doubles (`capacity` says how many it holds).
//
// # Safety
// `chain` must be a live handle; `out` writable for `capacity` doubles.
enum TpStatus tp_chain_log_joints(const struct TpChain *chain, double *out, size_t capacity);

// The kept samples as an equally weighted posterior.
//
// # Safety
// `chain` must be a live handle; `out` writable.
enum TpStatus tp_chain_posterior(const struct TpChain *chain, struct TpPosterior **out);

// # Safety
// `chain` must be NULL or a handle not yet freed.
void tp_chain_free(struct TpChain *chain);

// Gelman–Rubin statistic over `n_chains` series of `len` values each.
//
// # Safety
// `chains` must hold `n_chains` pointers to `len` readable doubles; `out` writable.
enum TpStatus tp_gelman_rubin(const double *const *chains,
                              size_t n_chains,
                              size_t len,
                              double *out);

// Autocorrelation at lags `0..=max_lag`, written to `out` (`max_lag + 1` doubles).
//
// # Safety
// `series` must hold `len` readable doubles; `out` writable for `max_lag + 1`.
enum TpStatus tp_autocorrelation(const double *series, size_t len, size_t max_lag, double *out);

// Effective sample size of an autocorrelated series.
//
// # Safety
// `series` must hold `len` readable doubles; `out` writable.
enum TpStatus tp_ess_chain(const double *series, size_t len, double *out);

// Address transition graph of a trace file as Graphviz DOT. `top > 0`
// keeps only the traces of the `top` most frequent trace types.
//
// # Safety
// `trace_path` must be NUL-terminated; `out` writable.
enum TpStatus tp_graph_dot(const char *trace_path, size_t top, struct TpBuffer *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRACEPROBE_H */
