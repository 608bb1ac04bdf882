#ifndef SUBGEN_H
#define SUBGEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SubgenStatus {
  SUBGEN_STATUS_OK = 0,
  SUBGEN_STATUS_NULL_POINTER = 1,
  SUBGEN_STATUS_INVALID_ARGUMENT = 2,
  SUBGEN_STATUS_DIMENSION_MISMATCH = 3,
  SUBGEN_STATUS_NON_FINITE = 4,
  SUBGEN_STATUS_EMPTY_STATE = 5,
  SUBGEN_STATUS_FORMAT = 6,
  SUBGEN_STATUS_BUFFER_TOO_SMALL = 7,
  SUBGEN_STATUS_CLUSTERABILITY_REGIME = 8,
  SUBGEN_STATUS_IO = 9,
  SUBGEN_STATUS_PANIC = 10,
} SubgenStatus;

// Opaque streaming state.
typedef struct SubgenState SubgenState;

typedef struct SubgenMemoryFootprint {
  uint64_t vectors_stored;
  uint64_t scalars_stored;
  uint64_t bytes_estimate;
} SubgenMemoryFootprint;

typedef struct SubgenStateInfo {
  size_t d;
  size_t t;
  size_t s;
  uint64_t n;
  size_t m_prime;
  double delta;
  double mu;
} SubgenStateInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *subgen_version(void);

// Message of the last failed call on this thread ("" after a success).
// Valid until the next call into this library on the same thread.
const char *subgen_last_error_message(void);

// Static name of a status code; unknown codes give "unknown status".
const char *subgen_status_name(int32_t status);

// Reservoir size `t` and sampler size `s` for an accuracy target.
//
// # Safety
// `out_t` and `out_s` must be valid for writes.
enum SubgenStatus subgen_derive_sizes(double epsilon,
                                      double r,
                                      double delta,
                                      double n_max,
                                      size_t d,
                                      double c_t,
                                      double c_s,
                                      size_t *out_t,
                                      size_t *out_s);

// Creates a state with explicit reservoir size `t`, sampler size `s` and
// cluster radius `delta`.
//
// # Safety
// `out` must be valid for writes. The handle must be released with
// [`subgen_state_free`].
enum SubgenStatus subgen_state_new(size_t d,
                                   size_t t,
                                   size_t s,
                                   double delta,
                                   uint64_t seed,
                                   struct SubgenState **out);

// Creates a state sized from an accuracy target with unit size constants.
//
// # Safety
// As [`subgen_state_new`].
enum SubgenStatus subgen_state_new_with_accuracy(size_t d,
                                                 double epsilon,
                                                 double r,
                                                 double delta,
                                                 double n_max,
                                                 uint64_t seed,
                                                 struct SubgenState **out);

// Releases a state. Null is ignored.
//
// # Safety
// `st` must come from this library and not be used afterwards.
void subgen_state_free(struct SubgenState *st);

// Deep copy of a state, including its random stream.
//
// # Safety
// `st` must be a live handle and `out` valid for writes.
enum SubgenStatus subgen_state_clone(const struct SubgenState *st, struct SubgenState **out);

// Adds one key/value pair without querying.
//
// # Safety
// `k` and `v` must point to `d` doubles.
enum SubgenStatus subgen_state_ingest(struct SubgenState *st,
                                      const double *k,
                                      const double *v,
                                      size_t d);

// Ingests `(k, v)` and writes the attention estimate for `q` into `out_z`.
//
// # Safety
// `q`, `k`, `v` must point to `d` doubles and `out_z` to room for `d`.
enum SubgenStatus subgen_state_process_token(struct SubgenState *st,
                                             const double *q,
                                             const double *k,
                                             const double *v,
                                             size_t d,
                                             double *out_z);

// Attention estimate for `q` over everything ingested so far.
//
// # Safety
// `q` must point to `d` doubles and `out_z` to room for `d`.
enum SubgenStatus subgen_state_query(const struct SubgenState *st,
                                     const double *q,
                                     size_t d,
                                     double *out_z);

// # Safety
// `st` must be a live handle and `out` valid for writes.
enum SubgenStatus subgen_state_memory_footprint(const struct SubgenState *st,
                                                struct SubgenMemoryFootprint *out);

// # Safety
// `st` must be a live handle and `out` valid for writes.
enum SubgenStatus subgen_state_info(const struct SubgenState *st, struct SubgenStateInfo *out);

// Size in bytes of the state's snapshot.
//
// # Safety
// `st` must be a live handle and `out_len` valid for writes.
enum SubgenStatus subgen_state_snapshot_len(const struct SubgenState *st, size_t *out_len);

// Writes the snapshot into `buf`. Fails with `BufferTooSmall` (and stores
// the required size in `out_written`) when `cap` is insufficient.
//
// # Safety
// `buf` must be valid for `cap` bytes of writes; `out_written` for writes.
enum SubgenStatus subgen_state_snapshot_write(const struct SubgenState *st,
                                              uint8_t *buf,
                                              size_t cap,
                                              size_t *out_written);

// Restores a state from snapshot bytes.
//
// # Safety
// `buf` must be valid for `len` bytes; `out` valid for writes.
enum SubgenStatus subgen_state_snapshot_read(const uint8_t *buf,
                                             size_t len,
                                             struct SubgenState **out);

// Exact softmax attention of `q` over `n` row-major keys and values.
//
// # Safety
// `keys` and `values` must hold `n * d` doubles; `q` and `out_z` `d`.
enum SubgenStatus subgen_exact_attention(const double *keys,
                                         const double *values,
                                         size_t n,
                                         size_t d,
                                         const double *q,
                                         double *out_z);

// Spectral error of estimate `z` against exact attention.
//
// # Safety
// `keys` and `values` must hold `n * d` doubles; `q` and `z` `d`.
enum SubgenStatus subgen_spectral_error(const double *keys,
                                        const double *values,
                                        size_t n,
                                        size_t d,
                                        const double *q,
                                        const double *z,
                                        double *out_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUBGEN_H */
