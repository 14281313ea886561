#ifndef CPNR_H
#define CPNR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CpnrStatus {
  CPNR_STATUS_OK = 0,
  CPNR_STATUS_NULL_POINTER = 1,
  CPNR_STATUS_INVALID_PARAMETER = 2,
  CPNR_STATUS_INVALID_MODEL = 3,
  CPNR_STATUS_INSUFFICIENT_DATA = 4,
  CPNR_STATUS_BUFFER_TOO_SMALL = 5,
  CPNR_STATUS_INTERNAL = 6,
} CpnrStatus;

/*
 Opaque fitted or user-supplied Markov chain.
 */
typedef struct CpnrModel CpnrModel;

/*
 One CPNR query. `h` is the zero-based current state.
 */
typedef struct CpnrParams {
  size_t h;
  double p0;
  double q0;
  double delta;
  double w;
  double rate;
  size_t horizon;
} CpnrParams;

typedef struct CpnrOutput {
  double prob_c;
  double prob_nc;
  double cpnr;
} CpnrOutput;

/*
 Search grid in hundredths, inclusive bounds.
 */
typedef struct CpnrGrid {
  uint32_t m_lo;
  uint32_t m_hi;
  uint32_t delta_lo;
  uint32_t delta_hi;
  uint32_t w_lo;
  uint32_t w_hi;
  double alpha;
} CpnrGrid;

/*
 Selected margin system; `found` is 0 when the indifference set is empty.
 */
typedef struct CpnrSelection {
  uint8_t found;
  double m;
  double delta;
  double w;
  double cpnr;
  size_t set_size;
} CpnrSelection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after a success.
 Valid until the next call into this library on the same thread.
 */
const char *cpnr_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *cpnr_version(void);

/*
 Fits a chain on `len` closes grouping every `group_size` distinct prices.

 # Safety
 `closes` must be valid for `len` reads; `out` must be writable.
 */
enum CpnrStatus cpnr_model_from_prices(const double *closes,
                                       size_t len,
                                       size_t group_size,
                                       struct CpnrModel **out);

/*
 Builds a chain from `n` ascending representatives and a row-major `n×n`
 row-stochastic matrix.

 # Safety
 `reps` must be valid for `n` reads, `matrix` for `n*n`; `out` writable.
 */
enum CpnrStatus cpnr_model_from_matrix(const double *reps,
                                       size_t n,
                                       const double *matrix,
                                       struct CpnrModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must be null or a handle from this library not yet freed.
 */
void cpnr_model_free(struct CpnrModel *model);

/*
 # Safety
 `model` must be a live handle and `out` writable.
 */
enum CpnrStatus cpnr_model_n_states(const struct CpnrModel *model, size_t *out);

/*
 Zero-based state containing `price`.

 # Safety
 `model` must be a live handle and `out` writable.
 */
enum CpnrStatus cpnr_model_state_of(const struct CpnrModel *model, double price, size_t *out);

/*
 Copies the state representatives into `out` (capacity `cap`).

 # Safety
 `model` must be a live handle; `out` valid for `cap` writes.
 */
enum CpnrStatus cpnr_model_reps(const struct CpnrModel *model, double *out, size_t cap);

/*
 CPNR and its totals. `per_day_c` / `per_day_nc` may be null; when given
 they must hold `per_day_len >= horizon` values and receive the daily terms.

 # Safety
 Pointers must be valid as described.
 */
enum CpnrStatus cpnr_compute(const struct CpnrModel *model,
                             const struct CpnrParams *params,
                             struct CpnrOutput *out,
                             double *per_day_c,
                             double *per_day_nc,
                             size_t per_day_len);

/*
 Exact first-passage counterpart of `cpnr_compute`, for diagnostics.

 # Safety
 `model` must be a live handle, `params` readable, `out` writable.
 */
enum CpnrStatus cpnr_exact_first_passage(const struct CpnrModel *model,
                                         const struct CpnrParams *params,
                                         struct CpnrOutput *out);

/*
 Fills `out` with the default grid: m, δ in [0, 0.80], w in [1, 2], alpha 0.05.

 # Safety
 `out` must be writable.
 */
enum CpnrStatus cpnr_grid_default(struct CpnrGrid *out);

/*
 Deduces the least-squares margin system from the indifference set.

 # Safety
 `model` must be a live handle, `grid` readable, `out` writable.
 */
enum CpnrStatus cpnr_optimize(const struct CpnrModel *model,
                              size_t h,
                              double p0,
                              double rate,
                              size_t horizon,
                              const struct CpnrGrid *grid,
                              struct CpnrSelection *out);

/*
 Smallest grid `w` with CPNR at or below `grid.alpha` for fixed `q0`, `delta`.
 `found` is set to 0 when no grid point qualifies.

 # Safety
 `model` must be a live handle, `grid` readable, `out_w` and `found` writable.
 */
enum CpnrStatus cpnr_min_maintenance(const struct CpnrModel *model,
                                     size_t h,
                                     double p0,
                                     double q0,
                                     double delta,
                                     double rate,
                                     size_t horizon,
                                     const struct CpnrGrid *grid,
                                     double *out_w,
                                     uint8_t *found);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPNR_H */
