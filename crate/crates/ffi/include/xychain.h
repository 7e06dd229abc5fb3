#ifndef XYCHAIN_H
#define XYCHAIN_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define XY_SECTOR_NS 0

#define XY_SECTOR_R 1

#define XY_QUANTITY_DELTA_E 0

#define XY_QUANTITY_RICCI_NS 1

#define XY_QUANTITY_RICCI_R 2

#define XY_QUANTITY_DELTA_RICCI 3

#define XY_MODEL_EXPONENTIAL 0

#define XY_MODEL_POWERLAW 1

#define XY_MODEL_BIEXPONENTIAL 2

#define XY_MODEL_ERRATIC 3

/**
 * Status codes. Zero is success.
 */
typedef enum XyStatus {
  XY_STATUS_OK = 0,
  XY_STATUS_NULL_POINTER = 1,
  XY_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Gapless mode, degenerate metric or similar pointwise singularity.
   */
  XY_STATUS_SINGULAR = 3,
  /**
   * Request exceeds a size limit (e.g. exact diagonalization length).
   */
  XY_STATUS_CAPACITY = 4,
  XY_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * Not enough data or no acceptable model.
   */
  XY_STATUS_FIT = 6,
  XY_STATUS_PANIC = 99,
} XyStatus;

/**
 * Opaque chain parameters.
 */
typedef struct XyChain XyChain;

typedef struct XyQgt {
  double q_hh;
  double q_gg;
  double q_hg;
  double omega_hg;
} XyQgt;

typedef struct XyRicci {
  double r_determinant;
  double r_christoffel;
  double discrepancy;
  /**
   * Nonzero when the curvature stencil hit a gapless line.
   */
  int32_t singular;
} XyRicci;

typedef struct XyFit {
  /**
   * One of the `XY_MODEL_*` constants.
   */
  int32_t model;
  /**
   * Second entries are NaN unless the model is bi-exponential.
   */
  double exponent[2];
  double r_squared[2];
  size_t window_min;
  size_t window_max;
} XyFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *xy_version(void);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL, or
 * 0 when there is no error. `buf` may be NULL to query the length.
 *
 * # Safety
 * `buf` must be NULL or valid for `len` bytes.
 */
size_t xy_last_error_message(char *buf, size_t len);

/**
 * Create a chain handle. Free it with [`xy_chain_free`].
 *
 * # Safety
 * `out` must be valid for writing one pointer.
 */
enum XyStatus xy_chain_new(size_t l, double j, double gamma, double h, struct XyChain **out);

/**
 * # Safety
 * `chain` must be NULL or a handle from [`xy_chain_new`] not yet freed.
 */
void xy_chain_free(struct XyChain *chain);

/**
 * Ground energy of one sector.
 *
 * # Safety
 * `chain` must be a live handle and `out` valid for one double.
 */
enum XyStatus xy_ground_energy(const struct XyChain *chain, int32_t sector_id, double *out);

/**
 * NS minus R ground energy.
 *
 * # Safety
 * `chain` must be a live handle and `out` valid for one double.
 */
enum XyStatus xy_delta_e(const struct XyChain *chain, double *out);

/**
 * Single-particle energies of a sector, k = 1..L, into `energies[0..L]`.
 * Returns `BufferTooSmall` when `len < L`.
 *
 * # Safety
 * `chain` must be a live handle and `energies` valid for `len` doubles.
 */
enum XyStatus xy_spectrum(const struct XyChain *chain,
                          int32_t sector_id,
                          double *energies,
                          size_t len);

/**
 * Quantum geometric tensor of one sector.
 *
 * # Safety
 * `chain` must be a live handle and `out` valid for one [`XyQgt`].
 */
enum XyStatus xy_qgt(const struct XyChain *chain, int32_t sector_id, struct XyQgt *out);

/**
 * Ricci scalar of one sector by both methods.
 *
 * # Safety
 * `chain` must be a live handle and `out` valid for one [`XyRicci`].
 */
enum XyStatus xy_ricci(const struct XyChain *chain, int32_t sector_id, struct XyRicci *out);

/**
 * Ground-state case (1..5) from exact diagonalization; L ≤ 13.
 *
 * # Safety
 * `chain` must be a live handle and `out` valid for one int.
 */
enum XyStatus xy_classify_case(const struct XyChain *chain, int32_t *out);

/**
 * Build a size series of `quantity` at (γ, h) over `ls[0..n]` and pick its
 * decay model.
 *
 * # Safety
 * `ls` must be valid for `n` values and `out` for one [`XyFit`].
 */
enum XyStatus xy_fit_decay(int32_t quantity,
                           double gamma,
                           double h,
                           const size_t *ls,
                           size_t n,
                           struct XyFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* XYCHAIN_H */
