#ifndef MMV_H
#define MMV_H

/* Generated by cbindgen from mmv-capi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every fallible call; 0 is success.
 */
typedef enum MmvStatus {
  MmvStatus_Ok = 0,
  MmvStatus_NullPointer = 1,
  MmvStatus_InvalidArgument = 2,
  MmvStatus_RuntimeError = 3,
  MmvStatus_Utf8Error = 4,
} MmvStatus;

/**
 * Opaque weighted empirical measure.
 */
typedef struct MmvMeasure MmvMeasure;

/**
 * Opaque model (coefficients + regularity metadata).
 */
typedef struct MmvModel MmvModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns the last error message of this thread as a newly allocated
 * string, or NULL if none; free with `mmv_string_free`.
 */
char *mmv_last_error_message(void);

/**
 * Frees a string returned by this library. NULL is a no-op.
 */
void mmv_string_free(char *s);

/**
 * Builds an equally weighted measure from a flat row-major atom array of
 * `len` points in dimension `dim`. Returns NULL on error.
 *
 * # Safety
 * `atoms` must point to `len * dim` readable doubles.
 */
struct MmvMeasure *mmv_measure_from_points(uintptr_t dim, const double *atoms, uintptr_t len);

/**
 * Loads a measure from the CSV format written by `mmv_measure_to_csv`.
 * Returns NULL on error.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct MmvMeasure *mmv_measure_from_csv(const char *path);

/**
 * Writes a measure as CSV (`w,x1..xd` rows).
 *
 * # Safety
 * `m` must be a live handle; `path` a valid NUL-terminated string.
 */
enum MmvStatus mmv_measure_to_csv(const struct MmvMeasure *m, const char *path);

/**
 * Number of atoms.
 *
 * # Safety
 * `m` must be a live handle.
 */
uintptr_t mmv_measure_len(const struct MmvMeasure *m);

/**
 * Dimension of the atoms.
 *
 * # Safety
 * `m` must be a live handle.
 */
uintptr_t mmv_measure_dim(const struct MmvMeasure *m);

/**
 * Writes the barycenter into `out` (length = dimension).
 *
 * # Safety
 * `m` must be a live handle; `out` must hold `mmv_measure_dim(m)` doubles.
 */
enum MmvStatus mmv_measure_mean(const struct MmvMeasure *m, double *out);

/**
 * Frees a measure handle. NULL is a no-op.
 *
 * # Safety
 * `m` must be NULL or a handle not freed before.
 */
void mmv_measure_free(struct MmvMeasure *m);

/**
 * 2-Wasserstein distance between two measures, written to `out`.
 *
 * # Safety
 * `a`, `b` must be live handles; `out` a writable double.
 */
enum MmvStatus mmv_w2(const struct MmvMeasure *a, const struct MmvMeasure *b, double *out);

/**
 * Weighted total-variation distance with weight `1 + |y|^p`, written to
 * `out`.
 *
 * # Safety
 * `a`, `b` must be live handles; `out` a writable double.
 */
enum MmvStatus mmv_rho_v(const struct MmvMeasure *a,
                         const struct MmvMeasure *b,
                         double p,
                         double *out);

/**
 * Builds a model from the JSON `model` block (builtin reference or explicit
 * coefficient table). Returns NULL on error.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string.
 */
struct MmvModel *mmv_model_from_json(const char *json);

/**
 * Runs the model assumption checks; `out_pass` receives 1 if all pass.
 *
 * # Safety
 * `m` must be a live handle; `out_pass` a writable int.
 */
enum MmvStatus mmv_model_check(const struct MmvModel *m, int32_t *out_pass);

/**
 * Frees a model handle. NULL is a no-op.
 *
 * # Safety
 * `m` must be NULL or a handle not freed before.
 */
void mmv_model_free(struct MmvModel *m);

/**
 * Runs a coupled simulation described by a full run-configuration JSON
 * string and returns the terminal slow law as a new measure handle; NULL on
 * error.
 *
 * # Safety
 * `config_json` must be a valid NUL-terminated string.
 */
struct MmvMeasure *mmv_simulate_terminal(const char *config_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMV_H */
