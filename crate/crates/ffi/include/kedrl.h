#ifndef KEDRL_H
#define KEDRL_H

/* Generated by cbindgen from the kedrl-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirrored from the library's error taxonomy.
 */
typedef enum KedrlStatus {
  KedrlStatus_Ok = 0,
  KedrlStatus_InvalidInput = 2,
  KedrlStatus_Numerical = 3,
  KedrlStatus_Io = 4,
  KedrlStatus_NullPointer = 5,
  KedrlStatus_Panic = 6,
} KedrlStatus;

/**
 * Opaque fitted-model handle.
 */
typedef struct KedrlModel KedrlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *kedrl_last_error_message(void);

/**
 * Library version as a static C string.
 */
const char *kedrl_version(void);

/**
 * Matérn kernel value at a distance.
 *
 * # Safety
 * `out` must point to writable memory for one f64.
 */
enum KedrlStatus kedrl_matern_eval(double nu,
                                   double length_scale,
                                   double variance,
                                   double distance,
                                   double *out);

/**
 * Lipschitz constant of the embedding map (requires nu > 1).
 *
 * # Safety
 * `out` must point to writable memory for one f64.
 */
enum KedrlStatus kedrl_lipschitz_constant(double nu,
                                          double length_scale,
                                          double variance,
                                          double *out);

/**
 * Load a fitted model from its JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable. A
 * non-null handle written to `out` must be released with
 * [`kedrl_model_free`].
 */
enum KedrlStatus kedrl_model_load(const char *path, struct KedrlModel **out);

/**
 * Release a model handle. Passing null is a no-op.
 *
 * # Safety
 * `model` must be a pointer previously returned by [`kedrl_model_load`]
 * and not yet freed.
 */
void kedrl_model_free(struct KedrlModel *model);

/**
 * Number of return-grid atoms (the length of the weight vector).
 *
 * # Safety
 * `model` must be a live handle from [`kedrl_model_load`].
 */
size_t kedrl_model_atom_count(const struct KedrlModel *model);

/**
 * Dimensions of the model: state-action input length and return dimension.
 *
 * # Safety
 * All pointers must be valid; `model` must be a live handle.
 */
enum KedrlStatus kedrl_model_dims(const struct KedrlModel *model,
                                  size_t *input_dim,
                                  size_t *return_dim);

/**
 * Atom weights omega(s,a) at a query; writes `atom_count` values.
 *
 * # Safety
 * `query` must point to `query_len` f64s and `out` to `atom_count`
 * writable f64s (see [`kedrl_model_atom_count`]).
 */
enum KedrlStatus kedrl_model_omega(const struct KedrlModel *model,
                                   const double *query,
                                   size_t query_len,
                                   double *out);

/**
 * Fitted embedding values at return-space points (row-major
 * `n_points x return_dim`); writes `n_points` values.
 *
 * # Safety
 * `query`, `points` and `out` must be valid for the stated lengths.
 */
enum KedrlStatus kedrl_model_embedding_values(const struct KedrlModel *model,
                                              const double *query,
                                              size_t query_len,
                                              const double *points,
                                              size_t n_points,
                                              double *out);

/**
 * Recovered total mass sum_i omega_i at a query.
 *
 * # Safety
 * `query` must point to `query_len` f64s and `out` to one writable f64.
 */
enum KedrlStatus kedrl_model_recovered_mass(const struct KedrlModel *model,
                                            const double *query,
                                            size_t query_len,
                                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KEDRL_H */
