#ifndef SPECHP_H
#define SPECHP_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum SpecStatus {
  SPEC_STATUS_OK = 0,
  SPEC_STATUS_NULL_POINTER = 1,
  SPEC_STATUS_INVALID_ARGUMENT = 2,
  SPEC_STATUS_SIZE_MISMATCH = 3,
  SPEC_STATUS_INTERNAL = 4,
} SpecStatus;

typedef enum SpecBasisType {
  SPEC_BASIS_TYPE_MODIFIED_A = 0,
  SPEC_BASIS_TYPE_LAGRANGE_GLL = 1,
} SpecBasisType;

typedef enum SpecPointsType {
  SPEC_POINTS_TYPE_GAUSS_LEGENDRE = 0,
  SPEC_POINTS_TYPE_GAUSS_LOBATTO_LEGENDRE = 1,
  SPEC_POINTS_TYPE_GAUSS_RADAU_MINUS_LEGENDRE = 2,
} SpecPointsType;

/**
 * Opaque tensor-product expansion on the reference square.
 */
typedef struct SpecStdQuadExp SpecStdQuadExp;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after a success).
 * The pointer stays valid until the next call on this thread.
 */
const char *spec_last_error_message(void);

/**
 * Creates a quadrilateral expansion with the same basis and points key in
 * both directions; `num_modes` counts modes per direction.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum SpecStatus spec_quad_new(enum SpecBasisType basis,
                              size_t num_modes,
                              enum SpecPointsType points,
                              size_t num_points,
                              struct SpecStdQuadExp **out);

/**
 * Releases a handle from [`spec_quad_new`]; null is ignored.
 *
 * # Safety
 * `h` must be null or a handle that has not been freed yet.
 */
void spec_quad_free(struct SpecStdQuadExp *h);

/**
 * Number of modal coefficients (0 for a null handle).
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t spec_quad_num_coeffs(const struct SpecStdQuadExp *h);

/**
 * Number of quadrature points (0 for a null handle).
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t spec_quad_num_points(const struct SpecStdQuadExp *h);

/**
 * Writes the quadrature point coordinates into `x` and `y` (`len` each).
 *
 * # Safety
 * `h` must be a live handle; `x` and `y` must point to `len` writable doubles.
 */
enum SpecStatus spec_quad_get_coords(const struct SpecStdQuadExp *h,
                                     double *x,
                                     double *y,
                                     size_t len);

/**
 * Galerkin projection of point values onto the modal coefficients.
 *
 * # Safety
 * `h` must be a live handle; `phys` must hold `nphys` readable doubles and
 * `coeffs` `ncoeffs` writable doubles.
 */
enum SpecStatus spec_quad_fwd_trans(const struct SpecStdQuadExp *h,
                                    const double *phys,
                                    size_t nphys,
                                    double *coeffs,
                                    size_t ncoeffs);

/**
 * Evaluates modal coefficients at the quadrature points.
 *
 * # Safety
 * `h` must be a live handle; `coeffs` must hold `ncoeffs` readable doubles
 * and `phys` `nphys` writable doubles.
 */
enum SpecStatus spec_quad_bwd_trans(const struct SpecStdQuadExp *h,
                                    const double *coeffs,
                                    size_t ncoeffs,
                                    double *phys,
                                    size_t nphys);

/**
 * Quadrature integral of point values over the reference square.
 *
 * # Safety
 * `h` must be a live handle; `phys` must hold `nphys` readable doubles and
 * `result` must be writable.
 */
enum SpecStatus spec_quad_integral(const struct SpecStdQuadExp *h,
                                   const double *phys,
                                   size_t nphys,
                                   double *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECHP_H */
