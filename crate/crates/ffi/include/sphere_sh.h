#ifndef SPHERE_SH_H
#define SPHERE_SH_H

/* Generated by cbindgen from sphere-sh-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Call outcome. Out-parameters are written only on `SPHERE_STATUS_OK`.
typedef enum SphereStatus {
  // The call succeeded.
  SPHERE_STATUS_OK = 0,
  // A required pointer argument was null.
  SPHERE_STATUS_NULL_POINTER = 1,
  // An argument was rejected (bad sizes, mixed spaces, bad parameters).
  SPHERE_STATUS_INVALID_ARGUMENT = 2,
  // An explicit scheme was configured with dt·mu_max > 1.
  SPHERE_STATUS_UNSTABLE = 3,
  // The trajectory left the finite range of f64.
  SPHERE_STATUS_OVERFLOW = 4,
  // An internal invariant failed; the operation was abandoned.
  SPHERE_STATUS_INTERNAL = 5,
} SphereStatus;

// Time integrator selector.
typedef enum SphereScheme {
  // Explicit Euler–Maruyama on the Itô form.
  SPHERE_SCHEME_EM_ITO = 0,
  // Exponential Euler–Maruyama on the Itô form (unconditionally stable).
  SPHERE_SCHEME_EM_ITO_EXPONENTIAL = 1,
  // Heun predictor–corrector on the Stratonovich form.
  SPHERE_SCHEME_HEUN_STRAT = 2,
} SphereScheme;

// Opaque spectral field handle.
typedef struct SphereField SphereField;

// Opaque noise model handle (the fixed directions f_k).
typedef struct SphereNoise SphereNoise;

// Opaque discretization handle.
typedef struct SphereSpace SphereSpace;

// One trajectory request.
typedef struct SphereRunOptions {
  // Integrator.
  enum SphereScheme scheme;
  // Time step; explicit schemes additionally require dt·mu_max <= 1.
  double dt;
  // Number of steps; the horizon is steps·dt.
  size_t steps;
  // Linear coefficient a of the drift (its tangential part vanishes on
  // the sphere).
  double a;
  // Nonlinearity degree n (the polynomial term is u^(2n-1)); requires
  // n >= 1 and n <= the space's dealiasing pad factor.
  uint32_t n;
  // Project the state back to the unit sphere after every step.
  bool renormalize;
  // Truncation level m >= 1 for the path-norm gate, or 0 to disable it.
  double truncation_level;
  // Seed of the counter-based Wiener increment generator.
  uint64_t master_seed;
  // Path index within the seed's family.
  uint64_t path_index;
} SphereRunOptions;

// Scalar diagnostics of a completed trajectory.
typedef struct SphereRunSummary {
  // Sphere defect eta = |u|_H^2 - 1 at the final time.
  double final_eta;
  // sup over all steps of |eta|.
  double sup_abs_eta;
  // sup over all steps of the V-norm.
  double sup_norm_v;
  // Energy Y(u(T)).
  double final_energy;
  // V-norm of the final state.
  double final_norm_v;
} SphereRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version of the library as a static NUL-terminated string.
const char *sphere_sh_version(void);

// Static name of a status code, e.g. "ok" or "overflow".
const char *sphere_sh_status_name(enum SphereStatus status);

// Creates a sine-basis discretization with `modes_x × modes_y` modes on the
// rectangle (0,length_x) × (0,length_y) and the given dealiasing pad
// factor (use 2 unless n > 2). On success writes a handle to `out`.
//
// # Safety
// `out` must be a valid pointer to pointer-sized writable storage.
enum SphereStatus sphere_sh_space_new(size_t modes_x,
                                      size_t modes_y,
                                      double length_x,
                                      double length_y,
                                      size_t pad,
                                      struct SphereSpace **out);

// Releases a space handle; null is a no-op.
//
// # Safety
// `space` must be null or a pointer returned by `sphere_sh_space_new` that
// has not been freed yet.
void sphere_sh_space_free(struct SphereSpace *space);

// Writes the mode counts of the space.
//
// # Safety
// All pointers must be valid.
enum SphereStatus sphere_sh_space_modes(const struct SphereSpace *space,
                                        size_t *out_x,
                                        size_t *out_y);

// Writes the largest eigenvalue mu_max of A on the space (the explicit
// schemes require dt·mu_max <= 1).
//
// # Safety
// All pointers must be valid.
enum SphereStatus sphere_sh_space_mu_max(const struct SphereSpace *space, double *out);

// Creates the zero field on the space.
//
// # Safety
// All pointers must be valid.
enum SphereStatus sphere_sh_field_new(const struct SphereSpace *space, struct SphereField **out);

// Creates a deep copy of a field.
//
// # Safety
// All pointers must be valid.
enum SphereStatus sphere_sh_field_clone(const struct SphereField *field, struct SphereField **out);

// Releases a field handle; null is a no-op.
//
// # Safety
// `field` must be null or an unfreed pointer from this library.
void sphere_sh_field_free(struct SphereField *field);

// Sets the coefficient of mode (j,k), 1-based.
//
// # Safety
// All pointers must be valid.
enum SphereStatus sphere_sh_field_set_coeff(struct SphereField *field,
                                            size_t j,
                                            size_t k,
                                            double value);

// Reads the coefficient of mode (j,k), 1-based.
//
// # Safety
// All pointers must be valid.
enum SphereStatus sphere_sh_field_coeff(const struct SphereField *field,
                                        size_t j,
                                        size_t k,
                                        double *out);

// Copies all modes_x·modes_y coefficients into `buffer` in row-major order
// (j outer, k inner); `len` must equal modes_x·modes_y.
//
// # Safety
// `buffer` must point to `len` writable doubles.
enum SphereStatus sphere_sh_field_coeffs(const struct SphereField *field,
                                         double *buffer,
                                         size_t len);

// Writes the L2 norm of the field.
//
// # Safety
// All pointers must be valid.
enum SphereStatus sphere_sh_field_norm_h(const struct SphereField *field, double *out);

// Writes the V-norm of the field.
//
// # Safety
// All pointers must be valid.
enum SphereStatus sphere_sh_field_norm_v(const struct SphereField *field, double *out);

// Rescales the field to unit L2 norm; fails on the zero field.
//
// # Safety
// All pointers must be valid.
enum SphereStatus sphere_sh_field_normalize(struct SphereField *field);

// Writes the energy Y(u) = ||u||_V^2/2 + ||u||_{L^{2n}}^{2n}/(2n).
//
// # Safety
// All pointers must be valid.
enum SphereStatus sphere_sh_field_energy(const struct SphereField *field, uint32_t n, double *out);

// Creates a noise model from `count` field handles (the directions f_k).
// The fields are copied; the handles stay owned by the caller. `count` may
// be zero for a deterministic flow.
//
// # Safety
// `fields` must point to `count` valid field handles.
enum SphereStatus sphere_sh_noise_new(const struct SphereField *const *fields,
                                      size_t count,
                                      struct SphereNoise **out);

// Releases a noise handle; null is a no-op.
//
// # Safety
// `noise` must be null or an unfreed pointer from this library.
void sphere_sh_noise_free(struct SphereNoise *noise);

// Integrates one trajectory from `u0` under `options`, drawing Wiener
// increments deterministically from (master_seed, path_index). On success
// writes scalar diagnostics to `summary` and, when `final_state` is not
// null, a new field handle holding u(T). Identical inputs produce bitwise
// identical results.
//
// # Safety
// `u0`, `noise`, `options`, and `summary` must be valid; `final_state` may
// be null.
enum SphereStatus sphere_sh_run_trajectory(const struct SphereField *u0,
                                           const struct SphereNoise *noise,
                                           const struct SphereRunOptions *options,
                                           struct SphereRunSummary *summary,
                                           struct SphereField **final_state);

// Writes the largest relative residual of the gamma- and energy-identity
// suites evaluated at (f, u); small values (about 1e-12 and below) certify
// a consistent build.
//
// # Safety
// All pointers must be valid.
enum SphereStatus sphere_sh_identity_residual(const struct SphereField *f,
                                              const struct SphereField *u,
                                              uint32_t n,
                                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPHERE_SH_H */
