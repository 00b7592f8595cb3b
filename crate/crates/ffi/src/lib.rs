//! C ABI for the sphere-sh spectral simulator.
//!
//! The surface follows the usual opaque-handle pattern: every object is
//! created behind a pointer by a `sphere_sh_*_new` constructor, passed back
//! through accessors, and released by the matching `sphere_sh_*_free`.
//! Every fallible call returns a [`SphereStatus`]; out-parameters are only
//! written on `SPHERE_STATUS_OK`. Free functions accept null and do nothing.
//! Mode indices are 1-based, matching the sine-basis labels e_{jk},
//! j = 1..modes_x, k = 1..modes_y.
//!
//! All handles passed to one call must descend from the same space handle;
//! mixing spaces is reported as `SPHERE_STATUS_INVALID_ARGUMENT`. The header
//! `include/sphere_sh.h` is generated from this file at build time.

use sphere_sh::diagnostics::{energy_identity_residuals, energy_y};
use sphere_sh::dynamics::{
    run_trajectory, DriftParams, DynamicsError, NoiseModel, NoisePath, Scheme, SchemeConfig,
};
use sphere_sh::manifold::gamma_identity_residuals;
use sphere_sh::montecarlo::{coarsen, generate_path};
use sphere_sh::spectral::{norm_h, norm_v, SpectralField, SpectralSpace};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

/// Call outcome. Out-parameters are written only on `SPHERE_STATUS_OK`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SphereStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was rejected (bad sizes, mixed spaces, bad parameters).
    InvalidArgument = 2,
    /// An explicit scheme was configured with dt·mu_max > 1.
    Unstable = 3,
    /// The trajectory left the finite range of f64.
    Overflow = 4,
    /// An internal invariant failed; the operation was abandoned.
    Internal = 5,
}

/// Time integrator selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SphereScheme {
    /// Explicit Euler–Maruyama on the Itô form.
    EmIto = 0,
    /// Exponential Euler–Maruyama on the Itô form (unconditionally stable).
    EmItoExponential = 1,
    /// Heun predictor–corrector on the Stratonovich form.
    HeunStrat = 2,
}

/// One trajectory request.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SphereRunOptions {
    /// Integrator.
    pub scheme: SphereScheme,
    /// Time step; explicit schemes additionally require dt·mu_max <= 1.
    pub dt: f64,
    /// Number of steps; the horizon is steps·dt.
    pub steps: usize,
    /// Linear coefficient a of the drift (its tangential part vanishes on
    /// the sphere).
    pub a: f64,
    /// Nonlinearity degree n (the polynomial term is u^(2n-1)); requires
    /// n >= 1 and n <= the space's dealiasing pad factor.
    pub n: u32,
    /// Project the state back to the unit sphere after every step.
    pub renormalize: bool,
    /// Truncation level m >= 1 for the path-norm gate, or 0 to disable it.
    pub truncation_level: f64,
    /// Seed of the counter-based Wiener increment generator.
    pub master_seed: u64,
    /// Path index within the seed's family.
    pub path_index: u64,
}

/// Scalar diagnostics of a completed trajectory.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SphereRunSummary {
    /// Sphere defect eta = |u|_H^2 - 1 at the final time.
    pub final_eta: f64,
    /// sup over all steps of |eta|.
    pub sup_abs_eta: f64,
    /// sup over all steps of the V-norm.
    pub sup_norm_v: f64,
    /// Energy Y(u(T)).
    pub final_energy: f64,
    /// V-norm of the final state.
    pub final_norm_v: f64,
}

/// Opaque discretization handle.
pub struct SphereSpace {
    inner: Arc<SpectralSpace>,
}

/// Opaque spectral field handle.
pub struct SphereField {
    inner: SpectralField,
}

/// Opaque noise model handle (the fixed directions f_k).
pub struct SphereNoise {
    inner: NoiseModel,
}

const VERSION: &[u8] = b"0.1.0\0";

fn dynamics_status(err: &DynamicsError) -> SphereStatus {
    match err {
        DynamicsError::StabilityViolation { .. } => SphereStatus::Unstable,
        DynamicsError::Overflow { .. } => SphereStatus::Overflow,
        _ => SphereStatus::InvalidArgument,
    }
}

fn guarded<F: FnOnce() -> SphereStatus>(body: F) -> SphereStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => SphereStatus::Internal,
    }
}

/// Version of the library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sphere_sh_version() -> *const c_char {
    VERSION.as_ptr() as *const c_char
}

/// Static name of a status code, e.g. "ok" or "overflow".
#[no_mangle]
pub extern "C" fn sphere_sh_status_name(status: SphereStatus) -> *const c_char {
    let name: &[u8] = match status {
        SphereStatus::Ok => b"ok\0",
        SphereStatus::NullPointer => b"null pointer\0",
        SphereStatus::InvalidArgument => b"invalid argument\0",
        SphereStatus::Unstable => b"unstable time step\0",
        SphereStatus::Overflow => b"overflow\0",
        SphereStatus::Internal => b"internal error\0",
    };
    name.as_ptr() as *const c_char
}

/// Creates a sine-basis discretization with `modes_x × modes_y` modes on the
/// rectangle (0,length_x) × (0,length_y) and the given dealiasing pad
/// factor (use 2 unless n > 2). On success writes a handle to `out`.
///
/// # Safety
/// `out` must be a valid pointer to pointer-sized writable storage.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_space_new(
    modes_x: usize,
    modes_y: usize,
    length_x: f64,
    length_y: f64,
    pad: usize,
    out: *mut *mut SphereSpace,
) -> SphereStatus {
    if out.is_null() {
        return SphereStatus::NullPointer;
    }
    guarded(|| match SpectralSpace::new(modes_x, modes_y, length_x, length_y, pad) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(SphereSpace { inner }));
            SphereStatus::Ok
        }
        Err(_) => SphereStatus::InvalidArgument,
    })
}

/// Releases a space handle; null is a no-op.
///
/// # Safety
/// `space` must be null or a pointer returned by `sphere_sh_space_new` that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_space_free(space: *mut SphereSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Writes the mode counts of the space.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_space_modes(
    space: *const SphereSpace,
    out_x: *mut usize,
    out_y: *mut usize,
) -> SphereStatus {
    if space.is_null() || out_x.is_null() || out_y.is_null() {
        return SphereStatus::NullPointer;
    }
    *out_x = (*space).inner.modes_x();
    *out_y = (*space).inner.modes_y();
    SphereStatus::Ok
}

/// Writes the largest eigenvalue mu_max of A on the space (the explicit
/// schemes require dt·mu_max <= 1).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_space_mu_max(
    space: *const SphereSpace,
    out: *mut f64,
) -> SphereStatus {
    if space.is_null() || out.is_null() {
        return SphereStatus::NullPointer;
    }
    *out = (*space).inner.mu_max();
    SphereStatus::Ok
}

/// Creates the zero field on the space.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_field_new(
    space: *const SphereSpace,
    out: *mut *mut SphereField,
) -> SphereStatus {
    if space.is_null() || out.is_null() {
        return SphereStatus::NullPointer;
    }
    let inner = SpectralField::zeros(&(*space).inner);
    *out = Box::into_raw(Box::new(SphereField { inner }));
    SphereStatus::Ok
}

/// Creates a deep copy of a field.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_field_clone(
    field: *const SphereField,
    out: *mut *mut SphereField,
) -> SphereStatus {
    if field.is_null() || out.is_null() {
        return SphereStatus::NullPointer;
    }
    let inner = (*field).inner.clone();
    *out = Box::into_raw(Box::new(SphereField { inner }));
    SphereStatus::Ok
}

/// Releases a field handle; null is a no-op.
///
/// # Safety
/// `field` must be null or an unfreed pointer from this library.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_field_free(field: *mut SphereField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Sets the coefficient of mode (j,k), 1-based.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_field_set_coeff(
    field: *mut SphereField,
    j: usize,
    k: usize,
    value: f64,
) -> SphereStatus {
    if field.is_null() {
        return SphereStatus::NullPointer;
    }
    let f = &mut (*field).inner;
    let s = f.space().clone();
    if j == 0 || k == 0 || j > s.modes_x() || k > s.modes_y() || !value.is_finite() {
        return SphereStatus::InvalidArgument;
    }
    f.set_coeff(j, k, value);
    SphereStatus::Ok
}

/// Reads the coefficient of mode (j,k), 1-based.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_field_coeff(
    field: *const SphereField,
    j: usize,
    k: usize,
    out: *mut f64,
) -> SphereStatus {
    if field.is_null() || out.is_null() {
        return SphereStatus::NullPointer;
    }
    let f = &(*field).inner;
    let s = f.space();
    if j == 0 || k == 0 || j > s.modes_x() || k > s.modes_y() {
        return SphereStatus::InvalidArgument;
    }
    *out = f.coeff(j, k);
    SphereStatus::Ok
}

/// Copies all modes_x·modes_y coefficients into `buffer` in row-major order
/// (j outer, k inner); `len` must equal modes_x·modes_y.
///
/// # Safety
/// `buffer` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_field_coeffs(
    field: *const SphereField,
    buffer: *mut f64,
    len: usize,
) -> SphereStatus {
    if field.is_null() || buffer.is_null() {
        return SphereStatus::NullPointer;
    }
    let coeffs = (*field).inner.coeffs();
    if coeffs.len() != len {
        return SphereStatus::InvalidArgument;
    }
    std::ptr::copy_nonoverlapping(coeffs.as_ptr(), buffer, len);
    SphereStatus::Ok
}

/// Writes the L2 norm of the field.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_field_norm_h(
    field: *const SphereField,
    out: *mut f64,
) -> SphereStatus {
    if field.is_null() || out.is_null() {
        return SphereStatus::NullPointer;
    }
    *out = norm_h(&(*field).inner);
    SphereStatus::Ok
}

/// Writes the V-norm of the field.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_field_norm_v(
    field: *const SphereField,
    out: *mut f64,
) -> SphereStatus {
    if field.is_null() || out.is_null() {
        return SphereStatus::NullPointer;
    }
    *out = norm_v(&(*field).inner);
    SphereStatus::Ok
}

/// Rescales the field to unit L2 norm; fails on the zero field.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_field_normalize(field: *mut SphereField) -> SphereStatus {
    if field.is_null() {
        return SphereStatus::NullPointer;
    }
    let f = &mut (*field).inner;
    let nh = norm_h(f);
    if !(nh.is_finite() && nh > 0.0) {
        return SphereStatus::InvalidArgument;
    }
    f.scale(1.0 / nh);
    SphereStatus::Ok
}

/// Writes the energy Y(u) = ||u||_V^2/2 + ||u||_{L^{2n}}^{2n}/(2n).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_field_energy(
    field: *const SphereField,
    n: u32,
    out: *mut f64,
) -> SphereStatus {
    if field.is_null() || out.is_null() {
        return SphereStatus::NullPointer;
    }
    guarded(|| match energy_y(&(*field).inner, n) {
        Ok(y) => {
            *out = y;
            SphereStatus::Ok
        }
        Err(_) => SphereStatus::InvalidArgument,
    })
}

/// Creates a noise model from `count` field handles (the directions f_k).
/// The fields are copied; the handles stay owned by the caller. `count` may
/// be zero for a deterministic flow.
///
/// # Safety
/// `fields` must point to `count` valid field handles.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_noise_new(
    fields: *const *const SphereField,
    count: usize,
    out: *mut *mut SphereNoise,
) -> SphereStatus {
    if out.is_null() || (count > 0 && fields.is_null()) {
        return SphereStatus::NullPointer;
    }
    let mut cloned = Vec::with_capacity(count);
    for i in 0..count {
        let f = *fields.add(i);
        if f.is_null() {
            return SphereStatus::NullPointer;
        }
        cloned.push((*f).inner.clone());
    }
    guarded(|| match NoiseModel::new(cloned) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(SphereNoise { inner }));
            SphereStatus::Ok
        }
        Err(_) => SphereStatus::InvalidArgument,
    })
}

/// Releases a noise handle; null is a no-op.
///
/// # Safety
/// `noise` must be null or an unfreed pointer from this library.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_noise_free(noise: *mut SphereNoise) {
    if !noise.is_null() {
        drop(Box::from_raw(noise));
    }
}

/// Integrates one trajectory from `u0` under `options`, drawing Wiener
/// increments deterministically from (master_seed, path_index). On success
/// writes scalar diagnostics to `summary` and, when `final_state` is not
/// null, a new field handle holding u(T). Identical inputs produce bitwise
/// identical results.
///
/// # Safety
/// `u0`, `noise`, `options`, and `summary` must be valid; `final_state` may
/// be null.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_run_trajectory(
    u0: *const SphereField,
    noise: *const SphereNoise,
    options: *const SphereRunOptions,
    summary: *mut SphereRunSummary,
    final_state: *mut *mut SphereField,
) -> SphereStatus {
    if u0.is_null() || noise.is_null() || options.is_null() || summary.is_null() {
        return SphereStatus::NullPointer;
    }
    guarded(|| {
        let opts = *options;
        let state = &(*u0).inner;
        let model = &(*noise).inner;
        if opts.steps == 0 {
            return SphereStatus::InvalidArgument;
        }
        let params = match DriftParams::new(opts.a, opts.n) {
            Ok(p) => p,
            Err(_) => return SphereStatus::InvalidArgument,
        };
        let scheme = match opts.scheme {
            SphereScheme::EmIto => Scheme::EmIto,
            SphereScheme::EmItoExponential => Scheme::EmItoExponential,
            SphereScheme::HeunStrat => Scheme::HeunStrat,
        };
        let truncation = if opts.truncation_level == 0.0 {
            None
        } else {
            Some(opts.truncation_level)
        };
        let cfg = match SchemeConfig::new(
            scheme,
            opts.dt,
            opts.renormalize,
            truncation,
            opts.master_seed,
            state.space(),
        ) {
            Ok(c) => c,
            Err(e) => return dynamics_status(&e),
        };
        let path = if model.channels() == 0 {
            match NoisePath::zeros(0, opts.steps, opts.dt) {
                Ok(p) => p,
                Err(e) => return dynamics_status(&e),
            }
        } else {
            let grid = match generate_path(
                opts.master_seed,
                opts.path_index,
                model.channels(),
                opts.steps,
                opts.dt,
            ) {
                Ok(g) => g,
                Err(_) => return SphereStatus::InvalidArgument,
            };
            match coarsen(&grid, 0) {
                Ok(p) => p,
                Err(_) => return SphereStatus::InvalidArgument,
            }
        };
        let diag = match run_trajectory(state, &params, &cfg, model, &path, opts.steps, &[]) {
            Ok(d) => d,
            Err(e) => return dynamics_status(&e),
        };
        *summary = SphereRunSummary {
            final_eta: *diag.eta.last().expect("trajectory records are nonempty"),
            sup_abs_eta: diag.sup_abs_eta,
            sup_norm_v: diag.sup_norm_v,
            final_energy: *diag.energy_y.last().expect("trajectory records are nonempty"),
            final_norm_v: *diag.norm_v.last().expect("trajectory records are nonempty"),
        };
        if !final_state.is_null() {
            *final_state = Box::into_raw(Box::new(SphereField {
                inner: diag.final_state,
            }));
        }
        SphereStatus::Ok
    })
}

/// Writes the largest relative residual of the gamma- and energy-identity
/// suites evaluated at (f, u); small values (about 1e-12 and below) certify
/// a consistent build.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sphere_sh_identity_residual(
    f: *const SphereField,
    u: *const SphereField,
    n: u32,
    out: *mut f64,
) -> SphereStatus {
    if f.is_null() || u.is_null() || out.is_null() {
        return SphereStatus::NullPointer;
    }
    guarded(|| {
        let gamma = match gamma_identity_residuals(&(*f).inner, &(*u).inner, n) {
            Ok(g) => g,
            Err(_) => return SphereStatus::InvalidArgument,
        };
        let energy = match energy_identity_residuals(&(*f).inner, &(*u).inner, n) {
            Ok(e) => e,
            Err(_) => return SphereStatus::InvalidArgument,
        };
        *out = gamma.max().max(energy.max());
        SphereStatus::Ok
    })
}
