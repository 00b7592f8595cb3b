//! Geometry of the unit sphere M = {u ∈ H : |u|_H = 1}.
//!
//! The tangent space at u is T_uM = {h : ⟨h,u⟩ = 0} with orthogonal
//! projection π_u(h) = h − ⟨h,u⟩u. A noise direction f acts through the
//! projected diffusion field
//!
//! ```text
//! B(u) = π_u(f) = f − ⟨f,u⟩u,
//! ```
//!
//! whose Fréchet derivative is d_uB(s) = −⟨f,u⟩s − ⟨f,s⟩u, giving the Itô
//! correction m(u) = d_uB(B(u)) = −⟨f,B(u)⟩u − ⟨f,u⟩B(u). The constraint
//! functional γ(u) = ½|u|²_H has dγ_u(p) = ⟨u,p⟩ and d²γ(p₁,p₂) = ⟨p₁,p₂⟩,
//! and four closed-form pairing identities (valid for every u ∈ H, not only
//! on the sphere) tie the geometry to the drift:
//!
//! ```text
//! ⟨u, B(u)⟩        = ⟨u,f⟩(1 − |u|²),
//! ⟨B(u), B(u)⟩     = |f|² + ⟨f,u⟩²(|u|² − 2),
//! ⟨u, m(u)⟩        = −|u|²|f|² + ⟨f,u⟩²(2|u|² − 1),
//! ⟨u, −Au + F(u)⟩  = (‖u‖²_{H²₀} + 2‖u‖²_{H¹₀} + ‖u‖^{2n}_{L^{2n}})(|u|² − 1).
//! ```
//!
//! The module also exposes the local Lipschitz moduli of F and of the
//! correction map u ↦ m(u) as testable bounds.

use crate::dynamics::nonlinear_f;
use crate::spectral::{
    apply_a, inner_h, norm_h, norm_v, seminorm_h10, seminorm_h20, SpectralError, SpectralField,
};

fn ip(a: &SpectralField, b: &SpectralField) -> f64 {
    inner_h(a, b).expect("fields must share a spectral space")
}

/// Orthogonal splitting of h at the base point u: h = tangential + ⟨h,u⟩u.
#[derive(Debug, Clone)]
pub struct TangentDecomposition {
    pub tangential: SpectralField,
    /// ⟨h,u⟩, the component along the base point.
    pub radial_coefficient: f64,
}

impl TangentDecomposition {
    /// Reassembles tangential + radial_coefficient·u.
    pub fn reconstruct(&self, u: &SpectralField) -> SpectralField {
        let mut out = self.tangential.clone();
        out.add_scaled(u, self.radial_coefficient)
            .expect("decomposition and base point share a space");
        out
    }
}

/// Splits h into its tangential part at u and the radial coefficient ⟨h,u⟩.
pub fn decompose_tangent(u: &SpectralField, h: &SpectralField) -> TangentDecomposition {
    let radial_coefficient = ip(h, u);
    let mut tangential = h.clone();
    tangential
        .add_scaled(u, -radial_coefficient)
        .expect("fields must share a spectral space");
    TangentDecomposition {
        tangential,
        radial_coefficient,
    }
}

/// π_u(h) = h − ⟨h,u⟩u. For |u|_H = 1 the output is orthogonal to u and the
/// map is idempotent.
pub fn project_tangent(u: &SpectralField, h: &SpectralField) -> SpectralField {
    decompose_tangent(u, h).tangential
}

/// Diffusion field B(u) = π_u(f) = f − ⟨f,u⟩u.
pub fn diffusion_b(f: &SpectralField, u: &SpectralField) -> SpectralField {
    project_tangent(u, f)
}

/// Fréchet derivative of u ↦ B(u) in the direction s:
/// d_uB(s) = −⟨f,u⟩s − ⟨f,s⟩u.
pub fn frechet_db(f: &SpectralField, u: &SpectralField, s: &SpectralField) -> SpectralField {
    let fu = ip(f, u);
    let fs = ip(f, s);
    let mut out = s.scaled(-fu);
    out.add_scaled(u, -fs)
        .expect("fields must share a spectral space");
    out
}

/// Itô correction m(u) = d_uB(B(u)) = −⟨f,u⟩B(u) − ⟨f,B(u)⟩u, assembled so
/// that it reproduces `frechet_db(f, u, diffusion_b(f, u))` bitwise.
pub fn ito_correction_m(f: &SpectralField, u: &SpectralField) -> SpectralField {
    let b = diffusion_b(f, u);
    let fu = ip(f, u);
    let fb = ip(f, &b);
    let mut out = b.scaled(-fu);
    out.add_scaled(u, -fb)
        .expect("fields must share a spectral space");
    out
}

/// Constraint functional γ(u) = ½|u|²_H; equals ½ exactly on the sphere.
pub fn gamma(u: &SpectralField) -> f64 {
    let n = norm_h(u);
    0.5 * n * n
}

/// First variation pairing dγ_u(p) = ⟨u,p⟩.
pub fn dgamma_pair(u: &SpectralField, p: &SpectralField) -> f64 {
    ip(u, p)
}

/// Second variation pairing d²γ(p₁,p₂) = ⟨p₁,p₂⟩ (independent of u).
pub fn d2gamma_pair(p1: &SpectralField, p2: &SpectralField) -> f64 {
    ip(p1, p2)
}

/// Relative residuals of the four constraint-pairing identities, each scaled
/// by the largest magnitude entering either side (floored at 1).
#[derive(Debug, Clone, Copy)]
pub struct GammaIdentityResiduals {
    /// ⟨u,B(u)⟩ against ⟨u,f⟩(1 − |u|²).
    pub radial_noise: f64,
    /// ⟨B(u),B(u)⟩ against |f|² + ⟨f,u⟩²(|u|² − 2).
    pub noise_quadratic: f64,
    /// ⟨u,m(u)⟩ against −|u|²|f|² + ⟨f,u⟩²(2|u|² − 1).
    pub radial_correction: f64,
    /// ⟨u,−Au+F(u)⟩ against (‖u‖²_{H²₀} + 2‖u‖²_{H¹₀} + ‖u‖^{2n})(|u|² − 1).
    pub radial_drift: f64,
}

impl GammaIdentityResiduals {
    pub fn max(&self) -> f64 {
        self.radial_noise
            .max(self.noise_quadratic)
            .max(self.radial_correction)
            .max(self.radial_drift)
    }
}

pub(crate) fn rel_residual(lhs: f64, rhs: f64, magnitudes: &[f64]) -> f64 {
    let scale = magnitudes
        .iter()
        .fold(1.0f64.max(lhs.abs()).max(rhs.abs()), |a, m| a.max(m.abs()));
    (lhs - rhs).abs() / scale
}

/// Evaluates the four identities of the module doc at an arbitrary state u
/// (on or off the sphere), assembling each left side from the primitive
/// operations and each right side from its closed form. `n` is the
/// nonlinearity degree entering the drift identity.
pub fn gamma_identity_residuals(
    f: &SpectralField,
    u: &SpectralField,
    n: u32,
) -> Result<GammaIdentityResiduals, SpectralError> {
    let b = diffusion_b(f, u);
    let m = ito_correction_m(f, u);
    let uu = {
        let nh = norm_h(u);
        nh * nh
    };
    let fu = ip(f, u);
    let ff = {
        let nf = norm_h(f);
        nf * nf
    };

    let radial_noise = rel_residual(
        dgamma_pair(u, &b),
        fu * (1.0 - uu),
        &[fu, fu * uu],
    );

    let noise_quadratic = rel_residual(
        d2gamma_pair(&b, &b),
        ff + fu * fu * (uu - 2.0),
        &[ff, fu * fu * (uu + 2.0)],
    );

    let radial_correction = rel_residual(
        dgamma_pair(u, &m),
        -uu * ff + fu * fu * (2.0 * uu - 1.0),
        &[uu * ff, fu * fu * (2.0 * uu + 1.0)],
    );

    let drift = {
        let mut d = apply_a(u);
        d.scale(-1.0);
        d.add_scaled(&nonlinear_f(u, n)?, 1.0)?;
        d
    };
    let h10 = seminorm_h10(u);
    let h20 = seminorm_h20(u);
    let l2n = crate::spectral::l2n_power(u, n)?;
    let prefactor = h20 * h20 + 2.0 * h10 * h10 + l2n;
    let radial_drift = rel_residual(
        dgamma_pair(u, &drift),
        prefactor * (uu - 1.0),
        &[prefactor * uu, prefactor],
    );

    Ok(GammaIdentityResiduals {
        radial_noise,
        noise_quadratic,
        radial_correction,
        radial_drift,
    })
}

/// Local Lipschitz modulus of F between V-balls:
///
/// ```text
/// G(x,y) = 2C(x² + y² + xy)
///        + C_n[ (2n−1)/2 · (x^{2n−1} + y^{2n−1})(x + y)
///              + (x^{2n} + y^{2n}) + (1 + x² + y²)^{1/3} ],
/// ```
///
/// so that |F(u)−F(v)|_H ≤ G(‖u‖_V,‖v‖_V)‖u−v‖_V. The constants C and C_n
/// are calibration parameters: fit them as the largest observed ratio of the
/// two sides over a representative sample (with C = C_n), then inflate by a
/// 10% safety margin.
pub fn lipschitz_modulus_g(x: f64, y: f64, n: u32, c: f64, c_n: f64) -> f64 {
    debug_assert!(x >= 0.0 && y >= 0.0, "arguments must be nonnegative");
    debug_assert!(c > 0.0 && c_n > 0.0, "constants must be positive");
    let p = 2 * n as i32;
    let quadratic = 2.0 * c * (x * x + y * y + x * y);
    let leading = (2.0 * n as f64 - 1.0) / 2.0 * (x.powi(p - 1) + y.powi(p - 1)) * (x + y);
    let plain = x.powi(p) + y.powi(p);
    let cube_root = (1.0 + x * x + y * y).powf(1.0 / 3.0);
    quadratic + c_n * (leading + plain + cube_root)
}

/// Checks |m(u) − m(v)|_H ≤ 2|f|²(|u|² + |v|² + |u||v|)|u−v|_H, the
/// H-norm Lipschitz estimate of the correction map at sphere-scale states.
pub fn kappa_lipschitz_check(f: &SpectralField, u: &SpectralField, v: &SpectralField) -> bool {
    let mut diff = ito_correction_m(f, u);
    diff.add_scaled(&ito_correction_m(f, v), -1.0)
        .expect("fields must share a spectral space");
    let lhs = norm_h(&diff);
    let nf = norm_h(f);
    let (nu, nv) = (norm_h(u), norm_h(v));
    let mut d = u.clone();
    d.add_scaled(v, -1.0)
        .expect("fields must share a spectral space");
    let rhs = 2.0 * nf * nf * (nu * nu + nv * nv + nu * nv) * norm_h(&d);
    lhs <= rhs * (1.0 + 1e-12)
}

/// V-norm analogue of `kappa_lipschitz_check` with every norm replaced by
/// ‖·‖_V.
pub fn kappa_lipschitz_check_v(f: &SpectralField, u: &SpectralField, v: &SpectralField) -> bool {
    let mut diff = ito_correction_m(f, u);
    diff.add_scaled(&ito_correction_m(f, v), -1.0)
        .expect("fields must share a spectral space");
    let lhs = norm_v(&diff);
    let nf = norm_v(f);
    let (nu, nv) = (norm_v(u), norm_v(v));
    let mut d = u.clone();
    d.add_scaled(v, -1.0)
        .expect("fields must share a spectral space");
    let rhs = 2.0 * nf * nf * (nu * nu + nv * nv + nu * nv) * norm_v(&d);
    lhs <= rhs * (1.0 + 1e-12)
}
