//! Time integration of the constrained stochastic evolution equation.
//!
//! The Itô form of the dynamics on the unit sphere of L² reads
//!
//! ```text
//! du = [ −Au + F(u) + ½ Σ_k m_k(u) ] dt + Σ_k B_k(u) dW_k,
//! ```
//!
//! with A = Δ² − 2Δ, the projected nonlinearity
//!
//! ```text
//! F(u) = (‖u‖²_{H²₀} + 2‖u‖²_{H¹₀} + ‖u‖^{2n}_{L^{2n}}) u − u^{2n−1},
//! ```
//!
//! tangential noise fields B_k(u) = f_k − ⟨f_k,u⟩u, and the Stratonovich
//! corrections m_k(u). Three schemes are provided: plain Euler–Maruyama on
//! the Itô form, the same with an exponential (integrating-factor) treatment
//! of the stiff linear part, and a Heun predictor–corrector on the
//! Stratonovich form with drift D(u) = −Au + F(u), whose refinement limit
//! agrees with the corrected Itô scheme.
//!
//! A truncation gate θ_m of the running path norm
//! |u|²_{X_t} = sup_{s≤t} ‖u(s)‖²_V + ∫₀ᵗ |u(p)|²_E dp multiplies the
//! nonlinear, correction, and noise terms; the gate is evaluated at the left
//! endpoint of each step. A Picard iterator for the gated mild equation
//!
//! ```text
//! u(t) = S(t)u₀ + ∫₀ᵗ S(t−p) θ_m(|u|_{X_p}) [F(u) + ½Σm_k(u)] dp
//!      + Σ_k ∫₀ᵗ S(t−p) θ_m(|u|_{X_p}) B_k(u) dW_k(p)
//! ```
//!
//! (stochastic convolution discretized by left-endpoint sums) exposes the
//! contraction behavior at small horizons; its fixed point coincides with
//! the exponential Euler–Maruyama trajectory on the same path.

use crate::diagnostics::{
    energy_y, eta_value, ito_step_update, ItoTerms, StoppingMonitor, TauHit, TerminalStatus,
    TrajectoryDiagnostics,
};
use crate::manifold::{diffusion_b, ito_correction_m, project_tangent};
use crate::spectral::{
    apply_a, norm_e, norm_h, norm_l2n, norm_v, pointwise_power, semigroup_apply, SpectralError,
    SpectralField, SpectralSpace,
};
use std::fmt;

/// Largest admissible nonlinearity exponent.
pub const MAX_NONLINEARITY: u32 = 8;

/// Errors from configuration, stepping, and trajectory integration.
#[derive(Debug)]
pub enum DynamicsError {
    /// A parameter violates its documented range.
    InvalidParameter(String),
    /// Explicit scheme with dt·μ_max > 1.
    StabilityViolation { dt: f64, mu_max: f64 },
    /// The increment slice does not match the noise channel count.
    IncrementMismatch { expected: usize, got: usize },
    /// The supplied Wiener path is inconsistent with the configuration.
    PathMismatch(String),
    /// The state left the representable range; for trajectory runs the
    /// diagnostics collected up to the failing step are attached.
    Overflow {
        step: usize,
        diagnostics: Option<Box<TrajectoryDiagnostics>>,
    },
    Spectral(SpectralError),
}

impl fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsError::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            DynamicsError::StabilityViolation { dt, mu_max } => write!(
                f,
                "explicit scheme requires dt*mu_max <= 1, got dt={dt} with mu_max={mu_max}"
            ),
            DynamicsError::IncrementMismatch { expected, got } => write!(
                f,
                "expected {expected} Wiener increments, got {got}"
            ),
            DynamicsError::PathMismatch(msg) => write!(f, "path mismatch: {msg}"),
            DynamicsError::Overflow { step, .. } => {
                write!(f, "state overflowed at step {step}")
            }
            DynamicsError::Spectral(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DynamicsError {}

impl From<SpectralError> for DynamicsError {
    fn from(e: SpectralError) -> Self {
        DynamicsError::Spectral(e)
    }
}

/// Drift parameters: the linear coefficient a and the nonlinearity degree n
/// (the polynomial term is u^{2n−1}).
#[derive(Debug, Clone, Copy)]
pub struct DriftParams {
    pub a: f64,
    pub n: u32,
}

impl DriftParams {
    pub fn new(a: f64, n: u32) -> Result<Self, DynamicsError> {
        if !a.is_finite() {
            return Err(DynamicsError::InvalidParameter(format!(
                "linear coefficient must be finite, got {a}"
            )));
        }
        if n == 0 || n > MAX_NONLINEARITY {
            return Err(DynamicsError::InvalidParameter(format!(
                "nonlinearity degree must be in 1..={MAX_NONLINEARITY}, got {n}"
            )));
        }
        Ok(Self { a, n })
    }
}

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Euler–Maruyama on the Itô form.
    EmIto,
    /// Euler–Maruyama with exact exponential integration of the linear part.
    EmItoExponential,
    /// Heun predictor–corrector on the Stratonovich form.
    HeunStrat,
}

impl Scheme {
    pub fn is_explicit(self) -> bool {
        matches!(self, Scheme::EmIto | Scheme::HeunStrat)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::EmIto => "em_ito",
            Scheme::EmItoExponential => "em_ito_exponential",
            Scheme::HeunStrat => "heun_strat",
        }
    }
}

/// Scheme configuration: step size, renormalization flag, optional
/// truncation level m, and the master seed recorded for path generation.
#[derive(Debug, Clone, Copy)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub renormalize: bool,
    pub truncation_level: Option<f64>,
    pub seed: u64,
}

impl SchemeConfig {
    /// Validates dt > 0, the explicit stability bound dt·μ_max ≤ 1 for the
    /// non-exponential schemes, and m ≥ 1 when a truncation level is set.
    pub fn new(
        scheme: Scheme,
        dt: f64,
        renormalize: bool,
        truncation_level: Option<f64>,
        seed: u64,
        space: &SpectralSpace,
    ) -> Result<Self, DynamicsError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(DynamicsError::InvalidParameter(format!(
                "dt must be positive and finite, got {dt}"
            )));
        }
        if scheme.is_explicit() && dt * space.mu_max() > 1.0 {
            return Err(DynamicsError::StabilityViolation {
                dt,
                mu_max: space.mu_max(),
            });
        }
        if let Some(m) = truncation_level {
            if !(m.is_finite() && m >= 1.0) {
                return Err(DynamicsError::InvalidParameter(format!(
                    "truncation level must be >= 1, got {m}"
                )));
            }
        }
        Ok(Self {
            scheme,
            dt,
            renormalize,
            truncation_level,
            seed,
        })
    }

    /// Gate factor for the current path norm: θ_m(x) when a truncation level
    /// is configured, 1 otherwise.
    pub fn gate(&self, x_norm: f64) -> Result<f64, DynamicsError> {
        match self.truncation_level {
            Some(m) => theta_m(x_norm, m),
            None => Ok(1.0),
        }
    }
}

/// The N fixed noise directions f_k.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    fields: Vec<SpectralField>,
}

impl NoiseModel {
    /// All fields must be finite and share one spectral space. An empty list
    /// describes deterministic dynamics.
    pub fn new(fields: Vec<SpectralField>) -> Result<Self, DynamicsError> {
        for (k, f) in fields.iter().enumerate() {
            if !f.is_finite() {
                return Err(DynamicsError::InvalidParameter(format!(
                    "noise field {} has non-finite coefficients",
                    k + 1
                )));
            }
        }
        if let Some(first) = fields.first() {
            if !fields[1..]
                .iter()
                .all(|f| f.space().compatible(first.space()))
            {
                return Err(DynamicsError::Spectral(SpectralError::SpaceMismatch));
            }
        }
        Ok(Self { fields })
    }

    pub fn channels(&self) -> usize {
        self.fields.len()
    }

    pub fn field(&self, k: usize) -> &SpectralField {
        &self.fields[k]
    }

    pub fn fields(&self) -> &[SpectralField] {
        &self.fields
    }

    /// Whether every channel lives on the given space (vacuously true when
    /// there are no channels).
    pub fn matches_space(&self, space: &SpectralSpace) -> bool {
        self.fields.iter().all(|f| f.space().compatible(space))
    }
}

/// One realized Wiener path at a fixed step size: `channels` increments per
/// step, each with variance `dt`, stored step-major.
#[derive(Debug, Clone)]
pub struct NoisePath {
    channels: usize,
    steps: usize,
    dt: f64,
    increments: Vec<f64>,
}

impl NoisePath {
    pub fn new(
        channels: usize,
        steps: usize,
        dt: f64,
        increments: Vec<f64>,
    ) -> Result<Self, DynamicsError> {
        if steps == 0 {
            return Err(DynamicsError::InvalidParameter(
                "a path needs at least one step".to_string(),
            ));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(DynamicsError::InvalidParameter(format!(
                "path dt must be positive and finite, got {dt}"
            )));
        }
        if increments.len() != channels * steps {
            return Err(DynamicsError::InvalidParameter(format!(
                "increment buffer has length {}, expected {}",
                increments.len(),
                channels * steps
            )));
        }
        Ok(Self {
            channels,
            steps,
            dt,
            increments,
        })
    }

    pub fn zeros(channels: usize, steps: usize, dt: f64) -> Result<Self, DynamicsError> {
        Self::new(channels, steps, dt, vec![0.0; channels * steps])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The increments ΔW_1..ΔW_N of one step.
    pub fn step_slice(&self, step: usize) -> &[f64] {
        &self.increments[step * self.channels..(step + 1) * self.channels]
    }

    pub fn increment(&self, step: usize, channel: usize) -> f64 {
        self.increments[step * self.channels + channel]
    }
}

/// The nonlinear drift component
/// F(u) = (‖u‖²_{H²₀} + 2‖u‖²_{H¹₀} + ‖u‖^{2n}_{L^{2n}}) u − u^{2n−1}.
pub fn nonlinear_f(u: &SpectralField, n: u32) -> Result<SpectralField, SpectralError> {
    let h10 = crate::spectral::seminorm_h10(u);
    let h20 = crate::spectral::seminorm_h20(u);
    let l2n = crate::spectral::l2n_power(u, n)?;
    let mut out = pointwise_power(u, 2 * n - 1)?;
    out.scale(-1.0);
    out.add_scaled(u, h20 * h20 + 2.0 * h10 * h10 + l2n)?;
    Ok(out)
}

/// Tangential projection of the raw drift,
/// π_u(−Au − a·u − u^{2n−1}); on the unit sphere this equals −Au + F(u) for
/// every a (the a-terms cancel there).
pub fn projected_drift(
    u: &SpectralField,
    params: &DriftParams,
) -> Result<SpectralField, SpectralError> {
    let mut h = apply_a(u);
    h.scale(-1.0);
    h.add_scaled(u, -params.a)?;
    h.add_scaled(&pointwise_power(u, 2 * params.n - 1)?, -1.0)?;
    Ok(project_tangent(u, &h))
}

/// Truncation profile: 1 on [0,1], the linear ramp 2−x on (1,2), 0 from 2 on.
/// The ramp is the unique profile with exact plateaus and inf θ′ = −1.
pub fn theta(x: f64) -> Result<f64, DynamicsError> {
    if !(x >= 0.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "theta is defined for nonnegative arguments, got {x}"
        )));
    }
    Ok(if x <= 1.0 {
        1.0
    } else if x < 2.0 {
        2.0 - x
    } else {
        0.0
    })
}

/// Rescaled gate θ_m(x) = θ(x/m); Lipschitz with constant 1/m and
/// θ_m(x)·g(x) ≤ g(2m) for every nondecreasing g.
pub fn theta_m(x: f64, m: f64) -> Result<f64, DynamicsError> {
    if !(m.is_finite() && m >= 1.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "truncation level must be >= 1, got {m}"
        )));
    }
    theta(x / m)
}

/// Running path norm |u|²_{X_t} = sup_{s≤t} ‖u(s)‖²_V + ∫₀ᵗ |u(p)|²_E dp,
/// with the integral accumulated as a left-endpoint Riemann sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct PathNormTracker {
    sup_v_sq: f64,
    int_e_sq: f64,
}

impl PathNormTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds one left-endpoint sample into both components and returns the
    /// updated X-norm.
    pub fn update(&mut self, u: &SpectralField, dt: f64) -> f64 {
        let nv = norm_v(u);
        self.sup_v_sq = self.sup_v_sq.max(nv * nv);
        let ne = norm_e(u);
        self.int_e_sq += ne * ne * dt;
        self.x_norm()
    }

    /// Folds a sample into the sup component only (no time has elapsed);
    /// used for the terminal state.
    pub fn observe_sup(&mut self, u: &SpectralField) -> f64 {
        let nv = norm_v(u);
        self.sup_v_sq = self.sup_v_sq.max(nv * nv);
        self.x_norm()
    }

    pub fn x_norm(&self) -> f64 {
        (self.sup_v_sq + self.int_e_sq).sqrt()
    }

    pub fn sup_v_sq(&self) -> f64 {
        self.sup_v_sq
    }

    pub fn int_e_sq(&self) -> f64 {
        self.int_e_sq
    }
}

/// Free-function form of [`PathNormTracker::update`].
pub fn xnorm_update(tracker: &mut PathNormTracker, u: &SpectralField, dt: f64) -> f64 {
    tracker.update(u, dt)
}

fn check_increments(noise: &NoiseModel, increments: &[f64]) -> Result<(), DynamicsError> {
    if increments.len() != noise.channels() {
        return Err(DynamicsError::IncrementMismatch {
            expected: noise.channels(),
            got: increments.len(),
        });
    }
    Ok(())
}

fn finish_step(mut next: SpectralField, renormalize: bool) -> Result<SpectralField, DynamicsError> {
    if renormalize {
        let nh = norm_h(&next);
        next.scale(1.0 / nh);
    }
    if !next.is_finite() {
        return Err(DynamicsError::Overflow {
            step: 0,
            diagnostics: None,
        });
    }
    Ok(next)
}

fn em_core(
    u: &SpectralField,
    increments: &[f64],
    noise: &NoiseModel,
    params: &DriftParams,
    cfg: &SchemeConfig,
    gate: f64,
    exponential: bool,
) -> Result<SpectralField, DynamicsError> {
    check_increments(noise, increments)?;
    let dt = cfg.dt;
    let mut acc = u.clone();
    if !exponential {
        acc.add_scaled(&apply_a(u), -dt)?;
    }
    if gate != 0.0 {
        acc.add_scaled(&nonlinear_f(u, params.n)?, dt * gate)?;
        for k in 0..noise.channels() {
            acc.add_scaled(&ito_correction_m(noise.field(k), u), 0.5 * dt * gate)?;
        }
        for (k, dw) in increments.iter().enumerate() {
            acc.add_scaled(&diffusion_b(noise.field(k), u), gate * dw)?;
        }
    }
    let next = if exponential {
        semigroup_apply(dt, &acc)?
    } else {
        acc
    };
    finish_step(next, cfg.renormalize)
}

/// Stratonovich drift D(v) = −Av + gate·F(v).
fn gated_drift(v: &SpectralField, n: u32, gate: f64) -> Result<SpectralField, SpectralError> {
    let mut d = apply_a(v);
    d.scale(-1.0);
    if gate != 0.0 {
        d.add_scaled(&nonlinear_f(v, n)?, gate)?;
    }
    Ok(d)
}

fn heun_core(
    u: &SpectralField,
    increments: &[f64],
    noise: &NoiseModel,
    params: &DriftParams,
    cfg: &SchemeConfig,
    gate: f64,
) -> Result<SpectralField, DynamicsError> {
    check_increments(noise, increments)?;
    let dt = cfg.dt;
    let d0 = gated_drift(u, params.n, gate)?;

    let mut predictor = u.clone();
    predictor.add_scaled(&d0, dt)?;
    let mut b0 = Vec::new();
    if gate != 0.0 {
        for (k, dw) in increments.iter().enumerate() {
            let b = diffusion_b(noise.field(k), u);
            predictor.add_scaled(&b, gate * dw)?;
            b0.push(b);
        }
    }
    if !predictor.is_finite() {
        return Err(DynamicsError::Overflow {
            step: 0,
            diagnostics: None,
        });
    }

    let d1 = gated_drift(&predictor, params.n, gate)?;
    let mut next = u.clone();
    next.add_scaled(&d0, 0.5 * dt)?;
    next.add_scaled(&d1, 0.5 * dt)?;
    if gate != 0.0 {
        for (k, dw) in increments.iter().enumerate() {
            next.add_scaled(&b0[k], 0.5 * gate * dw)?;
            next.add_scaled(&diffusion_b(noise.field(k), &predictor), 0.5 * gate * dw)?;
        }
    }
    finish_step(next, cfg.renormalize)
}

/// One Euler–Maruyama step on the Itô form (plain or exponential variant per
/// `cfg.scheme`; a heun_strat configuration is rejected). `x_norm` is the
/// running path norm at the left endpoint, from which the gate is evaluated.
pub fn step_em_ito(
    u: &SpectralField,
    increments: &[f64],
    noise: &NoiseModel,
    params: &DriftParams,
    cfg: &SchemeConfig,
    x_norm: f64,
) -> Result<SpectralField, DynamicsError> {
    let gate = cfg.gate(x_norm)?;
    match cfg.scheme {
        Scheme::EmIto => em_core(u, increments, noise, params, cfg, gate, false),
        Scheme::EmItoExponential => em_core(u, increments, noise, params, cfg, gate, true),
        Scheme::HeunStrat => Err(DynamicsError::InvalidParameter(
            "step_em_ito called with a heun_strat configuration".to_string(),
        )),
    }
}

/// One Heun step on the Stratonovich form: predictor
/// ū = u + dt·D(u) + Σ B_k(u)ΔW_k, corrector
/// u⁺ = u + dt/2·(D(u)+D(ū)) + Σ ½(B_k(u)+B_k(ū))ΔW_k, with the gate frozen
/// at the left endpoint.
pub fn step_heun_strat(
    u: &SpectralField,
    increments: &[f64],
    noise: &NoiseModel,
    params: &DriftParams,
    cfg: &SchemeConfig,
    x_norm: f64,
) -> Result<SpectralField, DynamicsError> {
    let gate = cfg.gate(x_norm)?;
    heun_core(u, increments, noise, params, cfg, gate)
}

/// Dispatches one step according to `cfg.scheme`.
pub fn step(
    u: &SpectralField,
    increments: &[f64],
    noise: &NoiseModel,
    params: &DriftParams,
    cfg: &SchemeConfig,
    x_norm: f64,
) -> Result<SpectralField, DynamicsError> {
    match cfg.scheme {
        Scheme::EmIto | Scheme::EmItoExponential => {
            step_em_ito(u, increments, noise, params, cfg, x_norm)
        }
        Scheme::HeunStrat => step_heun_strat(u, increments, noise, params, cfg, x_norm),
    }
}

fn step_with_gate(
    u: &SpectralField,
    increments: &[f64],
    noise: &NoiseModel,
    params: &DriftParams,
    cfg: &SchemeConfig,
    gate: f64,
) -> Result<SpectralField, DynamicsError> {
    match cfg.scheme {
        Scheme::EmIto => em_core(u, increments, noise, params, cfg, gate, false),
        Scheme::EmItoExponential => em_core(u, increments, noise, params, cfg, gate, true),
        Scheme::HeunStrat => heun_core(u, increments, noise, params, cfg, gate),
    }
}

struct RecordBuffers {
    times: Vec<f64>,
    eta: Vec<f64>,
    energy_y: Vec<f64>,
    norm_v: Vec<f64>,
    norm_l2n: Vec<f64>,
    x_norm: Vec<f64>,
}

impl RecordBuffers {
    fn new(capacity: usize) -> Self {
        Self {
            times: Vec::with_capacity(capacity),
            eta: Vec::with_capacity(capacity),
            energy_y: Vec::with_capacity(capacity),
            norm_v: Vec::with_capacity(capacity),
            norm_l2n: Vec::with_capacity(capacity),
            x_norm: Vec::with_capacity(capacity),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, t: f64, eta: f64, y: f64, nv: f64, nl2n: f64, x: f64) {
        self.times.push(t);
        self.eta.push(eta);
        self.energy_y.push(y);
        self.norm_v.push(nv);
        self.norm_l2n.push(nl2n);
        self.x_norm.push(x);
    }

    fn into_diagnostics(
        self,
        ito_terms: Option<ItoTerms>,
        tau_hits: Vec<(f64, Option<TauHit>)>,
        terminal_status: TerminalStatus,
        final_state: SpectralField,
        sup_abs_eta: f64,
        sup_norm_v: f64,
        stride: usize,
    ) -> TrajectoryDiagnostics {
        TrajectoryDiagnostics {
            times: self.times,
            eta: self.eta,
            energy_y: self.energy_y,
            norm_v: self.norm_v,
            norm_l2n: self.norm_l2n,
            x_norm: self.x_norm,
            ito_terms,
            tau_hits,
            terminal_status,
            final_state,
            sup_abs_eta,
            sup_norm_v,
            stride,
        }
    }
}

/// Integrates the equation over the path's horizon, recording diagnostics
/// every `stride` steps (the initial and terminal states are always
/// recorded) and monitoring first hits of ‖u‖_V against each ℓ in `levels`.
/// The pathwise Itô energy terms are accumulated when stride = 1.
/// Deterministic: identical inputs give identical output bits.
pub fn run_trajectory(
    u0: &SpectralField,
    params: &DriftParams,
    cfg: &SchemeConfig,
    noise: &NoiseModel,
    path: &NoisePath,
    stride: usize,
    levels: &[f64],
) -> Result<TrajectoryDiagnostics, DynamicsError> {
    if stride == 0 {
        return Err(DynamicsError::InvalidParameter(
            "record stride must be at least 1".to_string(),
        ));
    }
    if !u0.is_finite() {
        return Err(DynamicsError::InvalidParameter(
            "initial state has non-finite coefficients".to_string(),
        ));
    }
    if params.n as usize > u0.space().pad_factor() {
        return Err(DynamicsError::InvalidParameter(format!(
            "pad factor {} is too small for nonlinearity degree {}",
            u0.space().pad_factor(),
            params.n
        )));
    }
    if !noise.matches_space(u0.space()) {
        return Err(DynamicsError::Spectral(SpectralError::SpaceMismatch));
    }
    if path.channels() != noise.channels() {
        return Err(DynamicsError::IncrementMismatch {
            expected: noise.channels(),
            got: path.channels(),
        });
    }
    if (path.dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(DynamicsError::PathMismatch(format!(
            "path dt {} does not match configured dt {}",
            path.dt(),
            cfg.dt
        )));
    }

    let n = params.n;
    let dt = cfg.dt;
    let steps = path.steps();
    let mut u = u0.clone();
    let mut tracker = PathNormTracker::new();
    let mut monitor = StoppingMonitor::new(levels);
    let mut records = RecordBuffers::new(steps / stride + 2);
    let mut ito = if stride == 1 {
        Some(ItoTerms::default())
    } else {
        None
    };
    let mut sup_abs_eta: f64 = 0.0;

    for i in 0..steps {
        let t = i as f64 * dt;
        let eta = eta_value(&u);
        sup_abs_eta = sup_abs_eta.max(eta.abs());
        let nv = norm_v(&u);
        let y = energy_y(&u, n)?;
        let x = tracker.update(&u, dt);
        monitor
            .update(t, nv, y)
            .map_err(|e| DynamicsError::InvalidParameter(e.to_string()))?;
        if i % stride == 0 {
            records.push(t, eta, y, nv, norm_l2n(&u, n)?, x);
        }
        let gate = cfg.gate(x)?;
        if let Some(terms) = ito.as_mut() {
            ito_step_update(terms, &u, noise, n, gate, dt, path.step_slice(i))?;
        }
        match step_with_gate(&u, path.step_slice(i), noise, params, cfg, gate) {
            Ok(next) => u = next,
            Err(DynamicsError::Overflow { .. }) => {
                let partial = records.into_diagnostics(
                    ito,
                    monitor.into_hits(),
                    TerminalStatus::Overflow { step: i },
                    u,
                    sup_abs_eta,
                    tracker.sup_v_sq().sqrt(),
                    stride,
                );
                return Err(DynamicsError::Overflow {
                    step: i,
                    diagnostics: Some(Box::new(partial)),
                });
            }
            Err(e) => return Err(e),
        }
    }

    let t_final = steps as f64 * dt;
    let eta = eta_value(&u);
    sup_abs_eta = sup_abs_eta.max(eta.abs());
    let nv = norm_v(&u);
    let y = energy_y(&u, n)?;
    let x = tracker.observe_sup(&u);
    monitor
        .update(t_final, nv, y)
        .map_err(|e| DynamicsError::InvalidParameter(e.to_string()))?;
    records.push(t_final, eta, y, nv, norm_l2n(&u, n)?, x);

    let sup_norm_v = tracker.sup_v_sq().sqrt();
    Ok(records.into_diagnostics(
        ito,
        monitor.into_hits(),
        TerminalStatus::Completed,
        u,
        sup_abs_eta,
        sup_norm_v,
        stride,
    ))
}

/// Result of the Picard iteration: the V-norm residuals
/// r_j = max_i ‖u^{(j+1)}(t_i) − u^{(j)}(t_i)‖_V, whether the tolerance was
/// reached, and the terminal state of the last iterate. Non-contraction
/// (max_iter exhausted) is reported, not an error.
#[derive(Debug, Clone)]
pub struct PicardReport {
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub terminal_state: SpectralField,
}

impl PicardReport {
    /// Consecutive residual ratios r_{j+1}/r_j.
    pub fn ratios(&self) -> Vec<f64> {
        self.residuals
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
            .collect()
    }
}

/// Picard iteration for the gated mild equation on a fixed Wiener path.
/// The iterate map applies the discretized convolution incrementally,
///
/// ```text
/// y_{i+1} = S(dt) [ y_i + dt·θ_m(x_i)(F(v_i) + ½Σ m_k(v_i))
///                        + Σ_k θ_m(x_i) B_k(v_i) ΔW_{i,k} ],
/// ```
///
/// where v is the previous iterate and x_i its running path norm, so the
/// fixed point is exactly the exponential Euler–Maruyama trajectory with the
/// same gate. The zeroth iterate is the free flow S(t_i)u₀.
pub fn picard_solve(
    u0: &SpectralField,
    params: &DriftParams,
    noise: &NoiseModel,
    path: &NoisePath,
    m: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PicardReport, DynamicsError> {
    if !(m.is_finite() && m >= 1.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "truncation level must be >= 1, got {m}"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(DynamicsError::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if max_iter == 0 {
        return Err(DynamicsError::InvalidParameter(
            "at least one iteration is required".to_string(),
        ));
    }
    if !u0.is_finite() {
        return Err(DynamicsError::InvalidParameter(
            "initial state has non-finite coefficients".to_string(),
        ));
    }
    if !noise.matches_space(u0.space()) {
        return Err(DynamicsError::Spectral(SpectralError::SpaceMismatch));
    }
    if path.channels() != noise.channels() {
        return Err(DynamicsError::IncrementMismatch {
            expected: noise.channels(),
            got: path.channels(),
        });
    }
    if params.n as usize > u0.space().pad_factor() {
        return Err(DynamicsError::InvalidParameter(format!(
            "pad factor {} is too small for nonlinearity degree {}",
            u0.space().pad_factor(),
            params.n
        )));
    }

    let dt = path.dt();
    let steps = path.steps();
    let n = params.n;

    // Zeroth iterate: the free flow.
    let mut current: Vec<SpectralField> = Vec::with_capacity(steps + 1);
    current.push(u0.clone());
    for i in 0..steps {
        let next = semigroup_apply(dt, &current[i])?;
        current.push(next);
    }

    let mut residuals = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        let mut tracker = PathNormTracker::new();
        let mut next: Vec<SpectralField> = Vec::with_capacity(steps + 1);
        next.push(u0.clone());
        for i in 0..steps {
            let v = &current[i];
            let x = tracker.update(v, dt);
            let gate = theta_m(x, m)?;
            let mut acc = next[i].clone();
            if gate != 0.0 {
                acc.add_scaled(&nonlinear_f(v, n)?, dt * gate)?;
                for k in 0..noise.channels() {
                    acc.add_scaled(&ito_correction_m(noise.field(k), v), 0.5 * dt * gate)?;
                }
                for (k, dw) in path.step_slice(i).iter().enumerate() {
                    acc.add_scaled(&diffusion_b(noise.field(k), v), gate * dw)?;
                }
            }
            let y = semigroup_apply(dt, &acc)?;
            if !y.is_finite() {
                return Err(DynamicsError::Overflow {
                    step: i,
                    diagnostics: None,
                });
            }
            next.push(y);
        }

        let mut residual: f64 = 0.0;
        for (a, b) in next.iter().zip(&current) {
            let mut d = a.clone();
            d.add_scaled(b, -1.0)?;
            residual = residual.max(norm_v(&d));
        }
        residuals.push(residual);
        iterations += 1;
        current = next;
        if residual <= tol {
            converged = true;
            break;
        }
    }

    let terminal_state = current
        .pop()
        .expect("iterate grid holds steps + 1 states");
    Ok(PicardReport {
        residuals,
        converged,
        iterations,
        terminal_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{inner_h, SpectralSpace};
    use crate::testutil::TestRng;
    use std::sync::Arc;

    const PI: f64 = std::f64::consts::PI;

    fn space(modes: usize, pad: usize) -> Arc<SpectralSpace> {
        SpectralSpace::new(modes, modes, PI, PI, pad).unwrap()
    }

    fn random_field(s: &Arc<SpectralSpace>, rng: &mut TestRng) -> SpectralField {
        let coeffs = (0..s.mode_count()).map(|_| rng.symmetric()).collect();
        SpectralField::from_coeffs(s, coeffs).unwrap()
    }

    fn on_sphere(s: &Arc<SpectralSpace>, rng: &mut TestRng) -> SpectralField {
        let mut u = random_field(s, rng);
        let nh = norm_h(&u);
        u.scale(1.0 / nh);
        u
    }

    fn single_mode(s: &Arc<SpectralSpace>, j: usize, k: usize, c: f64) -> SpectralField {
        let mut u = SpectralField::zeros(s);
        u.set_coeff(j, k, c);
        u
    }

    fn stable_cfg(scheme: Scheme, space: &SpectralSpace, dt: f64) -> SchemeConfig {
        SchemeConfig::new(scheme, dt, false, None, 0, space).unwrap()
    }

    #[test]
    fn drift_params_are_validated() {
        assert!(DriftParams::new(1.0, 0).is_err());
        assert!(DriftParams::new(1.0, MAX_NONLINEARITY + 1).is_err());
        assert!(DriftParams::new(f64::NAN, 1).is_err());
        assert!(DriftParams::new(-2.0, MAX_NONLINEARITY).is_ok());
    }

    #[test]
    fn scheme_config_enforces_explicit_stability() {
        let s = space(4, 1);
        let limit = 1.0 / s.mu_max();
        assert!(SchemeConfig::new(Scheme::EmIto, 2.0 * limit, false, None, 0, &s).is_err());
        assert!(SchemeConfig::new(Scheme::HeunStrat, 2.0 * limit, false, None, 0, &s).is_err());
        assert!(
            SchemeConfig::new(Scheme::EmItoExponential, 2.0 * limit, false, None, 0, &s).is_ok()
        );
        assert!(SchemeConfig::new(Scheme::EmIto, 0.5 * limit, false, None, 0, &s).is_ok());
        assert!(SchemeConfig::new(Scheme::EmIto, 0.5 * limit, false, Some(0.5), 0, &s).is_err());
        assert!(SchemeConfig::new(Scheme::EmIto, -1.0, false, None, 0, &s).is_err());
    }

    #[test]
    fn nonlinear_f_of_zero_is_zero() {
        let s = space(4, 2);
        let z = SpectralField::zeros(&s);
        assert_eq!(norm_h(&nonlinear_f(&z, 2).unwrap()), 0.0);
    }

    #[test]
    fn nonlinear_f_single_mode_closed_form() {
        let s = space(4, 2);
        let u = single_mode(&s, 1, 1, 1.0);
        let f = nonlinear_f(&u, 1).unwrap();
        assert!((f.coeff(1, 1) - 8.0).abs() < 1e-12);
        for j in 1..=4 {
            for k in 1..=4 {
                if (j, k) != (1, 1) {
                    assert!(f.coeff(j, k).abs() < 1e-15);
                }
            }
        }
        // General amplitude: F(c·e11) = (9c² − 1)·c·e11 for n = 1.
        let v = single_mode(&s, 1, 1, 0.7);
        let fv = nonlinear_f(&v, 1).unwrap();
        let want = (9.0 * 0.49 - 1.0) * 0.7;
        assert!((fv.coeff(1, 1) - want).abs() < 1e-12);
    }

    #[test]
    fn nonlinear_f_is_the_shifted_projection_on_the_sphere() {
        // For |u|_H = 1: F(u) = π_u(−Au − u^{2n−1}) + Au.
        let s = space(4, 2);
        let mut rng = TestRng::new(211);
        for n in [1u32, 2] {
            for _ in 0..20 {
                let u = on_sphere(&s, &mut rng);
                let f = nonlinear_f(&u, n).unwrap();
                let mut h = apply_a(&u);
                h.scale(-1.0);
                h.add_scaled(&pointwise_power(&u, 2 * n - 1).unwrap(), -1.0)
                    .unwrap();
                let mut other = project_tangent(&u, &h);
                other.add_scaled(&apply_a(&u), 1.0).unwrap();
                let mut d = f;
                d.add_scaled(&other, -1.0).unwrap();
                assert!(norm_h(&d) < 1e-10);
            }
        }
    }

    #[test]
    fn projected_drift_matches_componentwise_oracle() {
        let s = space(3, 2);
        let mut rng = TestRng::new(223);
        let params = DriftParams::new(1.0, 1).unwrap();
        for _ in 0..50 {
            let u = random_field(&s, &mut rng);
            let drift = projected_drift(&u, &params).unwrap();
            // Oracle: assemble h = −Au − u − u (n = 1 keeps u^1 = u), then
            // h − ⟨h,u⟩u with plain loops.
            let mut h = vec![0.0; s.mode_count()];
            for j in 1..=3 {
                for k in 1..=3 {
                    let idx = (j - 1) * 3 + (k - 1);
                    let c = u.coeffs()[idx];
                    h[idx] = -s.mu(j, k) * c - c - c;
                }
            }
            let pairing: f64 = h.iter().zip(u.coeffs()).map(|(a, b)| a * b).sum();
            for idx in 0..s.mode_count() {
                let want = h[idx] - pairing * u.coeffs()[idx];
                assert!((drift.coeffs()[idx] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projected_drift_is_ito_drift_on_the_sphere_for_any_a() {
        let s = space(4, 2);
        let mut rng = TestRng::new(227);
        for n in [1u32, 2] {
            for a in [1.0, 2.5, -0.3] {
                let params = DriftParams::new(a, n).unwrap();
                for _ in 0..34 {
                    let u = on_sphere(&s, &mut rng);
                    let drift = projected_drift(&u, &params).unwrap();
                    let mut ito = apply_a(&u);
                    ito.scale(-1.0);
                    ito.add_scaled(&nonlinear_f(&u, n).unwrap(), 1.0).unwrap();
                    let mut d = drift.clone();
                    d.add_scaled(&ito, -1.0).unwrap();
                    let scale = norm_h(&ito).max(1.0);
                    assert!(norm_h(&d) <= 1e-12 * scale);
                    assert!(inner_h(&drift, &u).unwrap().abs() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn tangency_of_noise_fields_on_the_sphere() {
        let s = space(4, 1);
        let mut rng = TestRng::new(229);
        for _ in 0..100 {
            let u = on_sphere(&s, &mut rng);
            let f = random_field(&s, &mut rng);
            let b = diffusion_b(&f, &u);
            assert!(inner_h(&b, &u).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn theta_profile_values() {
        assert_eq!(theta(0.0).unwrap(), 1.0);
        assert_eq!(theta(0.5).unwrap(), 1.0);
        assert_eq!(theta(1.0).unwrap(), 1.0);
        assert!((theta(1.5).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(theta(2.0).unwrap(), 0.0);
        assert_eq!(theta(3.0).unwrap(), 0.0);
        assert!(theta(-0.1).is_err());
        assert!(theta_m(1.0, 0.5).is_err());
    }

    #[test]
    fn theta_m_lipschitz_and_gate_inequalities() {
        for m in [1.0, 2.0, 5.0] {
            let grid: Vec<f64> = (0..1000).map(|i| i as f64 * 3.0 * m / 999.0).collect();
            for (i, &x) in grid.iter().enumerate() {
                // Gate inequality with the nondecreasing g(x) = x².
                let g = |v: f64| v * v;
                assert!(theta_m(x, m).unwrap() * g(x) <= g(2.0 * m) * (1.0 + 1e-12));
                for &y in &grid[i + 1..] {
                    let lhs = (theta_m(x, m).unwrap() - theta_m(y, m).unwrap()).abs();
                    assert!(lhs <= (x - y).abs() / m * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn tracker_examples_and_oracle() {
        let s = space(3, 1);
        let mut tracker = PathNormTracker::new();
        let z = SpectralField::zeros(&s);
        assert_eq!(xnorm_update(&mut tracker, &z, 0.1), 0.0);

        // Constant state over k steps.
        let u = single_mode(&s, 1, 1, 1.0);
        let dt = 0.05;
        let mut tr = PathNormTracker::new();
        let (v2, e2) = (norm_v(&u).powi(2), norm_e(&u).powi(2));
        for i in 1..=7 {
            let x = tr.update(&u, dt);
            let want = (v2 + i as f64 * dt * e2).sqrt();
            assert!((x - want).abs() < 1e-12);
        }

        // Random sequence against a from-scratch recomputation.
        let mut rng = TestRng::new(233);
        let states: Vec<SpectralField> = (0..20).map(|_| random_field(&s, &mut rng)).collect();
        let mut tr2 = PathNormTracker::new();
        let mut xs = Vec::new();
        for u in &states {
            xs.push(tr2.update(u, dt));
        }
        for i in 0..states.len() {
            let sup = states[..=i]
                .iter()
                .map(|u| norm_v(u).powi(2))
                .fold(0.0f64, f64::max);
            let int: f64 = states[..=i].iter().map(|u| norm_e(u).powi(2) * dt).sum();
            assert!((xs[i] - (sup + int).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn single_mode_state_is_a_fixed_point_of_every_renormalized_scheme() {
        let s = space(3, 2);
        let u = single_mode(&s, 1, 1, 1.0);
        let params = DriftParams::new(1.0, 1).unwrap();
        let noise = NoiseModel::new(vec![SpectralField::zeros(&s)]).unwrap();
        let dt = 1e-3;
        for scheme in [Scheme::EmIto, Scheme::EmItoExponential, Scheme::HeunStrat] {
            let cfg = SchemeConfig::new(scheme, dt, true, None, 0, &s).unwrap();
            let next = step(&u, &[0.0], &noise, &params, &cfg, norm_v(&u)).unwrap();
            let mut d = next;
            d.add_scaled(&u, -1.0).unwrap();
            assert!(norm_h(&d) < 1e-12, "{scheme:?}");
        }
    }

    #[test]
    fn full_gate_freezes_everything_but_the_linear_flow() {
        let s = space(4, 2);
        let mut rng = TestRng::new(239);
        let u = on_sphere(&s, &mut rng);
        let params = DriftParams::new(1.0, 1).unwrap();
        let f = random_field(&s, &mut rng);
        let noise = NoiseModel::new(vec![f]).unwrap();
        let dt = 0.5 / s.mu_max();
        let m = 1.0;
        let x = 2.5; // x >= 2m: the gate is exactly zero.

        let cfg = SchemeConfig::new(Scheme::EmIto, dt, false, Some(m), 0, &s).unwrap();
        let next = step_em_ito(&u, &[0.7], &noise, &params, &cfg, x).unwrap();
        let mut want = u.clone();
        want.add_scaled(&apply_a(&u), -dt).unwrap();
        assert_eq!(next.coeffs(), want.coeffs());

        let cfg_exp =
            SchemeConfig::new(Scheme::EmItoExponential, dt, false, Some(m), 0, &s).unwrap();
        let next_exp = step_em_ito(&u, &[0.7], &noise, &params, &cfg_exp, x).unwrap();
        let want_exp = semigroup_apply(dt, &u).unwrap();
        assert_eq!(next_exp.coeffs(), want_exp.coeffs());

        let cfg_heun = SchemeConfig::new(Scheme::HeunStrat, dt, false, Some(m), 0, &s).unwrap();
        let with_noise = step_heun_strat(&u, &[0.7], &noise, &params, &cfg_heun, x).unwrap();
        let without = step_heun_strat(&u, &[0.0], &noise, &params, &cfg_heun, x).unwrap();
        assert_eq!(with_noise.coeffs(), without.coeffs());
    }

    #[test]
    fn heun_step_matches_classical_heun_wiring() {
        let s = space(4, 2);
        let mut rng = TestRng::new(241);
        let u = on_sphere(&s, &mut rng);
        let params = DriftParams::new(1.0, 2).unwrap();
        let noise = NoiseModel::new(vec![]).unwrap();
        let dt = 0.4 / s.mu_max();
        let cfg = stable_cfg(Scheme::HeunStrat, &s, dt);
        let got = step_heun_strat(&u, &[], &noise, &params, &cfg, 0.0).unwrap();

        let drift = |v: &SpectralField| {
            let mut d = apply_a(v);
            d.scale(-1.0);
            d.add_scaled(&nonlinear_f(v, 2).unwrap(), 1.0).unwrap();
            d
        };
        let mut pred = u.clone();
        pred.add_scaled(&drift(&u), dt).unwrap();
        let mut want = u.clone();
        want.add_scaled(&drift(&u), 0.5 * dt).unwrap();
        want.add_scaled(&drift(&pred), 0.5 * dt).unwrap();
        for (a, b) in got.coeffs().iter().zip(want.coeffs()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn heun_sphere_defect_shrinks_faster_than_em() {
        // From a sphere state with f ⊥ u₀ and a fixed draw ΔW = 2√dt, the
        // Euler–Maruyama defect η⁺ is Θ(dt) while Heun's is O(dt²), so the
        // ratio doubles (at least grows by 1.5×) per dt halving.
        let s = space(3, 2);
        let u = single_mode(&s, 1, 1, 1.0);
        let f = single_mode(&s, 2, 1, 0.8);
        let noise = NoiseModel::new(vec![f]).unwrap();
        let params = DriftParams::new(1.0, 1).unwrap();
        let base_dt = 0.8 / s.mu_max();
        let mut ratios = Vec::new();
        for level in 0..4 {
            let dt = base_dt / f64::powi(2.0, level);
            let dw = 2.0 * dt.sqrt();
            let cfg_em = stable_cfg(Scheme::EmIto, &s, dt);
            let cfg_heun = stable_cfg(Scheme::HeunStrat, &s, dt);
            let x = norm_v(&u);
            let em = step_em_ito(&u, &[dw], &noise, &params, &cfg_em, x).unwrap();
            let heun = step_heun_strat(&u, &[dw], &noise, &params, &cfg_heun, x).unwrap();
            let eta_em = (norm_h(&em).powi(2) - 1.0).abs();
            let eta_heun = (norm_h(&heun).powi(2) - 1.0).abs();
            assert!(eta_heun < eta_em);
            ratios.push(eta_em / eta_heun);
        }
        for w in ratios.windows(2) {
            assert!(w[1] > 1.5 * w[0], "ratios {ratios:?}");
        }
    }

    #[test]
    fn trajectory_fixed_point_keeps_constant_records() {
        let s = space(3, 2);
        let u0 = single_mode(&s, 1, 1, 1.0);
        let params = DriftParams::new(1.0, 1).unwrap();
        let noise = NoiseModel::new(vec![]).unwrap();
        let dt = 1e-3;
        let steps = 50;
        let cfg = SchemeConfig::new(Scheme::EmItoExponential, dt, true, None, 0, &s).unwrap();
        let path = NoisePath::zeros(0, steps, dt).unwrap();
        let diag = run_trajectory(&u0, &params, &cfg, &noise, &path, 1, &[]).unwrap();

        assert_eq!(diag.times.len(), steps + 1);
        let (v2, e2) = (9.0, 65.0);
        for (i, t) in diag.times.iter().enumerate() {
            assert!((t - i as f64 * dt).abs() < 1e-15);
            assert!(diag.eta[i].abs() < 1e-13);
            assert!((diag.energy_y[i] - 5.0).abs() < 1e-10);
            assert!((diag.norm_v[i] - 3.0).abs() < 1e-12);
            let covered = ((i + 1).min(steps)) as f64 * dt;
            let want_x = (v2 + covered * e2).sqrt();
            assert!((diag.x_norm[i] - want_x).abs() < 1e-10);
        }
        assert!(diag.sup_abs_eta < 1e-13);
        assert!(matches!(diag.terminal_status, TerminalStatus::Completed));
    }

    #[test]
    fn trajectory_single_step_equals_the_step_function() {
        let s = space(4, 2);
        let mut rng = TestRng::new(251);
        let u0 = on_sphere(&s, &mut rng);
        let params = DriftParams::new(1.0, 1).unwrap();
        let f1 = random_field(&s, &mut rng);
        let f2 = random_field(&s, &mut rng);
        let noise = NoiseModel::new(vec![f1, f2]).unwrap();
        let dt = 0.5 / s.mu_max();
        let cfg = stable_cfg(Scheme::EmIto, &s, dt);
        let incr = [0.013, -0.008];
        let path = NoisePath::new(2, 1, dt, incr.to_vec()).unwrap();
        let diag = run_trajectory(&u0, &params, &cfg, &noise, &path, 1, &[]).unwrap();

        let mut tracker = PathNormTracker::new();
        let x = tracker.update(&u0, dt);
        let manual = step_em_ito(&u0, &incr, &noise, &params, &cfg, x).unwrap();
        assert_eq!(diag.final_state.coeffs(), manual.coeffs());
    }

    #[test]
    fn trajectory_is_deterministic() {
        let s = space(4, 2);
        let mut rng = TestRng::new(257);
        let u0 = on_sphere(&s, &mut rng);
        let params = DriftParams::new(1.0, 2).unwrap();
        let noise = NoiseModel::new(vec![random_field(&s, &mut rng)]).unwrap();
        let dt = 0.5 / s.mu_max();
        let cfg = SchemeConfig::new(Scheme::EmIto, dt, false, Some(50.0), 7, &s).unwrap();
        let incr: Vec<f64> = (0..40).map(|_| rng.normal() * dt.sqrt()).collect();
        let path = NoisePath::new(1, 40, dt, incr).unwrap();
        let a = run_trajectory(&u0, &params, &cfg, &noise, &path, 3, &[2.0, 4.0]).unwrap();
        let b = run_trajectory(&u0, &params, &cfg, &noise, &path, 3, &[2.0, 4.0]).unwrap();
        assert_eq!(a.times, b.times);
        assert_eq!(a.eta, b.eta);
        assert_eq!(a.energy_y, b.energy_y);
        assert_eq!(a.x_norm, b.x_norm);
        assert_eq!(a.final_state.coeffs(), b.final_state.coeffs());
    }

    #[test]
    fn trajectory_overflow_attaches_partial_diagnostics() {
        let s = space(3, 2);
        let mut u0 = SpectralField::zeros(&s);
        u0.set_coeff(1, 1, 1e80);
        let params = DriftParams::new(1.0, 2).unwrap();
        let noise = NoiseModel::new(vec![]).unwrap();
        let cfg = SchemeConfig::new(Scheme::EmItoExponential, 1e-3, false, None, 0, &s).unwrap();
        let path = NoisePath::zeros(0, 10, 1e-3).unwrap();
        match run_trajectory(&u0, &params, &cfg, &noise, &path, 1, &[]) {
            Err(DynamicsError::Overflow { step, diagnostics }) => {
                let diag = diagnostics.expect("partial diagnostics attached");
                assert!(matches!(
                    diag.terminal_status,
                    TerminalStatus::Overflow { step: s } if s == step
                ));
                assert!(!diag.times.is_empty());
                assert!(diag.final_state.is_finite());
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_hit_times_match_a_linear_scan() {
        let s = space(4, 2);
        let mut rng = TestRng::new(263);
        let mut u0 = random_field(&s, &mut rng);
        let nh = norm_h(&u0);
        u0.scale(1.0 / nh);
        let params = DriftParams::new(1.0, 1).unwrap();
        let noise = NoiseModel::new(vec![random_field(&s, &mut rng)]).unwrap();
        let dt = 0.5 / s.mu_max();
        let steps = 60;
        let cfg = stable_cfg(Scheme::EmIto, &s, dt);
        let incr: Vec<f64> = (0..steps).map(|_| rng.normal() * dt.sqrt()).collect();
        let path = NoisePath::new(1, steps, dt, incr).unwrap();
        let levels = [1.0, 3.0, 5.0, 1e6];
        let diag = run_trajectory(&u0, &params, &cfg, &noise, &path, 1, &levels).unwrap();
        for (idx, (level, hit)) in diag.tau_hits.iter().enumerate() {
            assert_eq!(*level, levels[idx]);
            let scan = diag
                .times
                .iter()
                .zip(&diag.norm_v)
                .find(|(_, nv)| **nv >= *level)
                .map(|(t, _)| *t);
            match (hit, scan) {
                (Some(h), Some(t)) => assert!((h.time - t).abs() < 1e-15),
                (None, None) => {}
                other => panic!("inconsistent hit for level {level}: {other:?}"),
            }
        }
    }

    #[test]
    fn picard_trivial_fixed_point_converges_immediately() {
        let s = space(3, 2);
        let u0 = SpectralField::zeros(&s);
        let params = DriftParams::new(1.0, 1).unwrap();
        let noise = NoiseModel::new(vec![]).unwrap();
        let path = NoisePath::zeros(0, 4, 1e-3).unwrap();
        let report = picard_solve(&u0, &params, &noise, &path, 1.0, 1e-14, 5).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        assert_eq!(report.residuals, vec![0.0]);
    }

    #[test]
    fn picard_contracts_and_reaches_the_exponential_trajectory() {
        let s = space(4, 2);
        let mut rng = TestRng::new(269);
        let u0 = on_sphere(&s, &mut rng);
        let params = DriftParams::new(1.0, 1).unwrap();
        let mut f = random_field(&s, &mut rng);
        f.scale(0.3);
        let noise = NoiseModel::new(vec![f]).unwrap();
        let steps = 8;
        let dt = 1e-3 / steps as f64;
        let incr: Vec<f64> = (0..steps).map(|_| rng.normal() * dt.sqrt()).collect();
        let path = NoisePath::new(1, steps, dt, incr).unwrap();
        let m = 25.0;

        let report = picard_solve(&u0, &params, &noise, &path, m, 1e-13, 30).unwrap();
        assert!(report.converged, "residuals {:?}", report.residuals);
        for r in report.ratios().iter().skip(1) {
            assert!(*r < 0.9, "ratios {:?}", report.ratios());
        }

        // The fixed point of the iterate map is the exponential
        // Euler–Maruyama trajectory on the same path and gate.
        let cfg = SchemeConfig::new(Scheme::EmItoExponential, dt, false, Some(m), 0, &s).unwrap();
        let diag = run_trajectory(&u0, &params, &cfg, &noise, &path, 1, &[]).unwrap();
        let mut d = report.terminal_state.clone();
        d.add_scaled(&diag.final_state, -1.0).unwrap();
        assert!(norm_v(&d) < 1e-10);
    }

    #[test]
    fn noise_path_validation() {
        assert!(NoisePath::new(2, 3, 0.1, vec![0.0; 6]).is_ok());
        assert!(NoisePath::new(2, 3, 0.1, vec![0.0; 5]).is_err());
        assert!(NoisePath::new(2, 0, 0.1, vec![]).is_err());
        assert!(NoisePath::new(2, 3, 0.0, vec![0.0; 6]).is_err());
    }
}
