//! Energy, sphere-defect, and stopping diagnostics for the constrained flow.
//!
//! The energy functional is
//!
//! ```text
//! Y(u) = ½‖u‖²_V + (1/2n)‖u‖^{2n}_{L^{2n}},   ‖u‖²_V = Σ (1+λ_jk)² c²_jk,
//! ```
//!
//! with first variation Y′(u)[p] = ⟨u,p⟩_V + ⟨u^{2n−1},p⟩ (the operator form
//! ⟨Au + u + u^{2n−1}, p⟩ of the same pairing, since (1+λ)² = 1+μ) and second
//! variation Y″(u)[p₁,p₂] = ⟨p₁,p₂⟩_V + ((2n−1)/n)⟨u^{2n−2}, p₁p₂⟩.
//!
//! Along the gated Itô dynamics, Y(u(T)) − Y(u(0)) decomposes into
//!
//! ```text
//! I₁ = Σ_k ∫ θ ⟨Y′(u), B_k(u)⟩ dW_k          (noise pairing)
//! I₂ = ½ Σ_k ∫ θ ⟨Y′(u), m_k(u)⟩ dp          (correction pairing)
//! I₃ = ½ Σ_k ∫ θ² Y″(u)[B_k(u), B_k(u)] dp   (quadratic variation)
//! I₄ = ∫ ⟨Y′(u), −Au + θF(u)⟩ dp             (drift pairing),
//! ```
//!
//! each integrand admitting a closed form in the inner products
//! ⟨f,u⟩, ⟨u,f⟩_V, ⟨u^{2n−1},f⟩ and the norms of u; on the unit sphere the
//! ungated drift pairing collapses to −|π_u(−Au − u − u^{2n−1})|²_H ≤ 0.
//!
//! The sphere defect η(u) = |u|²_H − 1 obeys the closed scalar equation
//! dη = Σ_k a₁ₖ η dW_k + a₂ η dt with
//!
//! ```text
//! a₁ₖ = 2⟨u,f_k⟩,
//! a₂  = 2‖u‖²_{H²₀} + 4‖u‖²_{H¹₀} + 2‖u‖^{2n}_{L^{2n}}
//!        + Σ_k (3⟨f_k,u⟩² − |f_k|²),
//! ```
//!
//! so η ≡ 0 is invariant. First hits of ‖u‖_V against a ladder of levels ℓ
//! feed the bounded-moment argument: Y ≥ 0, the coercivity bound
//! q_P = inf{Y(u) : ‖u‖_V ≥ P} ≥ P²/2, finite initial energy, and
//! saturation of E[Y(u(T∧τ_ℓ))] in ℓ beyond the observed range together
//! yield non-explosion.

use crate::dynamics::{nonlinear_f, NoiseModel};
use crate::manifold::{diffusion_b, ito_correction_m, project_tangent, rel_residual};
use crate::montecarlo::EnsembleEstimates;
use crate::spectral::{
    apply_a, inner_h, inner_v, l2n_power, norm_h, norm_v, pointwise_power, quadrature_product,
    to_physical, SpectralError, SpectralField,
};
use std::fmt;

/// Errors from diagnostic evaluation.
#[derive(Debug)]
pub enum DiagnosticsError {
    /// The Itô decomposition needs a stride-1 record.
    StrideMismatch { stride: usize },
    /// Fewer than two recorded states.
    TooFewRecords { records: usize },
    /// Stopping updates must advance in time.
    NonMonotoneTime { previous: f64, current: f64 },
    /// An ensemble with no completed paths.
    EmptyEnsemble,
    Spectral(SpectralError),
}

impl fmt::Display for DiagnosticsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiagnosticsError::StrideMismatch { stride } => write!(
                f,
                "the energy decomposition requires stride 1, got {stride}"
            ),
            DiagnosticsError::TooFewRecords { records } => {
                write!(f, "need at least two records, got {records}")
            }
            DiagnosticsError::NonMonotoneTime { previous, current } => write!(
                f,
                "stopping updates must advance in time: {previous} then {current}"
            ),
            DiagnosticsError::EmptyEnsemble => {
                write!(f, "no completed paths in the ensemble")
            }
            DiagnosticsError::Spectral(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for DiagnosticsError {}

impl From<SpectralError> for DiagnosticsError {
    fn from(e: SpectralError) -> Self {
        DiagnosticsError::Spectral(e)
    }
}

/// How a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalStatus {
    Completed,
    /// The state left the representable range before the horizon.
    Overflow { step: usize },
}

/// First hit of a ‖u‖_V level: the hit time and the energy there.
#[derive(Debug, Clone, Copy)]
pub struct TauHit {
    pub time: f64,
    pub energy: f64,
}

/// Accumulated pathwise Itô energy terms.
#[derive(Debug, Clone, Copy, Default)]
pub struct ItoTerms {
    pub noise_pairing: f64,
    pub correction_pairing: f64,
    pub second_variation: f64,
    pub drift_pairing: f64,
}

impl ItoTerms {
    pub fn sum(&self) -> f64 {
        self.noise_pairing + self.correction_pairing + self.second_variation + self.drift_pairing
    }
}

/// Per-trajectory record: sampled scalar series (every `stride` steps plus
/// the terminal state), accumulated Itô terms (stride-1 runs), first hits of
/// the ‖u‖_V levels, and the terminal state itself.
#[derive(Debug, Clone)]
pub struct TrajectoryDiagnostics {
    pub times: Vec<f64>,
    pub eta: Vec<f64>,
    pub energy_y: Vec<f64>,
    pub norm_v: Vec<f64>,
    pub norm_l2n: Vec<f64>,
    pub x_norm: Vec<f64>,
    pub ito_terms: Option<ItoTerms>,
    pub tau_hits: Vec<(f64, Option<TauHit>)>,
    pub terminal_status: TerminalStatus,
    pub final_state: SpectralField,
    pub sup_abs_eta: f64,
    pub sup_norm_v: f64,
    pub stride: usize,
}

/// The energy Y(u) = ½‖u‖²_V + (1/2n)‖u‖^{2n}_{L^{2n}}.
pub fn energy_y(u: &SpectralField, n: u32) -> Result<f64, SpectralError> {
    let nv = norm_v(u);
    Ok(0.5 * nv * nv + l2n_power(u, n)? / (2.0 * n as f64))
}

/// First variation pairing Y′(u)[p] = ⟨u,p⟩_V + ⟨u^{2n−1},p⟩.
pub fn energy_pairing(
    u: &SpectralField,
    p: &SpectralField,
    n: u32,
) -> Result<f64, SpectralError> {
    Ok(inner_v(u, p)? + inner_h(&pointwise_power(u, 2 * n - 1)?, p)?)
}

/// Second variation pairing
/// Y″(u)[p₁,p₂] = ⟨p₁,p₂⟩_V + ((2n−1)/n)⟨u^{2n−2}, p₁p₂⟩.
pub fn energy_second_pairing(
    u: &SpectralField,
    p1: &SpectralField,
    p2: &SpectralField,
    n: u32,
) -> Result<f64, SpectralError> {
    let quadratic = inner_v(p1, p2)?;
    if n == 1 {
        return Ok(quadratic + inner_h(p1, p2)?);
    }
    let space = u.space();
    if space.pad_factor() < n as usize {
        return Err(SpectralError::PadTooSmall {
            pad_factor: space.pad_factor(),
            required: n as usize,
        });
    }
    let mut gu = to_physical(u, true);
    for v in gu.values_mut() {
        *v = v.powi(2 * n as i32 - 2);
    }
    let g1 = to_physical(p1, true);
    let g2 = to_physical(p2, true);
    let mixed = quadrature_product(space, &[&gu, &g1, &g2])?;
    Ok(quadratic + (2.0 * n as f64 - 1.0) / n as f64 * mixed)
}

/// Closed form of the noise pairing ⟨Y′(u), B(u)⟩ for B(u) = f − ⟨f,u⟩u:
/// ⟨u,f⟩_V + ⟨u^{2n−1},f⟩ − ⟨f,u⟩(‖u‖²_V + ‖u‖^{2n}_{L^{2n}}).
pub fn energy_noise_pairing_closed(
    f: &SpectralField,
    u: &SpectralField,
    n: u32,
) -> Result<f64, SpectralError> {
    let fu = inner_h(f, u)?;
    let nv = norm_v(u);
    let l = l2n_power(u, n)?;
    Ok(inner_v(u, f)? + inner_h(&pointwise_power(u, 2 * n - 1)?, f)? - fu * (nv * nv + l))
}

/// Closed form of the correction pairing ⟨Y′(u), m(u)⟩:
/// (2⟨f,u⟩² − |f|²)(‖u‖²_V + ‖u‖^{2n}_{L^{2n}})
/// − ⟨f,u⟩(⟨u,f⟩_V + ⟨u^{2n−1},f⟩).
pub fn energy_correction_pairing_closed(
    f: &SpectralField,
    u: &SpectralField,
    n: u32,
) -> Result<f64, SpectralError> {
    let fu = inner_h(f, u)?;
    let ff = inner_h(f, f)?;
    let nv = norm_v(u);
    let l = l2n_power(u, n)?;
    let first = inner_v(u, f)? + inner_h(&pointwise_power(u, 2 * n - 1)?, f)?;
    Ok((2.0 * fu * fu - ff) * (nv * nv + l) - fu * first)
}

/// Closed form of the quadratic-variation integrand Y″(u)[B,B]:
/// ‖B‖²_V + ((2n−1)/n)⟨u^{2n−2}, B²⟩ with B = f − ⟨f,u⟩u.
pub fn energy_second_variation_closed(
    f: &SpectralField,
    u: &SpectralField,
    n: u32,
) -> Result<f64, SpectralError> {
    let b = diffusion_b(f, u);
    let nb = norm_v(&b);
    if n == 1 {
        let nh = norm_h(&b);
        return Ok(nb * nb + nh * nh);
    }
    let space = u.space();
    if space.pad_factor() < n as usize {
        return Err(SpectralError::PadTooSmall {
            pad_factor: space.pad_factor(),
            required: n as usize,
        });
    }
    let mut gu = to_physical(u, true);
    for v in gu.values_mut() {
        *v = v.powi(2 * n as i32 - 2);
    }
    let gb = to_physical(&b, true);
    let mixed = quadrature_product(space, &[&gu, &gb, &gb])?;
    Ok(nb * nb + (2.0 * n as f64 - 1.0) / n as f64 * mixed)
}

/// Closed form of the drift pairing ⟨Y′(u), −Au + F(u)⟩ on the unit sphere:
/// −|π_u(−Au − u − u^{2n−1})|²_H, manifestly nonpositive.
pub fn energy_drift_pairing_closed(u: &SpectralField, n: u32) -> Result<f64, SpectralError> {
    let mut h = apply_a(u);
    h.scale(-1.0);
    h.add_scaled(u, -1.0)?;
    h.add_scaled(&pointwise_power(u, 2 * n - 1)?, -1.0)?;
    let p = project_tangent(u, &h);
    let np = norm_h(&p);
    Ok(-(np * np))
}

/// Relative residuals of the four energy pairings, each comparing an
/// assembled left side against its closed form.
#[derive(Debug, Clone, Copy)]
pub struct EnergyIdentityResiduals {
    pub noise_pairing: f64,
    pub correction_pairing: f64,
    pub second_variation: f64,
    pub drift_pairing: f64,
}

impl EnergyIdentityResiduals {
    pub fn max(&self) -> f64 {
        self.noise_pairing
            .max(self.correction_pairing)
            .max(self.second_variation)
            .max(self.drift_pairing)
    }
}

/// Evaluates the four energy identities at an arbitrary state. The drift
/// identity holds on the unit sphere only, so it is evaluated at u/|u|_H
/// (at zero the residual is zero by convention).
pub fn energy_identity_residuals(
    f: &SpectralField,
    u: &SpectralField,
    n: u32,
) -> Result<EnergyIdentityResiduals, SpectralError> {
    let fu = inner_h(f, u)?;
    let ff = inner_h(f, f)?;
    let nv = norm_v(u);
    let l = l2n_power(u, n)?;
    let uv_f = inner_v(u, f)?;
    let power_f = inner_h(&pointwise_power(u, 2 * n - 1)?, f)?;

    let b = diffusion_b(f, u);
    let noise_lhs = energy_pairing(u, &b, n)?;
    let noise_rhs = energy_noise_pairing_closed(f, u, n)?;
    let noise_pairing = rel_residual(
        noise_lhs,
        noise_rhs,
        &[uv_f, power_f, fu * (nv * nv + l)],
    );

    let m = ito_correction_m(f, u);
    let corr_lhs = energy_pairing(u, &m, n)?;
    let corr_rhs = energy_correction_pairing_closed(f, u, n)?;
    let correction_pairing = rel_residual(
        corr_lhs,
        corr_rhs,
        &[(2.0 * fu * fu - ff) * (nv * nv + l), fu * (uv_f + power_f)],
    );

    let sv_lhs = energy_second_pairing(u, &b, &b, n)?;
    let sv_rhs = energy_second_variation_closed(f, u, n)?;
    let nb = norm_v(&b);
    let second_variation = rel_residual(sv_lhs, sv_rhs, &[nb * nb]);

    let nh = norm_h(u);
    let drift_pairing = if nh > 0.0 {
        let w = u.scaled(1.0 / nh);
        let mut drift = apply_a(&w);
        drift.scale(-1.0);
        drift.add_scaled(&nonlinear_f(&w, n)?, 1.0)?;
        let lhs = energy_pairing(&w, &drift, n)?;
        let rhs = energy_drift_pairing_closed(&w, n)?;
        let mut g = apply_a(&w);
        g.add_scaled(&w, 1.0)?;
        g.add_scaled(&pointwise_power(&w, 2 * n - 1)?, 1.0)?;
        let ng = norm_h(&g);
        rel_residual(lhs, rhs, &[ng * ng])
    } else {
        0.0
    };

    Ok(EnergyIdentityResiduals {
        noise_pairing,
        correction_pairing,
        second_variation,
        drift_pairing,
    })
}

/// The sphere defect η(u) = |u|²_H − 1.
pub fn eta_value(u: &SpectralField) -> f64 {
    let nh = norm_h(u);
    nh * nh - 1.0
}

/// Coefficients of the closed η-equation dη = Σ_k a₁ₖ η dW_k + a₂ η dt.
#[derive(Debug, Clone)]
pub struct EtaCoefficients {
    pub a1: Vec<f64>,
    pub a2: f64,
}

/// Evaluates a₁ₖ = 2⟨u,f_k⟩ and
/// a₂ = 2‖u‖²_{H²₀} + 4‖u‖²_{H¹₀} + 2‖u‖^{2n}_{L^{2n}}
///      + Σ_k (3⟨f_k,u⟩² − |f_k|²); the deterministic block enters once and
/// the noise contributions sum over channels.
pub fn eta_coefficients(
    u: &SpectralField,
    noise: &NoiseModel,
    n: u32,
) -> Result<EtaCoefficients, SpectralError> {
    let h10 = crate::spectral::seminorm_h10(u);
    let h20 = crate::spectral::seminorm_h20(u);
    let l = l2n_power(u, n)?;
    let mut a2 = 2.0 * h20 * h20 + 4.0 * h10 * h10 + 2.0 * l;
    let mut a1 = Vec::with_capacity(noise.channels());
    for k in 0..noise.channels() {
        let f = noise.field(k);
        let fu = inner_h(u, f)?;
        a1.push(2.0 * fu);
        a2 += 3.0 * fu * fu - inner_h(f, f)?;
    }
    Ok(EtaCoefficients { a1, a2 })
}

/// Folds one left-endpoint step into the accumulated Itô terms. `gate` is
/// the truncation factor θ_m at the step's left endpoint and `increments`
/// the Wiener increments of the step.
pub fn ito_step_update(
    terms: &mut ItoTerms,
    u: &SpectralField,
    noise: &NoiseModel,
    n: u32,
    gate: f64,
    dt: f64,
    increments: &[f64],
) -> Result<(), SpectralError> {
    if gate != 0.0 {
        for (k, dw) in increments.iter().enumerate() {
            let f = noise.field(k);
            terms.noise_pairing += gate * energy_noise_pairing_closed(f, u, n)? * dw;
            terms.correction_pairing +=
                0.5 * gate * energy_correction_pairing_closed(f, u, n)? * dt;
            terms.second_variation +=
                0.5 * gate * gate * energy_second_variation_closed(f, u, n)? * dt;
        }
    }
    let mut drift_term = energy_drift_pairing_closed(u, n)?;
    if gate != 1.0 {
        drift_term += (gate - 1.0) * energy_pairing(u, &nonlinear_f(u, n)?, n)?;
    }
    terms.drift_pairing += drift_term * dt;
    Ok(())
}

/// Residual |Y(u(T)) − Y(u(0)) − ΣᵢIᵢ| of the pathwise energy
/// decomposition. Requires a stride-1 trajectory record.
pub fn ito_energy_decomposition(diag: &TrajectoryDiagnostics) -> Result<f64, DiagnosticsError> {
    if diag.stride != 1 {
        return Err(DiagnosticsError::StrideMismatch {
            stride: diag.stride,
        });
    }
    let terms = diag
        .ito_terms
        .as_ref()
        .ok_or(DiagnosticsError::StrideMismatch { stride: 0 })?;
    if diag.energy_y.len() < 2 {
        return Err(DiagnosticsError::TooFewRecords {
            records: diag.energy_y.len(),
        });
    }
    let y0 = diag.energy_y[0];
    let yt = *diag.energy_y.last().expect("nonempty record");
    Ok((yt - y0 - terms.sum()).abs())
}

/// First-hit monitor for a ladder of ‖u‖_V levels. Updates must advance in
/// time; each level records the first sample with ‖u‖_V ≥ ℓ.
#[derive(Debug, Clone)]
pub struct StoppingMonitor {
    levels: Vec<f64>,
    hits: Vec<Option<TauHit>>,
    last_time: Option<f64>,
}

impl StoppingMonitor {
    pub fn new(levels: &[f64]) -> Self {
        Self {
            levels: levels.to_vec(),
            hits: vec![None; levels.len()],
            last_time: None,
        }
    }

    pub fn update(
        &mut self,
        t: f64,
        norm_v_value: f64,
        energy: f64,
    ) -> Result<(), DiagnosticsError> {
        if let Some(prev) = self.last_time {
            if t <= prev {
                return Err(DiagnosticsError::NonMonotoneTime {
                    previous: prev,
                    current: t,
                });
            }
        }
        self.last_time = Some(t);
        for (level, hit) in self.levels.iter().zip(self.hits.iter_mut()) {
            if hit.is_none() && norm_v_value >= *level {
                *hit = Some(TauHit { time: t, energy });
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn hits(&self) -> &[Option<TauHit>] {
        &self.hits
    }

    pub fn into_hits(self) -> Vec<(f64, Option<TauHit>)> {
        self.levels.into_iter().zip(self.hits).collect()
    }
}

/// The four bounded-moment conditions evaluated against an ensemble.
#[derive(Debug, Clone)]
pub struct KhashminskiiReport {
    /// Every observed energy (initial and stopped) is nonnegative.
    pub energy_nonnegative: bool,
    /// Coercivity rows (P, P²/2): q_P = inf{Y : ‖u‖_V ≥ P} ≥ P²/2.
    pub coercivity: Vec<(f64, f64)>,
    pub initial_energy: f64,
    /// Per-level mean/SE of Y(u(T∧τ_ℓ)) with the fraction of paths hitting ℓ.
    pub stopped_energy: Vec<StoppedEnergyRow>,
    pub observed_sup_norm_v: f64,
    /// E[Y(u(T∧τ_ℓ))] is flat (within two combined standard errors) across
    /// levels beyond the observed sup of ‖u‖_V.
    pub saturated: bool,
    pub overflows: usize,
}

/// One row of the stopped-energy table.
#[derive(Debug, Clone, Copy)]
pub struct StoppedEnergyRow {
    pub level: f64,
    pub mean: f64,
    pub se: f64,
    pub hit_fraction: f64,
}

/// Builds the bounded-moment report from ensemble estimates and the initial
/// energy Y(u₀). Fails on an ensemble with no completed paths.
pub fn khashminskii_report(
    estimates: &EnsembleEstimates,
    initial_energy: f64,
) -> Result<KhashminskiiReport, DiagnosticsError> {
    if estimates.completed == 0 {
        return Err(DiagnosticsError::EmptyEnsemble);
    }
    let rows = estimates.stopped_energy.clone();
    let coercivity = rows.iter().map(|r| (r.level, 0.5 * r.level * r.level)).collect();
    let mut saturated = true;
    let beyond: Vec<&StoppedEnergyRow> = rows
        .iter()
        .filter(|r| r.level > estimates.sup_norm_v)
        .collect();
    for pair in beyond.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let combined = (a.se * a.se + b.se * b.se).sqrt();
        if (a.mean - b.mean).abs() > 2.0 * combined {
            saturated = false;
        }
    }
    let energy_nonnegative =
        initial_energy >= 0.0 && rows.iter().all(|r| r.mean >= -1e-12);
    Ok(KhashminskiiReport {
        energy_nonnegative,
        coercivity,
        initial_energy,
        stopped_energy: rows,
        observed_sup_norm_v: estimates.sup_norm_v,
        saturated,
        overflows: estimates.overflowed,
    })
}
