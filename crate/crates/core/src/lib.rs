//! Spectral Galerkin simulator for a stochastic modified Swift–Hohenberg
//! equation constrained to the unit sphere of L².
//!
//! The model evolves a scalar field u on a Dirichlet rectangle under
//!
//! ```text
//! du = π_u(−Δ²u + 2Δu − a·u − u^{2n−1}) dt + Σ_k π_u(f_k) ∘ dW_k,
//! ```
//!
//! where π_u(h) = h − ⟨h,u⟩u is the tangent projection onto the unit L²
//! sphere M = { |u|_H = 1 }. In Itô form the drift becomes
//! −Au + F(u) + ½Σ_k m_k(u) with A = Δ² − 2Δ, the manifold nonlinearity
//! F(u) = (‖u‖²_{H²₀} + 2‖u‖²_{H¹₀} + ‖u‖^{2n}_{L^{2n}})u − u^{2n−1}, and the
//! Itô correction m_k. The crate provides:
//!
//! - [`spectral`]: sine basis, operator/semigroup arithmetic, dealiased
//!   physical-space products, Sobolev norms;
//! - [`manifold`]: tangent projections, noise fields B_k, Itô corrections,
//!   γ = ½|u|²_H calculus and its closed-form identities;
//! - [`dynamics`]: Euler–Maruyama (plain and exponential) and Heun
//!   (Stratonovich) steppers, truncation gating, trajectory driver, Picard
//!   iteration for the truncated mild equation;
//! - [`diagnostics`]: energy functional Y, its derivative pairings and
//!   identities, η = |u|²_H − 1 closure coefficients, Itô expansion
//!   bookkeeping, stopping times, Khashminskii-condition reporting;
//! - [`montecarlo`]: counter-based Wiener increments, dyadic coarsening,
//!   deterministic parallel ensembles, strong-order estimation;
//! - [`config`] / [`output`]: run configuration and CSV/checkpoint I/O for
//!   the `sphere-sh` binary.

pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod manifold;
pub mod montecarlo;
pub mod output;
pub mod spectral;

#[cfg(test)]
pub(crate) mod testutil;
