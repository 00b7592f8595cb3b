//! Sine-spectral discretization on a Dirichlet rectangle [0,Lx]×[0,Ly].
//!
//! Basis functions
//!
//! ```text
//! e_jk(x,y) = 2/sqrt(Lx·Ly) · sin(jπx/Lx) · sin(kπy/Ly),   1 ≤ j ≤ J, 1 ≤ k ≤ K,
//! ```
//!
//! are L²-orthonormal and diagonalize both −Δ (eigenvalue
//! λ_jk = π²((j/Lx)² + (k/Ly)²)) and the fourth-order operator
//! A = Δ² − 2Δ (eigenvalue μ_jk = λ_jk² + 2λ_jk), so the semigroup
//! e^{−tA} acts as per-mode exponential damping and all Sobolev norms are
//! weighted coefficient sums.
//!
//! Physical-space work (odd pointwise powers, L^{2n} norms) runs on a
//! midpoint collocation grid with M = pad_factor·J + 1 points per axis.
//! Midpoint quadrature integrates cos(mπx/L) exactly for 0 ≤ m < 2M, and a
//! product of sine modes of total degree d expands into such cosines with
//! m ≤ d·J, so degree-2n integrands (u^{2n−1} against a basis function, or
//! u^{2n} itself) are alias-free exactly when pad_factor ≥ n.

use std::fmt;
use std::sync::Arc;

/// Errors from spectral-space construction and field operations.
#[derive(Debug)]
pub enum SpectralError {
    /// Invalid construction parameters (mode counts, lengths, pad factor).
    InvalidSpace(String),
    /// Two fields belong to incompatible discretizations.
    SpaceMismatch,
    /// A physical grid has the wrong size for the target space.
    GridSizeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// A coefficient is NaN or infinite.
    NonFiniteCoefficient { index: usize },
    /// Pointwise powers are defined for odd exponents only.
    EvenPower { q: u32 },
    /// The configured pad factor cannot dealias the requested product.
    PadTooSmall { pad_factor: usize, required: usize },
    /// The semigroup e^{−tA} is only defined for t ≥ 0.
    NegativeTime { t: f64 },
}

impl fmt::Display for SpectralError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectralError::InvalidSpace(msg) => write!(f, "invalid spectral space: {msg}"),
            SpectralError::SpaceMismatch => {
                write!(f, "fields belong to incompatible spectral spaces")
            }
            SpectralError::GridSizeMismatch { expected, got } => write!(
                f,
                "physical grid is {}x{}, expected {}x{}",
                got.0, got.1, expected.0, expected.1
            ),
            SpectralError::NonFiniteCoefficient { index } => {
                write!(f, "coefficient {index} is not finite")
            }
            SpectralError::EvenPower { q } => {
                write!(f, "pointwise power requires an odd exponent, got {q}")
            }
            SpectralError::PadTooSmall {
                pad_factor,
                required,
            } => write!(
                f,
                "pad factor {pad_factor} too small for alias-free product (need >= {required})"
            ),
            SpectralError::NegativeTime { t } => {
                write!(f, "semigroup time must be nonnegative, got {t}")
            }
        }
    }
}

impl std::error::Error for SpectralError {}

/// Shared discretization: mode cutoffs, rectangle, eigenvalue tables, and
/// precomputed collocation bases for the padded and minimal grids.
#[derive(Debug)]
pub struct SpectralSpace {
    modes_x: usize,
    modes_y: usize,
    length_x: f64,
    length_y: f64,
    pad_factor: usize,
    /// λ_jk = π²((j/Lx)² + (k/Ly)²), row-major over (j,k).
    lambda: Vec<f64>,
    /// μ_jk = λ_jk² + 2λ_jk.
    mu: Vec<f64>,
    /// sqrt(2/Lx)·sin(jπ(i+½)/Mx) for the padded grid, row-major [j][i].
    basis_pad_x: Vec<f64>,
    basis_pad_y: Vec<f64>,
    /// Same tables on the minimal (pad 1) grid.
    basis_min_x: Vec<f64>,
    basis_min_y: Vec<f64>,
}

/// Maximum pad factor; padded grids grow linearly with it and nothing in the
/// model needs products beyond degree 16.
pub const MAX_PAD_FACTOR: usize = 8;

fn sine_basis_table(modes: usize, length: f64, grid: usize) -> Vec<f64> {
    let norm = (2.0 / length).sqrt();
    let mut table = vec![0.0; modes * grid];
    for j in 1..=modes {
        for i in 0..grid {
            let phase = j as f64 * std::f64::consts::PI * (i as f64 + 0.5) / grid as f64;
            table[(j - 1) * grid + i] = norm * phase.sin();
        }
    }
    table
}

impl SpectralSpace {
    /// Builds a space with `modes_x × modes_y` sine modes on
    /// [0,length_x]×[0,length_y] and a padded collocation grid of
    /// `pad_factor·modes + 1` midpoints per axis.
    pub fn new(
        modes_x: usize,
        modes_y: usize,
        length_x: f64,
        length_y: f64,
        pad_factor: usize,
    ) -> Result<Arc<Self>, SpectralError> {
        if modes_x == 0 || modes_y == 0 {
            return Err(SpectralError::InvalidSpace(format!(
                "mode counts must be positive, got {modes_x}x{modes_y}"
            )));
        }
        if !(length_x.is_finite() && length_x > 0.0 && length_y.is_finite() && length_y > 0.0) {
            return Err(SpectralError::InvalidSpace(format!(
                "domain lengths must be positive and finite, got {length_x} x {length_y}"
            )));
        }
        if pad_factor == 0 || pad_factor > MAX_PAD_FACTOR {
            return Err(SpectralError::InvalidSpace(format!(
                "pad factor must be in 1..={MAX_PAD_FACTOR}, got {pad_factor}"
            )));
        }

        let pi = std::f64::consts::PI;
        let mut lambda = vec![0.0; modes_x * modes_y];
        let mut mu = vec![0.0; modes_x * modes_y];
        for j in 1..=modes_x {
            for k in 1..=modes_y {
                let l = pi * pi
                    * ((j as f64 / length_x).powi(2) + (k as f64 / length_y).powi(2));
                lambda[(j - 1) * modes_y + (k - 1)] = l;
                mu[(j - 1) * modes_y + (k - 1)] = l * l + 2.0 * l;
            }
        }

        let (gx, gy) = (pad_factor * modes_x + 1, pad_factor * modes_y + 1);
        let (mx, my) = (modes_x + 1, modes_y + 1);
        Ok(Arc::new(Self {
            modes_x,
            modes_y,
            length_x,
            length_y,
            pad_factor,
            lambda,
            mu,
            basis_pad_x: sine_basis_table(modes_x, length_x, gx),
            basis_pad_y: sine_basis_table(modes_y, length_y, gy),
            basis_min_x: sine_basis_table(modes_x, length_x, mx),
            basis_min_y: sine_basis_table(modes_y, length_y, my),
        }))
    }

    pub fn modes_x(&self) -> usize {
        self.modes_x
    }

    pub fn modes_y(&self) -> usize {
        self.modes_y
    }

    pub fn length_x(&self) -> f64 {
        self.length_x
    }

    pub fn length_y(&self) -> f64 {
        self.length_y
    }

    pub fn pad_factor(&self) -> usize {
        self.pad_factor
    }

    pub fn mode_count(&self) -> usize {
        self.modes_x * self.modes_y
    }

    /// Padded collocation grid size (nx, ny).
    pub fn grid_padded(&self) -> (usize, usize) {
        (
            self.pad_factor * self.modes_x + 1,
            self.pad_factor * self.modes_y + 1,
        )
    }

    /// Minimal collocation grid size (nx, ny), enough for an exact round trip.
    pub fn grid_minimal(&self) -> (usize, usize) {
        (self.modes_x + 1, self.modes_y + 1)
    }

    #[inline]
    fn idx(&self, j: usize, k: usize) -> usize {
        debug_assert!(j >= 1 && j <= self.modes_x && k >= 1 && k <= self.modes_y);
        (j - 1) * self.modes_y + (k - 1)
    }

    /// Laplacian eigenvalue λ_jk of mode (j,k), 1-based.
    pub fn lambda(&self, j: usize, k: usize) -> f64 {
        self.lambda[self.idx(j, k)]
    }

    /// Eigenvalue μ_jk = λ² + 2λ of A = Δ² − 2Δ at mode (j,k), 1-based.
    pub fn mu(&self, j: usize, k: usize) -> f64 {
        self.mu[self.idx(j, k)]
    }

    /// Largest eigenvalue of A on this space; explicit schemes must keep
    /// dt·mu_max ≤ 1.
    pub fn mu_max(&self) -> f64 {
        self.mu(self.modes_x, self.modes_y)
    }

    /// Whether two spaces describe the same discretization (fields may then
    /// be combined; the eigenvalue/basis tables are derived data).
    pub fn compatible(&self, other: &SpectralSpace) -> bool {
        self.modes_x == other.modes_x
            && self.modes_y == other.modes_y
            && self.length_x == other.length_x
            && self.length_y == other.length_y
            && self.pad_factor == other.pad_factor
    }

    /// Midpoint quadrature weight for an nx×ny grid on this rectangle.
    fn quad_weight(&self, nx: usize, ny: usize) -> f64 {
        (self.length_x / nx as f64) * (self.length_y / ny as f64)
    }
}

/// Field values on a midpoint collocation grid.
#[derive(Debug, Clone)]
pub struct PhysicalGrid {
    nx: usize,
    ny: usize,
    padded: bool,
    values: Vec<f64>,
}

impl PhysicalGrid {
    pub fn new(nx: usize, ny: usize, padded: bool, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), nx * ny, "grid value buffer has wrong length");
        Self {
            nx,
            ny,
            padded,
            values,
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn padded(&self) -> bool {
        self.padded
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn value(&self, i: usize, l: usize) -> f64 {
        self.values[i * self.ny + l]
    }
}

/// A real field stored as sine coefficients c_jk, row-major over (j,k).
#[derive(Debug, Clone)]
pub struct SpectralField {
    space: Arc<SpectralSpace>,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(space: &Arc<SpectralSpace>) -> Self {
        Self {
            space: Arc::clone(space),
            coeffs: vec![0.0; space.mode_count()],
        }
    }

    /// Wraps a row-major coefficient vector; every entry must be finite.
    pub fn from_coeffs(
        space: &Arc<SpectralSpace>,
        coeffs: Vec<f64>,
    ) -> Result<Self, SpectralError> {
        if coeffs.len() != space.mode_count() {
            return Err(SpectralError::InvalidSpace(format!(
                "coefficient vector has length {}, space has {} modes",
                coeffs.len(),
                space.mode_count()
            )));
        }
        if let Some(index) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(SpectralError::NonFiniteCoefficient { index });
        }
        Ok(Self {
            space: Arc::clone(space),
            coeffs,
        })
    }

    pub fn space(&self) -> &Arc<SpectralSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient of mode (j,k), 1-based.
    pub fn coeff(&self, j: usize, k: usize) -> f64 {
        self.coeffs[self.space.idx(j, k)]
    }

    pub fn set_coeff(&mut self, j: usize, k: usize, value: f64) {
        let idx = self.space.idx(j, k);
        self.coeffs[idx] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// self += s·other.
    pub fn add_scaled(&mut self, other: &SpectralField, s: f64) -> Result<(), SpectralError> {
        if !self.space.compatible(&other.space) {
            return Err(SpectralError::SpaceMismatch);
        }
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += s * o;
        }
        Ok(())
    }
}

fn check_same_space(u: &SpectralField, v: &SpectralField) -> Result<(), SpectralError> {
    if u.space.compatible(&v.space) {
        Ok(())
    } else {
        Err(SpectralError::SpaceMismatch)
    }
}

/// L² inner product ⟨u,v⟩ = Σ c^u_jk · c^v_jk (the basis is orthonormal).
pub fn inner_h(u: &SpectralField, v: &SpectralField) -> Result<f64, SpectralError> {
    check_same_space(u, v)?;
    Ok(u.coeffs
        .iter()
        .zip(&v.coeffs)
        .map(|(a, b)| a * b)
        .sum())
}

/// L² norm |u|_H.
pub fn norm_h(u: &SpectralField) -> f64 {
    u.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Applies A = Δ² − 2Δ per mode: (Au)_jk = μ_jk c_jk.
pub fn apply_a(u: &SpectralField) -> SpectralField {
    let mut out = u.clone();
    for (c, m) in out.coeffs.iter_mut().zip(&u.space.mu) {
        *c *= m;
    }
    out
}

/// Applies the analytic semigroup S(t) = e^{−tA}: coefficients scale by
/// e^{−μ_jk t}. Unconditionally stable for any t ≥ 0.
pub fn semigroup_apply(t: f64, u: &SpectralField) -> Result<SpectralField, SpectralError> {
    if !(t >= 0.0) {
        return Err(SpectralError::NegativeTime { t });
    }
    let mut out = u.clone();
    for (c, m) in out.coeffs.iter_mut().zip(&u.space.mu) {
        *c *= (-m * t).exp();
    }
    Ok(out)
}

/// H¹₀ seminorm ‖∇u‖_{L²} = (Σ λ_jk c²_jk)^{1/2}.
pub fn seminorm_h10(u: &SpectralField) -> f64 {
    u.coeffs
        .iter()
        .zip(&u.space.lambda)
        .map(|(c, l)| l * c * c)
        .sum::<f64>()
        .sqrt()
}

/// H²₀ seminorm ‖Δu‖_{L²} = (Σ λ²_jk c²_jk)^{1/2}.
pub fn seminorm_h20(u: &SpectralField) -> f64 {
    u.coeffs
        .iter()
        .zip(&u.space.lambda)
        .map(|(c, l)| l * l * c * c)
        .sum::<f64>()
        .sqrt()
}

/// V-norm ‖u‖²_V = |u|²_H + ‖Δu‖²_{L²} + 2‖∇u‖²_{L²} = Σ (1+λ_jk)² c²_jk.
pub fn norm_v(u: &SpectralField) -> f64 {
    u.coeffs
        .iter()
        .zip(&u.space.lambda)
        .map(|(c, l)| {
            let w = 1.0 + l;
            w * w * c * c
        })
        .sum::<f64>()
        .sqrt()
}

/// V inner product ⟨u,v⟩_V = Σ (1+λ_jk)² c^u_jk c^v_jk.
pub fn inner_v(u: &SpectralField, v: &SpectralField) -> Result<f64, SpectralError> {
    check_same_space(u, v)?;
    Ok(u.coeffs
        .iter()
        .zip(&v.coeffs)
        .zip(&u.space.lambda)
        .map(|((a, b), l)| {
            let w = 1.0 + l;
            w * w * a * b
        })
        .sum())
}

/// Graph norm of A: |u|²_E = |u|²_H + |Au|²_H = Σ (1+μ²_jk) c²_jk.
pub fn norm_e(u: &SpectralField) -> f64 {
    u.coeffs
        .iter()
        .zip(&u.space.mu)
        .map(|(c, m)| (1.0 + m * m) * c * c)
        .sum::<f64>()
        .sqrt()
}

fn basis_tables(space: &SpectralSpace, padded: bool) -> (&[f64], &[f64], usize, usize) {
    if padded {
        let (nx, ny) = space.grid_padded();
        (&space.basis_pad_x, &space.basis_pad_y, nx, ny)
    } else {
        let (nx, ny) = space.grid_minimal();
        (&space.basis_min_x, &space.basis_min_y, nx, ny)
    }
}

/// Evaluates u on the midpoint collocation grid (padded or minimal) via two
/// separable matrix products.
pub fn to_physical(u: &SpectralField, pad: bool) -> PhysicalGrid {
    let space = &*u.space;
    let (bx, by, nx, ny) = basis_tables(space, pad);
    let (jm, km) = (space.modes_x, space.modes_y);

    // tmp[j][l] = Σ_k c_jk · by[k][l]
    let mut tmp = vec![0.0; jm * ny];
    for j in 0..jm {
        let row = &u.coeffs[j * km..(j + 1) * km];
        let out = &mut tmp[j * ny..(j + 1) * ny];
        for (k, &c) in row.iter().enumerate() {
            if c != 0.0 {
                let basis_row = &by[k * ny..(k + 1) * ny];
                for (o, b) in out.iter_mut().zip(basis_row) {
                    *o += c * b;
                }
            }
        }
    }

    // values[i][l] = Σ_j bx[j][i] · tmp[j][l]
    let mut values = vec![0.0; nx * ny];
    for j in 0..jm {
        let trow = &tmp[j * ny..(j + 1) * ny];
        let brow = &bx[j * nx..(j + 1) * nx];
        for i in 0..nx {
            let b = brow[i];
            if b != 0.0 {
                let out = &mut values[i * ny..(i + 1) * ny];
                for (o, t) in out.iter_mut().zip(trow) {
                    *o += b * t;
                }
            }
        }
    }

    PhysicalGrid::new(nx, ny, pad, values)
}

/// Projects grid values back onto the sine modes by midpoint quadrature:
/// c_jk = w Σ_il values[i][l] e_jk(x_i, y_l). Exact for any field whose
/// sine-degree stays below the grid's alias limit.
pub fn from_physical(
    space: &Arc<SpectralSpace>,
    grid: &PhysicalGrid,
) -> Result<SpectralField, SpectralError> {
    let (bx, by, nx, ny) = basis_tables(space, grid.padded);
    if grid.nx != nx || grid.ny != ny {
        return Err(SpectralError::GridSizeMismatch {
            expected: (nx, ny),
            got: (grid.nx, grid.ny),
        });
    }
    let (jm, km) = (space.modes_x, space.modes_y);
    let w = space.quad_weight(nx, ny);

    // tmp[j][l] = Σ_i bx[j][i] · values[i][l]
    let mut tmp = vec![0.0; jm * ny];
    for j in 0..jm {
        let brow = &bx[j * nx..(j + 1) * nx];
        let out = &mut tmp[j * ny..(j + 1) * ny];
        for i in 0..nx {
            let b = brow[i];
            let vrow = &grid.values[i * ny..(i + 1) * ny];
            for (o, v) in out.iter_mut().zip(vrow) {
                *o += b * v;
            }
        }
    }

    let mut coeffs = vec![0.0; jm * km];
    for j in 0..jm {
        let trow = &tmp[j * ny..(j + 1) * ny];
        for k in 0..km {
            let brow = &by[k * ny..(k + 1) * ny];
            let mut acc = 0.0;
            for (t, b) in trow.iter().zip(brow) {
                acc += t * b;
            }
            coeffs[j * km + k] = w * acc;
        }
    }

    SpectralField::from_coeffs(space, coeffs)
}

/// Galerkin projection of the odd pointwise power u^q, computed alias-free
/// on the padded grid. `q = 1` is the identity.
pub fn pointwise_power(u: &SpectralField, q: u32) -> Result<SpectralField, SpectralError> {
    if q == 0 || q % 2 == 0 {
        return Err(SpectralError::EvenPower { q });
    }
    if q == 1 {
        return Ok(u.clone());
    }
    let required = ((q + 1) / 2) as usize;
    if u.space.pad_factor < required {
        return Err(SpectralError::PadTooSmall {
            pad_factor: u.space.pad_factor,
            required,
        });
    }
    let mut grid = to_physical(u, true);
    for v in grid.values_mut() {
        *v = v.powi(q as i32);
    }
    from_physical(&u.space, &grid)
}

/// ‖u‖^{2n}_{L^{2n}} = ∫ u^{2n}, by midpoint quadrature on the padded grid
/// (exact for pad_factor ≥ n).
pub fn l2n_power(u: &SpectralField, n: u32) -> Result<f64, SpectralError> {
    if n == 0 {
        return Err(SpectralError::InvalidSpace(
            "L^{2n} norm requires n >= 1".to_string(),
        ));
    }
    if u.space.pad_factor < n as usize {
        return Err(SpectralError::PadTooSmall {
            pad_factor: u.space.pad_factor,
            required: n as usize,
        });
    }
    let grid = to_physical(u, true);
    let (nx, ny) = (grid.nx, grid.ny);
    let w = u.space.quad_weight(nx, ny);
    let exponent = 2 * n as i32;
    Ok(w * grid.values.iter().map(|v| v.powi(exponent)).sum::<f64>())
}

/// L^{2n} norm ‖u‖_{L^{2n}} = (∫ u^{2n})^{1/(2n)}.
pub fn norm_l2n(u: &SpectralField, n: u32) -> Result<f64, SpectralError> {
    Ok(l2n_power(u, n)?.powf(1.0 / (2.0 * n as f64)))
}

/// Quadrature of a pointwise product of grids sharing one layout:
/// ∫ Π_g g(x,y) dx dy by the midpoint rule. Used for mixed pairings such as
/// ⟨u^{2n−2}, p₁p₂⟩ that are not polynomial in a single field.
pub fn quadrature_product(
    space: &SpectralSpace,
    grids: &[&PhysicalGrid],
) -> Result<f64, SpectralError> {
    let first = grids
        .first()
        .expect("quadrature_product requires at least one grid");
    for g in grids {
        if g.nx != first.nx || g.ny != first.ny {
            return Err(SpectralError::GridSizeMismatch {
                expected: (first.nx, first.ny),
                got: (g.nx, g.ny),
            });
        }
    }
    let w = space.quad_weight(first.nx, first.ny);
    let mut acc = 0.0;
    for idx in 0..first.values.len() {
        let mut prod = 1.0;
        for g in grids {
            prod *= g.values[idx];
        }
        acc += prod;
    }
    Ok(w * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::TestRng;

    const PI: f64 = std::f64::consts::PI;

    /// Direct basis evaluation, independent of the precomputed tables.
    fn eval_mode(j: usize, k: usize, lx: f64, ly: f64, x: f64, y: f64) -> f64 {
        2.0 / (lx * ly).sqrt() * (j as f64 * PI * x / lx).sin() * (k as f64 * PI * y / ly).sin()
    }

    fn eval_field(u: &SpectralField, x: f64, y: f64) -> f64 {
        let s = u.space();
        let mut acc = 0.0;
        for j in 1..=s.modes_x() {
            for k in 1..=s.modes_y() {
                acc += u.coeff(j, k) * eval_mode(j, k, s.length_x(), s.length_y(), x, y);
            }
        }
        acc
    }

    /// Independent midpoint-quadrature of f(u(x,y), v(x,y)) on an mx×my grid.
    fn quad2<F: Fn(f64, f64) -> f64>(
        u: &SpectralField,
        v: &SpectralField,
        mx: usize,
        my: usize,
        f: F,
    ) -> f64 {
        let s = u.space();
        let (lx, ly) = (s.length_x(), s.length_y());
        let (hx, hy) = (lx / mx as f64, ly / my as f64);
        let mut acc = 0.0;
        for i in 0..mx {
            let x = (i as f64 + 0.5) * hx;
            for l in 0..my {
                let y = (l as f64 + 0.5) * hy;
                acc += f(eval_field(u, x, y), eval_field(v, x, y));
            }
        }
        acc * hx * hy
    }

    fn random_field(space: &Arc<SpectralSpace>, rng: &mut TestRng) -> SpectralField {
        let coeffs = (0..space.mode_count()).map(|_| rng.symmetric()).collect();
        SpectralField::from_coeffs(space, coeffs).unwrap()
    }

    fn pi_square(modes: usize, pad: usize) -> Arc<SpectralSpace> {
        SpectralSpace::new(modes, modes, PI, PI, pad).unwrap()
    }

    fn single_mode(space: &Arc<SpectralSpace>, j: usize, k: usize, c: f64) -> SpectralField {
        let mut u = SpectralField::zeros(space);
        u.set_coeff(j, k, c);
        u
    }

    fn rel_err(got: f64, want: f64) -> f64 {
        (got - want).abs() / want.abs().max(1.0)
    }

    #[test]
    fn space_construction_validates_parameters() {
        assert!(SpectralSpace::new(0, 4, PI, PI, 1).is_err());
        assert!(SpectralSpace::new(4, 4, -1.0, PI, 1).is_err());
        assert!(SpectralSpace::new(4, 4, PI, f64::NAN, 1).is_err());
        assert!(SpectralSpace::new(4, 4, PI, PI, 0).is_err());
        assert!(SpectralSpace::new(4, 4, PI, PI, MAX_PAD_FACTOR + 1).is_err());
        assert!(SpectralSpace::new(4, 4, PI, PI, MAX_PAD_FACTOR).is_ok());
    }

    #[test]
    fn eigenvalues_match_direct_formula() {
        let s = SpectralSpace::new(5, 4, 1.7, 2.3, 2).unwrap();
        for j in 1..=5 {
            for k in 1..=4 {
                let l = PI * PI * ((j as f64 / 1.7).powi(2) + (k as f64 / 2.3).powi(2));
                assert!(rel_err(s.lambda(j, k), l) < 1e-15);
                assert!(rel_err(s.mu(j, k), l * l + 2.0 * l) < 1e-15);
            }
        }
        assert_eq!(s.mu_max(), s.mu(5, 4));
    }

    #[test]
    fn lambda_of_fundamental_mode_on_pi_square_is_two() {
        let s = pi_square(3, 2);
        assert!(rel_err(s.lambda(1, 1), 2.0) < 1e-14);
        assert!(rel_err(s.mu(1, 1), 8.0) < 1e-14);
    }

    #[test]
    fn inner_h_is_orthonormal_on_single_modes() {
        let s = pi_square(4, 2);
        let e11 = single_mode(&s, 1, 1, 1.0);
        let e32 = single_mode(&s, 3, 2, 1.0);
        assert!((inner_h(&e11, &e11).unwrap() - 1.0).abs() < 1e-12);
        assert!(inner_h(&e11, &e32).unwrap().abs() < 1e-12);
    }

    #[test]
    fn inner_h_matches_independent_quadrature() {
        let s = SpectralSpace::new(3, 3, 1.9, 1.1, 2).unwrap();
        let mut rng = TestRng::new(7);
        let u = random_field(&s, &mut rng);
        let v = random_field(&s, &mut rng);
        let direct = inner_h(&u, &v).unwrap();
        let quad = quad2(&u, &v, 31, 33, |a, b| a * b);
        assert!(
            rel_err(direct, quad) < 1e-10,
            "inner_h {direct} vs quadrature {quad}"
        );
    }

    #[test]
    fn inner_h_rejects_mismatched_spaces() {
        let s1 = pi_square(3, 2);
        let s2 = pi_square(4, 2);
        let u = SpectralField::zeros(&s1);
        let v = SpectralField::zeros(&s2);
        assert!(matches!(
            inner_h(&u, &v),
            Err(SpectralError::SpaceMismatch)
        ));
    }

    #[test]
    fn from_coeffs_rejects_nonfinite_entries() {
        let s = pi_square(2, 1);
        let mut coeffs = vec![0.0; 4];
        coeffs[2] = f64::NAN;
        assert!(matches!(
            SpectralField::from_coeffs(&s, coeffs),
            Err(SpectralError::NonFiniteCoefficient { index: 2 })
        ));
    }

    #[test]
    fn apply_a_on_zero_is_zero() {
        let s = pi_square(4, 1);
        let z = SpectralField::zeros(&s);
        assert_eq!(norm_h(&apply_a(&z)), 0.0);
    }

    #[test]
    fn apply_a_fundamental_mode_gives_eight() {
        let s = pi_square(4, 1);
        let u = single_mode(&s, 1, 1, 1.0);
        let au = apply_a(&u);
        assert!(rel_err(au.coeff(1, 1), 8.0) < 1e-14);
        for j in 1..=4 {
            for k in 1..=4 {
                if (j, k) != (1, 1) {
                    assert_eq!(au.coeff(j, k), 0.0);
                }
            }
        }
    }

    #[test]
    fn apply_a_matches_eigenvalue_recomputation() {
        let s = SpectralSpace::new(4, 5, 2.2, 0.9, 1).unwrap();
        let mut rng = TestRng::new(11);
        let u = random_field(&s, &mut rng);
        let au = apply_a(&u);
        for j in 1..=4 {
            for k in 1..=5 {
                let l = PI * PI * ((j as f64 / 2.2).powi(2) + (k as f64 / 0.9).powi(2));
                let want = (l * l + 2.0 * l) * u.coeff(j, k);
                assert!(rel_err(au.coeff(j, k), want) < 1e-13);
            }
        }
    }

    #[test]
    fn apply_a_is_self_adjoint() {
        let s = pi_square(5, 1);
        let mut rng = TestRng::new(3);
        for _ in 0..100 {
            let u = random_field(&s, &mut rng);
            let v = random_field(&s, &mut rng);
            let lhs = inner_h(&apply_a(&u), &v).unwrap();
            let rhs = inner_h(&u, &apply_a(&v)).unwrap();
            let scale = norm_h(&u) * norm_h(&v) * s.mu_max();
            assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn spectral_energy_identity_holds() {
        // ⟨Au, u⟩ = ‖Δu‖² + 2‖∇u‖².
        let s = SpectralSpace::new(4, 4, 1.3, 2.9, 1).unwrap();
        let mut rng = TestRng::new(19);
        for _ in 0..100 {
            let u = random_field(&s, &mut rng);
            let lhs = inner_h(&apply_a(&u), &u).unwrap();
            let h20 = seminorm_h20(&u);
            let h10 = seminorm_h10(&u);
            let rhs = h20 * h20 + 2.0 * h10 * h10;
            assert!(rel_err(lhs, rhs) < 1e-12);
        }
    }

    #[test]
    fn semigroup_at_zero_is_identity() {
        let s = pi_square(4, 1);
        let mut rng = TestRng::new(23);
        let u = random_field(&s, &mut rng);
        let su = semigroup_apply(0.0, &u).unwrap();
        assert_eq!(su.coeffs(), u.coeffs());
    }

    #[test]
    fn semigroup_fundamental_mode_decay() {
        let s = pi_square(4, 1);
        let u = single_mode(&s, 1, 1, 1.0);
        let su = semigroup_apply(0.1, &u).unwrap();
        assert!(rel_err(su.coeff(1, 1), (-0.8f64).exp()) < 1e-13);
    }

    #[test]
    fn semigroup_is_contractive_and_composes() {
        let s = pi_square(4, 1);
        let mut rng = TestRng::new(29);
        let u = random_field(&s, &mut rng);
        let mut prev = norm_h(&u);
        for step in 1..=6 {
            let t = step as f64 * 0.05;
            let n = norm_h(&semigroup_apply(t, &u).unwrap());
            assert!(n <= prev * (1.0 + 1e-15));
            prev = n;
        }
        let a = semigroup_apply(0.07, &semigroup_apply(0.05, &u).unwrap()).unwrap();
        let b = semigroup_apply(0.12, &u).unwrap();
        for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn semigroup_rejects_negative_time() {
        let s = pi_square(2, 1);
        let u = SpectralField::zeros(&s);
        assert!(matches!(
            semigroup_apply(-1e-9, &u),
            Err(SpectralError::NegativeTime { .. })
        ));
    }

    #[test]
    fn norms_of_fundamental_mode_on_pi_square() {
        let s = pi_square(4, 1);
        let u = single_mode(&s, 1, 1, 1.0);
        assert!(rel_err(seminorm_h10(&u).powi(2), 2.0) < 1e-13);
        assert!(rel_err(seminorm_h20(&u).powi(2), 4.0) < 1e-13);
        assert!(rel_err(norm_v(&u).powi(2), 9.0) < 1e-13);
        assert!(rel_err(norm_e(&u).powi(2), 65.0) < 1e-13);
    }

    #[test]
    fn norms_match_per_mode_recomputation() {
        let s = SpectralSpace::new(5, 3, 1.4, 3.1, 1).unwrap();
        let mut rng = TestRng::new(31);
        let u = random_field(&s, &mut rng);
        let (mut h, mut h10, mut h20, mut v, mut e) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in 1..=5 {
            for k in 1..=3 {
                let c = u.coeff(j, k);
                let l = PI * PI * ((j as f64 / 1.4).powi(2) + (k as f64 / 3.1).powi(2));
                let m = l * l + 2.0 * l;
                h += c * c;
                h10 += l * c * c;
                h20 += l * l * c * c;
                v += (1.0 + l) * (1.0 + l) * c * c;
                e += (1.0 + m * m) * c * c;
            }
        }
        assert!(rel_err(norm_h(&u).powi(2), h) < 1e-13);
        assert!(rel_err(seminorm_h10(&u).powi(2), h10) < 1e-13);
        assert!(rel_err(seminorm_h20(&u).powi(2), h20) < 1e-13);
        assert!(rel_err(norm_v(&u).powi(2), v) < 1e-13);
        assert!(rel_err(norm_e(&u).powi(2), e) < 1e-13);
    }

    #[test]
    fn norm_v_recombines_component_norms() {
        let s = pi_square(6, 1);
        let mut rng = TestRng::new(37);
        for _ in 0..50 {
            let u = random_field(&s, &mut rng);
            let direct = norm_v(&u).powi(2);
            let recombined = norm_h(&u).powi(2)
                + seminorm_h20(&u).powi(2)
                + 2.0 * seminorm_h10(&u).powi(2);
            assert!(rel_err(direct, recombined) < 1e-13);
        }
    }

    #[test]
    fn inner_v_is_the_polarization_of_norm_v() {
        let s = pi_square(4, 1);
        let mut rng = TestRng::new(41);
        let u = random_field(&s, &mut rng);
        let v = random_field(&s, &mut rng);
        let mut sum = u.clone();
        sum.add_scaled(&v, 1.0).unwrap();
        let mut diff = u.clone();
        diff.add_scaled(&v, -1.0).unwrap();
        let polarized = 0.25 * (norm_v(&sum).powi(2) - norm_v(&diff).powi(2));
        assert!(rel_err(inner_v(&u, &v).unwrap(), polarized) < 1e-12);
    }

    #[test]
    fn transform_round_trip_is_exact_for_resolved_fields() {
        let s = SpectralSpace::new(4, 3, 2.0, 1.2, 2).unwrap();
        let mut rng = TestRng::new(43);
        let u = random_field(&s, &mut rng);
        for pad in [true, false] {
            let grid = to_physical(&u, pad);
            let back = from_physical(&s, &grid).unwrap();
            for (a, b) in back.coeffs().iter().zip(u.coeffs()) {
                assert!((a - b).abs() < 1e-12, "round trip pad={pad}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn to_physical_matches_direct_evaluation() {
        let s = SpectralSpace::new(3, 2, 1.6, 2.4, 2).unwrap();
        let mut rng = TestRng::new(47);
        let u = random_field(&s, &mut rng);
        let grid = to_physical(&u, true);
        let (nx, ny) = (grid.nx(), grid.ny());
        for i in 0..nx {
            let x = (i as f64 + 0.5) * s.length_x() / nx as f64;
            for l in 0..ny {
                let y = (l as f64 + 0.5) * s.length_y() / ny as f64;
                let want = eval_field(&u, x, y);
                assert!((grid.value(i, l) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parseval_holds_on_the_padded_grid() {
        let s = pi_square(5, 2);
        let mut rng = TestRng::new(53);
        let u = random_field(&s, &mut rng);
        let grid = to_physical(&u, true);
        let w = s.length_x() / grid.nx() as f64 * (s.length_y() / grid.ny() as f64);
        let quad: f64 = w * grid.values().iter().map(|v| v * v).sum::<f64>();
        let spectral: f64 = u.coeffs().iter().map(|c| c * c).sum();
        assert!(rel_err(quad, spectral) < 1e-12);
    }

    #[test]
    fn from_physical_rejects_wrong_grid_size() {
        let s = pi_square(3, 2);
        let grid = PhysicalGrid::new(5, 5, true, vec![0.0; 25]);
        assert!(matches!(
            from_physical(&s, &grid),
            Err(SpectralError::GridSizeMismatch { .. })
        ));
    }

    #[test]
    fn pointwise_power_q1_is_identity() {
        let s = pi_square(4, 2);
        let mut rng = TestRng::new(59);
        let u = random_field(&s, &mut rng);
        let p = pointwise_power(&u, 1).unwrap();
        assert_eq!(p.coeffs(), u.coeffs());
    }

    #[test]
    fn pointwise_power_of_zero_is_zero() {
        let s = pi_square(4, 2);
        let z = SpectralField::zeros(&s);
        assert_eq!(norm_h(&pointwise_power(&z, 3).unwrap()), 0.0);
    }

    #[test]
    fn pointwise_power_rejects_even_exponents_and_small_pads() {
        let s = pi_square(4, 2);
        let u = SpectralField::zeros(&s);
        assert!(matches!(
            pointwise_power(&u, 2),
            Err(SpectralError::EvenPower { q: 2 })
        ));
        assert!(matches!(
            pointwise_power(&u, 0),
            Err(SpectralError::EvenPower { q: 0 })
        ));
        let narrow = pi_square(4, 1);
        let v = SpectralField::zeros(&narrow);
        assert!(matches!(
            pointwise_power(&v, 3),
            Err(SpectralError::PadTooSmall {
                pad_factor: 1,
                required: 2
            })
        ));
    }

    #[test]
    fn cube_matches_oversampled_projection_oracle() {
        let s = SpectralSpace::new(3, 3, 1.8, 1.3, 2).unwrap();
        let mut u = SpectralField::zeros(&s);
        u.set_coeff(1, 2, 0.7);
        u.set_coeff(2, 1, -0.4);
        let cube = pointwise_power(&u, 3).unwrap();

        // Oracle: evaluate u directly on a 4x-oversampled midpoint grid, cube
        // pointwise, and project onto each basis function by quadrature.
        let (mx, my) = (4 * 3 + 1, 4 * 3 + 1);
        let (hx, hy) = (s.length_x() / mx as f64, s.length_y() / my as f64);
        for j in 1..=3 {
            for k in 1..=3 {
                let mut acc = 0.0;
                for i in 0..mx {
                    let x = (i as f64 + 0.5) * hx;
                    for l in 0..my {
                        let y = (l as f64 + 0.5) * hy;
                        acc += eval_field(&u, x, y).powi(3)
                            * eval_mode(j, k, s.length_x(), s.length_y(), x, y);
                    }
                }
                let want = acc * hx * hy;
                assert!(
                    (cube.coeff(j, k) - want).abs() < 1e-8,
                    "mode ({j},{k}): {} vs oracle {want}",
                    cube.coeff(j, k)
                );
            }
        }
    }

    #[test]
    fn l2n_norm_with_n1_equals_l2_norm() {
        let s = pi_square(5, 2);
        let mut rng = TestRng::new(61);
        for _ in 0..20 {
            let u = random_field(&s, &mut rng);
            assert!(rel_err(norm_l2n(&u, 1).unwrap(), norm_h(&u)) < 1e-10);
        }
    }

    #[test]
    fn l2n_norm_of_zero_is_zero() {
        let s = pi_square(4, 2);
        let z = SpectralField::zeros(&s);
        assert_eq!(norm_l2n(&z, 2).unwrap(), 0.0);
    }

    #[test]
    fn l4_norm_of_fundamental_mode_matches_closed_form() {
        // ∫∫ e_11^4 on the π-square is (16/π⁴)(3π/8)² = 9/(4π²).
        let s = pi_square(3, 2);
        let u = single_mode(&s, 1, 1, 1.3);
        let want = 1.3 * (9.0 / (4.0 * PI * PI)).powf(0.25);
        assert!(rel_err(norm_l2n(&u, 2).unwrap(), want) < 1e-12);
    }

    #[test]
    fn l2n_norm_matches_independent_quadrature() {
        let s = SpectralSpace::new(3, 3, 2.6, 1.7, 2).unwrap();
        let mut rng = TestRng::new(67);
        let u = random_field(&s, &mut rng);
        let direct = l2n_power(&u, 2).unwrap();
        let quad = quad2(&u, &u, 41, 43, |a, _| a.powi(4));
        assert!(rel_err(direct, quad) < 1e-9);
    }

    #[test]
    fn l2n_norm_rejects_bad_arguments() {
        let s = pi_square(3, 1);
        let u = SpectralField::zeros(&s);
        assert!(norm_l2n(&u, 0).is_err());
        assert!(matches!(
            norm_l2n(&u, 2),
            Err(SpectralError::PadTooSmall { .. })
        ));
    }

    #[test]
    fn quadrature_product_matches_inner_product() {
        let s = pi_square(4, 2);
        let mut rng = TestRng::new(71);
        let u = random_field(&s, &mut rng);
        let v = random_field(&s, &mut rng);
        let gu = to_physical(&u, true);
        let gv = to_physical(&v, true);
        let quad = quadrature_product(&s, &[&gu, &gv]).unwrap();
        assert!(rel_err(quad, inner_h(&u, &v).unwrap()) < 1e-12);
    }
}
