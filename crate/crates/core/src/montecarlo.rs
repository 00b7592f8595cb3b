//! Ensemble machinery: reproducible Wiener increments, dyadic refinement,
//! parallel path execution, and convergence-order fits.
//!
//! Increments are produced by a counter-based generator: each Gaussian draw
//! is a pure function of (master seed, path index, channel, step), hashed
//! through a chain of 64-bit finalizer rounds and mapped through Box–Muller.
//! Draws are therefore independent of execution order, so a refined grid can
//! be coarsened to any dyadic level (block sums of 2^r consecutive
//! increments) and coupled runs of different schemes or step sizes see the
//! same Brownian path. Ensembles fan out over a scoped thread pool with a
//! fixed path-to-worker striping and a sequential reduction in path order,
//! which keeps every estimate bit-identical for any worker count.
//!
//! Strong orders are estimated from adjacent-level differences
//! D_r = E|u_{dt_r}(T) − u_{dt_{r+1}}(T)|_H: a weighted least-squares fit of
//! log₂ D_r against r (variances from the delta method) gives the order
//! p̂ = −slope with a 95% half-width from the fit covariance.

use crate::diagnostics::{StoppedEnergyRow, TerminalStatus, TrajectoryDiagnostics};
use crate::dynamics::{
    run_trajectory, DriftParams, DynamicsError, NoiseModel, NoisePath, Scheme, SchemeConfig,
};
use crate::spectral::{norm_h, SpectralField};
use std::fmt;
use std::sync::Mutex;

/// Environment variable capping the worker count.
pub const WORKERS_ENV: &str = "SPHERE_SH_WORKERS";

/// Errors from ensemble configuration and execution.
#[derive(Debug)]
pub enum MonteCarloError {
    InvalidArgument(String),
    /// Coarsening block does not divide the fine step count.
    NotDivisible { steps: usize, block: usize },
    /// Order fits need at least three dyadic levels.
    TooFewLevels { got: usize },
    /// Every path overflowed; the per-path statuses are attached.
    AllPathsOverflowed { statuses: Vec<TerminalStatus> },
    /// A coupled-path study cannot proceed past an overflowing path.
    PathOverflow { path: usize, step: usize },
    Dynamics(DynamicsError),
}

impl fmt::Display for MonteCarloError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonteCarloError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            MonteCarloError::NotDivisible { steps, block } => write!(
                f,
                "coarsening block {block} does not divide {steps} fine steps"
            ),
            MonteCarloError::TooFewLevels { got } => write!(
                f,
                "order estimation requires at least 3 dyadic levels, got {got}"
            ),
            MonteCarloError::AllPathsOverflowed { statuses } => {
                write!(f, "all {} paths overflowed", statuses.len())
            }
            MonteCarloError::PathOverflow { path, step } => {
                write!(f, "path {path} overflowed at step {step}")
            }
            MonteCarloError::Dynamics(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for MonteCarloError {}

impl From<DynamicsError> for MonteCarloError {
    fn from(e: DynamicsError) -> Self {
        MonteCarloError::Dynamics(e)
    }
}

const GAMMA: u64 = 0x9e3779b97f4a7c15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn prf(words: [u64; 5]) -> u64 {
    let mut h = GAMMA;
    for w in words {
        h = mix64(h.wrapping_add(w).wrapping_add(GAMMA));
    }
    h
}

/// One standard-normal draw keyed by (master seed, path, channel, step).
/// Pure in its key, so any draw is addressable without streaming state.
pub fn standard_normal(master_seed: u64, path_index: u64, channel: u64, step: u64) -> f64 {
    let w1 = prf([master_seed, path_index, channel, step, 0]);
    let w2 = prf([master_seed, path_index, channel, step, 1]);
    let u1 = ((w1 >> 11) + 1) as f64 * (1.0 / 9007199254740992.0);
    let u2 = (w2 >> 11) as f64 * (1.0 / 9007199254740992.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A fine-level Wiener grid: `steps` increments of variance `dt_fine` per
/// channel, reproducible from its key alone.
#[derive(Debug, Clone)]
pub struct WienerGrid {
    channels: usize,
    steps: usize,
    dt_fine: f64,
    master_seed: u64,
    path_index: u64,
    /// Channel-major layout: increments[k*steps + s].
    increments: Vec<f64>,
}

impl WienerGrid {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt_fine(&self) -> f64 {
        self.dt_fine
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn increment(&self, channel: usize, step: usize) -> f64 {
        self.increments[channel * self.steps + step]
    }
}

/// Generates the fine Wiener grid for one path.
pub fn generate_path(
    master_seed: u64,
    path_index: u64,
    channels: usize,
    steps: usize,
    dt_fine: f64,
) -> Result<WienerGrid, MonteCarloError> {
    if steps == 0 {
        return Err(MonteCarloError::InvalidArgument(
            "a Wiener grid needs at least one step".to_string(),
        ));
    }
    if !(dt_fine.is_finite() && dt_fine > 0.0) {
        return Err(MonteCarloError::InvalidArgument(format!(
            "fine step size must be positive and finite, got {dt_fine}"
        )));
    }
    let sqrt_dt = dt_fine.sqrt();
    let mut increments = Vec::with_capacity(channels * steps);
    for k in 0..channels {
        for s in 0..steps {
            increments
                .push(standard_normal(master_seed, path_index, k as u64, s as u64) * sqrt_dt);
        }
    }
    Ok(WienerGrid {
        channels,
        steps,
        dt_fine,
        master_seed,
        path_index,
        increments,
    })
}

/// Sums the fine increments over blocks of 2^level consecutive steps,
/// producing the same Brownian path sampled at dt_fine·2^level. Block sums
/// run in ascending step order, so the coarse totals telescope exactly
/// against a fine sum taken in the same blocked association.
pub fn coarsen(grid: &WienerGrid, level: u32) -> Result<NoisePath, MonteCarloError> {
    if level >= 32 {
        return Err(MonteCarloError::InvalidArgument(format!(
            "coarsening level {level} is out of range"
        )));
    }
    let block = 1usize << level;
    if grid.steps % block != 0 {
        return Err(MonteCarloError::NotDivisible {
            steps: grid.steps,
            block,
        });
    }
    let coarse_steps = grid.steps / block;
    let dt = grid.dt_fine * block as f64;
    let mut increments = Vec::with_capacity(grid.channels * coarse_steps);
    for sc in 0..coarse_steps {
        for k in 0..grid.channels {
            let base = k * grid.steps + sc * block;
            let mut acc = 0.0;
            for i in 0..block {
                acc += grid.increments[base + i];
            }
            increments.push(acc);
        }
    }
    Ok(NoisePath::new(grid.channels, coarse_steps, dt, increments)?)
}

/// Resolves the worker count: an explicit request is honored as given;
/// otherwise the available parallelism, capped by the `SPHERE_SH_WORKERS`
/// environment variable (whose malformed values are rejected).
pub fn resolve_workers(requested: Option<usize>) -> Result<usize, MonteCarloError> {
    if let Some(w) = requested {
        if w == 0 {
            return Err(MonteCarloError::InvalidArgument(
                "worker count must be positive".to_string(),
            ));
        }
        return Ok(w);
    }
    let base = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var(WORKERS_ENV) {
        Ok(s) => {
            let cap = s
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|w| *w >= 1)
                .ok_or_else(|| {
                    MonteCarloError::InvalidArgument(format!(
                        "{WORKERS_ENV} must be a positive integer, got {s:?}"
                    ))
                })?;
            Ok(base.min(cap))
        }
        Err(std::env::VarError::NotPresent) => Ok(base),
        Err(std::env::VarError::NotUnicode(_)) => Err(MonteCarloError::InvalidArgument(format!(
            "{WORKERS_ENV} is not valid unicode"
        ))),
    }
}

/// Maps `job` over path indices on a scoped pool. Worker w takes the
/// indices congruent to w modulo the worker count; results are returned in
/// path order, so the subsequent reduction is independent of the pool size.
fn run_paths<T, F>(count: usize, workers: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    if workers <= 1 || count <= 1 {
        return (0..count).map(job).collect();
    }
    let slots: Vec<Mutex<Option<T>>> = (0..count).map(|_| Mutex::new(None)).collect();
    let job = &job;
    let slots_ref = &slots;
    std::thread::scope(|scope| {
        for w in 0..workers.min(count) {
            scope.spawn(move || {
                let mut i = w;
                while i < count {
                    let result = job(i);
                    *slots_ref[i].lock().expect("result slot poisoned") = Some(result);
                    i += workers;
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("result slot poisoned")
                .expect("every path index was assigned to a worker")
        })
        .collect()
}

/// Ensemble description: path count, horizon, a dyadic ladder of step sizes
/// (coarsest first, each level exactly halving the previous), scheme
/// settings, the ‖u‖_V stopping ladder, record stride, master seed, and an
/// optional explicit worker count.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub paths: usize,
    pub t_final: f64,
    pub dt_levels: Vec<f64>,
    pub scheme: Scheme,
    pub renormalize: bool,
    pub truncation_level: Option<f64>,
    pub ell_levels: Vec<f64>,
    pub stride: usize,
    pub master_seed: u64,
    pub workers: Option<usize>,
}

impl EnsembleConfig {
    /// Validates the configuration and returns the step count at the
    /// coarsest level.
    pub fn validate(&self) -> Result<usize, MonteCarloError> {
        if self.paths == 0 {
            return Err(MonteCarloError::InvalidArgument(
                "path count must be positive".to_string(),
            ));
        }
        if self.stride == 0 {
            return Err(MonteCarloError::InvalidArgument(
                "record stride must be positive".to_string(),
            ));
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(MonteCarloError::InvalidArgument(format!(
                "horizon must be positive and finite, got {}",
                self.t_final
            )));
        }
        if self.dt_levels.is_empty() || self.dt_levels.len() > 24 {
            return Err(MonteCarloError::InvalidArgument(format!(
                "need between 1 and 24 step-size levels, got {}",
                self.dt_levels.len()
            )));
        }
        for dt in &self.dt_levels {
            if !(dt.is_finite() && *dt > 0.0) {
                return Err(MonteCarloError::InvalidArgument(format!(
                    "step sizes must be positive and finite, got {dt}"
                )));
            }
        }
        for pair in self.dt_levels.windows(2) {
            if pair[1] * 2.0 != pair[0] {
                return Err(MonteCarloError::InvalidArgument(format!(
                    "levels must halve exactly: {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        let dt0 = self.dt_levels[0];
        let raw = self.t_final / dt0;
        let steps = raw.round();
        if steps < 1.0 || (raw - steps).abs() > 1e-9 * raw.max(1.0) {
            return Err(MonteCarloError::InvalidArgument(format!(
                "horizon {} is not an integer multiple of the coarsest step {}",
                self.t_final, dt0
            )));
        }
        Ok(steps as usize)
    }

    fn fine_steps(&self, coarse_steps: usize) -> usize {
        coarse_steps << (self.dt_levels.len() - 1)
    }

    fn dt_fine(&self) -> f64 {
        *self.dt_levels.last().expect("validated nonempty levels")
    }
}

/// Ensemble estimates: per-record-time means and standard errors over the
/// completed paths, the stopped-energy table per ‖u‖_V level, per-path
/// terminal statuses, and the observed sup of ‖u‖_V.
#[derive(Debug, Clone)]
pub struct EnsembleEstimates {
    pub times: Vec<f64>,
    pub mean_eta: Vec<f64>,
    pub se_eta: Vec<f64>,
    pub mean_energy_y: Vec<f64>,
    pub se_energy_y: Vec<f64>,
    pub mean_norm_v: Vec<f64>,
    pub se_norm_v: Vec<f64>,
    pub stopped_energy: Vec<StoppedEnergyRow>,
    pub statuses: Vec<TerminalStatus>,
    pub completed: usize,
    pub overflowed: usize,
    pub sup_norm_v: f64,
    pub ell_levels: Vec<f64>,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let first = values[0];
    if values.iter().all(|v| *v == first) {
        return (first, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn run_one_path(
    u0: &SpectralField,
    params: &DriftParams,
    cfg: &SchemeConfig,
    noise: &NoiseModel,
    config: &EnsembleConfig,
    fine_steps: usize,
    path_index: usize,
) -> Result<TrajectoryDiagnostics, MonteCarloError> {
    let grid = generate_path(
        config.master_seed,
        path_index as u64,
        noise.channels(),
        fine_steps,
        config.dt_fine(),
    )?;
    let path = coarsen(&grid, 0)?;
    match run_trajectory(u0, params, cfg, noise, &path, config.stride, &config.ell_levels) {
        Ok(diag) => Ok(diag),
        Err(DynamicsError::Overflow {
            diagnostics: Some(diag),
            ..
        }) => Ok(*diag),
        Err(e) => Err(MonteCarloError::Dynamics(e)),
    }
}

/// Runs the ensemble at the finest configured level and reduces it to
/// estimates. Statistics are taken over completed paths (estimates are
/// conditional on completion); overflowed paths are reported in the status
/// list, and an ensemble with no completed path is an error carrying those
/// statuses. Bit-deterministic in (config, inputs) for any worker count.
pub fn run_ensemble(
    u0: &SpectralField,
    config: &EnsembleConfig,
    params: &DriftParams,
    noise: &NoiseModel,
) -> Result<EnsembleEstimates, MonteCarloError> {
    let coarse_steps = config.validate()?;
    let fine_steps = config.fine_steps(coarse_steps);
    let cfg = SchemeConfig::new(
        config.scheme,
        config.dt_fine(),
        config.renormalize,
        config.truncation_level,
        config.master_seed,
        u0.space(),
    )?;
    let workers = resolve_workers(config.workers)?;
    let results = run_paths(config.paths, workers, |p| {
        run_one_path(u0, params, &cfg, noise, config, fine_steps, p)
    });

    let mut diags = Vec::with_capacity(config.paths);
    for r in results {
        diags.push(r?);
    }

    let statuses: Vec<TerminalStatus> = diags.iter().map(|d| d.terminal_status).collect();
    let completed: Vec<&TrajectoryDiagnostics> = diags
        .iter()
        .filter(|d| d.terminal_status == TerminalStatus::Completed)
        .collect();
    let overflowed = diags.len() - completed.len();
    if completed.is_empty() {
        return Err(MonteCarloError::AllPathsOverflowed { statuses });
    }

    let times = completed[0].times.clone();
    let records = times.len();
    let mut mean_eta = Vec::with_capacity(records);
    let mut se_eta = Vec::with_capacity(records);
    let mut mean_energy_y = Vec::with_capacity(records);
    let mut se_energy_y = Vec::with_capacity(records);
    let mut mean_norm_v = Vec::with_capacity(records);
    let mut se_norm_v = Vec::with_capacity(records);
    let mut buffer = Vec::with_capacity(completed.len());
    for i in 0..records {
        buffer.clear();
        buffer.extend(completed.iter().map(|d| d.eta[i]));
        let (m, s) = mean_se(&buffer);
        mean_eta.push(m);
        se_eta.push(s);
        buffer.clear();
        buffer.extend(completed.iter().map(|d| d.energy_y[i]));
        let (m, s) = mean_se(&buffer);
        mean_energy_y.push(m);
        se_energy_y.push(s);
        buffer.clear();
        buffer.extend(completed.iter().map(|d| d.norm_v[i]));
        let (m, s) = mean_se(&buffer);
        mean_norm_v.push(m);
        se_norm_v.push(s);
    }

    let mut stopped_energy = Vec::with_capacity(config.ell_levels.len());
    for (li, level) in config.ell_levels.iter().enumerate() {
        let mut values = Vec::with_capacity(completed.len());
        let mut hits = 0usize;
        for d in &completed {
            let (_, hit) = d.tau_hits[li];
            match hit {
                Some(h) => {
                    hits += 1;
                    values.push(h.energy);
                }
                None => values.push(*d.energy_y.last().expect("nonempty record")),
            }
        }
        let (mean, se) = mean_se(&values);
        stopped_energy.push(StoppedEnergyRow {
            level: *level,
            mean,
            se,
            hit_fraction: hits as f64 / completed.len() as f64,
        });
    }

    let sup_norm_v = completed
        .iter()
        .map(|d| d.sup_norm_v)
        .fold(0.0f64, f64::max);

    Ok(EnsembleEstimates {
        times,
        mean_eta,
        se_eta,
        mean_energy_y,
        se_energy_y,
        mean_norm_v,
        se_norm_v,
        stopped_energy,
        statuses,
        completed: completed.len(),
        overflowed,
        sup_norm_v,
        ell_levels: config.ell_levels.clone(),
    })
}

/// A dyadic order fit: the estimated order p̂ = −slope of log₂(mean
/// difference) against level index, its 95% half-width, and the per-level
/// means and standard errors that entered the fit.
#[derive(Debug, Clone)]
pub struct OrderFit {
    pub p_hat: f64,
    pub half_width: f64,
    pub means: Vec<f64>,
    pub ses: Vec<f64>,
    pub dt_levels: Vec<f64>,
}

/// Weighted least-squares fit of log₂(means) against the level index with
/// delta-method variances; returns (p̂, half-width). Requires at least two
/// positive means.
pub fn fit_dyadic_order(means: &[f64], ses: &[f64]) -> Result<(f64, f64), MonteCarloError> {
    if means.len() < 2 || means.len() != ses.len() {
        return Err(MonteCarloError::InvalidArgument(format!(
            "order fit needs matching mean/se lists with at least 2 entries, got {} and {}",
            means.len(),
            ses.len()
        )));
    }
    if means.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(MonteCarloError::InvalidArgument(
            "order fit needs positive finite differences".to_string(),
        ));
    }
    let ln2 = std::f64::consts::LN_2;
    let ys: Vec<f64> = means.iter().map(|m| m.log2()).collect();
    let sigmas: Vec<f64> = means
        .iter()
        .zip(ses)
        .map(|(m, s)| (s / (m * ln2)).max(1e-12))
        .collect();
    let weights: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * s)).collect();
    let wsum: f64 = weights.iter().sum();
    let xbar = weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * i as f64)
        .sum::<f64>()
        / wsum;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, (&w, y)) in weights.iter().zip(&ys).enumerate() {
        let dx = i as f64 - xbar;
        sxx += w * dx * dx;
        sxy += w * dx * y;
    }
    if sxx <= 0.0 {
        return Err(MonteCarloError::InvalidArgument(
            "order fit is degenerate".to_string(),
        ));
    }
    let slope = sxy / sxx;
    let half_width = 1.96 * (1.0 / sxx).sqrt();
    Ok((-slope, half_width))
}

fn diff_norm(a: &SpectralField, b: &SpectralField) -> f64 {
    let mut d = a.clone();
    d.add_scaled(b, -1.0).expect("coupled states share a space");
    norm_h(&d)
}

fn aggregate_order_fit(
    per_path: Vec<Vec<f64>>,
    dt_levels: &[f64],
) -> Result<OrderFit, MonteCarloError> {
    let cols = per_path[0].len();
    let mut means = Vec::with_capacity(cols);
    let mut ses = Vec::with_capacity(cols);
    let mut buffer = Vec::with_capacity(per_path.len());
    for c in 0..cols {
        buffer.clear();
        buffer.extend(per_path.iter().map(|row| row[c]));
        let (m, s) = mean_se(&buffer);
        means.push(m);
        ses.push(s);
    }
    let (p_hat, half_width) = fit_dyadic_order(&means, &ses)?;
    Ok(OrderFit {
        p_hat,
        half_width,
        means,
        ses,
        dt_levels: dt_levels.to_vec(),
    })
}

/// Terminal state of one trajectory at the given level of a shared grid.
fn terminal_state_at_level(
    u0: &SpectralField,
    params: &DriftParams,
    noise: &NoiseModel,
    config: &EnsembleConfig,
    grid: &WienerGrid,
    scheme: Scheme,
    level_index: usize,
) -> Result<SpectralField, MonteCarloError> {
    let levels = config.dt_levels.len();
    let r = (levels - 1 - level_index) as u32;
    let path = coarsen(grid, r)?;
    let cfg = SchemeConfig::new(
        scheme,
        config.dt_levels[level_index],
        config.renormalize,
        config.truncation_level,
        config.master_seed,
        u0.space(),
    )?;
    match run_trajectory(u0, params, &cfg, noise, &path, usize::MAX, &[]) {
        Ok(diag) => Ok(diag.final_state),
        Err(DynamicsError::Overflow { step, .. }) => Err(MonteCarloError::PathOverflow {
            path: grid.path_index() as usize,
            step,
        }),
        Err(e) => Err(MonteCarloError::Dynamics(e)),
    }
}

/// Strong self-convergence study: couples every dyadic level of each path
/// through one refined grid, measures adjacent-level terminal differences
/// E|u_{dt}(T) − u_{dt/2}(T)|_H, and fits the dyadic order. Requires at
/// least three levels.
pub fn strong_order_estimate(
    u0: &SpectralField,
    config: &EnsembleConfig,
    params: &DriftParams,
    noise: &NoiseModel,
) -> Result<OrderFit, MonteCarloError> {
    let coarse_steps = config.validate()?;
    let levels = config.dt_levels.len();
    if levels < 3 {
        return Err(MonteCarloError::TooFewLevels { got: levels });
    }
    let fine_steps = config.fine_steps(coarse_steps);
    let workers = resolve_workers(config.workers)?;
    let results = run_paths(config.paths, workers, |p| -> Result<Vec<f64>, MonteCarloError> {
        let grid = generate_path(
            config.master_seed,
            p as u64,
            noise.channels(),
            fine_steps,
            config.dt_fine(),
        )?;
        let mut finals = Vec::with_capacity(levels);
        for i in 0..levels {
            finals.push(terminal_state_at_level(
                u0,
                params,
                noise,
                config,
                &grid,
                config.scheme,
                i,
            )?);
        }
        Ok(finals
            .windows(2)
            .map(|w| diff_norm(&w[0], &w[1]))
            .collect())
    });
    let mut per_path = Vec::with_capacity(config.paths);
    for r in results {
        per_path.push(r?);
    }
    aggregate_order_fit(per_path, &config.dt_levels[..levels - 1])
}

/// Itô–Stratonovich consistency study: runs the corrected Euler–Maruyama
/// and the Heun scheme on the same Brownian path at every level and fits
/// the decay order of the cross-scheme terminal gap
/// E|u_em(T) − u_heun(T)|_H. Requires at least three levels.
pub fn ito_stratonovich_gap(
    u0: &SpectralField,
    config: &EnsembleConfig,
    params: &DriftParams,
    noise: &NoiseModel,
) -> Result<OrderFit, MonteCarloError> {
    let coarse_steps = config.validate()?;
    let levels = config.dt_levels.len();
    if levels < 3 {
        return Err(MonteCarloError::TooFewLevels { got: levels });
    }
    let fine_steps = config.fine_steps(coarse_steps);
    let workers = resolve_workers(config.workers)?;
    let results = run_paths(config.paths, workers, |p| -> Result<Vec<f64>, MonteCarloError> {
        let grid = generate_path(
            config.master_seed,
            p as u64,
            noise.channels(),
            fine_steps,
            config.dt_fine(),
        )?;
        let mut gaps = Vec::with_capacity(levels);
        for i in 0..levels {
            let em = terminal_state_at_level(u0, params, noise, config, &grid, Scheme::EmIto, i)?;
            let heun =
                terminal_state_at_level(u0, params, noise, config, &grid, Scheme::HeunStrat, i)?;
            gaps.push(diff_norm(&em, &heun));
        }
        Ok(gaps)
    });
    let mut per_path = Vec::with_capacity(config.paths);
    for r in results {
        per_path.push(r?);
    }
    aggregate_order_fit(per_path, &config.dt_levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{norm_v, SpectralSpace};
    use std::sync::Arc;

    const PI: f64 = std::f64::consts::PI;

    fn space(modes: usize, pad: usize) -> Arc<SpectralSpace> {
        SpectralSpace::new(modes, modes, PI, PI, pad).unwrap()
    }

    fn low_mode_state(s: &Arc<SpectralSpace>) -> SpectralField {
        let mut u = SpectralField::zeros(s);
        u.set_coeff(1, 1, 0.8);
        u.set_coeff(1, 2, 0.4);
        u.set_coeff(2, 1, 0.4);
        let nh = norm_h(&u);
        u.scale(1.0 / nh);
        u
    }

    fn low_mode_noise(s: &Arc<SpectralSpace>) -> NoiseModel {
        let mut f1 = SpectralField::zeros(s);
        f1.set_coeff(1, 2, 0.7);
        f1.set_coeff(2, 2, 0.4);
        let mut f2 = SpectralField::zeros(s);
        f2.set_coeff(2, 1, 0.6);
        f2.set_coeff(1, 1, 0.3);
        NoiseModel::new(vec![f1, f2]).unwrap()
    }

    #[test]
    fn increments_are_reproducible_and_distinct() {
        let a = generate_path(42, 3, 2, 64, 1e-3).unwrap();
        let b = generate_path(42, 3, 2, 64, 1e-3).unwrap();
        assert_eq!(a.increments, b.increments);
        let c = generate_path(42, 4, 2, 64, 1e-3).unwrap();
        assert_ne!(a.increments, c.increments);
        let d = generate_path(43, 3, 2, 64, 1e-3).unwrap();
        assert_ne!(a.increments, d.increments);
    }

    #[test]
    fn increment_statistics_are_gaussian() {
        let n = 1_000_000usize;
        let grid = generate_path(7, 0, 1, n, 1.0).unwrap();
        let xs = &grid.increments;
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() <= 0.01, "variance {var}");
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
        let kurtosis = m4 / (var * var);
        assert!((kurtosis - 3.0).abs() <= 0.15, "kurtosis {kurtosis}");
    }

    #[test]
    fn increments_are_uncorrelated() {
        let n = 10_000usize;
        let a = generate_path(11, 0, 2, n, 1.0).unwrap();
        let b = generate_path(11, 1, 2, n, 1.0).unwrap();
        let bound = 4.0 / (n as f64).sqrt();
        let corr = |x: &[f64], y: &[f64]| {
            let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            let sxx: f64 = x.iter().map(|a| a * a).sum();
            let syy: f64 = y.iter().map(|a| a * a).sum();
            sxy / (sxx * syy).sqrt()
        };
        // Across paths, across channels, and at lag one.
        let a0 = &a.increments[..n];
        let a1 = &a.increments[n..];
        let b0 = &b.increments[..n];
        assert!(corr(a0, b0).abs() <= bound);
        assert!(corr(a0, a1).abs() <= bound);
        assert!(corr(&a0[..n - 1], &a0[1..]).abs() <= bound);
    }

    #[test]
    fn coarsen_identity_and_block_sums() {
        let grid = generate_path(5, 2, 2, 32, 1e-2).unwrap();
        let fine = coarsen(&grid, 0).unwrap();
        assert_eq!(fine.steps(), 32);
        assert_eq!(fine.dt(), 1e-2);
        for s in 0..32 {
            for k in 0..2 {
                assert_eq!(fine.increment(s, k), grid.increment(k, s));
            }
        }

        let coarse = coarsen(&grid, 2).unwrap();
        assert_eq!(coarse.steps(), 8);
        assert_eq!(coarse.dt(), 4e-2);
        for s in 0..8 {
            for k in 0..2 {
                let mut want = 0.0;
                for i in 0..4 {
                    want += grid.increment(k, 4 * s + i);
                }
                assert_eq!(coarse.increment(s, k), want);
            }
        }

        // Blocked telescoping: the coarse total equals the fine total taken
        // in the same blocked association, bit for bit.
        for k in 0..2 {
            let coarse_total: f64 = (0..8).map(|s| coarse.increment(s, k)).sum();
            let blocked_total: f64 = (0..8)
                .map(|s| (0..4).map(|i| grid.increment(k, 4 * s + i)).sum::<f64>())
                .sum();
            assert_eq!(coarse_total, blocked_total);
            let plain_total: f64 = (0..32).map(|s| grid.increment(k, s)).sum();
            assert!((coarse_total - plain_total).abs() < 1e-12);
        }
    }

    #[test]
    fn coarsen_rejects_a_non_dividing_block() {
        let grid = generate_path(5, 2, 1, 10, 1e-2).unwrap();
        assert!(matches!(
            coarsen(&grid, 2),
            Err(MonteCarloError::NotDivisible { steps: 10, block: 4 })
        ));
    }

    fn base_config(paths: usize, dt: f64, steps: usize) -> EnsembleConfig {
        EnsembleConfig {
            paths,
            t_final: dt * steps as f64,
            dt_levels: vec![dt],
            scheme: Scheme::EmItoExponential,
            renormalize: true,
            truncation_level: None,
            ell_levels: vec![2.0, 4.0, 10.0],
            stride: 1,
            master_seed: 99,
            workers: Some(1),
        }
    }

    #[test]
    fn single_path_ensemble_reproduces_the_trajectory() {
        let s = space(4, 2);
        let u0 = low_mode_state(&s);
        let params = DriftParams::new(1.0, 1).unwrap();
        let noise = low_mode_noise(&s);
        let config = base_config(1, 1e-3, 40);
        let estimates = run_ensemble(&u0, &config, &params, &noise).unwrap();

        let grid = generate_path(99, 0, 2, 40, 1e-3).unwrap();
        let path = coarsen(&grid, 0).unwrap();
        let cfg = SchemeConfig::new(Scheme::EmItoExponential, 1e-3, true, None, 99, &s).unwrap();
        let diag = run_trajectory(&u0, &params, &cfg, &noise, &path, 1, &config.ell_levels).unwrap();
        assert_eq!(estimates.times, diag.times);
        assert_eq!(estimates.mean_energy_y, diag.energy_y);
        assert_eq!(estimates.mean_eta, diag.eta);
        assert!(estimates.se_energy_y.iter().all(|s| *s == 0.0));
        assert_eq!(estimates.completed, 1);
    }

    #[test]
    fn zero_noise_ensemble_has_zero_variance() {
        let s = space(3, 2);
        let u0 = low_mode_state(&s);
        let params = DriftParams::new(1.0, 1).unwrap();
        let noise = NoiseModel::new(vec![]).unwrap();
        let mut config = base_config(6, 1e-3, 30);
        config.workers = Some(2);
        let estimates = run_ensemble(&u0, &config, &params, &noise).unwrap();
        assert_eq!(estimates.completed, 6);
        assert!(estimates.se_energy_y.iter().all(|s| *s == 0.0));
        assert!(estimates.se_norm_v.iter().all(|s| *s == 0.0));
        assert!(estimates
            .statuses
            .iter()
            .all(|st| *st == TerminalStatus::Completed));
    }

    #[test]
    fn quadrupling_paths_halves_the_standard_error() {
        let s = space(4, 2);
        let u0 = low_mode_state(&s);
        let params = DriftParams::new(1.0, 1).unwrap();
        let noise = low_mode_noise(&s);
        let small = base_config(24, 1e-3, 50);
        let large = base_config(96, 1e-3, 50);
        let se_small = *run_ensemble(&u0, &small, &params, &noise)
            .unwrap()
            .se_energy_y
            .last()
            .unwrap();
        let se_large = *run_ensemble(&u0, &large, &params, &noise)
            .unwrap()
            .se_energy_y
            .last()
            .unwrap();
        let ratio = se_small / se_large;
        assert!((1.5..2.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn estimates_are_identical_for_any_worker_count() {
        let s = space(4, 2);
        let u0 = low_mode_state(&s);
        let params = DriftParams::new(1.0, 2).unwrap();
        let noise = low_mode_noise(&s);
        let mut config = base_config(13, 1e-3, 25);
        let mut reference: Option<EnsembleEstimates> = None;
        for workers in [1usize, 3, 8] {
            config.workers = Some(workers);
            let estimates = run_ensemble(&u0, &config, &params, &noise).unwrap();
            if let Some(r) = &reference {
                assert_eq!(r.times, estimates.times);
                assert_eq!(r.mean_eta, estimates.mean_eta);
                assert_eq!(r.se_eta, estimates.se_eta);
                assert_eq!(r.mean_energy_y, estimates.mean_energy_y);
                assert_eq!(r.se_energy_y, estimates.se_energy_y);
                assert_eq!(r.mean_norm_v, estimates.mean_norm_v);
                assert_eq!(r.se_norm_v, estimates.se_norm_v);
                assert_eq!(r.sup_norm_v, estimates.sup_norm_v);
                for (a, b) in r.stopped_energy.iter().zip(&estimates.stopped_energy) {
                    assert_eq!(a.mean, b.mean);
                    assert_eq!(a.se, b.se);
                    assert_eq!(a.hit_fraction, b.hit_fraction);
                }
            } else {
                reference = Some(estimates);
            }
        }
    }

    #[test]
    fn gated_linear_flow_couples_exactly_across_levels() {
        // With the gate pinned at zero (‖u₀‖_V ≥ 2m) the exponential scheme
        // integrates the linear flow exactly at every level, so adjacent
        // differences sit at rounding level.
        let s = space(4, 2);
        let u0 = low_mode_state(&s); // ‖u₀‖_V ≈ 3.3 ≥ 2
        let params = DriftParams::new(1.0, 1).unwrap();
        let noise = low_mode_noise(&s);
        let config = EnsembleConfig {
            paths: 2,
            t_final: 64.0 * 1e-3,
            dt_levels: vec![1e-3, 5e-4, 2.5e-4, 1.25e-4],
            scheme: Scheme::EmItoExponential,
            renormalize: false,
            truncation_level: Some(1.0),
            ell_levels: vec![],
            stride: 1,
            master_seed: 31,
            workers: Some(1),
        };
        assert!(norm_v(&u0) >= 2.0);
        let fine_steps = 64 << 3;
        let grid = generate_path(31, 0, 2, fine_steps, 1.25e-4).unwrap();
        let mut finals = Vec::new();
        for i in 0..4 {
            finals.push(
                terminal_state_at_level(&u0, &params, &noise, &config, &grid, config.scheme, i)
                    .unwrap(),
            );
        }
        for w in finals.windows(2) {
            assert!(diff_norm(&w[0], &w[1]) <= 1e-13);
        }
    }

    #[test]
    fn order_estimates_require_three_levels() {
        let s = space(3, 2);
        let u0 = low_mode_state(&s);
        let params = DriftParams::new(1.0, 1).unwrap();
        let noise = NoiseModel::new(vec![]).unwrap();
        let mut config = base_config(2, 1e-3, 8);
        config.dt_levels = vec![1e-3, 5e-4];
        assert!(matches!(
            strong_order_estimate(&u0, &config, &params, &noise),
            Err(MonteCarloError::TooFewLevels { got: 2 })
        ));
        assert!(matches!(
            ito_stratonovich_gap(&u0, &config, &params, &noise),
            Err(MonteCarloError::TooFewLevels { got: 2 })
        ));
    }

    #[test]
    fn em_strong_order_sits_near_one_half() {
        let s = space(6, 2);
        let u0 = low_mode_state(&s);
        let params = DriftParams::new(1.0, 1).unwrap();
        let noise = low_mode_noise(&s);
        let dt0 = 1.2e-4; // dt·μ_max ≈ 0.64 at the coarsest level
        let config = EnsembleConfig {
            paths: 24,
            t_final: 64.0 * dt0,
            dt_levels: vec![dt0, dt0 / 2.0, dt0 / 4.0, dt0 / 8.0],
            scheme: Scheme::EmIto,
            renormalize: true,
            truncation_level: None,
            ell_levels: vec![],
            stride: 1,
            master_seed: 17,
            workers: Some(4),
        };
        let fit = strong_order_estimate(&u0, &config, &params, &noise).unwrap();
        assert!(
            (0.25..=0.9).contains(&fit.p_hat),
            "p_hat {} means {:?}",
            fit.p_hat,
            fit.means
        );
        assert!(fit.half_width.is_finite());
    }

    #[test]
    fn cross_scheme_gap_decays_with_refinement() {
        let s = space(6, 2);
        let u0 = low_mode_state(&s);
        let params = DriftParams::new(1.0, 1).unwrap();
        let noise = low_mode_noise(&s);
        let dt0 = 1.2e-4;
        let config = EnsembleConfig {
            paths: 8,
            t_final: 32.0 * dt0,
            dt_levels: vec![dt0, dt0 / 2.0, dt0 / 4.0],
            scheme: Scheme::EmIto,
            renormalize: true,
            truncation_level: None,
            ell_levels: vec![],
            stride: 1,
            master_seed: 23,
            workers: Some(4),
        };
        let fit = ito_stratonovich_gap(&u0, &config, &params, &noise).unwrap();
        assert!(fit.means.windows(2).all(|w| w[1] < w[0]), "{:?}", fit.means);
        assert!(fit.p_hat >= 0.3, "p_hat {}", fit.p_hat);
    }

    #[test]
    fn worker_resolution_honors_requests_and_environment() {
        assert!(resolve_workers(Some(0)).is_err());
        assert_eq!(resolve_workers(Some(5)).unwrap(), 5);

        std::env::set_var(WORKERS_ENV, "2");
        let capped = resolve_workers(None).unwrap();
        assert!(capped <= 2 && capped >= 1);
        std::env::set_var(WORKERS_ENV, "0");
        assert!(resolve_workers(None).is_err());
        std::env::set_var(WORKERS_ENV, "three");
        assert!(resolve_workers(None).is_err());
        std::env::remove_var(WORKERS_ENV);
        assert!(resolve_workers(None).unwrap() >= 1);
    }

    #[test]
    fn fit_recovers_a_planted_slope() {
        // D_r = 0.37·2^{−0.5 r} exactly: p̂ = 0.5 with zero half-width floor.
        let means: Vec<f64> = (0..5).map(|r| 0.37 * f64::powf(2.0, -0.5 * r as f64)).collect();
        let ses = vec![0.0; 5];
        let (p, hw) = fit_dyadic_order(&means, &ses).unwrap();
        assert!((p - 0.5).abs() < 1e-9);
        assert!(hw < 1e-6);
        assert!(fit_dyadic_order(&[1.0], &[0.0]).is_err());
        assert!(fit_dyadic_order(&[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn ensemble_overflow_policy() {
        // A wildly unstable initial state overflows on every path; the
        // failure carries per-path statuses.
        let s = space(3, 2);
        let mut u0 = SpectralField::zeros(&s);
        u0.set_coeff(1, 1, 1e80);
        let params = DriftParams::new(1.0, 2).unwrap();
        let noise = NoiseModel::new(vec![]).unwrap();
        let mut config = base_config(3, 1e-3, 10);
        config.renormalize = false;
        match run_ensemble(&u0, &config, &params, &noise) {
            Err(MonteCarloError::AllPathsOverflowed { statuses }) => {
                assert_eq!(statuses.len(), 3);
                assert!(statuses
                    .iter()
                    .all(|st| matches!(st, TerminalStatus::Overflow { .. })));
            }
            other => panic!("expected total overflow, got {other:?}"),
        }
    }
}
