//! Text artifacts: trajectory and ensemble CSV series, plot-description
//! sidecars, and checkpoint serialization of spectral fields.
//!
//! Every number is written as decimal text with 17 significant digits,
//! which round-trips IEEE doubles exactly; the determinism guarantees are
//! therefore statements about file bytes, not about in-memory values.

use crate::diagnostics::TrajectoryDiagnostics;
use crate::montecarlo::EnsembleEstimates;
use crate::spectral::{SpectralField, SpectralSpace};
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Errors from reading or writing artifacts.
#[derive(Debug)]
pub enum OutputError {
    Io { path: PathBuf, message: String },
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    Mismatch(String),
}

impl fmt::Display for OutputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputError::Io { path, message } => {
                write!(f, "{}: {message}", path.display())
            }
            OutputError::Parse {
                path,
                line,
                message,
            } => write!(f, "{}:{line}: {message}", path.display()),
            OutputError::Mismatch(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for OutputError {}

/// 17-significant-digit decimal text; parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, e: std::io::Error) -> OutputError {
    OutputError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> OutputError {
    OutputError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_field(path: &Path, line: usize, s: &str, what: &str) -> Result<f64, OutputError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("cannot parse {what} from {s:?}")))
}

pub const TIMESERIES_HEADER: &str = "t,eta,energy_Y,norm_V,norm_L2n,x_norm";
pub const ENSEMBLE_HEADER: &str =
    "t,mean_eta,se_eta,mean_energy_Y,se_energy_Y,mean_norm_V,se_norm_V";

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("plot")
}

fn write_sidecar(path: &Path, lines: &[&str]) -> Result<(), OutputError> {
    let sidecar = sidecar_path(path);
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(&sidecar, text).map_err(|e| io_err(&sidecar, e))
}

/// Writes one trajectory as CSV: the header, one row per recorded time,
/// then `# tau_hit ell=<ℓ> t=<t>` comment lines for every stopping level
/// that was reached. A companion `.plot` sidecar describes the columns.
pub fn write_timeseries(diag: &TrajectoryDiagnostics, path: &Path) -> Result<(), OutputError> {
    let mut text = String::new();
    text.push_str(TIMESERIES_HEADER);
    text.push('\n');
    for i in 0..diag.times.len() {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            format_f64(diag.times[i]),
            format_f64(diag.eta[i]),
            format_f64(diag.energy_y[i]),
            format_f64(diag.norm_v[i]),
            format_f64(diag.norm_l2n[i]),
            format_f64(diag.x_norm[i]),
        );
    }
    for (ell, hit) in &diag.tau_hits {
        if let Some(h) = hit {
            let _ = writeln!(
                text,
                "# tau_hit ell={} t={}",
                format_f64(*ell),
                format_f64(h.time)
            );
        }
    }
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    write_sidecar(
        path,
        &[
            "columns of the trajectory series, one row per recorded time",
            "t: record time",
            "eta: sphere defect |u|^2_H - 1",
            "energy_Y: 0.5*||u||^2_V + (1/2n)*||u||^{2n}_{L2n}",
            "norm_V: ||u||_V",
            "norm_L2n: ||u||_{L2n}",
            "x_norm: (sup_s ||u||^2_V + int |u|^2_E)^{1/2} up to the row's time",
            "comments: `# tau_hit ell=<level> t=<time>` marks the first time ||u||_V reached the level",
            "suggested panels: t vs eta, t vs energy_Y, t vs norm_V",
        ],
    )
}

/// Reads a trajectory CSV back: the data rows and the (ell, t) stopping
/// comments. Used as the round-trip oracle for the writer.
pub fn read_timeseries(path: &Path) -> Result<(Vec<[f64; 6]>, Vec<(f64, f64)>), OutputError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == TIMESERIES_HEADER => {}
        _ => return Err(parse_err(path, 1, "missing timeseries header")),
    }
    let mut rows = Vec::new();
    let mut hits = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if let Some(rest) = line.strip_prefix("# tau_hit ell=") {
            let (ell_text, t_text) = rest
                .split_once(" t=")
                .ok_or_else(|| parse_err(path, lineno, "malformed tau_hit comment"))?;
            hits.push((
                parse_field(path, lineno, ell_text, "ell")?,
                parse_field(path, lineno, t_text, "t")?,
            ));
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected 6 columns, got {}", parts.len()),
            ));
        }
        let mut row = [0.0f64; 6];
        for (c, part) in parts.iter().enumerate() {
            row[c] = parse_field(path, lineno, part, "column value")?;
        }
        rows.push(row);
    }
    Ok((rows, hits))
}

/// Writes ensemble estimates as CSV: per-time means and standard errors,
/// then comment lines for the stopped-energy table and the run summary.
pub fn write_ensemble(estimates: &EnsembleEstimates, path: &Path) -> Result<(), OutputError> {
    let mut text = String::new();
    text.push_str(ENSEMBLE_HEADER);
    text.push('\n');
    for i in 0..estimates.times.len() {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            format_f64(estimates.times[i]),
            format_f64(estimates.mean_eta[i]),
            format_f64(estimates.se_eta[i]),
            format_f64(estimates.mean_energy_y[i]),
            format_f64(estimates.se_energy_y[i]),
            format_f64(estimates.mean_norm_v[i]),
            format_f64(estimates.se_norm_v[i]),
        );
    }
    for row in &estimates.stopped_energy {
        let _ = writeln!(
            text,
            "# stopped ell={} mean={} se={} hit_fraction={}",
            format_f64(row.level),
            format_f64(row.mean),
            format_f64(row.se),
            format_f64(row.hit_fraction),
        );
    }
    let _ = writeln!(
        text,
        "# completed={} overflowed={} sup_norm_V={}",
        estimates.completed,
        estimates.overflowed,
        format_f64(estimates.sup_norm_v),
    );
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    write_sidecar(
        path,
        &[
            "columns of the ensemble series, one row per record time, means over completed paths",
            "t: record time",
            "mean_eta, se_eta: sample mean and standard error of the sphere defect",
            "mean_energy_Y, se_energy_Y: sample mean and standard error of the energy",
            "mean_norm_V, se_norm_V: sample mean and standard error of ||u||_V",
            "comments: `# stopped ell=...` rows give E[Y(u(T ∧ tau_ell))] per stopping level,",
            "followed by `# completed=... overflowed=... sup_norm_V=...`",
            "suggested panels: t vs mean_energy_Y with se band; ell vs stopped mean",
        ],
    )
}

/// Writes a dyadic order fit as CSV: one row per adjacent-level difference,
/// then the fitted order and half-width as comments.
pub fn write_order_fit(
    fit: &crate::montecarlo::OrderFit,
    path: &Path,
) -> Result<(), OutputError> {
    let mut text = String::new();
    text.push_str("level,dt,mean_diff,se_diff\n");
    for i in 0..fit.means.len() {
        let _ = writeln!(
            text,
            "{i},{},{},{}",
            format_f64(fit.dt_levels[i]),
            format_f64(fit.means[i]),
            format_f64(fit.ses[i]),
        );
    }
    let _ = writeln!(text, "# p_hat={}", format_f64(fit.p_hat));
    let _ = writeln!(text, "# half_width={}", format_f64(fit.half_width));
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    write_sidecar(
        path,
        &[
            "adjacent-level strong differences on coupled paths",
            "level: dyadic level index (0 = coarsest pair)",
            "dt: step size of the coarser member of the pair",
            "mean_diff: E|u_dt(T) - u_{dt/2}(T)|_H over paths",
            "se_diff: standard error of mean_diff",
            "comments: fitted order `# p_hat=...` with 95% half-width",
            "suggested panel: log2(mean_diff) vs level, slope = -p_hat",
        ],
    )
}

/// Writes a bounded-moment report as CSV: the stopped-energy table, then
/// the scalar conclusions and the coercivity rows as comments.
pub fn write_khashminskii(
    report: &crate::diagnostics::KhashminskiiReport,
    path: &Path,
) -> Result<(), OutputError> {
    let mut text = String::new();
    text.push_str("ell,mean_stopped_energy,se,hit_fraction\n");
    for row in &report.stopped_energy {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            format_f64(row.level),
            format_f64(row.mean),
            format_f64(row.se),
            format_f64(row.hit_fraction),
        );
    }
    let _ = writeln!(
        text,
        "# energy_nonnegative={}",
        report.energy_nonnegative
    );
    let _ = writeln!(text, "# initial_energy={}", format_f64(report.initial_energy));
    let _ = writeln!(
        text,
        "# observed_sup_norm_V={}",
        format_f64(report.observed_sup_norm_v)
    );
    let _ = writeln!(text, "# saturated={}", report.saturated);
    let _ = writeln!(text, "# overflows={}", report.overflows);
    for (p, bound) in &report.coercivity {
        let _ = writeln!(
            text,
            "# q_P P={} lower_bound={}",
            format_f64(*p),
            format_f64(*bound)
        );
    }
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    write_sidecar(
        path,
        &[
            "stopped-energy table E[Y(u(T ∧ tau_ell))] per stopping level",
            "ell: stopping level for ||u||_V",
            "mean_stopped_energy, se: sample mean and standard error over completed paths",
            "hit_fraction: fraction of paths that reached the level",
            "comments: nonnegativity, initial energy, observed sup ||u||_V,",
            "saturation verdict, overflow count, and coercivity rows q_P >= P^2/2",
            "suggested panel: ell vs mean_stopped_energy with se band",
        ],
    )
}

/// Writes a Picard iteration log as CSV: one row per residual, then the
/// convergence verdict as comments.
pub fn write_picard(
    report: &crate::dynamics::PicardReport,
    path: &Path,
) -> Result<(), OutputError> {
    let mut text = String::new();
    text.push_str("iteration,residual\n");
    for (i, r) in report.residuals.iter().enumerate() {
        let _ = writeln!(text, "{},{}", i + 1, format_f64(*r));
    }
    let _ = writeln!(text, "# converged={}", report.converged);
    let _ = writeln!(text, "# iterations={}", report.iterations);
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    write_sidecar(
        path,
        &[
            "Picard iteration residuals r_j = max_i ||y^{(j+1)}(t_i) - y^{(j)}(t_i)||_V",
            "iteration: iteration index j",
            "residual: r_j",
            "comments: convergence verdict and iteration count",
            "suggested panel: iteration vs log10(residual)",
        ],
    )
}

/// Writes a spectral field checkpoint: header `J K Lx Ly`, then J·K
/// coefficients in row-major order (j outer, k inner), one per line.
pub fn write_checkpoint(field: &SpectralField, path: &Path) -> Result<(), OutputError> {
    let s = field.space();
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} {} {} {}",
        s.modes_x(),
        s.modes_y(),
        format_f64(s.length_x()),
        format_f64(s.length_y()),
    );
    for c in field.coeffs() {
        text.push_str(&format_f64(*c));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Reads a checkpoint onto the given space. The header must match the
/// space's mode counts exactly and its side lengths bit for bit.
pub fn read_checkpoint(
    path: &Path,
    space: &Arc<SpectralSpace>,
) -> Result<SpectralField, OutputError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty checkpoint"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(parse_err(path, 1, "header must be `J K Lx Ly`"));
    }
    let j: usize = parts[0]
        .parse()
        .map_err(|_| parse_err(path, 1, format!("cannot parse J from {:?}", parts[0])))?;
    let k: usize = parts[1]
        .parse()
        .map_err(|_| parse_err(path, 1, format!("cannot parse K from {:?}", parts[1])))?;
    let lx = parse_field(path, 1, parts[2], "Lx")?;
    let ly = parse_field(path, 1, parts[3], "Ly")?;
    if j != space.modes_x() || k != space.modes_y() || lx != space.length_x()
        || ly != space.length_y()
    {
        return Err(OutputError::Mismatch(format!(
            "checkpoint {} describes a {j}x{k} space on {lx} x {ly}, expected {}x{} on {} x {}",
            path.display(),
            space.modes_x(),
            space.modes_y(),
            space.length_x(),
            space.length_y(),
        )));
    }
    let expected = space.mode_count();
    let mut coeffs = Vec::with_capacity(expected);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        coeffs.push(parse_field(path, i + 1, line, "coefficient")?);
    }
    if coeffs.len() != expected {
        return Err(OutputError::Mismatch(format!(
            "checkpoint {} holds {} coefficients, expected {expected}",
            path.display(),
            coeffs.len(),
        )));
    }
    SpectralField::from_coeffs(space, coeffs)
        .map_err(|e| OutputError::Mismatch(format!("checkpoint {}: {e}", path.display())))
}
