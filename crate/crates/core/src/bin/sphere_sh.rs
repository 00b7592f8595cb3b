//! Command-line driver: configuration ingestion, subcommand dispatch, and
//! deterministic text-artifact emission.
//!
//! Exit codes: 0 success, 2 configuration or argument error, 3 verification
//! failure (a residual above tolerance, a non-contracting Picard iteration,
//! or a failed bounded-moment check), 4 ensemble or trajectory failure
//! (overflow). All output is a pure function of (config, seed, flags), byte
//! for byte, for any worker count.

use clap::{Arg, ArgAction, Command};
use sphere_sh::config::{load_config, RunConfig};
use sphere_sh::diagnostics::{
    energy_identity_residuals, energy_pairing, energy_y, khashminskii_report,
};
use sphere_sh::dynamics::{picard_solve, run_trajectory, DynamicsError};
use sphere_sh::manifold::{diffusion_b, frechet_db, gamma_identity_residuals};
use sphere_sh::montecarlo::{
    coarsen, generate_path, resolve_workers, run_ensemble, standard_normal,
    strong_order_estimate, MonteCarloError,
};
use sphere_sh::output::{
    format_f64, write_checkpoint, write_ensemble, write_khashminskii, write_order_fit,
    write_picard, write_timeseries,
};
use sphere_sh::spectral::{norm_h, SpectralField, SpectralSpace};
use std::path::PathBuf;
use std::sync::Arc;

const EXIT_OK: i32 = 0;
const EXIT_CONFIG: i32 = 2;
const EXIT_VERIFY: i32 = 3;
const EXIT_RUN: i32 = 4;

fn main() {
    std::process::exit(real_main());
}

fn subcommand(name: &'static str, about: &'static str) -> Command {
    Command::new(name)
        .about(about)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .required(true)
                .help("configuration file"),
        )
        .arg(
            Arg::new("seed")
                .long("seed")
                .value_name("U64")
                .value_parser(clap::value_parser!(u64))
                .help("override the configured master seed"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .value_name("DIR")
                .help("output directory (default: current directory)"),
        )
        .arg(
            Arg::new("quiet")
                .long("quiet")
                .action(ArgAction::SetTrue)
                .help("suppress stdout summaries"),
        )
}

fn cli() -> Command {
    Command::new("sphere-sh")
        .about("Spectral simulator and verification suites for a stochastic modified Swift-Hohenberg equation on the unit L2 sphere")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommands([
            subcommand("simulate", "Integrate one trajectory and write its time series"),
            subcommand("ensemble", "Run a Monte Carlo ensemble and write per-time estimates"),
            subcommand("verify", "Run the manifold and energy identity suites"),
            subcommand("convergence", "Estimate the strong self-convergence order"),
            subcommand("picard", "Run the truncated Picard iteration"),
            subcommand("khashminskii", "Run the bounded-moment (no-explosion) check"),
        ])
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn say(&self, line: &str) {
        if !self.quiet {
            println!("{line}");
        }
    }
}

fn real_main() -> i32 {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let config_path = PathBuf::from(sub.get_one::<String>("config").expect("required"));
    let mut cfg = match load_config(&config_path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(seed) = sub.get_one::<u64>("seed") {
        cfg.seed = *seed;
    }
    if let Err(e) = resolve_workers(cfg.workers) {
        eprintln!("configuration error: {e}");
        return EXIT_CONFIG;
    }
    let out = PathBuf::from(
        sub.get_one::<String>("out")
            .map(String::as_str)
            .unwrap_or("."),
    );
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("configuration error: cannot create {}: {e}", out.display());
        return EXIT_CONFIG;
    }
    let ctx = Ctx {
        cfg,
        out,
        quiet: sub.get_flag("quiet"),
    };
    match name {
        "simulate" => cmd_simulate(&ctx),
        "ensemble" => cmd_ensemble(&ctx),
        "verify" => cmd_verify(&ctx),
        "convergence" => cmd_convergence(&ctx),
        "picard" => cmd_picard(&ctx),
        "khashminskii" => cmd_khashminskii(&ctx),
        _ => unreachable!("unknown subcommand"),
    }
}

fn write_or_fail<T>(result: Result<T, sphere_sh::output::OutputError>) -> Option<i32> {
    match result {
        Ok(_) => None,
        Err(e) => {
            eprintln!("output error: {e}");
            Some(EXIT_CONFIG)
        }
    }
}

fn mc_exit(e: &MonteCarloError) -> i32 {
    match e {
        MonteCarloError::AllPathsOverflowed { .. } | MonteCarloError::PathOverflow { .. } => {
            EXIT_RUN
        }
        MonteCarloError::Dynamics(DynamicsError::Overflow { .. }) => EXIT_RUN,
        _ => EXIT_CONFIG,
    }
}

fn single_path(
    cfg: &RunConfig,
) -> Result<sphere_sh::dynamics::NoisePath, MonteCarloError> {
    let grid = generate_path(
        cfg.seed,
        0,
        cfg.noise.channels(),
        cfg.steps(),
        cfg.dt,
    )?;
    coarsen(&grid, 0)
}

fn cmd_simulate(ctx: &Ctx) -> i32 {
    let cfg = &ctx.cfg;
    let scheme_config = match cfg.scheme_config() {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return EXIT_CONFIG;
        }
    };
    let path = match single_path(cfg) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return EXIT_CONFIG;
        }
    };
    let result = run_trajectory(
        &cfg.u0,
        &cfg.params,
        &scheme_config,
        &cfg.noise,
        &path,
        cfg.stride,
        &cfg.ell_levels,
    );
    let (diag, failed_step) = match result {
        Ok(diag) => (diag, None),
        Err(DynamicsError::Overflow {
            step,
            diagnostics: Some(diag),
        }) => (*diag, Some(step)),
        Err(e) => {
            eprintln!("configuration error: {e}");
            return EXIT_CONFIG;
        }
    };
    let series = ctx.out.join("simulate.csv");
    if let Some(code) = write_or_fail(write_timeseries(&diag, &series)) {
        return code;
    }
    if let Some(code) = write_or_fail(write_checkpoint(
        &diag.final_state,
        &ctx.out.join("final_state.ckpt"),
    )) {
        return code;
    }
    match failed_step {
        Some(step) => {
            eprintln!("trajectory overflowed at step {step}; partial series written");
            EXIT_RUN
        }
        None => {
            ctx.say(&format!(
                "simulate: steps={} records={} final_energy_Y={} sup_abs_eta={} sup_norm_V={}",
                cfg.steps(),
                diag.times.len(),
                format_f64(*diag.energy_y.last().unwrap_or(&f64::NAN)),
                format_f64(diag.sup_abs_eta),
                format_f64(diag.sup_norm_v),
            ));
            EXIT_OK
        }
    }
}

fn cmd_ensemble(ctx: &Ctx) -> i32 {
    let cfg = &ctx.cfg;
    let estimates = match run_ensemble(&cfg.u0, &cfg.ensemble_config(1), &cfg.params, &cfg.noise)
    {
        Ok(est) => est,
        Err(e) => {
            eprintln!("ensemble error: {e}");
            return mc_exit(&e);
        }
    };
    if let Some(code) = write_or_fail(write_ensemble(&estimates, &ctx.out.join("ensemble.csv")))
    {
        return code;
    }
    ctx.say(&format!(
        "ensemble: paths={} completed={} overflowed={} sup_norm_V={}",
        cfg.paths,
        estimates.completed,
        estimates.overflowed,
        format_f64(estimates.sup_norm_v),
    ));
    EXIT_OK
}

/// Deterministic sample field: coefficients are counter-based normal draws
/// keyed by (seed, trial, mode index, salt).
fn sample_field(space: &Arc<SpectralSpace>, seed: u64, trial: u64, salt: u64) -> SpectralField {
    let coeffs = (0..space.mode_count())
        .map(|m| standard_normal(seed, trial, m as u64, salt))
        .collect();
    SpectralField::from_coeffs(space, coeffs).expect("normal draws are finite")
}

fn scaled_state(space: &Arc<SpectralSpace>, seed: u64, trial: u64) -> SpectralField {
    let mut u = sample_field(space, seed, trial, 0);
    let nh = norm_h(&u);
    let target = if trial % 2 == 0 {
        1.0
    } else {
        0.35 + 0.07 * (trial % 17) as f64
    };
    u.scale(target / nh);
    u
}

struct VerifyTable {
    lines: Vec<String>,
    all_pass: bool,
}

impl VerifyTable {
    fn new() -> Self {
        Self {
            lines: vec!["name,max_residual,tolerance,status".to_string()],
            all_pass: true,
        }
    }

    fn row(&mut self, name: &str, residual: f64, tolerance: f64) {
        let pass = residual <= tolerance;
        self.all_pass &= pass;
        self.lines.push(format!(
            "{name},{},{},{}",
            format_f64(residual),
            format_f64(tolerance),
            if pass { "PASS" } else { "FAIL" }
        ));
    }

    fn text(&self) -> String {
        let mut t = self.lines.join("\n");
        t.push('\n');
        t
    }
}

fn cmd_verify(ctx: &Ctx) -> i32 {
    let cfg = &ctx.cfg;
    let space = &cfg.space;
    let n = cfg.params.n;
    let seed = cfg.seed;

    let mut gamma = [0.0f64; 4];
    let mut energy = [0.0f64; 4];
    for trial in 0..100u64 {
        let u = scaled_state(space, seed, trial);
        let f = sample_field(space, seed, trial, 1);
        let g = match gamma_identity_residuals(&f, &u, n) {
            Ok(g) => g,
            Err(e) => {
                eprintln!("verification error: {e}");
                return EXIT_CONFIG;
            }
        };
        gamma[0] = gamma[0].max(g.radial_noise);
        gamma[1] = gamma[1].max(g.noise_quadratic);
        gamma[2] = gamma[2].max(g.radial_correction);
        gamma[3] = gamma[3].max(g.radial_drift);
        let en = match energy_identity_residuals(&f, &u, n) {
            Ok(en) => en,
            Err(e) => {
                eprintln!("verification error: {e}");
                return EXIT_CONFIG;
            }
        };
        energy[0] = energy[0].max(en.noise_pairing);
        energy[1] = energy[1].max(en.correction_pairing);
        energy[2] = energy[2].max(en.second_variation);
        energy[3] = energy[3].max(en.drift_pairing);
    }

    let h = 1e-5;
    let mut db_fd = 0.0f64;
    let mut pairing_fd = 0.0f64;
    for trial in 0..50u64 {
        let u = scaled_state(space, seed, 1000 + trial);
        let f = sample_field(space, seed, 1000 + trial, 1);
        let s = sample_field(space, seed, 1000 + trial, 2);

        let exact = frechet_db(&f, &u, &s);
        let mut up = u.clone();
        up.add_scaled(&s, h).expect("same space");
        let mut um = u.clone();
        um.add_scaled(&s, -h).expect("same space");
        let mut fd = diffusion_b(&f, &up);
        fd.add_scaled(&diffusion_b(&f, &um), -1.0).expect("same space");
        fd.scale(1.0 / (2.0 * h));
        fd.add_scaled(&exact, -1.0).expect("same space");
        db_fd = db_fd.max(norm_h(&fd) / norm_h(&exact).max(1.0));

        let pairing = match energy_pairing(&u, &s, n) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("verification error: {e}");
                return EXIT_CONFIG;
            }
        };
        let y = |v: &SpectralField| energy_y(v, n).expect("padded space");
        let fd_pairing = (y(&up) - y(&um)) / (2.0 * h);
        pairing_fd = pairing_fd.max((pairing - fd_pairing).abs() / pairing.abs().max(1.0));
    }

    let mut table = VerifyTable::new();
    let tol = 1e-9;
    table.row("gamma_radial_noise", gamma[0], tol);
    table.row("gamma_noise_quadratic", gamma[1], tol);
    table.row("gamma_radial_correction", gamma[2], tol);
    table.row("gamma_radial_drift", gamma[3], tol);
    table.row("energy_noise_pairing", energy[0], tol);
    table.row("energy_correction_pairing", energy[1], tol);
    table.row("energy_second_variation", energy[2], tol);
    table.row("energy_drift_pairing", energy[3], tol);
    table.row("frechet_db_fd", db_fd, 1e-6);
    table.row("energy_pairing_fd", pairing_fd, 1e-6);

    let text = table.text();
    if let Err(e) = std::fs::write(ctx.out.join("verify.csv"), &text) {
        eprintln!("output error: {e}");
        return EXIT_CONFIG;
    }
    if !ctx.quiet {
        print!("{text}");
    }
    if table.all_pass {
        EXIT_OK
    } else {
        eprintln!("verification failed: a residual exceeded its tolerance");
        EXIT_VERIFY
    }
}

fn cmd_convergence(ctx: &Ctx) -> i32 {
    let cfg = &ctx.cfg;
    let config = cfg.ensemble_config(cfg.levels);
    let fit = match strong_order_estimate(&cfg.u0, &config, &cfg.params, &cfg.noise) {
        Ok(fit) => fit,
        Err(e) => {
            eprintln!("convergence error: {e}");
            return mc_exit(&e);
        }
    };
    if let Some(code) = write_or_fail(write_order_fit(&fit, &ctx.out.join("convergence.csv")))
    {
        return code;
    }
    ctx.say(&format!(
        "convergence: levels={} paths={} p_hat={} half_width={}",
        cfg.levels,
        cfg.paths,
        format_f64(fit.p_hat),
        format_f64(fit.half_width),
    ));
    EXIT_OK
}

fn cmd_picard(ctx: &Ctx) -> i32 {
    let cfg = &ctx.cfg;
    let path = match single_path(cfg) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return EXIT_CONFIG;
        }
    };
    let report = match picard_solve(
        &cfg.u0,
        &cfg.params,
        &cfg.noise,
        &path,
        cfg.picard_m,
        cfg.picard_tol,
        cfg.picard_max_iter,
    ) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("picard error: {e}");
            return match e {
                DynamicsError::Overflow { .. } => EXIT_RUN,
                _ => EXIT_CONFIG,
            };
        }
    };
    if let Some(code) = write_or_fail(write_picard(&report, &ctx.out.join("picard.csv"))) {
        return code;
    }
    if let Some(code) = write_or_fail(write_checkpoint(
        &report.terminal_state,
        &ctx.out.join("picard_state.ckpt"),
    )) {
        return code;
    }
    ctx.say(&format!(
        "picard: iterations={} converged={} final_residual={}",
        report.iterations,
        report.converged,
        format_f64(*report.residuals.last().unwrap_or(&f64::NAN)),
    ));
    if report.converged {
        EXIT_OK
    } else {
        eprintln!("picard iteration did not contract to tolerance");
        EXIT_VERIFY
    }
}

fn cmd_khashminskii(ctx: &Ctx) -> i32 {
    let cfg = &ctx.cfg;
    let initial_energy = match energy_y(&cfg.u0, cfg.params.n) {
        Ok(y) => y,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return EXIT_CONFIG;
        }
    };
    let estimates = match run_ensemble(&cfg.u0, &cfg.ensemble_config(1), &cfg.params, &cfg.noise)
    {
        Ok(est) => est,
        Err(e) => {
            eprintln!("ensemble error: {e}");
            return mc_exit(&e);
        }
    };
    let report = match khashminskii_report(&estimates, initial_energy) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("ensemble error: {e}");
            return EXIT_RUN;
        }
    };
    if let Some(code) = write_or_fail(write_khashminskii(
        &report,
        &ctx.out.join("khashminskii.csv"),
    )) {
        return code;
    }
    ctx.say(&format!(
        "khashminskii: paths={} overflows={} initial_energy={} sup_norm_V={} saturated={}",
        cfg.paths,
        report.overflows,
        format_f64(report.initial_energy),
        format_f64(report.observed_sup_norm_v),
        report.saturated,
    ));
    if report.energy_nonnegative && report.saturated && report.overflows == 0 {
        EXIT_OK
    } else {
        eprintln!("bounded-moment check failed: nonnegative={} saturated={} overflows={}",
            report.energy_nonnegative, report.saturated, report.overflows);
        EXIT_VERIFY
    }
}
