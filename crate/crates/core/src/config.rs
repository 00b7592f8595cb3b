//! Run configuration: a line-oriented `key = value` dialect with full
//! defaulting and total validation.
//!
//! `#` starts a comment, blank lines are skipped, and every key may appear
//! at most once. Floating-point values accept the literal `pi`. Sparse
//! fields are written as mode lists `(j,k):coeff, (j,k):coeff` with 1-based
//! mode indices, or loaded from checkpoint files (paths resolved relative
//! to the config file). Unknown keys are rejected with their line number,
//! and every cross-field constraint of the inner types (stability bound,
//! pad factor versus nonlinearity, horizon divisibility) is re-checked at
//! load so that no configuration error can surface mid-run.
//!
//! Keys and defaults:
//!
//! | key                | default             | meaning                                  |
//! |--------------------|---------------------|------------------------------------------|
//! | modes_x, modes_y   | 16                  | sine modes per direction                 |
//! | length_x, length_y | pi                  | domain side lengths                      |
//! | pad_factor         | 2                   | dealiasing oversampling (≥ n)            |
//! | a                  | 1.0                 | linear drift coefficient                 |
//! | n                  | 1                   | nonlinearity exponent in u^{2n−1}        |
//! | scheme             | em_ito_exponential  | em_ito, em_ito_exponential, heun_strat   |
//! | dt                 | 1e-3                | time step (coarsest level)               |
//! | t_final            | 1.0                 | horizon, an integer multiple of dt       |
//! | renormalize        | true                | radial retraction after each step        |
//! | truncation_level   | unset               | gate radius m ≥ 1 (unset: no gate)       |
//! | stride             | 1                   | record every stride-th step              |
//! | paths              | 64                  | ensemble size                            |
//! | seed               | 0                   | master seed                              |
//! | levels             | 4                   | dyadic dt levels for convergence studies |
//! | ell_levels         | 4.0, 6.0, 8.0       | stopping ladder for ‖u‖_V               |
//! | workers            | unset               | explicit worker count (unset: automatic) |
//! | picard_tol         | 1e-9                | Picard stopping tolerance                |
//! | picard_max_iter    | 40                  | Picard iteration cap                     |
//! | picard_m           | 10.0                | Picard truncation radius                 |
//! | u0.modes / u0.file | (1,1):1.0           | initial state                            |
//! | fK.modes / fK.file | f1 = (1,2):0.1      | noise channels, K = 1..N contiguous      |

use crate::dynamics::{DriftParams, NoiseModel, Scheme, SchemeConfig};
use crate::montecarlo::EnsembleConfig;
use crate::output::read_checkpoint;
use crate::spectral::{SpectralField, SpectralSpace};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Errors from loading a configuration file.
#[derive(Debug)]
pub enum ConfigError {
    Io { path: PathBuf, message: String },
    Line { line: usize, message: String },
    Field { name: String, message: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, message } => write!(f, "{}: {message}", path.display()),
            ConfigError::Line { line, message } => write!(f, "line {line}: {message}"),
            ConfigError::Field { name, message } => write!(f, "field {name}: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Line {
        line,
        message: message.into(),
    }
}

fn field_err(name: &str, message: impl fmt::Display) -> ConfigError {
    ConfigError::Field {
        name: name.to_string(),
        message: message.to_string(),
    }
}

/// A validated run configuration. All inner-type invariants hold.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub space: Arc<SpectralSpace>,
    pub params: DriftParams,
    pub scheme: Scheme,
    pub dt: f64,
    pub t_final: f64,
    pub renormalize: bool,
    pub truncation_level: Option<f64>,
    pub stride: usize,
    pub paths: usize,
    pub seed: u64,
    pub levels: usize,
    pub ell_levels: Vec<f64>,
    pub workers: Option<usize>,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub picard_m: f64,
    pub u0: SpectralField,
    pub noise: NoiseModel,
}

impl RunConfig {
    /// The scheme settings at the configured dt.
    pub fn scheme_config(&self) -> Result<SchemeConfig, ConfigError> {
        SchemeConfig::new(
            self.scheme,
            self.dt,
            self.renormalize,
            self.truncation_level,
            self.seed,
            &self.space,
        )
        .map_err(|e| field_err("dt", e))
    }

    /// The dyadic step ladder, coarsest first, starting at the configured dt.
    pub fn dt_levels(&self, levels: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(levels);
        let mut dt = self.dt;
        for _ in 0..levels {
            out.push(dt);
            dt /= 2.0;
        }
        out
    }

    /// Step count at the configured dt.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Ensemble settings over the given number of dyadic levels (1 for
    /// plain ensembles, `self.levels` for convergence studies).
    pub fn ensemble_config(&self, levels: usize) -> EnsembleConfig {
        EnsembleConfig {
            paths: self.paths,
            t_final: self.t_final,
            dt_levels: self.dt_levels(levels),
            scheme: self.scheme,
            renormalize: self.renormalize,
            truncation_level: self.truncation_level,
            ell_levels: self.ell_levels.clone(),
            stride: self.stride,
            master_seed: self.seed,
            workers: self.workers,
        }
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    let t = s.trim();
    if t == "pi" {
        return Some(std::f64::consts::PI);
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Splits on commas at parenthesis depth zero.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

fn parse_mode_entry(entry: &str) -> Result<(usize, usize, f64), String> {
    let t = entry.trim();
    let inner = t
        .strip_prefix('(')
        .ok_or_else(|| format!("mode entry {t:?} must look like (j,k):coeff"))?;
    let (indices, rest) = inner
        .split_once(')')
        .ok_or_else(|| format!("mode entry {t:?} is missing a closing parenthesis"))?;
    let (j_text, k_text) = indices
        .split_once(',')
        .ok_or_else(|| format!("mode entry {t:?} needs two indices"))?;
    let j: usize = j_text
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse mode index {:?}", j_text.trim()))?;
    let k: usize = k_text
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse mode index {:?}", k_text.trim()))?;
    let coeff_text = rest
        .trim_start()
        .strip_prefix(':')
        .ok_or_else(|| format!("mode entry {t:?} is missing the `:coeff` part"))?;
    let coeff =
        parse_f64(coeff_text).ok_or_else(|| format!("cannot parse coefficient {coeff_text:?}"))?;
    Ok((j, k, coeff))
}

fn parse_mode_list(s: &str) -> Result<Vec<(usize, usize, f64)>, String> {
    let mut out: Vec<(usize, usize, f64)> = Vec::new();
    for entry in split_top_level(s) {
        if entry.trim().is_empty() {
            return Err("empty mode entry".to_string());
        }
        let (j, k, c) = parse_mode_entry(entry)?;
        if out.iter().any(|(pj, pk, _)| *pj == j && *pk == k) {
            return Err(format!("mode ({j},{k}) is listed twice"));
        }
        out.push((j, k, c));
    }
    Ok(out)
}

/// How one sparse field was specified.
#[derive(Debug, Clone)]
enum FieldSpec {
    Modes(Vec<(usize, usize, f64)>),
    File(PathBuf),
}

fn build_field(
    spec: &FieldSpec,
    name: &str,
    space: &Arc<SpectralSpace>,
    base: &Path,
) -> Result<SpectralField, ConfigError> {
    match spec {
        FieldSpec::Modes(modes) => {
            let mut field = SpectralField::zeros(space);
            for (j, k, c) in modes {
                if *j < 1 || *j > space.modes_x() || *k < 1 || *k > space.modes_y() {
                    return Err(field_err(
                        name,
                        format!(
                            "mode ({j},{k}) is outside the {}x{} space",
                            space.modes_x(),
                            space.modes_y()
                        ),
                    ));
                }
                field.set_coeff(*j, *k, *c);
            }
            Ok(field)
        }
        FieldSpec::File(p) => {
            let resolved = if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            };
            read_checkpoint(&resolved, space).map_err(|e| field_err(name, e))
        }
    }
}

#[derive(Default)]
struct RawConfig {
    values: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key).map(|(_, v)| v)
    }

    fn take_parsed<T>(
        &mut self,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> Option<T>,
        expected: &str,
    ) -> Result<T, ConfigError> {
        match self.values.remove(key) {
            None => Ok(default),
            Some((line, v)) => parse(&v)
                .ok_or_else(|| line_err(line, format!("{key} expects {expected}, got {v:?}"))),
        }
    }

    fn take_f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.take_parsed(key, default, parse_f64, "a finite number (or pi)")
    }

    fn take_usize(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        self.take_parsed(key, default, |s| s.parse().ok(), "a non-negative integer")
    }

    fn take_bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.take_parsed(
            key,
            default,
            |s| match s {
                "true" => Some(true),
                "false" => Some(false),
                _ => None,
            },
            "true or false",
        )
    }
}

fn scan(text: &str) -> Result<RawConfig, ConfigError> {
    let mut raw = RawConfig::default();
    for (i, full_line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = match full_line.find('#') {
            Some(pos) => &full_line[..pos],
            None => full_line,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| line_err(lineno, format!("expected `key = value`, got {line:?}")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(line_err(lineno, "empty key"));
        }
        if let Some((first, _)) = raw.values.get(&key) {
            return Err(line_err(
                lineno,
                format!("duplicate key {key} (first set on line {first})"),
            ));
        }
        raw.values.insert(key, (lineno, value));
    }
    Ok(raw)
}

/// Collects `u0.*` and `f<k>.*` keys into field specifications.
fn take_field_specs(
    raw: &mut RawConfig,
) -> Result<(Option<FieldSpec>, BTreeMap<usize, FieldSpec>), ConfigError> {
    let mut u0 = None;
    let mut noise: BTreeMap<usize, FieldSpec> = BTreeMap::new();
    let keys: Vec<String> = raw.values.keys().cloned().collect();
    for key in keys {
        let (stem, kind) = match key.rsplit_once('.') {
            Some((stem, kind)) if kind == "modes" || kind == "file" => (stem.to_string(), kind),
            _ => continue,
        };
        let channel = if stem == "u0" {
            None
        } else if let Some(num) = stem.strip_prefix('f') {
            match num.parse::<usize>() {
                Ok(k) if k >= 1 => Some(k),
                _ => continue,
            }
        } else {
            continue;
        };
        let (line, value) = raw.values.remove(&key).expect("key listed from the map");
        let spec = if kind == "modes" {
            FieldSpec::Modes(parse_mode_list(&value).map_err(|m| line_err(line, m))?)
        } else {
            FieldSpec::File(PathBuf::from(value))
        };
        match channel {
            None => {
                if u0.is_some() {
                    return Err(line_err(line, "u0 is specified more than once"));
                }
                u0 = Some(spec);
            }
            Some(k) => {
                if noise.contains_key(&k) {
                    return Err(line_err(line, format!("f{k} is specified more than once")));
                }
                noise.insert(k, spec);
            }
        }
    }
    Ok((u0, noise))
}

/// Loads and fully validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut raw = scan(&text)?;
    let (u0_spec, noise_specs) = take_field_specs(&mut raw)?;

    let modes_x = raw.take_usize("modes_x", 16)?;
    let modes_y = raw.take_usize("modes_y", 16)?;
    let length_x = raw.take_f64("length_x", std::f64::consts::PI)?;
    let length_y = raw.take_f64("length_y", std::f64::consts::PI)?;
    let pad_factor = raw.take_usize("pad_factor", 2)?;
    let a = raw.take_f64("a", 1.0)?;
    let n = raw.take_usize("n", 1)? as u32;
    let scheme_name = raw.take("scheme").unwrap_or_else(|| "em_ito_exponential".to_string());
    let dt = raw.take_f64("dt", 1e-3)?;
    let t_final = raw.take_f64("t_final", 1.0)?;
    let renormalize = raw.take_bool("renormalize", true)?;
    let truncation_level = match raw.take("truncation_level") {
        None => None,
        Some(v) => Some(
            parse_f64(&v)
                .ok_or_else(|| field_err("truncation_level", format!("cannot parse {v:?}")))?,
        ),
    };
    let stride = raw.take_usize("stride", 1)?;
    let paths = raw.take_usize("paths", 64)?;
    let seed = raw.take_parsed("seed", 0u64, |s| s.parse().ok(), "a 64-bit integer")?;
    let levels = raw.take_usize("levels", 4)?;
    let ell_levels = match raw.take("ell_levels") {
        None => vec![4.0, 6.0, 8.0],
        Some(v) => {
            let mut out = Vec::new();
            for part in split_top_level(&v) {
                out.push(parse_f64(part).ok_or_else(|| {
                    field_err("ell_levels", format!("cannot parse level {:?}", part.trim()))
                })?);
            }
            out
        }
    };
    let workers = match raw.take("workers") {
        None => None,
        Some(v) => Some(
            v.parse::<usize>()
                .ok()
                .filter(|w| *w >= 1)
                .ok_or_else(|| field_err("workers", format!("expects a positive integer, got {v:?}")))?,
        ),
    };
    let picard_tol = raw.take_f64("picard_tol", 1e-9)?;
    let picard_max_iter = raw.take_usize("picard_max_iter", 40)?;
    let picard_m = raw.take_f64("picard_m", 10.0)?;

    if let Some((key, (line, _))) = raw.values.iter().next() {
        return Err(line_err(*line, format!("unknown key {key}")));
    }

    let scheme = match scheme_name.as_str() {
        "em_ito" => Scheme::EmIto,
        "em_ito_exponential" => Scheme::EmItoExponential,
        "heun_strat" => Scheme::HeunStrat,
        other => {
            return Err(field_err(
                "scheme",
                format!("unknown scheme {other:?} (expected em_ito, em_ito_exponential, or heun_strat)"),
            ))
        }
    };

    let space = SpectralSpace::new(modes_x, modes_y, length_x, length_y, pad_factor)
        .map_err(|e| field_err("modes/lengths/pad_factor", e))?;
    let params = DriftParams::new(a, n).map_err(|e| field_err("a/n", e))?;
    if pad_factor < n as usize {
        return Err(field_err(
            "pad_factor",
            format!("must be at least n = {n} for alias-free powers, got {pad_factor}"),
        ));
    }
    SchemeConfig::new(scheme, dt, renormalize, truncation_level, seed, &space)
        .map_err(|e| field_err("dt/truncation_level", e))?;
    if !(t_final > 0.0) {
        return Err(field_err("t_final", "must be positive"));
    }
    let raw_steps = t_final / dt;
    if raw_steps.round() < 1.0 || (raw_steps - raw_steps.round()).abs() > 1e-9 * raw_steps.max(1.0)
    {
        return Err(field_err(
            "t_final",
            format!("must be a positive integer multiple of dt = {dt}"),
        ));
    }
    if stride == 0 {
        return Err(field_err("stride", "must be at least 1"));
    }
    if paths == 0 {
        return Err(field_err("paths", "must be at least 1"));
    }
    if levels == 0 || levels > 24 {
        return Err(field_err("levels", "must be between 1 and 24"));
    }
    for l in &ell_levels {
        if !(l.is_finite() && *l > 0.0) {
            return Err(field_err("ell_levels", format!("levels must be positive, got {l}")));
        }
    }
    if !(picard_tol > 0.0) {
        return Err(field_err("picard_tol", "must be positive"));
    }
    if picard_max_iter == 0 {
        return Err(field_err("picard_max_iter", "must be at least 1"));
    }
    if !(picard_m >= 1.0) {
        return Err(field_err("picard_m", "must be at least 1"));
    }

    let u0 = match &u0_spec {
        Some(spec) => build_field(spec, "u0", &space, &base)?,
        None => build_field(
            &FieldSpec::Modes(vec![(1, 1, 1.0)]),
            "u0",
            &space,
            &base,
        )?,
    };
    let mut channels = Vec::new();
    if noise_specs.is_empty() {
        channels.push(build_field(
            &FieldSpec::Modes(vec![(1, 2, 0.1)]),
            "f1",
            &space,
            &base,
        )?);
    } else {
        let n_channels = *noise_specs.keys().last().expect("nonempty map");
        for k in 1..=n_channels {
            let spec = noise_specs.get(&k).ok_or_else(|| {
                field_err(
                    &format!("f{k}"),
                    format!("noise channels must be contiguous: f{n_channels} is set but f{k} is missing"),
                )
            })?;
            channels.push(build_field(spec, &format!("f{k}"), &space, &base)?);
        }
    }
    let noise = NoiseModel::new(channels).map_err(|e| field_err("noise", e))?;

    Ok(RunConfig {
        space,
        params,
        scheme,
        dt,
        t_final,
        renormalize,
        truncation_level,
        stride,
        paths,
        seed,
        levels,
        ell_levels,
        workers,
        picard_tol,
        picard_max_iter,
        picard_m,
        u0,
        noise,
    })
}
