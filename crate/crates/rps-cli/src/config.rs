//! Experiment configuration: a TOML grammar over the problem definition
//! (operator, drift, diffusion, period), the numerical parameters, the
//! Monte Carlo plan, and the output layout.
//!
//! Parsing is strict: unknown keys are rejected (with a nearest-key
//! suggestion for likely typos) and every semantic violation is collected
//! and reported in one pass, each naming the constraint it breaks.

use nalgebra::{DMatrix, DVector};
use rps_core::drift::{ConditionMConstants, DriftFamily};
use rps_core::solver::CutoffMode;
use rps_core::spectral::{decompose, HyperbolicSplitting, SpectralError, DEFAULT_EPS_HYP};
use rps_core::{DiffusionSpec, DriftSpec, SolverConfig};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {message}")]
    Parse { message: String },
    #[error("invalid config ({} violation{}):\n  - {}",
        .violations.len(),
        if .violations.len() == 1 { "" } else { "s" },
        .violations.join("\n  - "))]
    Validation { violations: Vec<String> },
}

// ---------------------------------------------------------------------
// Raw TOML shape. Family-specific parameters are all optional here; the
// semantic pass enforces which ones each family requires.
// ---------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    numerics: RawNumerics,
    monte_carlo: RawMonteCarlo,
    #[serde(default)]
    output: RawOutput,
    sweep: Option<RawSweep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    /// Row-major nested array; must be square and symmetric.
    a: Vec<Vec<f64>>,
    tau: f64,
    /// Optional cross-check against the diffusion's column count.
    noise_dim: Option<usize>,
    drift: RawDrift,
    diffusion: RawDiffusion,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrift {
    family: String,
    value: Option<Vec<f64>>,
    amplitude: Option<Vec<f64>>,
    period: Option<f64>,
    matrix: Option<Vec<Vec<f64>>>,
    offset: Option<Vec<f64>>,
    linear: Option<Vec<f64>>,
    cubic: Option<Vec<f64>>,
    values: Option<Vec<Vec<f64>>>,
    condition_m: Option<RawConditionM>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConditionM {
    l1: f64,
    l2: f64,
    l3: f64,
    l4: f64,
    a1: f64,
    b1: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiffusion {
    family: String,
    matrix: Option<Vec<Vec<f64>>>,
    base: Option<Vec<Vec<f64>>>,
    cos_coeffs: Option<Vec<Vec<Vec<f64>>>>,
    sin_coeffs: Option<Vec<Vec<Vec<f64>>>>,
    period: Option<f64>,
    holder_const: Option<f64>,
    values: Option<Vec<Vec<Vec<f64>>>>,
    start_index: Option<i64>,
    table_dt: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumerics {
    dt: f64,
    t_horizon: f64,
    t_check: Option<f64>,
    tol: Option<f64>,
    max_iters: Option<usize>,
    cutoff_mode: Option<String>,
    cutoff_radius: Option<f64>,
    eps_hyp: Option<f64>,
    identity_tol: Option<f64>,
    se_limit: Option<f64>,
    probe_times: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMonteCarlo {
    n_paths: usize,
    master_seed: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    csv_path: Option<String>,
    json_path: Option<String>,
    which_series: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameter: String,
    values: Vec<f64>,
}

// ---------------------------------------------------------------------
// Validated domain objects.
// ---------------------------------------------------------------------

/// Which state series the solve CSV carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhichSeries {
    All,
    Y,
    Z,
    Y1,
}

impl WhichSeries {
    pub fn name(self) -> &'static str {
        match self {
            WhichSeries::All => "all",
            WhichSeries::Y => "y",
            WhichSeries::Z => "z",
            WhichSeries::Y1 => "y1",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OutputPlan {
    pub csv_path: Option<String>,
    pub json_path: Option<String>,
    pub which_series: WhichSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Dt,
    THorizon,
    Tol,
    NPaths,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Dt => "dt",
            SweepParameter::THorizon => "t_horizon",
            SweepParameter::Tol => "tol",
            SweepParameter::NPaths => "n_paths",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

/// Fully validated experiment: the operator, coefficient models, solver
/// parameters, verification tolerances, and output layout.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub a: DMatrix<f64>,
    pub eps_hyp: f64,
    pub drift: DriftSpec,
    pub b0: DiffusionSpec,
    pub solver: SolverConfig,
    /// Tolerance the semiflow/periodicity identity checks compare against.
    pub identity_tol: f64,
    /// Standard-error multiple allowed in moment comparisons.
    pub se_limit: f64,
    /// Probe times for the stationary check.
    pub probe_times: Vec<f64>,
    pub output: OutputPlan,
    pub sweep: Option<SweepPlan>,
    /// SHA-256 of the raw config text, for artifact traceability.
    pub config_sha256: String,
}

impl Experiment {
    /// Eigendecompose the operator with the configured hyperbolicity gap.
    pub fn split(&self) -> Result<HyperbolicSplitting, SpectralError> {
        decompose(&self.a, self.eps_hyp)
    }
}

// ---------------------------------------------------------------------
// Parsing.
// ---------------------------------------------------------------------

/// Edit distance for the unknown-key suggestion.
fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Append a "did you mean" hint when a deny-unknown-fields rejection names
/// a key close to one of the expected keys.
fn with_suggestion(message: String) -> String {
    let Some(start) = message.find("unknown field `") else {
        return message;
    };
    let rest = &message[start + "unknown field `".len()..];
    let Some(end) = rest.find('`') else {
        return message;
    };
    let unknown = &rest[..end];
    let Some(expected_at) = rest.find("expected") else {
        return message;
    };
    let candidates: Vec<&str> = rest[expected_at..]
        .split('`')
        .skip(1)
        .step_by(2)
        .collect();
    let best = candidates
        .iter()
        .map(|c| (levenshtein(unknown, c), *c))
        .min_by_key(|(d, _)| *d);
    match best {
        Some((d, name)) if d <= 2 && d < unknown.len() => {
            format!("{message}\n(did you mean `{name}`?)")
        }
        _ => message,
    }
}

/// True when `whole` is an integer multiple of `part`, using the same
/// near-integer tolerance as the grid arithmetic.
fn divides(part: f64, whole: f64) -> bool {
    if !(part > 0.0) || !whole.is_finite() {
        return false;
    }
    let ratio = whole / part;
    (ratio - ratio.round()).abs() <= 1e-9 * ratio.abs().max(1.0)
}

fn matrix_from(rows: &[Vec<f64>], what: &str, violations: &mut Vec<String>) -> Option<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        violations.push(format!("{what} must be a non-empty nested array"));
        return None;
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        violations.push(format!("{what} rows must all have the same length"));
        return None;
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        violations.push(format!("{what} entries must be finite"));
        return None;
    }
    Some(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn vector_from(entries: &[f64], what: &str, violations: &mut Vec<String>) -> Option<DVector<f64>> {
    if entries.is_empty() {
        violations.push(format!("{what} must be non-empty"));
        return None;
    }
    if entries.iter().any(|x| !x.is_finite()) {
        violations.push(format!("{what} entries must be finite"));
        return None;
    }
    Some(DVector::from_row_slice(entries))
}

/// Reject family parameters that the declared family does not use, so a
/// key on the wrong family is an error rather than silently ignored.
fn reject_unused(
    block: &str,
    family: &str,
    given: &[(&str, bool)],
    used: &[&str],
    violations: &mut Vec<String>,
) {
    for (key, present) in given {
        if *present && !used.contains(key) {
            violations.push(format!("{block} family \"{family}\" does not use key `{key}`"));
        }
    }
}

fn build_drift(raw: &RawDrift, dim: Option<usize>, tau: f64, violations: &mut Vec<String>) -> Option<DriftSpec> {
    let given = [
        ("value", raw.value.is_some()),
        ("amplitude", raw.amplitude.is_some()),
        ("period", raw.period.is_some()),
        ("matrix", raw.matrix.is_some()),
        ("offset", raw.offset.is_some()),
        ("linear", raw.linear.is_some()),
        ("cubic", raw.cubic.is_some()),
        ("values", raw.values.is_some()),
    ];
    let before = violations.len();
    let family = match raw.family.as_str() {
        "zero" => {
            reject_unused("drift", "zero", &given, &[], violations);
            dim.map(|d| DriftFamily::Zero { dim: d })
        }
        "constant" => {
            reject_unused("drift", "constant", &given, &["value"], violations);
            match &raw.value {
                None => {
                    violations.push("drift family \"constant\" requires `value`".into());
                    None
                }
                Some(v) => vector_from(v, "drift value", violations)
                    .map(|value| DriftFamily::Constant { value }),
            }
        }
        "sinusoidal_forcing" => {
            reject_unused("drift", "sinusoidal_forcing", &given, &["amplitude", "period"], violations);
            match &raw.amplitude {
                None => {
                    violations.push("drift family \"sinusoidal_forcing\" requires `amplitude`".into());
                    None
                }
                Some(v) => vector_from(v, "drift amplitude", violations).map(|amplitude| {
                    DriftFamily::SinusoidalForcing { amplitude, period: raw.period.unwrap_or(tau) }
                }),
            }
        }
        "affine" => {
            reject_unused("drift", "affine", &given, &["matrix", "offset"], violations);
            match &raw.matrix {
                None => {
                    violations.push("drift family \"affine\" requires `matrix`".into());
                    None
                }
                Some(rows) => {
                    let matrix = matrix_from(rows, "drift matrix", violations)?;
                    if matrix.nrows() != matrix.ncols() {
                        violations.push("drift matrix must be square".into());
                        return None;
                    }
                    let offset = match &raw.offset {
                        Some(v) => vector_from(v, "drift offset", violations)?,
                        None => DVector::zeros(matrix.nrows()),
                    };
                    if offset.len() != matrix.nrows() {
                        violations.push("drift offset length must match the drift matrix".into());
                        return None;
                    }
                    Some(DriftFamily::Affine { matrix, offset })
                }
            }
        }
        "dissipative_poly" => {
            reject_unused("drift", "dissipative_poly", &given, &["linear", "cubic"], violations);
            match (&raw.linear, &raw.cubic) {
                (Some(l), Some(c)) => {
                    let linear = vector_from(l, "drift linear", violations)?;
                    let cubic = vector_from(c, "drift cubic", violations)?;
                    if linear.len() != cubic.len() {
                        violations.push("drift linear and cubic must have the same length".into());
                        return None;
                    }
                    Some(DriftFamily::DissipativePoly { linear, cubic })
                }
                _ => {
                    violations
                        .push("drift family \"dissipative_poly\" requires `linear` and `cubic`".into());
                    None
                }
            }
        }
        "table" => {
            reject_unused("drift", "table", &given, &["values", "period"], violations);
            match &raw.values {
                None => {
                    violations.push("drift family \"table\" requires `values`".into());
                    None
                }
                Some(rows) => {
                    let mut nodes = Vec::with_capacity(rows.len());
                    for (k, row) in rows.iter().enumerate() {
                        nodes.push(vector_from(row, &format!("drift values[{k}]"), violations)?);
                    }
                    if nodes.is_empty() {
                        violations.push("drift table must be non-empty".into());
                        return None;
                    }
                    let d0 = nodes[0].len();
                    if nodes.iter().any(|n| n.len() != d0) {
                        violations.push("drift table rows must all have the same length".into());
                        return None;
                    }
                    Some(DriftFamily::Table { values: nodes, period: raw.period.unwrap_or(tau) })
                }
            }
        }
        other => {
            violations.push(format!(
                "unknown drift family \"{other}\" (expected zero, constant, sinusoidal_forcing, affine, dissipative_poly, or table)"
            ));
            None
        }
    };
    if violations.len() > before {
        return None;
    }
    let family = family?;
    if let Some(p) = match &family {
        DriftFamily::SinusoidalForcing { period, .. } | DriftFamily::Table { period, .. } => Some(*period),
        _ => None,
    } {
        if !(p > 0.0) {
            violations.push("drift period must be positive".into());
            return None;
        }
    }
    let mut spec = DriftSpec::new(family);
    if let Some(d) = dim {
        if spec.dim() != d {
            violations.push(format!(
                "drift dimension {} must match the operator dimension {d}",
                spec.dim()
            ));
            return None;
        }
    }
    if let Some(c) = &raw.condition_m {
        spec = spec.with_condition_m(ConditionMConstants {
            l1: c.l1,
            l2: c.l2,
            l3: c.l3,
            l4: c.l4,
            a1: c.a1,
            b1: c.b1,
        });
    }
    Some(spec)
}

fn build_diffusion(raw: &RawDiffusion, dim: Option<usize>, tau: f64, violations: &mut Vec<String>) -> Option<DiffusionSpec> {
    let given = [
        ("matrix", raw.matrix.is_some()),
        ("base", raw.base.is_some()),
        ("cos_coeffs", raw.cos_coeffs.is_some()),
        ("sin_coeffs", raw.sin_coeffs.is_some()),
        ("period", raw.period.is_some()),
        ("holder_const", raw.holder_const.is_some()),
        ("values", raw.values.is_some()),
        ("start_index", raw.start_index.is_some()),
        ("table_dt", raw.table_dt.is_some()),
    ];
    let before = violations.len();
    let matrices_from = |tables: &[Vec<Vec<f64>>],
                         what: &str,
                         violations: &mut Vec<String>|
     -> Option<Vec<DMatrix<f64>>> {
        let mut out = Vec::with_capacity(tables.len());
        for (k, rows) in tables.iter().enumerate() {
            out.push(matrix_from(rows, &format!("{what}[{k}]"), violations)?);
        }
        let shape = out.first().map(|m| (m.nrows(), m.ncols()));
        if let Some(shape) = shape {
            if out.iter().any(|m| (m.nrows(), m.ncols()) != shape) {
                violations.push(format!("{what} entries must all have the same shape"));
                return None;
            }
        }
        Some(out)
    };
    let spec = match raw.family.as_str() {
        "constant" => {
            reject_unused("diffusion", "constant", &given, &["matrix"], violations);
            match &raw.matrix {
                None => {
                    violations.push("diffusion family \"constant\" requires `matrix`".into());
                    None
                }
                Some(rows) => {
                    matrix_from(rows, "diffusion matrix", violations).map(DiffusionSpec::constant)
                }
            }
        }
        "fourier" => {
            reject_unused(
                "diffusion",
                "fourier",
                &given,
                &["base", "cos_coeffs", "sin_coeffs", "period", "holder_const"],
                violations,
            );
            match &raw.base {
                None => {
                    violations.push("diffusion family \"fourier\" requires `base`".into());
                    None
                }
                Some(rows) => {
                    let base = matrix_from(rows, "diffusion base", violations)?;
                    let cos = match &raw.cos_coeffs {
                        Some(t) => matrices_from(t, "diffusion cos_coeffs", violations)?,
                        None => Vec::new(),
                    };
                    let sin = match &raw.sin_coeffs {
                        Some(t) => matrices_from(t, "diffusion sin_coeffs", violations)?,
                        None => Vec::new(),
                    };
                    let shape = (base.nrows(), base.ncols());
                    if cos.iter().chain(sin.iter()).any(|m| (m.nrows(), m.ncols()) != shape) {
                        violations
                            .push("diffusion fourier coefficients must match the base shape".into());
                        return None;
                    }
                    let period = raw.period.unwrap_or(tau);
                    if !(period > 0.0) {
                        violations.push("diffusion period must be positive".into());
                        return None;
                    }
                    Some(DiffusionSpec::fourier(
                        base,
                        cos,
                        sin,
                        period,
                        raw.holder_const.unwrap_or(0.0),
                    ))
                }
            }
        }
        "table_periodic" => {
            reject_unused(
                "diffusion",
                "table_periodic",
                &given,
                &["values", "period", "holder_const"],
                violations,
            );
            match &raw.values {
                None => {
                    violations.push("diffusion family \"table_periodic\" requires `values`".into());
                    None
                }
                Some(tables) => {
                    let values = matrices_from(tables, "diffusion values", violations)?;
                    if values.is_empty() {
                        violations.push("diffusion table must be non-empty".into());
                        return None;
                    }
                    let period = raw.period.unwrap_or(tau);
                    if !(period > 0.0) {
                        violations.push("diffusion period must be positive".into());
                        return None;
                    }
                    Some(DiffusionSpec::table_periodic(
                        values,
                        period,
                        raw.holder_const.unwrap_or(0.0),
                    ))
                }
            }
        }
        "table_absolute" => {
            reject_unused(
                "diffusion",
                "table_absolute",
                &given,
                &["values", "start_index", "table_dt"],
                violations,
            );
            match (&raw.values, raw.table_dt) {
                (Some(tables), Some(table_dt)) => {
                    let values = matrices_from(tables, "diffusion values", violations)?;
                    if values.is_empty() {
                        violations.push("diffusion table must be non-empty".into());
                        return None;
                    }
                    if !(table_dt > 0.0) {
                        violations.push("diffusion table_dt must be positive".into());
                        return None;
                    }
                    Some(DiffusionSpec::table_absolute(
                        values,
                        raw.start_index.unwrap_or(0),
                        table_dt,
                    ))
                }
                _ => {
                    violations.push(
                        "diffusion family \"table_absolute\" requires `values` and `table_dt`".into(),
                    );
                    None
                }
            }
        }
        other => {
            violations.push(format!(
                "unknown diffusion family \"{other}\" (expected constant, fourier, table_periodic, or table_absolute)"
            ));
            None
        }
    };
    if violations.len() > before {
        return None;
    }
    let spec = spec?;
    if let Some(d) = dim {
        if spec.dim() != d {
            violations.push(format!(
                "diffusion row count {} must match the operator dimension {d}",
                spec.dim()
            ));
            return None;
        }
    }
    Some(spec)
}

/// Parse and validate a config document. Returns either the assembled
/// experiment or the full list of violations.
pub fn parse_config(text: &str) -> Result<Experiment, ConfigError> {
    let raw: RawConfig = toml::from_str(text)
        .map_err(|e| ConfigError::Parse { message: with_suggestion(e.to_string()) })?;
    let mut violations: Vec<String> = Vec::new();

    // Operator.
    let a = matrix_from(&raw.problem.a, "problem.a", &mut violations).and_then(|a| {
        if a.nrows() != a.ncols() {
            violations.push("problem.a must be square".into());
            return None;
        }
        let scale = a.amax().max(1.0);
        if (&a - a.transpose()).amax() > 1e-12 * scale {
            violations.push("problem.a must be symmetric".into());
            return None;
        }
        Some(a)
    });
    let dim = a.as_ref().map(|a| a.nrows());

    let tau = raw.problem.tau;
    if !(tau > 0.0 && tau.is_finite()) {
        violations.push("tau must be positive and finite".into());
    }

    // Coefficients.
    let drift = build_drift(&raw.problem.drift, dim, tau, &mut violations);
    let b0 = build_diffusion(&raw.problem.diffusion, dim, tau, &mut violations);
    if let (Some(declared), Some(b0)) = (raw.problem.noise_dim, b0.as_ref()) {
        if declared != b0.noise_dim() {
            violations.push(format!(
                "noise_dim = {declared} must match the diffusion column count {}",
                b0.noise_dim()
            ));
        }
    }
    if let Some(drift) = drift.as_ref() {
        if let Some(p) = drift.period() {
            if tau > 0.0 && !divides(p, tau) {
                violations.push("tau must be a multiple of the drift period".into());
            }
        }
    }
    if let Some(b0) = b0.as_ref() {
        if let Some(p) = b0.period() {
            if tau > 0.0 && !divides(p, tau) {
                violations.push("tau must be a multiple of the diffusion period".into());
            }
        }
    }

    // Numerics.
    let n = &raw.numerics;
    let dt = n.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        violations.push("dt must be positive and finite".into());
    } else {
        if tau > 0.0 && !divides(dt, tau) {
            violations.push("dt must divide tau".into());
        }
        if !(n.t_horizon > 0.0) || (tau > 0.0 && !divides(tau, n.t_horizon)) {
            violations.push("t_horizon must be a positive multiple of tau".into());
        }
    }
    let t_check = n.t_check.unwrap_or(2.0 * tau);
    if dt > 0.0 && (!(t_check > 0.0) || !divides(dt, t_check)) {
        violations.push("t_check must be a positive multiple of dt".into());
    }
    let tol = n.tol.unwrap_or(rps_core::solver::DEFAULT_TOL);
    if !(tol > 0.0) {
        violations.push("tol must be positive".into());
    }
    let max_iters = n.max_iters.unwrap_or(rps_core::solver::DEFAULT_MAX_ITERS);
    if max_iters == 0 {
        violations.push("max_iters must be at least 1".into());
    }
    let eps_hyp = n.eps_hyp.unwrap_or(DEFAULT_EPS_HYP);
    if !(eps_hyp > 0.0) {
        violations.push("eps_hyp must be positive".into());
    }
    let identity_tol = n.identity_tol.unwrap_or(1e-6);
    if !(identity_tol > 0.0) {
        violations.push("identity_tol must be positive".into());
    }
    let se_limit = n.se_limit.unwrap_or(4.0);
    if !(se_limit > 0.0) {
        violations.push("se_limit must be positive".into());
    }
    let cutoff = match n.cutoff_mode.as_deref() {
        None | Some("off") => {
            if n.cutoff_radius.is_some() {
                violations.push("cutoff_radius requires cutoff_mode = \"fixed\"".into());
            }
            CutoffMode::Off
        }
        Some("adaptive") => {
            if n.cutoff_radius.is_some() {
                violations.push("cutoff_radius requires cutoff_mode = \"fixed\"".into());
            }
            CutoffMode::Adaptive
        }
        Some("fixed") => match n.cutoff_radius {
            Some(r) if r > 0.0 => CutoffMode::Fixed(r),
            Some(_) => {
                violations.push("cutoff_radius must be positive".into());
                CutoffMode::Off
            }
            None => {
                violations.push("cutoff_mode = \"fixed\" requires cutoff_radius".into());
                CutoffMode::Off
            }
        },
        Some(other) => {
            violations.push(format!(
                "unknown cutoff_mode \"{other}\" (expected off, fixed, or adaptive)"
            ));
            CutoffMode::Off
        }
    };
    let probe_times = n.probe_times.clone().unwrap_or_else(|| vec![0.0, t_check]);
    for &t in &probe_times {
        if dt > 0.0 && t_check > 0.0 {
            let inside = (-1e-12..=t_check + tau + 1e-12).contains(&t);
            if !inside || !(t == 0.0 || divides(dt, t)) {
                violations.push(format!(
                    "probe time {t} must be a multiple of dt inside [0, t_check + tau]"
                ));
            }
        }
    }

    // Monte Carlo.
    if raw.monte_carlo.n_paths == 0 {
        violations.push("n_paths must be at least 1".into());
    }

    // Output.
    let which_series = match raw.output.which_series.as_deref() {
        None | Some("all") => WhichSeries::All,
        Some("y") => WhichSeries::Y,
        Some("z") => WhichSeries::Z,
        Some("y1") => WhichSeries::Y1,
        Some(other) => {
            violations.push(format!(
                "unknown which_series \"{other}\" (expected all, y, z, or y1)"
            ));
            WhichSeries::All
        }
    };

    // Sweep plan: each value must itself produce a runnable configuration.
    let sweep = match &raw.sweep {
        None => None,
        Some(s) => {
            let parameter = match s.parameter.as_str() {
                "dt" => Some(SweepParameter::Dt),
                "t_horizon" => Some(SweepParameter::THorizon),
                "tol" => Some(SweepParameter::Tol),
                "n_paths" => Some(SweepParameter::NPaths),
                other => {
                    violations.push(format!(
                        "unknown sweep parameter \"{other}\" (expected dt, t_horizon, tol, or n_paths)"
                    ));
                    None
                }
            };
            if s.values.is_empty() {
                violations.push("sweep values must be non-empty".into());
            }
            if let Some(parameter) = parameter {
                for &v in &s.values {
                    let bad = match parameter {
                        SweepParameter::Dt => {
                            !(v > 0.0) || !divides(v, tau) || !divides(v, t_check)
                        }
                        SweepParameter::THorizon => !(v > 0.0) || !divides(tau, v),
                        SweepParameter::Tol => !(v > 0.0),
                        SweepParameter::NPaths => !(v >= 1.0 && v.fract() == 0.0),
                    };
                    if bad {
                        violations.push(format!(
                            "sweep value {v} is not valid for parameter {}",
                            parameter.name()
                        ));
                    }
                }
                if !s.values.is_empty() {
                    Some(SweepPlan { parameter, values: s.values.clone() })
                } else {
                    None
                }
            } else {
                None
            }
        }
    };

    if !violations.is_empty() {
        return Err(ConfigError::Validation { violations });
    }

    let mut solver = SolverConfig::new(dt, tau, raw.numerics.t_horizon, t_check);
    solver.tol = tol;
    solver.max_iters = max_iters;
    solver.cutoff = cutoff;
    solver.n_paths = raw.monte_carlo.n_paths;
    solver.master_seed = raw.monte_carlo.master_seed;

    Ok(Experiment {
        a: a.expect("validated above"),
        eps_hyp,
        drift: drift.expect("validated above"),
        b0: b0.expect("validated above"),
        solver,
        identity_tol,
        se_limit,
        probe_times,
        output: OutputPlan {
            csv_path: raw.output.csv_path.clone(),
            json_path: raw.output.json_path.clone(),
            which_series,
        },
        sweep,
        config_sha256: crate::output::sha256_hex(text.as_bytes()),
    })
}
