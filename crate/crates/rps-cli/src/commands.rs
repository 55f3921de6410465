//! The five experiment commands. Each consumes a validated
//! [`Experiment`](crate::config::Experiment), writes its artifacts under
//! the output directory, and returns a pass/fail verdict; hard errors
//! propagate as [`CliError`] with the originating module named.

use crate::config::{Experiment, SweepParameter, WhichSeries};
use crate::output::{write_json, CsvWriter};
use rps_core::drift::{choose_cutoff_n, condition_m_ledger, spot_check_condition_m, BoundsLedger, ConditionMConstants, DriftError};
use rps_core::convolution::truncation_tail_bound;
use rps_core::solver::{drift_tail_bound, solve_ensemble, CutoffMode, EnsembleReport, SolverError};
use rps_core::spectral::{HyperbolicSplitting, SpectralError};
use rps_core::verifier::{check_stationary, verify_random_periodicity, StationaryReport, VerifierError};
use rps_core::IdentityReport;
use serde::Serialize;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("spectral: {0}")]
    Spectral(#[from] SpectralError),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("verifier: {0}")]
    Verifier(#[from] VerifierError),
    #[error("drift model: {0}")]
    Drift(#[from] DriftError),
    #[error("{0}")]
    Usage(String),
}

/// Command outcome, mapped to the process exit code: pass = 0, fail = 2
/// (hard errors exit 1 before a verdict exists).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn exit_code(self) -> u8 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 2,
        }
    }

    fn from_flag(pass: bool) -> Verdict {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// Traceability header embedded in every JSON summary: enough to rerun
/// the experiment and to judge how much truncation error the horizon
/// admits.
#[derive(Debug, Clone, Serialize)]
pub struct RunStamp {
    pub command: &'static str,
    pub config_sha256: String,
    pub master_seed: u64,
    pub n_paths: usize,
    pub dt: f64,
    pub tau: f64,
    pub t_horizon: f64,
    pub t_check: f64,
    pub noise_tail_bound: f64,
    pub drift_tail_bound: Option<f64>,
}

fn run_stamp(command: &'static str, exp: &Experiment, split: &HyperbolicSplitting) -> RunStamp {
    let c = &exp.solver;
    let sup_f = exp.drift.sup_norm().or(match c.cutoff {
        CutoffMode::Fixed(n) => Some(exp.drift.sup_norm_clamped(n)),
        _ => None,
    });
    RunStamp {
        command,
        config_sha256: exp.config_sha256.clone(),
        master_seed: c.master_seed,
        n_paths: c.n_paths,
        dt: c.dt,
        tau: c.tau,
        t_horizon: c.t_horizon,
        t_check: c.t_check,
        noise_tail_bound: truncation_tail_bound(split, exp.b0.sup_norm_on(c.dt), c.t_horizon),
        drift_tail_bound: drift_tail_bound(split, sup_f, c.t_horizon),
    }
}

fn resolve(out_dir: &Path, configured: Option<&str>, default: &str) -> PathBuf {
    match configured {
        Some(p) if Path::new(p).is_absolute() => PathBuf::from(p),
        Some(p) => out_dir.join(p),
        None => out_dir.join(default),
    }
}

fn series_header(which: WhichSeries, d: usize) -> String {
    let mut cols: Vec<String> = vec!["path_id".into(), "t".into()];
    let mut block = |prefix: &str| {
        for i in 1..=d {
            cols.push(format!("{prefix}_{i}"));
        }
    };
    match which {
        WhichSeries::All => {
            block("Y");
            block("Z");
            block("Y1");
        }
        WhichSeries::Y => block("Y"),
        WhichSeries::Z => block("Z"),
        WhichSeries::Y1 => block("Y1"),
    }
    cols.join(",")
}

#[derive(Debug, Serialize)]
struct MomentsAtZero {
    mean: Vec<f64>,
    mean_se: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct SolveSummary {
    run: RunStamp,
    which_series: &'static str,
    csv_path: String,
    report: EnsembleReport,
    /// Sample moments of `Y(0)` across paths: the one-point law of the
    /// constructed solution at the anchor time.
    moments_at_zero: MomentsAtZero,
}

/// Solve the ensemble and emit the per-node series CSV plus a JSON
/// summary. Fails (exit 2) when any path did not converge or an adaptive
/// cutoff stage was left unaccepted.
pub fn run_solve(exp: &Experiment, out_dir: &Path) -> Result<Verdict, CliError> {
    let split = exp.split()?;
    fs::create_dir_all(out_dir)?;
    let csv_path = resolve(out_dir, exp.output.csv_path.as_deref(), "solve.csv");
    let json_path = resolve(out_dir, exp.output.json_path.as_deref(), "solve.json");
    let d = split.dim();
    let which = exp.output.which_series;

    let mut csv = CsvWriter::create(&csv_path, &series_header(which, d))?;
    let mut io_err: Option<io::Error> = None;
    let ensemble = solve_ensemble(&exp.solver, &split, &exp.drift, &exp.b0, |path_id, sol| {
        if io_err.is_some() {
            return;
        }
        let grid = *sol.y.grid();
        let label = [path_id.to_string()];
        for k in 0..grid.n_nodes() {
            let mut floats = Vec::with_capacity(1 + 3 * d);
            floats.push(grid.node_time(k));
            let mut push_series = |values: &nalgebra::DMatrix<f64>| {
                for i in 0..d {
                    floats.push(values[(i, k)]);
                }
            };
            match which {
                WhichSeries::All => {
                    push_series(sol.y.values());
                    push_series(sol.z.values());
                    push_series(sol.y1.values());
                }
                WhichSeries::Y => push_series(sol.y.values()),
                WhichSeries::Z => push_series(sol.z.values()),
                WhichSeries::Y1 => push_series(sol.y1.values()),
            }
            if let Err(e) = csv.row(&label, &floats) {
                io_err = Some(e);
                return;
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    csv.finish()?;

    let moments = &ensemble.moments;
    let cov0 = &moments.covariance[0];
    let summary = SolveSummary {
        run: run_stamp("solve", exp, &split),
        which_series: which.name(),
        csv_path: csv_path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        moments_at_zero: MomentsAtZero {
            mean: moments.mean.column(0).iter().copied().collect(),
            mean_se: moments.mean_se.column(0).iter().copied().collect(),
            covariance: (0..d)
                .map(|i| (0..d).map(|j| cov0[(i, j)]).collect())
                .collect(),
        },
        report: ensemble.report,
    };
    write_json(&json_path, &summary)?;

    let report = &summary.report;
    let pass = report.all_converged && report.cutoff_all_accepted.unwrap_or(true);
    println!("solve: {} paths, verdict {}", report.n_paths, if pass { "PASS" } else { "FAIL" });
    Ok(Verdict::from_flag(pass))
}

#[derive(Debug, Serialize)]
struct VerifySummary {
    run: RunStamp,
    csv_path: String,
    report: IdentityReport,
}

/// Check the semiflow and periodicity identities over the ensemble.
/// Emits the per-node defect CSV and the aggregate report; fails when
/// either sup defect exceeds `identity_tol`.
pub fn run_verify(exp: &Experiment, out_dir: &Path) -> Result<Verdict, CliError> {
    let split = exp.split()?;
    fs::create_dir_all(out_dir)?;
    let csv_path = resolve(out_dir, exp.output.csv_path.as_deref(), "verify.csv");
    let json_path = resolve(out_dir, exp.output.json_path.as_deref(), "verify.json");

    let mut csv =
        CsvWriter::create(&csv_path, "path_id,t,semiflow_defect,periodicity_defect")?;
    let mut io_err: Option<io::Error> = None;
    let report = verify_random_periodicity(
        &exp.solver,
        &split,
        &exp.drift,
        &exp.b0,
        exp.identity_tol,
        |check| {
            if io_err.is_some() {
                return;
            }
            let label = [check.path_id.to_string()];
            for (k, (s, p)) in
                check.semiflow_defect.iter().zip(&check.periodicity_defect).enumerate()
            {
                let t = k as f64 * check.dt;
                if let Err(e) = csv.row(&label, &[t, *s, *p]) {
                    io_err = Some(e);
                    return;
                }
            }
        },
    )?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    csv.finish()?;

    let pass = report.pass();
    let summary = VerifySummary {
        run: run_stamp("verify", exp, &split),
        csv_path: csv_path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        report,
    };
    write_json(&json_path, &summary)?;
    println!(
        "verify: semiflow sup {:.3e}, periodicity sup {:.3e}, tol {:.3e}, verdict {}",
        summary.report.semiflow_sup,
        summary.report.periodicity_sup,
        summary.report.identity_tol,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(Verdict::from_flag(pass))
}

#[derive(Debug, Serialize)]
struct StationarySummary {
    run: RunStamp,
    identity_tol: f64,
    se_limit: f64,
    flow_pass: bool,
    mean_pass: Option<bool>,
    covariance_pass: Option<bool>,
    report: StationaryReport,
}

/// Stationary check for autonomous problems: pathwise flow identity at
/// the probe times plus moment agreement with the closed-form oracle when
/// the drift is linear.
pub fn run_stationary(exp: &Experiment, out_dir: &Path) -> Result<Verdict, CliError> {
    let split = exp.split()?;
    fs::create_dir_all(out_dir)?;
    let json_path = resolve(out_dir, exp.output.json_path.as_deref(), "stationary.json");

    let report =
        check_stationary(&exp.solver, &split, &exp.drift, &exp.b0, &exp.probe_times)?;
    let flow_pass = report.flow_defect_sup <= exp.identity_tol;
    let mean_pass = report.max_mean_error_se.map(|e| e <= exp.se_limit);
    let covariance_pass = report.max_covariance_error_se.map(|e| e <= exp.se_limit);
    let pass = flow_pass && mean_pass.unwrap_or(true) && covariance_pass.unwrap_or(true);

    let summary = StationarySummary {
        run: run_stamp("stationary", exp, &split),
        identity_tol: exp.identity_tol,
        se_limit: exp.se_limit,
        flow_pass,
        mean_pass,
        covariance_pass,
        report,
    };
    write_json(&json_path, &summary)?;
    println!(
        "stationary: flow defect sup {:.3e}, verdict {}",
        summary.report.flow_defect_sup,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(Verdict::from_flag(pass))
}

#[derive(Debug, Serialize)]
struct BoundsSummary {
    run: RunStamp,
    constants: ConditionMConstants,
    ledger: BoundsLedger,
    /// Cutoff radius the adaptive solver would start from.
    cutoff_n: f64,
    /// Deterministic sample check of the declared growth constants against
    /// the actual drift; `None` means it held on every sample.
    spot_check_violation: Option<String>,
}

const SPOT_CHECK_SAMPLES: usize = 256;

/// Surface the dissipativity ledger: effective constants, Gronwall
/// coefficients, a-priori bounds, and the derived cutoff radius. Fails
/// when the declared constants are refuted by sampling the drift.
pub fn run_bounds(exp: &Experiment, out_dir: &Path) -> Result<Verdict, CliError> {
    let split = exp.split()?;
    fs::create_dir_all(out_dir)?;
    let json_path = resolve(out_dir, exp.output.json_path.as_deref(), "bounds.json");

    let constants = *exp.drift.condition_m().ok_or(DriftError::MissingConditionM)?;
    let ledger = condition_m_ledger(&exp.drift, &split)?;
    let cutoff_n = choose_cutoff_n(&ledger, &constants);
    let spot_check_violation = spot_check_condition_m(
        &exp.drift,
        &split,
        SPOT_CHECK_SAMPLES,
        exp.solver.master_seed,
    )
    .err()
    .map(|e| e.to_string());
    let pass = spot_check_violation.is_none();

    let summary = BoundsSummary {
        run: run_stamp("bounds", exp, &split),
        constants,
        ledger,
        cutoff_n,
        spot_check_violation,
    };
    write_json(&json_path, &summary)?;
    println!(
        "bounds: ratio {:.6}, zplus_sq {:.6}, cutoff N {:.4}, verdict {}",
        summary.ledger.ratio,
        summary.ledger.zplus_sq_bound,
        cutoff_n,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(Verdict::from_flag(pass))
}

#[derive(Debug, Serialize)]
struct SweepRow {
    value: f64,
    n_paths: usize,
    all_converged: bool,
    max_iterations: usize,
    final_residual_rms: f64,
    kappa: Option<f64>,
    noise_tail_bound: f64,
    drift_tail_bound: Option<f64>,
    cutoff_n_max: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    run: RunStamp,
    parameter: &'static str,
    csv_path: String,
    rows: Vec<SweepRow>,
}

/// Re-run the ensemble solve across the swept parameter values, one
/// summary row per value. Fails when any value leaves a path unconverged.
pub fn run_sweep(exp: &Experiment, out_dir: &Path) -> Result<Verdict, CliError> {
    let plan = exp
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Usage("the sweep command requires a [sweep] block".into()))?;
    let split = exp.split()?;
    fs::create_dir_all(out_dir)?;
    let csv_path = resolve(out_dir, exp.output.csv_path.as_deref(), "sweep.csv");
    let json_path = resolve(out_dir, exp.output.json_path.as_deref(), "sweep.json");

    let mut rows = Vec::with_capacity(plan.values.len());
    for &value in &plan.values {
        let mut solver = exp.solver.clone();
        match plan.parameter {
            SweepParameter::Dt => solver.dt = value,
            SweepParameter::THorizon => solver.t_horizon = value,
            SweepParameter::Tol => solver.tol = value,
            SweepParameter::NPaths => solver.n_paths = value as usize,
        }
        let ensemble = solve_ensemble(&solver, &split, &exp.drift, &exp.b0, |_, _| {})?;
        let report = ensemble.report;
        rows.push(SweepRow {
            value,
            n_paths: report.n_paths,
            all_converged: report.all_converged,
            max_iterations: report.max_iterations,
            final_residual_rms: report.residual_trace_rms.last().copied().unwrap_or(0.0),
            kappa: report.kappa,
            noise_tail_bound: report.noise_tail_bound,
            drift_tail_bound: report.drift_tail_bound,
            cutoff_n_max: report.cutoff_n_max,
        });
    }

    let mut csv = CsvWriter::create(
        &csv_path,
        "parameter,value,n_paths,all_converged,max_iterations,final_residual_rms,kappa,noise_tail_bound,drift_tail_bound,cutoff_n_max",
    )?;
    let opt = |x: Option<f64>| x.map(crate::output::float_cell).unwrap_or_default();
    for row in &rows {
        let labels = [
            plan.parameter.name().to_string(),
            crate::output::float_cell(row.value),
            row.n_paths.to_string(),
            row.all_converged.to_string(),
            row.max_iterations.to_string(),
            crate::output::float_cell(row.final_residual_rms),
            opt(row.kappa),
            crate::output::float_cell(row.noise_tail_bound),
            opt(row.drift_tail_bound),
            opt(row.cutoff_n_max),
        ];
        csv.row(&labels, &[])?;
    }
    csv.finish()?;

    let pass = rows.iter().all(|r| r.all_converged);
    let summary = SweepSummary {
        run: run_stamp("sweep", exp, &split),
        parameter: plan.parameter.name(),
        csv_path: csv_path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        rows,
    };
    write_json(&json_path, &summary)?;
    println!(
        "sweep: {} over {} values, verdict {}",
        plan.parameter.name(),
        summary.rows.len(),
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(Verdict::from_flag(pass))
}
