//! Independent forward integrator and identity checks
//!
//! The solver produces a candidate trajectory `Y`; everything here asks
//! whether that trajectory deserves the name. The forward integrator is an
//! exponential Euler scheme written directly against the variation-of-
//! constants form, sharing no quadrature code with the solver's rolling
//! convolutions, so agreement between the two is evidence rather than
//! tautology. The checks cover the defining identities (the semiflow maps
//! `Y(t)` to `Y(t+tau)`; the shifted-noise re-solve reproduces `Y(t+tau)`),
//! the stationary specialization for autonomous problems, and moment
//! comparisons against closed-form oracles.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::convolution::{stationary_covariance, ConvolutionError, DiffusionSpec};
use crate::drift::{DriftFamily, DriftSpec};
use crate::exec;
use crate::solver::{solve_path, solve_path_to, PathSolution, SolverConfig, SolverError};
use crate::spectral::{decompose, HyperbolicSplitting, SpectralError};
use crate::wiener::{PathView, TimeGrid, WienerError, WienerPath};

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Grid(#[from] WienerError),
    #[error(transparent)]
    Convolution(#[from] ConvolutionError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("stationary checks need an autonomous problem; the {what} depends on time")]
    NotAutonomous { what: &'static str },
    #[error("forward integration needs s <= t, got s = {s}, t = {t}")]
    BackwardInterval { s: f64, t: f64 },
    #[error("state is {got}-dimensional but the operator is {expected}-dimensional")]
    Dimension { expected: usize, got: usize },
    #[error("probe time {t} outside the solved window [0, {t_end}]")]
    ProbeOutsideWindow { t: f64, t_end: f64 },
}

/// Exponential Euler solution of the forward equation from `(s, x)` to `t`
/// along the given noise path:
///
/// ```text
/// u_{k+1} = T_dt u_k + K F(t_k, u_k) + T_dt B0(t_k) dW_k,
/// K_i     = (1 - exp(-mu_i dt)) / mu_i.
/// ```
///
/// Consumes exactly the path's increments; draws no fresh randomness. The
/// scheme is exact for the linear part, exact in expectation for constant
/// drift, and strong order one for additive noise.
pub fn integrate_forward(
    split: &HyperbolicSplitting,
    drift: &DriftSpec,
    b0: &DiffusionSpec,
    view: &PathView<'_>,
    s: f64,
    x: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>, VerifierError> {
    let d = split.dim();
    if x.len() != d {
        return Err(VerifierError::Dimension { expected: d, got: x.len() });
    }
    if drift.dim() != d {
        return Err(VerifierError::Dimension { expected: d, got: drift.dim() });
    }
    if b0.dim() != d || b0.noise_dim() != view.noise_dim() {
        return Err(VerifierError::Dimension { expected: d, got: b0.dim() });
    }
    let grid = view.grid();
    let k0 = grid.node_of(s)?;
    let k1 = grid.node_of(t)?;
    if k1 < k0 {
        return Err(VerifierError::BackwardInterval { s, t });
    }
    let dt = grid.dt();
    let decay: Vec<f64> = (0..d).map(|i| (-split.eigenvalues()[i] * dt).exp()).collect();
    let kernel: Vec<f64> = (0..d)
        .map(|i| {
            let mu = split.eigenvalues()[i];
            (1.0 - (-mu * dt).exp()) / mu
        })
        .collect();
    let vt = split.basis().transpose();
    let constant_b = if b0.is_constant() { Some(&vt * b0.eval(0.0)) } else { None };

    let mut u = split.to_eigen(x);
    for k in k0..k1 {
        let t_k = grid.node_time(k);
        let f = split.to_eigen(&drift.eval(t_k, &split.from_eigen(&u)));
        let b_eigen_owned;
        let b_eigen = match &constant_b {
            Some(m) => m,
            None => {
                b_eigen_owned = &vt * b0.eval(t_k);
                &b_eigen_owned
            }
        };
        let inc = view.increment(k);
        for i in 0..d {
            let mut noise = 0.0;
            for c in 0..inc.len() {
                noise += b_eigen[(i, c)] * inc[c];
            }
            u[i] = decay[i] * (u[i] + noise) + kernel[i] * f[i];
        }
    }
    Ok(split.from_eigen(&u))
}

/// Defect series for one path: the semiflow identity and the shifted-noise
/// periodicity identity, one entry per node of `[0, t_check]`.
#[derive(Debug, Clone, Serialize)]
pub struct PathIdentityCheck {
    pub path_id: u64,
    pub dt: f64,
    /// `|u(t + tau, t, Y(t)) - Y(t + tau)|` per node.
    pub semiflow_defect: Vec<f64>,
    /// `|Y(t + tau) - Y_shifted(t)|` per node, where `Y_shifted` re-solves
    /// on the tau-shifted noise.
    pub periodicity_defect: Vec<f64>,
    pub semiflow_sup: f64,
    pub periodicity_sup: f64,
}

/// Aggregate identity report over an ensemble of paths.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub dt: f64,
    pub tau: f64,
    pub t_check: f64,
    pub n_paths: usize,
    /// Largest per-path sup defect.
    pub semiflow_sup: f64,
    /// Root mean square over paths of the per-path sup defects.
    pub semiflow_rms: f64,
    pub periodicity_sup: f64,
    pub periodicity_rms: f64,
    pub identity_tol: f64,
    pub semiflow_pass: bool,
    pub periodicity_pass: bool,
}

impl IdentityReport {
    pub fn pass(&self) -> bool {
        self.semiflow_pass && self.periodicity_pass
    }
}

/// Both identity checks on one already-solved path. `solution` must come
/// from `solve_path` on the same view with the same config.
pub fn check_random_periodicity(
    config: &SolverConfig,
    split: &HyperbolicSplitting,
    drift: &DriftSpec,
    b0: &DiffusionSpec,
    view: &PathView<'_>,
    solution: &PathSolution,
) -> Result<PathIdentityCheck, VerifierError> {
    let y = &solution.y;
    let grid = y.grid();
    let n_tau = grid.steps_of("tau", config.tau)?;
    let n_check = grid.steps_of("t_check", config.t_check)?;
    if grid.n_steps() < n_tau + n_check {
        return Err(VerifierError::ProbeOutsideWindow {
            t: config.t_check + config.tau,
            t_end: grid.t_end(),
        });
    }

    let mut semiflow_defect = Vec::with_capacity(n_check + 1);
    for k in 0..=n_check {
        let t_k = grid.node_time(k);
        let start = y.node(k);
        let u = integrate_forward(split, drift, b0, view, t_k, &start, t_k + config.tau)?;
        semiflow_defect.push((u - y.node(k + n_tau)).norm());
    }

    let shifted = view.shift(config.tau)?;
    let resolved = solve_path_to(config, split, drift, b0, &shifted, config.t_check)?;
    resolved.require_converged()?;
    let mut periodicity_defect = Vec::with_capacity(n_check + 1);
    for k in 0..=n_check {
        periodicity_defect.push((y.node(k + n_tau) - resolved.y.node(k)).norm());
    }

    let sup = |v: &[f64]| v.iter().cloned().fold(0.0f64, f64::max);
    Ok(PathIdentityCheck {
        path_id: view.path_id(),
        dt: grid.dt(),
        semiflow_sup: sup(&semiflow_defect),
        periodicity_sup: sup(&periodicity_defect),
        semiflow_defect,
        periodicity_defect,
    })
}

/// Solve-and-check over `config.n_paths` paths. Each per-path defect
/// series is handed to `visit` in ascending path order; the report
/// aggregates the sups. Pass flags compare against `identity_tol`.
pub fn verify_random_periodicity(
    config: &SolverConfig,
    split: &HyperbolicSplitting,
    drift: &DriftSpec,
    b0: &DiffusionSpec,
    identity_tol: f64,
    mut visit: impl FnMut(&PathIdentityCheck),
) -> Result<IdentityReport, VerifierError> {
    config.validate()?;
    let (lo, hi) = config.required_window();
    let sample_grid = TimeGrid::new(lo, hi, config.dt)?;

    let check_one = |path_id: u64| -> Result<PathIdentityCheck, VerifierError> {
        let path =
            WienerPath::sample(sample_grid, b0.noise_dim(), config.master_seed, path_id);
        let view = path.view();
        let solution = solve_path(config, split, drift, b0, &view)?;
        solution.require_converged()?;
        check_random_periodicity(config, split, drift, b0, &view, &solution)
    };

    let mut first_error: Option<VerifierError> = None;
    let mut semiflow_sup: f64 = 0.0;
    let mut semiflow_sq_sum = 0.0;
    let mut periodicity_sup: f64 = 0.0;
    let mut periodicity_sq_sum = 0.0;
    exec::map_ordered_chunked(
        0,
        config.n_paths as u64,
        exec::DEFAULT_CHUNK,
        check_one,
        |_, result| {
            if first_error.is_some() {
                return;
            }
            match result {
                Err(e) => first_error = Some(e),
                Ok(check) => {
                    semiflow_sup = semiflow_sup.max(check.semiflow_sup);
                    semiflow_sq_sum += check.semiflow_sup * check.semiflow_sup;
                    periodicity_sup = periodicity_sup.max(check.periodicity_sup);
                    periodicity_sq_sum += check.periodicity_sup * check.periodicity_sup;
                    visit(&check);
                }
            }
        },
    );
    if let Some(e) = first_error {
        return Err(e);
    }

    let n = config.n_paths as f64;
    Ok(IdentityReport {
        dt: config.dt,
        tau: config.tau,
        t_check: config.t_check,
        n_paths: config.n_paths,
        semiflow_sup,
        semiflow_rms: (semiflow_sq_sum / n).sqrt(),
        periodicity_sup,
        periodicity_rms: (periodicity_sq_sum / n).sqrt(),
        identity_tol,
        semiflow_pass: semiflow_sup <= identity_tol,
        periodicity_pass: periodicity_sup <= identity_tol,
    })
}

/// Unbiased sample moments of a vector-valued sample.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Standard error of each mean entry.
    pub mean_se: DVector<f64>,
    /// Standard error of each covariance entry, from the spread of the
    /// centered products.
    pub covariance_se: DMatrix<f64>,
    pub n_samples: usize,
}

/// Mean, covariance, and their standard errors; deterministic in the
/// sample order. Singleton samples get zero covariance and zero errors.
pub fn aggregate_moments(samples: &[DVector<f64>]) -> Moments {
    assert!(!samples.is_empty(), "moments need at least one sample");
    let d = samples[0].len();
    let n = samples.len();
    let mut mean = DVector::zeros(d);
    for s in samples {
        assert_eq!(s.len(), d, "inconsistent sample dimensions");
        mean += s;
    }
    mean /= n as f64;

    let mut covariance = DMatrix::zeros(d, d);
    let mut covariance_se = DMatrix::zeros(d, d);
    let mut mean_se = DVector::zeros(d);
    if n > 1 {
        // First pass: centered products. Second pass: their spread.
        let mut prod_sq: DMatrix<f64> = DMatrix::zeros(d, d);
        for s in samples {
            let c = s - &mean;
            for i in 0..d {
                for j in 0..d {
                    let w = c[i] * c[j];
                    covariance[(i, j)] += w;
                    prod_sq[(i, j)] += w * w;
                }
            }
        }
        let nf = n as f64;
        covariance /= nf - 1.0;
        for i in 0..d {
            for j in 0..d {
                let mean_w = covariance[(i, j)] * (nf - 1.0) / nf;
                let var_w = (prod_sq[(i, j)] / nf - mean_w * mean_w).max(0.0);
                covariance_se[(i, j)] = (var_w / nf).sqrt();
            }
            mean_se[i] = (covariance[(i, i)].max(0.0) / nf).sqrt();
        }
    }
    Moments { mean, covariance, mean_se, covariance_se, n_samples: n }
}

/// Per-probe moment summary in plain nested arrays (serialization-ready).
#[derive(Debug, Clone, Serialize)]
pub struct ProbeMoments {
    pub t: f64,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub covariance_se: Vec<Vec<f64>>,
}

fn probe_moments(t: f64, m: &Moments) -> ProbeMoments {
    let d = m.mean.len();
    let rows = |mat: &DMatrix<f64>| {
        (0..d).map(|i| (0..d).map(|j| mat[(i, j)]).collect()).collect::<Vec<Vec<f64>>>()
    };
    ProbeMoments {
        t,
        mean: m.mean.iter().cloned().collect(),
        mean_se: m.mean_se.iter().cloned().collect(),
        covariance: rows(&m.covariance),
        covariance_se: rows(&m.covariance_se),
    }
}

/// Stationary-solution verdict for an autonomous problem.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryReport {
    pub n_paths: usize,
    pub dt: f64,
    pub probe_times: Vec<f64>,
    /// Sup over paths and probes of `|u(t, 0, Y(0)) - Y(t)|`: the flow
    /// started from the solution at time zero must track the solution.
    pub flow_defect_sup: f64,
    pub flow_defect_rms: f64,
    pub probes: Vec<ProbeMoments>,
    /// Closed-form stationary mean, when the drift is zero, constant, or
    /// affine with a symmetric effective operator.
    pub oracle_mean: Option<Vec<f64>>,
    pub oracle_covariance: Option<Vec<Vec<f64>>>,
    /// Largest `|measured - oracle| / SE` over probes and entries.
    pub max_mean_error_se: Option<f64>,
    pub max_covariance_error_se: Option<f64>,
}

/// Closed-form stationary moments for linear problems: the effective
/// operator is `A - K` for drift `F(u) = K u + c`, and the mean solves the
/// same forward-backward integrals applied to the constant `c`.
/// Exact stationary mean and covariance, when the problem is linear enough
/// to admit them in closed form.
type MeanCovariance = Option<(DVector<f64>, DMatrix<f64>)>;

fn linear_oracle(
    split: &HyperbolicSplitting,
    drift: &DriftSpec,
    b0: &DiffusionSpec,
) -> Result<MeanCovariance, VerifierError> {
    let d = split.dim();
    let a = split.basis() * DMatrix::from_diagonal(split.eigenvalues()) * split.basis().transpose();
    let (k_mat, offset) = match drift.family() {
        DriftFamily::Zero { .. } => (DMatrix::zeros(d, d), DVector::zeros(d)),
        DriftFamily::Constant { value } => (DMatrix::zeros(d, d), value.clone()),
        DriftFamily::Affine { matrix, offset } => (matrix.clone(), offset.clone()),
        _ => return Ok(None),
    };
    let a_eff = &a - &k_mat;
    let asym = (&a_eff - a_eff.transpose()).amax();
    if asym > 1e-10 * (1.0 + a_eff.amax()) {
        return Ok(None);
    }
    let split_eff = match decompose(&a_eff, 1e-10) {
        Ok(s) => s,
        // A non-hyperbolic effective operator has no stationary oracle.
        Err(_) => return Ok(None),
    };
    let covariance = stationary_covariance(&split_eff, b0)?;
    let mut mean_eigen = split_eff.to_eigen(&offset);
    for i in 0..d {
        mean_eigen[i] /= split_eff.eigenvalues()[i];
    }
    Ok(Some((split_eff.from_eigen(&mean_eigen), covariance)))
}

/// Solve an autonomous problem over the ensemble and check stationarity:
/// the pathwise flow identity at each probe time, probe-invariant moments,
/// and (for linear drifts) closed-form mean and covariance.
pub fn check_stationary(
    config: &SolverConfig,
    split: &HyperbolicSplitting,
    drift: &DriftSpec,
    b0: &DiffusionSpec,
    probe_times: &[f64],
) -> Result<StationaryReport, VerifierError> {
    if !drift.is_autonomous() {
        return Err(VerifierError::NotAutonomous { what: "drift" });
    }
    if !b0.is_constant() {
        return Err(VerifierError::NotAutonomous { what: "diffusion" });
    }
    config.validate()?;
    let (lo, hi) = config.required_window();
    let sample_grid = TimeGrid::new(lo, hi, config.dt)?;
    let eval_end = config.eval_end();
    let probe_grid = TimeGrid::new(0.0, eval_end, config.dt)?;
    let mut probe_nodes = Vec::with_capacity(probe_times.len());
    for &t in probe_times {
        let node = probe_grid
            .node_of(t)
            .map_err(|_| VerifierError::ProbeOutsideWindow { t, t_end: eval_end })?;
        probe_nodes.push(node);
    }

    struct PathProbe {
        at_probes: Vec<DVector<f64>>,
        flow_defects: Vec<f64>,
    }
    let probe_one = |path_id: u64| -> Result<PathProbe, VerifierError> {
        let path =
            WienerPath::sample(sample_grid, b0.noise_dim(), config.master_seed, path_id);
        let view = path.view();
        let solution = solve_path(config, split, drift, b0, &view)?;
        solution.require_converged()?;
        let y = &solution.y;
        let start = y.node(0);
        let mut at_probes = Vec::with_capacity(probe_nodes.len());
        let mut flow_defects = Vec::with_capacity(probe_nodes.len());
        for (&t, &node) in probe_times.iter().zip(&probe_nodes) {
            let u = integrate_forward(split, drift, b0, &view, 0.0, &start, t)?;
            flow_defects.push((&u - y.node(node)).norm());
            at_probes.push(y.node(node));
        }
        Ok(PathProbe { at_probes, flow_defects })
    };

    let mut first_error: Option<VerifierError> = None;
    let mut samples: Vec<Vec<DVector<f64>>> = vec![Vec::new(); probe_nodes.len()];
    let mut flow_sup: f64 = 0.0;
    let mut flow_sq_sum = 0.0;
    let mut flow_count = 0usize;
    exec::map_ordered_chunked(
        0,
        config.n_paths as u64,
        exec::DEFAULT_CHUNK,
        probe_one,
        |_, result| {
            if first_error.is_some() {
                return;
            }
            match result {
                Err(e) => first_error = Some(e),
                Ok(probe) => {
                    for (slot, v) in probe.at_probes.into_iter().enumerate() {
                        samples[slot].push(v);
                    }
                    for d in probe.flow_defects {
                        flow_sup = flow_sup.max(d);
                        flow_sq_sum += d * d;
                        flow_count += 1;
                    }
                }
            }
        },
    );
    if let Some(e) = first_error {
        return Err(e);
    }

    let oracle = linear_oracle(split, drift, b0)?;
    let mut probes = Vec::with_capacity(probe_nodes.len());
    let mut max_mean_err: Option<f64> = None;
    let mut max_cov_err: Option<f64> = None;
    for (slot, &t) in probe_times.iter().enumerate() {
        let moments = aggregate_moments(&samples[slot]);
        if let Some((mean_oracle, cov_oracle)) = &oracle {
            let d = mean_oracle.len();
            for i in 0..d {
                let se = moments.mean_se[i].max(f64::MIN_POSITIVE);
                let err = (moments.mean[i] - mean_oracle[i]).abs() / se;
                max_mean_err = Some(max_mean_err.unwrap_or(0.0).max(err));
                for j in 0..d {
                    let se = moments.covariance_se[(i, j)].max(f64::MIN_POSITIVE);
                    let err = (moments.covariance[(i, j)] - cov_oracle[(i, j)]).abs() / se;
                    max_cov_err = Some(max_cov_err.unwrap_or(0.0).max(err));
                }
            }
        }
        probes.push(probe_moments(t, &moments));
    }

    let d = split.dim();
    Ok(StationaryReport {
        n_paths: config.n_paths,
        dt: config.dt,
        probe_times: probe_times.to_vec(),
        flow_defect_sup: flow_sup,
        flow_defect_rms: (flow_sq_sum / flow_count.max(1) as f64).sqrt(),
        probes,
        oracle_mean: oracle
            .as_ref()
            .map(|(m, _)| m.iter().cloned().collect()),
        oracle_covariance: oracle.as_ref().map(|(_, c)| {
            (0..d).map(|i| (0..d).map(|j| c[(i, j)]).collect()).collect()
        }),
        max_mean_error_se: max_mean_err,
        max_covariance_error_se: max_cov_err,
    })
}

/// For autonomous problems the declared period is arbitrary; solving the
/// same path with two commensurate periods must give the same trajectory
/// on the shared evaluation window. Returns the sup-norm discrepancy.
pub fn tau_independence_defect(
    config: &SolverConfig,
    split: &HyperbolicSplitting,
    drift: &DriftSpec,
    b0: &DiffusionSpec,
    tau_alt: f64,
    path_id: u64,
) -> Result<f64, VerifierError> {
    if !drift.is_autonomous() {
        return Err(VerifierError::NotAutonomous { what: "drift" });
    }
    if !b0.is_constant() {
        return Err(VerifierError::NotAutonomous { what: "diffusion" });
    }
    let mut config_alt = config.clone();
    config_alt.tau = tau_alt;
    config.validate()?;
    config_alt.validate()?;

    let (lo_a, hi_a) = config.required_window();
    let (lo_b, hi_b) = config_alt.required_window();
    let grid = TimeGrid::new(lo_a.min(lo_b), hi_a.max(hi_b), config.dt)?;
    let path = WienerPath::sample(grid, b0.noise_dim(), config.master_seed, path_id);

    let sol_a = solve_path(config, split, drift, b0, &path.view())?;
    let sol_b = solve_path(&config_alt, split, drift, b0, &path.view())?;
    sol_a.require_converged()?;
    sol_b.require_converged()?;

    let n_shared = sol_a.y.grid().steps_of("t_check", config.t_check)?;
    let mut defect = 0.0f64;
    for k in 0..=n_shared {
        defect = defect.max((sol_a.y.node(k) - sol_b.y.node(k)).norm());
    }
    Ok(defect)
}
