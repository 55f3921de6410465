//! Picard iteration on the coupled forward-backward integral map
//!
//! ```text
//! M(z)(t) =  int_{t-T_h}^{t}   exp(-A (t-s)) P+ F(s, z(s) + Y1(s)) ds
//!          - int_{t}^{t+T_h}   exp(-A (t-s)) P- F(s, z(s) + Y1(s)) ds
//! ```
//!
//! per noise path: `z0 = 0`, `z_{n+1} = M(z_n)`, stopping on a residual
//! tolerance; the solution of the original equation is `Y = Z + Y1`.
//! Quadrature freezes `F` at the left node of each step and integrates the
//! semigroup kernel exactly over the step, so the scheme is exact for
//! piecewise-constant integrands and the drift sums share the rolling
//! window recurrence (and its exactness under one-period shifts) with the
//! noise convolution. An optional radial cutoff clamps the stable and
//! unstable parts of `z` before the drift evaluation; the adaptive outer
//! loop grows the radius until the converged iterate stays well inside it.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::convolution::{
    convolution_grid_eigen, noise_jumps_eigen_on, truncation_tail_bound, ConvolutionError,
    DiffusionSpec, GridFunction, PathTag, PhasedDiffusion,
};
use crate::drift::{
    choose_cutoff_n, clamp_eigen, condition_m_ledger, BoundsLedger, DriftError, DriftSpec,
};
use crate::spectral::HyperbolicSplitting;
use crate::wiener::{exact_steps, PathView, TimeGrid, WienerError};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 200;
/// Converged iterates must stay below this fraction of the cutoff radius
/// for the radius to be accepted.
pub const CUTOFF_ACCEPT_FRACTION: f64 = 0.9;
/// Cap on radius doublings in adaptive mode.
pub const MAX_CUTOFF_DOUBLINGS: usize = 10;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver configuration invalid: {message}")]
    BadConfig { message: String },
    #[error(transparent)]
    Convolution(#[from] ConvolutionError),
    #[error(transparent)]
    Grid(#[from] WienerError),
    #[error(transparent)]
    Drift(#[from] DriftError),
    #[error("drift is {got}-dimensional but the operator is {expected}-dimensional")]
    Dimension { expected: usize, got: usize },
    #[error("the contraction constant needs a global gradient bound; the {family} drift family declares none")]
    MissingGradBound { family: &'static str },
    #[error("no convergence: residual {residual:e} > tol {tol:e} after {iterations} iterations")]
    NotConverged { residual: f64, tol: f64, iterations: usize },
}

/// Whether and how the drift argument is clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutoffMode {
    Off,
    Fixed(f64),
    /// Seed the radius from the dissipativity ledger, double on rejection.
    Adaptive,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub dt: f64,
    /// Period of the problem's coefficients (any positive multiple of `dt`
    /// for autonomous problems).
    pub tau: f64,
    /// Truncation horizon `T_h`, a multiple of `tau`.
    pub t_horizon: f64,
    /// Identity checks evaluate on `[0, t_check]`.
    pub t_check: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub cutoff: CutoffMode,
    pub n_paths: usize,
    pub master_seed: u64,
}

impl SolverConfig {
    pub fn new(dt: f64, tau: f64, t_horizon: f64, t_check: f64) -> Self {
        SolverConfig {
            dt,
            tau,
            t_horizon,
            t_check,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            cutoff: CutoffMode::Off,
            n_paths: 1,
            master_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |message: String| Err(SolverError::BadConfig { message });
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive and finite, got {}", self.dt));
        }
        match exact_steps("tau", self.tau, self.dt) {
            Ok(k) if k >= 1 => {}
            _ => return bad(format!("tau = {} must be a positive multiple of dt = {}", self.tau, self.dt)),
        }
        match exact_steps("t_horizon", self.t_horizon, self.tau) {
            Ok(k) if k >= 1 => {}
            _ => {
                return bad(format!(
                    "t_horizon = {} must be a positive multiple of tau = {}",
                    self.t_horizon, self.tau
                ))
            }
        }
        match exact_steps("t_check", self.t_check, self.dt) {
            Ok(k) if k >= 1 => {}
            _ => {
                return bad(format!(
                    "t_check = {} must be a positive multiple of dt = {}",
                    self.t_check, self.dt
                ))
            }
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".to_string());
        }
        if let CutoffMode::Fixed(n) = self.cutoff {
            if !(n > 0.0) {
                return bad(format!("fixed cutoff radius must be positive, got {n}"));
            }
        }
        if self.n_paths == 0 {
            return bad("n_paths must be at least 1".to_string());
        }
        Ok(())
    }

    /// End of the default evaluation window: one period past `t_check`, so
    /// both sides of the periodicity identity live on the solved window.
    pub fn eval_end(&self) -> f64 {
        self.t_check + self.tau
    }

    /// Path window the default solve needs: `[-T_h, eval_end + T_h]`.
    pub fn required_window(&self) -> (f64, f64) {
        (-self.t_horizon, self.eval_end() + self.t_horizon)
    }
}

/// One stage of the cutoff loop.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CutoffStage {
    pub n: f64,
    pub sup_stable: f64,
    pub sup_unstable: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Sup-over-grid norm of the iterate increment, one entry per iteration.
    pub residual_trace: Vec<f64>,
    /// Contraction constant `8 C^2 ||grad F||^2 (1/mu_+^2 + 1/mu_-^2)` when
    /// a global gradient bound is declared.
    pub kappa: Option<f64>,
    pub contraction_satisfied: Option<bool>,
    /// Root-mean-square bound on the truncated noise mass.
    pub noise_tail_bound: f64,
    /// Bound on the truncated drift mass when `sup |F|` is finite.
    pub drift_tail_bound: Option<f64>,
    pub cutoff_trace: Vec<CutoffStage>,
    /// Radius in effect for the returned solution, if any.
    pub cutoff_n: Option<f64>,
    pub converged: bool,
}

/// Converged (or honestly flagged) solution on the evaluation grid.
#[derive(Debug, Clone)]
pub struct PathSolution {
    pub z: GridFunction,
    pub y: GridFunction,
    pub y1: GridFunction,
    pub report: SolveReport,
}

impl PathSolution {
    pub fn require_converged(&self) -> Result<(), SolverError> {
        if self.report.converged {
            Ok(())
        } else {
            Err(SolverError::NotConverged {
                residual: self.report.residual_trace.last().copied().unwrap_or(f64::NAN),
                tol: f64::NAN,
                iterations: self.report.iterations,
            })
        }
    }
}

/// `kappa = 8 C^2 ||grad F||^2 (1/mu_{m+1}^2 + 1/mu_m^2)`, dropping the
/// term of an absent subspace.
pub fn contraction_constant(
    split: &HyperbolicSplitting,
    drift: &DriftSpec,
) -> Result<f64, SolverError> {
    let grad = drift
        .grad_sup()
        .ok_or(SolverError::MissingGradBound { family: drift.family_name() })?;
    Ok(kappa_from_grad(split, grad))
}

fn kappa_from_grad(split: &HyperbolicSplitting, grad: f64) -> f64 {
    let c = split.decay_c();
    let mut inv_sq = 0.0;
    if let Some(mu) = split.mu_stable() {
        inv_sq += 1.0 / (mu * mu);
    }
    if let Some(mu) = split.mu_unstable() {
        inv_sq += 1.0 / (mu * mu);
    }
    8.0 * c * c * grad * grad * inv_sq
}

/// Shared quadrature data for one solve.
struct Engine<'a> {
    split: &'a HyperbolicSplitting,
    drift: &'a DriftSpec,
    grid: TimeGrid,
    horizon_steps: usize,
    /// Canonical drift evaluation time per left node (periodic phase).
    drift_times: Vec<f64>,
    /// Exact per-step kernel integral `(exp(mu dt) - 1) / mu` per direction.
    kernel_scale: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(
        split: &'a HyperbolicSplitting,
        drift: &'a DriftSpec,
        grid: TimeGrid,
        horizon_steps: usize,
    ) -> Result<Self, SolverError> {
        if drift.dim() != split.dim() {
            return Err(SolverError::Dimension { expected: split.dim(), got: drift.dim() });
        }
        let dt = grid.dt();
        let drift_period_steps = match drift.period() {
            Some(p) => {
                let steps = exact_steps("drift period", p, dt)?;
                if steps < 1 {
                    return Err(SolverError::BadConfig {
                        message: format!("drift period {p} below the grid step {dt}"),
                    });
                }
                Some(steps)
            }
            None => None,
        };
        // Left endpoints only: node `k` is the frozen time of step `k`.
        let drift_times = (0..grid.n_steps())
            .map(|k| {
                let g = grid.index_offset() + k as i64;
                match drift_period_steps {
                    Some(n) => g.rem_euclid(n) as f64 * dt,
                    None => grid.node_time(k),
                }
            })
            .collect();
        let kernel_scale = (0..split.dim())
            .map(|i| {
                let mu = split.eigenvalues()[i];
                ((mu * dt).exp() - 1.0) / mu
            })
            .collect();
        Ok(Engine { split, drift, grid, horizon_steps, drift_times, kernel_scale })
    }

    /// One application of the map in eigen coordinates. `z` and `y1` hold
    /// one column per grid node; the drift argument is the (optionally
    /// clamped) `z` plus `y1`.
    fn apply(&self, z: &DMatrix<f64>, y1: &DMatrix<f64>, cutoff_n: Option<f64>) -> DMatrix<f64> {
        let d = self.split.dim();
        let n_steps = self.grid.n_steps();
        let mut f_eigen = DMatrix::zeros(d, n_steps);
        let mut w = DVector::zeros(d);
        for k in 0..n_steps {
            for i in 0..d {
                w[i] = z[(i, k)];
            }
            if let Some(n) = cutoff_n {
                clamp_eigen(self.split, n, &mut w);
            }
            for i in 0..d {
                w[i] += y1[(i, k)];
            }
            let u = self.split.from_eigen(&w);
            let f = self.drift.eval(self.drift_times[k], &u);
            f_eigen.set_column(k, &self.split.to_eigen(&f));
        }
        let mut out = convolution_grid_eigen(self.split, &f_eigen, &self.grid, self.horizon_steps);
        for i in 0..d {
            let scale = self.kernel_scale[i];
            for k in 0..out.ncols() {
                out[(i, k)] *= scale;
            }
        }
        out
    }
}

/// Picard loop at a fixed cutoff. Returns the final iterate with its trace.
fn picard(
    engine: &Engine<'_>,
    y1: &DMatrix<f64>,
    cutoff_n: Option<f64>,
    tol: f64,
    max_iters: usize,
) -> (DMatrix<f64>, Vec<f64>, bool) {
    let d = engine.split.dim();
    let n_nodes = engine.grid.n_nodes();
    let mut z = DMatrix::zeros(d, n_nodes);
    let mut trace = Vec::new();
    for _ in 0..max_iters {
        let next = engine.apply(&z, y1, cutoff_n);
        let mut residual: f64 = 0.0;
        for k in 0..n_nodes {
            let mut diff_sq = 0.0;
            for i in 0..d {
                let e = next[(i, k)] - z[(i, k)];
                diff_sq += e * e;
            }
            residual = residual.max(diff_sq);
        }
        let residual = residual.sqrt();
        trace.push(residual);
        z = next;
        if residual <= tol {
            return (z, trace, true);
        }
    }
    (z, trace, false)
}

/// Largest stable and unstable subspace norms of the iterate over the grid.
fn subspace_sups(split: &HyperbolicSplitting, z: &DMatrix<f64>) -> (f64, f64) {
    let mut sup_stable: f64 = 0.0;
    let mut sup_unstable: f64 = 0.0;
    for k in 0..z.ncols() {
        let mut s = 0.0;
        let mut u = 0.0;
        for i in 0..split.dim() {
            let v = z[(i, k)] * z[(i, k)];
            if split.is_stable_index(i) {
                s += v;
            } else {
                u += v;
            }
        }
        sup_stable = sup_stable.max(s);
        sup_unstable = sup_unstable.max(u);
    }
    (sup_stable.sqrt(), sup_unstable.sqrt())
}

/// Bound on the drift mass discarded by truncating both convolution
/// windows at `T_h`, when a finite sup bound on `F` is available.
pub fn drift_tail_bound(
    split: &HyperbolicSplitting,
    sup_f: Option<f64>,
    t_horizon: f64,
) -> Option<f64> {
    let sup = sup_f?;
    let c = split.decay_c();
    let mut tail = 0.0;
    if let Some(mu) = split.mu_stable() {
        tail += 2.0 * c * sup * (-0.5 * mu * t_horizon).exp() / mu;
    }
    if let Some(mu) = split.mu_unstable() {
        tail += 2.0 * c * sup * (0.5 * mu * t_horizon).exp() / -mu;
    }
    Some(tail)
}

/// Solve on the default evaluation window `[0, t_check + tau]`.
pub fn solve_path(
    config: &SolverConfig,
    split: &HyperbolicSplitting,
    drift: &DriftSpec,
    b0: &DiffusionSpec,
    view: &PathView<'_>,
) -> Result<PathSolution, SolverError> {
    solve_path_to(config, split, drift, b0, view, config.eval_end())
}

/// Solve with an explicit evaluation window `[0, t_eval_end]`; the view
/// must cover `[-T_h, t_eval_end + T_h]`.
pub fn solve_path_to(
    config: &SolverConfig,
    split: &HyperbolicSplitting,
    drift: &DriftSpec,
    b0: &DiffusionSpec,
    view: &PathView<'_>,
    t_eval_end: f64,
) -> Result<PathSolution, SolverError> {
    config.validate()?;
    let dt = config.dt;
    let n_h = exact_steps("t_horizon", config.t_horizon, dt)? as usize;
    let n_eval = match exact_steps("evaluation window", t_eval_end, dt) {
        Ok(k) if k >= 1 => k as usize,
        _ => {
            return Err(SolverError::BadConfig {
                message: format!(
                    "evaluation window end {t_eval_end} must be a positive multiple of dt = {dt}"
                ),
            })
        }
    };
    let work_grid = TimeGrid::from_steps(-(n_h as i64), n_eval + 2 * n_h, dt)?;
    if view.grid().dt() != dt {
        return Err(SolverError::BadConfig {
            message: format!(
                "path grid step {} does not match configured dt {}",
                view.grid().dt(),
                dt
            ),
        });
    }
    if !view.grid().covers(work_grid.t_start(), work_grid.t_end()) {
        return Err(SolverError::Convolution(ConvolutionError::WindowTooSmall {
            need_lo: work_grid.t_start(),
            need_hi: work_grid.t_end(),
            have_lo: view.grid().t_start(),
            have_hi: view.grid().t_end(),
        }));
    }

    let engine = Engine::new(split, drift, work_grid, n_h)?;
    let phased = PhasedDiffusion::build(b0, split, dt)?;
    let jumps = noise_jumps_eigen_on(&phased, view, &work_grid);
    let y1_eigen = convolution_grid_eigen(split, &jumps, &work_grid, n_h);

    let kappa = drift.grad_sup().map(|g| kappa_from_grad(split, g));
    let contraction_satisfied = kappa.map(|k| k < 1.0);
    let noise_tail = truncation_tail_bound(split, phased.sup_norm(), config.t_horizon);

    // Cutoff schedule: one pass when off or fixed, doubling loop otherwise.
    let mut schedule: Vec<Option<f64>> = match config.cutoff {
        CutoffMode::Off => vec![None],
        CutoffMode::Fixed(n) => vec![Some(n)],
        CutoffMode::Adaptive => {
            let ledger: BoundsLedger = condition_m_ledger(drift, split)?;
            let constants = drift.condition_m().expect("ledger construction checked presence");
            let n0 = choose_cutoff_n(&ledger, constants);
            (0..=MAX_CUTOFF_DOUBLINGS).map(|k| Some(n0 * f64::powi(2.0, k as i32))).collect()
        }
    };
    let adaptive = matches!(config.cutoff, CutoffMode::Adaptive);

    struct StageOutcome {
        z_eigen: DMatrix<f64>,
        residual_trace: Vec<f64>,
        picard_ok: bool,
        cutoff_n: Option<f64>,
        accepted: bool,
    }
    let mut cutoff_trace = Vec::new();
    let mut outcome: Option<StageOutcome> = None;
    for stage_n in schedule.drain(..) {
        let (z, trace, picard_ok) = picard(&engine, &y1_eigen, stage_n, config.tol, config.max_iters);
        let accepted = match stage_n {
            Some(n) => {
                let (sup_s, sup_u) = subspace_sups(split, &z);
                let ok = sup_s < CUTOFF_ACCEPT_FRACTION * n && sup_u < CUTOFF_ACCEPT_FRACTION * n;
                cutoff_trace.push(CutoffStage {
                    n,
                    sup_stable: sup_s,
                    sup_unstable: sup_u,
                    accepted: ok,
                });
                ok
            }
            None => true,
        };
        let stage_done = !adaptive || accepted;
        outcome = Some(StageOutcome {
            z_eigen: z,
            residual_trace: trace,
            picard_ok,
            cutoff_n: stage_n,
            accepted,
        });
        if stage_done {
            break;
        }
    }
    let StageOutcome { z_eigen, residual_trace, picard_ok, cutoff_n, accepted: cutoff_ok } =
        outcome.expect("schedule is never empty");
    let converged = picard_ok && (!adaptive || cutoff_ok);

    let sup_f = match cutoff_n {
        Some(n) => Some(drift.sup_norm_clamped(n)),
        None => drift.sup_norm(),
    };
    let report = SolveReport {
        iterations: residual_trace.len(),
        residual_trace,
        kappa,
        contraction_satisfied,
        noise_tail_bound: noise_tail,
        drift_tail_bound: drift_tail_bound(split, sup_f, config.t_horizon),
        cutoff_trace,
        cutoff_n,
        converged,
    };

    // Restrict to the evaluation window and rotate back to standard
    // coordinates; Y = Z + Y1 is assembled in the eigenbasis first.
    let eval_grid = TimeGrid::from_steps(0, n_eval, dt)?;
    let first = n_h;
    let cols = n_eval + 1;
    let z_block = z_eigen.columns(first, cols).into_owned();
    let y1_block = y1_eigen.columns(first, cols).into_owned();
    let y_block = &z_block + &y1_block;
    let tag = PathTag {
        master_seed: view.master_seed(),
        path_id: view.path_id(),
        shift_steps: view.shift_steps(),
    };
    let to_std = |m: &DMatrix<f64>| split.basis() * m;
    Ok(PathSolution {
        z: GridFunction::new(eval_grid, to_std(&z_block), Some(tag)),
        y: GridFunction::new(eval_grid, to_std(&y_block), Some(tag)),
        y1: GridFunction::new(eval_grid, to_std(&y1_block), Some(tag)),
        report,
    })
}

/// One application of the integral map to grid functions in standard
/// coordinates; the reference entry point for quadrature checks. The
/// output lives on the interior grid whose every node has the full
/// `[t - T_h, t + T_h]` window inside the input grid.
pub fn apply_map(
    z: &GridFunction,
    y1: &GridFunction,
    split: &HyperbolicSplitting,
    drift: &DriftSpec,
    t_horizon: f64,
) -> Result<GridFunction, SolverError> {
    if z.grid() != y1.grid() {
        return Err(SolverError::BadConfig {
            message: "z and y1 must live on the same grid".to_string(),
        });
    }
    let grid = *z.grid();
    let n_h = grid.steps_of("truncation horizon", t_horizon)?;
    if grid.n_steps() < 2 * n_h + 1 {
        return Err(SolverError::Convolution(ConvolutionError::WindowTooSmall {
            need_lo: grid.t_start(),
            need_hi: grid.t_start() + 2.0 * t_horizon + grid.dt(),
            have_lo: grid.t_start(),
            have_hi: grid.t_end(),
        }));
    }
    let engine = Engine::new(split, drift, grid, n_h)?;
    let vt = split.basis().transpose();
    let z_eigen = &vt * z.values();
    let y1_eigen = &vt * y1.values();
    let out = engine.apply(&z_eigen, &y1_eigen, None);
    // The rolling windows are complete exactly on the interior nodes.
    let interior = TimeGrid::from_steps(
        grid.index_offset() + n_h as i64,
        grid.n_steps() - 2 * n_h,
        grid.dt(),
    )?;
    let block = out.columns(n_h, interior.n_nodes()).into_owned();
    Ok(GridFunction::new(interior, split.basis() * block, z.provenance()))
}

/// Pointwise moments over paths on a shared grid, accumulated in path
/// order.
#[derive(Debug, Clone)]
pub struct MomentSeries {
    pub grid: TimeGrid,
    /// Sample mean per node (one column per node).
    pub mean: DMatrix<f64>,
    /// Unbiased sample covariance per node.
    pub covariance: Vec<DMatrix<f64>>,
    /// Standard error of each mean entry.
    pub mean_se: DMatrix<f64>,
    pub n_paths: usize,
}

pub(crate) struct MomentAccumulator {
    grid: TimeGrid,
    dim: usize,
    n: usize,
    sum: DMatrix<f64>,
    outer: Vec<DMatrix<f64>>,
}

impl MomentAccumulator {
    pub(crate) fn new(grid: TimeGrid, dim: usize) -> Self {
        let nodes = grid.n_nodes();
        MomentAccumulator {
            grid,
            dim,
            n: 0,
            sum: DMatrix::zeros(dim, nodes),
            outer: vec![DMatrix::zeros(dim, dim); nodes],
        }
    }

    pub(crate) fn push(&mut self, series: &GridFunction) {
        assert_eq!(series.dim(), self.dim);
        assert_eq!(series.grid(), &self.grid);
        self.n += 1;
        let v = series.values();
        for k in 0..self.grid.n_nodes() {
            let col = v.column(k);
            let outer = &mut self.outer[k];
            for i in 0..self.dim {
                self.sum[(i, k)] += col[i];
                for j in 0..self.dim {
                    outer[(i, j)] += col[i] * col[j];
                }
            }
        }
    }

    pub(crate) fn finish(self) -> MomentSeries {
        let n = self.n.max(1) as f64;
        let mean = &self.sum / n;
        let nodes = self.grid.n_nodes();
        let mut covariance = Vec::with_capacity(nodes);
        let mut mean_se = DMatrix::zeros(self.dim, nodes);
        for k in 0..nodes {
            let mut cov = DMatrix::zeros(self.dim, self.dim);
            if self.n > 1 {
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        cov[(i, j)] = (self.outer[k][(i, j)]
                            - self.n as f64 * mean[(i, k)] * mean[(j, k)])
                            / (self.n as f64 - 1.0);
                    }
                }
            }
            for i in 0..self.dim {
                mean_se[(i, k)] = (cov[(i, i)].max(0.0) / n).sqrt();
            }
            covariance.push(cov);
        }
        MomentSeries { grid: self.grid, mean, covariance, mean_se, n_paths: self.n }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleReport {
    pub n_paths: usize,
    pub all_converged: bool,
    pub max_iterations: usize,
    /// Root-mean-square over paths of the per-iteration residuals, shorter
    /// traces padded with their final value.
    pub residual_trace_rms: Vec<f64>,
    pub kappa: Option<f64>,
    pub contraction_satisfied: Option<bool>,
    pub noise_tail_bound: f64,
    pub drift_tail_bound: Option<f64>,
    pub cutoff_n_max: Option<f64>,
    pub cutoff_all_accepted: Option<bool>,
}

#[derive(Debug)]
pub struct EnsembleSolution {
    pub moments: MomentSeries,
    pub report: EnsembleReport,
}

/// Monte Carlo driver: solves paths `0..n_paths` (independent noise via the
/// counter generator), aggregates `Y` moments per node, and hands each
/// solution to `visit` in ascending path order. Worker scheduling cannot
/// change any output.
pub fn solve_ensemble(
    config: &SolverConfig,
    split: &HyperbolicSplitting,
    drift: &DriftSpec,
    b0: &DiffusionSpec,
    mut visit: impl FnMut(u64, &PathSolution),
) -> Result<EnsembleSolution, SolverError> {
    config.validate()?;
    let (lo, hi) = config.required_window();
    let sample_grid = TimeGrid::new(lo, hi, config.dt)?;
    let n_eval = exact_steps("evaluation window", config.eval_end(), config.dt)? as usize;
    let eval_grid = TimeGrid::from_steps(0, n_eval, config.dt)?;

    let mut acc = MomentAccumulator::new(eval_grid, split.dim());
    let mut residual_sq_sums: Vec<f64> = Vec::new();
    let mut all_converged = true;
    let mut max_iterations = 0usize;
    let mut kappa = None;
    let mut contraction_satisfied = None;
    let mut noise_tail = 0.0;
    let mut drift_tail = None;
    let mut cutoff_n_max: Option<f64> = None;
    let mut cutoff_all_accepted: Option<bool> = None;
    let mut first_error: Option<SolverError> = None;

    let solve_one = |path_id: u64| -> Result<PathSolution, SolverError> {
        let path = crate::wiener::WienerPath::sample(
            sample_grid,
            b0.noise_dim(),
            config.master_seed,
            path_id,
        );
        solve_path(config, split, drift, b0, &path.view())
    };

    crate::exec::map_ordered_chunked(
        0,
        config.n_paths as u64,
        crate::exec::DEFAULT_CHUNK,
        solve_one,
        |path_id, result| {
            if first_error.is_some() {
                return;
            }
            match result {
                Err(e) => first_error = Some(e),
                Ok(solution) => {
                    let report = &solution.report;
                    all_converged &= report.converged;
                    max_iterations = max_iterations.max(report.iterations);
                    if residual_sq_sums.len() < report.residual_trace.len() {
                        // Grow, back-filling earlier paths' padded values.
                        let grown = report.residual_trace.len();
                        let old = residual_sq_sums.len();
                        residual_sq_sums.resize(grown, 0.0);
                        if path_id > 0 && old > 0 {
                            for slot in old..grown {
                                residual_sq_sums[slot] = residual_sq_sums[old - 1];
                            }
                        }
                    }
                    let last = report.residual_trace.last().copied().unwrap_or(0.0);
                    for (slot, acc_sq) in residual_sq_sums.iter_mut().enumerate() {
                        let r = report.residual_trace.get(slot).copied().unwrap_or(last);
                        *acc_sq += r * r;
                    }
                    kappa = report.kappa;
                    contraction_satisfied = report.contraction_satisfied;
                    noise_tail = report.noise_tail_bound;
                    drift_tail = report.drift_tail_bound;
                    if let Some(n) = report.cutoff_n {
                        cutoff_n_max = Some(cutoff_n_max.map_or(n, |m: f64| m.max(n)));
                        let ok = report.cutoff_trace.last().map(|s| s.accepted).unwrap_or(true);
                        cutoff_all_accepted =
                            Some(cutoff_all_accepted.unwrap_or(true) && ok);
                    }
                    acc.push(&solution.y);
                    visit(path_id, &solution);
                }
            }
        },
    );
    if let Some(e) = first_error {
        return Err(e);
    }

    let n = config.n_paths as f64;
    let report = EnsembleReport {
        n_paths: config.n_paths,
        all_converged,
        max_iterations,
        residual_trace_rms: residual_sq_sums.iter().map(|s| (s / n).sqrt()).collect(),
        kappa,
        contraction_satisfied,
        noise_tail_bound: noise_tail,
        drift_tail_bound: drift_tail,
        cutoff_n_max,
        cutoff_all_accepted,
    };
    Ok(EnsembleSolution { moments: acc.finish(), report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{ConditionMConstants, DriftFamily};
    use crate::spectral::{decompose, DEFAULT_EPS_HYP};
    use crate::wiener::WienerPath;
    use approx::assert_relative_eq;

    fn split_diag(entries: &[f64]) -> HyperbolicSplitting {
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(entries));
        decompose(&a, DEFAULT_EPS_HYP).unwrap()
    }

    fn sample_view_for(config: &SolverConfig, noise_dim: usize, path_id: u64) -> WienerPath {
        let (lo, hi) = config.required_window();
        let grid = TimeGrid::new(lo, hi, config.dt).unwrap();
        WienerPath::sample(grid, noise_dim, config.master_seed, path_id)
    }

    #[test]
    fn zero_drift_returns_the_noise_convolution_in_one_step() {
        let split = split_diag(&[2.0, -3.0]);
        let drift = DriftSpec::new(DriftFamily::Zero { dim: 2 });
        let b0 = DiffusionSpec::constant(DMatrix::identity(2, 2));
        let config = SolverConfig::new(0.01, 1.0, 2.0, 1.0);
        let path = sample_view_for(&config, 2, 0);
        let sol = solve_path(&config, &split, &drift, &b0, &path.view()).unwrap();
        assert!(sol.report.converged);
        assert_eq!(sol.report.iterations, 1);
        assert_eq!(sol.z.values().amax(), 0.0);
        assert_eq!(sol.y.values(), sol.y1.values());
    }

    #[test]
    fn constant_drift_reproduces_the_closed_form_integral() {
        // Stable scalar: integral of exp(-(t-s)) * 0.5 over [t - T_h, t].
        let split = split_diag(&[1.0]);
        let drift =
            DriftSpec::new(DriftFamily::Constant { value: DVector::from_row_slice(&[0.5]) });
        let b0 = DiffusionSpec::constant(DMatrix::zeros(1, 1));
        let mut config = SolverConfig::new(0.01, 1.0, 20.0, 1.0);
        config.tol = 1e-12;
        let path = sample_view_for(&config, 1, 0);
        let sol = solve_path(&config, &split, &drift, &b0, &path.view()).unwrap();
        assert!(sol.report.converged);
        let expect = 0.5 * (1.0 - (-20.0f64).exp());
        for k in 0..sol.z.grid().n_nodes() {
            assert_relative_eq!(sol.z.node(k)[0], expect, max_relative = 1e-10);
        }

        // Unstable scalar: the backward integral enters with a minus sign.
        let split_u = split_diag(&[-1.0]);
        let sol_u = solve_path(&config, &split_u, &drift, &b0, &path.view()).unwrap();
        for k in 0..sol_u.z.grid().n_nodes() {
            assert_relative_eq!(sol_u.z.node(k)[0], -expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn affine_drift_contracts_and_reports_kappa() {
        let split = split_diag(&[2.0, -3.0]);
        let drift = DriftSpec::new(DriftFamily::Affine {
            matrix: DMatrix::identity(2, 2) * 0.1,
            offset: DVector::zeros(2),
        });
        let b0 = DiffusionSpec::constant(DMatrix::identity(2, 2));
        let mut config = SolverConfig::new(0.01, 1.0, 8.0, 1.0);
        config.tol = 1e-10;
        let path = sample_view_for(&config, 2, 3);
        let sol = solve_path(&config, &split, &drift, &b0, &path.view()).unwrap();
        assert!(sol.report.converged);
        let kappa = sol.report.kappa.unwrap();
        assert_relative_eq!(kappa, 8.0 * 0.01 * (0.25 + 1.0 / 9.0), epsilon = 1e-12);
        assert_eq!(sol.report.contraction_satisfied, Some(true));
        // Squared residual ratios stay below kappa + 0.05 from iteration 2.
        let trace = &sol.report.residual_trace;
        for w in trace.windows(2).skip(1) {
            if w[0] > 1e-13 {
                let sq_ratio = (w[1] / w[0]).powi(2);
                assert!(
                    sq_ratio <= kappa + 0.05,
                    "squared ratio {sq_ratio} above kappa + 0.05"
                );
            }
        }
    }

    #[test]
    fn apply_map_reproduces_constant_drift_integrals_on_the_interior() {
        // Stable scalar: int_{t-T_h}^t exp(-(t-s)) 0.5 ds = 0.5 (1 - e^{-T_h}).
        let t_h = 20.0;
        let dt = 0.01;
        let grid = TimeGrid::new(0.0, 2.0 * t_h + 1.0, dt).unwrap();
        let drift =
            DriftSpec::new(DriftFamily::Constant { value: DVector::from_row_slice(&[0.5]) });
        let zeros = DMatrix::zeros(1, grid.n_nodes());
        let z = GridFunction::new(grid, zeros.clone(), None);
        let y1 = GridFunction::new(grid, zeros, None);

        let split = split_diag(&[1.0]);
        let out = apply_map(&z, &y1, &split, &drift, t_h).unwrap();
        assert_eq!(out.grid().t_start(), t_h);
        assert_eq!(out.grid().t_end(), t_h + 1.0);
        let expect = 0.5 * (1.0 - (-t_h).exp());
        for k in 0..out.grid().n_nodes() {
            assert_relative_eq!(out.node(k)[0], expect, max_relative = 1e-10);
        }

        let split_u = split_diag(&[-1.0]);
        let out_u = apply_map(&z, &y1, &split_u, &drift, t_h).unwrap();
        for k in 0..out_u.grid().n_nodes() {
            assert_relative_eq!(out_u.node(k)[0], -expect, max_relative = 1e-10);
        }

        // Zero drift maps everything to zero.
        let zero_drift = DriftSpec::new(DriftFamily::Zero { dim: 1 });
        let out_z = apply_map(&z, &y1, &split, &zero_drift, t_h).unwrap();
        assert_eq!(out_z.values().amax(), 0.0);

        // A grid shorter than two horizons has no interior node.
        let short = TimeGrid::new(0.0, 1.0, dt).unwrap();
        let zs = GridFunction::new(short, DMatrix::zeros(1, short.n_nodes()), None);
        let err = apply_map(&zs, &zs.clone(), &split, &drift, t_h);
        assert!(matches!(
            err,
            Err(SolverError::Convolution(ConvolutionError::WindowTooSmall { .. }))
        ));
    }

    #[test]
    fn divergent_iteration_is_flagged_honestly() {
        let split = split_diag(&[1.0]);
        let drift = DriftSpec::new(DriftFamily::Affine {
            matrix: DMatrix::identity(1, 1) * 5.0,
            offset: DVector::from_row_slice(&[1.0]),
        });
        let b0 = DiffusionSpec::constant(DMatrix::identity(1, 1));
        let mut config = SolverConfig::new(0.05, 1.0, 2.0, 1.0);
        config.max_iters = 8;
        let path = sample_view_for(&config, 1, 0);
        let sol = solve_path(&config, &split, &drift, &b0, &path.view()).unwrap();
        assert!(!sol.report.converged);
        assert_eq!(sol.report.contraction_satisfied, Some(false));
        assert!(sol.require_converged().is_err());
        let t = &sol.report.residual_trace;
        assert!(t[t.len() - 1] > t[0], "divergence should grow the residual");
    }

    #[test]
    fn forced_scalar_response_matches_the_closed_form() {
        let split = split_diag(&[1.0]);
        let drift = DriftSpec::new(DriftFamily::SinusoidalForcing {
            amplitude: DVector::from_row_slice(&[1.0]),
            period: 1.0,
        });
        let b0 = DiffusionSpec::constant(DMatrix::zeros(1, 1));
        let dt = 0.01;
        let mut config = SolverConfig::new(dt, 1.0, 8.0, 1.0);
        config.tol = 1e-12;
        let path = sample_view_for(&config, 1, 0);
        let sol = solve_path(&config, &split, &drift, &b0, &path.view()).unwrap();
        let omega = std::f64::consts::TAU;
        let denom = 1.0 + omega * omega;
        let mut worst = 0.0f64;
        for k in 0..sol.y.grid().n_nodes() {
            let t = sol.y.grid().node_time(k);
            let expect = (omega * t).sin() / denom - omega * (omega * t).cos() / denom;
            worst = worst.max((sol.y.node(k)[0] - expect).abs());
        }
        // Left-endpoint quadrature bias is about omega * dt / 2 in amplitude.
        assert!(worst <= 2.0 * omega * dt, "forced response off by {worst}");
        assert!(worst >= 1e-5, "bias should be visible at this dt, got {worst}");
    }

    #[test]
    fn adaptive_cutoff_accepts_the_ledger_radius_and_is_stable() {
        let split = split_diag(&[2.0, -3.0]);
        let constants = ConditionMConstants {
            l1: 0.5,
            l2: 0.05,
            l3: 0.05,
            l4: 0.5,
            a1: 0.5,
            b1: 0.5,
        };
        let drift = DriftSpec::new(DriftFamily::DissipativePoly {
            linear: DVector::from_row_slice(&[0.5, 0.5]),
            cubic: DVector::from_row_slice(&[-1.0, 1.0]),
        })
        .with_condition_m(constants);
        let b0 = DiffusionSpec::constant(DMatrix::identity(2, 2) * 0.2);
        let mut config = SolverConfig::new(0.02, 1.0, 4.0, 1.0);
        config.cutoff = CutoffMode::Adaptive;
        let path = sample_view_for(&config, 2, 7);
        let sol = solve_path(&config, &split, &drift, &b0, &path.view()).unwrap();
        assert!(sol.report.converged);
        let trace = &sol.report.cutoff_trace;
        assert_eq!(trace.len(), 1, "ledger radius should be accepted immediately");
        assert!(trace[0].accepted);
        let ledger = condition_m_ledger(&drift, &split).unwrap();
        let n0 = choose_cutoff_n(&ledger, &constants);
        assert_relative_eq!(trace[0].n, n0, epsilon = 1e-13);

        // Doubling the radius must not move the solution.
        let mut config2 = config.clone();
        config2.cutoff = CutoffMode::Fixed(2.0 * n0);
        let sol2 = solve_path(&config2, &split, &drift, &b0, &path.view()).unwrap();
        let mut diff = 0.0f64;
        for k in 0..sol.y.grid().n_nodes() {
            diff = diff.max((sol.y.node(k) - sol2.y.node(k)).norm());
        }
        assert!(diff <= config.tol, "cutoff-dependent solution: diff {diff}");
    }

    #[test]
    fn ensemble_is_deterministic_and_single_path_matches_solve() {
        let split = split_diag(&[2.0, -3.0]);
        let drift = DriftSpec::new(DriftFamily::Affine {
            matrix: DMatrix::identity(2, 2) * 0.1,
            offset: DVector::zeros(2),
        });
        let b0 = DiffusionSpec::constant(DMatrix::identity(2, 2));
        let mut config = SolverConfig::new(0.05, 1.0, 2.0, 1.0);
        config.n_paths = 8;
        config.master_seed = 41;
        let run = || {
            let mut firsts = Vec::new();
            let sol =
                solve_ensemble(&config, &split, &drift, &b0, |_, s| firsts.push(s.y.node(0)))
                    .unwrap();
            (sol, firsts)
        };
        let (a, firsts_a) = run();
        let (b, firsts_b) = run();
        assert_eq!(a.moments.mean, b.moments.mean);
        assert_eq!(firsts_a, firsts_b);
        assert!(a.report.all_converged);
        assert_eq!(a.moments.n_paths, 8);

        // n_paths = 1 reproduces the single solve exactly.
        let mut config1 = config.clone();
        config1.n_paths = 1;
        let single = solve_ensemble(&config1, &split, &drift, &b0, |_, _| {}).unwrap();
        let path = sample_view_for(&config1, 2, 0);
        let direct = solve_path(&config1, &split, &drift, &b0, &path.view()).unwrap();
        assert_eq!(single.moments.mean, direct.y.values().clone_owned());
    }

    #[test]
    fn config_validation_names_the_violated_constraint() {
        let mut config = SolverConfig::new(0.3, 1.0, 2.0, 1.0);
        match config.validate() {
            Err(SolverError::BadConfig { message }) => {
                assert!(message.contains("tau"), "unexpected message: {message}")
            }
            other => panic!("expected BadConfig, got {other:?}"),
        }
        config = SolverConfig::new(0.1, 1.0, 2.5, 1.0);
        assert!(matches!(config.validate(), Err(SolverError::BadConfig { .. })));
        config = SolverConfig::new(0.1, 1.0, 2.0, 1.0);
        config.tol = 0.0;
        assert!(matches!(config.validate(), Err(SolverError::BadConfig { .. })));
    }
}
