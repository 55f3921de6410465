//! Truncated stochastic convolution of the noise against the hyperbolic
//! semigroup: the linear response
//!
//! ```text
//! Y1(t) =  sum_{s_k in [t - T_h, t)}  exp(-A (t - s_k)) P+ B0(s_k) dW_k
//!        - sum_{s_k in [t, t + T_h)}  exp(-A (t - s_k)) P- B0(s_k) dW_k
//! ```
//!
//! a left-endpoint Ito sum whose forward part integrates stable modes from
//! the past and whose backward part integrates unstable modes from the
//! future, both truncated at horizon `T_h` with an exponentially small,
//! reported tail. Kernel weights depend only on the integer node distance,
//! and periodic coefficients are evaluated at a canonical phase, so shifting
//! the path by one period re-produces the same summands exactly.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::spectral::HyperbolicSplitting;
use crate::wiener::{PathView, TimeGrid, WienerError};

#[derive(Debug, Error)]
pub enum ConvolutionError {
    #[error(
        "path window [{have_lo}, {have_hi}] too small: evaluation needs [{need_lo}, {need_hi}]"
    )]
    WindowTooSmall { need_lo: f64, need_hi: f64, have_lo: f64, have_hi: f64 },
    #[error("{0}")]
    HorizonOffGrid(#[from] WienerError),
    #[error("operation requires a constant diffusion, got the {family} family")]
    NonConstantDiffusion { family: &'static str },
    #[error("diffusion is {rows}x{cols} but the problem is {dim}-dimensional with {noise_dim} noise components")]
    DimensionMismatch { rows: usize, cols: usize, dim: usize, noise_dim: usize },
    #[error("diffusion table resolution {table_dt} does not match the grid step {dt}")]
    TableResolution { table_dt: f64, dt: f64 },
}

/// Provenance of a per-path series: which noise produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathTag {
    pub master_seed: u64,
    pub path_id: u64,
    pub shift_steps: i64,
}

/// A vector-valued function sampled on every node of a [`TimeGrid`].
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: TimeGrid,
    values: DMatrix<f64>,
    provenance: Option<PathTag>,
}

impl GridFunction {
    pub fn new(grid: TimeGrid, values: DMatrix<f64>, provenance: Option<PathTag>) -> Self {
        assert_eq!(values.ncols(), grid.n_nodes(), "one column per grid node");
        GridFunction { grid, values, provenance }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn provenance(&self) -> Option<PathTag> {
        self.provenance
    }

    pub fn node(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(self.values.column(k).as_slice())
    }

    pub fn value_at(&self, t: f64) -> Result<DVector<f64>, WienerError> {
        Ok(self.node(self.grid.node_of(t)?))
    }

    /// Restriction to the sub-grid `[t_lo, t_hi]` (both grid nodes).
    pub fn restrict(&self, t_lo: f64, t_hi: f64) -> Result<GridFunction, WienerError> {
        let lo = self.grid.node_of(t_lo)?;
        let hi = self.grid.node_of(t_hi)?;
        assert!(lo < hi, "restriction needs a nonempty time range");
        let grid = TimeGrid::from_steps(
            self.grid.index_offset() + lo as i64,
            hi - lo,
            self.grid.dt(),
        )
        .expect("sub-grid of a valid grid is valid");
        Ok(GridFunction {
            grid,
            values: self.values.columns(lo, hi - lo + 1).into_owned(),
            provenance: self.provenance,
        })
    }
}

/// Time-dependent diffusion coefficient `B0(t)`, a `d x M` matrix family.
#[derive(Debug, Clone)]
pub enum DiffusionFamily {
    /// `B0(t) = matrix` for all `t`.
    Constant { matrix: DMatrix<f64> },
    /// Trigonometric polynomial with the declared period:
    /// `B0(t) = base + sum_k cos(2 pi k t / period) cos_coeffs[k-1]
    ///               + sum_k sin(2 pi k t / period) sin_coeffs[k-1]`.
    Fourier { base: DMatrix<f64>, cos_coeffs: Vec<DMatrix<f64>>, sin_coeffs: Vec<DMatrix<f64>> },
    /// One matrix per grid node across a single period, repeated
    /// periodically. `values.len() * dt` must equal the period.
    TablePeriodic { values: Vec<DMatrix<f64>> },
    /// One matrix per grid node of step `table_dt`, starting at global node
    /// index `start_index`, clamped outside the tabulated range.
    /// Deliberately non-periodic; exists so identity checks have a fixture
    /// to fail on.
    TableAbsolute { values: Vec<DMatrix<f64>>, start_index: i64, table_dt: f64 },
}

#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    family: DiffusionFamily,
    period: Option<f64>,
    holder_const: f64,
    dim: usize,
    noise_dim: usize,
}

impl DiffusionSpec {
    pub fn constant(matrix: DMatrix<f64>) -> Self {
        let (dim, noise_dim) = (matrix.nrows(), matrix.ncols());
        DiffusionSpec {
            family: DiffusionFamily::Constant { matrix },
            period: None,
            holder_const: 0.0,
            dim,
            noise_dim,
        }
    }

    pub fn fourier(
        base: DMatrix<f64>,
        cos_coeffs: Vec<DMatrix<f64>>,
        sin_coeffs: Vec<DMatrix<f64>>,
        period: f64,
        holder_const: f64,
    ) -> Self {
        let (dim, noise_dim) = (base.nrows(), base.ncols());
        for m in cos_coeffs.iter().chain(sin_coeffs.iter()) {
            assert_eq!((m.nrows(), m.ncols()), (dim, noise_dim), "coefficient shape mismatch");
        }
        assert!(period > 0.0, "period must be positive");
        DiffusionSpec {
            family: DiffusionFamily::Fourier { base, cos_coeffs, sin_coeffs },
            period: Some(period),
            holder_const,
            dim,
            noise_dim,
        }
    }

    pub fn table_periodic(values: Vec<DMatrix<f64>>, period: f64, holder_const: f64) -> Self {
        assert!(!values.is_empty(), "table must be non-empty");
        let (dim, noise_dim) = (values[0].nrows(), values[0].ncols());
        for m in &values {
            assert_eq!((m.nrows(), m.ncols()), (dim, noise_dim), "table shape mismatch");
        }
        assert!(period > 0.0, "period must be positive");
        DiffusionSpec {
            family: DiffusionFamily::TablePeriodic { values },
            period: Some(period),
            holder_const,
            dim,
            noise_dim,
        }
    }

    pub fn table_absolute(values: Vec<DMatrix<f64>>, start_index: i64, table_dt: f64) -> Self {
        assert!(!values.is_empty(), "table must be non-empty");
        assert!(table_dt > 0.0, "table step must be positive");
        let (dim, noise_dim) = (values[0].nrows(), values[0].ncols());
        for m in &values {
            assert_eq!((m.nrows(), m.ncols()), (dim, noise_dim), "table shape mismatch");
        }
        DiffusionSpec {
            family: DiffusionFamily::TableAbsolute { values, start_index, table_dt },
            period: None,
            holder_const: 0.0,
            dim,
            noise_dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn holder_const(&self) -> f64 {
        self.holder_const
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            DiffusionFamily::Constant { .. } => "constant",
            DiffusionFamily::Fourier { .. } => "fourier",
            DiffusionFamily::TablePeriodic { .. } => "table",
            DiffusionFamily::TableAbsolute { .. } => "table_absolute",
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.family, DiffusionFamily::Constant { .. })
    }

    /// Evaluate at an arbitrary real time. Periodic families reduce `t`
    /// modulo the period; engine code instead evaluates on grid nodes via
    /// [`PhasedDiffusion`], which is exactly periodic at the grid level.
    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        match &self.family {
            DiffusionFamily::Constant { matrix } => matrix.clone(),
            DiffusionFamily::Fourier { base, cos_coeffs, sin_coeffs } => {
                let period = self.period.expect("fourier family stores a period");
                let phase = t - period * (t / period).floor();
                fourier_eval(base, cos_coeffs, sin_coeffs, phase, period)
            }
            DiffusionFamily::TablePeriodic { values } => {
                let period = self.period.expect("periodic table stores a period");
                let phase = t - period * (t / period).floor();
                let idx = ((phase / period * values.len() as f64).round() as usize)
                    % values.len();
                values[idx].clone()
            }
            DiffusionFamily::TableAbsolute { values, start_index, table_dt } => {
                let idx = ((t / table_dt).round() as i64 - start_index)
                    .clamp(0, values.len() as i64 - 1) as usize;
                values[idx].clone()
            }
        }
    }

    /// Largest Frobenius norm over one period sampled at resolution `dt`
    /// (exact for constant and table families).
    pub fn sup_norm_on(&self, dt: f64) -> f64 {
        match &self.family {
            DiffusionFamily::Constant { matrix } => matrix.norm(),
            DiffusionFamily::Fourier { base, cos_coeffs, sin_coeffs } => {
                let period = self.period.expect("fourier family stores a period");
                let n = (period / dt).round().max(1.0) as usize;
                (0..n)
                    .map(|p| {
                        fourier_eval(base, cos_coeffs, sin_coeffs, p as f64 * dt, period).norm()
                    })
                    .fold(0.0, f64::max)
            }
            DiffusionFamily::TablePeriodic { values }
            | DiffusionFamily::TableAbsolute { values, .. } => {
                values.iter().map(|m| m.norm()).fold(0.0, f64::max)
            }
        }
    }
}

fn fourier_eval(
    base: &DMatrix<f64>,
    cos_coeffs: &[DMatrix<f64>],
    sin_coeffs: &[DMatrix<f64>],
    t: f64,
    period: f64,
) -> DMatrix<f64> {
    let mut out = base.clone();
    let omega = std::f64::consts::TAU / period;
    for (k, c) in cos_coeffs.iter().enumerate() {
        out += c * ((k + 1) as f64 * omega * t).cos();
    }
    for (k, s) in sin_coeffs.iter().enumerate() {
        out += s * ((k + 1) as f64 * omega * t).sin();
    }
    out
}

/// Eigen-coordinate diffusion matrices resolved per grid node.
///
/// Periodic families are tabulated once per phase of the period and looked
/// up by the global node index modulo the period length, which makes
/// `B0(t + period) == B0(t)` bitwise on any grid. Absolute tables are
/// clamped to their tabulated range.
pub(crate) struct PhasedDiffusion {
    mats: Vec<DMatrix<f64>>,
    lookup: PhaseLookup,
    sup_norm: f64,
}

enum PhaseLookup {
    Constant,
    Periodic { steps_per_period: i64 },
    Absolute { start_index: i64 },
}

impl PhasedDiffusion {
    pub(crate) fn build(
        spec: &DiffusionSpec,
        split: &HyperbolicSplitting,
        dt: f64,
    ) -> Result<PhasedDiffusion, ConvolutionError> {
        if spec.dim() != split.dim() {
            return Err(ConvolutionError::DimensionMismatch {
                rows: spec.dim(),
                cols: spec.noise_dim(),
                dim: split.dim(),
                noise_dim: spec.noise_dim(),
            });
        }
        let vt = split.basis().transpose();
        let sup_norm = spec.sup_norm_on(dt);
        let build_periodic = |period: f64| -> Result<i64, ConvolutionError> {
            let ratio = period / dt;
            let steps = ratio.round();
            if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
                return Err(ConvolutionError::HorizonOffGrid(WienerError::NotOnGrid {
                    what: "diffusion period",
                    value: period,
                    dt,
                }));
            }
            Ok(steps as i64)
        };
        match &spec.family {
            DiffusionFamily::Constant { matrix } => Ok(PhasedDiffusion {
                mats: vec![&vt * matrix],
                lookup: PhaseLookup::Constant,
                sup_norm,
            }),
            DiffusionFamily::Fourier { base, cos_coeffs, sin_coeffs } => {
                let period = spec.period.expect("fourier family stores a period");
                let steps = build_periodic(period)?;
                let mats = (0..steps)
                    .map(|p| {
                        &vt * fourier_eval(base, cos_coeffs, sin_coeffs, p as f64 * dt, period)
                    })
                    .collect();
                Ok(PhasedDiffusion {
                    mats,
                    lookup: PhaseLookup::Periodic { steps_per_period: steps },
                    sup_norm,
                })
            }
            DiffusionFamily::TablePeriodic { values } => {
                let period = spec.period.expect("periodic table stores a period");
                let steps = build_periodic(period)?;
                if steps as usize != values.len() {
                    return Err(ConvolutionError::TableResolution {
                        table_dt: period / values.len() as f64,
                        dt,
                    });
                }
                let mats = values.iter().map(|m| &vt * m).collect();
                Ok(PhasedDiffusion {
                    mats,
                    lookup: PhaseLookup::Periodic { steps_per_period: steps },
                    sup_norm,
                })
            }
            DiffusionFamily::TableAbsolute { values, start_index, table_dt } => {
                if (table_dt - dt).abs() > 1e-9 * dt {
                    return Err(ConvolutionError::TableResolution { table_dt: *table_dt, dt });
                }
                let mats = values.iter().map(|m| &vt * m).collect();
                Ok(PhasedDiffusion {
                    mats,
                    lookup: PhaseLookup::Absolute { start_index: *start_index },
                    sup_norm,
                })
            }
        }
    }

    /// `V^T B0` at global node index `g`.
    pub(crate) fn eigen_matrix(&self, g: i64) -> &DMatrix<f64> {
        match self.lookup {
            PhaseLookup::Constant => &self.mats[0],
            PhaseLookup::Periodic { steps_per_period } => {
                &self.mats[g.rem_euclid(steps_per_period) as usize]
            }
            PhaseLookup::Absolute { start_index } => {
                let idx = (g - start_index).clamp(0, self.mats.len() as i64 - 1) as usize;
                &self.mats[idx]
            }
        }
    }

    pub(crate) fn sup_norm(&self) -> f64 {
        self.sup_norm
    }
}

/// Eigen-coordinate noise jumps `V^T B0(s_k) dW_k`, one column per step.
pub(crate) fn noise_jumps_eigen(
    phased: &PhasedDiffusion,
    view: &PathView<'_>,
) -> DMatrix<f64> {
    noise_jumps_eigen_on(phased, view, view.grid())
}

/// Same, but over a target sub-grid of the view's window (same `dt`).
pub(crate) fn noise_jumps_eigen_on(
    phased: &PhasedDiffusion,
    view: &PathView<'_>,
    grid: &TimeGrid,
) -> DMatrix<f64> {
    let base = view.grid();
    debug_assert_eq!(base.dt(), grid.dt());
    debug_assert!(base.covers(grid.t_start(), grid.t_end()), "target grid outside view");
    let local0 = (grid.index_offset() - base.index_offset()) as usize;
    let d = phased.eigen_matrix(grid.index_offset()).nrows();
    let m = view.noise_dim();
    let mut jumps = DMatrix::zeros(d, grid.n_steps());
    for k in 0..grid.n_steps() {
        let g = grid.index_offset() + k as i64;
        let b = phased.eigen_matrix(g);
        let inc = view.increment(local0 + k);
        let mut col = jumps.column_mut(k);
        for i in 0..d {
            let mut acc = 0.0;
            for c in 0..m {
                acc += b[(i, c)] * inc[c];
            }
            col[i] = acc;
        }
    }
    jumps
}

/// Truncated convolution on every node of the view grid, in eigen
/// coordinates (one column per node).
///
/// Rolling-window recurrence per eigendirection: advancing one node scales
/// the window sum by `exp(-mu dt)`, adds the newest jump and subtracts the
/// jump that leaves the horizon, so the whole grid costs O(nodes) instead
/// of O(nodes * horizon). Nodes closer than `T_h` to a grid edge use the
/// clipped window (the omitted mass is exponentially small whenever the
/// caller keeps its evaluation window `T_h` inside the grid).
pub(crate) fn convolution_grid_eigen(
    split: &HyperbolicSplitting,
    jumps: &DMatrix<f64>,
    grid: &TimeGrid,
    horizon_steps: usize,
) -> DMatrix<f64> {
    let d = split.dim();
    let n_steps = grid.n_steps();
    let n_nodes = grid.n_nodes();
    let dt = grid.dt();
    let mut out = DMatrix::zeros(d, n_nodes);
    let n_h = horizon_steps;

    for i in 0..d {
        let mu = split.eigenvalues()[i];
        if split.is_stable_index(i) {
            // Forward part: window [j - n_h, j), weight exp(-mu dt (j - k)).
            let a = (-mu * dt).exp();
            let drop = (-mu * dt * (n_h as f64 + 1.0)).exp();
            let mut acc = 0.0;
            out[(i, 0)] = 0.0;
            for j in 0..n_steps {
                acc = a * (acc + jumps[(i, j)]);
                if j >= n_h {
                    acc -= drop * jumps[(i, j - n_h)];
                }
                out[(i, j + 1)] = acc;
            }
        } else {
            // Backward part: window [j, j + n_h), weight exp(mu dt (k - j)),
            // entering the output with a minus sign.
            let b = (mu * dt).exp();
            let drop = (mu * dt * n_h as f64).exp();
            let mut acc = 0.0;
            out[(i, n_steps)] = 0.0;
            for j in (0..n_steps).rev() {
                acc = jumps[(i, j)] + b * acc;
                if j + n_h < n_steps {
                    acc -= drop * jumps[(i, j + n_h)];
                }
                out[(i, j)] = -acc;
            }
        }
    }
    out
}

/// Direct windowed sum at one node, in eigen coordinates. O(horizon);
/// exists as the reference the rolling recurrence is checked against.
pub(crate) fn convolution_at_eigen(
    split: &HyperbolicSplitting,
    jumps: &DMatrix<f64>,
    grid: &TimeGrid,
    node: usize,
    horizon_steps: usize,
) -> Result<DVector<f64>, ConvolutionError> {
    let n_h = horizon_steps;
    if node < n_h || node + n_h > grid.n_steps() {
        let t = grid.node_time(node);
        return Err(ConvolutionError::WindowTooSmall {
            need_lo: t - n_h as f64 * grid.dt(),
            need_hi: t + n_h as f64 * grid.dt(),
            have_lo: grid.t_start(),
            have_hi: grid.t_end(),
        });
    }
    let d = split.dim();
    let dt = grid.dt();
    let mut out = DVector::zeros(d);
    for i in 0..d {
        let mu = split.eigenvalues()[i];
        let mut acc = 0.0;
        if split.is_stable_index(i) {
            for k in (node - n_h)..node {
                acc += (-mu * dt * (node as f64 - k as f64)).exp() * jumps[(i, k)];
            }
        } else {
            for k in node..(node + n_h) {
                acc -= (-mu * dt * (node as f64 - k as f64)).exp() * jumps[(i, k)];
            }
        }
        out[i] = acc;
    }
    Ok(out)
}

fn horizon_steps(grid: &TimeGrid, t_horizon: f64) -> Result<usize, ConvolutionError> {
    Ok(grid.steps_of("truncation horizon", t_horizon)?)
}

/// Truncated convolution at a single grid node `t` of the view.
///
/// Requires the full window `[t - T_h, t + T_h]` inside the view grid.
pub fn y1_at(
    split: &HyperbolicSplitting,
    spec: &DiffusionSpec,
    view: &PathView<'_>,
    t: f64,
    t_horizon: f64,
) -> Result<DVector<f64>, ConvolutionError> {
    let grid = *view.grid();
    let node = grid.node_of(t)?;
    let n_h = horizon_steps(&grid, t_horizon)?;
    let phased = PhasedDiffusion::build(spec, split, grid.dt())?;
    let jumps = noise_jumps_eigen(&phased, view);
    let eigen = convolution_at_eigen(split, &jumps, &grid, node, n_h)?;
    Ok(split.from_eigen(&eigen))
}

/// Truncated convolution on every node of the view grid, as a standard
/// coordinate [`GridFunction`].
pub fn y1_grid(
    split: &HyperbolicSplitting,
    spec: &DiffusionSpec,
    view: &PathView<'_>,
    t_horizon: f64,
) -> Result<GridFunction, ConvolutionError> {
    let grid = *view.grid();
    let n_h = horizon_steps(&grid, t_horizon)?;
    let phased = PhasedDiffusion::build(spec, split, grid.dt())?;
    let jumps = noise_jumps_eigen(&phased, view);
    let eigen = convolution_grid_eigen(split, &jumps, &grid, n_h);
    let values = split.basis() * eigen;
    let tag = PathTag {
        master_seed: view.master_seed(),
        path_id: view.path_id(),
        shift_steps: view.shift_steps(),
    };
    Ok(GridFunction::new(grid, values, Some(tag)))
}

/// Largest defect of the one-period shift identity
/// `Y1(t + period, path) == Y1(t, shifted path)` over grid nodes of
/// `[eval_lo, eval_hi]`. Both sides use the same horizon; with full windows
/// available the two sides are the same summands reindexed, so the defect
/// is pure floating-point noise for periodic diffusions.
pub fn y1_periodicity_defect(
    split: &HyperbolicSplitting,
    spec: &DiffusionSpec,
    view: &PathView<'_>,
    period: f64,
    eval_range: (f64, f64),
    t_horizon: f64,
) -> Result<f64, ConvolutionError> {
    let (eval_lo, eval_hi) = eval_range;
    let base = y1_grid(split, spec, view, t_horizon)?;
    let shifted_view = view.shift(period).map_err(ConvolutionError::HorizonOffGrid)?;
    let shifted = y1_grid(split, spec, &shifted_view, t_horizon)?;
    let need = |lo: f64, hi: f64, grid: &TimeGrid| -> Result<(), ConvolutionError> {
        if !grid.covers(lo - t_horizon, hi + t_horizon) {
            return Err(ConvolutionError::WindowTooSmall {
                need_lo: lo - t_horizon,
                need_hi: hi + t_horizon,
                have_lo: grid.t_start(),
                have_hi: grid.t_end(),
            });
        }
        Ok(())
    };
    need(eval_lo + period, eval_hi + period, base.grid())?;
    need(eval_lo, eval_hi, shifted.grid())?;

    let lo = shifted.grid().node_of(eval_lo)?;
    let hi = shifted.grid().node_of(eval_hi)?;
    let lo_base = base.grid().node_of(eval_lo + period)?;
    let mut defect: f64 = 0.0;
    for k in 0..=(hi - lo) {
        let a = base.values().column(lo_base + k);
        let b = shifted.values().column(lo + k);
        defect = defect.max((a - b).norm());
    }
    Ok(defect)
}

/// Sensitivity of `Y1(t)` to the Wiener increment at `r`:
/// `exp(-A (t - r)) P+ B0(r)` for `r <= t`, `-exp(-A (t - r)) P- B0(r)`
/// for `r > t`. Continuum convention at `r == t`: the forward branch; the
/// discrete left-endpoint sum instead assigns the increment at `t` itself
/// to the backward part, so derivative checks should use `r != t`.
pub fn malliavin_y1(
    split: &HyperbolicSplitting,
    spec: &DiffusionSpec,
    r: f64,
    t: f64,
) -> DMatrix<f64> {
    let b = spec.eval(r);
    let eigen_b = split.basis().transpose() * b;
    let d = split.dim();
    let mut scaled = DMatrix::zeros(d, spec.noise_dim());
    for i in 0..d {
        let mu = split.eigenvalues()[i];
        let keep = if r <= t { split.is_stable_index(i) } else { !split.is_stable_index(i) };
        if keep {
            let sign = if r <= t { 1.0 } else { -1.0 };
            let w = (-mu * (t - r)).exp();
            for c in 0..spec.noise_dim() {
                scaled[(i, c)] = sign * w * eigen_b[(i, c)];
            }
        }
    }
    split.basis() * scaled
}

/// Exact stationary covariance of the untruncated convolution for constant
/// diffusion: in the eigenbasis with `Bt = V^T B0`,
/// `C_ij = (Bt Bt^T)_ij / (mu_i + mu_j)` when both eigenvalues are positive,
/// `(Bt Bt^T)_ij / (|mu_i| + |mu_j|)` when both are negative, and zero on
/// mixed pairs (forward and backward integrals use disjoint increments).
pub fn stationary_covariance(
    split: &HyperbolicSplitting,
    spec: &DiffusionSpec,
) -> Result<DMatrix<f64>, ConvolutionError> {
    if !spec.is_constant() {
        return Err(ConvolutionError::NonConstantDiffusion { family: spec.family_name() });
    }
    if spec.dim() != split.dim() {
        return Err(ConvolutionError::DimensionMismatch {
            rows: spec.dim(),
            cols: spec.noise_dim(),
            dim: split.dim(),
            noise_dim: spec.noise_dim(),
        });
    }
    let bt = split.basis().transpose() * spec.eval(0.0);
    let gram = &bt * bt.transpose();
    let d = split.dim();
    let mut c = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let (si, sj) = (split.is_stable_index(i), split.is_stable_index(j));
            if si && sj {
                c[(i, j)] = gram[(i, j)] / (split.eigenvalues()[i] + split.eigenvalues()[j]);
            } else if !si && !sj {
                c[(i, j)] =
                    gram[(i, j)] / (split.eigenvalues()[i].abs() + split.eigenvalues()[j].abs());
            }
        }
    }
    Ok(split.basis() * c * split.basis().transpose())
}

/// Root-mean-square bound on the mass discarded by truncating both
/// convolution windows at `T_h`.
pub fn truncation_tail_bound(
    split: &HyperbolicSplitting,
    sup_norm: f64,
    t_horizon: f64,
) -> f64 {
    let mut tail = 0.0;
    if let Some(mu) = split.mu_stable() {
        tail += split.decay_c() * sup_norm * (-0.5 * mu * t_horizon).exp() * (2.0 / mu).sqrt();
    }
    if let Some(mu) = split.mu_unstable() {
        tail += split.decay_c() * sup_norm * (0.5 * mu * t_horizon).exp() * (-2.0 / mu).sqrt();
    }
    tail
}
