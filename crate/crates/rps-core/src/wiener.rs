//! Commensurate time grids and two-sided Wiener paths with exact
//! grid-level time shifts.
//!
//! Grid nodes sit at integer multiples of `dt` (the grid start must itself
//! be a multiple of `dt`), so every node has a global integer index. All
//! increments are generated by a counter-based generator keyed by
//! `(master_seed, path_id, global step, component)`: any window of the same
//! path reproduces identical increments regardless of sampling order or
//! thread schedule, and shifting a path by `k` steps is pure reindexing of
//! the same array entries, bitwise.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WienerError {
    #[error("{what} = {value} is not a multiple of dt = {dt} (relative tolerance 1e-9)")]
    NotOnGrid { what: &'static str, value: f64, dt: f64 },
    #[error("shift by {shift_steps} steps leaves no overlap with a window of {n_steps} steps")]
    EmptyWindow { shift_steps: i64, n_steps: usize },
    #[error("time {t} is not a node of the grid [{t_start}, {t_end}] with dt = {dt}")]
    OffGrid { t: f64, t_start: f64, t_end: f64, dt: f64 },
    #[error("dt = {dt} must be positive and finite")]
    BadStep { dt: f64 },
    #[error("window [{t_start}, {t_end}] must contain at least one step")]
    EmptyGrid { t_start: f64, t_end: f64 },
    #[error("coarsening by {factor} does not divide the window ({n_steps} steps from offset {index_offset})")]
    BadCoarsen { factor: usize, n_steps: usize, index_offset: i64 },
}

/// Round `value / dt` to the nearest integer, failing unless the quotient
/// is an integer to 1e-9 relative accuracy.
pub(crate) fn exact_steps(what: &'static str, value: f64, dt: f64) -> Result<i64, WienerError> {
    let ratio = value / dt;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-9 * ratio.abs().max(1.0) {
        return Err(WienerError::NotOnGrid { what, value, dt });
    }
    Ok(steps as i64)
}

/// Uniform grid `t_k = (index_offset + k) * dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    index_offset: i64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, dt: f64) -> Result<Self, WienerError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(WienerError::BadStep { dt });
        }
        let index_offset = exact_steps("grid start", t_start, dt)?;
        let span_steps = exact_steps("grid span", t_end - t_start, dt)?;
        if span_steps < 1 {
            return Err(WienerError::EmptyGrid { t_start, t_end });
        }
        Ok(TimeGrid { dt, index_offset, n_steps: span_steps as usize })
    }

    pub fn from_steps(index_offset: i64, n_steps: usize, dt: f64) -> Result<Self, WienerError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(WienerError::BadStep { dt });
        }
        if n_steps == 0 {
            return Err(WienerError::EmptyGrid {
                t_start: index_offset as f64 * dt,
                t_end: index_offset as f64 * dt,
            });
        }
        Ok(TimeGrid { dt, index_offset, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    /// Global integer index of node 0; node `k` has global index
    /// `index_offset + k` and time `(index_offset + k) * dt`.
    pub fn index_offset(&self) -> i64 {
        self.index_offset
    }

    pub fn t_start(&self) -> f64 {
        self.index_offset as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        (self.index_offset + self.n_steps as i64) as f64 * self.dt
    }

    pub fn node_time(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n_steps);
        (self.index_offset + k as i64) as f64 * self.dt
    }

    /// Node index of time `t`, or `OffGrid`.
    pub fn node_of(&self, t: f64) -> Result<usize, WienerError> {
        let off = || WienerError::OffGrid {
            t,
            t_start: self.t_start(),
            t_end: self.t_end(),
            dt: self.dt,
        };
        let global = exact_steps("node time", t, self.dt).map_err(|_| off())?;
        let k = global - self.index_offset;
        if k < 0 || k > self.n_steps as i64 {
            return Err(off());
        }
        Ok(k as usize)
    }

    /// Number of steps in `duration`, which must be a positive multiple of `dt`.
    pub fn steps_of(&self, what: &'static str, duration: f64) -> Result<usize, WienerError> {
        let steps = exact_steps(what, duration, self.dt)?;
        if steps < 0 {
            return Err(WienerError::NotOnGrid { what, value: duration, dt: self.dt });
        }
        Ok(steps as usize)
    }

    /// True when `[t_lo, t_hi]` lies inside this grid (node times included).
    pub fn covers(&self, t_lo: f64, t_hi: f64) -> bool {
        let eps = 1e-9 * self.dt;
        self.t_start() <= t_lo + eps && t_hi <= self.t_end() + eps
    }
}

/// SplitMix64 finalizer: a bijective 64-bit mixer with full avalanche.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter hash over the full key; order-independent by construction.
#[inline]
fn counter_hash(master_seed: u64, path_id: u64, g_step: i64, lane: u64) -> u64 {
    let mut h = mix64(master_seed ^ 0x9e37_79b9_7f4a_7c15);
    h = mix64(h ^ path_id);
    h = mix64(h ^ (g_step as u64));
    mix64(h ^ lane)
}

/// Uniform in the open interval (0, 1) from 53 high bits.
#[inline]
fn to_open_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Uniform (0,1) draw for one `(seed, path, step, lane)` key; the raw
/// counter stream behind [`standard_normal`], exposed for deterministic
/// sampling needs inside the crate.
#[inline]
pub(crate) fn uniform_open(master_seed: u64, path_id: u64, g_step: i64, lane: u64) -> f64 {
    to_open_unit(counter_hash(master_seed, path_id, g_step, lane))
}

/// Standard normal draw for one `(seed, path, step, component)` key via
/// Box-Muller on two derived counter lanes.
#[inline]
pub fn standard_normal(master_seed: u64, path_id: u64, g_step: i64, component: usize) -> f64 {
    let u1 = to_open_unit(counter_hash(master_seed, path_id, g_step, 2 * component as u64));
    let u2 = to_open_unit(counter_hash(master_seed, path_id, g_step, 2 * component as u64 + 1));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A sampled two-sided Wiener window: `noise_dim` independent components,
/// one increment per grid step, stored step-major.
#[derive(Debug, Clone)]
pub struct WienerPath {
    grid: TimeGrid,
    noise_dim: usize,
    master_seed: u64,
    path_id: u64,
    increments: Vec<f64>,
}

impl WienerPath {
    /// Generate every increment of the window from the counter stream.
    /// Increment `k` covers `[t_k, t_{k+1})` and is keyed by the global
    /// step index, so overlapping windows of the same path agree bitwise.
    pub fn sample(grid: TimeGrid, noise_dim: usize, master_seed: u64, path_id: u64) -> Self {
        assert!(noise_dim > 0, "noise dimension must be positive");
        let sqrt_dt = grid.dt().sqrt();
        let n = grid.n_steps();
        let mut increments = Vec::with_capacity(n * noise_dim);
        for k in 0..n {
            let g = grid.index_offset() + k as i64;
            for c in 0..noise_dim {
                increments.push(sqrt_dt * standard_normal(master_seed, path_id, g, c));
            }
        }
        WienerPath { grid, noise_dim, master_seed, path_id, increments }
    }

    /// Wrap externally supplied increments (fixtures, perturbation studies).
    /// Step-major layout: `increments[k * noise_dim + c]`.
    pub fn from_increments(
        grid: TimeGrid,
        noise_dim: usize,
        master_seed: u64,
        path_id: u64,
        increments: Vec<f64>,
    ) -> Self {
        assert!(noise_dim > 0, "noise dimension must be positive");
        assert_eq!(
            increments.len(),
            grid.n_steps() * noise_dim,
            "one increment per step and component"
        );
        WienerPath { grid, noise_dim, master_seed, path_id, increments }
    }

    /// All stored increments, step-major.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    /// Increment over `[t_k, t_{k+1})` as a component slice.
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.noise_dim..(k + 1) * self.noise_dim]
    }

    /// The identity view (shift 0, full window).
    pub fn view(&self) -> PathView<'_> {
        PathView { path: self, shift_steps: 0, grid: self.grid }
    }

    /// View of the same noise shifted by `delta` (a multiple of `dt`).
    pub fn shift(&self, delta: f64) -> Result<PathView<'_>, WienerError> {
        self.view().shift(delta)
    }

    /// Merge consecutive increments into a path on a `factor`-times coarser
    /// grid. Exact pairwise sums: the coarse path is the same Brownian
    /// motion read on coarse nodes, which couples refinement levels for
    /// convergence studies.
    pub fn coarsen(&self, factor: usize) -> Result<WienerPath, WienerError> {
        let bad = WienerError::BadCoarsen {
            factor,
            n_steps: self.grid.n_steps(),
            index_offset: self.grid.index_offset(),
        };
        if factor == 0
            || !self.grid.n_steps().is_multiple_of(factor)
            || self.grid.index_offset() % factor as i64 != 0
        {
            return Err(bad);
        }
        let n_coarse = self.grid.n_steps() / factor;
        let grid = TimeGrid {
            dt: self.grid.dt() * factor as f64,
            index_offset: self.grid.index_offset() / factor as i64,
            n_steps: n_coarse,
        };
        let m = self.noise_dim;
        let mut increments = vec![0.0; n_coarse * m];
        for k in 0..self.grid.n_steps() {
            let dst = k / factor;
            for c in 0..m {
                increments[dst * m + c] += self.increments[k * m + c];
            }
        }
        Ok(WienerPath {
            grid,
            noise_dim: m,
            master_seed: self.master_seed,
            path_id: self.path_id,
            increments,
        })
    }
}

/// A time-shifted reading of a [`WienerPath`]: node `t` of the view carries
/// the base increment at `t + shift`. The valid window is the base window
/// intersected with its translate, so views never fabricate data.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    path: &'a WienerPath,
    shift_steps: i64,
    grid: TimeGrid,
}

impl<'a> PathView<'a> {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn noise_dim(&self) -> usize {
        self.path.noise_dim
    }

    pub fn path_id(&self) -> u64 {
        self.path.path_id
    }

    pub fn master_seed(&self) -> u64 {
        self.path.master_seed
    }

    pub fn shift_steps(&self) -> i64 {
        self.shift_steps
    }

    /// Compose a further shift. Shifts add in the base frame, so
    /// `shift(shift(p, a), b)` and `shift(p, a + b)` produce identical
    /// windows and identical increments.
    pub fn shift(&self, delta: f64) -> Result<PathView<'a>, WienerError> {
        let steps = exact_steps("shift", delta, self.path.grid.dt())?;
        let total = self.shift_steps + steps;
        let base = &self.path.grid;
        // Valid local steps g: both g and g + total must be base steps.
        let lo = base.index_offset().max(base.index_offset() - total);
        let hi = (base.index_offset() + base.n_steps() as i64)
            .min(base.index_offset() + base.n_steps() as i64 - total);
        if hi <= lo {
            return Err(WienerError::EmptyWindow {
                shift_steps: total,
                n_steps: base.n_steps(),
            });
        }
        let grid =
            TimeGrid { dt: base.dt(), index_offset: lo, n_steps: (hi - lo) as usize };
        Ok(PathView { path: self.path, shift_steps: total, grid })
    }

    /// Increment over local step `k` of the view window.
    pub fn increment(&self, k: usize) -> &[f64] {
        debug_assert!(k < self.grid.n_steps());
        let g = self.grid.index_offset() + k as i64;
        let base_slot = g + self.shift_steps - self.path.grid.index_offset();
        self.path.increment(base_slot as usize)
    }

    /// `W(t) - W(window start)`: the prefix sum of increments up to node `t`.
    pub fn evaluate(&self, t: f64) -> Result<DVector<f64>, WienerError> {
        let node = self.grid.node_of(t)?;
        let mut acc = DVector::zeros(self.path.noise_dim);
        for k in 0..node {
            let inc = self.increment(k);
            for c in 0..self.path.noise_dim {
                acc[c] += inc[c];
            }
        }
        Ok(acc)
    }
}
