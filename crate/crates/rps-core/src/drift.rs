//! Drift nonlinearities `F(t, u)` with analytic Jacobians, the radial
//! stable/unstable cutoff, and the dissipativity constant ledger that sizes
//! the cutoff radius.
//!
//! Drifts declare what is exactly known about them: a sup norm when bounded,
//! a gradient bound when globally Lipschitz, and optional one-sided growth
//! constants `(L1..L4, A1, B1)` satisfying
//!
//! ```text
//! <x, P+ F(s, x + y)>  <= L1 |x|^2 + L2 |y|^2 + A1
//! <y, -P- F(s, x + y)> <= L3 |x|^2 + L4 |y|^2 + B1
//! ```
//!
//! for `x` stable, `y` unstable. Declared constants are never inferred, only
//! spot-checked on deterministic samples.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::spectral::{symmetric_eigendecomposition, HyperbolicSplitting, Subspace};
use crate::wiener::{standard_normal, uniform_open};

/// Safety factor applied on top of the a-priori solution bounds when
/// choosing the cutoff radius.
pub const CUTOFF_MARGIN: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DriftError {
    #[error("the ledger needs declared growth constants on the drift")]
    MissingConditionM,
    #[error("the ledger needs both a stable and an unstable subspace (got {n_stable} stable, {n_unstable} unstable)")]
    BothSubspacesRequired { n_stable: usize, n_unstable: usize },
    #[error("growth condition violated: {inequality} fails with lhs = {lhs}, rhs = {rhs}")]
    ConditionMViolation { inequality: String, lhs: f64, rhs: f64 },
}

/// Declared one-sided growth constants. Positivity of the `L`s and
/// nonnegativity of `A1`, `B1` are enforced by the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionMConstants {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub a1: f64,
    pub b1: f64,
}

/// Parametric drift families.
#[derive(Debug, Clone)]
pub enum DriftFamily {
    /// `F = 0`.
    Zero { dim: usize },
    /// `F(t, u) = value`.
    Constant { value: DVector<f64> },
    /// `F(t, u) = amplitude * sin(2 pi t / period)`, componentwise scaling
    /// of one shared scalar oscillation.
    SinusoidalForcing { amplitude: DVector<f64>, period: f64 },
    /// `F(t, u) = matrix u + offset`.
    Affine { matrix: DMatrix<f64>, offset: DVector<f64> },
    /// Componentwise cubic `F_i(u) = linear_i u_i + cubic_i u_i^3`
    /// (`u - u^3` is `linear = 1`, `cubic = -1`).
    DissipativePoly { linear: DVector<f64>, cubic: DVector<f64> },
    /// Time-periodic forcing tabulated on uniform nodes across one period,
    /// piecewise-linear in `t`, independent of `u`.
    Table { values: Vec<DVector<f64>>, period: f64 },
}

#[derive(Debug, Clone)]
pub struct DriftSpec {
    family: DriftFamily,
    condition_m: Option<ConditionMConstants>,
}

impl DriftSpec {
    pub fn new(family: DriftFamily) -> Self {
        match &family {
            DriftFamily::Zero { dim } => assert!(*dim > 0, "dimension must be positive"),
            DriftFamily::SinusoidalForcing { period, .. } => {
                assert!(*period > 0.0, "period must be positive")
            }
            DriftFamily::Affine { matrix, offset } => {
                assert_eq!(matrix.nrows(), matrix.ncols(), "affine matrix must be square");
                assert_eq!(matrix.nrows(), offset.len(), "offset length mismatch");
            }
            DriftFamily::DissipativePoly { linear, cubic } => {
                assert_eq!(linear.len(), cubic.len(), "coefficient length mismatch")
            }
            DriftFamily::Table { values, period } => {
                assert!(!values.is_empty(), "table must be non-empty");
                assert!(*period > 0.0, "period must be positive");
                let d = values[0].len();
                assert!(values.iter().all(|v| v.len() == d), "table length mismatch");
            }
            DriftFamily::Constant { .. } => {}
        }
        DriftSpec { family, condition_m: None }
    }

    pub fn with_condition_m(mut self, constants: ConditionMConstants) -> Self {
        self.condition_m = Some(constants);
        self
    }

    pub fn family(&self) -> &DriftFamily {
        &self.family
    }

    pub fn condition_m(&self) -> Option<&ConditionMConstants> {
        self.condition_m.as_ref()
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            DriftFamily::Zero { .. } => "zero",
            DriftFamily::Constant { .. } => "constant",
            DriftFamily::SinusoidalForcing { .. } => "sinusoidal_forcing",
            DriftFamily::Affine { .. } => "affine",
            DriftFamily::DissipativePoly { .. } => "dissipative_poly",
            DriftFamily::Table { .. } => "table",
        }
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            DriftFamily::Zero { dim } => *dim,
            DriftFamily::Constant { value } => value.len(),
            DriftFamily::SinusoidalForcing { amplitude, .. } => amplitude.len(),
            DriftFamily::Affine { matrix, .. } => matrix.nrows(),
            DriftFamily::DissipativePoly { linear, .. } => linear.len(),
            DriftFamily::Table { values, .. } => values[0].len(),
        }
    }

    /// Period of the explicit time dependence; `None` means autonomous.
    pub fn period(&self) -> Option<f64> {
        match &self.family {
            DriftFamily::SinusoidalForcing { period, .. } | DriftFamily::Table { period, .. } => {
                Some(*period)
            }
            _ => None,
        }
    }

    pub fn is_autonomous(&self) -> bool {
        self.period().is_none()
    }

    /// True when `F` does not depend on its `u` argument.
    pub fn is_state_independent(&self) -> bool {
        matches!(
            self.family,
            DriftFamily::Zero { .. }
                | DriftFamily::Constant { .. }
                | DriftFamily::SinusoidalForcing { .. }
                | DriftFamily::Table { .. }
        )
    }

    pub fn eval(&self, t: f64, u: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(u.len(), self.dim());
        match &self.family {
            DriftFamily::Zero { dim } => DVector::zeros(*dim),
            DriftFamily::Constant { value } => value.clone(),
            DriftFamily::SinusoidalForcing { amplitude, period } => {
                amplitude * (std::f64::consts::TAU * t / period).sin()
            }
            DriftFamily::Affine { matrix, offset } => matrix * u + offset,
            DriftFamily::DissipativePoly { linear, cubic } => DVector::from_fn(linear.len(), |i, _| {
                linear[i] * u[i] + cubic[i] * u[i] * u[i] * u[i]
            }),
            DriftFamily::Table { values, period } => {
                let n = values.len();
                let phase = t - period * (t / period).floor();
                let pos = phase / period * n as f64;
                let i0 = (pos.floor() as usize).min(n - 1);
                let frac = pos - i0 as f64;
                &values[i0] * (1.0 - frac) + &values[(i0 + 1) % n] * frac
            }
        }
    }

    pub fn jacobian(&self, _t: f64, u: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        match &self.family {
            DriftFamily::Zero { .. }
            | DriftFamily::Constant { .. }
            | DriftFamily::SinusoidalForcing { .. }
            | DriftFamily::Table { .. } => DMatrix::zeros(d, d),
            DriftFamily::Affine { matrix, .. } => matrix.clone(),
            DriftFamily::DissipativePoly { linear, cubic } => {
                DMatrix::from_fn(d, d, |i, j| {
                    if i == j {
                        linear[i] + 3.0 * cubic[i] * u[i] * u[i]
                    } else {
                        0.0
                    }
                })
            }
        }
    }

    /// `sup |F|` over all `(t, u)` when finite. Exact per family.
    pub fn sup_norm(&self) -> Option<f64> {
        match &self.family {
            DriftFamily::Zero { .. } => Some(0.0),
            DriftFamily::Constant { value } => Some(value.norm()),
            DriftFamily::SinusoidalForcing { amplitude, .. } => Some(amplitude.norm()),
            DriftFamily::Table { values, .. } => {
                // Piecewise-linear in t: the norm is maximal at a node.
                Some(values.iter().map(|v| v.norm()).fold(0.0, f64::max))
            }
            DriftFamily::Affine { matrix, offset } => {
                if matrix.amax() == 0.0 {
                    Some(offset.norm())
                } else {
                    None
                }
            }
            DriftFamily::DissipativePoly { linear, cubic } => {
                if linear.amax() == 0.0 && cubic.amax() == 0.0 {
                    Some(0.0)
                } else {
                    None
                }
            }
        }
    }

    /// `sup ||grad F||` (spectral norm) over all `(t, u)` when finite.
    pub fn grad_sup(&self) -> Option<f64> {
        match &self.family {
            DriftFamily::Zero { .. }
            | DriftFamily::Constant { .. }
            | DriftFamily::SinusoidalForcing { .. }
            | DriftFamily::Table { .. } => Some(0.0),
            DriftFamily::Affine { matrix, .. } => Some(spectral_norm(matrix)),
            DriftFamily::DissipativePoly { .. } => None,
        }
    }

    /// Upper bound on `sup |F(t, u)|` over the clamped region
    /// `{ |P+ u| <= n, |P- u| <= n }` (so `|u| <= sqrt(2) n`).
    pub fn sup_norm_clamped(&self, n: f64) -> f64 {
        let r = std::f64::consts::SQRT_2 * n;
        match &self.family {
            DriftFamily::Affine { matrix, offset } => spectral_norm(matrix) * r + offset.norm(),
            DriftFamily::DissipativePoly { linear, cubic } => {
                let per_component = |l: f64, c: f64| -> f64 {
                    // max of |l a + c a^3| over |a| <= r: ends or the
                    // stationary point a* with l + 3 c a*^2 = 0.
                    let mut best = (l * r + c * r * r * r).abs();
                    if c != 0.0 && l / c < 0.0 {
                        let a = (-l / (3.0 * c)).sqrt();
                        if a <= r {
                            best = best.max((l * a + c * a * a * a).abs());
                        }
                    }
                    best
                };
                (0..linear.len())
                    .map(|i| {
                        let m = per_component(linear[i], cubic[i]);
                        m * m
                    })
                    .sum::<f64>()
                    .sqrt()
            }
            _ => self.sup_norm().expect("bounded families report a sup norm"),
        }
    }
}

/// Spectral norm via the eigenvalues of `K^T K`.
fn spectral_norm(k: &DMatrix<f64>) -> f64 {
    if k.amax() == 0.0 {
        return 0.0;
    }
    let gram = k.transpose() * k;
    let (eigs, _) = symmetric_eigendecomposition(&gram)
        .expect("Gram matrices are symmetric and never fail to diagonalize");
    eigs[eigs.len() - 1].max(0.0).sqrt()
}

/// Radial clamp of the stable and unstable components of `u` at radius `n`:
/// `x (|x| ^ n) / |x|` on each factor, the identity at `x = 0` and inside
/// the ball.
pub fn clamp_split(split: &HyperbolicSplitting, n: f64, u: &DVector<f64>) -> DVector<f64> {
    assert!(n > 0.0, "cutoff radius must be positive");
    let mut coeffs = split.to_eigen(u);
    clamp_eigen(split, n, &mut coeffs);
    split.from_eigen(&coeffs)
}

/// Same clamp acting on eigen coordinates in place. Subspace norms are
/// preserved by the orthogonal change of basis, so this is the clamp the
/// solver applies to its iterates.
pub(crate) fn clamp_eigen(split: &HyperbolicSplitting, n: f64, coeffs: &mut DVector<f64>) {
    for stable in [true, false] {
        let norm_sq: f64 = (0..split.dim())
            .filter(|&i| split.is_stable_index(i) == stable)
            .map(|i| coeffs[i] * coeffs[i])
            .sum();
        let norm = norm_sq.sqrt();
        if norm > n {
            let scale = n / norm;
            for i in 0..split.dim() {
                if split.is_stable_index(i) == stable {
                    coeffs[i] *= scale;
                }
            }
        }
    }
}

/// The drift composed with the radial clamp: `F*_N(t, u) = F(t, clamp(u))`.
pub struct CutoffDrift<'a> {
    pub spec: &'a DriftSpec,
    pub split: &'a HyperbolicSplitting,
    pub n: f64,
}

impl CutoffDrift<'_> {
    pub fn eval(&self, t: f64, u: &DVector<f64>) -> DVector<f64> {
        self.spec.eval(t, &clamp_split(self.split, self.n, u))
    }
}

/// Derived dissipativity ledger: the effective constants, the Gronwall
/// coupling coefficients, and the a-priori squared bounds on the stable and
/// unstable parts of the solution.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundsLedger {
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub l1_star: f64,
    pub l2_star: f64,
    pub l3_star: f64,
    pub l4_star: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub m_const: f64,
    pub ratio: f64,
    pub zplus_sq_bound: f64,
    pub zminus_sq_bound: f64,
}

/// Build and validate the ledger from declared constants.
///
/// Checks, in order: positivity of the declared constants, `L1* < mu_+`,
/// `L4* < -mu_-`, the product constraint
/// `L2* L3* <= (mu_+ - mu_- - L1* - L4*) min(mu_+ - L1*, -(mu_- + L4*)) / 2`,
/// `lambda > 0`, `M > 0`, `2 lambda / gamma < 1`, and the two-formula
/// consistency `ratio == 8 L2* L3* / ((alpha + gamma) gamma)`.
pub fn condition_m_ledger(
    spec: &DriftSpec,
    split: &HyperbolicSplitting,
) -> Result<BoundsLedger, DriftError> {
    let c = spec.condition_m().ok_or(DriftError::MissingConditionM)?;
    let (mu_plus, mu_minus) = match (split.mu_stable(), split.mu_unstable()) {
        (Some(p), Some(m)) => (p, m),
        _ => {
            return Err(DriftError::BothSubspacesRequired {
                n_stable: split.n_stable(),
                n_unstable: split.n_unstable(),
            })
        }
    };
    let violation = |inequality: &str, lhs: f64, rhs: f64| DriftError::ConditionMViolation {
        inequality: inequality.to_string(),
        lhs,
        rhs,
    };
    for (name, v) in [("L1", c.l1), ("L2", c.l2), ("L3", c.l3), ("L4", c.l4)] {
        if !(v > 0.0) {
            return Err(violation(&format!("{name} > 0"), v, 0.0));
        }
    }
    for (name, v) in [("A1", c.a1), ("B1", c.b1)] {
        if !(v >= 0.0) {
            return Err(violation(&format!("{name} >= 0"), v, 0.0));
        }
    }
    let l1_star = 2.0 * c.l1;
    let l2_star = c.l2.max(c.l2 * c.l2 / c.l1);
    let l3_star = c.l3.max(c.l3 * c.l3 / c.l4);
    let l4_star = 2.0 * c.l4;
    if l1_star >= mu_plus {
        return Err(violation("L1* < mu_{m+1}", l1_star, mu_plus));
    }
    if l4_star >= -mu_minus {
        return Err(violation("L4* < -mu_m", l4_star, -mu_minus));
    }
    // Product constraint; mu_- + L4* < 0 here, so the intended minimum is
    // over the two positive gaps.
    let gap_plus = mu_plus - l1_star;
    let gap_minus = -(mu_minus + l4_star);
    let product_rhs = 0.5 * (mu_plus - mu_minus - l1_star - l4_star) * gap_plus.min(gap_minus);
    if l2_star * l3_star > product_rhs {
        return Err(violation(
            "L2* L3* <= (mu_{m+1} - mu_m - L1* - L4*) min(mu_{m+1} - L1*, -(mu_m + L4*)) / 2",
            l2_star * l3_star,
            product_rhs,
        ));
    }
    let lambda = 2.0 * l2_star * l3_star / (mu_plus - l1_star - mu_minus - l4_star);
    if !(lambda > 0.0) {
        return Err(violation("lambda > 0", lambda, 0.0));
    }
    let alpha = (2.0 * gap_plus).max(2.0 * gap_minus);
    let gamma = (2.0 * gap_plus).min(2.0 * gap_minus);
    let m_const = c.a1 / gap_plus - l2_star * c.b1 / (gap_plus * (mu_minus + l4_star));
    if !(m_const > 0.0) && !(c.a1 == 0.0 && c.b1 == 0.0) {
        return Err(violation("M > 0", m_const, 0.0));
    }
    let ratio = 2.0 * lambda / gamma;
    if ratio >= 1.0 {
        return Err(violation("2 lambda / gamma < 1", ratio, 1.0));
    }
    let ratio_alt = 8.0 * l2_star * l3_star / ((alpha + gamma) * gamma);
    let defect = (ratio - ratio_alt).abs();
    assert!(
        defect <= 1e-12 * ratio.abs().max(1e-300),
        "ratio formulas disagree: {ratio} vs {ratio_alt}"
    );
    let zplus_sq_bound = 2.0 * m_const / (1.0 - ratio);
    let zminus_sq_bound = (l3_star * zplus_sq_bound + c.b1) / -(mu_minus + l4_star);
    Ok(BoundsLedger {
        mu_plus,
        mu_minus,
        l1_star,
        l2_star,
        l3_star,
        l4_star,
        lambda,
        alpha,
        gamma,
        m_const,
        ratio,
        zplus_sq_bound,
        zminus_sq_bound,
    })
}

/// Cutoff radius: large enough that the clamp provably never activates on
/// the solution, with a safety margin over the a-priori bounds.
pub fn choose_cutoff_n(ledger: &BoundsLedger, constants: &ConditionMConstants) -> f64 {
    let floor_term = (constants.a1 / (2.0 * constants.l1)).sqrt();
    let zplus_term = (1.0 + CUTOFF_MARGIN) * ledger.zplus_sq_bound.sqrt();
    let zminus_term = (1.0 + CUTOFF_MARGIN) * ledger.zminus_sq_bound.sqrt();
    floor_term.max(zplus_term).max(zminus_term)
}

/// Deterministic spot check of the declared growth constants on `samples`
/// pseudo-random `(s, x, y)` triples with subspace norms spread over
/// `[0.1, 100]`. A declaration the drift actually violates in that range is
/// reported as the failing inequality.
pub fn spot_check_condition_m(
    spec: &DriftSpec,
    split: &HyperbolicSplitting,
    samples: usize,
    seed: u64,
) -> Result<(), DriftError> {
    let c = spec.condition_m().ok_or(DriftError::MissingConditionM)?;
    let d = split.dim();
    for k in 0..samples {
        let g = k as i64;
        let s = match spec.period() {
            Some(p) => p * uniform_open(seed, 0, g, 0),
            None => 20.0 * (uniform_open(seed, 0, g, 0) - 0.5),
        };
        // Random directions per subspace, log-spaced norms.
        let mut coeffs = DVector::zeros(d);
        for i in 0..d {
            coeffs[i] = standard_normal(seed, 1, g, i);
        }
        let mut x_coeffs = DVector::zeros(d);
        let mut y_coeffs = DVector::zeros(d);
        for i in 0..d {
            if split.is_stable_index(i) {
                x_coeffs[i] = coeffs[i];
            } else {
                y_coeffs[i] = coeffs[i];
            }
        }
        let scale = |v: &mut DVector<f64>, u: f64| {
            let norm = v.norm();
            if norm > 0.0 {
                *v *= 10f64.powf(-1.0 + 3.0 * u) / norm;
            }
        };
        scale(&mut x_coeffs, uniform_open(seed, 2, g, 0));
        scale(&mut y_coeffs, uniform_open(seed, 2, g, 1));
        let x = split.from_eigen(&x_coeffs);
        let y = split.from_eigen(&y_coeffs);
        let u = &x + &y;
        let f = spec.eval(s, &u);
        let x_sq = x_coeffs.norm_squared();
        let y_sq = y_coeffs.norm_squared();
        // Tiny slack so boundary-tight declarations are not rejected for
        // rounding.
        let slack = 1e-9 * (1.0 + x_sq + y_sq);
        let lhs_plus = x.dot(&split.project(Subspace::Stable, &f));
        let rhs_plus = c.l1 * x_sq + c.l2 * y_sq + c.a1;
        if lhs_plus > rhs_plus + slack {
            return Err(DriftError::ConditionMViolation {
                inequality: format!(
                    "(x, P+ F(s, x + y)) <= L1 |x|^2 + L2 |y|^2 + A1 at s = {s}, |x| = {}, |y| = {}",
                    x_sq.sqrt(),
                    y_sq.sqrt()
                ),
                lhs: lhs_plus,
                rhs: rhs_plus,
            });
        }
        let lhs_minus = -y.dot(&split.project(Subspace::Unstable, &f));
        let rhs_minus = c.l3 * x_sq + c.l4 * y_sq + c.b1;
        if lhs_minus > rhs_minus + slack {
            return Err(DriftError::ConditionMViolation {
                inequality: format!(
                    "(y, -P- F(s, x + y)) <= L3 |x|^2 + L4 |y|^2 + B1 at s = {s}, |x| = {}, |y| = {}",
                    x_sq.sqrt(),
                    y_sq.sqrt()
                ),
                lhs: lhs_minus,
                rhs: rhs_minus,
            });
        }
    }
    Ok(())
}
