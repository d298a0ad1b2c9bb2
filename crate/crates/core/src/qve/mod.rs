//! The quadratic vector equation (QVE) behind the limiting spectral density.
//!
//! For the rescaled observation `Ỹ/√N`, the block Stieltjes transforms
//! `g = (g_1, …, g_K)` of the limiting density satisfy, for `Im z < 0`,
//!
//! ```text
//!     1 = z g_k − g_k (Γ (1 − g))_k ,        k = 1…K,
//! ```
//!
//! with `Γ = S D_ρ`, and `g` is the unique solution with every component in
//! the open upper half-plane (a Herglotz family: the equation is solved in
//! the lower half-plane of `z` so that each `g_k` lands in the upper one).
//! The scalar transform is `g_X = Σ_k ρ_k g_k` and the density on the real
//! line is `ρ_X(x) = lim_{η↓0} Im g_X(x − iη)/π`.
//!
//! The module provides:
//!
//! * [`solve_complex`] / [`stieltjes`] — pointwise solution off the real
//!   axis (warm-startable Newton with a damped fixed-point fallback).
//! * [`density`] — a grid sweep with an η-continuation ladder at the first
//!   point and neighbor warm starts after it.
//! * [`solve_real`] — the real-line solution right of the support, found by
//!   η-continuation plus a final real Newton polish, together with the
//!   *selection certificate* that distinguishes the physical root: `y`
//!   solving `(D_g⁻² − Γ) y = 1` is entrywise positive exactly when the top
//!   eigenvalue of `D_|g| Ω D_|g|` is below 1.
//! * [`g_prime`] — the derivative `g′(λ) = −y` (strictly negative right of
//!   the edge).
//! * [`rightmost_edge`] — support endpoints by bisection on the predicate
//!   "solve_real succeeds with an accepted certificate".
//! * [`secular`] — the outlier function `det(I − D_g Ω)`.
//!
//! Every tolerance is a named constant here; nothing downstream hardcodes a
//! number.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

mod complex;
mod density;
mod real;
mod support;

pub use complex::{solve_complex, stieltjes};
pub use density::{default_eta_schedule, default_grid, density, linspace};
pub use real::{g_prime, secular, selection_certificate, solve_real};
pub use support::{rightmost_edge, EdgeOptions};

/// Max-norm residual `max_k |g_k (z + (Γ(1−g))_k) − 1|` accepted for any
/// converged QVE solution.
pub const QVE_RESIDUAL_TOL: f64 = 1e-12;
/// Target residual for the final real-line Newton polish.
pub const NEWTON_TOL: f64 = 1e-13;
/// Iteration cap for the real-line Newton polish.
pub const NEWTON_MAX_ITERS: usize = 50;
/// Iteration cap for a single complex-plane solve (Newton + fixed-point).
pub const COMPLEX_MAX_ITERS: usize = 50_000;
/// Geometric η-continuation ladder (imaginary offsets |Im z|), largest
/// first. Real-line solves run the whole ladder; grid sweeps truncate it at
/// the requested η.
pub const ETA_LADDER: [f64; 15] = [
    1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6, 3e-7, 1e-7, 3e-8, 1e-8, 3e-9, 1e-9,
];
/// η at which the inside-support test is made during real-line solves.
pub const INSIDE_SUPPORT_ETA: f64 = 1e-7;
/// `Im g_X(λ − i·INSIDE_SUPPORT_ETA)` above this means λ is inside the
/// support.
pub const INSIDE_SUPPORT_IM_TOL: f64 = 1e-4;
/// Certificates with `|topEig − 1|` below this are flagged as boundary
/// cases (still accepted).
pub const CERT_BOUNDARY_TOL: f64 = 1e-9;
/// Bisection width at which support edges are accepted.
pub const EDGE_REFINE_TOL: f64 = 1e-8;
/// Default grid size for [`default_grid`].
pub const DENSITY_GRID_POINTS: usize = 2000;
/// Default smallest η for density sweeps.
pub const DENSITY_ETA_DEFAULT: f64 = 1e-7;
/// Initial damping factor of the fixed-point fallback.
pub const FP_ALPHA0: f64 = 0.5;
/// Smallest damping factor the fixed point may shrink to.
pub const FP_ALPHA_MIN: f64 = 1e-3;
/// Iteration budget for one point of a lateral warm sweep before the
/// sweep gives up and rescues the point by η-descent (warm solves settle
/// in a handful of iterations; only edge crossings trip this).
pub(crate) const SWEEP_BUDGET: usize = 2000;

#[derive(Debug, Clone, Error)]
pub enum QveError {
    #[error(
        "{op}: no convergence at z = {z_re}{z_im:+}i after {iterations} iterations \
         (best residual {residual:.3e})"
    )]
    NoConvergence {
        op: &'static str,
        z_re: f64,
        z_im: f64,
        iterations: usize,
        residual: f64,
        /// Best iterate seen, for diagnostics.
        best: Vec<Complex64>,
    },
    #[error(
        "solve_real: λ = {lambda} lies inside the spectral support \
         (Im g_X(λ − i·{eta:.0e}) = {im_gx:.3e} > {threshold:.0e})"
    )]
    InsideSupport {
        lambda: f64,
        eta: f64,
        im_gx: f64,
        threshold: f64,
    },
    #[error(
        "solve_real: λ = {lambda} produced a non-physical root \
         (certificate top eigenvalue {top_eig} ≥ 1)"
    )]
    CertificateRejected { lambda: f64, top_eig: f64 },
    #[error(
        "selection_certificate: the system (D_g⁻² − Γ) y = 1 is singular \
         (top eigenvalue {top_eig} at the boundary)"
    )]
    SingularSystem { top_eig: f64 },
    #[error("g_prime: the stability operator is singular at λ = {lambda} (edge or inside support)")]
    SingularJacobian { lambda: f64 },
    #[error(
        "rightmost_edge: bisection bracket [{lo}, {hi}] does not straddle the edge \
         ({detail})"
    )]
    BracketFailure { lo: f64, hi: f64, detail: String },
}

/// One converged QVE solution off the real axis.
#[derive(Debug, Clone)]
pub struct QveSolution {
    /// Query point (`Im z < 0`).
    pub z: Complex64,
    /// Block Stieltjes transforms, each with `Im g_k > 0`.
    pub g: DVector<Complex64>,
    /// Scalar transform `Σ_k ρ_k g_k`.
    pub g_x: Complex64,
    /// Max-norm residual of the defining equation.
    pub residual: f64,
    /// Total iterations spent (Newton plus fixed-point).
    pub iterations: usize,
    /// `|Im z|` of the query.
    pub eta: f64,
}

/// Root-selection certificate for a real-line solution.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SelectionCertificate {
    /// Solution of `(D_g⁻² − Γ) y = 1`; entrywise positive iff physical.
    pub y: Vec<f64>,
    /// Top eigenvalue of `D_|g| Ω D_|g|`; below 1 iff physical.
    pub top_eig: f64,
    /// The two equivalent tests agree and pass (or the boundary case).
    pub accepted: bool,
    /// `|top_eig − 1| ≤ 1e-9`: λ is numerically at the support edge.
    pub boundary: bool,
}

/// Real-line QVE solution right of the support.
#[derive(Debug, Clone)]
pub struct RealLineSolution {
    pub lambda: f64,
    /// Real block transforms (entrywise in `(0, 1)` between the edge and
    /// +∞ whenever the effective SNR exceeds 1 at λ = 1, per the theory).
    pub g: DVector<f64>,
    pub certificate: SelectionCertificate,
    /// Max-norm residual of the real QVE.
    pub residual: f64,
    /// Iterations spent across η-continuation and the Newton polish.
    pub iterations: usize,
}

/// Spectral density sampled on a grid.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DensityCurve {
    /// Strictly increasing abscissas.
    pub grid: Vec<f64>,
    /// Total density `Im g_X/π` (non-negative up to −1e-10 noise).
    pub density: Vec<f64>,
    /// Per-block densities `Im g_k/π`, outer index `k`.
    pub component_densities: Vec<Vec<f64>>,
    /// Smallest η used (the curve is the η-smoothed density at this
    /// offset).
    pub eta: f64,
    /// Grid indices where the solver failed (density stored as NaN);
    /// empty in practice.
    pub failed: Vec<usize>,
    /// Worst converged residual across the grid.
    pub max_residual: f64,
    /// Smallest `Im g_k` seen across grid and blocks (Herglotz check:
    /// must be positive).
    pub min_im_component: f64,
}

impl DensityCurve {
    /// Trapezoid mass of the curve (NaN points skipped).
    pub fn mass(&self) -> f64 {
        let mut m = 0.0;
        for (x, d) in self.grid.windows(2).zip(self.density.windows(2)) {
            if d[0].is_finite() && d[1].is_finite() {
                m += 0.5 * (d[0] + d[1]) * (x[1] - x[0]);
            }
        }
        m
    }
}

/// Support endpoints and diagnostics.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SupportInfo {
    /// Rightmost support edge λ_r (≤ 1 + 1e-8 always).
    pub right_edge: f64,
    /// Leftmost support edge λ_l.
    pub left_edge: f64,
    /// Detected support intervals, left to right. Outer endpoints are
    /// bisection-refined to 1e-8; interior gap boundaries are reported at
    /// scan resolution.
    pub intervals: Vec<(f64, f64)>,
    /// `|1 − λ₁(D_g Ω D_g sym)|` evaluated just right of λ_r: the edge is
    /// where the stability operator hits 1.
    pub edge_residual: f64,
    /// η used for the coarse inside/outside scan.
    pub eta: f64,
}

/// Shared residual of the complex QVE: `max_k |g_k(z + (Γ(1−g))_k) − 1|`.
pub(crate) fn residual_complex(
    gamma: &DMatrix<f64>,
    z: Complex64,
    g: &DVector<Complex64>,
) -> f64 {
    let k = g.len();
    let one = Complex64::new(1.0, 0.0);
    let mut worst = 0.0f64;
    for i in 0..k {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..k {
            acc += gamma[(i, j)] * (one - g[j]);
        }
        let f = g[i] * (z + acc) - one;
        worst = worst.max(f.norm());
    }
    worst
}

/// Residual of the real-line QVE: `max_k |g_k(λ + (Γ(1−g))_k) − 1|`.
pub(crate) fn residual_real(gamma: &DMatrix<f64>, lambda: f64, g: &DVector<f64>) -> f64 {
    let k = g.len();
    let mut worst = 0.0f64;
    for i in 0..k {
        let mut acc = 0.0;
        for j in 0..k {
            acc += gamma[(i, j)] * (1.0 - g[j]);
        }
        worst = worst.max((g[i] * (lambda + acc) - 1.0).abs());
    }
    worst
}
