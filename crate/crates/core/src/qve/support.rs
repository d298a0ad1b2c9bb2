//! Support endpoints by coarse scan plus bisection.
//!
//! A coarse η = 1e-6 scan over a guaranteed superset of the support
//! classifies grid points as inside (smoothed density above a detection
//! threshold) or outside, yielding the interval structure. The outermost
//! edges are then bisected to 1e-8 with the *sharp* predicate "a certified
//! real solution exists at λ" — exact at the true edge, unlike the
//! η-threshold test, whose misclassification band near the edge would bias
//! the result by up to ~1e-6·s^(-3/2).

use super::real::solve_real_inner;
use super::{density::linspace, QveError, SupportInfo, EDGE_REFINE_TOL, SWEEP_BUDGET};
use crate::model::ModelParams;
use nalgebra::DVector;
use num_complex::Complex64;

/// Smoothed density above this marks a scan point as inside the support.
const DETECT_DENSITY: f64 = 1e-3;
/// η for the coarse scan.
const SCAN_ETA: f64 = 1e-6;
/// Number of coarse scan points.
const SCAN_POINTS: usize = 600;
/// Offset right of λ_r at which the edge residual is evaluated.
const EDGE_RESIDUAL_OFFSET: f64 = 1e-6;

/// Options for [`rightmost_edge`].
#[derive(Debug, Clone)]
pub struct EdgeOptions {
    /// Explicit right-edge bisection bracket `(lo, hi)`; `lo` must test
    /// inside/left-of-edge and `hi` outside. When absent the bracket comes
    /// from the coarse scan.
    pub bracket: Option<(f64, f64)>,
    /// Bisection stops at this bracket width.
    pub refine_tol: f64,
}

impl Default for EdgeOptions {
    fn default() -> Self {
        EdgeOptions {
            bracket: None,
            refine_tol: EDGE_REFINE_TOL,
        }
    }
}

/// Locate the support: both outer edges to 1e-8, the interval structure at
/// scan resolution, and the edge residual `|1 − λ₁(D_g Ω D_g)|` just right
/// of λ_r. The rightmost edge always satisfies `λ_r ≤ 1 + 1e-8`.
/// Errors: [`QveError::BracketFailure`] when no bracket can be established,
/// [`QveError::NoConvergence`] from the underlying solves.
pub fn rightmost_edge(m: &ModelParams, opts: &EdgeOptions) -> Result<SupportInfo, QveError> {
    // Scan range: a guaranteed superset of the support. The noise part has
    // operator norm at most 2·max √s_kl in the limit and the diagonal
    // shift is bounded by max_k (Sρ)_k; λ_r ≤ 1 universally, so 1.1 caps
    // the right end.
    let s = m.s();
    let s_max = s.amax();
    let srho_max = (s * m.rho()).amax();
    let scan_lo = -(2.0 * s_max.sqrt() + srho_max) - 0.5;
    let scan_hi = 1.1;

    let grid = linspace(scan_lo, scan_hi, SCAN_POINTS);
    let inside = scan_inside(m, &grid)?;

    let mut intervals: Vec<(f64, f64)> = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, &is_in) in inside.iter().enumerate() {
        match (is_in, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s0)) => {
                intervals.push((grid[s0], grid[i - 1]));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s0) = run_start {
        intervals.push((grid[s0], grid[SCAN_POINTS - 1]));
    }
    if intervals.is_empty() {
        return Err(QveError::BracketFailure {
            lo: scan_lo,
            hi: scan_hi,
            detail: format!(
                "no support detected on a {SCAN_POINTS}-point scan at η = {SCAN_ETA:.0e}"
            ),
        });
    }

    // Right edge: bisect between a point inside the rightmost interval and
    // a point right of everything.
    let (rs, re) = *intervals.last().unwrap();
    let (lo0, hi0) = match opts.bracket {
        Some(b) => b,
        None => (0.5 * (rs + re), scan_hi),
    };
    let right_edge = bisect_edge(m, lo0, hi0, opts.refine_tol, true, opts.bracket.is_none())?;

    // Left edge, mirrored: outside on the left, inside on the right.
    let (ls, le) = *intervals.first().unwrap();
    let left_edge = bisect_edge(m, scan_lo, 0.5 * (ls + le), opts.refine_tol, false, true)?;

    intervals.last_mut().unwrap().1 = right_edge;
    intervals.first_mut().unwrap().0 = left_edge;

    // Edge residual: the stability operator's top eigenvalue reaches 1
    // exactly at the edge; just outside it must sit within O(√offset).
    let probe = solve_real_inner(m, right_edge + EDGE_RESIDUAL_OFFSET, false)?;
    let edge_residual = (1.0 - probe.certificate.top_eig).abs();

    Ok(SupportInfo {
        right_edge,
        left_edge,
        intervals,
        edge_residual,
        eta: SCAN_ETA,
    })
}

/// Warm-swept coarse classification of grid points.
///
/// Sweeping laterally at fixed small η can hand a point just inside an
/// edge a warm start from just outside it — a seed next to the repelling
/// real branch, where the fixed point crawls. Such points are rescued by
/// descending in η at fixed λ instead, which stays on the physical branch
/// the whole way down.
fn scan_inside(m: &ModelParams, grid: &[f64]) -> Result<Vec<bool>, QveError> {
    let schedule = super::density::default_eta_schedule(SCAN_ETA);
    let mut flags = Vec::with_capacity(grid.len());
    let mut warm: Option<DVector<Complex64>> = None;
    for &x in grid {
        let attempt =
            super::complex::solve_complex_budget(m, Complex64::new(x, -SCAN_ETA), warm.as_ref(), SWEEP_BUDGET);
        let sol = match attempt {
            Ok(sol) => sol,
            Err(_) => super::density::descend(m, x, &schedule)?,
        };
        flags.push(sol.g_x.im / std::f64::consts::PI > DETECT_DENSITY);
        warm = Some(sol.g);
    }
    Ok(flags)
}

/// `true` iff a certified real QVE solution exists at λ — the sharp
/// outside-the-support test used for refinement.
fn certified_outside(m: &ModelParams, lambda: f64) -> bool {
    matches!(solve_real_inner(m, lambda, false), Ok(sol) if sol.certificate.accepted)
}

/// Bisection for one edge. `outside_right = true` means the outside region
/// sits at the high end of the bracket (right edge); `false` mirrors it
/// (left edge). `may_widen` permits one bracket-widening retry for
/// scan-derived brackets.
fn bisect_edge(
    m: &ModelParams,
    lo0: f64,
    hi0: f64,
    tol: f64,
    outside_right: bool,
    may_widen: bool,
) -> Result<f64, QveError> {
    let mut lo = lo0;
    let mut hi = hi0;

    let check = |lo: f64, hi: f64| -> (bool, bool) {
        let lo_out = certified_outside(m, lo);
        let hi_out = certified_outside(m, hi);
        // For a valid bracket exactly the end on the "outside" side must
        // pass the predicate.
        if outside_right {
            (!lo_out, hi_out)
        } else {
            (lo_out, !hi_out)
        }
    };

    let (mut lo_ok, mut hi_ok) = check(lo, hi);
    if (!lo_ok || !hi_ok) && may_widen {
        // One widening attempt: push the failing end outward.
        if !lo_ok {
            lo -= (hi0 - lo0).max(0.5);
        }
        if !hi_ok {
            hi += (hi0 - lo0).max(0.5);
        }
        let rechecked = check(lo, hi);
        lo_ok = rechecked.0;
        hi_ok = rechecked.1;
    }
    if !lo_ok || !hi_ok {
        return Err(QveError::BracketFailure {
            lo,
            hi,
            detail: format!(
                "predicate is {} at lo and {} at hi (outside_right = {outside_right})",
                if lo_ok { "valid" } else { "invalid" },
                if hi_ok { "valid" } else { "invalid" },
            ),
        });
    }

    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let mid_outside = certified_outside(m, mid);
        // Keep the invariant: the inside half retains the boundary.
        if mid_outside == outside_right {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // Report the outside end: guarantees λ_r ≤ reported ≤ λ_r + tol for the
    // right edge and symmetric control on the left.
    Ok(if outside_right { hi } else { lo })
}
