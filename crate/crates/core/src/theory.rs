//! The detection phase diagram and outlier/overlap predictions.
//!
//! With `snr = λ₁(Ω)`:
//!
//! * **Subcritical** (`snr < 1`): the spectrum of `Ỹ/√N` converges to the
//!   bulk alone; no outlier, no alignment. `g(1) = 1_K`.
//! * **Critical** (`|snr − 1| ≤ 1e-9`): the edge touches 1; predictions
//!   report edge = 1 and zero overlap without attempting the degenerate
//!   continuation.
//! * **Supercritical** (`snr > 1`): the top eigenvalue detaches and sticks
//!   at exactly 1 in the limit, and the top eigenvector develops a
//!   deterministic per-block overlap with the signal:
//!
//!   ```text
//!       |μ_k| = C^{-1/2} √ρ_k (1 − g_k(1)) ,
//!       C = ⟨1 − g(1), Γᵀ D_{ρ ⊙ y} Γ (1 − g(1))⟩ ,
//!   ```
//!
//!   where `y = −g′(1) ≻ 0`. The unnormalized spike eigenvector data are
//!   `vRight = D_√ρ (1 − g(1))` and `vLeft = Ω vRight`, which satisfy
//!   `D_{g(1)} Ω · vRight = vRight` and its transpose — the rank-one
//!   residue of the resolvent at the outlier. An equivalent route to the
//!   normalization is `C = −φ₁′(1)·⟨vLeft, vRight⟩`, with `φ₁(λ)` the top
//!   eigenvalue of `D_√g Ω D_√g`; both are computed and cross-checked.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::model::ModelParams;
use crate::qve::{self, EdgeOptions, QveError, RealLineSolution};

/// |snr − 1| at or below this is the critical phase.
pub const PHASE_TOL: f64 = 1e-9;
/// Residual allowed on the spike eigenvector equations.
pub const SPIKE_RESIDUAL_TOL: f64 = 1e-9;
/// Step for the φ₁ finite difference.
pub const PHI1_FD_STEP: f64 = 1e-5;
/// Subcritical `g(1)` must equal `1_K` within this (cross-check).
pub const G_AT_ONE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Subcritical,
    Critical,
    Supercritical,
}

#[derive(Debug, Clone, Error)]
pub enum TheoryError {
    #[error("{op}: the model is critical (λ₁(Ω) = 1 within {PHASE_TOL:.0e}); {detail}")]
    CriticalPhase { op: &'static str, detail: &'static str },
    #[error("{op}: requires the supercritical phase, but λ₁(Ω) = {snr} is {phase:?}")]
    NotSupercritical {
        op: &'static str,
        snr: f64,
        phase: Phase,
    },
    #[error(
        "overlap_constant: y = −g′(1) has a non-positive component ({y:?}); \
         the solver landed on a non-physical branch"
    )]
    SignAnomaly { y: Vec<f64> },
    #[error("theory: {0}")]
    Qve(#[from] QveError),
    #[error("theory: {0}")]
    Linalg(#[from] LinalgError),
    #[error("{op}: internal consistency violated: {detail}")]
    Inconsistent { op: &'static str, detail: String },
}

/// Eigensystem of `D_g Ω` (right/left eigenvectors via the symmetric
/// similarity `D_√g Ω D_√g`), for real `g ≻ 0`.
#[derive(Debug, Clone)]
pub struct SpectralDecomp {
    /// Eigenvalues `φ_1 ≥ … ≥ φ_K` of `D_g Ω`.
    pub phi: Vec<f64>,
    /// Right eigenvectors, column `i` for `φ_i`.
    pub w_right: DMatrix<f64>,
    /// Left eigenvectors, column `i` for `φ_i`, scaled so
    /// `⟨w_left_i, w_right_i⟩ = 1`.
    pub w_left: DMatrix<f64>,
}

/// Both routes to `φ₁′(1)`; they must agree to 1e-6 relative.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Phi1Derivative {
    /// Central finite difference of `φ₁(λ)` at λ = 1 with step 1e-5.
    pub finite_diff: f64,
    /// First-order perturbation value `⟨w_L, D_{g′(1)} Ω w_R⟩ / ⟨w_L, w_R⟩`.
    pub closed_form: f64,
}

/// Solver bookkeeping carried in the prediction JSON.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PredictionMeta {
    /// Residual of the real-line solve at λ = 1 (absent in the critical
    /// phase, where no solve is attempted).
    pub g_residual: Option<f64>,
    /// Iterations of that solve.
    pub g_iterations: Option<usize>,
    /// Stability-operator residual at the support edge.
    pub edge_residual: Option<f64>,
    /// `φ₁(1)` in the supercritical phase (must be 1 to 1e-9).
    pub phi_at_one: Option<f64>,
}

/// Complete spectral prediction for one model.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TheoryPrediction {
    pub phase: Phase,
    /// Effective SNR `λ₁(Ω)`.
    pub snr: f64,
    /// Limit of the top eigenvalue of `Ỹ/√N`: 1 in the supercritical
    /// phase, the right support edge otherwise.
    pub top_eig_limit: f64,
    /// Rightmost support edge λ_r (exactly 1 at criticality).
    pub right_edge: f64,
    /// `g(1)` (equals `1_K` at and below criticality).
    pub g_at_one: Vec<f64>,
    /// Overlap normalization constant (supercritical only).
    pub c: Option<f64>,
    /// Predicted |⟨x_k/√N, u₁ restricted to block k⟩| per block — zeros at
    /// and below criticality.
    pub overlap_abs: Vec<f64>,
    /// Global overlap `⟨μ, √ρ⟩ = |⟨x, u₁⟩|/√N` in the limit.
    pub overlap_global: f64,
    /// Spike right-eigenvector data `D_√ρ(1 − g(1))` (supercritical only).
    pub v_right: Option<Vec<f64>>,
    /// Spike left-eigenvector data `Ω vRight` (supercritical only).
    pub v_left: Option<Vec<f64>>,
    /// `φ₁′(1)` finite-difference value (supercritical only).
    pub phi1prime: Option<f64>,
    /// Outlier (secular) function at λ = 1 — a diagnostic that must vanish
    /// in the supercritical phase.
    pub secular_at_one: Option<f64>,
    pub meta: PredictionMeta,
}

/// Phase classification by the effective SNR.
pub fn phase(m: &ModelParams) -> Phase {
    let snr = m.snr();
    if (snr - 1.0).abs() <= PHASE_TOL {
        Phase::Critical
    } else if snr < 1.0 {
        Phase::Subcritical
    } else {
        Phase::Supercritical
    }
}

/// `g(1)`: the real-line solution at λ = 1.
///
/// Subcritical models return exactly `1_K` after cross-checking the solver
/// against it to 1e-8; supercritical models return the solved vector, which
/// must lie strictly inside `(0, 1)^K`. Errors: [`TheoryError::CriticalPhase`]
/// (no continuation is attempted at the degenerate point).
pub fn g_at_one(m: &ModelParams) -> Result<DVector<f64>, TheoryError> {
    g_at_one_with(m).map(|(g, _)| g)
}

/// As [`g_at_one`] but returning the underlying real-line solution for
/// callers that need the certificate (absent for the subcritical exact
/// value).
fn g_at_one_with(m: &ModelParams) -> Result<(DVector<f64>, Option<RealLineSolution>), TheoryError> {
    match phase(m) {
        Phase::Critical => Err(TheoryError::CriticalPhase {
            op: "g_at_one",
            detail: "g(1) = 1_K is the degenerate boundary value; no continuation attempted",
        }),
        Phase::Subcritical => {
            let sol = qve::solve_real(m, 1.0)?;
            let dev = sol
                .g
                .iter()
                .map(|&v| (v - 1.0).abs())
                .fold(0.0f64, f64::max);
            if dev > G_AT_ONE_TOL {
                return Err(TheoryError::Inconsistent {
                    op: "g_at_one",
                    detail: format!(
                        "subcritical g(1) deviates from 1_K by {dev:.3e} (> {G_AT_ONE_TOL:.0e})"
                    ),
                });
            }
            Ok((DVector::from_element(m.k(), 1.0), Some(sol)))
        }
        Phase::Supercritical => {
            let sol = qve::solve_real(m, 1.0)?;
            if sol.g.iter().any(|&v| v <= 0.0 || v >= 1.0) {
                return Err(TheoryError::Inconsistent {
                    op: "g_at_one",
                    detail: format!(
                        "supercritical g(1) must lie in (0,1)^K, got {:?}",
                        sol.g.as_slice()
                    ),
                });
            }
            Ok((sol.g.clone(), Some(sol)))
        }
    }
}

/// Spike eigenvector data `(vRight, vLeft)` for a supercritical model:
/// `vRight = D_√ρ (1 − g(1))`, `vLeft = Ω vRight`, verified to satisfy
/// `D_g Ω vRight = vRight` and `(D_g Ω)ᵀ vLeft = vLeft` to 1e-9.
pub fn spike_eigvectors(m: &ModelParams) -> Result<(DVector<f64>, DVector<f64>), TheoryError> {
    require_supercritical(m, "spike_eigvectors")?;
    let g1 = g_at_one(m)?;
    let (v_right, v_left) = spike_from_g(m, &g1);

    let omega = m.omega().entries;
    let k = m.k();
    let dg_omega = DMatrix::from_fn(k, k, |i, j| g1[i] * omega[(i, j)]);
    let right_res = (&dg_omega * &v_right - &v_right).norm();
    let left_res = (dg_omega.transpose() * &v_left - &v_left).norm();
    if right_res > SPIKE_RESIDUAL_TOL || left_res > SPIKE_RESIDUAL_TOL {
        return Err(TheoryError::Inconsistent {
            op: "spike_eigvectors",
            detail: format!(
                "eigen-residuals {right_res:.3e} / {left_res:.3e} exceed {SPIKE_RESIDUAL_TOL:.0e}"
            ),
        });
    }
    Ok((v_right, v_left))
}

fn spike_from_g(m: &ModelParams, g1: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let k = m.k();
    let v_right = DVector::from_fn(k, |i, _| m.rho()[i].sqrt() * (1.0 - g1[i]));
    let v_left = m.omega().entries * &v_right;
    (v_right, v_left)
}

/// Overlap normalization `C = ⟨1 − g(1), Γᵀ D_{ρ⊙y} Γ (1 − g(1))⟩` with
/// `y = −g′(1)`. Errors: [`TheoryError::SignAnomaly`] if `y` is not
/// entrywise positive, [`TheoryError::NotSupercritical`].
pub fn overlap_constant(m: &ModelParams) -> Result<f64, TheoryError> {
    require_supercritical(m, "overlap_constant")?;
    let (g1, sol) = g_at_one_with(m)?;
    let sol = sol.expect("supercritical g(1) always carries a solution");
    overlap_constant_from(m, &g1, &sol)
}

fn overlap_constant_from(
    m: &ModelParams,
    g1: &DVector<f64>,
    sol: &RealLineSolution,
) -> Result<f64, TheoryError> {
    let y = -qve::g_prime(m, sol)?;
    if y.iter().any(|&v| v <= 0.0) {
        return Err(TheoryError::SignAnomaly {
            y: y.iter().copied().collect(),
        });
    }
    let k = m.k();
    let gamma = m.gamma().entries;
    let u = DVector::from_fn(k, |i, _| 1.0 - g1[i]);
    let gu = &gamma * &u;
    let mut c = 0.0;
    for i in 0..k {
        c += gu[i] * m.rho()[i] * y[i] * gu[i];
    }
    if c <= 0.0 {
        return Err(TheoryError::Inconsistent {
            op: "overlap_constant",
            detail: format!("C = {c} must be strictly positive"),
        });
    }
    Ok(c)
}

/// Eigensystem of `D_g Ω` for `g ≻ 0` through the symmetric similarity
/// `B = D_√g Ω D_√g`: right eigenvectors `D_√g W`, left `D_√g⁻¹ W`.
pub fn spectral_decomp(m: &ModelParams, g: &DVector<f64>) -> Result<SpectralDecomp, TheoryError> {
    let k = m.k();
    assert_eq!(g.len(), k, "g must have K components");
    assert!(
        g.iter().all(|&v| v > 0.0),
        "spectral_decomp requires g ≻ 0 (the similarity uses √g)"
    );
    let omega = m.omega().entries;
    let sqrt_g = g.map(f64::sqrt);
    let b = DMatrix::from_fn(k, k, |i, j| sqrt_g[i] * omega[(i, j)] * sqrt_g[j]);
    let eig = linalg::sym_eig(&b)?;

    let mut w_right = DMatrix::<f64>::zeros(k, k);
    let mut w_left = DMatrix::<f64>::zeros(k, k);
    for col in 0..k {
        let w = eig.vectors.column(col);
        for i in 0..k {
            w_right[(i, col)] = sqrt_g[i] * w[i];
            w_left[(i, col)] = w[i] / sqrt_g[i];
        }
        // ⟨w_L, w_R⟩ = ⟨w, w⟩ = 1 automatically; nothing to rescale.
    }
    Ok(SpectralDecomp {
        phi: eig.values,
        w_right,
        w_left,
    })
}

/// `φ₁′(1)` two ways: central finite difference (step 1e-5) of
/// `λ ↦ λ₁(D_√g(λ) Ω D_√g(λ))`, and the perturbation closed form
/// `⟨w_L, D_{g′(1)} Ω w_R⟩ / ⟨w_L, w_R⟩`. Both are strictly negative and
/// agree to 1e-6 relative for supercritical models.
pub fn phi1_derivative(m: &ModelParams) -> Result<Phi1Derivative, TheoryError> {
    require_supercritical(m, "phi1_derivative")?;
    let h = PHI1_FD_STEP;

    let phi_at = |lambda: f64| -> Result<f64, TheoryError> {
        let sol = qve::solve_real(m, lambda)?;
        Ok(spectral_decomp(m, &sol.g)?.phi[0])
    };
    let finite_diff = (phi_at(1.0 + h)? - phi_at(1.0 - h)?) / (2.0 * h);

    let sol = qve::solve_real(m, 1.0)?;
    let gp = qve::g_prime(m, &sol)?;
    let decomp = spectral_decomp(m, &sol.g)?;
    let k = m.k();
    let omega = m.omega().entries;
    let w_r = decomp.w_right.column(0).into_owned();
    let w_l = decomp.w_left.column(0).into_owned();
    let mut perturbed = DVector::<f64>::zeros(k);
    let om_wr = &omega * &w_r;
    for i in 0..k {
        perturbed[i] = gp[i] * om_wr[i];
    }
    let closed_form = w_l.dot(&perturbed) / w_l.dot(&w_r);

    if finite_diff >= 0.0 || closed_form >= 0.0 {
        return Err(TheoryError::Inconsistent {
            op: "phi1_derivative",
            detail: format!(
                "φ₁′(1) must be negative: finite difference {finite_diff}, closed form {closed_form}"
            ),
        });
    }
    Ok(Phi1Derivative {
        finite_diff,
        closed_form,
    })
}

/// Assemble the complete prediction for a model.
///
/// Critical models report edge = 1, `g(1) = 1_K`, zero overlap, and skip
/// every continuation; subcritical models carry the computed edge; the
/// supercritical branch adds C, the per-block overlaps, the spike vectors,
/// `φ₁′(1)`, and the secular diagnostic at λ = 1.
pub fn predict(m: &ModelParams) -> Result<TheoryPrediction, TheoryError> {
    let snr = m.snr();
    let ph = phase(m);
    let k = m.k();

    match ph {
        Phase::Critical => Ok(TheoryPrediction {
            phase: ph,
            snr,
            top_eig_limit: 1.0,
            right_edge: 1.0,
            g_at_one: vec![1.0; k],
            c: None,
            overlap_abs: vec![0.0; k],
            overlap_global: 0.0,
            v_right: None,
            v_left: None,
            phi1prime: None,
            secular_at_one: None,
            meta: PredictionMeta {
                g_residual: None,
                g_iterations: None,
                edge_residual: None,
                phi_at_one: None,
            },
        }),
        Phase::Subcritical => {
            let support = qve::rightmost_edge(m, &EdgeOptions::default())?;
            let (g1, sol) = g_at_one_with(m)?;
            let sol = sol.expect("subcritical cross-check solves at λ = 1");
            Ok(TheoryPrediction {
                phase: ph,
                snr,
                top_eig_limit: support.right_edge,
                right_edge: support.right_edge,
                g_at_one: g1.iter().copied().collect(),
                c: None,
                overlap_abs: vec![0.0; k],
                overlap_global: 0.0,
                v_right: None,
                v_left: None,
                phi1prime: None,
                secular_at_one: None,
                meta: PredictionMeta {
                    g_residual: Some(sol.residual),
                    g_iterations: Some(sol.iterations),
                    edge_residual: Some(support.edge_residual),
                    phi_at_one: None,
                },
            })
        }
        Phase::Supercritical => {
            let support = qve::rightmost_edge(m, &EdgeOptions::default())?;
            let (g1, sol) = g_at_one_with(m)?;
            let sol = sol.expect("supercritical g(1) always carries a solution");
            let c = overlap_constant_from(m, &g1, &sol)?;
            let (v_right, v_left) = spike_eigvectors(m)?;
            let phi1 = phi1_derivative(m)?;
            let secular_at_one = qve::secular(m, 1.0)?;

            // φ₁(1) = 1 is the defining property of the outlier point.
            let phi_at_one = spectral_decomp(m, &g1)?.phi[0];
            if (phi_at_one - 1.0).abs() > 1e-9 {
                return Err(TheoryError::Inconsistent {
                    op: "predict",
                    detail: format!("φ₁(1) = {phi_at_one} must equal 1 to 1e-9"),
                });
            }

            let inv_sqrt_c = 1.0 / c.sqrt();
            let overlap_abs: Vec<f64> = (0..k).map(|i| inv_sqrt_c * v_right[i]).collect();
            let overlap_global: f64 = (0..k)
                .map(|i| overlap_abs[i] * m.rho()[i].sqrt())
                .sum();

            Ok(TheoryPrediction {
                phase: ph,
                snr,
                top_eig_limit: 1.0,
                right_edge: support.right_edge,
                g_at_one: g1.iter().copied().collect(),
                c: Some(c),
                overlap_abs,
                overlap_global,
                v_right: Some(v_right.iter().copied().collect()),
                v_left: Some(v_left.iter().copied().collect()),
                phi1prime: Some(phi1.finite_diff),
                secular_at_one: Some(secular_at_one),
                meta: PredictionMeta {
                    g_residual: Some(sol.residual),
                    g_iterations: Some(sol.iterations),
                    edge_residual: Some(support.edge_residual),
                    phi_at_one: Some(phi_at_one),
                },
            })
        }
    }
}

fn require_supercritical(m: &ModelParams, op: &'static str) -> Result<(), TheoryError> {
    let ph = phase(m);
    if ph != Phase::Supercritical {
        return Err(TheoryError::NotSupercritical {
            op,
            snr: m.snr(),
            phase: ph,
        });
    }
    Ok(())
}
