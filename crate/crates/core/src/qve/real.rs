//! Real-line QVE solutions, the root-selection certificate, and the
//! derivative/secular functions built on them.
//!
//! Right of the support the QVE has a real solution, but it is not the only
//! real root — spurious branches exist and finite-η continuation alone
//! cannot certify which root it landed on. The *selection certificate*
//! settles it: with `F = D_|g| Ω D_|g|`, the root is physical iff
//! `λ₁(F) < 1`, which happens iff `y` solving `(D_g⁻² − Γ) y = 1` is
//! entrywise positive. The same `y` is (minus) the derivative of the
//! solution: `g′(λ) = −y ≺ 0` strictly right of the edge.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{
    residual_real, solve_complex, QveError, RealLineSolution, SelectionCertificate,
    CERT_BOUNDARY_TOL, ETA_LADDER, INSIDE_SUPPORT_ETA, INSIDE_SUPPORT_IM_TOL, NEWTON_MAX_ITERS,
    NEWTON_TOL, QVE_RESIDUAL_TOL,
};
use crate::linalg::{self, LinalgError};
use crate::model::ModelParams;

/// Solve the real-line QVE at `λ` outside the spectral support.
///
/// η-continuation descends the full ladder at fixed `Re z = λ`; at
/// η = 1e-7 the inside-support test fires ([`QveError::InsideSupport`] when
/// `Im g_X > 1e-4`). A final Newton polish on the real system pushes the
/// residual to 1e-13 (falling back to the η-continued value if Newton
/// leaves the positive orthant), and the selection certificate is attached
/// — [`QveError::CertificateRejected`] if it does not accept.
pub fn solve_real(m: &ModelParams, lambda: f64) -> Result<RealLineSolution, QveError> {
    solve_real_inner(m, lambda, true)
}

/// The same solve with the η-based inside-support test disabled: near the
/// edge (within ~1e-6·s^(-3/2)) that test misfires on points that are
/// genuinely outside, so edge bisection uses existence of a certified real
/// root as its predicate instead. Inside the support no real root passes
/// the certificate, which keeps the predicate exact.
pub(super) fn solve_real_inner(
    m: &ModelParams,
    lambda: f64,
    enforce_inside_test: bool,
) -> Result<RealLineSolution, QveError> {
    let gamma = m.gamma().entries.clone();

    let mut warm: Option<DVector<Complex64>> = None;
    let mut iterations = 0usize;
    for &eta in ETA_LADDER.iter() {
        let z = Complex64::new(lambda, -eta);
        let sol = solve_complex(m, z, warm.as_ref())?;
        iterations += sol.iterations;
        if enforce_inside_test && eta == INSIDE_SUPPORT_ETA && sol.g_x.im > INSIDE_SUPPORT_IM_TOL {
            return Err(QveError::InsideSupport {
                lambda,
                eta,
                im_gx: sol.g_x.im,
                threshold: INSIDE_SUPPORT_IM_TOL,
            });
        }
        warm = Some(sol.g);
    }

    let continued: DVector<f64> = warm
        .expect("ladder is non-empty")
        .map(|c| c.re);

    let (g, newton_iters) = match newton_real(&gamma, lambda, &continued) {
        Some((polished, its)) if polished.iter().all(|&v| v > 0.0) || !continued.iter().all(|&v| v > 0.0) => {
            (polished, its)
        }
        // Newton left the positive orthant although the continued value was
        // in it (λ right of the edge): keep the continued value.
        Some((_, its)) => (continued, its),
        None => (continued, NEWTON_MAX_ITERS),
    };
    iterations += newton_iters;

    let residual = residual_real(&gamma, lambda, &g);
    if residual > QVE_RESIDUAL_TOL {
        return Err(QveError::NoConvergence {
            op: "solve_real",
            z_re: lambda,
            z_im: 0.0,
            iterations,
            residual,
            best: g.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        });
    }

    let certificate = selection_certificate(m, &g)?;
    if !certificate.accepted {
        return Err(QveError::CertificateRejected {
            lambda,
            top_eig: certificate.top_eig,
        });
    }

    Ok(RealLineSolution {
        lambda,
        g,
        certificate,
        residual,
        iterations,
    })
}

/// Newton on the real system `F_k(g) = g_k (λ + (Γ(1−g))_k) − 1` with
/// Jacobian `J = Diag(λ + Γ(1−g)) − D_g Γ`, simple backtracking, target
/// residual 1e-13, at most 50 iterations. Returns the polished iterate and
/// the iteration count, or `None` when no progress is possible.
fn newton_real(
    gamma: &DMatrix<f64>,
    lambda: f64,
    start: &DVector<f64>,
) -> Option<(DVector<f64>, usize)> {
    let k = start.len();
    let mut g = start.clone();
    let mut r = residual_real(gamma, lambda, &g);
    let mut its = 0usize;

    while its < NEWTON_MAX_ITERS && r > NEWTON_TOL {
        its += 1;
        let mut f = DVector::<f64>::zeros(k);
        let mut jac = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            let mut acc = 0.0;
            for j in 0..k {
                acc += gamma[(i, j)] * (1.0 - g[j]);
            }
            let d = lambda + acc;
            f[i] = g[i] * d - 1.0;
            for j in 0..k {
                jac[(i, j)] = -g[i] * gamma[(i, j)];
            }
            jac[(i, i)] += d;
        }
        let step = jac.lu().solve(&(-f))?;

        let mut advanced = false;
        let mut t = 1.0;
        for _ in 0..8 {
            let cand = &g + &step * t;
            let cr = residual_real(gamma, lambda, &cand);
            if cr < r && cand.iter().all(|v| v.is_finite()) {
                g = cand;
                r = cr;
                advanced = true;
                break;
            }
            t *= 0.5;
        }
        if !advanced {
            return None;
        }
    }
    if r <= NEWTON_TOL.max(QVE_RESIDUAL_TOL * 0.5) {
        Some((g, its))
    } else {
        None
    }
}

/// Root-selection certificate for a real candidate solution `g`.
///
/// Computes `topEig = λ₁(D_|g| Ω D_|g|)` and solves `(D_g⁻² − Γ) y = 1`;
/// the root is accepted iff `topEig < 1` (equivalently `y ≻ 0`), with
/// `|topEig − 1| ≤ 1e-9` flagged as a boundary case and still accepted.
/// Errors: [`QveError::SingularSystem`] when the linear system degenerates
/// (the operator has an eigenvalue at exactly 1).
pub fn selection_certificate(
    m: &ModelParams,
    g: &DVector<f64>,
) -> Result<SelectionCertificate, QveError> {
    let k = m.k();
    assert_eq!(g.len(), k, "certificate vector length must match K");
    let omega = m.omega().entries;
    let b = DMatrix::from_fn(k, k, |i, j| g[i].abs() * omega[(i, j)] * g[j].abs());
    let top_eig = linalg::sym_eig(&b)
        .expect("certificate operator is finite and square")
        .values[0];
    let boundary = (top_eig - 1.0).abs() <= CERT_BOUNDARY_TOL;

    let mut a = -m.gamma().entries;
    for i in 0..k {
        if g[i] == 0.0 {
            return Err(QveError::SingularSystem { top_eig });
        }
        a[(i, i)] += 1.0 / (g[i] * g[i]);
    }
    let y = match linalg::solve_linear(&a, &DVector::from_element(k, 1.0)) {
        Ok(y) => y,
        Err(LinalgError::Singular(_)) => return Err(QveError::SingularSystem { top_eig }),
        Err(e) => panic!("certificate system is finite by construction: {e}"),
    };

    let accepted = top_eig < 1.0 || boundary;
    Ok(SelectionCertificate {
        y: y.iter().copied().collect(),
        top_eig,
        accepted,
        boundary,
    })
}

/// Derivative of the real-line solution: `g′(λ) = −y` with
/// `(D_g⁻² − Γ) y = 1`, strictly negative right of the edge. Errors:
/// [`QveError::SingularJacobian`] at the edge (boundary certificate) or for
/// rejected roots.
pub fn g_prime(m: &ModelParams, sol: &RealLineSolution) -> Result<DVector<f64>, QveError> {
    if !sol.certificate.accepted || sol.certificate.boundary {
        return Err(QveError::SingularJacobian { lambda: sol.lambda });
    }
    let k = m.k();
    let mut a = -m.gamma().entries;
    for i in 0..k {
        a[(i, i)] += 1.0 / (sol.g[i] * sol.g[i]);
    }
    match linalg::solve_linear(&a, &DVector::from_element(k, 1.0)) {
        Ok(y) => Ok(-y),
        Err(_) => Err(QveError::SingularJacobian { lambda: sol.lambda }),
    }
}

/// Outlier (secular) function `det(I − D_g Ω)` at a real λ outside the
/// support: zero exactly where an outlier eigenvalue sits, which in the
/// supercritical phase happens at λ = 1.
pub fn secular(m: &ModelParams, lambda: f64) -> Result<f64, QveError> {
    let sol = solve_real(m, lambda)?;
    let k = m.k();
    let omega = m.omega().entries;
    let mat = DMatrix::from_fn(k, k, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - sol.g[i] * omega[(i, j)]
    });
    Ok(mat.determinant())
}
