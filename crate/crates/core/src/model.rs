//! Validated model parameters and the derived K×K structure matrices.
//!
//! A model is a block count `K`, block fractions `ρ ∈ (0,1]^K` summing to 1,
//! a symmetric entrywise-positive inverse-variance matrix `S` (noise on a
//! cell `(k,l)` has variance `1/(N s_kl)`), and a signal prior. Two derived
//! matrices drive all theory:
//!
//! * `Ω = D_√ρ S D_√ρ` — symmetric, entrywise positive; its top eigenvalue
//!   is the effective SNR of the rescaled observation and its Perron
//!   eigenvector orients every sensitivity formula.
//! * `Γ = S D_ρ` — the (generally non-symmetric) companion matrix appearing
//!   in the quadratic vector equation; `Γ = D_√ρ⁻¹ Ω D_√ρ`, so it shares
//!   Ω's spectrum.
//!
//! Sub-models: merging is not closed for this ensemble, but *restriction*
//! is — keeping a subset `I` of blocks and renormalizing
//! (`ρ' = ρ_I / α`, `S' = α·S_I` with `α = Σ_{k∈I} ρ_k`) yields a valid
//! model whose `Ω'` is exactly the principal minor `Ω_{I,I}`. Restriction
//! strictly lowers the SNR, which is also monotone increasing in every
//! entry of `S`; [`ModelParams::snr_derivative`] gives the exact first-order
//! sensitivity through the Perron eigenvector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg;

/// `ρ` must sum to 1 within this tolerance on input; it is renormalized
/// exactly afterwards.
pub const RHO_SUM_TOL: f64 = 1e-9;
/// `S` must be symmetric within this relative tolerance on input.
pub const S_SYMMETRY_TOL: f64 = 1e-12;
/// The top eigenvalue of `Ω` is treated as numerically simple when its gap
/// to the second eigenvalue exceeds this.
pub const SNR_GAP_TOL: f64 = 1e-12;

/// Distribution of the signal entries (unit variance either way).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prior {
    Gaussian,
    Rademacher,
}

/// Unvalidated model parameters as they appear in an input file.
///
/// JSON shape: `{"K": 2, "rho": [0.5, 0.5], "S": [[...], [...]],
/// "prior": "gaussian"}`; `prior` defaults to `gaussian` when omitted.
#[derive(Debug, Clone, Deserialize)]
pub struct RawModel {
    #[serde(rename = "K")]
    pub k: usize,
    pub rho: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    #[serde(default)]
    pub prior: Option<Prior>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("validate: K = {k} inconsistent with inputs ({detail})")]
    BadK { k: usize, detail: String },
    #[error("validate: S[{i}][{j}] = {a} but S[{j}][{i}] = {b}; S must be symmetric")]
    NonSymmetricS { i: usize, j: usize, a: f64, b: f64 },
    #[error("validate: S[{i}][{j}] = {value}; every entry must be a positive finite number")]
    NonPositiveEntry { i: usize, j: usize, value: f64 },
    #[error("validate: rho is not a probability vector ({reason})")]
    RhoNotSimplex { reason: String },
    #[error("block index {index} out of range for K = {k}")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("reduced_model: the subset of kept blocks is empty")]
    EmptySubset,
    #[error("reduced_model: the subset equals the full block set; nothing is reduced")]
    FullSubset,
}

/// Validated model parameters. Construction goes through [`validate`] (or
/// the convenience constructors), so every instance satisfies: `ρ` strictly
/// positive and summing to 1 within 1e-12, `S` exactly symmetric with
/// strictly positive finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    k: usize,
    rho: DVector<f64>,
    s: DMatrix<f64>,
    prior: Prior,
}

/// `Ω = D_√ρ S D_√ρ` with its top eigenpair precomputed.
#[derive(Debug, Clone)]
pub struct OmegaMatrix {
    /// The symmetric entrywise-positive matrix itself.
    pub entries: DMatrix<f64>,
    /// Effective SNR: the top eigenvalue `λ₁(Ω)`.
    pub snr: f64,
    /// Unit-norm Perron eigenvector of `λ₁` (entrywise positive when `λ₁`
    /// is simple, which Perron–Frobenius guarantees mathematically).
    pub perron: DVector<f64>,
    /// `λ₁ − λ₂` (`+∞` for K = 1). Models with a numerically multiple top
    /// eigenvalue are accepted but flagged through [`OmegaMatrix::snr_is_simple`].
    pub gap: f64,
}

impl OmegaMatrix {
    /// Whether the top eigenvalue is numerically simple (gap > 1e-12).
    pub fn snr_is_simple(&self) -> bool {
        self.gap > SNR_GAP_TOL
    }
}

/// `Γ = S D_ρ`, the companion matrix of the quadratic vector equation.
#[derive(Debug, Clone)]
pub struct GammaMatrix {
    pub entries: DMatrix<f64>,
}

/// Validate raw parameters into a [`ModelParams`].
///
/// Checks dimensions against `K`, symmetry and positivity of `S`, and that
/// `ρ` lies on the open simplex (each entry in `(0, 1]`, sum within 1e-9 of
/// 1); the stored `ρ` is renormalized to machine precision.
pub fn validate(raw: &RawModel) -> Result<ModelParams, ModelError> {
    let k = raw.k;
    if k == 0 {
        return Err(ModelError::BadK {
            k,
            detail: "K must be at least 1".into(),
        });
    }
    if raw.rho.len() != k {
        return Err(ModelError::BadK {
            k,
            detail: format!("rho has {} entries", raw.rho.len()),
        });
    }
    if raw.s.len() != k || raw.s.iter().any(|row| row.len() != k) {
        return Err(ModelError::BadK {
            k,
            detail: format!(
                "S is {}x{:?}, expected {k}x{k}",
                raw.s.len(),
                raw.s.iter().map(Vec::len).collect::<Vec<_>>()
            ),
        });
    }

    for (i, &r) in raw.rho.iter().enumerate() {
        if !r.is_finite() || r <= 0.0 || r > 1.0 {
            return Err(ModelError::RhoNotSimplex {
                reason: format!("rho[{i}] = {r}, expected a value in (0, 1]"),
            });
        }
    }
    let sum: f64 = raw.rho.iter().sum();
    if (sum - 1.0).abs() > RHO_SUM_TOL {
        return Err(ModelError::RhoNotSimplex {
            reason: format!("sum(rho) = {sum}, expected 1 within {RHO_SUM_TOL:e}"),
        });
    }

    for i in 0..k {
        for j in 0..k {
            let v = raw.s[i][j];
            if !v.is_finite() || v <= 0.0 {
                return Err(ModelError::NonPositiveEntry { i, j, value: v });
            }
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let (a, b) = (raw.s[i][j], raw.s[j][i]);
            if (a - b).abs() > S_SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                return Err(ModelError::NonSymmetricS { i, j, a, b });
            }
        }
    }

    let rho = DVector::from_iterator(k, raw.rho.iter().map(|&r| r / sum));
    // Store S exactly symmetric so downstream algebra never sees drift.
    let s = DMatrix::from_fn(k, k, |i, j| 0.5 * (raw.s[i][j] + raw.s[j][i]));
    Ok(ModelParams {
        k,
        rho,
        s,
        prior: raw.prior.unwrap_or(Prior::Gaussian),
    })
}

impl ModelParams {
    /// Validating constructor from parts; `rho.len()` fixes `K`.
    pub fn new(rho: &[f64], s: &DMatrix<f64>, prior: Prior) -> Result<Self, ModelError> {
        let k = rho.len();
        let rows = (0..s.nrows())
            .map(|i| (0..s.ncols()).map(|j| s[(i, j)]).collect())
            .collect();
        validate(&RawModel {
            k,
            rho: rho.to_vec(),
            s: rows,
            prior: Some(prior),
        })
    }

    /// One-block model with inverse noise variance `s`.
    pub fn homogeneous(s: f64, prior: Prior) -> Result<Self, ModelError> {
        Self::new(&[1.0], &DMatrix::from_element(1, 1, s), prior)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rho(&self) -> &DVector<f64> {
        &self.rho
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn prior(&self) -> Prior {
        self.prior
    }

    /// `Ω = D_√ρ S D_√ρ` with its top eigenpair (dense symmetric solve; the
    /// top eigenvector of a symmetric positive matrix *is* the Perron
    /// vector, sign-fixed to the positive orthant).
    pub fn omega(&self) -> OmegaMatrix {
        let sqrt_rho = self.rho.map(f64::sqrt);
        let entries =
            DMatrix::from_fn(self.k, self.k, |i, j| sqrt_rho[i] * self.s[(i, j)] * sqrt_rho[j]);
        let eig = linalg::sym_eig(&entries)
            .expect("Ω is finite and square by construction");
        let mut perron = eig.vectors.column(0).into_owned();
        if perron.sum() < 0.0 {
            perron = -perron;
        }
        let gap = if self.k >= 2 {
            eig.values[0] - eig.values[1]
        } else {
            f64::INFINITY
        };
        OmegaMatrix {
            entries,
            snr: eig.values[0],
            perron,
            gap,
        }
    }

    /// `Γ = S D_ρ` (columns of `S` scaled by `ρ`).
    pub fn gamma(&self) -> GammaMatrix {
        let entries = DMatrix::from_fn(self.k, self.k, |i, j| self.s[(i, j)] * self.rho[j]);
        GammaMatrix { entries }
    }

    /// Effective SNR `λ₁(Ω)`.
    pub fn snr(&self) -> f64 {
        self.omega().snr
    }

    /// Exact first-order sensitivity `∂λ₁(Ω)/∂s_kl` of the SNR to a
    /// symmetric bump of the `(k,l)` entry of `S` (both `(k,l)` and
    /// `(l,k)` move together when `k ≠ l`):
    /// `2 √(ρ_k ρ_l) v_k v_l` off the diagonal and `ρ_k v_k²` on it, with
    /// `v` the Perron eigenvector. Strictly positive, hence SNR is strictly
    /// increasing in every entry of `S`.
    pub fn snr_derivative(&self, k: usize, l: usize) -> Result<f64, ModelError> {
        for &idx in &[k, l] {
            if idx >= self.k {
                return Err(ModelError::IndexOutOfRange {
                    index: idx,
                    k: self.k,
                });
            }
        }
        let omega = self.omega();
        let v = &omega.perron;
        let d = if k == l {
            self.rho[k] * v[k] * v[k]
        } else {
            2.0 * (self.rho[k] * self.rho[l]).sqrt() * v[k] * v[l]
        };
        Ok(d)
    }

    /// Restriction to the blocks in `keep` (0-based, deduplicated): with
    /// `α = Σ_{k∈keep} ρ_k`, the reduced model has `ρ' = ρ_keep / α` and
    /// `S' = α · S_keep`, so that `Ω'` equals the principal minor
    /// `Ω_{keep,keep}` exactly and the reduced SNR is strictly smaller
    /// (eigenvalue interlacing for a positive symmetric matrix).
    pub fn reduced_model(&self, keep: &[usize]) -> Result<ModelParams, ModelError> {
        let mut idx: Vec<usize> = keep.to_vec();
        idx.sort_unstable();
        idx.dedup();
        if idx.is_empty() {
            return Err(ModelError::EmptySubset);
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.k) {
            return Err(ModelError::IndexOutOfRange {
                index: bad,
                k: self.k,
            });
        }
        if idx.len() == self.k {
            return Err(ModelError::FullSubset);
        }

        let alpha: f64 = idx.iter().map(|&i| self.rho[i]).sum();
        let rho: Vec<f64> = idx.iter().map(|&i| self.rho[i] / alpha).collect();
        let kk = idx.len();
        let s = DMatrix::from_fn(kk, kk, |a, b| alpha * self.s[(idx[a], idx[b])]);
        ModelParams::new(&rho, &s, self.prior)
    }

    /// First 16 hex characters of a SHA-256 over a canonical bit-exact
    /// encoding; identifies the model in every output file.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"blockspike-model-v1");
        h.update((self.k as u64).to_le_bytes());
        h.update([match self.prior {
            Prior::Gaussian => 0u8,
            Prior::Rademacher => 1u8,
        }]);
        for &r in self.rho.iter() {
            h.update(r.to_bits().to_le_bytes());
        }
        for i in 0..self.k {
            for j in 0..self.k {
                h.update(self.s[(i, j)].to_bits().to_le_bytes());
            }
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
