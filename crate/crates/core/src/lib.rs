//! Spectral analysis of block-structured spiked Wigner matrices.
//!
//! A rank-one signal `x xᵀ/√N` is observed through symmetric Gaussian noise
//! whose variance profile is constant on the cells of a `K`-block partition:
//! block `k` holds a `ρ_k` fraction of the `N` indices, and an entry in cell
//! `(k, l)` has noise variance `1/(N s_kl)`. The crate implements the
//! entrywise-rescaled observation `Ỹ = Y ⊙ Σ − Diag(Σ1)/√N` (with
//! `Σ_ij = s_kl` on cell `(k, l)`), whose top eigenpair is the optimal
//! spectral detector for this ensemble, together with everything needed to
//! predict and validate its behaviour:
//!
//! * [`model`] — validated parameters `(ρ, S)`, the effective signal matrix
//!   `Ω = D_√ρ S D_√ρ` whose top eigenvalue is the effective SNR, and the
//!   companion matrix `Γ = S D_ρ`.
//! * [`linalg`] — symmetric eigensolvers (dense and Lanczos), power
//!   iteration, and a condition-gated linear solve; every kernel carries an
//!   explicit accuracy contract.
//! * [`qve`] — the quadratic vector equation `1 = z g_k − g_k (Γ(1−g))_k`
//!   satisfied by the block Stieltjes transforms of the limiting spectral
//!   density; complex-plane and real-line solvers, density curves, support
//!   edges, and the root-selection certificate.
//! * [`theory`] — the detection phase diagram: for SNR > 1 the top
//!   eigenvalue of `Ỹ/√N` sticks at 1 and its eigenvector carries a
//!   predictable per-block overlap with the signal; both are computed from
//!   the QVE solution at `λ = 1`.
//! * [`sim`] — seeded Monte Carlo: sampling `Ỹ/√N`, spectra, empirical
//!   overlaps, and distribution distances against the predicted density.
//! * [`modelgen`] — seeded random model generators for batch validation.
//! * [`presets`] — the bundled experiment families (density panels and
//!   overlap sweeps) with their SNR-targeting parameter solver.
//! * [`output`] — deterministic JSON/CSV/binary emission and gnuplot
//!   script generation.
//!
//! Everything is deterministic: given the same model, sizes, and seed, every
//! number and every output byte is identical across runs.

pub mod linalg;
pub mod model;
pub mod modelgen;
pub mod output;
pub mod presets;
pub mod qve;
pub mod sim;
pub mod theory;

pub use linalg::{EigResult, LinalgError};
pub use model::{GammaMatrix, ModelError, ModelParams, OmegaMatrix, Prior, RawModel};
pub use output::{RunMetadata, SimulationSummary, SweepRow};
pub use presets::PresetError;
pub use qve::{
    DensityCurve, QveError, QveSolution, RealLineSolution, SelectionCertificate, SupportInfo,
};
pub use sim::{BlockPartition, MonteCarloStats, SimError, SimulationResult, SpikedSample};
pub use theory::{Phase, SpectralDecomp, TheoryError, TheoryPrediction};
