//! Seeded Monte Carlo for the block spiked model.
//!
//! [`sample`] draws one observation and returns the transformed matrix
//! `Ỹ/√N` ready for eigenanalysis; [`spectrum`] measures it (spectrum, top
//! eigenpair, per-block signal overlaps, low-rank factorization error);
//! [`monte_carlo`] aggregates independent samples with deterministically
//! derived per-sample seeds. [`empirical_cdf_distance`] compares an
//! eigenvalue sample against a theoretical density curve.
//!
//! # Sampling contract (frozen)
//!
//! Everything is byte-reproducible. One sample consumes a single ChaCha8
//! stream seeded with the given value, in this order:
//!
//! 1. the signal `x_0, …, x_{N−1}`, one draw per entry;
//! 2. the noise `H_ij` for `i ≤ j`, row-major over the upper triangle
//!    (diagonal included, standard normal — the limit law only constrains
//!    off-diagonal entries, and variance 1 is the simplest choice).
//!
//! The observation is `Y = x xᵀ/√N + H ⊙ Δ^{⊙1/2}` with `Δ_ij = 1/s_kl` on
//! cell `(k, l)`, and the transformed matrix is
//! `Ỹ = Y ⊙ Σ − Diag(Σ 1)/√N` with `Σ = Δ^{⊙−1}`. Only `Ỹ/√N` and `x` are
//! stored; [`SpikedSample::observation`] reconstructs `Y` on demand.
//!
//! Per-sample seeds come from [`derive_seed`], two SplitMix64 finalizer
//! rounds over `(seed, index)`, so Monte Carlo runs can be parallelized or
//! resumed without changing any stream.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::model::{ModelParams, Prior};
use crate::qve::DensityCurve;

/// Bin count for pooled eigenvalue histograms.
pub const HISTOGRAM_BINS: usize = 100;

#[derive(Debug, Clone, Error)]
pub enum SimError {
    #[error("make_partition: N = {n} is too small for K = {k} blocks")]
    NTooSmall { n: usize, k: usize },
    #[error(
        "empirical_cdf_distance: eigenvalue range [{lo}, {hi}] exceeds the \
         density grid [{grid_lo}, {grid_hi}]"
    )]
    GridTooCoarse {
        lo: f64,
        hi: f64,
        grid_lo: f64,
        grid_hi: f64,
    },
    #[error("empirical_cdf_distance: the density curve carries {count} failed grid points")]
    DensityFailures { count: usize },
    #[error("empirical_cdf_distance: the eigenvalue sample is empty")]
    EmptySpectrum,
    #[error("sim: {0}")]
    Linalg(#[from] LinalgError),
}

/// Contiguous split of `[0, N)` into `K` blocks tracking a target profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    n: usize,
}

impl BlockPartition {
    /// Largest-remainder apportionment of `N` indices among the profile
    /// `ρ` (ties broken toward the lower index; empty blocks repaired by
    /// transferring one index from the largest block). Every block ends up
    /// non-empty with `|sizes_k/N − ρ_k| ≤ K/N`.
    pub fn make(n: usize, rho: &[f64]) -> Result<Self, SimError> {
        let k = rho.len();
        if n < k || k == 0 {
            return Err(SimError::NTooSmall { n, k });
        }
        let mut sizes: Vec<usize> = rho.iter().map(|&r| (r * n as f64).floor() as usize).collect();
        let assigned: usize = sizes.iter().sum();

        // Hand out the leftover seats by descending fractional remainder,
        // ties to the lower block index.
        let mut order: Vec<usize> = (0..k).collect();
        let rem = |i: usize| rho[i] * n as f64 - sizes[i] as f64;
        order.sort_by(|&a, &b| rem(b).partial_cmp(&rem(a)).unwrap().then(a.cmp(&b)));
        for i in 0..n - assigned {
            sizes[order[i % k]] += 1;
        }

        // Largest remainder can strand a tiny block at zero; repair from
        // the largest block so every block is non-empty (N ≥ K makes this
        // always feasible).
        while let Some(empty) = sizes.iter().position(|&s| s == 0) {
            let donor = (0..k).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap();
            sizes[donor] -= 1;
            sizes[empty] += 1;
        }

        let mut offsets = Vec::with_capacity(k);
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        debug_assert_eq!(acc, n);
        Ok(Self { sizes, offsets, n })
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Indices of block `k` as a half-open range.
    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k] + self.sizes[k]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Realized block proportions `|B_k|/N`.
    pub fn proportions(&self) -> Vec<f64> {
        self.sizes.iter().map(|&s| s as f64 / self.n as f64).collect()
    }
}

/// One draw of the model: the transformed matrix and the signal behind it.
#[derive(Debug, Clone)]
pub struct SpikedSample {
    matrix: DMatrix<f64>,
    x: DVector<f64>,
    partition: BlockPartition,
    seed: u64,
}

impl SpikedSample {
    /// The transformed observation scaled for analysis: `Ỹ/√N`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The planted signal `x` (length `N`).
    pub fn signal(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.partition.n()
    }

    /// Reconstructs the raw observation `Y = x xᵀ/√N + H ⊙ Δ^{⊙1/2}` by
    /// inverting the entrywise transform (every `s_kl > 0`, so the map is
    /// invertible). Allocates a fresh `N×N` matrix.
    pub fn observation(&self, m: &ModelParams) -> DMatrix<f64> {
        let n = self.n();
        let sqrt_n = (n as f64).sqrt();
        let shift = diag_shift(m, &self.partition);
        let mut y = DMatrix::<f64>::zeros(n, n);
        for k in 0..self.partition.num_blocks() {
            for l in 0..self.partition.num_blocks() {
                let s_kl = m.s()[(k, l)];
                for j in self.partition.range(l) {
                    for i in self.partition.range(k) {
                        let mut v = self.matrix[(i, j)] * sqrt_n;
                        if i == j {
                            v += shift[k] * sqrt_n;
                        }
                        y[(i, j)] = v / s_kl;
                    }
                }
            }
        }
        y
    }

    /// Operator norm of the low-rank factorization error
    /// `E_kl = s_kl (‖x_k‖‖x_l‖/N − √(ρ_k ρ_l))` — the distance between
    /// the signal part of `Ỹ/√N`, compressed onto the per-block signal
    /// directions, and the effective signal matrix Ω. Needs only `x`.
    pub fn lowrank_error(&self, m: &ModelParams) -> Result<f64, SimError> {
        lowrank_error(m, &self.partition, &self.x)
    }
}

/// Spectral measurements of one sample.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    /// Eigenvalues of `Ỹ/√N`, ascending. Holds the full spectrum under
    /// [`SpectrumMode::Full`]; only the top eigenvalue under
    /// [`SpectrumMode::TopPairOnly`].
    pub eigenvalues: Vec<f64>,
    /// Largest eigenvalue of `Ỹ/√N`.
    pub top_value: f64,
    /// Unit top eigenvector, sign-aligned with the signal (see
    /// `overlap_emp`).
    pub top_vector: DVector<f64>,
    /// Per-block overlaps `μ_k = ⟨x|_{B_k}/‖x|_{B_k}‖, u₁⟩`, with the
    /// global sign of `u₁` chosen so that `⟨μ, √ρ⟩ ≥ 0`.
    pub overlap_emp: Vec<f64>,
    /// Global overlap `q = ⟨μ, √ρ⟩ ≥ 0`.
    pub overlap_global: f64,
    /// Low-rank factorization error `‖E‖_op` for this sample.
    pub lowrank_error: f64,
    /// The per-sample RNG seed that produced the measurement.
    pub seed: u64,
}

/// How much of the spectrum [`spectrum_with`] computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumMode {
    /// Full dense eigendecomposition (histograms, CDF distances).
    Full,
    /// Only the top eigenpair (iterative; right choice for sweeps).
    TopPairOnly,
}

/// Aggregated Monte Carlo statistics over independent samples.
///
/// Standard deviations are sample standard deviations (`n − 1` in the
/// denominator), zero for a single sample.
#[derive(Debug, Clone)]
pub struct MonteCarloStats {
    /// Per-sample measurements in sample-index order.
    pub results: Vec<SimulationResult>,
    pub top_value_mean: f64,
    pub top_value_std: f64,
    /// Mean of `μ_k²` per block.
    pub overlap_sq_mean: Vec<f64>,
    pub overlap_sq_std: Vec<f64>,
    /// Mean of `q²`.
    pub overlap_global_sq_mean: f64,
    pub overlap_global_sq_std: f64,
}

/// One histogram bin: `[left, right)` (the last bin is closed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-sample seed: two SplitMix64 rounds over
/// `(seed, index)`. Changing either input decorrelates the whole stream.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix(mix(seed) ^ index)
}

fn draw_signal(rng: &mut ChaCha8Rng, prior: Prior, n: usize) -> DVector<f64> {
    let mut x = DVector::<f64>::zeros(n);
    match prior {
        Prior::Gaussian => {
            for i in 0..n {
                x[i] = StandardNormal.sample(rng);
            }
        }
        Prior::Rademacher => {
            for i in 0..n {
                x[i] = if rand::RngCore::next_u32(rng) & 1 == 0 { 1.0 } else { -1.0 };
            }
        }
    }
    x
}

/// Deterministic diagonal compensation per block: `(Σ1)_i/N = Σ_l ρ_l(N) s_kl`
/// for `i ∈ B_k` (the stored matrix is `Ỹ/√N`, hence the extra `1/√N`).
fn diag_shift(m: &ModelParams, p: &BlockPartition) -> Vec<f64> {
    let k = p.num_blocks();
    (0..k)
        .map(|row| {
            (0..k)
                .map(|l| p.sizes()[l] as f64 / p.n() as f64 * m.s()[(row, l)])
                .sum()
        })
        .collect()
}

/// Draws one observation of the model and returns `Ỹ/√N` with its signal.
///
/// See the module docs for the frozen stream layout; identical inputs give
/// bit-identical samples.
pub fn sample(m: &ModelParams, n: usize, seed: u64) -> Result<SpikedSample, SimError> {
    let partition = BlockPartition::make(n, m.rho().as_slice())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = draw_signal(&mut rng, m.prior(), n);

    let k = partition.num_blocks();
    let inv_n = 1.0 / n as f64;
    let inv_sqrt_n = inv_n.sqrt();
    let shift = diag_shift(m, &partition);

    // Block lookup per index (K is tiny; a flat map keeps the hot loop
    // branch-free).
    let mut block_of = vec![0usize; n];
    for b in 0..k {
        for i in partition.range(b) {
            block_of[i] = b;
        }
    }

    let mut mat = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let bi = block_of[i];
        for j in i..n {
            let s = m.s()[(bi, block_of[j])];
            let h: f64 = StandardNormal.sample(&mut rng);
            // (Ỹ/√N)_ij = s_kl·x_i x_j/N + √s_kl·H_ij/√N − δ_ij·Σ_l ρ_l(N) s_kl.
            let mut v = s * x[i] * x[j] * inv_n + s.sqrt() * h * inv_sqrt_n;
            if i == j {
                v -= shift[bi];
            }
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }

    Ok(SpikedSample {
        matrix: mat,
        x,
        partition,
        seed,
    })
}

/// The noise part alone: `X/√N` with
/// `X = H ⊙ Σ^{⊙1/2} − Diag(Σ1)/√N`, drawn from the same stream as
/// [`sample`] with the same seed (the signal draws are consumed and
/// discarded so `H` matches entry for entry).
pub fn noise_matrix(m: &ModelParams, n: usize, seed: u64) -> Result<DMatrix<f64>, SimError> {
    let partition = BlockPartition::make(n, m.rho().as_slice())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let _ = draw_signal(&mut rng, m.prior(), n);

    let k = partition.num_blocks();
    let inv_sqrt_n = (1.0 / n as f64).sqrt();
    let shift = diag_shift(m, &partition);
    let mut block_of = vec![0usize; n];
    for b in 0..k {
        for i in partition.range(b) {
            block_of[i] = b;
        }
    }

    let mut mat = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let bi = block_of[i];
        for j in i..n {
            let s = m.s()[(bi, block_of[j])];
            let h: f64 = StandardNormal.sample(&mut rng);
            let mut v = s.sqrt() * h * inv_sqrt_n;
            if i == j {
                v -= shift[bi];
            }
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }
    Ok(mat)
}

/// `‖E‖_op` with `E_kl = s_kl (‖x|_{B_k}‖‖x|_{B_l}‖/N − √(ρ_k ρ_l))`.
///
/// This is the compression of the signal part of `Ỹ/√N` onto the
/// orthonormal per-block signal directions, minus Ω — the finite-`N`
/// error of the rank-`K` factorization. Only the signal is needed, which
/// keeps scaling studies at large `N` cheap.
pub fn lowrank_error(
    m: &ModelParams,
    p: &BlockPartition,
    x: &DVector<f64>,
) -> Result<f64, SimError> {
    let k = p.num_blocks();
    let n = p.n() as f64;
    let norms: Vec<f64> = (0..k)
        .map(|b| p.range(b).map(|i| x[i] * x[i]).sum::<f64>().sqrt())
        .collect();
    let e = DMatrix::from_fn(k, k, |a, b| {
        m.s()[(a, b)] * (norms[a] * norms[b] / n - (m.rho()[a] * m.rho()[b]).sqrt())
    });
    let eig = linalg::sym_eig(&e)?;
    Ok(eig.values.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())))
}

/// Cheap path for scaling studies: draws only the signal (the same stream
/// prefix as [`sample`]) and returns the low-rank factorization error.
pub fn lowrank_error_sampled(m: &ModelParams, n: usize, seed: u64) -> Result<f64, SimError> {
    let partition = BlockPartition::make(n, m.rho().as_slice())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = draw_signal(&mut rng, m.prior(), n);
    lowrank_error(m, &partition, &x)
}

/// Full spectral measurement of a sample ([`SpectrumMode::Full`]).
pub fn spectrum(m: &ModelParams, sample: &SpikedSample) -> Result<SimulationResult, SimError> {
    spectrum_with(m, sample, SpectrumMode::Full)
}

/// Measures a sample: eigenvalues, top pair, per-block overlaps, and the
/// low-rank error. `TopPairOnly` swaps the dense decomposition for an
/// iterative top-eigenpair solve (the `eigenvalues` field then holds a
/// single entry).
pub fn spectrum_with(
    m: &ModelParams,
    sample: &SpikedSample,
    mode: SpectrumMode,
) -> Result<SimulationResult, SimError> {
    let (eigenvalues, top_value, mut top_vector) = match mode {
        SpectrumMode::Full => {
            let eig = linalg::sym_eig(sample.matrix())?;
            let mut vals = eig.values.clone();
            vals.reverse(); // ascending
            let top = eig.values[0];
            let vec = eig.vectors.column(0).into_owned();
            (vals, top, vec)
        }
        SpectrumMode::TopPairOnly => {
            let eig = linalg::sym_eig_topk(sample.matrix(), 1)?;
            let top = eig.values[0];
            let vec = eig.vectors.column(0).into_owned();
            (vec![top], top, vec)
        }
    };

    // Per-block overlaps against the normalized signal restrictions.
    let p = sample.partition();
    let k = p.num_blocks();
    let x = sample.signal();
    let mut mu = vec![0.0f64; k];
    for b in 0..k {
        let norm = p.range(b).map(|i| x[i] * x[i]).sum::<f64>().sqrt();
        let dot: f64 = p.range(b).map(|i| x[i] * top_vector[i]).sum();
        mu[b] = dot / norm;
    }
    let mut q: f64 = (0..k).map(|b| mu[b] * m.rho()[b].sqrt()).sum();
    if q < 0.0 {
        for v in &mut mu {
            *v = -*v;
        }
        top_vector.neg_mut();
        q = -q;
    }

    Ok(SimulationResult {
        eigenvalues,
        top_value,
        top_vector,
        overlap_emp: mu,
        overlap_global: q,
        lowrank_error: sample.lowrank_error(m)?,
        seed: sample.seed(),
    })
}

/// Runs `samples` independent draws with per-sample seeds
/// `derive_seed(seed, 0..samples)` and aggregates the measurements.
/// Samples are evaluated in parallel; each draw's RNG depends only on its
/// index, and results are collected in index order, so the output is
/// deterministic and independent of the thread count.
pub fn monte_carlo(
    m: &ModelParams,
    n: usize,
    samples: usize,
    seed: u64,
    mode: SpectrumMode,
) -> Result<MonteCarloStats, SimError> {
    assert!(samples >= 1, "monte_carlo needs at least one sample");
    let k = m.k();
    let results: Vec<SimulationResult> = (0..samples)
        .into_par_iter()
        .map(|idx| {
            let s = sample(m, n, derive_seed(seed, idx as u64))?;
            spectrum_with(m, &s, mode)
        })
        .collect::<Result<_, _>>()?;

    let tops: Vec<f64> = results.iter().map(|r| r.top_value).collect();
    let (top_value_mean, top_value_std) = mean_std(&tops);
    let mut overlap_sq_mean = Vec::with_capacity(k);
    let mut overlap_sq_std = Vec::with_capacity(k);
    for b in 0..k {
        let v: Vec<f64> = results.iter().map(|r| r.overlap_emp[b].powi(2)).collect();
        let (mean, sd) = mean_std(&v);
        overlap_sq_mean.push(mean);
        overlap_sq_std.push(sd);
    }
    let gq: Vec<f64> = results.iter().map(|r| r.overlap_global.powi(2)).collect();
    let (overlap_global_sq_mean, overlap_global_sq_std) = mean_std(&gq);

    Ok(MonteCarloStats {
        results,
        top_value_mean,
        top_value_std,
        overlap_sq_mean,
        overlap_sq_std,
        overlap_global_sq_mean,
        overlap_global_sq_std,
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Equal-width histogram over the value range (the last bin is closed).
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    assert!(bins >= 1);
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    (0..bins)
        .map(|i| {
            let right = lo + (i + 1) as f64 * width;
            HistogramBin {
                left: lo + i as f64 * width,
                // `lo + (hi - lo)` can round below `hi`; the last bin is
                // closed and must cover the maximum.
                right: if i + 1 == bins { right.max(hi) } else { right },
                count: counts[i],
            }
        })
        .collect()
}

/// Kolmogorov distance between the empirical CDF of an eigenvalue sample
/// and the (trapezoid-integrated, mass-normalized) CDF of a theoretical
/// density curve. The caller is responsible for excluding an outlier
/// eigenvalue first; the curve must cover the remaining range.
pub fn empirical_cdf_distance(eigenvalues: &[f64], curve: &DensityCurve) -> Result<f64, SimError> {
    if eigenvalues.is_empty() {
        return Err(SimError::EmptySpectrum);
    }
    if !curve.failed.is_empty() {
        return Err(SimError::DensityFailures {
            count: curve.failed.len(),
        });
    }
    let grid_lo = curve.grid[0];
    let grid_hi = *curve.grid.last().unwrap();
    let lo = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo < grid_lo || hi > grid_hi {
        return Err(SimError::GridTooCoarse {
            lo,
            hi,
            grid_lo,
            grid_hi,
        });
    }

    let cdf = theoretical_cdf(curve);
    let mut sorted = eigenvalues.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut dist = 0.0f64;
    for (i, &lambda) in sorted.iter().enumerate() {
        let f = interp_cdf(&curve.grid, &cdf, lambda);
        let below = i as f64 / n;
        let above = (i + 1) as f64 / n;
        dist = dist.max((f - below).abs()).max((f - above).abs());
    }
    Ok(dist)
}

/// Cumulative trapezoid integral of the curve, normalized to end at 1.
fn theoretical_cdf(curve: &DensityCurve) -> Vec<f64> {
    let g = &curve.grid;
    let d = &curve.density;
    let mut cdf = vec![0.0f64; g.len()];
    for i in 1..g.len() {
        cdf[i] = cdf[i - 1] + (g[i] - g[i - 1]) * 0.5 * (d[i] + d[i - 1]);
    }
    let total = *cdf.last().unwrap();
    if total > 0.0 {
        for v in &mut cdf {
            *v /= total;
        }
    }
    cdf
}

fn interp_cdf(grid: &[f64], cdf: &[f64], x: f64) -> f64 {
    if x <= grid[0] {
        return 0.0;
    }
    if x >= *grid.last().unwrap() {
        return 1.0;
    }
    let mut hi = grid.partition_point(|&g| g <= x);
    hi = hi.clamp(1, grid.len() - 1);
    let lo = hi - 1;
    let t = (x - grid[lo]) / (grid[hi] - grid[lo]);
    cdf[lo] + t * (cdf[hi] - cdf[lo])
}
