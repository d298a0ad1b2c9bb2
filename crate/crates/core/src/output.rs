//! Deterministic result emission: JSON documents, CSV tables, raw
//! eigenvalue dumps, and gnuplot scripts.
//!
//! Every writer here is pure with respect to its inputs: no timestamps, no
//! environment probes, no locale dependence. Floats are formatted with
//! Rust's shortest round-trip representation, so rerunning a command with
//! the same model, sizes, and seed reproduces every output file
//! byte for byte — that contract is what makes the seeds in published
//! result sets auditable.
//!
//! CSV files use `.` as the decimal mark, `,` as the separator, one header
//! row, and carry run metadata as leading `#` comment lines. JSON
//! documents embed the same metadata under a `meta` field and use
//! camelCase keys throughout.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::qve::{DensityCurve, SupportInfo, EDGE_REFINE_TOL, QVE_RESIDUAL_TOL};
use crate::sim::{HistogramBin, MonteCarloStats, SimulationResult};
use crate::theory::{TheoryPrediction, PHASE_TOL};

/// Provenance block carried by every output file.
///
/// `extra` holds command-specific derived values (for example the sweep
/// parameter realizing a requested SNR); a `BTreeMap` keeps emission order
/// deterministic.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunMetadata {
    /// Emitting tool, always `"blockspike"`.
    pub tool: String,
    /// Version of the emitting crate.
    pub version: String,
    /// Content hash of the model parameters (16 hex chars).
    pub model_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Numerical tolerances the run was executed under.
    pub tolerances: Tolerances,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

/// The tolerance set pinned by the library.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Tolerances {
    pub qve_residual: f64,
    pub edge_refine: f64,
    pub phase_boundary: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            qve_residual: QVE_RESIDUAL_TOL,
            edge_refine: EDGE_REFINE_TOL,
            phase_boundary: PHASE_TOL,
        }
    }
}

impl RunMetadata {
    /// Metadata for a run of the given model; seed/N/samples are attached
    /// by the commands that use them.
    pub fn new(model_hash: &str) -> Self {
        RunMetadata {
            tool: "blockspike".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            model_hash: model_hash.to_string(),
            seed: None,
            n: None,
            samples: None,
            tolerances: Tolerances::default(),
            extra: BTreeMap::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = Some(n);
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = Some(samples);
        self
    }

    pub fn with_extra(mut self, key: &str, value: String) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }

    /// The metadata as CSV comment lines (trailing newline included).
    fn comment_block(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# tool: {} {}\n", self.tool, self.version));
        out.push_str(&format!("# modelHash: {}\n", self.model_hash));
        if let Some(seed) = self.seed {
            out.push_str(&format!("# seed: {seed}\n"));
        }
        if let Some(n) = self.n {
            out.push_str(&format!("# n: {n}\n"));
        }
        if let Some(samples) = self.samples {
            out.push_str(&format!("# samples: {samples}\n"));
        }
        out.push_str(&format!(
            "# tolerances: qveResidual={} edgeRefine={} phaseBoundary={}\n",
            fmt(self.tolerances.qve_residual),
            fmt(self.tolerances.edge_refine),
            fmt(self.tolerances.phase_boundary),
        ));
        for (k, v) in &self.extra {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out
    }
}

/// Shortest round-trip float formatting (`NaN` for undefined points).
fn fmt(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x}")
    }
}

fn json_doc<T: Serialize>(payload_key: &str, payload: &T, meta: &RunMetadata) -> String {
    // Stable two-field layout; serde_json preserves insertion order.
    let mut doc = serde_json::Map::new();
    doc.insert(
        "meta".to_string(),
        serde_json::to_value(meta).expect("metadata serializes"),
    );
    doc.insert(
        payload_key.to_string(),
        serde_json::to_value(payload).expect("payload serializes"),
    );
    let mut s = serde_json::to_string_pretty(&doc).expect("document serializes");
    s.push('\n');
    s
}

/// `prediction.json`: phase, outlier location, overlaps, solver metadata.
pub fn write_prediction_json<W: Write>(
    w: &mut W,
    prediction: &TheoryPrediction,
    meta: &RunMetadata,
) -> io::Result<()> {
    w.write_all(json_doc("prediction", prediction, meta).as_bytes())
}

/// `edges.json`: support intervals and edge diagnostics.
pub fn write_edges_json<W: Write>(
    w: &mut W,
    support: &SupportInfo,
    meta: &RunMetadata,
) -> io::Result<()> {
    w.write_all(json_doc("support", support, meta).as_bytes())
}

/// `density.csv`: `x,density,density_0,…,density_{K−1}` (per-block
/// components sum to the total). Failed grid points carry `NaN`, which
/// gnuplot treats as missing data.
pub fn write_density_csv<W: Write>(
    w: &mut W,
    curve: &DensityCurve,
    meta: &RunMetadata,
) -> io::Result<()> {
    let k = curve.component_densities.len();
    let mut out = meta.comment_block();
    out.push_str("x,density");
    for b in 0..k {
        out.push_str(&format!(",density_{b}"));
    }
    out.push('\n');
    for (i, &x) in curve.grid.iter().enumerate() {
        out.push_str(&fmt(x));
        out.push(',');
        out.push_str(&fmt(curve.density[i]));
        for comp in &curve.component_densities {
            out.push(',');
            out.push_str(&fmt(comp[i]));
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes())
}

/// `histogram.csv`: `bin_left,bin_right,count`.
pub fn write_histogram_csv<W: Write>(
    w: &mut W,
    bins: &[HistogramBin],
    meta: &RunMetadata,
) -> io::Result<()> {
    let mut out = meta.comment_block();
    out.push_str("bin_left,bin_right,count\n");
    for b in bins {
        out.push_str(&format!("{},{},{}\n", fmt(b.left), fmt(b.right), b.count));
    }
    w.write_all(out.as_bytes())
}

/// `overlaps.csv`: one row per sample — top eigenvalue, per-block overlap
/// components `mu_k`, and the global overlap `q`.
pub fn write_overlaps_csv<W: Write>(
    w: &mut W,
    results: &[SimulationResult],
    meta: &RunMetadata,
) -> io::Result<()> {
    let k = results.first().map_or(0, |r| r.overlap_emp.len());
    let mut out = meta.comment_block();
    out.push_str("sample,seed,top");
    for b in 0..k {
        out.push_str(&format!(",mu_{b}"));
    }
    out.push_str(",q\n");
    for (i, r) in results.iter().enumerate() {
        out.push_str(&format!("{i},{},{}", r.seed, fmt(r.top_value)));
        for &mu in &r.overlap_emp {
            out.push(',');
            out.push_str(&fmt(mu));
        }
        out.push(',');
        out.push_str(&fmt(r.overlap_global));
        out.push('\n');
    }
    w.write_all(out.as_bytes())
}

/// One stop of a parameter sweep: the swept value, the resulting SNR, and
/// theory/Monte Carlo overlap summaries.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepRow {
    /// Swept parameter value.
    pub t: f64,
    /// Effective SNR at this stop.
    pub snr: f64,
    /// Predicted per-block overlap² (zero vector off the supercritical
    /// phase).
    pub theory_overlap_sq: Vec<f64>,
    /// Predicted global overlap².
    pub theory_overlap_global_sq: f64,
    /// Monte Carlo mean of per-block overlap².
    pub emp_overlap_sq_mean: Vec<f64>,
    /// Monte Carlo std of per-block overlap².
    pub emp_overlap_sq_std: Vec<f64>,
    /// Monte Carlo mean/std of global overlap².
    pub emp_overlap_global_sq_mean: f64,
    pub emp_overlap_global_sq_std: f64,
    /// Monte Carlo mean/std of the top eigenvalue.
    pub top_mean: f64,
    pub top_std: f64,
}

/// `sweep.csv`: one row per sweep stop.
pub fn write_sweep_csv<W: Write>(
    w: &mut W,
    rows: &[SweepRow],
    meta: &RunMetadata,
) -> io::Result<()> {
    let k = rows.first().map_or(0, |r| r.theory_overlap_sq.len());
    let mut out = meta.comment_block();
    out.push_str("t,snr");
    for b in 0..k {
        out.push_str(&format!(",theory_sq_{b}"));
    }
    for b in 0..k {
        out.push_str(&format!(",emp_sq_mean_{b}"));
    }
    for b in 0..k {
        out.push_str(&format!(",emp_sq_std_{b}"));
    }
    out.push_str(",theory_q_sq,emp_q_sq_mean,emp_q_sq_std,top_mean,top_std\n");
    for r in rows {
        out.push_str(&fmt(r.t));
        out.push(',');
        out.push_str(&fmt(r.snr));
        for &v in &r.theory_overlap_sq {
            out.push(',');
            out.push_str(&fmt(v));
        }
        for &v in &r.emp_overlap_sq_mean {
            out.push(',');
            out.push_str(&fmt(v));
        }
        for &v in &r.emp_overlap_sq_std {
            out.push(',');
            out.push_str(&fmt(v));
        }
        for v in [
            r.theory_overlap_global_sq,
            r.emp_overlap_global_sq_mean,
            r.emp_overlap_global_sq_std,
            r.top_mean,
            r.top_std,
        ] {
            out.push(',');
            out.push_str(&fmt(v));
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes())
}

/// `sweep.json`: the same rows as `sweep.csv`, structured.
pub fn write_sweep_json<W: Write>(
    w: &mut W,
    rows: &[SweepRow],
    meta: &RunMetadata,
) -> io::Result<()> {
    w.write_all(json_doc("sweep", &rows, meta).as_bytes())
}

/// Compact JSON view of a Monte Carlo run (`simulation.json`): per-sample
/// scalars plus aggregates, without the O(N) spectra.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SimulationSummary {
    pub top_values: Vec<f64>,
    pub top_mean: f64,
    pub top_std: f64,
    /// Per-sample per-block overlap components `mu_k`.
    pub overlaps: Vec<Vec<f64>>,
    pub overlap_sq_mean: Vec<f64>,
    pub overlap_sq_std: Vec<f64>,
    pub overlap_global_sq_mean: f64,
    pub overlap_global_sq_std: f64,
    /// Per-sample rank-`K` factorization error of the signal part.
    pub lowrank_errors: Vec<f64>,
    /// Per-sample derived seeds, in sample order.
    pub sample_seeds: Vec<u64>,
}

impl SimulationSummary {
    pub fn from_stats(stats: &MonteCarloStats) -> Self {
        SimulationSummary {
            top_values: stats.results.iter().map(|r| r.top_value).collect(),
            top_mean: stats.top_value_mean,
            top_std: stats.top_value_std,
            overlaps: stats.results.iter().map(|r| r.overlap_emp.clone()).collect(),
            overlap_sq_mean: stats.overlap_sq_mean.clone(),
            overlap_sq_std: stats.overlap_sq_std.clone(),
            overlap_global_sq_mean: stats.overlap_global_sq_mean,
            overlap_global_sq_std: stats.overlap_global_sq_std,
            lowrank_errors: stats.results.iter().map(|r| r.lowrank_error).collect(),
            sample_seeds: stats.results.iter().map(|r| r.seed).collect(),
        }
    }
}

/// `simulation.json`: Monte Carlo aggregates.
pub fn write_simulation_json<W: Write>(
    w: &mut W,
    summary: &SimulationSummary,
    meta: &RunMetadata,
) -> io::Result<()> {
    w.write_all(json_doc("simulation", summary, meta).as_bytes())
}

/// Raw eigenvalue dump: little-endian `u64` count followed by the values
/// as little-endian `f64` bits, in the order given.
pub fn write_raw_eigenvalues<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for &v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a raw eigenvalue dump written by [`write_raw_eigenvalues`].
pub fn read_raw_eigenvalues<R: io::Read>(r: &mut R) -> io::Result<Vec<f64>> {
    let mut count = [0u8; 8];
    r.read_exact(&mut count)?;
    let count = u64::from_le_bytes(count) as usize;
    let mut values = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok(values)
}

/// Inputs for one density panel in the generated plot script.
#[derive(Debug, Clone)]
pub struct PanelPlotSpec {
    /// Panel title (shown verbatim).
    pub title: String,
    /// CSV with the predicted density curve (relative path).
    pub density_csv: String,
    /// CSV with the empirical histogram (relative path).
    pub histogram_csv: String,
    /// Total number of eigenvalues behind the histogram (normalization).
    pub total_count: usize,
    /// Position of the top-eigenvalue marker, when one separates.
    pub top_marker: Option<f64>,
}

/// Gnuplot script rendering density panels side by side: normalized
/// histogram, predicted density curve, and (where present) the top
/// eigenvalue marker.
pub fn density_plot_script(panels: &[PanelPlotSpec], output_png: &str) -> String {
    let mut s = String::new();
    s.push_str("# gnuplot script; run: gnuplot this_file\n");
    s.push_str("set datafile separator ','\n");
    s.push_str("set datafile missing 'NaN'\n");
    s.push_str(&format!(
        "set terminal pngcairo size {},480\nset output '{}'\n",
        420 * panels.len().max(1),
        output_png
    ));
    s.push_str(&format!("set multiplot layout 1,{}\n", panels.len().max(1)));
    s.push_str("set style fill solid 0.35 noborder\nset key top left\n");
    for p in panels {
        s.push_str(&format!("set title '{}'\n", p.title));
        // Histogram bins are [left, right): box center (l+r)/2, density
        // count/(total·width).
        let mut plot = format!(
            "plot '{}' using (($1+$2)/2):($3/({}.0*($2-$1))) with boxes lc rgb '#7aa6c2' title 'empirical', \\\n     '{}' using 1:2 with lines lw 2 lc rgb '#c23b22' title 'predicted'",
            p.histogram_csv, p.total_count, p.density_csv
        );
        if let Some(top) = p.top_marker {
            plot.push_str(&format!(
                ", \\\n     '-' using 1:2 with points pt 9 ps 2 lc rgb '#2ca02c' title 'top eigenvalue'\n{} 0\ne",
                fmt(top)
            ));
        }
        plot.push('\n');
        s.push_str(&plot);
    }
    s.push_str("unset multiplot\n");
    s
}

/// Inputs for one overlap sweep in the generated plot script.
#[derive(Debug, Clone)]
pub struct SweepPlotSpec {
    pub title: String,
    /// `sweep.csv` for this shape (relative path).
    pub sweep_csv: String,
    /// Number of blocks (one curve/point set per block).
    pub k: usize,
}

/// Gnuplot script rendering overlap² against SNR: theory curves as lines,
/// Monte Carlo means as points with error bars.
pub fn sweep_plot_script(specs: &[SweepPlotSpec], output_png: &str) -> String {
    let mut s = String::new();
    s.push_str("# gnuplot script; run: gnuplot this_file\n");
    s.push_str("set datafile separator ','\n");
    s.push_str("set datafile missing 'NaN'\n");
    s.push_str(&format!(
        "set terminal pngcairo size {},480\nset output '{}'\n",
        560 * specs.len().max(1),
        output_png
    ));
    s.push_str(&format!("set multiplot layout 1,{}\n", specs.len().max(1)));
    s.push_str("set key top left\nset xlabel 'snr'\nset ylabel 'overlap^2'\n");
    for spec in specs {
        s.push_str(&format!("set title '{}'\n", spec.title));
        let k = spec.k;
        let mut parts: Vec<String> = Vec::new();
        for b in 0..k {
            // Column layout: t,snr,theory_sq_*,emp_sq_mean_*,emp_sq_std_*,…
            let theory_col = 3 + b;
            let mean_col = 3 + k + b;
            let std_col = 3 + 2 * k + b;
            parts.push(format!(
                "'{}' using 2:{} with lines lw 2 title 'theory mu_{}^2'",
                spec.sweep_csv, theory_col, b
            ));
            parts.push(format!(
                "'{}' using 2:{}:{} with yerrorbars pt 7 title 'empirical mu_{}^2'",
                spec.sweep_csv, mean_col, std_col, b
            ));
        }
        s.push_str(&format!("plot {}\n", parts.join(", \\\n     ")));
    }
    s.push_str("unset multiplot\n");
    s
}

/// Creates `path` (buffered) and hands it to `f`.
pub fn to_file<F>(path: &Path, f: F) -> io::Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()
}
