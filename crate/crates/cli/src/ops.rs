//! Implementations of the `predict`, `simulate`, `sweep`, and `reproduce`
//! commands: orchestration of the core solvers plus file emission. All
//! outputs are deterministic functions of the flags; nothing here reads
//! clocks or ambient state.

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::Path;

use rayon::prelude::*;

use blockspike_core::model::ModelParams;
use blockspike_core::output::{
    self, PanelPlotSpec, RunMetadata, SimulationSummary, SweepPlotSpec, SweepRow,
};
use blockspike_core::presets::{self, DENSITY_PANEL_TARGETS, OVERLAP_SWEEP_TARGETS};
use blockspike_core::qve::{self, EdgeOptions};
use blockspike_core::sim::{self, MonteCarloStats, SpectrumMode};
use blockspike_core::theory::{self, Phase};

use crate::{
    check_n, ensure_out_dir, load_model, num_err, Failure, ParamPath, PredictArgs, ReproduceArgs,
    SimulateArgs, SweepArgs,
};

fn phase_name(phase: Phase) -> &'static str {
    match phase {
        Phase::Subcritical => "subcritical",
        Phase::Critical => "critical",
        Phase::Supercritical => "supercritical",
    }
}

/// Writes one output file, mapping IO problems to a config failure.
fn write_out<F>(dir: &Path, name: &str, f: F) -> Result<(), Failure>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let path = dir.join(name);
    output::to_file(&path, f).map_err(|e| {
        Failure::config(
            "cli::write_out",
            format!("cannot write `{}`: {e}", path.display()),
        )
    })
}

/// Positive, sane η or a config error.
fn check_eta(eta: f64) -> Result<(), Failure> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Failure::config(
            "cli::check_eta",
            format!("eta must lie in (0, 1], got {eta}"),
        ));
    }
    Ok(())
}

fn check_samples(samples: usize) -> Result<(), Failure> {
    if samples == 0 {
        return Err(Failure::config(
            "cli::check_samples",
            "need at least one sample",
        ));
    }
    Ok(())
}

fn check_bins(bins: usize) -> Result<(), Failure> {
    if bins == 0 {
        return Err(Failure::config("cli::check_bins", "need at least one bin"));
    }
    Ok(())
}

/// Warns (informationally) when the η-continuation gave up on grid points;
/// those density values are written as `NaN`.
fn warn_failed_points(curve: &qve::DensityCurve) {
    if !curve.failed.is_empty() {
        eprintln!(
            "warning (qve::density): {} of {} grid points failed the η-continuation and are written as NaN",
            curve.failed.len(),
            curve.grid.len()
        );
    }
}

pub fn predict(args: &PredictArgs) -> Result<(), Failure> {
    check_eta(args.eta)?;
    let m = load_model(&args.model)?;
    ensure_out_dir(&args.out)?;

    let support =
        qve::rightmost_edge(&m, &EdgeOptions::default()).map_err(num_err("qve::rightmost_edge"))?;
    let pred = theory::predict(&m).map_err(num_err("theory::predict"))?;
    let grid = match &args.grid {
        Some(spec) => spec.values(),
        None => qve::default_grid(&support),
    };
    let schedule = qve::default_eta_schedule(args.eta);
    let curve = qve::density(&m, &grid, &schedule).map_err(num_err("qve::density"))?;
    warn_failed_points(&curve);

    let grid_desc = format!(
        "{}:{}:{}",
        grid.first().unwrap(),
        grid.last().unwrap(),
        grid.len()
    );
    let meta = RunMetadata::new(&m.content_hash())
        .with_extra("command", "predict".to_string())
        .with_extra("eta", format!("{}", args.eta))
        .with_extra("grid", grid_desc);

    let mut written = Vec::new();
    if args.format.json() {
        write_out(&args.out, "prediction.json", |w| {
            output::write_prediction_json(w, &pred, &meta)
        })?;
        write_out(&args.out, "edges.json", |w| {
            output::write_edges_json(w, &support, &meta)
        })?;
        written.push("prediction.json");
        written.push("edges.json");
    }
    if args.format.csv() {
        write_out(&args.out, "density.csv", |w| {
            output::write_density_csv(w, &curve, &meta)
        })?;
        written.push("density.csv");
    }

    println!(
        "predict: model {} (K = {}), phase {} (snr {})",
        m.content_hash(),
        m.k(),
        phase_name(pred.phase),
        pred.snr
    );
    println!(
        "  top eigenvalue limit {}, support edges [{}, {}]",
        pred.top_eig_limit, support.left_edge, support.right_edge
    );
    println!(
        "  density: {} grid points, eta {}, max residual {:.3e}, mass {:.6}",
        curve.grid.len(),
        curve.eta,
        curve.max_residual,
        curve.mass()
    );
    println!("  wrote {} in {}", written.join(", "), args.out.display());
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    check_samples(args.samples)?;
    check_bins(args.bins)?;
    let m = load_model(&args.model)?;
    check_n(args.n, &m, args.max_n)?;
    ensure_out_dir(&args.out)?;

    let stats = sim::monte_carlo(&m, args.n, args.samples, args.seed, SpectrumMode::Full)
        .map_err(num_err("sim::monte_carlo"))?;
    let summary = SimulationSummary::from_stats(&stats);
    let pooled: Vec<f64> = stats
        .results
        .iter()
        .flat_map(|r| r.eigenvalues.iter().copied())
        .collect();
    let bins = sim::histogram(&pooled, args.bins);

    let meta = RunMetadata::new(&m.content_hash())
        .with_seed(args.seed)
        .with_n(args.n)
        .with_samples(args.samples)
        .with_extra("command", "simulate".to_string())
        .with_extra("bins", format!("{}", args.bins));

    let mut written = Vec::new();
    if args.format.json() {
        write_out(&args.out, "simulation.json", |w| {
            output::write_simulation_json(w, &summary, &meta)
        })?;
        written.push("simulation.json");
    }
    if args.format.csv() {
        write_out(&args.out, "histogram.csv", |w| {
            output::write_histogram_csv(w, &bins, &meta)
        })?;
        write_out(&args.out, "overlaps.csv", |w| {
            output::write_overlaps_csv(w, &stats.results, &meta)
        })?;
        written.push("histogram.csv");
        written.push("overlaps.csv");
    }
    if args.raw_eigenvalues {
        write_out(&args.out, "eigenvalues.bin", |w| {
            output::write_raw_eigenvalues(w, &pooled)
        })?;
        written.push("eigenvalues.bin");
    }

    println!(
        "simulate: model {} (K = {}), N = {}, samples = {}, seed = {}",
        m.content_hash(),
        m.k(),
        args.n,
        args.samples,
        args.seed
    );
    println!(
        "  top eigenvalue mean {} (std {})",
        stats.top_value_mean, stats.top_value_std
    );
    println!(
        "  global overlap² mean {} (std {})",
        stats.overlap_global_sq_mean, stats.overlap_global_sq_std
    );
    println!("  wrote {} in {}", written.join(", "), args.out.display());
    Ok(())
}

/// Rebuilds the model with the swept parameter set to `t`. `S` sweeps keep
/// the matrix symmetric by writing both `(i, j)` and `(j, i)`; `rho`
/// sweeps pin block `k` to `t` and rescale the remaining proportions so
/// they still sum to one.
fn apply_param(base: &ModelParams, path: ParamPath, t: f64) -> Result<ModelParams, Failure> {
    let invalid = |e: blockspike_core::model::ModelError| {
        Failure::config("model::validate", format!("sweep value t = {t}: {e}"))
    };
    match path {
        ParamPath::S(i, j) => {
            let mut s = base.s().clone();
            s[(i, j)] = t;
            s[(j, i)] = t;
            ModelParams::new(base.rho().as_slice(), &s, base.prior()).map_err(invalid)
        }
        ParamPath::Rho(k) => {
            let old = base.rho()[k];
            if !(t > 0.0 && t < 1.0) {
                return Err(Failure::config(
                    "cli::apply_param",
                    format!("rho sweep value t = {t} must lie strictly inside (0, 1)"),
                ));
            }
            let scale = (1.0 - t) / (1.0 - old);
            let rho: Vec<f64> = base
                .rho()
                .iter()
                .enumerate()
                .map(|(idx, &r)| if idx == k { t } else { r * scale })
                .collect();
            ModelParams::new(&rho, base.s(), base.prior()).map_err(invalid)
        }
    }
}

/// Monte Carlo with a spectrum mode chosen by phase: the iterative
/// top-pair path needs the spectral gap that only the supercritical phase
/// guarantees; everywhere else (and as a fallback when the gap is
/// marginal) the dense decomposition is the reliable route.
fn mc_with_fallback(
    m: &ModelParams,
    n: usize,
    samples: usize,
    seed: u64,
    phase: Phase,
) -> Result<MonteCarloStats, Failure> {
    let mode = if phase == Phase::Supercritical {
        SpectrumMode::TopPairOnly
    } else {
        SpectrumMode::Full
    };
    match sim::monte_carlo(m, n, samples, seed, mode) {
        Ok(stats) => Ok(stats),
        Err(_) if mode == SpectrumMode::TopPairOnly => {
            sim::monte_carlo(m, n, samples, seed, SpectrumMode::Full)
                .map_err(num_err("sim::monte_carlo"))
        }
        Err(e) => Err(num_err("sim::monte_carlo")(e)),
    }
}

fn sweep_row(
    m: &ModelParams,
    t: f64,
    n: usize,
    samples: usize,
    point_seed: u64,
) -> Result<SweepRow, Failure> {
    let pred = theory::predict(m).map_err(num_err("theory::predict"))?;
    let stats = mc_with_fallback(m, n, samples, point_seed, pred.phase)?;
    Ok(SweepRow {
        t,
        snr: pred.snr,
        theory_overlap_sq: pred.overlap_abs.iter().map(|v| v * v).collect(),
        theory_overlap_global_sq: pred.overlap_global * pred.overlap_global,
        emp_overlap_sq_mean: stats.overlap_sq_mean.clone(),
        emp_overlap_sq_std: stats.overlap_sq_std.clone(),
        emp_overlap_global_sq_mean: stats.overlap_global_sq_mean,
        emp_overlap_global_sq_std: stats.overlap_global_sq_std,
        top_mean: stats.top_value_mean,
        top_std: stats.top_value_std,
    })
}

/// Warns when the effective SNR fails to move monotonically along the
/// sweep (informational: the sweep output itself is still written).
fn warn_non_monotone(rows: &[SweepRow]) {
    let increases = rows.windows(2).any(|w| w[1].snr > w[0].snr);
    let decreases = rows.windows(2).any(|w| w[1].snr < w[0].snr);
    if increases && decreases {
        eprintln!(
            "warning (NonMonotoneWarning): snr is not monotone along the sweep; \
             overlap curves may fold back on themselves"
        );
    }
}

fn print_sweep_rows(label: &str, rows: &[SweepRow]) {
    for row in rows {
        println!(
            "  {label} t = {}: snr {}, theory q² {}, empirical q² {} (std {}), top {} (std {})",
            row.t,
            row.snr,
            row.theory_overlap_global_sq,
            row.emp_overlap_global_sq_mean,
            row.emp_overlap_global_sq_std,
            row.top_mean,
            row.top_std
        );
    }
}

pub fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    check_samples(args.samples)?;
    let base = load_model(&args.model)?;
    check_n(args.n, &base, args.max_n)?;

    // Index validation up front so every stop either runs or the whole
    // sweep is rejected as configuration.
    match args.param {
        ParamPath::S(i, j) => {
            if i >= base.k() || j >= base.k() {
                return Err(Failure::config(
                    "cli::sweep",
                    format!("S index ({i}, {j}) out of range for K = {}", base.k()),
                ));
            }
        }
        ParamPath::Rho(k) => {
            if k >= base.k() {
                return Err(Failure::config(
                    "cli::sweep",
                    format!("rho index {k} out of range for K = {}", base.k()),
                ));
            }
            if base.k() == 1 {
                return Err(Failure::config(
                    "cli::sweep",
                    "rho sweeps need K ≥ 2 (a single block proportion is fixed at 1)",
                ));
            }
        }
    }
    ensure_out_dir(&args.out)?;

    let values = args.range.values();
    let rows: Vec<SweepRow> = values
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let m = apply_param(&base, args.param, t)?;
            sweep_row(&m, t, args.n, args.samples, sim::derive_seed(args.seed, i as u64))
        })
        .collect::<Result<_, Failure>>()?;
    warn_non_monotone(&rows);

    let meta = RunMetadata::new(&base.content_hash())
        .with_seed(args.seed)
        .with_n(args.n)
        .with_samples(args.samples)
        .with_extra("command", "sweep".to_string())
        .with_extra("param", args.param.to_string())
        .with_extra("range", args.range.to_string());

    let mut written = Vec::new();
    if args.format.csv() {
        write_out(&args.out, "sweep.csv", |w| {
            output::write_sweep_csv(w, &rows, &meta)
        })?;
        let script = output::sweep_plot_script(
            &[SweepPlotSpec {
                title: format!("sweep {}", args.param),
                sweep_csv: "sweep.csv".to_string(),
                k: base.k(),
            }],
            "sweep.png",
        );
        write_out(&args.out, "sweep.gp", |w| {
            io::Write::write_all(w, script.as_bytes())
        })?;
        written.push("sweep.csv");
        written.push("sweep.gp");
    }
    if args.format.json() {
        write_out(&args.out, "sweep.json", |w| {
            output::write_sweep_json(w, &rows, &meta)
        })?;
        written.push("sweep.json");
    }

    println!(
        "sweep: model {} (K = {}), param {}, range {}, N = {}, samples = {}, seed = {}",
        base.content_hash(),
        base.k(),
        args.param,
        args.range,
        args.n,
        args.samples,
        args.seed
    );
    print_sweep_rows("stop", &rows);
    println!("  wrote {} in {}", written.join(", "), args.out.display());
    Ok(())
}

pub fn reproduce(args: &ReproduceArgs) -> Result<(), Failure> {
    match args.id.as_str() {
        "fig1" => reproduce_density_panels(args),
        "fig2" => reproduce_overlap_sweeps(args),
        other => Err(Failure::config(
            "cli::reproduce",
            format!("unknown experiment id `{other}` (known: fig1, fig2)"),
        )),
    }
}

/// Bundled experiment `fig1`: three two-block density panels (snr 0.5, 1,
/// 3) at N = 3000 — predicted density curve, one sampled spectrum as a
/// histogram, and the measured top eigenvalue as a marker.
fn reproduce_density_panels(args: &ReproduceArgs) -> Result<(), Failure> {
    check_eta(args.eta)?;
    check_bins(args.bins)?;
    let n = args.n.unwrap_or(3000);
    let samples = args.samples.unwrap_or(1);
    check_samples(samples)?;
    ensure_out_dir(&args.out)?;

    // The panel models are derived, not stored: bisection finds the S
    // entry t that hits each target snr exactly; t lands in the metadata.
    let panels = presets::density_panels();
    check_n(n, &panels[0].1, args.max_n)?;

    let mut specs = Vec::new();
    let mut written = Vec::new();
    println!(
        "reproduce fig1: three density panels, N = {n}, samples = {samples}, seed = {}",
        args.seed
    );
    for (i, (t, m)) in panels.iter().enumerate() {
        let target = DENSITY_PANEL_TARGETS[i];
        let pred = theory::predict(m).map_err(num_err("theory::predict"))?;
        let support = qve::rightmost_edge(m, &EdgeOptions::default())
            .map_err(num_err("qve::rightmost_edge"))?;
        let grid = qve::default_grid(&support);
        let schedule = qve::default_eta_schedule(args.eta);
        let curve = qve::density(m, &grid, &schedule).map_err(num_err("qve::density"))?;
        warn_failed_points(&curve);

        let stats = sim::monte_carlo(
            m,
            n,
            samples,
            sim::derive_seed(args.seed, i as u64),
            SpectrumMode::Full,
        )
        .map_err(num_err("sim::monte_carlo"))?;
        let pooled: Vec<f64> = stats
            .results
            .iter()
            .flat_map(|r| r.eigenvalues.iter().copied())
            .collect();
        let bins = sim::histogram(&pooled, args.bins);

        let meta = RunMetadata::new(&m.content_hash())
            .with_seed(args.seed)
            .with_n(n)
            .with_samples(samples)
            .with_extra("command", "reproduce".to_string())
            .with_extra("experiment", "fig1".to_string())
            .with_extra("panel", format!("{i}"))
            .with_extra("snrTarget", format!("{target}"))
            .with_extra("t", format!("{t}"))
            .with_extra("bins", format!("{}", args.bins));

        let density_name = format!("fig1_panel{i}_density.csv");
        let histogram_name = format!("fig1_panel{i}_histogram.csv");
        if args.format.json() {
            let name = format!("fig1_panel{i}_prediction.json");
            write_out(&args.out, &name, |w| {
                output::write_prediction_json(w, &pred, &meta)
            })?;
            written.push(name);
        }
        if args.format.csv() {
            write_out(&args.out, &density_name, |w| {
                output::write_density_csv(w, &curve, &meta)
            })?;
            write_out(&args.out, &histogram_name, |w| {
                output::write_histogram_csv(w, &bins, &meta)
            })?;
            written.push(density_name.clone());
            written.push(histogram_name.clone());
        }

        println!(
            "  panel {i}: snr {target} (t = {t}), phase {}, top eigenvalue {} (std {})",
            phase_name(pred.phase),
            stats.top_value_mean,
            stats.top_value_std
        );
        specs.push(PanelPlotSpec {
            title: format!("snr {target}"),
            density_csv: density_name,
            histogram_csv: histogram_name,
            total_count: pooled.len(),
            top_marker: Some(stats.top_value_mean),
        });
    }

    if args.format.csv() {
        let script = output::density_plot_script(&specs, "fig1.png");
        write_out(&args.out, "fig1.gp", |w| {
            io::Write::write_all(w, script.as_bytes())
        })?;
        written.push("fig1.gp".to_string());
    }
    println!("  wrote {} in {}", written.join(", "), args.out.display());
    Ok(())
}

/// Bundled experiment `fig2`: two overlap sweeps (an S diagonal entry and
/// the S off-diagonal entry) across snr 0.55..3.5 at N = 3000, ten
/// samples per stop, theory curves against Monte Carlo means.
fn reproduce_overlap_sweeps(args: &ReproduceArgs) -> Result<(), Failure> {
    let n = args.n.unwrap_or(3000);
    let samples = args.samples.unwrap_or(10);
    check_samples(samples)?;
    ensure_out_dir(&args.out)?;

    let shapes: [(&str, fn(f64) -> ModelParams); 2] = [
        ("diagonal", presets::overlap_sweep_a),
        ("offdiagonal", presets::overlap_sweep_b),
    ];
    println!(
        "reproduce fig2: two overlap sweeps, N = {n}, samples = {samples}, seed = {}",
        args.seed
    );

    let mut specs = Vec::new();
    let mut written = Vec::new();
    for (si, (name, family)) in shapes.iter().enumerate() {
        // Derive the swept parameter per target snr; the targets are the
        // interface, t is a consequence and goes into the metadata.
        let ts: Vec<f64> = OVERLAP_SWEEP_TARGETS
            .iter()
            .map(|&target| {
                presets::solve_t_for_snr(*family, target)
                    .map_err(num_err("presets::solve_t_for_snr"))
            })
            .collect::<Result<_, Failure>>()?;
        let first = family(ts[0]);
        check_n(n, &first, args.max_n)?;

        let rows: Vec<SweepRow> = ts
            .par_iter()
            .enumerate()
            .map(|(pi, &t)| {
                let m = family(t);
                let point_seed =
                    sim::derive_seed(sim::derive_seed(args.seed, si as u64), pi as u64);
                sweep_row(&m, t, n, samples, point_seed)
            })
            .collect::<Result<_, Failure>>()?;

        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let meta = RunMetadata::new(&first.content_hash())
            .with_seed(args.seed)
            .with_n(n)
            .with_samples(samples)
            .with_extra("command", "reproduce".to_string())
            .with_extra("experiment", "fig2".to_string())
            .with_extra("shape", name.to_string())
            .with_extra("snrTargets", join(&OVERLAP_SWEEP_TARGETS))
            .with_extra("ts", join(&ts));

        let csv_name = format!("fig2_{name}.csv");
        if args.format.csv() {
            write_out(&args.out, &csv_name, |w| {
                output::write_sweep_csv(w, &rows, &meta)
            })?;
            written.push(csv_name.clone());
        }
        if args.format.json() {
            let json_name = format!("fig2_{name}.json");
            write_out(&args.out, &json_name, |w| {
                output::write_sweep_json(w, &rows, &meta)
            })?;
            written.push(json_name);
        }

        println!("  shape {name}:");
        print_sweep_rows("snr stop", &rows);
        specs.push(SweepPlotSpec {
            title: format!("{name} sweep"),
            sweep_csv: csv_name,
            k: first.k(),
        });
    }

    if args.format.csv() {
        let script = output::sweep_plot_script(&specs, "fig2.png");
        write_out(&args.out, "fig2.gp", |w| {
            io::Write::write_all(w, script.as_bytes())
        })?;
        written.push("fig2.gp".to_string());
    }
    println!("  wrote {} in {}", written.join(", "), args.out.display());
    Ok(())
}
