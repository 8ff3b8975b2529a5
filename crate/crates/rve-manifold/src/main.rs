//! Command-line front end: dataset generation, manifold training,
//! cross-validation, reconstruction with gating, and test evaluation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure beyond the
//! exclusion budget, 4 on-disk format error, 5 numerical failure.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rve_manifold::error::{Error, StorageError};
use rve_manifold::io;
use rve_manifold::lle;
use rve_manifold::mesh::{MaterialParams, MeshConfig};
use rve_manifold::phase::{LoadCase, SolverControls};
use rve_manifold::pipeline::{
    self, cross_validate, evaluate_with_manifold, generate_dataset, Dataset, Decision,
    OutputKind,
};

#[derive(Parser, Serialize)]
#[command(name = "rve-manifold", version, about = "Phase-field RVE fracture with an LLE surrogate")]
struct Cli {
    /// Worker thread cap for generation and cross-validation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Cmd {
    /// Generate a training dataset from random crack seeds.
    GenData(GenDataArgs),
    /// Fit an LLE manifold on a dataset's inputs.
    Train(TrainArgs),
    /// Cross-validate a (k1, k2, dim) hyperparameter grid.
    Cv(CvArgs),
    /// Reconstruct outputs for new inputs and print gate verdicts.
    Reconstruct(ReconstructArgs),
    /// Evaluate reconstruction errors on a held-out test set.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Serialize, Clone)]
struct MaterialArgs {
    /// Matrix Lamé λ (GPa).
    #[arg(long, default_value_t = 121.15)]
    lambda_m: f64,
    /// Matrix Lamé μ (GPa).
    #[arg(long, default_value_t = 80.77)]
    mu_m: f64,
    /// Fiber Lamé λ₁ (GPa).
    #[arg(long, default_value_t = 105.58)]
    lambda_f: f64,
    /// Fiber Lamé μ₁ (GPa).
    #[arg(long, default_value_t = 172.27)]
    mu_f: f64,
    /// Energy release rate g_c (mJ/mm²).
    #[arg(long, default_value_t = 2.7)]
    gc: f64,
    /// Regularization length scale l (mm).
    #[arg(long, default_value_t = 40.0)]
    length_scale: f64,
    /// Residual stiffness k.
    #[arg(long, default_value_t = 1e-6)]
    k_res: f64,
}

impl MaterialArgs {
    fn params(&self) -> Result<MaterialParams, Error> {
        MaterialParams::new(
            self.lambda_m,
            self.mu_m,
            self.lambda_f,
            self.mu_f,
            self.gc,
            self.length_scale,
            self.k_res,
        )
    }
}

#[derive(Args, Serialize)]
struct GenDataArgs {
    /// Number of samples to generate.
    #[arg(long, default_value_t = 496)]
    n: usize,
    /// Elements per side.
    #[arg(long, default_value_t = 50)]
    mesh_n: usize,
    /// RVE half-width L (mm).
    #[arg(long, default_value_t = 500.0)]
    rve_size: f64,
    /// Fiber radius (mm); defaults to 0.4·L.
    #[arg(long)]
    fiber_radius: Option<f64>,
    /// Macroscopic strain ε̄₂₂.
    #[arg(long, default_value_t = 1.4e-4)]
    eps22: f64,
    /// RNG seed for crack placement.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Staggered stopping tolerance on ‖Δd‖_∞.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Staggered iteration cap.
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[command(flatten)]
    material: MaterialArgs,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Input dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Neighbor count k1.
    #[arg(long, default_value_t = 20)]
    k1: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 80)]
    dims: usize,
    /// Relative Gram regularization.
    #[arg(long, default_value_t = 1e-3)]
    reg: f64,
    /// Output model directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CvArgs {
    /// Input dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Fold count n.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Comma-separated k1 values.
    #[arg(long, default_value = "20")]
    k1: String,
    /// Comma-separated k2 values, or "same" for k2 = k1.
    #[arg(long, default_value = "same")]
    k2: String,
    /// Comma-separated embedding dimensions.
    #[arg(long, default_value = "80")]
    dims: String,
    /// Output to score: pf (phase field) or stress.
    #[arg(long, default_value = "pf")]
    output: String,
    /// Relative Gram regularization.
    #[arg(long, default_value_t = 1e-3)]
    reg: f64,
    /// RNG seed for the fold shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output report directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ReconstructArgs {
    /// Fitted manifold directory.
    #[arg(long)]
    model: PathBuf,
    /// Training dataset directory (provides the outputs to combine).
    #[arg(long)]
    train: PathBuf,
    /// Dataset directory whose inputs are reconstructed.
    #[arg(long)]
    inputs: PathBuf,
    /// Reconstruction neighbor count k2.
    #[arg(long, default_value_t = 20)]
    k2: usize,
    /// Gate threshold; defaults to the 90th percentile of leave-one-out
    /// training distances.
    #[arg(long)]
    tau: Option<f64>,
    /// Output to reconstruct: pf or stress.
    #[arg(long, default_value = "pf")]
    output: String,
    /// Optional report directory (gate_report.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    /// Training dataset directory.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Test dataset directory.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Single dataset to split instead of --train/--test.
    #[arg(long, conflicts_with_all = ["train", "test"])]
    data: Option<PathBuf>,
    /// Tail rows held out as the test set when using --data.
    #[arg(long, default_value_t = 32)]
    test_count: usize,
    #[arg(long, default_value_t = 20)]
    k1: usize,
    #[arg(long, default_value_t = 20)]
    k2: usize,
    #[arg(long, default_value_t = 80)]
    dims: usize,
    #[arg(long, default_value_t = 1e-3)]
    reg: f64,
    /// Output report directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .is_err()
        {
            eprintln!("error: could not configure {t} worker threads");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Solver(_) => 3,
        Error::Storage(_) => 4,
        Error::Numerical(_) | Error::Dimension(_) => 5,
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.cmd {
        Cmd::GenData(a) => cmd_gen_data(cli, a),
        Cmd::Train(a) => cmd_train(cli, a),
        Cmd::Cv(a) => cmd_cv(cli, a),
        Cmd::Reconstruct(a) => cmd_reconstruct(cli, a),
        Cmd::Evaluate(a) => cmd_evaluate(cli, a),
    }
}

fn echo_config(dir: &Path, cli: &Cli) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| StorageError::io(dir, e))?;
    #[derive(Serialize)]
    struct Echo<'a> {
        threads: Option<usize>,
        #[serde(flatten)]
        cmd: &'a Cmd,
    }
    let text = serde_json::to_string_pretty(&Echo {
        threads: cli.threads,
        cmd: &cli.cmd,
    })
    .map_err(|e| StorageError::Format(e.to_string()))?;
    let path = dir.join("config.json");
    std::fs::write(&path, text).map_err(|e| StorageError::io(&path, e))?;
    Ok(())
}

fn parse_output(s: &str) -> Result<OutputKind, Error> {
    match s {
        "pf" => Ok(OutputKind::PhaseField),
        "stress" => Ok(OutputKind::Stress),
        other => Err(Error::Config(format!(
            "unknown output selector {other:?} (expected pf or stress)"
        ))),
    }
}

fn parse_list(s: &str, flag: &str) -> Result<Vec<usize>, Error> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad value {t:?} in --{flag}")))
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, Error> {
    let file = std::fs::File::create(path).map_err(|e| StorageError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn fmt(v: f64) -> String {
    // Shortest round-trip representation; keeps reports byte-stable.
    format!("{v}")
}

fn cmd_gen_data(cli: &Cli, a: &GenDataArgs) -> Result<(), Error> {
    let mat = a.material.params()?;
    let mesh_cfg = MeshConfig {
        half_width: a.rve_size,
        n: a.mesh_n,
        fiber_radius: a.fiber_radius.unwrap_or(0.4 * a.rve_size),
    };
    let load = LoadCase::uniaxial_yy(a.eps22);
    let ctrl = SolverControls {
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let (ds, report) = generate_dataset(a.n, &mesh_cfg, &mat, &load, &ctrl, a.seed)?;
    for (seed, msg) in &report.excluded {
        eprintln!("excluded seed {:?}: {msg}", seed.nodes);
    }
    io::save_dataset(&ds, &a.out)?;
    echo_config(&a.out, cli)?;
    println!(
        "wrote {} samples ({} excluded) to {}",
        ds.len(),
        report.excluded.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<(), Error> {
    let ds = io::load_dataset(&a.data)?;
    let man = lle::fit(ds.x.clone(), a.k1, a.dims, a.reg)?;
    io::save_manifold(&man, &a.out)?;
    echo_config(&a.out, cli)?;

    // 2D view of the embedding (first two manifold coordinates).
    let mut w = csv_writer(&a.out.join("embedding_2d.csv"))?;
    w.write_record(["index", "y1", "y2"]).map_err(csv_err)?;
    for i in 0..man.y.nrows() {
        let y1 = man.y[(i, 0)];
        let y2 = if man.dim > 1 { man.y[(i, 1)] } else { 0.0 };
        w.write_record([i.to_string(), fmt(y1), fmt(y2)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| StorageError::Format(e.to_string()))?;
    println!(
        "trained manifold: N={}, k1={}, dims={} -> {}",
        man.x.nrows(),
        man.k1,
        man.dim,
        a.out.display()
    );
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    StorageError::Format(format!("csv: {e}")).into()
}

fn cmd_cv(cli: &Cli, a: &CvArgs) -> Result<(), Error> {
    let ds = io::load_dataset(&a.data)?;
    let output = parse_output(&a.output)?;
    let k1s = parse_list(&a.k1, "k1")?;
    let dims = parse_list(&a.dims, "dims")?;
    let mut grid = Vec::new();
    if a.k2 == "same" {
        for &k1 in &k1s {
            for &d in &dims {
                grid.push((k1, k1, d));
            }
        }
    } else {
        let k2s = parse_list(&a.k2, "k2")?;
        for &k1 in &k1s {
            for &k2 in &k2s {
                for &d in &dims {
                    grid.push((k1, k2, d));
                }
            }
        }
    }
    let report = cross_validate(&ds, a.folds, &grid, output, a.reg, a.seed)?;
    if report.truncated_rows > 0 {
        eprintln!(
            "truncated {} rows to fit {} folds ({} rows used)",
            report.truncated_rows, report.folds, report.used_rows
        );
    }

    echo_config(&a.out, cli)?;
    let mut w = csv_writer(&a.out.join("cv_grid.csv"))?;
    w.write_record(["k1", "k2", "dim", "r", "status"])
        .map_err(csv_err)?;
    for c in &report.cells {
        let status = c.failure.clone().unwrap_or_else(|| "ok".into());
        w.write_record([
            c.k1.to_string(),
            c.k2.to_string(),
            c.dim.to_string(),
            fmt(c.mean),
            status,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| StorageError::Format(e.to_string()))?;

    let mut wf = csv_writer(&a.out.join("cv_folds.csv"))?;
    wf.write_record(["k1", "k2", "dim", "fold", "r"])
        .map_err(csv_err)?;
    for c in &report.cells {
        for (j, e) in c.fold_errors.iter().enumerate() {
            wf.write_record([
                c.k1.to_string(),
                c.k2.to_string(),
                c.dim.to_string(),
                j.to_string(),
                fmt(*e),
            ])
            .map_err(csv_err)?;
        }
    }
    wf.flush().map_err(|e| StorageError::Format(e.to_string()))?;

    // Best error per embedding dimension (elbow curve).
    let mut by_dim: Vec<usize> = report.cells.iter().map(|c| c.dim).collect();
    by_dim.sort_unstable();
    by_dim.dedup();
    let mut wd = csv_writer(&a.out.join("cv_vs_dim.csv"))?;
    wd.write_record(["dim", "r"]).map_err(csv_err)?;
    for d in by_dim {
        let best = report
            .cells
            .iter()
            .filter(|c| c.dim == d && c.failure.is_none())
            .map(|c| c.mean)
            .fold(f64::INFINITY, f64::min);
        wd.write_record([d.to_string(), fmt(best)]).map_err(csv_err)?;
    }
    wd.flush().map_err(|e| StorageError::Format(e.to_string()))?;
    println!("wrote CV reports for {} cells to {}", report.cells.len(), a.out.display());
    Ok(())
}

fn cmd_reconstruct(cli: &Cli, a: &ReconstructArgs) -> Result<(), Error> {
    let man = io::load_manifold(&a.model)?;
    let train = io::load_dataset(&a.train)?;
    let inputs = io::load_dataset(&a.inputs)?;
    if train.x.nrows() != man.x.nrows() {
        return Err(Error::Dimension(format!(
            "training dataset has {} rows but the manifold was fitted on {}",
            train.x.nrows(),
            man.x.nrows()
        )));
    }
    let output = parse_output(&a.output)?;
    let z_train = train.outputs(output);
    let tau = match a.tau {
        Some(t) => t,
        None => pipeline::percentile_threshold(&man, a.k2, 90.0)?,
    };

    let mut rows = Vec::new();
    for i in 0..inputs.len() {
        let query: Vec<f64> = inputs.x.row(i).iter().copied().collect();
        let rec = lle::reconstruct(&man, &query, a.k2, z_train)?;
        let verdict = pipeline::gate(rec.distance, tau)?;
        let decision = match verdict.decision {
            Decision::Reconstruct => "Reconstruct",
            Decision::HighFidelity => "HighFidelity",
        };
        println!(
            "input {i}: distance={} tau={} verdict={decision}",
            fmt(rec.distance),
            fmt(tau)
        );
        rows.push((i, rec.distance, rec.fit_residual, decision));
    }

    if let Some(out) = &a.out {
        echo_config(out, cli)?;
        let mut w = csv_writer(&out.join("gate_report.csv"))?;
        w.write_record(["index", "distance", "fit_residual", "tau", "verdict"])
            .map_err(csv_err)?;
        for (i, d, fr, v) in rows {
            w.write_record([i.to_string(), fmt(d), fmt(fr), fmt(tau), v.to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| StorageError::Format(e.to_string()))?;
    }
    Ok(())
}

fn load_eval_pair(a: &EvaluateArgs) -> Result<(Dataset, Dataset), Error> {
    match (&a.train, &a.test, &a.data) {
        (Some(tr), Some(te), None) => Ok((io::load_dataset(tr)?, io::load_dataset(te)?)),
        (None, None, Some(d)) => io::load_dataset(d)?.split_tail(a.test_count),
        _ => Err(Error::Config(
            "provide either --train and --test, or --data with --test-count".into(),
        )),
    }
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<(), Error> {
    let (train, test) = load_eval_pair(a)?;
    if !train.meta.compatible_with(&test.meta) {
        return Err(Error::Config(
            "train and test datasets have different mesh/material/load metadata".into(),
        ));
    }
    let man = lle::fit(train.x.clone(), a.k1, a.dims, a.reg)?;
    let pf = evaluate_with_manifold(&man, &train, &test, a.k2, OutputKind::PhaseField)?;
    let sig = evaluate_with_manifold(&man, &train, &test, a.k2, OutputKind::Stress)?;

    echo_config(&a.out, cli)?;
    write_eval_csv(&a.out.join("error_vs_distance.csv"), &pf)?;
    write_eval_csv(&a.out.join("stress_error_vs_distance.csv"), &sig)?;

    // Phase-field error histogram, 10 uniform bins.
    let max_err = pf
        .records
        .iter()
        .map(|r| r.error)
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let bins = 10usize;
    let width = max_err / bins as f64;
    let mut counts = vec![0usize; bins];
    for r in &pf.records {
        let b = ((r.error / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let mut w = csv_writer(&a.out.join("error_hist.csv"))?;
    w.write_record(["bin_lo", "bin_hi", "count"]).map_err(csv_err)?;
    for (b, c) in counts.iter().enumerate() {
        w.write_record([
            fmt(b as f64 * width),
            fmt((b + 1) as f64 * width),
            c.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| StorageError::Format(e.to_string()))?;

    println!(
        "evaluated {} test points: phase-field pearson r = {}, stress pearson r = {}",
        pf.records.len(),
        fmt(pf.pearson_r),
        fmt(sig.pearson_r)
    );
    Ok(())
}

fn write_eval_csv(path: &Path, report: &pipeline::EvalReport) -> Result<(), Error> {
    let mut w = csv_writer(path)?;
    w.write_record(["index", "error", "distance", "fit_residual"])
        .map_err(csv_err)?;
    for r in &report.records {
        w.write_record([
            r.index.to_string(),
            fmt(r.error),
            fmt(r.distance),
            fmt(r.fit_residual),
        ])
        .map_err(csv_err)?;
    }
    w.write_record([
        "pearson_r".to_string(),
        fmt(report.pearson_r),
        String::new(),
        String::new(),
    ])
    .map_err(csv_err)?;
    w.flush().map_err(|e| StorageError::Format(e.to_string()))?;
    Ok(())
}
