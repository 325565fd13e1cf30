//! Benchmark sweeps: wall times, per-kernel breakdowns, and scaling
//! exponents.

use std::path::PathBuf;

use clap::{Args, ValueEnum};

use phylograd::backend::{Backend, BackendConfig, BackendKind};
use phylograd::core::{full_gradient, oracle_gradient_quadratic, EvalOptions};
use phylograd::model::{
    discrete_gamma, CodonModelParams, GeneticCode, ModelInstance, RateCategories, RateMatrix,
};
use phylograd::sim;
use phylograd::treedata::{uncompressed_patterns, PatternizedAlignment, Phylogeny};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepArg {
    /// Taxon-count sweep at fixed columns: fits wall-time exponents for
    /// the linear-time gradient and the quadratic oracle.
    N,
    /// Column sweep at codon state size: per-column throughput shape.
    C,
    /// Worker sweep on the parallel backend.
    Workers,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "n")]
    sweep: SweepArg,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// CSV output path for the raw rows (stdout JSON carries the summary).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated taxon counts for the N sweep.
    #[arg(long = "n-list", default_value = "16,32,64,128")]
    n_list: String,
    /// Comma-separated column counts for the C sweep.
    #[arg(long = "c-list", default_value = "1,64,256,1024,2048")]
    c_list: String,
    /// Comma-separated worker counts for the workers sweep.
    #[arg(long = "workers-list", default_value = "1,2,4,8")]
    workers_list: String,
    /// Columns for the N sweep.
    #[arg(long, default_value_t = 1000)]
    sites: usize,
    /// Taxa for the C and workers sweeps.
    #[arg(long, default_value_t = 62)]
    tips: usize,
    /// Rate categories for the C and workers sweeps.
    #[arg(long, default_value_t = 1)]
    rates: usize,
    #[arg(long, value_enum, default_value = "serial")]
    backend: BenchBackendArg,
    #[arg(long)]
    workers: Option<usize>,
    /// Timing repeats; the minimum wall time is reported.
    #[arg(long, default_value_t = 2)]
    repeats: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchBackendArg {
    Serial,
    Parallel,
}

struct CsvRows {
    rows: Vec<String>,
}

impl CsvRows {
    fn new() -> Self {
        CsvRows { rows: vec!["N,C,S,backend,workers,kernel,nsTotal,calls".to_string()] }
    }

    fn push_timings(
        &mut self,
        n: usize,
        c: usize,
        s: usize,
        backend: &str,
        workers: usize,
        timings: &phylograd::backend::TimingReport,
    ) {
        for k in &timings.kernels {
            self.rows.push(format!(
                "{n},{c},{s},{backend},{workers},{},{},{}",
                k.name, k.ns_total, k.calls
            ));
        }
    }

    fn push_total(
        &mut self,
        n: usize,
        c: usize,
        s: usize,
        backend: &str,
        workers: usize,
        kernel: &str,
        ns: u64,
    ) {
        self.rows.push(format!("{n},{c},{s},{backend},{workers},{kernel},{ns},1"));
    }

    fn write(&self, path: Option<&PathBuf>) -> Result<(), String> {
        let text = self.rows.join("\n") + "\n";
        match path {
            Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write csv: {e}")),
            None => {
                eprintln!("{text}");
                Ok(())
            }
        }
    }
}

fn parse_list(text: &str) -> Result<Vec<usize>, String> {
    text.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("bad sweep list entry `{t}`: {e}")))
        .collect()
}

fn jc_model() -> ModelInstance {
    ModelInstance::new(
        RateMatrix::gtr(&[1.0; 6], &[0.25; 4]).unwrap(),
        RateCategories::single(),
    )
}

fn codon_model(rates: usize) -> ModelInstance {
    let q = RateMatrix::codon_m0(&CodonModelParams {
        kappa: 2.0,
        omega: 0.5,
        codon_frequencies: None,
        genetic_code: GeneticCode::universal(),
    })
    .unwrap();
    let cats = if rates <= 1 { RateCategories::single() } else { discrete_gamma(0.5, rates).unwrap() };
    ModelInstance::new(q, cats)
}

/// Simulated fixture with exactly `sites` columns (kept uncompressed so the
/// pattern count is pinned).
fn fixture(
    seed: u64,
    tips: usize,
    sites: usize,
    model: &ModelInstance,
) -> (Phylogeny, PatternizedAlignment) {
    let mut rng = sim::seeded_rng(seed);
    let tree = sim::random_tree(&mut rng, tips, (0.02, 0.25));
    let raw = sim::simulate_alignment(&mut rng, &tree, model, sites);
    (tree, uncompressed_patterns(&raw))
}

fn time_full_gradient(
    tree: &Phylogeny,
    model: &ModelInstance,
    alignment: &PatternizedAlignment,
    backend: &Backend,
    repeats: usize,
) -> Result<(u64, phylograd::backend::TimingReport), String> {
    // One untimed run warms caches and the allocator.
    full_gradient(tree, model, alignment, backend, EvalOptions::default())
        .map_err(|e| e.to_string())?;
    let mut best = u64::MAX;
    let mut timings = phylograd::backend::TimingReport::default();
    for _ in 0..repeats.max(1) {
        let report = full_gradient(tree, model, alignment, backend, EvalOptions::default())
            .map_err(|e| e.to_string())?;
        if report.wall_ns < best {
            best = report.wall_ns;
            timings = report.timings.clone();
        }
    }
    Ok((best, timings))
}

fn time_quadratic_oracle(
    tree: &Phylogeny,
    model: &ModelInstance,
    alignment: &PatternizedAlignment,
    repeats: usize,
) -> Result<u64, String> {
    let mut best = u64::MAX;
    for _ in 0..repeats.max(1) {
        let start = std::time::Instant::now();
        oracle_gradient_quadratic(tree, model, alignment).map_err(|e| e.to_string())?;
        best = best.min(start.elapsed().as_nanos() as u64);
    }
    Ok(best)
}

/// Least-squares slope of ln(time) against ln(x).
pub fn fit_exponent(points: &[(usize, u64)]) -> f64 {
    let logs: Vec<(f64, f64)> =
        points.iter().map(|&(x, y)| ((x as f64).ln(), (y.max(1) as f64).ln())).collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let var: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    cov / var
}

fn make_backend(args: &BenchArgs) -> Result<(Backend, String, usize), String> {
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match args.backend {
        BenchBackendArg::Serial => Ok((Backend::serial(), "serial".to_string(), 1)),
        BenchBackendArg::Parallel => {
            let backend = Backend::new(BackendConfig {
                kind: BackendKind::Parallel,
                worker_count: workers,
                ..BackendConfig::default()
            })
            .map_err(|e| e.to_string())?;
            Ok((backend, "parallel".to_string(), workers))
        }
    }
}

pub fn cmd_bench(args: BenchArgs) -> Result<(), String> {
    match args.sweep {
        SweepArg::N => n_sweep(&args),
        SweepArg::C => c_sweep(&args),
        SweepArg::Workers => workers_sweep(&args),
    }
}

fn n_sweep(args: &BenchArgs) -> Result<(), String> {
    let n_list = parse_list(&args.n_list)?;
    let (backend, backend_name, workers) = make_backend(args)?;
    let model = jc_model();
    let mut csv = CsvRows::new();
    let mut full_points = Vec::new();
    let mut oracle_points = Vec::new();
    let mut points_json = Vec::new();
    for &n in &n_list {
        let (tree, alignment) = fixture(args.seed + n as u64, n, args.sites, &model);
        let c = alignment.pattern_count();
        let (full_ns, timings) =
            time_full_gradient(&tree, &model, &alignment, &backend, args.repeats)?;
        csv.push_timings(n, c, 4, &backend_name, workers, &timings);
        csv.push_total(n, c, 4, &backend_name, workers, "fullGradientWall", full_ns);
        let oracle_ns = time_quadratic_oracle(&tree, &model, &alignment, args.repeats)?;
        csv.push_total(n, c, 4, &backend_name, workers, "quadraticOracleWall", oracle_ns);
        full_points.push((n, full_ns));
        oracle_points.push((n, oracle_ns));
        points_json.push(serde_json::json!({
            "n": n, "c": c, "fullGradientNs": full_ns, "quadraticOracleNs": oracle_ns,
        }));
    }
    csv.write(args.out.as_ref())?;
    let summary = serde_json::json!({
        "schemaVersion": 1,
        "sweep": "n",
        "sites": args.sites,
        "backend": backend_name,
        "workers": workers,
        "points": points_json,
        "exponents": {
            "fullGradient": fit_exponent(&full_points),
            "quadraticOracle": fit_exponent(&oracle_points),
        },
    });
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(())
}

fn c_sweep(args: &BenchArgs) -> Result<(), String> {
    let c_list = parse_list(&args.c_list)?;
    let (backend, backend_name, workers) = make_backend(args)?;
    let model = codon_model(args.rates);
    let mut csv = CsvRows::new();
    let mut points_json = Vec::new();
    let mut per_column: Vec<(usize, f64)> = Vec::new();
    for &c in &c_list {
        let (tree, alignment) = fixture(args.seed + c as u64, args.tips, c, &model);
        let (full_ns, timings) =
            time_full_gradient(&tree, &model, &alignment, &backend, args.repeats)?;
        csv.push_timings(args.tips, c, 61, &backend_name, workers, &timings);
        csv.push_total(args.tips, c, 61, &backend_name, workers, "fullGradientWall", full_ns);
        let ns_per_column = full_ns as f64 / c as f64;
        per_column.push((c, ns_per_column));
        points_json.push(serde_json::json!({
            "c": c, "fullGradientNs": full_ns, "nsPerColumn": ns_per_column,
        }));
    }
    csv.write(args.out.as_ref())?;
    let ratio = ratio_of(&per_column, 2048, 1024);
    let summary = serde_json::json!({
        "schemaVersion": 1,
        "sweep": "c",
        "tips": args.tips,
        "backend": backend_name,
        "workers": workers,
        "points": points_json,
        "perColumnRatio2048v1024": ratio,
    });
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(())
}

fn ratio_of(per_column: &[(usize, f64)], num: usize, den: usize) -> Option<f64> {
    let a = per_column.iter().find(|&&(c, _)| c == num)?.1;
    let b = per_column.iter().find(|&&(c, _)| c == den)?.1;
    Some(a / b)
}

fn workers_sweep(args: &BenchArgs) -> Result<(), String> {
    let workers_list = parse_list(&args.workers_list)?;
    let model = codon_model(args.rates);
    let (tree, alignment) = fixture(args.seed, args.tips, 256, &model);
    let mut csv = CsvRows::new();
    let serial = Backend::serial();
    let (serial_ns, timings) =
        time_full_gradient(&tree, &model, &alignment, &serial, args.repeats)?;
    csv.push_timings(args.tips, alignment.pattern_count(), 61, "serial", 1, &timings);
    csv.push_total(
        args.tips,
        alignment.pattern_count(),
        61,
        "serial",
        1,
        "fullGradientWall",
        serial_ns,
    );
    let mut points_json = Vec::new();
    for &w in &workers_list {
        let backend = Backend::new(BackendConfig {
            kind: BackendKind::Parallel,
            worker_count: w,
            ..BackendConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let (ns, timings) = time_full_gradient(&tree, &model, &alignment, &backend, args.repeats)?;
        csv.push_timings(args.tips, alignment.pattern_count(), 61, "parallel", w, &timings);
        csv.push_total(
            args.tips,
            alignment.pattern_count(),
            61,
            "parallel",
            w,
            "fullGradientWall",
            ns,
        );
        points_json.push(serde_json::json!({
            "workers": w,
            "fullGradientNs": ns,
            "speedupVsSerial": serial_ns as f64 / ns as f64,
        }));
    }
    csv.write(args.out.as_ref())?;
    let summary = serde_json::json!({
        "schemaVersion": 1,
        "sweep": "workers",
        "tips": args.tips,
        "serialNs": serial_ns,
        "availableParallelism": std::thread::available_parallelism().map_or(1, |n| n.get()),
        "points": points_json,
    });
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(())
}
