//! Command-line driver for the phylograd engine.

mod bench;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use phylograd::backend::{Backend, BackendConfig, BackendKind};
use phylograd::core::{
    finite_difference_gradient, full_gradient, oracle_gradient_quadratic, EvalError, EvalOptions,
    Evaluator,
};
use phylograd::hmc::{hmc_sample, HmcConfig, Parameterization, Prior};
use phylograd::model::{GeneticCode, ModelConfig, ModelInstance};
use phylograd::sim;
use phylograd::treedata::{
    compress_patterns, parse_fasta, parse_newick, Alphabet, PatternizedAlignment, Phylogeny,
};

use report::{digest_inputs, RunReport};

#[derive(Parser)]
#[command(
    name = "phylograd",
    about = "Phylogenetic log-likelihoods and linear-time branch gradients \
             on a block-tiled data-parallel backend",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the alignment log-likelihood.
    Loglik(EvalArgs),
    /// Evaluate the gradient wrt all branch lengths, optionally checked
    /// against the verification oracles.
    Gradient(GradientArgs),
    /// Timing sweeps with per-kernel breakdowns and scaling-exponent fits.
    Bench(bench::BenchArgs),
    /// Hamiltonian Monte Carlo over branch-specific parameters.
    Hmc(HmcArgs),
    /// Simulate an alignment under a model along a tree.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlphabetArg {
    Nuc,
    Codon,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Serial,
    Parallel,
}

#[derive(Args)]
struct CommonArgs {
    /// Newick tree file.
    #[arg(long)]
    tree: PathBuf,
    /// FASTA alignment file.
    #[arg(long)]
    alignment: PathBuf,
    #[arg(long, value_enum, default_value = "nuc")]
    alphabet: AlphabetArg,
    /// JSON model configuration; defaults to Jukes-Cantor.
    #[arg(long = "model-config")]
    model_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "serial")]
    backend: BackendArg,
    /// Worker count for the parallel backend.
    #[arg(long, env = "PHYLOGRAD_WORKERS")]
    workers: Option<usize>,
    /// Override the column-block size for all state spaces.
    #[arg(long)]
    cbs: Option<usize>,
    /// Override the peeling-block size.
    #[arg(long)]
    pbs: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump compressed site patterns as TSV for debugging.
    #[arg(long = "dump-patterns")]
    dump_patterns: Option<PathBuf>,
    /// Disable per-node rescaling (debugging only).
    #[arg(long = "no-scaling")]
    no_scaling: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckArg {
    Fd,
    Quadratic,
    Both,
}

#[derive(Args)]
struct GradientArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Cross-check the gradient against an oracle and report deviations.
    #[arg(long, value_enum)]
    check: Option<CheckArg>,
    /// File of branch references (1-based child-node labels or tip names),
    /// one per line; the aggregated gradient over the set is reported.
    #[arg(long = "branch-set")]
    branch_set: Option<PathBuf>,
    /// Retain per-column contributions in the report.
    #[arg(long = "per-column")]
    per_column: bool,
}

#[derive(Args)]
struct HmcArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 200)]
    warmup: usize,
    #[arg(long = "step-size", default_value_t = 0.05)]
    step_size: f64,
    #[arg(long, default_value_t = 10)]
    leapfrog: usize,
    #[arg(long, value_enum, default_value = "branch-lengths")]
    parameterization: ParamArg,
    /// Chain TSV output path.
    #[arg(long = "chain-out")]
    chain_out: Option<PathBuf>,
    /// Diagnostics JSON output path.
    #[arg(long = "diagnostics-out")]
    diagnostics_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ParamArg {
    BranchLengths,
    RateScalars,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long = "model-config")]
    model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    sites: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// FASTA output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error category mapped to the stable exit codes: 2 validation,
/// 3 numerical degeneracy, 4 internal.
#[derive(Debug)]
enum CliError {
    Validation(String),
    Degenerate(String),
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Degenerate(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Degenerate(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::ImpossiblePattern { .. } => CliError::Degenerate(e.to_string()),
            EvalError::Validation(_) | EvalError::Model(_) => CliError::Validation(e.to_string()),
            EvalError::Sequencing(_) | EvalError::Plan(_) => CliError::Internal(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Loglik(args) => cmd_loglik(args),
        Command::Gradient(args) => cmd_gradient(args),
        Command::Bench(args) => bench::cmd_bench(args).map_err(CliError::Internal),
        Command::Hmc(args) => cmd_hmc(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

/// Reads a file, or stdin when the path is `-`.
fn read_file(path: &Path) -> Result<String, CliError> {
    if path == Path::new("-") {
        use std::io::Read as _;
        let mut text = String::new();
        std::io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| CliError::Validation(format!("cannot read stdin: {e}")))?;
        return Ok(text);
    }
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, content)
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", p.display()))),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

struct LoadedInputs {
    tree: Phylogeny,
    model: ModelInstance,
    alignment: PatternizedAlignment,
    backend: Backend,
    digest: String,
    backend_config: BackendConfig,
}

fn load_inputs(common: &CommonArgs) -> Result<LoadedInputs, CliError> {
    let tree_text = read_file(&common.tree)?;
    let alignment_text = read_file(&common.alignment)?;
    let config_text = match &common.model_config {
        Some(path) => read_file(path)?,
        None => serde_json::to_string(&ModelConfig::jukes_cantor()).unwrap(),
    };
    let digest = digest_inputs(&[&tree_text, &alignment_text, &config_text]);

    let tree = parse_newick(&tree_text).map_err(|e| CliError::Validation(e.to_string()))?;
    let model_config =
        ModelConfig::from_json(&config_text).map_err(|e| CliError::Validation(e.to_string()))?;
    let alphabet = match common.alphabet {
        AlphabetArg::Nuc => Alphabet::Nucleotide,
        AlphabetArg::Codon => Alphabet::Codon(Box::new(
            model_config.genetic_code().map_err(|e| CliError::Validation(e.to_string()))?,
        )),
    };
    if model_config.is_codon() && matches!(common.alphabet, AlphabetArg::Nuc) {
        return Err(CliError::Validation("codon models need --alphabet codon".to_string()));
    }
    let model = model_config.build().map_err(|e| CliError::Validation(e.to_string()))?;
    let raw = parse_fasta(&alignment_text, &alphabet)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let raw = raw.reorder(tree.tip_names()).map_err(|e| CliError::Validation(e.to_string()))?;
    let alignment = compress_patterns(&raw).map_err(|e| CliError::Validation(e.to_string()))?;
    if let Some(path) = &common.dump_patterns {
        std::fs::write(path, alignment.to_tsv())
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
    }

    let backend_config = backend_config_from(common);
    let backend =
        Backend::new(backend_config.clone()).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(LoadedInputs { tree, model, alignment, backend, digest, backend_config })
}

fn backend_config_from(common: &CommonArgs) -> BackendConfig {
    let workers = common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let mut config = match common.backend {
        BackendArg::Serial => BackendConfig::serial(),
        BackendArg::Parallel => BackendConfig {
            kind: BackendKind::Parallel,
            worker_count: workers.max(1),
            ..BackendConfig::default()
        },
    };
    if let Some(cbs) = common.cbs {
        config.cbs_nucleotide = cbs;
        config.cbs_large_state = cbs;
    }
    if let Some(pbs) = common.pbs {
        config.pbs = pbs;
    }
    config
}

fn cmd_loglik(args: EvalArgs) -> Result<(), CliError> {
    let inputs = load_inputs(&args.common)?;
    let options = EvalOptions { scaling: !args.common.no_scaling, keep_per_column: false };
    inputs.backend.reset_instrumentation();
    let start = std::time::Instant::now();
    let mut evaluator =
        Evaluator::new(&inputs.tree, &inputs.model, &inputs.alignment, &inputs.backend, options)?;
    evaluator.update_matrices()?;
    evaluator.postorder()?;
    let log_likelihood = evaluator.log_likelihood()?;
    let wall_ns = start.elapsed().as_nanos() as u64;
    let report = RunReport {
        schema_version: 1,
        command: "loglik".to_string(),
        inputs_digest: inputs.digest,
        log_likelihood,
        gradient: None,
        branch_set_gradient: None,
        oracle_checks: None,
        per_column: None,
        kernel_timings: inputs.backend.timing_report(wall_ns),
        backend: inputs.backend_config,
        wall_time_ns: wall_ns,
    };
    write_output(args.common.out.as_deref(), &report.to_json())
}

fn cmd_gradient(args: GradientArgs) -> Result<(), CliError> {
    let inputs = load_inputs(&args.common)?;
    let options =
        EvalOptions { scaling: !args.common.no_scaling, keep_per_column: args.per_column };
    let report =
        full_gradient(&inputs.tree, &inputs.model, &inputs.alignment, &inputs.backend, options)?;

    let oracle_checks = match args.check {
        None => None,
        Some(which) => {
            let mut checks = serde_json::Map::new();
            if matches!(which, CheckArg::Quadratic | CheckArg::Both) {
                let oracle =
                    oracle_gradient_quadratic(&inputs.tree, &inputs.model, &inputs.alignment)?;
                checks.insert(
                    "quadraticMaxRelDev".to_string(),
                    serde_json::json!(max_rel_dev(&report.per_branch, &oracle)),
                );
            }
            if matches!(which, CheckArg::Fd | CheckArg::Both) {
                let fd = finite_difference_gradient(
                    &inputs.tree,
                    &inputs.model,
                    &inputs.alignment,
                    1e-5,
                )?;
                checks.insert(
                    "fdMaxRelDev".to_string(),
                    serde_json::json!(max_rel_dev(&report.per_branch, &fd)),
                );
            }
            Some(serde_json::Value::Object(checks))
        }
    };

    let branch_set_gradient = match &args.branch_set {
        None => None,
        Some(path) => {
            let text = read_file(path)?;
            let mut branches = Vec::new();
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                branches.push(
                    inputs
                        .tree
                        .branch_by_reference(line)
                        .map_err(|e| CliError::Validation(e.to_string()))?,
                );
            }
            Some(Evaluator::reduce_branch_set(&report.per_branch, &branches))
        }
    };

    let out = RunReport {
        schema_version: 1,
        command: "gradient".to_string(),
        inputs_digest: inputs.digest,
        log_likelihood: report.log_likelihood,
        gradient: Some(report.per_branch),
        branch_set_gradient,
        oracle_checks,
        per_column: report.per_column,
        kernel_timings: report.timings,
        backend: inputs.backend_config,
        wall_time_ns: report.wall_ns,
    };
    write_output(args.common.out.as_deref(), &out.to_json())
}

fn cmd_hmc(args: HmcArgs) -> Result<(), CliError> {
    let inputs = load_inputs(&args.common)?;
    let parameterization = match args.parameterization {
        ParamArg::BranchLengths => Parameterization::BranchLengths,
        ParamArg::RateScalars => Parameterization::RateScalars,
    };
    let config = HmcConfig {
        step_size: args.step_size,
        leapfrog_steps: args.leapfrog,
        iterations: args.iterations,
        warmup: args.warmup,
        seed: args.common.seed,
        parameterization,
        ..HmcConfig::default()
    };
    let prior = Prior::default_for(parameterization);
    let run = hmc_sample(
        &inputs.tree,
        &inputs.model,
        &inputs.alignment,
        prior,
        &config,
        &inputs.backend,
    )
    .map_err(|e| match e {
        phylograd::hmc::HmcError::Eval(inner) => CliError::from(inner),
        phylograd::hmc::HmcError::NonFiniteStart => CliError::Degenerate(e.to_string()),
        other => CliError::Validation(other.to_string()),
    })?;

    let mut tsv = String::from("iteration\tlogPosterior");
    for branch in 0..inputs.tree.branch_count() {
        tsv.push_str(&format!("\tbranch_{}", inputs.tree.label(branch)));
    }
    tsv.push('\n');
    for sample in &run.chain {
        tsv.push_str(&format!("{}\t{:.10}", sample.iteration, sample.log_posterior));
        for p in &sample.params {
            tsv.push_str(&format!("\t{p:.10}"));
        }
        tsv.push('\n');
    }
    write_output(args.chain_out.as_deref(), &tsv)?;
    let diagnostics = serde_json::to_string_pretty(&run.diagnostics)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    match &args.diagnostics_out {
        Some(path) => write_output(Some(path), &diagnostics),
        None => {
            eprintln!("{diagnostics}");
            Ok(())
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let tree_text = read_file(&args.tree)?;
    let tree = parse_newick(&tree_text).map_err(|e| CliError::Validation(e.to_string()))?;
    let config_text = match &args.model_config {
        Some(path) => read_file(path)?,
        None => serde_json::to_string(&ModelConfig::jukes_cantor()).unwrap(),
    };
    let model_config =
        ModelConfig::from_json(&config_text).map_err(|e| CliError::Validation(e.to_string()))?;
    let model = model_config.build().map_err(|e| CliError::Validation(e.to_string()))?;
    let code: Option<GeneticCode> = model_config
        .is_codon()
        .then(|| model_config.genetic_code())
        .transpose()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let mut rng = sim::seeded_rng(args.seed);
    let alignment = sim::simulate_alignment(&mut rng, &tree, &model, args.sites);
    let fasta = sim::alignment_to_fasta(&alignment, code.as_ref());
    write_output(args.out.as_deref(), &fasta)
}

fn max_rel_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}
