//! Command-line front end: field sampling, graph generation, convergence
//! studies, and the wall-clock scaling sweep. Reports go to stdout or a
//! file as CSV; one-line summaries go to stderr.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use graphrf::{
    barabasi_albert, default_test_graph, dyadic_width, memstats, sample_field, write_cov_csv,
    write_field_csv, write_perf_csv, write_strong_csv, CovConfig, MassMode, Mesh, MetricGraph,
    PerfConfig, PerfTask, SampleConfig, StrongConfig, DEFAULT_COV_NODE_LIMIT, DEFAULT_PCG_TOL,
};

// Counting allocations lets `perf` report peak memory per cell.
#[global_allocator]
static ALLOC: memstats::TrackingAllocator = memstats::TrackingAllocator;

type AppResult = Result<(), Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(
    name = "graphrf",
    version,
    about = "Whittle-Matern Gaussian random fields on metric graphs"
)]
struct Cli {
    /// Cap the worker pool; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one field realization and write node values as CSV.
    Sample(SampleArgs),
    /// Generate a preferential-attachment graph in the text format.
    GenGraph(GenGraphArgs),
    /// Strong-error convergence study against an overkill reference.
    StrongError(StrongArgs),
    /// Deterministic covariance-error convergence study.
    CovError(CovArgs),
    /// Wall-clock scaling sweep over generated graphs.
    Perf(PerfArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Lumped,
    Consistent,
}

impl From<ModeArg> for MassMode {
    fn from(m: ModeArg) -> MassMode {
        match m {
            ModeArg::Lumped => MassMode::Lumped,
            ModeArg::Consistent => MassMode::Consistent,
        }
    }
}

#[derive(Args)]
struct SampleArgs {
    /// Graph file; omit for the built-in four-edge test graph.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Fractional exponent, in (1/4, 1).
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Mesh width bound.
    #[arg(long, conflicts_with = "ell")]
    h: Option<f64>,
    /// Dyadic refinement level; h = 2^-ell.
    #[arg(long, default_value_t = 6)]
    ell: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::Lumped)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; omit for stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quadrature step override; the default is derived from the width.
    #[arg(long)]
    quad_step: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_PCG_TOL)]
    pcg_tol: f64,
}

#[derive(Args)]
struct GenGraphArgs {
    /// Number of vertices.
    #[arg(long, default_value_t = 100)]
    vertices: usize,
    /// Attachment edges per new vertex.
    #[arg(long, short = 'm', default_value_t = 2)]
    attach: usize,
    #[arg(long, default_value_t = 1.0)]
    edge_length: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; omit for stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StrongArgs {
    /// Graph file; omit for the built-in four-edge test graph.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Comma-separated fractional exponents.
    #[arg(long, value_delimiter = ',', default_value = "0.375,0.5,0.75")]
    beta: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Overkill reference level.
    #[arg(long, default_value_t = 10)]
    ell_ok: u32,
    /// Comma-separated coarse levels.
    #[arg(long, value_delimiter = ',', default_value = "3,4,5,6")]
    ell_coarse: Vec<u32>,
    /// Noise realizations per level.
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Lumped)]
    mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output path; omit for stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quadrature step override; the default is derived from the width.
    #[arg(long)]
    quad_step: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_PCG_TOL)]
    pcg_tol: f64,
}

#[derive(Args)]
struct CovArgs {
    /// Graph file; omit for the built-in four-edge test graph.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Comma-separated fractional exponents.
    #[arg(long, value_delimiter = ',', default_value = "0.375,0.5,0.625")]
    beta: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Overkill reference level.
    #[arg(long, default_value_t = 7)]
    ell_ok: u32,
    /// Comma-separated coarse levels.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    ell_coarse: Vec<u32>,
    #[arg(long, value_enum, default_value_t = ModeArg::Lumped)]
    mode: ModeArg,
    /// Cap on overkill nodes; the study forms dense N x N covariances.
    #[arg(long, default_value_t = DEFAULT_COV_NODE_LIMIT)]
    max_ok_nodes: usize,
    /// Output path; omit for stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quadrature step override applied to every level.
    #[arg(long)]
    quad_step: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_PCG_TOL)]
    pcg_tol: f64,
}

#[derive(Args)]
struct PerfArgs {
    /// Comma-separated vertex counts for the generated graphs.
    #[arg(long, value_delimiter = ',', default_value = "100,500,1000,2000,5000")]
    sizes: Vec<usize>,
    /// Attachment edges per new vertex.
    #[arg(long, short = 'm', default_value_t = 2)]
    attach: usize,
    #[arg(long, default_value_t = 1.0)]
    edge_length: f64,
    /// Mesh level; h = 2^-ell.
    #[arg(long, default_value_t = 6)]
    ell: u32,
    /// Comma-separated mass modes to time.
    #[arg(long, value_delimiter = ',', value_enum, default_value = "lumped,consistent")]
    modes: Vec<ModeArg>,
    /// Comma-separated tasks: noise_only, full_grf.
    #[arg(long, value_delimiter = ',', value_parser = parse_task, default_value = "noise_only,full_grf")]
    tasks: Vec<PerfTask>,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Timing samples per cell; the median is kept.
    #[arg(long, default_value_t = 3)]
    runs: usize,
    /// Output path; omit for stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quadrature step override; the default is derived from the width.
    #[arg(long)]
    quad_step: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_PCG_TOL)]
    pcg_tol: f64,
}

fn parse_task(s: &str) -> Result<PerfTask, graphrf::Error> {
    s.parse()
}

fn load_graph(path: Option<&Path>) -> Result<MetricGraph, Box<dyn std::error::Error>> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            Ok(MetricGraph::parse(&text)?)
        }
        None => Ok(default_test_graph()),
    }
}

fn open_out(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_sample(args: SampleArgs) -> AppResult {
    let graph = load_graph(args.graph.as_deref())?;
    let h = args.h.unwrap_or_else(|| dyadic_width(args.ell));
    let mesh = Mesh::build(&graph, h);
    let cfg = SampleConfig {
        beta: args.beta,
        kappa: args.kappa,
        mode: args.mode.into(),
        seed: args.seed,
        quad_step: args.quad_step,
        pcg_tol: args.pcg_tol,
    };
    let field = sample_field(&mesh, &cfg)?;
    let mut out = open_out(args.out.as_deref())?;
    write_field_csv(&mut out, &mesh, &field.values)?;
    out.flush()?;
    eprintln!(
        "sampled {} nodes over {} quadrature steps ({} PCG iterations)",
        mesh.num_nodes(),
        field.num_steps,
        field.pcg_iterations
    );
    Ok(())
}

fn run_gen_graph(args: GenGraphArgs) -> AppResult {
    let graph = barabasi_albert(args.vertices, args.attach, args.edge_length, args.seed)?;
    let mut out = open_out(args.out.as_deref())?;
    out.write_all(graph.to_text().as_bytes())?;
    out.flush()?;
    eprintln!(
        "generated {} vertices, {} edges",
        graph.num_vertices(),
        graph.num_edges()
    );
    Ok(())
}

fn run_strong(args: StrongArgs) -> AppResult {
    let graph = load_graph(args.graph.as_deref())?;
    let cfg = StrongConfig {
        betas: args.beta,
        ell_ok: args.ell_ok,
        ell_coarse: args.ell_coarse,
        reps: args.reps,
        kappa: args.kappa,
        mode: args.mode.into(),
        seed: args.seed,
        quad_step: args.quad_step,
        pcg_tol: args.pcg_tol,
    };
    let reports = graphrf::strong_error_study(&graph, &cfg)?;
    let mut out = open_out(args.out.as_deref())?;
    write_strong_csv(&mut out, &reports)?;
    out.flush()?;
    for r in &reports {
        eprintln!(
            "beta {}: fitted rate {:.3}, theoretical {:.3}",
            r.beta, r.fitted_rate, r.theoretical_rate
        );
    }
    Ok(())
}

fn run_cov(args: CovArgs) -> AppResult {
    let graph = load_graph(args.graph.as_deref())?;
    let cfg = CovConfig {
        betas: args.beta,
        ell_ok: args.ell_ok,
        ell_coarse: args.ell_coarse,
        kappa: args.kappa,
        mode: args.mode.into(),
        quad_step: args.quad_step,
        pcg_tol: args.pcg_tol,
        max_ok_nodes: args.max_ok_nodes,
    };
    let reports = graphrf::covariance_error_study(&graph, &cfg)?;
    let mut out = open_out(args.out.as_deref())?;
    write_cov_csv(&mut out, &reports)?;
    out.flush()?;
    for r in &reports {
        eprintln!(
            "beta {}: fitted rate {:.3}, theoretical {:.3}",
            r.beta, r.fitted_rate, r.theoretical_rate
        );
    }
    Ok(())
}

fn run_perf(args: PerfArgs) -> AppResult {
    let cfg = PerfConfig {
        sizes: args.sizes,
        attach: args.attach,
        edge_length: args.edge_length,
        ell: args.ell,
        modes: args.modes.into_iter().map(MassMode::from).collect(),
        tasks: args.tasks,
        beta: args.beta,
        kappa: args.kappa,
        seed: args.seed,
        quad_step: args.quad_step,
        pcg_tol: args.pcg_tol,
        runs: args.runs,
    };
    let records = graphrf::perf_study(&cfg)?;
    let mut out = open_out(args.out.as_deref())?;
    write_perf_csv(&mut out, &records)?;
    out.flush()?;
    for r in &records {
        eprintln!(
            "{} vertices, {} nodes, {}/{}: {:.6} s",
            r.num_vertices, r.num_nodes, r.mode, r.task, r.seconds
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    memstats::mark_installed();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Sample(a) => run_sample(a),
        Command::GenGraph(a) => run_gen_graph(a),
        Command::StrongError(a) => run_strong(a),
        Command::CovError(a) => run_cov(a),
        Command::Perf(a) => run_perf(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
