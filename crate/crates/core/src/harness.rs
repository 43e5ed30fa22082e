//! Experiment suite: field sampling, strong-error and covariance-error
//! convergence studies with log-log rate regression, and a performance
//! scaling study over generated graphs. All outputs are plain CSV.

use crate::assembly::{assemble_mass, MassMode};
use crate::dd_solver::{default_max_iter, SchurSystem, DEFAULT_PCG_TOL};
use crate::error::{Error, Result};
use crate::graph::{barabasi_albert, MetricGraph};
use crate::memstats;
use crate::mesh::{prolongation, Mesh, NodePosition};
use crate::noise;
use crate::quadrature::{self, QuadraturePlan};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::time::Instant;

/// Fixed graph for the convergence studies: a unit triangle with a unit
/// pendant edge, exercising vertex degrees 3, 2 and 1. With unit lengths
/// every dyadic width yields exactly nested meshes.
pub fn default_test_graph() -> MetricGraph {
    MetricGraph::parse("4 4\n0 1 1.0\n1 2 1.0\n2 0 1.0\n0 3 1.0\n").unwrap()
}

/// 2^-ell, exact in floating point.
pub fn dyadic_width(ell: u32) -> f64 {
    0.5f64.powi(ell as i32)
}

/// Strong error of the squared kind decays as h^(2 beta - 1/2).
pub fn theoretical_strong_rate(beta: f64) -> f64 {
    2.0 * beta - 0.5
}

/// Squared covariance error decays as h^min(4 beta - 1/2, 2).
pub fn theoretical_covariance_rate(beta: f64) -> f64 {
    (4.0 * beta - 0.5).min(2.0)
}

#[derive(Debug, Clone)]
pub struct SpdeSolution {
    pub values: Vec<f64>,
    /// PCG iterations summed over all quadrature steps.
    pub pcg_iterations: usize,
    pub num_steps: usize,
}

/// Solve one SPDE realization: every quadrature step is an independent
/// shifted solve, run in parallel; partial solutions are summed in step
/// order so the result is identical at any thread count.
pub fn solve_spde(
    mesh: &Mesh,
    mode: MassMode,
    plan: &QuadraturePlan,
    w: &[f64],
    pcg_tol: f64,
    max_iter: usize,
) -> Result<SpdeSolution> {
    let solutions = plan
        .steps
        .par_iter()
        .map(|step| {
            let sys = SchurSystem::build(mesh, mode, plan.kappa, step.c_id, step.c_op)?;
            sys.solve(w, pcg_tol, max_iter)
        })
        .collect::<Result<Vec<_>>>()?;
    let pcg_iterations = solutions.iter().map(|s| s.iterations).sum();
    let parts: Vec<Vec<f64>> = solutions.into_iter().map(|s| s.values).collect();
    let values = quadrature::accumulate(&parts)?;
    Ok(SpdeSolution {
        values,
        pcg_iterations,
        num_steps: plan.num_steps(),
    })
}

#[derive(Debug, Clone)]
pub struct SampleConfig {
    pub beta: f64,
    pub kappa: f64,
    pub mode: MassMode,
    pub seed: u64,
    /// Quadrature step override; None derives it from the mesh width.
    pub quad_step: Option<f64>,
    pub pcg_tol: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            beta: 0.5,
            kappa: 1.0,
            mode: MassMode::Lumped,
            seed: 0,
            quad_step: None,
            pcg_tol: DEFAULT_PCG_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FieldSample {
    pub values: Vec<f64>,
    pub pcg_iterations: usize,
    pub num_steps: usize,
}

/// Full pipeline for one field realization: plan the quadrature from the
/// mesh width, factor the chosen mass matrix, draw the noise load vector,
/// and run the per-step solves.
pub fn sample_field(mesh: &Mesh, cfg: &SampleConfig) -> Result<FieldSample> {
    let plan = quadrature::plan(cfg.beta, cfg.kappa, mesh.width(), cfg.quad_step)?;
    let mass = assemble_mass(mesh, cfg.mode);
    let factor = noise::factor(&mass)?;
    let w = noise::sample(&factor, cfg.seed);
    let sol = solve_spde(
        mesh,
        cfg.mode,
        &plan,
        w.as_slice(),
        cfg.pcg_tol,
        default_max_iter(mesh.graph().num_vertices()),
    )?;
    Ok(FieldSample {
        values: sol.values,
        pcg_iterations: sol.pcg_iterations,
        num_steps: sol.num_steps,
    })
}

/// Ordinary least squares on (ln h, ln err); returns (rate, intercept).
pub fn fit_rate(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "rate regression needs at least 2 points, got {}",
            points.len()
        )));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(h, err) in points {
        if !(h > 0.0) || !(err > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rate regression needs positive points, got ({h}, {err})"
            )));
        }
        xs.push(h.ln());
        ys.push(err.ln());
    }
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter(
            "rate regression needs at least two distinct widths".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let rate = sxy / sxx;
    Ok((rate, ym - rate * xm))
}

#[derive(Debug, Clone)]
pub struct LevelError {
    pub level: u32,
    pub width: f64,
    /// Weighted error at this level: root-mean-square over realizations for
    /// the strong study, the kernel distance for the covariance study.
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct StrongErrorReport {
    pub beta: f64,
    pub levels: Vec<LevelError>,
    pub fitted_rate: f64,
    pub theoretical_rate: f64,
}

#[derive(Debug, Clone)]
pub struct CovErrorReport {
    pub beta: f64,
    pub levels: Vec<LevelError>,
    pub fitted_rate: f64,
    pub theoretical_rate: f64,
}

#[derive(Debug, Clone)]
pub struct StrongConfig {
    pub betas: Vec<f64>,
    pub ell_ok: u32,
    pub ell_coarse: Vec<u32>,
    pub reps: usize,
    pub kappa: f64,
    pub mode: MassMode,
    pub seed: u64,
    pub quad_step: Option<f64>,
    pub pcg_tol: f64,
}

impl Default for StrongConfig {
    fn default() -> Self {
        StrongConfig {
            betas: vec![0.375, 0.5, 0.75],
            ell_ok: 10,
            ell_coarse: vec![3, 4, 5, 6],
            reps: 50,
            kappa: 1.0,
            mode: MassMode::Lumped,
            seed: 1,
            quad_step: None,
            pcg_tol: DEFAULT_PCG_TOL,
        }
    }
}

/// Monte-Carlo strong convergence study. Per realization: draw the noise on
/// the overkill mesh, solve there, project the noise to each coarse mesh,
/// solve coarse, interpolate back up, and accumulate the squared error
/// weighted by the consistent overkill mass matrix (the same norm for both
/// solver modes). One noise realization serves every beta and every level.
pub fn strong_error_study(graph: &MetricGraph, cfg: &StrongConfig) -> Result<Vec<StrongErrorReport>> {
    if cfg.betas.is_empty() {
        return Err(Error::InvalidParameter("no beta values given".into()));
    }
    if cfg.ell_coarse.is_empty() {
        return Err(Error::InvalidParameter("no coarse levels given".into()));
    }
    if cfg.reps == 0 {
        return Err(Error::InvalidParameter("need at least one realization".into()));
    }
    for &l in &cfg.ell_coarse {
        if l >= cfg.ell_ok {
            return Err(Error::InvalidParameter(format!(
                "coarse level {l} is not below the overkill level {}",
                cfg.ell_ok
            )));
        }
    }

    let mesh_ok = Mesh::build(graph, dyadic_width(cfg.ell_ok));
    let weight = assemble_mass(&mesh_ok, MassMode::Consistent);
    let factor_ok = noise::factor(&assemble_mass(&mesh_ok, cfg.mode))?;
    let max_iter = default_max_iter(graph.num_vertices());

    let meshes: Vec<Mesh> = cfg
        .ell_coarse
        .iter()
        .map(|&l| Mesh::build(graph, dyadic_width(l)))
        .collect();
    let prolongations = meshes
        .iter()
        .map(|m| prolongation(m, &mesh_ok))
        .collect::<Result<Vec<_>>>()?;
    let plans_ok = cfg
        .betas
        .iter()
        .map(|&b| quadrature::plan(b, cfg.kappa, mesh_ok.width(), cfg.quad_step))
        .collect::<Result<Vec<_>>>()?;
    let plans_coarse = cfg
        .betas
        .iter()
        .map(|&b| {
            meshes
                .iter()
                .map(|m| quadrature::plan(b, cfg.kappa, m.width(), cfg.quad_step))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    // Per realization, a betas x levels table of squared errors. Collected
    // in order and summed serially so the result is thread-count invariant.
    let tables = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Vec<f64>>> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(rep as u64);
            let w_ok = noise::sample_with_rng(&factor_ok, &mut rng);
            let w_coarse = prolongations
                .iter()
                .map(|p| noise::project_noise(p, &w_ok))
                .collect::<Result<Vec<_>>>()?;
            let mut table = vec![vec![0.0; meshes.len()]; cfg.betas.len()];
            for (bi, _) in cfg.betas.iter().enumerate() {
                let u_ok = solve_spde(
                    &mesh_ok,
                    cfg.mode,
                    &plans_ok[bi],
                    w_ok.as_slice(),
                    cfg.pcg_tol,
                    max_iter,
                )?;
                for (li, mesh_c) in meshes.iter().enumerate() {
                    let u_c = solve_spde(
                        mesh_c,
                        cfg.mode,
                        &plans_coarse[bi][li],
                        w_coarse[li].as_slice(),
                        cfg.pcg_tol,
                        max_iter,
                    )?;
                    let up = prolongations[li].apply(&u_c.values)?;
                    let diff: Vec<f64> = u_ok
                        .values
                        .iter()
                        .zip(&up)
                        .map(|(a, b)| a - b)
                        .collect();
                    table[bi][li] = weight.quadratic_form(&diff);
                }
            }
            Ok(table)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::with_capacity(cfg.betas.len());
    for (bi, &beta) in cfg.betas.iter().enumerate() {
        let levels: Vec<LevelError> = cfg
            .ell_coarse
            .iter()
            .enumerate()
            .map(|(li, &l)| LevelError {
                level: l,
                width: dyadic_width(l),
                // Root of the realization-averaged squared distance; this is
                // the quantity that decays at the 2*beta - 1/2 rate.
                error: (tables.iter().map(|t| t[bi][li]).sum::<f64>() / cfg.reps as f64).sqrt(),
            })
            .collect();
        let pts: Vec<(f64, f64)> = levels.iter().map(|le| (le.width, le.error)).collect();
        let (fitted_rate, _) = fit_rate(&pts)?;
        reports.push(StrongErrorReport {
            beta,
            levels,
            fitted_rate,
            theoretical_rate: theoretical_strong_rate(beta),
        });
    }
    Ok(reports)
}

#[derive(Debug, Clone)]
pub struct CovConfig {
    pub betas: Vec<f64>,
    pub ell_ok: u32,
    pub ell_coarse: Vec<u32>,
    pub kappa: f64,
    pub mode: MassMode,
    pub quad_step: Option<f64>,
    pub pcg_tol: f64,
    /// Hard cap on overkill nodes; the study forms dense N x N covariances.
    pub max_ok_nodes: usize,
}

pub const DEFAULT_COV_NODE_LIMIT: usize = 2000;

impl Default for CovConfig {
    fn default() -> Self {
        CovConfig {
            betas: vec![0.375, 0.5, 0.625],
            ell_ok: 7,
            ell_coarse: vec![2, 3, 4],
            kappa: 1.0,
            mode: MassMode::Lumped,
            quad_step: None,
            pcg_tol: DEFAULT_PCG_TOL,
            max_ok_nodes: DEFAULT_COV_NODE_LIMIT,
        }
    }
}

/// Discrete covariance Q = B M_w B^T with B = sum_l (A^(l))^-1, columns
/// obtained by per-step solves against unit vectors. B is symmetric, so
/// M_w B^T is formed column by column from B's columns.
fn covariance_matrix(
    mesh: &Mesh,
    mode: MassMode,
    plan: &QuadraturePlan,
    pcg_tol: f64,
) -> Result<DMatrix<f64>> {
    let n = mesh.num_nodes();
    let max_iter = default_max_iter(mesh.graph().num_vertices());
    let mut b = DMatrix::<f64>::zeros(n, n);
    for step in &plan.steps {
        let sys = SchurSystem::build(mesh, mode, plan.kappa, step.c_id, step.c_op)?;
        let cols = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                sys.solve(&e, pcg_tol, max_iter).map(|s| s.values)
            })
            .collect::<Result<Vec<_>>>()?;
        for (j, col) in cols.iter().enumerate() {
            for i in 0..n {
                b[(i, j)] += col[i];
            }
        }
    }
    let mass = assemble_mass(mesh, mode);
    let mut mb = DMatrix::<f64>::zeros(n, n);
    let mut col = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = b[(i, j)];
        }
        let mcol = mass.matvec(&col);
        for i in 0..n {
            mb[(i, j)] = mcol[i];
        }
    }
    let mut q = &b * &mb;
    // Covariance is symmetric by definition; iterative-solver noise breaks
    // that at the last few ulps, so restore it.
    for j in 0..n {
        for i in 0..j {
            let avg = 0.5 * (q[(i, j)] + q[(j, i)]);
            q[(i, j)] = avg;
            q[(j, i)] = avg;
        }
    }
    Ok(q)
}

/// P Q P^T for a symmetric Q via two passes of column interpolation.
fn upsample_covariance(p: &crate::mesh::Prolongation, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let nc = q.nrows();
    let nf = p.n_fine();
    let mut half = DMatrix::<f64>::zeros(nf, nc);
    let mut col = vec![0.0; nc];
    for j in 0..nc {
        for i in 0..nc {
            col[i] = q[(i, j)];
        }
        let up = p.apply(&col)?;
        for i in 0..nf {
            half[(i, j)] = up[i];
        }
    }
    let mut out = DMatrix::<f64>::zeros(nf, nf);
    for k in 0..nf {
        for i in 0..nc {
            col[i] = half[(k, i)];
        }
        let up = p.apply(&col)?;
        for i in 0..nf {
            out[(i, k)] = up[i];
        }
    }
    Ok(out)
}

/// L2(domain x domain) distance between piecewise-constant kernels:
/// sqrt(sum_ij (a - b)_ij^2 w_i w_j) with w the lumped overkill mass
/// diagonal. The kernel distance is what decays at the min(4*beta - 1/2, 2)
/// rate.
fn covariance_distance(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &[f64]) -> f64 {
    let n = w.len();
    let mut total = 0.0;
    for j in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            let d = a[(i, j)] - b[(i, j)];
            acc += d * d * w[i];
        }
        total += acc * w[j];
    }
    total.sqrt()
}

/// Deterministic covariance convergence study: compare each coarse level's
/// interpolated covariance against the overkill covariance in the weighted
/// matrix norm, then regress the rate.
pub fn covariance_error_study(graph: &MetricGraph, cfg: &CovConfig) -> Result<Vec<CovErrorReport>> {
    if cfg.betas.is_empty() {
        return Err(Error::InvalidParameter("no beta values given".into()));
    }
    if cfg.ell_coarse.is_empty() {
        return Err(Error::InvalidParameter("no coarse levels given".into()));
    }
    for &l in &cfg.ell_coarse {
        if l >= cfg.ell_ok {
            return Err(Error::InvalidParameter(format!(
                "coarse level {l} is not below the overkill level {}",
                cfg.ell_ok
            )));
        }
    }
    let mesh_ok = Mesh::build(graph, dyadic_width(cfg.ell_ok));
    let n_ok = mesh_ok.num_nodes();
    if n_ok > cfg.max_ok_nodes {
        return Err(Error::TooLarge(format!(
            "overkill mesh has {n_ok} nodes; the dense covariance study is capped at {}",
            cfg.max_ok_nodes
        )));
    }
    let weights = assemble_mass(&mesh_ok, MassMode::Lumped).diag();
    let meshes: Vec<Mesh> = cfg
        .ell_coarse
        .iter()
        .map(|&l| Mesh::build(graph, dyadic_width(l)))
        .collect();
    let prolongations = meshes
        .iter()
        .map(|m| prolongation(m, &mesh_ok))
        .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::with_capacity(cfg.betas.len());
    for &beta in &cfg.betas {
        let plan_ok = quadrature::plan(beta, cfg.kappa, mesh_ok.width(), cfg.quad_step)?;
        let q_ok = covariance_matrix(&mesh_ok, cfg.mode, &plan_ok, cfg.pcg_tol)?;
        let mut levels = Vec::with_capacity(meshes.len());
        for (li, mesh_c) in meshes.iter().enumerate() {
            // Coarse levels reuse the reference level's quadrature step so
            // the comparison isolates the mesh error; the width-coupled
            // default step at h = 2^-2 carries a percent-level operator
            // error that would pollute the regression.
            let plan_c =
                quadrature::plan(beta, cfg.kappa, mesh_c.width(), Some(plan_ok.step_size))?;
            let q_c = covariance_matrix(mesh_c, cfg.mode, &plan_c, cfg.pcg_tol)?;
            let q_up = upsample_covariance(&prolongations[li], &q_c)?;
            levels.push(LevelError {
                level: cfg.ell_coarse[li],
                width: mesh_c.width(),
                error: covariance_distance(&q_ok, &q_up, &weights),
            });
        }
        let pts: Vec<(f64, f64)> = levels.iter().map(|le| (le.width, le.error)).collect();
        let (fitted_rate, _) = fit_rate(&pts)?;
        reports.push(CovErrorReport {
            beta,
            levels,
            fitted_rate,
            theoretical_rate: theoretical_covariance_rate(beta),
        });
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerfTask {
    /// Mass factorization plus one noise draw.
    NoiseOnly,
    /// Noise plus the whole quadrature/solver pipeline.
    FullGrf,
}

impl std::fmt::Display for PerfTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PerfTask::NoiseOnly => write!(f, "noise_only"),
            PerfTask::FullGrf => write!(f, "full_grf"),
        }
    }
}

impl std::str::FromStr for PerfTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise_only" | "noise-only" | "noise" => Ok(PerfTask::NoiseOnly),
            "full_grf" | "full-grf" | "full" => Ok(PerfTask::FullGrf),
            other => Err(Error::InvalidParameter(format!(
                "unknown task '{other}' (expected noise_only or full_grf)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerfConfig {
    /// Vertex counts for the generated scale-free graphs.
    pub sizes: Vec<usize>,
    /// Preferential-attachment edges per new vertex.
    pub attach: usize,
    pub edge_length: f64,
    pub ell: u32,
    pub modes: Vec<MassMode>,
    pub tasks: Vec<PerfTask>,
    pub beta: f64,
    pub kappa: f64,
    pub seed: u64,
    pub quad_step: Option<f64>,
    pub pcg_tol: f64,
    /// Timing samples per cell; the median is reported.
    pub runs: usize,
}

impl Default for PerfConfig {
    fn default() -> Self {
        PerfConfig {
            sizes: vec![100, 500, 1000, 2000, 5000],
            attach: 2,
            edge_length: 1.0,
            ell: 6,
            modes: vec![MassMode::Lumped, MassMode::Consistent],
            tasks: vec![PerfTask::NoiseOnly, PerfTask::FullGrf],
            beta: 0.5,
            kappa: 1.0,
            seed: 7,
            quad_step: None,
            pcg_tol: DEFAULT_PCG_TOL,
            runs: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerfRecord {
    pub num_vertices: usize,
    pub num_edges: usize,
    /// Total mesh nodes N.
    pub num_nodes: usize,
    pub mode: MassMode,
    pub task: PerfTask,
    /// Median wall time per operation, in seconds.
    pub seconds: f64,
    /// Total PCG iterations over all steps (0 for noise-only).
    pub pcg_iterations: usize,
    /// Peak heap bytes, when the tracking allocator is installed.
    pub peak_bytes: Option<usize>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

/// Median-of-runs wall time for `op`, with enough inner repetitions to get
/// sub-millisecond operations above timer noise. Returns the median seconds
/// per operation and the metric from the calibration execution.
fn time_op<F: FnMut() -> usize>(mut op: F, runs: usize) -> (f64, usize) {
    let start = Instant::now();
    let metric = op();
    let first = start.elapsed().as_secs_f64();
    let inner = if first < 2e-3 {
        ((4e-3 / first.max(1e-9)) as usize).clamp(1, 1000)
    } else {
        1
    };
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        for _ in 0..inner {
            op();
        }
        samples.push(start.elapsed().as_secs_f64() / inner as f64);
    }
    (median(samples), metric)
}

/// Scaling study over generated scale-free graphs at fixed resolution.
pub fn perf_study(cfg: &PerfConfig) -> Result<Vec<PerfRecord>> {
    if cfg.sizes.is_empty() || cfg.modes.is_empty() || cfg.tasks.is_empty() {
        return Err(Error::InvalidParameter(
            "perf study needs at least one size, mode and task".into(),
        ));
    }
    if cfg.runs == 0 {
        return Err(Error::InvalidParameter("perf study needs runs >= 1".into()));
    }
    let h = dyadic_width(cfg.ell);
    let mut records = Vec::new();
    for &size in &cfg.sizes {
        let graph = barabasi_albert(
            size,
            cfg.attach,
            cfg.edge_length,
            cfg.seed.wrapping_add(size as u64),
        )?;
        let mesh = Mesh::build(&graph, h);
        let plan = quadrature::plan(cfg.beta, cfg.kappa, mesh.width(), cfg.quad_step)?;
        let max_iter = default_max_iter(graph.num_vertices());
        for &mode in &cfg.modes {
            let mass = assemble_mass(&mesh, mode);
            // Fail early, outside the timed region, if this configuration
            // cannot be factored or solved at all.
            noise::factor(&mass)?;
            for &task in &cfg.tasks {
                memstats::reset_peak();
                let (seconds, pcg_iterations) = match task {
                    PerfTask::NoiseOnly => time_op(
                        || {
                            let f = noise::factor(&mass).unwrap();
                            let w = noise::sample(&f, cfg.seed);
                            std::hint::black_box(w.as_slice().last().copied());
                            0
                        },
                        cfg.runs,
                    ),
                    PerfTask::FullGrf => time_op(
                        || {
                            let f = noise::factor(&mass).unwrap();
                            let w = noise::sample(&f, cfg.seed);
                            let sol = solve_spde(
                                &mesh,
                                mode,
                                &plan,
                                w.as_slice(),
                                cfg.pcg_tol,
                                max_iter,
                            )
                            .unwrap();
                            std::hint::black_box(sol.values.last().copied());
                            sol.pcg_iterations
                        },
                        cfg.runs,
                    ),
                };
                let peak_bytes = memstats::is_installed().then(memstats::peak_bytes);
                records.push(PerfRecord {
                    num_vertices: graph.num_vertices(),
                    num_edges: graph.num_edges(),
                    num_nodes: mesh.num_nodes(),
                    mode,
                    task,
                    seconds,
                    pcg_iterations,
                    peak_bytes,
                });
            }
        }
    }
    Ok(records)
}

/// One row per node: interior rows carry the edge id and the local
/// coordinate, vertex rows the vertex id.
pub fn write_field_csv<W: Write>(out: &mut W, mesh: &Mesh, values: &[f64]) -> Result<()> {
    if values.len() != mesh.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_nodes(),
            actual: values.len(),
        });
    }
    writeln!(out, "edge_id,vertex_id,x,value")?;
    for (i, v) in values.iter().enumerate() {
        match mesh.node_position(i)? {
            NodePosition::Interior { edge, x } => writeln!(out, "{edge},-1,{x},{v}")?,
            NodePosition::Vertex(vertex) => writeln!(out, "-1,{vertex},0,{v}")?,
        }
    }
    Ok(())
}

fn write_report_csv<W: Write>(
    out: &mut W,
    rows: &[(f64, &[LevelError], f64, f64)],
) -> Result<()> {
    writeln!(out, "beta,level,h,error,fitted_rate,theoretical_rate")?;
    for &(beta, levels, fitted, theory) in rows {
        for le in levels {
            writeln!(out, "{beta},{},{},{},,", le.level, le.width, le.error)?;
        }
        writeln!(out, "{beta},fit,,,{fitted},{theory}")?;
    }
    Ok(())
}

pub fn write_strong_csv<W: Write>(out: &mut W, reports: &[StrongErrorReport]) -> Result<()> {
    let rows: Vec<_> = reports
        .iter()
        .map(|r| (r.beta, r.levels.as_slice(), r.fitted_rate, r.theoretical_rate))
        .collect();
    write_report_csv(out, &rows)
}

pub fn write_cov_csv<W: Write>(out: &mut W, reports: &[CovErrorReport]) -> Result<()> {
    let rows: Vec<_> = reports
        .iter()
        .map(|r| (r.beta, r.levels.as_slice(), r.fitted_rate, r.theoretical_rate))
        .collect();
    write_report_csv(out, &rows)
}

pub fn write_perf_csv<W: Write>(out: &mut W, records: &[PerfRecord]) -> Result<()> {
    writeln!(out, "vertices,edges,nodes,mode,task,seconds,pcg_iterations,peak_bytes")?;
    for r in records {
        let peak = r.peak_bytes.map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.num_vertices, r.num_edges, r.num_nodes, r.mode, r.task, r.seconds, r.pcg_iterations, peak
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn default_graph_shape() {
        let g = default_test_graph();
        assert_eq!(g.num_vertices(), 4);
        assert_eq!(g.num_edges(), 4);
        assert_eq!(g.degrees().as_slice(), &[3, 2, 2, 1]);
        assert_eq!(g.total_length(), 4.0);
    }

    #[test]
    fn dyadic_widths_are_exact() {
        assert_eq!(dyadic_width(0), 1.0);
        assert_eq!(dyadic_width(3), 0.125);
        assert_eq!(dyadic_width(10), 1.0 / 1024.0);
    }

    #[test]
    fn theoretical_rates() {
        for (beta, strong, cov) in [
            (0.375, 0.25, 1.0),
            (0.5, 0.5, 1.5),
            (0.625, 0.75, 2.0),
            (0.75, 1.0, 2.0),
            (0.875, 1.25, 2.0),
        ] {
            assert!((theoretical_strong_rate(beta) - strong).abs() <= 1e-15);
            assert!((theoretical_covariance_rate(beta) - cov).abs() <= 1e-15);
        }
    }

    #[test]
    fn fit_rate_recovers_exact_power_laws() {
        let (r, _) = fit_rate(&[(0.5, 0.5), (0.25, 0.25)]).unwrap();
        assert_eq!(r, 1.0);
        let pts: Vec<(f64, f64)> = [0.5, 0.25, 0.125, 0.0625]
            .iter()
            .map(|&h| (h, h * h))
            .collect();
        let (r, _) = fit_rate(&pts).unwrap();
        assert!((r - 2.0).abs() <= 1e-12);
        // err = c * h^r generated in log space comes back exactly.
        let (c, rate) = (3.7f64, 1.23f64);
        let pts: Vec<(f64, f64)> = [0.5, 0.25, 0.125]
            .iter()
            .map(|&h: &f64| (h, (c.ln() + rate * h.ln()).exp()))
            .collect();
        let (r, intercept) = fit_rate(&pts).unwrap();
        assert!((r - rate).abs() <= 1e-12);
        assert!((intercept - c.ln()).abs() <= 1e-12);
    }

    #[test]
    fn fit_rate_rejects_degenerate_input() {
        assert!(fit_rate(&[(0.5, 1.0)]).is_err());
        assert!(fit_rate(&[(0.5, 1.0), (0.25, -1.0)]).is_err());
        assert!(fit_rate(&[(0.5, 1.0), (0.25, 0.0)]).is_err());
        assert!(fit_rate(&[(0.5, 1.0), (0.5, 2.0)]).is_err());
    }

    #[test]
    fn fit_rate_reproduces_published_style_tables() {
        // Four dyadic widths with squared errors decaying at rates between
        // 1/4 and 5/4; the two-decimal fits are frozen oracle values.
        let hs = [0.125, 0.0625, 0.03125, 0.015625];
        let table: [(&[f64; 4], f64); 5] = [
            (&[5.335224, 4.455675, 3.721420, 3.107954], 0.26),
            (&[1.807369, 1.268635, 0.893495, 0.630631], 0.51),
            (&[0.710203, 0.419348, 0.248365, 0.147539], 0.76),
            (&[0.296709, 0.148768, 0.074549, 0.037264], 1.00),
            (&[0.133258, 0.056451, 0.023789, 0.010011], 1.25),
        ];
        for (errs, expected) in table {
            let pts: Vec<(f64, f64)> = hs.iter().copied().zip(errs.iter().copied()).collect();
            let (r, _) = fit_rate(&pts).unwrap();
            assert!(
                ((r * 100.0).round() / 100.0 - expected).abs() <= 1e-12,
                "fit {r} rounds away from {expected}"
            );
        }
    }

    #[test]
    fn solve_spde_matches_dense_resolvent_sum() {
        let g = default_test_graph();
        let mesh = Mesh::build(&g, 0.25);
        let n = mesh.num_nodes();
        let plan = quadrature::plan(0.5, 1.0, mesh.width(), None).unwrap();
        for mode in [MassMode::Lumped, MassMode::Consistent] {
            let w: Vec<f64> = (0..n).map(|i| ((i * i + 1) as f64).sin()).collect();
            let sol = solve_spde(&mesh, mode, &plan, &w, 1e-12, default_max_iter(4)).unwrap();
            let m = assemble_mass(&mesh, mode).to_dense();
            let gmat = crate::assembly::assemble_stiffness(&mesh).to_dense();
            let wv = DVector::from_row_slice(&w);
            let mut want = DVector::zeros(n);
            for step in &plan.steps {
                let a = &m * (step.c_id + step.c_op) + &gmat * step.c_op;
                want += a.lu().solve(&wv).unwrap();
            }
            let scale = want.abs().max();
            for i in 0..n {
                assert!(
                    (sol.values[i] - want[i]).abs() <= 1e-8 * scale,
                    "mode {mode:?}, node {i}"
                );
            }
            assert_eq!(sol.num_steps, plan.num_steps());
            assert!(sol.pcg_iterations >= sol.num_steps);
        }
    }

    #[test]
    fn sample_field_is_deterministic_per_seed() {
        let g = default_test_graph();
        let mesh = Mesh::build(&g, dyadic_width(4));
        let cfg = SampleConfig::default();
        let a = sample_field(&mesh, &cfg).unwrap();
        let b = sample_field(&mesh, &cfg).unwrap();
        assert_eq!(a.values, b.values);
        let c = sample_field(&mesh, &SampleConfig { seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(a.values, c.values);
        let d = sample_field(
            &mesh,
            &SampleConfig {
                mode: MassMode::Consistent,
                ..cfg
            },
        )
        .unwrap();
        assert_ne!(a.values, d.values);
    }

    #[test]
    fn strong_study_errors_shrink_with_refinement() {
        let g = default_test_graph();
        let cfg = StrongConfig {
            betas: vec![0.5],
            ell_ok: 5,
            ell_coarse: vec![2, 4],
            reps: 3,
            ..StrongConfig::default()
        };
        let reports = strong_error_study(&g, &cfg).unwrap();
        assert_eq!(reports.len(), 1);
        let r = &reports[0];
        assert_eq!(r.levels.len(), 2);
        assert!(r.levels.iter().all(|l| l.error > 0.0));
        assert!(
            r.levels[1].error < r.levels[0].error,
            "refinement did not shrink the error: {:?}",
            r.levels
        );
        assert!(r.fitted_rate.is_finite());
    }

    #[test]
    fn strong_study_rejects_bad_levels() {
        let g = default_test_graph();
        let cfg = StrongConfig {
            ell_ok: 3,
            ell_coarse: vec![3],
            reps: 1,
            ..StrongConfig::default()
        };
        assert!(matches!(
            strong_error_study(&g, &cfg),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn covariance_study_errors_shrink_with_refinement() {
        let g = default_test_graph();
        let cfg = CovConfig {
            betas: vec![0.5],
            ell_ok: 4,
            ell_coarse: vec![2, 3],
            ..CovConfig::default()
        };
        let reports = covariance_error_study(&g, &cfg).unwrap();
        let r = &reports[0];
        assert!(r.levels.iter().all(|l| l.error > 0.0));
        assert!(r.levels[1].error < r.levels[0].error);
        assert!(r.fitted_rate.is_finite());
    }

    #[test]
    fn covariance_at_equal_levels_vanishes() {
        let g = default_test_graph();
        let mesh = Mesh::build(&g, dyadic_width(3));
        let plan = quadrature::plan(0.5, 1.0, mesh.width(), None).unwrap();
        let q = covariance_matrix(&mesh, MassMode::Lumped, &plan, 1e-12).unwrap();
        let p = prolongation(&mesh, &mesh).unwrap();
        let q_up = upsample_covariance(&p, &q).unwrap();
        let w = assemble_mass(&mesh, MassMode::Lumped).diag();
        assert_eq!(covariance_distance(&q, &q_up, &w), 0.0);
    }

    #[test]
    fn covariance_study_guards_against_huge_meshes() {
        let g = default_test_graph();
        let cfg = CovConfig {
            ell_ok: 12,
            ..CovConfig::default()
        };
        assert!(matches!(
            covariance_error_study(&g, &cfg),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn perf_study_records_match_mesh_formula() {
        let cfg = PerfConfig {
            sizes: vec![20, 40],
            ell: 3,
            runs: 1,
            ..PerfConfig::default()
        };
        let records = perf_study(&cfg).unwrap();
        assert_eq!(records.len(), 2 * 2 * 2);
        let h = dyadic_width(3);
        for r in &records {
            let graph = barabasi_albert(
                r.num_vertices,
                cfg.attach,
                cfg.edge_length,
                cfg.seed.wrapping_add(r.num_vertices as u64),
            )
            .unwrap();
            let interior: usize = graph
                .edges()
                .iter()
                .map(|e| ((e.length / h).ceil() as usize).max(1) - 1)
                .sum();
            assert_eq!(r.num_nodes, graph.num_vertices() + interior);
            assert_eq!(r.num_edges, graph.num_edges());
            assert!(r.seconds > 0.0);
            match r.task {
                PerfTask::NoiseOnly => assert_eq!(r.pcg_iterations, 0),
                PerfTask::FullGrf => assert!(r.pcg_iterations > 0),
            }
            assert_eq!(r.peak_bytes, None);
        }
    }

    #[test]
    fn perf_task_parsing_round_trips() {
        assert_eq!("noise_only".parse::<PerfTask>().unwrap(), PerfTask::NoiseOnly);
        assert_eq!("full_grf".parse::<PerfTask>().unwrap(), PerfTask::FullGrf);
        assert_eq!(PerfTask::NoiseOnly.to_string(), "noise_only");
        assert_eq!(PerfTask::FullGrf.to_string(), "full_grf");
        assert!("fourier".parse::<PerfTask>().is_err());
    }

    #[test]
    fn field_csv_has_one_row_per_node() {
        let g = default_test_graph();
        let mesh = Mesh::build(&g, 0.5);
        let values: Vec<f64> = (0..mesh.num_nodes()).map(|i| i as f64).collect();
        let mut buf = Vec::new();
        write_field_csv(&mut buf, &mesh, &values).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "edge_id,vertex_id,x,value");
        assert_eq!(lines.len(), 1 + mesh.num_nodes());
        // Interior of edge 0 comes first, the vertex rows last.
        assert_eq!(lines[1], "0,-1,0.5,0");
        assert_eq!(lines[lines.len() - 1], "-1,3,0,7");
    }

    #[test]
    fn report_csv_carries_level_rows_and_a_fit_row() {
        let report = StrongErrorReport {
            beta: 0.5,
            levels: vec![
                LevelError { level: 3, width: 0.125, error: 0.5 },
                LevelError { level: 4, width: 0.0625, error: 0.25 },
            ],
            fitted_rate: 1.0,
            theoretical_rate: 0.5,
        };
        let mut buf = Vec::new();
        write_strong_csv(&mut buf, &[report]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "beta,level,h,error,fitted_rate,theoretical_rate");
        assert_eq!(lines[1], "0.5,3,0.125,0.5,,");
        assert_eq!(lines[2], "0.5,4,0.0625,0.25,,");
        assert_eq!(lines[3], "0.5,fit,,,1,0.5");
    }

    #[test]
    fn perf_csv_leaves_unknown_memory_blank() {
        let rec = PerfRecord {
            num_vertices: 10,
            num_edges: 17,
            num_nodes: 146,
            mode: MassMode::Lumped,
            task: PerfTask::NoiseOnly,
            seconds: 0.125,
            pcg_iterations: 0,
            peak_bytes: None,
        };
        let mut buf = Vec::new();
        write_perf_csv(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "10,17,146,lumped,noise_only,0.125,0,"
        );
    }
}
