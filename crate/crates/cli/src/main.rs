use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use pgo_rls::diagnostics::{alignment_deltas, compute_cm, compute_em, percentile, pseudo_inverse_row_norms};
use pgo_rls::g2o::{read_g2o_file, write_g2o_file, ParsedG2o};
use pgo_rls::{
    alg1_solve, alg2_solve, chordal_init_with, generate, perturb, pgo_cost, recover_positions, BasinReport,
    ChordalOptions, GenerateOptions, Method, NoiseSpec, PgoError, PoseEstimate, Shape, SolveReport, SolverOptions,
    StackedWeighting, Termination, WeightReduction,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "pgo-rls", version, about = "Pose graph optimization by recursive least squares")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic noise-free graph and its ground-truth poses.
    Gen(GenArgs),
    /// Add rotation (and optionally translation) noise to every measurement.
    Perturb(PerturbArgs),
    /// Estimate poses for a graph.
    Solve(SolveArgs),
    /// Print the cost of a pose file against a graph.
    Eval(EvalArgs),
    /// Print convergence diagnostics for a graph as JSON.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Grid3d,
    Chain,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Chordal,
    Alg1,
    Alg2,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    BlockMean,
    FirstDiagonal,
}

impl From<ReductionArg> for WeightReduction {
    fn from(r: ReductionArg) -> Self {
        match r {
            ReductionArg::BlockMean => WeightReduction::BlockMean,
            ReductionArg::FirstDiagonal => WeightReduction::FirstDiagonal,
        }
    }
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "grid3d")]
    shape: ShapeArg,
    #[arg(long, default_value_t = 3)]
    nx: usize,
    #[arg(long, default_value_t = 3)]
    ny: usize,
    #[arg(long, default_value_t = 3)]
    nz: usize,
    /// Vertex count for `--shape chain`.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Keep only the odometry path.
    #[arg(long)]
    no_loop_closures: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(clap::Args)]
struct PerturbArgs {
    #[arg(long)]
    input: PathBuf,
    /// Standard deviation of the rotation noise angle, in degrees.
    #[arg(long)]
    rot_sigma_deg: f64,
    /// Standard deviation of each translation component.
    #[arg(long, default_value_t = 0.0)]
    trans_sigma: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "block-mean")]
    weight_reduction: ReductionArg,
}

#[derive(clap::Args)]
struct SolveArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Weight the joint system rows by 2ω and λ instead of their square roots.
    #[arg(long)]
    literal_eq33: bool,
    /// Give every edge weight 1 in the chordal initialization.
    #[arg(long)]
    unweighted_chordal: bool,
    #[arg(long, value_enum, default_value = "block-mean")]
    weight_reduction: ReductionArg,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long, value_enum, default_value = "block-mean")]
    weight_reduction: ReductionArg,
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Noise-free graph with ground-truth poses; enables c_m, e_m and the bound.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "block-mean")]
    weight_reduction: ReductionArg,
}

fn read(path: &Path, reduction: ReductionArg) -> pgo_rls::Result<ParsedG2o> {
    let parsed = read_g2o_file(path, reduction.into()).map_err(|e| match e {
        PgoError::Io(msg) => PgoError::Io(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    if parsed.skipped_lines > 0 {
        info!("{}: skipped {} unrecognized lines", path.display(), parsed.skipped_lines);
    }
    if parsed.non_psd_edges > 0 {
        log::warn!(
            "{}: {} edges have an information matrix that is not positive semidefinite",
            path.display(),
            parsed.non_psd_edges
        );
    }
    Ok(parsed)
}

fn write_text(path: &Path, text: &str) -> pgo_rls::Result<()> {
    std::fs::write(path, text).map_err(|e| PgoError::Io(format!("{}: {e}", path.display())))
}

fn gen(args: GenArgs) -> pgo_rls::Result<()> {
    let shape = match args.shape {
        ShapeArg::Grid3d => Shape::Grid3d {
            nx: args.nx,
            ny: args.ny,
            nz: args.nz,
        },
        ShapeArg::Chain => Shape::Chain { n: args.n },
    };
    let g = generate(&GenerateOptions {
        shape,
        loop_closures: !args.no_loop_closures,
        seed: args.seed,
    })?;
    info!("{} vertices, {} edges", g.graph.vertex_count(), g.graph.edge_count());
    write_g2o_file(&args.output, &g.graph, &PoseEstimate::identity(g.graph.vertex_count()))?;
    write_g2o_file(&args.truth, &g.graph, &g.truth)
}

fn perturb_cmd(args: PerturbArgs) -> pgo_rls::Result<()> {
    let parsed = read(&args.input, args.weight_reduction)?;
    let noisy = perturb(
        &parsed.graph,
        &NoiseSpec {
            rot_sigma_deg: args.rot_sigma_deg,
            trans_sigma: args.trans_sigma,
            seed: args.seed,
        },
    )?;
    write_g2o_file(&args.output, &noisy, &parsed.estimate)
}

fn solve(args: SolveArgs) -> pgo_rls::Result<()> {
    let g = read(&args.input, args.weight_reduction)?.graph;
    let opts = SolverOptions {
        itr_max: args.max_iters,
        tolerance: args.tol,
    };
    let chordal = ChordalOptions {
        weighted: !args.unweighted_chordal,
    };
    let (estimate, report) = match args.method {
        MethodArg::Chordal => chordal_only(&g, chordal)?,
        // the iterative solvers use the weighted initialization unless asked otherwise
        MethodArg::Alg1 if chordal.weighted => alg1_solve(&g, &opts)?,
        MethodArg::Alg2 if chordal.weighted => alg2_solve(&g, &opts, weighting(args.literal_eq33))?,
        method => {
            let started = Instant::now();
            let initial = chordal_init_with(&g, chordal)?;
            let time_init_s = started.elapsed().as_secs_f64();
            let (x, mut report) = match method {
                MethodArg::Alg1 => pgo_rls::orient::OrientationSolver::new(&g)?.run(initial, &opts)?,
                _ => pgo_rls::full::JointSolver::new(&g, weighting(args.literal_eq33)).run(initial, &opts)?,
            };
            report.time_init_s = time_init_s;
            (x, report)
        }
    };
    info!(
        "{}: {} iterations, cost {:.6e} -> {:.6e}",
        report.method, report.iterations, report.initial_cost, report.final_cost
    );
    write_g2o_file(&args.output, &g, &estimate)?;
    write_text(&args.report, &(report.to_json() + "\n"))
}

fn weighting(literal: bool) -> StackedWeighting {
    if literal {
        StackedWeighting::Literal
    } else {
        StackedWeighting::Objective
    }
}

fn chordal_only(g: &pgo_rls::PoseGraph, opts: ChordalOptions) -> pgo_rls::Result<(PoseEstimate, SolveReport)> {
    let started = Instant::now();
    let rotations = chordal_init_with(g, opts)?;
    let time_init_s = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let positions = recover_positions(g, &rotations)?;
    let time_solve_s = started.elapsed().as_secs_f64();
    let x = PoseEstimate { rotations, positions };
    let cost = pgo_cost(g, &x);
    let report = SolveReport {
        method: Method::Chordal,
        iterations: 0,
        termination: Termination::Initialization,
        max_delta_history: Vec::new(),
        cost_history: Vec::new(),
        clamp_count: 0,
        initial_cost: cost,
        final_cost: cost,
        cost_regressed: false,
        joint_position_cost: None,
        time_init_s,
        time_solve_s,
    };
    Ok((x, report))
}

fn eval(args: EvalArgs) -> pgo_rls::Result<()> {
    let g = read(&args.input, args.weight_reduction)?.graph;
    let poses = read(&args.poses, args.weight_reduction)?;
    if poses.graph.labels() != g.labels() {
        return Err(PgoError::TopologyMismatch(format!(
            "{} has {} vertices, {} has {}",
            args.poses.display(),
            poses.graph.vertex_count(),
            args.input.display(),
            g.vertex_count()
        )));
    }
    println!("{:.11e}", pgo_cost(&g, &poses.estimate));
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> pgo_rls::Result<()> {
    let g = read(&args.input, args.weight_reduction)?.graph;
    let row_norms = pseudo_inverse_row_norms(&g)?;
    let (mut c_m, mut e_m) = (None, None);
    let mut aligned = None;
    if let Some(path) = &args.truth {
        let truth = read(path, args.weight_reduction)?;
        let start = chordal_init_with(&g, ChordalOptions::default())?;
        let target = truth.estimate.anchored().rotations;
        e_m = Some(compute_em(&g, &truth.graph, &start)?);
        match alignment_deltas(&start, &target) {
            Some(deltas) => {
                c_m = Some(compute_cm(&deltas, g.edges())?);
                aligned = Some(true);
            }
            None => aligned = Some(false),
        }
    }
    let basin = BasinReport::new(row_norms, c_m, e_m);
    let out = json!({
        "m": g.edge_count(),
        "n": g.free_vertex_count(),
        "connected": true,
        "a_m": basin.a_m,
        "row_norm_p50": percentile(&basin.row_norms, 50.0),
        "row_norm_p90": percentile(&basin.row_norms, 90.0),
        "row_norm_p99": percentile(&basin.row_norms, 99.0),
        "row_norm_max": basin.a_m,
        "c_m": basin.c_m,
        "e_m": basin.e_m,
        "bound": basin.bound,
        "start_within_90_deg": aligned,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Perturb(a) => perturb_cmd(a),
        Command::Solve(a) => solve(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
