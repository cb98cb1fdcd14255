//! Command-line benchmark harness: factorize, solve, benchmark sweeps, and
//! desk-scale diagnostics on generated Poisson problems or MatrixMarket
//! inputs.

use clap::{Parser, ValueEnum};
use hsolver::bench::{
    assemble_problem, build_factorization, make_rhs, parse_problem, parse_sweep, run_bench,
    to_csv, BenchConfig, ProblemSpec, RhsSpec, SolverKind,
};
use hsolver::dense::ProjectionKind;
use hsolver::diagnostics::run_diagnostics;
use hsolver::error::Error;
use hsolver::factor::{EpsSchedule, Mode, PreserveStyle};
use hsolver::hierarchy::WellSepPredicate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ActionArg {
    Bench,
    Solve,
    Diag,
    FactorStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    Const,
    Leaf,
    Root,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Lorasp,
    GcConstant,
    GcEigenvector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Gmres,
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RhsArg {
    Ones,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PredicateArg {
    Geometric,
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PreserveStyleArg {
    Exact,
    /// Approximate preservation with the default (second-order symmetric) scheme.
    Approx,
    OneSided,
    Sym1,
    Sym2,
}

#[derive(Parser, Debug)]
#[command(name = "hsolver", version, about = "Hierarchical solver benchmark harness")]
struct Args {
    /// What to run.
    #[arg(long, value_enum, default_value = "bench")]
    action: ActionArg,

    /// Problem string: poisson2d:k=32[:coeff=...[:seed=..]] | poisson3d:k=8 | mm:path.mtx
    #[arg(long)]
    problem: Option<String>,

    /// Sweep grid sizes, e.g. n=32..512 (doubling k).
    #[arg(long)]
    sweep: Option<String>,

    /// Compression parameter(s), comma separated.
    #[arg(long, default_value = "0.1", value_delimiter = ',')]
    eps: Vec<f64>,

    #[arg(long, value_enum, default_value = "const")]
    eps_schedule: ScheduleArg,

    #[arg(long, default_value_t = 8)]
    leaf_size: usize,

    /// Tree depth override (default: largest depth keeping leaves >= leaf-size).
    #[arg(long)]
    depth: Option<usize>,

    /// Solver mode(s), comma separated.
    #[arg(long, value_enum, default_value = "lorasp", value_delimiter = ',')]
    mode: Vec<ModeArg>,

    #[arg(long, value_enum, default_value = "gmres")]
    solver: SolverArg,

    /// Convergence tolerance (default 1e-10 gmres, 1e-6 stationary).
    #[arg(long)]
    tol: Option<f64>,

    #[arg(long, default_value_t = 500)]
    max_iter: usize,

    /// Seed for the random solution vector.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    #[arg(long, value_enum, default_value = "random")]
    rhs: RhsArg,

    /// Well-separated predicate (default: geometric on grids, graph otherwise).
    #[arg(long, value_enum)]
    predicate: Option<PredicateArg>,

    /// Preservation style for GC modes.
    #[arg(long, value_enum, default_value = "exact")]
    preserve_style: PreserveStyleArg,

    /// eps1 for the approximate preservation styles.
    #[arg(long, default_value_t = 0.05)]
    eps1: f64,

    /// JSON report (bench), solution vector (solve), or JSON output path.
    #[arg(long)]
    out: Option<std::path::PathBuf>,

    /// Write the hierarchy topology as JSON (factor-stats).
    #[arg(long)]
    dump_hierarchy: Option<std::path::PathBuf>,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_)
        | Error::InvalidPartition(_)
        | Error::DepthTooLarge { .. }
        | Error::Unsupported(_)
        | Error::Parse { .. } => 2,
        _ => 3,
    }
}

fn main() {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn collect_configs(args: &Args) -> Result<Vec<BenchConfig>, Error> {
    let problem_str = args
        .problem
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("--problem is required".into()))?;
    let base = parse_problem(problem_str)?;
    let problems: Vec<ProblemSpec> = match &args.sweep {
        None => vec![base],
        Some(s) => parse_sweep(s)?
            .into_iter()
            .map(|k| base.with_k(k))
            .collect::<Result<_, _>>()?,
    };
    let solver = match args.solver {
        SolverArg::Gmres => SolverKind::Gmres,
        SolverArg::Stationary => SolverKind::Stationary,
    };
    let schedule = match args.eps_schedule {
        ScheduleArg::Const => EpsSchedule::Constant,
        ScheduleArg::Leaf => EpsSchedule::LeafAnchored,
        ScheduleArg::Root => EpsSchedule::RootAnchored,
    };
    let preserve_style = match args.preserve_style {
        PreserveStyleArg::Exact => PreserveStyle::Exact,
        PreserveStyleArg::Approx | PreserveStyleArg::Sym2 => PreserveStyle::Approximate {
            scheme: ProjectionKind::SymmetricSecond,
            eps1: args.eps1,
        },
        PreserveStyleArg::OneSided => PreserveStyle::Approximate {
            scheme: ProjectionKind::OneSided,
            eps1: args.eps1,
        },
        PreserveStyleArg::Sym1 => PreserveStyle::Approximate {
            scheme: ProjectionKind::SymmetricFirst,
            eps1: args.eps1,
        },
    };
    let mut configs = Vec::new();
    for p in &problems {
        for &eps in &args.eps {
            for &m in &args.mode {
                let mode = match m {
                    ModeArg::Lorasp => Mode::LoRaSp,
                    ModeArg::GcConstant => Mode::GcConstant,
                    ModeArg::GcEigenvector => Mode::GcEigenvector,
                };
                let mut cfg = BenchConfig::new(p.clone(), eps, mode, solver);
                cfg.eps_schedule = schedule;
                cfg.leaf_size = args.leaf_size;
                cfg.depth = args.depth;
                cfg.preserve_style = preserve_style;
                if let Some(t) = args.tol {
                    cfg.tol = t;
                }
                cfg.max_iter = args.max_iter;
                cfg.rhs = match args.rhs {
                    RhsArg::Ones => RhsSpec::Ones,
                    RhsArg::Random => RhsSpec::RandomSolution { seed: args.seed },
                };
                cfg.predicate = args.predicate.map(|p| match p {
                    PredicateArg::Geometric => WellSepPredicate::Geometric,
                    PredicateArg::Graph => WellSepPredicate::GraphAdjacency,
                });
                configs.push(cfg);
            }
        }
    }
    Ok(configs)
}

fn run(args: &Args) -> Result<(), Error> {
    match args.action {
        ActionArg::Bench => {
            let configs = collect_configs(args)?;
            let out = run_bench(&configs)?;
            print!("{}", to_csv(&out));
            if let Some(path) = &args.out {
                std::fs::write(path, serde_json::to_string_pretty(&out).expect("json"))?;
            }
            Ok(())
        }
        ActionArg::Solve => {
            let configs = collect_configs(args)?;
            if configs.len() != 1 {
                return Err(Error::InvalidConfig(
                    "solve takes exactly one problem/eps/mode combination".into(),
                ));
            }
            let cfg = &configs[0];
            let asm = assemble_problem(&cfg.problem)?;
            let (_, h) = build_factorization(cfg, &asm)?;
            let (b, _) = make_rhs(&asm.a, cfg.rhs);
            let op = hsolver::solve::as_linear_operator(&h);
            let (x, rep) = match cfg.solver {
                SolverKind::Gmres => {
                    hsolver::krylov::gmres_solve(&asm.a, &b, Some(&op), cfg.tol, cfg.max_iter)
                }
                SolverKind::Stationary => {
                    hsolver::krylov::stationary_solve(&asm.a, &b, &op, cfg.tol, None, cfg.max_iter)
                }
            };
            let res = asm.a.residual_norm(&x, &b)? / b.norm().max(f64::MIN_POSITIVE);
            println!(
                "n={} iterations={} converged={} relative_residual={:.3e}",
                asm.a.n(),
                rep.iterations,
                rep.converged,
                res
            );
            let path = args
                .out
                .clone()
                .unwrap_or_else(|| std::path::PathBuf::from("solution.txt"));
            let mut body = String::new();
            for v in x.iter() {
                body.push_str(&format!("{v:.17e}\n"));
            }
            std::fs::write(&path, body)?;
            println!("solution written to {}", path.display());
            Ok(())
        }
        ActionArg::Diag => {
            let configs = collect_configs(args)?;
            let mut reports = Vec::new();
            for cfg in &configs {
                let asm = assemble_problem(&cfg.problem)?;
                if asm.a.n() > hsolver::diagnostics::DESK_LIMIT {
                    return Err(Error::Unsupported(format!(
                        "diagnostics limited to n <= {}, got {} (use a smaller problem)",
                        hsolver::diagnostics::DESK_LIMIT,
                        asm.a.n()
                    )));
                }
                let (_, h) = build_factorization(cfg, &asm)?;
                reports.push(run_diagnostics(&h, &asm.a)?);
            }
            let json = serde_json::to_string_pretty(&reports).expect("json");
            match &args.out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
            Ok(())
        }
        ActionArg::FactorStats => {
            let configs = collect_configs(args)?;
            let mut stats = Vec::new();
            for cfg in &configs {
                let asm = assemble_problem(&cfg.problem)?;
                let (hier, h) = build_factorization(cfg, &asm)?;
                if let Some(path) = &args.dump_hierarchy {
                    std::fs::write(path, hier.dump_json())?;
                }
                stats.push(h.stats().clone());
            }
            let json = serde_json::to_string_pretty(&stats).expect("json");
            match &args.out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
            Ok(())
        }
    }
}
