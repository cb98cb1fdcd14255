//! Benchmark harness: problem-string grammar, single-configuration runs,
//! and the CSV/JSON emission used by the command line.

use crate::error::{Error, Result};
use crate::factor::{factorize, EpsSchedule, HFactorization, Mode, PreserveStyle, SolverConfig};
use crate::hierarchy::{default_depth, ClusterHierarchy, WellSepPredicate};
use crate::krylov::{gmres_solve, stationary_solve, IterationReport};
use crate::problems::{poisson_matrix, read_matrix_market, Coefficient, GridSpec};
use crate::solve::as_linear_operator;
use crate::sparse::SparseSymMatrix;
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    Poisson(GridSpec),
    MatrixMarket(PathBuf),
}

/// A benchmark problem plus its canonical display string.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub kind: ProblemKind,
}

impl ProblemSpec {
    pub fn poisson(dim: usize, k: usize, coeff: Coefficient) -> Result<Self> {
        let spec = GridSpec::new(dim, k, coeff)?;
        Ok(Self {
            name: canonical_poisson_name(&spec),
            kind: ProblemKind::Poisson(spec),
        })
    }

    /// Same problem family at a different grid size.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        match &self.kind {
            ProblemKind::Poisson(g) => Self::poisson(g.dim, k, g.coeff),
            ProblemKind::MatrixMarket(_) => Err(Error::InvalidConfig(
                "--sweep applies only to generated problems".into(),
            )),
        }
    }
}

fn canonical_poisson_name(g: &GridSpec) -> String {
    let coeff = match g.coeff {
        Coefficient::Constant(1.0) => String::new(),
        Coefficient::Constant(a) => format!(":coeff=constant:alpha={a}"),
        Coefficient::Piecewise => ":coeff=piecewise".to_string(),
        Coefficient::Random { seed } => format!(":coeff=random:seed={seed}"),
    };
    format!("poisson{}d:k={}{}", g.dim, g.k, coeff)
}

/// Parse the problem grammar: `poisson2d:k=128:coeff=random:seed=7`,
/// `poisson3d:k=16`, or `mm:path.mtx`.
pub fn parse_problem(s: &str) -> Result<ProblemSpec> {
    let bad = |msg: String| Error::InvalidConfig(format!("problem '{s}': {msg}"));
    if let Some(path) = s.strip_prefix("mm:") {
        if path.is_empty() {
            return Err(bad("missing MatrixMarket path".into()));
        }
        return Ok(ProblemSpec {
            name: s.to_string(),
            kind: ProblemKind::MatrixMarket(PathBuf::from(path)),
        });
    }
    let mut parts = s.split(':');
    let head = parts.next().unwrap_or_default();
    let dim = match head {
        "poisson2d" => 2,
        "poisson3d" => 3,
        other => return Err(bad(format!("unknown problem family '{other}'"))),
    };
    let mut k: Option<usize> = None;
    let mut coeff_kind: Option<&str> = None;
    let mut seed: u64 = 0;
    let mut alpha: f64 = 1.0;
    for part in parts {
        let (key, val) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got '{part}'")))?;
        match key {
            "k" => k = Some(val.parse().map_err(|e| bad(format!("k: {e}")))?),
            "coeff" => coeff_kind = Some(val),
            "seed" => seed = val.parse().map_err(|e| bad(format!("seed: {e}")))?,
            "alpha" => alpha = val.parse().map_err(|e| bad(format!("alpha: {e}")))?,
            other => return Err(bad(format!("unknown key '{other}'"))),
        }
    }
    let k = k.ok_or_else(|| bad("missing k".into()))?;
    let coeff = match coeff_kind {
        None | Some("constant") => Coefficient::Constant(alpha),
        Some("piecewise") => Coefficient::Piecewise,
        Some("random") => Coefficient::Random { seed },
        Some(other) => return Err(bad(format!("unknown coefficient '{other}'"))),
    };
    ProblemSpec::poisson(dim, k, coeff)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolverKind {
    Gmres,
    Stationary,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Gmres => "gmres",
            SolverKind::Stationary => "stationary",
        }
    }

    pub fn default_tol(&self) -> f64 {
        match self {
            SolverKind::Gmres => 1e-10,
            SolverKind::Stationary => 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsSpec {
    /// b = A x* with x* uniform in [-1,1]^n from the given seed.
    RandomSolution { seed: u64 },
    /// b = vector of ones.
    Ones,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub problem: ProblemSpec,
    pub eps: f64,
    pub eps_schedule: EpsSchedule,
    pub leaf_size: usize,
    pub depth: Option<usize>,
    pub mode: Mode,
    pub preserve_style: PreserveStyle,
    pub solver: SolverKind,
    pub tol: f64,
    pub max_iter: usize,
    pub rhs: RhsSpec,
    pub predicate: Option<WellSepPredicate>,
}

impl BenchConfig {
    pub fn new(problem: ProblemSpec, eps: f64, mode: Mode, solver: SolverKind) -> Self {
        Self {
            problem,
            eps,
            eps_schedule: EpsSchedule::Constant,
            leaf_size: 8,
            depth: None,
            mode,
            preserve_style: PreserveStyle::Exact,
            solver,
            tol: solver.default_tol(),
            max_iter: 500,
            rhs: RhsSpec::RandomSolution { seed: 1 },
            predicate: None,
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRecord {
    pub problem: String,
    pub n: usize,
    pub tree_depth: usize,
    pub eps: f64,
    pub eps_schedule: String,
    pub mode: String,
    pub solver: String,
    pub iterations: usize,
    pub final_residual: f64,
    pub factor_time_s: f64,
    pub solve_time_s: f64,
    pub factor_entries: usize,
    pub converged: bool,
}

#[derive(Debug, Serialize)]
pub struct BenchOutcome {
    pub record: BenchRecord,
    pub report: IterationReport,
}

pub fn schedule_name(s: EpsSchedule) -> &'static str {
    match s {
        EpsSchedule::Constant => "const",
        EpsSchedule::LeafAnchored => "leaf",
        EpsSchedule::RootAnchored => "root",
    }
}

/// Materialized problem: matrix, optional coordinates, mesh width.
pub struct Assembled {
    pub a: SparseSymMatrix,
    pub coords: Option<Vec<[f64; 3]>>,
    pub mesh_width: f64,
    pub grid: Option<GridSpec>,
}

pub fn assemble_problem(p: &ProblemSpec) -> Result<Assembled> {
    match &p.kind {
        ProblemKind::Poisson(g) => {
            let (a, coords) = poisson_matrix(g)?;
            Ok(Assembled {
                a,
                coords: Some(coords),
                mesh_width: g.h(),
                grid: Some(*g),
            })
        }
        ProblemKind::MatrixMarket(path) => {
            let a = read_matrix_market(path)?;
            // no geometry: fall back to a 2D-like mesh width for the
            // root-anchored schedule
            let h = 1.0 / ((a.n() as f64).sqrt() + 1.0);
            Ok(Assembled {
                a,
                coords: None,
                mesh_width: h,
                grid: None,
            })
        }
    }
}

/// Build hierarchy + factorization for one configuration.
pub fn build_factorization(
    cfg: &BenchConfig,
    asm: &Assembled,
) -> Result<(ClusterHierarchy, HFactorization)> {
    let n = asm.a.n();
    let depth = cfg.depth.unwrap_or_else(|| default_depth(n, cfg.leaf_size));
    let predicate = cfg.predicate.unwrap_or(match &asm.coords {
        Some(_) => WellSepPredicate::Geometric,
        None => WellSepPredicate::GraphAdjacency,
    });
    let hier = ClusterHierarchy::build(&asm.a, asm.coords.as_deref(), depth, predicate)?;
    let solver_cfg = SolverConfig {
        eps: cfg.eps,
        eps_schedule: cfg.eps_schedule,
        leaf_size: cfg.leaf_size,
        mode: cfg.mode,
        preserve_style: cfg.preserve_style,
        mesh_width: Some(asm.mesh_width),
        ..SolverConfig::default()
    };
    let preserve: Option<Vec<DVector<f64>>> = match cfg.mode {
        Mode::GcEigenvector => {
            let v = match &asm.grid {
                Some(g) => crate::problems::smallest_eigenvector(g)?,
                None => {
                    return Err(Error::Unsupported(
                        "gc-eigenvector needs a generated grid problem".into(),
                    ))
                }
            };
            Some(vec![v])
        }
        _ => None,
    };
    let h = factorize(&asm.a, &hier, &solver_cfg, preserve.as_deref())?;
    Ok((hier, h))
}

pub fn make_rhs(a: &SparseSymMatrix, rhs: RhsSpec) -> (DVector<f64>, Option<DVector<f64>>) {
    match rhs {
        RhsSpec::Ones => (DVector::from_element(a.n(), 1.0), None),
        RhsSpec::RandomSolution { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x_star = DVector::from_fn(a.n(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let b = a.spmv(&x_star).expect("dimensions match");
            (b, Some(x_star))
        }
    }
}

/// Run one benchmark configuration end to end.
pub fn run_one(cfg: &BenchConfig) -> Result<BenchOutcome> {
    let asm = assemble_problem(&cfg.problem)?;
    let t0 = std::time::Instant::now();
    let (hier, h) = build_factorization(cfg, &asm)?;
    let factor_time = t0.elapsed().as_secs_f64();

    let (b, x_star) = make_rhs(&asm.a, cfg.rhs);
    let op = as_linear_operator(&h);
    let t1 = std::time::Instant::now();
    let (x, report) = match cfg.solver {
        SolverKind::Gmres => gmres_solve(&asm.a, &b, Some(&op), cfg.tol, cfg.max_iter),
        SolverKind::Stationary => stationary_solve(
            &asm.a,
            &b,
            &op,
            cfg.tol,
            x_star.as_ref(),
            cfg.max_iter,
        ),
    };
    let solve_time = t1.elapsed().as_secs_f64();
    let final_residual = asm.a.residual_norm(&x, &b)? / b.norm().max(f64::MIN_POSITIVE);

    Ok(BenchOutcome {
        record: BenchRecord {
            problem: cfg.problem.name.clone(),
            n: asm.a.n(),
            tree_depth: hier.depth(),
            eps: cfg.eps,
            eps_schedule: schedule_name(cfg.eps_schedule).to_string(),
            mode: cfg.mode.name().to_string(),
            solver: cfg.solver.name().to_string(),
            iterations: report.iterations,
            final_residual,
            factor_time_s: factor_time,
            solve_time_s: solve_time,
            factor_entries: h.factor_entries(),
            converged: report.converged,
        },
        report,
    })
}

/// Run a batch and sort the rows by (problem, n, eps, mode, solver).
pub fn run_bench(configs: &[BenchConfig]) -> Result<Vec<BenchOutcome>> {
    let mut out = Vec::with_capacity(configs.len());
    for cfg in configs {
        out.push(run_one(cfg)?);
    }
    out.sort_by(|a, b| {
        let ka = (&a.record.problem, a.record.n);
        let kb = (&b.record.problem, b.record.n);
        ka.cmp(&kb)
            .then(a.record.eps.partial_cmp(&b.record.eps).unwrap())
            .then(a.record.mode.cmp(&b.record.mode))
            .then(a.record.solver.cmp(&b.record.solver))
    });
    Ok(out)
}

pub const CSV_HEADER: &str = "problem,n,tree_depth,eps,eps_schedule,mode,solver,iterations,final_residual,factor_time_s,solve_time_s,factor_entries";

pub fn to_csv(rows: &[BenchOutcome]) -> String {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for o in rows {
        let r = &o.record;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{:.3e},{:.3},{:.3},{}",
            r.problem,
            r.n,
            r.tree_depth,
            r.eps,
            r.eps_schedule,
            r.mode,
            r.solver,
            r.iterations,
            r.final_residual,
            r.factor_time_s,
            r.solve_time_s,
            r.factor_entries
        );
    }
    s
}

/// Parse a sweep expression `n=32..512` into doubling grid sizes.
pub fn parse_sweep(s: &str) -> Result<Vec<usize>> {
    let bad = |msg: &str| Error::InvalidConfig(format!("sweep '{s}': {msg}"));
    let body = s.strip_prefix("n=").ok_or_else(|| bad("expected n=lo..hi"))?;
    let (lo, hi) = body.split_once("..").ok_or_else(|| bad("expected n=lo..hi"))?;
    let lo: usize = lo.parse().map_err(|_| bad("bad lower bound"))?;
    let hi: usize = hi.parse().map_err(|_| bad("bad upper bound"))?;
    if lo < 2 || hi < lo {
        return Err(bad("need 2 <= lo <= hi"));
    }
    let mut v = Vec::new();
    let mut k = lo;
    while k <= hi {
        v.push(k);
        k *= 2;
    }
    Ok(v)
}
