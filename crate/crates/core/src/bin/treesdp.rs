use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use treesdp::chordal::{self, CliqueTree};
use treesdp::io::{self, Document, Metadata, ProblemFile, SolutionFile};
use treesdp::ipm::{pdipm_solve, Mode, SolverConfig, Status};
use treesdp::iqc::{self, InterconnectedSystem, Verdict};
use treesdp::model::{self, domain_space_decompose, Assignment};
use treesdp::Error;

const EXIT_NO_CERTIFICATE: u8 = 2;
const EXIT_MAX_ITERS: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_USAGE: u8 = 64;
const EXIT_PARSE: u8 = 65;
const EXIT_NO_INPUT: u8 = 66;

/// Tree-structured coupled SDP solver and IQC robustness analysis.
#[derive(Parser)]
#[command(name = "treesdp", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Report the clique tree of a problem or system file.
    Decompose {
        file: PathBuf,
        /// Grid frequency (index) used for system files.
        #[arg(long, default_value_t = 0)]
        frequency: usize,
    },
    /// Solve a coupled or inequality-form SDP.
    Solve {
        file: PathBuf,
        /// Solution file to write.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Robustness analysis of an interconnected system.
    Analyze {
        file: PathBuf,
        /// Report file to write (the report is printed otherwise).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Strict-feasibility margin folded into the LMI.
        #[arg(long, default_value_t = iqc::DEFAULT_MARGIN)]
        margin: f64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Generate a chain of subsystems.
    GenerateChain {
        #[command(flatten)]
        gen: GenArgs,
    },
    /// Generate a scale-free interconnection.
    GenerateScalefree {
        #[command(flatten)]
        gen: GenArgs,
        /// Links added per new subsystem.
        #[arg(long, default_value_t = 1)]
        attach: usize,
        /// Degree cap of the attachment process.
        #[arg(long, default_value_t = 8)]
        max_degree: usize,
    },
    /// Validate a file without solving.
    Check { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Central,
    Distributed,
}

#[derive(Args)]
struct SolverArgs {
    /// Bound on μ.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Bound on the squared residual norms.
    #[arg(long, default_value_t = 1e-9)]
    feas_tol: f64,
    #[arg(long, default_value_t = 0.98)]
    tau: f64,
    /// Exponent of the centering rule.
    #[arg(long, default_value_t = 1)]
    sigma_exp: i32,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Distributed)]
    mode: ModeArg,
    /// Seed of the starting point.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Iteration trace CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Per-block (and per-frequency) work on a thread pool.
    #[arg(long)]
    parallel: bool,
    /// Largest clique order the solver accepts.
    #[arg(long, default_value_t = 160)]
    max_block_order: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            tau: self.tau,
            sigma_exp: self.sigma_exp,
            tol: self.tol,
            feas_tol: self.feas_tol,
            max_iters: self.max_iters,
            mode: match self.mode {
                ModeArg::Central => Mode::Central,
                ModeArg::Distributed => Mode::Distributed,
            },
            seed: self.seed,
            parallel: self.parallel,
            max_block_order: self.max_block_order,
            ..SolverConfig::default()
        }
    }
}

#[derive(Args)]
struct GenArgs {
    /// Number of subsystems.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid frequencies.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    frequencies: Vec<f64>,
    /// System file to write (stdout otherwise).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write the inequality-form SDP at the first frequency.
    #[arg(long)]
    problem_out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.cmd {
        Cmd::Decompose { file, frequency } => decompose(&file, frequency),
        Cmd::Solve { file, out, solver } => solve(&file, out.as_deref(), &solver),
        Cmd::Analyze {
            file,
            out,
            margin,
            solver,
        } => analyze(&file, out.as_deref(), margin, &solver),
        Cmd::GenerateChain { gen } => {
            generate(&gen, "chain", |f| iqc::gen_chain(gen.n, gen.seed, f))
        }
        Cmd::GenerateScalefree {
            gen,
            attach,
            max_degree,
        } => generate(&gen, "scalefree", |f| {
            iqc::gen_scalefree(gen.n, gen.seed, f, attach, max_degree)
        }),
        Cmd::Check { file } => check(&file),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Parse(_) | Error::Malformed(_) | Error::InvalidDimension(_) => EXIT_PARSE,
                Error::Io(_) => EXIT_NO_INPUT,
                _ => EXIT_NUMERICAL,
            })
        }
    }
}

fn print_json(v: &serde_json::Value) -> std::io::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)
}

fn write_or_print(path: Option<&Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|x| x + 1).collect()
}

/// Structure record; clique sizes count only indices below `order`.
fn structure_json(
    tree: &CliqueTree,
    asg: &Assignment,
    order: usize,
    fill_percent: f64,
) -> serde_json::Value {
    let sizes: Vec<usize> = tree
        .cliques
        .iter()
        .map(|c| c.iter().filter(|&&v| v < order).count())
        .collect();
    json!({
        "cliques": tree.len(),
        "max_clique": sizes.iter().max().copied().unwrap_or(0),
        "height": tree.height,
        "fill_percent": fill_percent,
        "clique_sizes": sizes,
        "clique_sets": tree.cliques.iter().map(|c| one_based(c)).collect::<Vec<_>>(),
        "parent": one_based(&tree.parent),
        "assignment": asg.phi.iter().map(|p| one_based(p)).collect::<Vec<_>>(),
    })
}

fn decompose(file: &Path, frequency: usize) -> Outcome {
    let report = match io::read_document(file)? {
        Document::Problem(ProblemFile::Coupled(p), _) => {
            let st = chordal::analyze_structure(&p.index_graph())?;
            let asg = model::assign_subproblems(&p, &st.tree)?;
            structure_json(&st.tree, &asg, p.n, st.embedding.fill_percent)
        }
        Document::Problem(ProblemFile::Inequality(s), _) => {
            let d = domain_space_decompose(&s)?;
            structure_json(&d.tree, &d.assignment, s.n, d.fill_percent)
        }
        Document::System(sys, _) => {
            if frequency >= sys.frequencies.len() {
                return Err(Failure::Usage(format!(
                    "frequency index {frequency} out of range (system has {})",
                    sys.frequencies.len()
                )));
            }
            let s = iqc::frequency_problem(&sys, frequency, iqc::DEFAULT_MARGIN)?;
            let d = domain_space_decompose(&s)?;
            structure_json(&d.tree, &d.assignment, s.n, d.fill_percent)
        }
        Document::Solution(_) => {
            return Err(Error::Parse("cannot decompose a solution file".into()).into())
        }
    };
    print_json(&report)?;
    Ok(0)
}

fn exit_for(status: Status) -> u8 {
    match status {
        Status::Optimal => 0,
        Status::MaxIters => EXIT_MAX_ITERS,
        Status::DivergingPrimal | Status::DivergingDual => EXIT_NO_CERTIFICATE,
        Status::NumericalFailure => EXIT_NUMERICAL,
    }
}

fn checked_config(args: &SolverArgs) -> Result<SolverConfig, Failure> {
    let cfg = args.config();
    cfg.check().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn solve(file: &Path, out: Option<&Path>, args: &SolverArgs) -> Outcome {
    let cfg = checked_config(args)?;
    let (problem, metadata) = io::read_problem(file)?;
    let (p, sol, y) = match problem {
        ProblemFile::Coupled(p) => {
            let sol = pdipm_solve(&p, &cfg, None)?;
            (p, sol, None)
        }
        ProblemFile::Inequality(s) => {
            let d = domain_space_decompose(&s)?;
            let sol = pdipm_solve(&d.problem, &cfg, Some((&d.tree, &d.assignment)))?;
            let v: Vec<Vec<f64>> = sol
                .state
                .v
                .iter()
                .map(|v| v.iter().copied().collect())
                .collect();
            let y = d.recover_y(&v);
            (d.problem, sol, Some(y))
        }
    };
    if let Some(t) = &args.trace_out {
        io::write_trace_file(t, &sol.trace)?;
    }
    let file = SolutionFile::from_solution(&p, &sol, y, metadata);
    if let Some(o) = out {
        io::write_text(o, &io::solution_to_json(&file))?;
    }
    print_json(&json!({
        "status": file.status,
        "iterations": file.iterations,
        "mu": file.mu,
        "primal_objective": file.primal_objective,
        "dual_objective": file.dual_objective,
        "r_primal_sq": file.r_primal_sq,
        "r_dual_sq": file.r_dual_sq,
        "message": file.message,
    }))?;
    Ok(exit_for(sol.status))
}

/// `trace.csv` for one frequency, `trace_f{k}.csv` for several.
fn trace_path(base: &Path, f: usize, count: usize) -> PathBuf {
    if count == 1 {
        return base.to_path_buf();
    }
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}_f{f}.{}", ext.to_string_lossy()),
        None => format!("{stem}_f{f}"),
    };
    base.with_file_name(name)
}

fn analyze(file: &Path, out: Option<&Path>, margin: f64, args: &SolverArgs) -> Outcome {
    let cfg = checked_config(args)?;
    if !(margin > 0.0) {
        return Err(Failure::Usage(format!(
            "margin must be positive, got {margin}"
        )));
    }
    let sys: InterconnectedSystem = io::read_system(file)?;
    let results = iqc::analyze(&sys, &cfg, margin)?;
    let verdict = iqc::robustness_verdict(&results);
    if let Some(t) = &args.trace_out {
        for (f, r) in results.iter().enumerate() {
            io::write_trace_file(&trace_path(t, f, results.len()), &r.solution.trace)?;
        }
    }
    let per_freq: Vec<_> = results
        .iter()
        .map(|r| {
            json!({
                "omega": r.omega,
                "status": r.solution.status.as_str(),
                "iterations": r.solution.iterations,
                "mu": r.solution.state.mu,
                "variables": r.variables,
                "order": r.order,
                "cliques": r.cliques,
                "max_clique": r.max_clique,
                "height": r.tree_height,
                "fill_percent": r.fill_percent,
                "certificate": {
                    "holds": r.check.holds(),
                    "max_eigenvalue": r.check.max_eigenvalue,
                    "required_below": -r.check.margin / 2.0,
                    "min_r": r.check.min_r,
                    "min_x": r.check.min_x,
                },
                "multipliers": r.y,
            })
        })
        .collect();
    let report = json!({
        "verdict": match verdict {
            Verdict::FeasibleMultiplier => "feasible-multiplier",
            Verdict::NoCertificate => "no-certificate",
        },
        "meaning": verdict.to_string(),
        "subsystems": sys.len(),
        "frequencies": per_freq,
    });
    let text = format!(
        "{}\n",
        serde_json::to_string_pretty(&report).expect("json value")
    );
    write_or_print(out, &text)?;
    eprintln!("{verdict}");
    Ok(match verdict {
        Verdict::FeasibleMultiplier => 0,
        Verdict::NoCertificate => EXIT_NO_CERTIFICATE,
    })
}

fn generate(
    args: &GenArgs,
    name: &str,
    make: impl Fn(&[f64]) -> treesdp::Result<InterconnectedSystem>,
) -> Outcome {
    if args.frequencies.iter().any(|w| !w.is_finite()) {
        return Err(Failure::Usage("frequencies must be finite".into()));
    }
    let sys = make(&args.frequencies).map_err(|e| Failure::Usage(e.to_string()))?;
    let md = Metadata {
        generator: Some(name.to_string()),
        seed: Some(args.seed),
        frequency: None,
    };
    write_or_print(args.out.as_deref(), &io::system_to_json(&sys, &md))?;
    if let Some(p) = &args.problem_out {
        let s = iqc::frequency_problem(&sys, 0, iqc::DEFAULT_MARGIN)?;
        let md = Metadata {
            frequency: Some(sys.frequencies[0]),
            ..md
        };
        io::write_text(p, &io::problem_to_json(&ProblemFile::Inequality(s), &md))?;
    }
    Ok(0)
}

fn check(file: &Path) -> Outcome {
    let summary = match io::read_document(file)? {
        Document::Problem(ProblemFile::Coupled(p), _) => {
            let report = p.validate();
            if !report.is_ok() {
                return Err(Error::Malformed(report.to_string().trim_end().to_string()).into());
            }
            format!(
                "coupled-sdp: n = {}, {} subproblems, {} constraints",
                p.n,
                p.subproblems.len(),
                p.constraint_count()
            )
        }
        Document::Problem(ProblemFile::Inequality(s), _) => {
            format!(
                "sparse-inequality-sdp: n = {}, {} variables",
                s.n,
                s.variable_count()
            )
        }
        Document::System(s, _) => format!(
            "interconnected-system: {} subsystems, {} frequencies, {} interconnections",
            s.len(),
            s.frequencies.len(),
            s.gamma.len()
        ),
        Document::Solution(s) => {
            format!("solution: status {}, {} blocks", s.status, s.blocks.len())
        }
    };
    println!("ok: {summary}");
    Ok(0)
}
