use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cc_core::acsys::{build_ac_system, MassVector, DEFAULT_LAMBDA_PRIME};
use cc_core::census::{
    census, classify_solution_set, five_body_ansatzes, seeded_census, CensusError, CensusOptions, CensusReport,
    CERT_RADIUS,
};
use cc_core::certify::{certify_solution, CertStatus, CertificationResult, RIGOR_MECHANISM};
use cc_core::classify::{real_newton, DEFAULT_THETA};
use cc_core::mixedcells::{mixed_volume, mixed_volume_count, mixed_volume_partial, MixedVolumeError};
use cc_core::orchestrate::{JobError, JobSpec};
use cc_core::poly::PolySystem;
use cc_core::tracker::{solve_all, Method, SolutionSet, SolveOptions, TrackerError, TrackerOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_BUDGET: u8 = 3;

#[derive(Parser)]
#[command(name = "ccsolve", version, about = "Central configurations via polyhedral homotopy continuation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the polynomial system for N bodies
    Gen(GenArgs),
    /// Mixed volume of a system's supports
    Mv(MvArgs),
    /// Track every start path and write the deduplicated endpoints
    Solve(SolveArgs),
    /// Krawczyk-certify the real endpoints of a solution file
    Certify(CertifyArgs),
    /// Filter, certify and group solutions into symmetry classes
    Classify(ClassifyArgs),
    /// Coordinates for each class representative
    Embed(EmbedArgs),
    /// Exhaustive census: gen, solve, filter, certify, classify, embed
    Census(CensusArgs),
    /// Five-body census from symmetric starting shapes
    SeededCensus(SeededArgs),
}

#[derive(Args, Clone)]
struct MassArgs {
    #[arg(long)]
    bodies: usize,
    /// Comma-separated masses; equal masses when omitted
    #[arg(long, value_delimiter = ',')]
    masses: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_PRIME, allow_hyphen_values = true)]
    lambda: f64,
}

impl MassArgs {
    fn masses(&self) -> Result<MassVector> {
        let m = match &self.masses {
            Some(m) => {
                if m.len() != self.bodies {
                    return Err(usage(format!("{} masses given for {} bodies", m.len(), self.bodies)));
                }
                MassVector::new(m.clone())
            }
            None => MassVector::equal(self.bodies),
        };
        m.map_err(|e| usage(e.to_string()))
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    mass: MassArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MvArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Per cell: edge index pairs and volume, one line each
    #[arg(long)]
    cells_out: Option<PathBuf>,
    /// Count cells without storing them; prints progress on stderr
    #[arg(long)]
    count_only: bool,
    /// Stop starting new search branches after this many seconds and report
    /// the partial count
    #[arg(long)]
    time_limit: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Td,
    Poly,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Poly)]
    method: MethodArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads; 0 uses all cores
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value_t = 1024)]
    chunk: u64,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    resume: bool,
    #[arg(long, default_value_t = 5_000_000)]
    budget: u64,
    #[arg(long, default_value_t = 1e-6)]
    dedup_tol: f64,
    #[arg(long, default_value_t = 0.05)]
    initial_step: f64,
    #[arg(long, default_value_t = 1e-8)]
    min_step: f64,
    #[arg(long, default_value_t = 0.1)]
    max_step: f64,
    #[arg(long, default_value_t = 1e-9)]
    corrector_tol: f64,
    #[arg(long, default_value_t = 1e14)]
    divergence_norm: f64,
    #[arg(long, default_value_t = 1e-12)]
    endpoint_tol: f64,
    /// Suppress per-chunk progress lines
    #[arg(long)]
    quiet: bool,
}

impl SolverArgs {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            method: match self.method {
                MethodArg::Td => Method::TotalDegree,
                MethodArg::Poly => Method::Polyhedral,
            },
            seed: self.seed,
            tracker: TrackerOptions {
                initial_step: self.initial_step,
                min_step: self.min_step,
                max_step: self.max_step,
                corrector_tol: self.corrector_tol,
                divergence_norm: self.divergence_norm,
                endpoint_tol: self.endpoint_tol,
                ..TrackerOptions::default()
            },
            job: JobSpec {
                chunk_size: self.chunk,
                workers: self.workers,
                checkpoint: self.checkpoint.clone(),
                resume: self.resume,
                path_budget: self.budget,
                progress: !self.quiet,
                stop_after_chunks: None,
            },
            dedup_tol: self.dedup_tol,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    system: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    solutions: PathBuf,
    #[arg(long, default_value_t = CERT_RADIUS)]
    radius: f64,
    /// Endpoints with a larger imaginary part are skipped
    #[arg(long, default_value_t = DEFAULT_THETA)]
    theta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ClassifyOpts {
    #[arg(long, default_value_t = DEFAULT_THETA)]
    theta: f64,
    #[arg(long, default_value_t = CERT_RADIUS)]
    radius: f64,
    /// Realness thresholds for the stability diagnostic
    #[arg(long, value_delimiter = ',', default_values_t = vec![1e-12, 1e-9, 1e-5])]
    theta_window: Vec<f64>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    solutions: PathBuf,
    #[command(flatten)]
    mass: MassArgs,
    #[command(flatten)]
    opts: ClassifyOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    /// A census or classify report
    #[arg(long)]
    classes: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CensusArgs {
    #[command(flatten)]
    mass: MassArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    opts: ClassifyOpts,
    /// Allow an exhaustive five-body run
    #[arg(long)]
    i_know_this_is_huge: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SeededArgs {
    #[arg(long, default_value_t = 5)]
    bodies: usize,
    #[arg(long, default_value_t = CERT_RADIUS)]
    radius: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(msg: String) -> anyhow::Error {
    anyhow::Error::new(Failure {
        code: EXIT_USAGE,
        error: anyhow!(msg),
    })
}

fn numeric(msg: String) -> anyhow::Error {
    anyhow::Error::new(Failure {
        code: EXIT_NUMERIC,
        error: anyhow!(msg),
    })
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for Failure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(f) = err.downcast_ref::<Failure>() {
        return f.code;
    }
    for cause in err.chain() {
        if let Some(TrackerError::BudgetExceeded { .. } | TrackerError::Job(JobError::BudgetExceeded { .. })) =
            cause.downcast_ref::<TrackerError>()
        {
            return EXIT_BUDGET;
        }
        if let Some(JobError::BudgetExceeded { .. }) = cause.downcast_ref::<JobError>() {
            return EXIT_BUDGET;
        }
        if let Some(CensusError::Solve(TrackerError::BudgetExceeded { .. })) = cause.downcast_ref::<CensusError>() {
            return EXIT_BUDGET;
        }
        if let Some(CensusError::Solve(TrackerError::Job(JobError::BudgetExceeded { .. }))) =
            cause.downcast_ref::<CensusError>()
        {
            return EXIT_BUDGET;
        }
        if cause.downcast_ref::<CensusError>().is_some() || cause.downcast_ref::<MixedVolumeError>().is_some() {
            return EXIT_NUMERIC;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_USAGE;
        }
    }
    EXIT_NUMERIC
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_system(path: &Path) -> Result<PolySystem> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    PolySystem::from_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

fn gen(a: GenArgs) -> Result<()> {
    let ac = build_ac_system(&a.mass.masses()?, a.mass.lambda)?;
    let text = ac.system.to_text();
    match &a.out {
        Some(p) => {
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
            print!(
                "{}",
                json(&serde_json::json!({
                    "bodies": a.mass.bodies,
                    "variables": ac.system.nvars(),
                    "equations": ac.system.len(),
                    "degrees": ac.system.degrees(),
                    "total_degree": ac.system.total_degree().to_string(),
                }))
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn mv(a: MvArgs) -> Result<()> {
    let sys = read_system(&a.system)?;
    let report = |p: cc_core::mixedcells::Progress| {
        eprintln!(
            "branches {}/{} cells={} volume={}",
            p.branches_done, p.branches_total, p.cells, p.volume
        )
    };
    if let Some(secs) = a.time_limit {
        let budget = std::time::Duration::try_from_secs_f64(secs).map_err(|e| usage(e.to_string()))?;
        let r = mixed_volume_partial(&sys, a.seed, budget, Some(&report))?;
        print!(
            "{}",
            json(&serde_json::json!({
                "complete": r.complete(),
                "branches_done": r.branches_done,
                "branches_total": r.branches_total,
                "cells": r.cells,
                "volume": r.volume.to_string(),
                "total_degree": sys.total_degree().to_string(),
            }))
        );
        return Ok(());
    }
    if a.count_only {
        let r = mixed_volume_count(&sys, a.seed, Some(&report))?;
        print!(
            "{}",
            json(&serde_json::json!({
                "mixed_volume": r.mixed_volume.to_string(),
                "cells": r.cell_count,
                "lifting_seed": r.lifting_seed,
                "total_degree": sys.total_degree().to_string(),
            }))
        );
        return Ok(());
    }
    let r = mixed_volume(&sys, a.seed)?;
    if let Some(p) = &a.cells_out {
        let mut text = String::new();
        for c in &r.cells {
            let edges: Vec<String> = c.edges.iter().map(|(i, j)| format!("{i},{j}")).collect();
            text += &format!("{} {}\n", edges.join(" "), c.volume);
        }
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    print!(
        "{}",
        json(&serde_json::json!({
            "mixed_volume": r.mixed_volume.to_string(),
            "cells": r.cells.len(),
            "lifting_seed": r.lifting_seed,
            "total_degree": sys.total_degree().to_string(),
        }))
    );
    Ok(())
}

fn solve(a: SolveArgs) -> Result<()> {
    let sys = read_system(&a.system)?;
    let started = std::time::Instant::now();
    let set = solve_all(&sys, &a.solver.options())?;
    eprintln!(
        "paths {} converged {} diverged {} failed {} distinct {} in {:.1}s",
        set.stats.total_paths,
        set.stats.converged,
        set.stats.diverged,
        set.stats.failed,
        set.records.len(),
        started.elapsed().as_secs_f64()
    );
    write_out(a.out.as_deref(), &json(&set))
}

#[derive(serde::Serialize)]
struct CertEntry {
    index: usize,
    center: Vec<f64>,
    #[serde(flatten)]
    result: CertificationResult,
}

fn certify(a: CertifyArgs) -> Result<()> {
    let sys = read_system(&a.system)?;
    let set: SolutionSet = read_json(&a.solutions)?;
    let mut entries = Vec::new();
    for (index, r) in set.records.iter().enumerate() {
        if r.endpoint.iter().any(|z| z.im.abs() >= a.theta) {
            continue;
        }
        let x: Vec<f64> = r.endpoint.iter().map(|z| z.re).collect();
        let refined = real_newton(&sys, &x, 8);
        let result = certify_solution(&sys, &refined.variables, a.radius)?;
        entries.push(CertEntry {
            index,
            center: refined.variables,
            result,
        });
    }
    let certified = entries
        .iter()
        .filter(|e| e.result.status == CertStatus::CertifiedUnique)
        .count();
    eprintln!("{certified} of {} real solutions certified", entries.len());
    write_out(
        a.out.as_deref(),
        &json(&serde_json::json!({
            "radius": a.radius,
            "rigor": RIGOR_MECHANISM,
            "certified": certified,
            "solutions": entries,
        })),
    )
}

fn census_options(opts: &ClassifyOpts, lambda: f64, solve: SolveOptions) -> CensusOptions {
    CensusOptions {
        solve,
        lambda_prime: lambda,
        theta: opts.theta,
        radius: opts.radius,
        theta_window: opts.theta_window.clone(),
    }
}

fn finish_report(report: &CensusReport, out: Option<&Path>) -> Result<()> {
    eprint!("{}", report.table());
    write_out(out, &json(report))?;
    if !report.cross_foots() {
        return Err(numeric("class member counts do not add up to the physical count".into()));
    }
    if !report.all_certified() {
        return Err(numeric("some physical solutions failed certification".into()));
    }
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let ac = build_ac_system(&a.mass.masses()?, a.mass.lambda)?;
    let set: SolutionSet = read_json(&a.solutions)?;
    if set.records.first().is_some_and(|r| r.endpoint.len() != ac.system.nvars()) {
        return Err(usage(format!(
            "solutions have {} coordinates, {} bodies need {}",
            set.records[0].endpoint.len(),
            a.mass.bodies,
            ac.system.nvars()
        )));
    }
    let opts = census_options(&a.opts, a.mass.lambda, SolveOptions::default());
    let report = classify_solution_set(&ac, &set, &opts)?;
    finish_report(&report, a.out.as_deref())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let report: CensusReport = read_json(&a.classes)?;
    let n = report.bodies;
    let mut out = Vec::new();
    for c in &report.classes {
        let e = cc_core::embed::reconstruct(&c.class.representative, n, c.class.dimension)
            .map_err(|e| numeric(format!("class with representative {:?}: {e}", c.class.representative)))?;
        out.push(serde_json::json!({
            "name": c.name,
            "dimension": e.dimension,
            "isotropy_order": c.class.isotropy_order,
            "distances": c.class.representative,
            "coordinates": e.coordinates,
            "max_distance_error": e.max_distance_error,
        }));
    }
    write_out(a.out.as_deref(), &json(&out))
}

fn run_census(a: CensusArgs) -> Result<()> {
    if a.mass.bodies >= 5 && !a.i_know_this_is_huge {
        return Err(anyhow::Error::new(Failure {
            code: EXIT_BUDGET,
            error: anyhow!(
                "an exhaustive census for {} bodies is a cluster-scale job; use seeded-census, or pass --i-know-this-is-huge",
                a.mass.bodies
            ),
        }));
    }
    let masses = a.mass.masses()?;
    let opts = census_options(&a.opts, a.mass.lambda, a.solver.options());
    let started = std::time::Instant::now();
    let report = census(&masses, &opts)?;
    eprintln!("census finished in {:.1}s", started.elapsed().as_secs_f64());
    finish_report(&report, a.out.as_deref())
}

fn run_seeded(a: SeededArgs) -> Result<()> {
    if a.bodies != 5 {
        return Err(usage("seeded census is defined for 5 bodies".into()));
    }
    let opts = CensusOptions {
        radius: a.radius,
        ..CensusOptions::default()
    };
    let report = seeded_census(&five_body_ansatzes(), &opts)?;
    finish_report(&report, a.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Mv(a) => mv(a),
        Command::Solve(a) => solve(a),
        Command::Certify(a) => certify(a),
        Command::Classify(a) => classify(a),
        Command::Embed(a) => embed(a),
        Command::Census(a) => run_census(a),
        Command::SeededCensus(a) => run_seeded(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
