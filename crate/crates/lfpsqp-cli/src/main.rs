use lfpsqp_cli::trace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use lfpsqp::bench::{lookup, registry, BenchParams};
use lfpsqp::{
    DVector, DirectionChoice, LineSearchConfig, LineSearchMethod, RetractionVariant,
    SolveOptions, SolveStatus,
};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DirectionArg {
    Gradient,
    Newton,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RetractionArg {
    Projection,
    QuasiNewton,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LineSearchArg {
    Armijo,
    Golden,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TraceFormat {
    Csv,
    Json,
}

/// Run a benchmark problem and report the solve.
#[derive(Parser, Debug)]
#[command(name = "lfpsqp", version, about)]
struct Args {
    /// Benchmark problem name (see --list).
    #[arg(long)]
    problem: Option<String>,

    /// List registered problems and exit.
    #[arg(long)]
    list: bool,

    /// Problem dimension (ignored by fixed-size problems).
    #[arg(long, default_value_t = 100)]
    n: usize,

    /// Seed for randomized instances.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Density for sparse random instances.
    #[arg(long, default_value_t = 0.02)]
    density: f64,

    #[arg(long, value_enum, default_value_t = DirectionArg::Newton)]
    direction: DirectionArg,

    #[arg(long, value_enum, default_value_t = RetractionArg::Projection)]
    retraction: RetractionArg,

    #[arg(long, value_enum, default_value_t = LineSearchArg::Armijo)]
    linesearch: LineSearchArg,

    /// Initial line-search step.
    #[arg(long, default_value_t = 1.0)]
    alpha0: f64,

    /// Constraint feasibility tolerance.
    #[arg(long, default_value_t = 1e-6)]
    eps_c: f64,

    /// Relative rank tolerance for the factorization.
    #[arg(long, default_value_t = 1e-8)]
    eps_rank: f64,

    /// Inexact-Newton forcing constant.
    #[arg(long, default_value_t = 0.5)]
    kappa: f64,

    /// Initial penalty for the projection retraction.
    #[arg(long, default_value_t = 0.01)]
    mu0: f64,

    #[arg(long, default_value_t = 1e-8)]
    ftol: f64,

    #[arg(long, default_value_t = 1e-10)]
    xtol: f64,

    #[arg(long, default_value_t = 1e-6)]
    gtol: f64,

    #[arg(long, default_value_t = 1000)]
    max_iter: usize,

    /// Write the iteration trace to this path.
    #[arg(long)]
    trace: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = TraceFormat::Csv)]
    trace_format: TraceFormat,

    /// Whitespace-separated starting point overriding the builder's.
    #[arg(long)]
    x0: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(args: &Args) -> Result<ExitCode, String> {
    if args.list {
        for prob in registry() {
            println!("{}", prob.name);
        }
        return Ok(ExitCode::SUCCESS);
    }

    let name = args.problem.as_deref().ok_or_else(|| {
        let names: Vec<_> = registry().iter().map(|p| p.name).collect();
        format!("missing --problem; known problems: {}", names.join(", "))
    })?;
    let prob = lookup(name).ok_or_else(|| {
        let names: Vec<_> = registry().iter().map(|p| p.name).collect();
        format!("unknown problem '{name}'; known problems: {}", names.join(", "))
    })?;

    let params = BenchParams {
        n: args.n,
        seed: args.seed,
        density: args.density,
    };
    let (spec, mut x0) = (prob.builder)(&params);

    if let Some(path) = &args.x0 {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read x0 file {}: {e}", path.display()))?;
        let values: Result<Vec<f64>, _> =
            text.split_whitespace().map(str::parse::<f64>).collect();
        let values = values.map_err(|e| format!("bad x0 entry: {e}"))?;
        if values.len() != spec.n() {
            return Err(format!(
                "x0 has {} entries, problem expects {}",
                values.len(),
                spec.n()
            ));
        }
        x0 = DVector::from_vec(values);
    }

    let opts = SolveOptions {
        direction: match args.direction {
            DirectionArg::Gradient => DirectionChoice::Gradient,
            DirectionArg::Newton => DirectionChoice::Newton,
        },
        retraction: match args.retraction {
            RetractionArg::Projection => RetractionVariant::Projection,
            RetractionArg::QuasiNewton => RetractionVariant::QuasiNewton,
        },
        linesearch: LineSearchConfig {
            method: match args.linesearch {
                LineSearchArg::Armijo => LineSearchMethod::Armijo,
                LineSearchArg::Golden => LineSearchMethod::Golden,
            },
            alpha0: args.alpha0,
            ..Default::default()
        },
        eps_c: args.eps_c,
        eps_rank: args.eps_rank,
        kappa: args.kappa,
        mu0: args.mu0,
        ftol: args.ftol,
        xtol: args.xtol,
        gtol: args.gtol,
        max_iter: args.max_iter,
    };

    let result = match lfpsqp::solve(spec, &x0, &opts) {
        Ok(result) => result,
        Err(e) => {
            // Nothing solved: flush an empty trace so downstream tooling
            // still sees a well-formed file.
            if let Some(path) = &args.trace {
                let empty: Vec<lfpsqp::TraceRecord> = Vec::new();
                write_trace_file(&empty, path, args.trace_format)?;
            }
            return Err(e.to_string());
        }
    };

    if let Some(path) = &args.trace {
        write_trace_file(&result.trace, path, args.trace_format)?;
    }

    let last = result.trace.last();
    println!(
        "status={} iterations={} f_final={} proj_grad_norm={} feasibility={}",
        result.status,
        result.outer_iterations(),
        result.f_final,
        last.map_or(f64::NAN, |r| r.proj_grad_norm),
        last.map_or(f64::NAN, |r| r.constraint_viol_inf),
    );

    Ok(match result.status {
        SolveStatus::ConvergedF | SolveStatus::ConvergedX | SolveStatus::ConvergedGrad => {
            ExitCode::SUCCESS
        }
        SolveStatus::MaxIter => ExitCode::from(2),
        SolveStatus::LineSearchFailed => ExitCode::from(3),
    })
}

fn write_trace_file(
    records: &[lfpsqp::TraceRecord],
    path: &PathBuf,
    format: TraceFormat,
) -> Result<(), String> {
    let rendered = match format {
        TraceFormat::Csv => trace::to_csv(records),
        TraceFormat::Json => trace::to_json(records).map_err(|e| e.to_string())?,
    };
    std::fs::write(path, rendered)
        .map_err(|e| format!("cannot write trace {}: {e}", path.display()))
}
