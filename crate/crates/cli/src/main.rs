use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use pbvp_core::io::to_json_string;
use pbvp_core::pipeline::{certify, run_gallery, solve_instance, write_gallery, CertifyOptions};
use pbvp_core::problems::{gallery, load_problem, Instance};
use pbvp_core::solver::{SolveConfig, SolveMode};
use pbvp_core::Error;

const EXIT_INPUT: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "pbvp", version, about = "Periodic boundary value problems via lower and upper solutions")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a problem file and write the result
    Solve(SolveArgs),
    /// Check the hypotheses for a problem file and write a certificate
    Certify(CertifyArgs),
    /// Run the built-in examples end to end
    Gallery(GalleryArgs),
}

#[derive(Args)]
struct SolveArgs {
    problem: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value = "auto")]
    mode: SolveMode,
    #[arg(long, requires = "b", allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, requires = "a", allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    problem: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "Delta")]
    delta_cap: Option<f64>,
    #[arg(long, requires = "b", allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, requires = "a", allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GalleryArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn classify(err: Error) -> Failure {
    let code = match err {
        Error::Diverged { .. }
        | Error::NoConvergence { .. }
        | Error::Singular(_)
        | Error::LineSearch(_) => EXIT_DIVERGED,
        _ => EXIT_INPUT,
    };
    Failure {
        code,
        err: err.into(),
    }
}

fn input(err: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        err: err.into(),
    }
}

fn load(path: &Path) -> Result<(Instance, Option<usize>), Failure> {
    let file = load_problem(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input)?;
    let inst = file
        .build()
        .with_context(|| format!("building {}", path.display()))
        .map_err(input)?;
    Ok((inst, file.n))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(input),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(input),
    }
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let (inst, file_n) = load(&args.problem)?;
    let cfg = SolveConfig {
        n: args.n.or(file_n).unwrap_or(256),
        tol: args.tol,
        mode: args.mode,
        a: args.a,
        b: args.b,
        ..Default::default()
    };
    let result = solve_instance(&inst, &cfg).map_err(classify)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    emit(args.out.as_deref(), &to_json_string(&result).map_err(classify)?)?;
    if let Some(p) = &args.csv {
        let f = fs::File::create(p)
            .with_context(|| format!("creating {}", p.display()))
            .map_err(input)?;
        result.x.write_csv(f).map_err(classify)?;
    }
    Ok(())
}

fn cmd_certify(args: CertifyArgs) -> Result<(), Failure> {
    let (inst, file_n) = load(&args.problem)?;
    let opts = CertifyOptions {
        n: args.n.or(file_n).unwrap_or(256),
        a: args.a,
        b: args.b,
        delta: args.delta,
        delta_cap: args.delta_cap,
        samples: args.samples,
        seed: args.seed,
        ..Default::default()
    };
    let cert = certify(&inst, &opts).map_err(classify)?;
    emit(args.out.as_deref(), &to_json_string(&cert).map_err(classify)?)?;
    if cert.pass {
        return Ok(());
    }
    let names: Vec<_> = cert.failing().map(|r| r.name.as_str()).collect();
    Err(Failure {
        code: EXIT_FAILED,
        err: anyhow::anyhow!("certificate fails: {}", names.join(", ")),
    })
}

fn cmd_gallery(args: GalleryArgs) -> Result<(), Failure> {
    let instances = gallery().map_err(classify)?;
    let opts = CertifyOptions {
        n: args.n,
        samples: args.samples,
        seed: args.seed,
        ..Default::default()
    };
    let cfg = SolveConfig {
        n: args.n,
        tol: args.tol,
        ..Default::default()
    };
    let entries = run_gallery(&instances, &opts, &cfg);
    write_gallery(&args.out, &entries).map_err(classify)?;
    let mut failing = Vec::new();
    for e in &entries {
        let r = &e.row;
        let flag = if r.pass { "pass" } else { "FAIL" };
        println!(
            "{flag}  {:<20} residual {:.3e}  {} deviation {:.3e}  certificate {}",
            r.instance, r.residual, r.oracle, r.oracle_deviation, r.certificate
        );
        if !r.pass {
            println!("      {}", r.note);
            failing.push(r.instance.clone());
        }
    }
    if failing.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_FAILED,
            err: anyhow::anyhow!("failing instances: {}", failing.join(", ")),
        })
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("PBVP_THREADS") else {
        return Ok(());
    };
    let threads: usize = v
        .parse()
        .with_context(|| format!("PBVP_THREADS must be a positive integer, got '{v}'"))?;
    anyhow::ensure!(threads > 0, "PBVP_THREADS must be a positive integer, got '{v}'");
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_INPUT);
    }
    let res = match cli.cmd {
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Certify(a) => cmd_certify(a),
        Cmd::Gallery(a) => cmd_gallery(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
