use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fvsuper::analysis::GradNorm;
use fvsuper::study::{
    markdown_table, run_study, OutputFormat, ProblemRegistry, SolverKind, StudyConfig, StudyError,
};
use fvsuper::verify;

#[derive(Parser, Debug)]
#[command(
    name = "fvsuper",
    version,
    about = "High-order finite volumes for the Poisson problem on rectangles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a convergence study and write CSV, markdown and plot-data files.
    Study(StudyArgs),
    /// Run the property and invariant suite.
    Verify {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// List the registered problems.
    Problems,
}

#[derive(clap::Args, Debug)]
struct StudyArgs {
    /// JSON configuration; command-line flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated polynomial degrees, e.g. `3,4`.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Levels as `a..b` (inclusive) or a comma list; level s is a 2^s x 2^s mesh.
    #[arg(long, value_parser = parse_levels)]
    levels: Option<Levels>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Load quadrature points per direction.
    #[arg(long)]
    load_quad: Option<usize>,
    #[arg(long, value_enum)]
    grad_norm: Option<NormArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_enum)]
    format: Option<Vec<FormatArg>>,
    /// Suppress the tables on stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolverArg {
    Direct,
    Iterative,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NormArg {
    L1,
    Euclidean,
    Max,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Md,
    Plot,
}

#[derive(Clone, Debug)]
struct Levels(Vec<u32>);

fn parse_levels(s: &str) -> Result<Levels, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u32 = a
            .trim()
            .parse()
            .map_err(|e| format!("bad level range start: {e}"))?;
        let b: u32 = b
            .trim()
            .parse()
            .map_err(|e| format!("bad level range end: {e}"))?;
        if a > b {
            return Err(format!("empty level range {a}..{b}"));
        }
        return Ok(Levels((a..=b).collect()));
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|e| format!("bad level {t:?}: {e}"))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Levels)
}

fn build_config(args: &StudyArgs) -> Result<StudyConfig, StudyError> {
    let mut c = match &args.config {
        Some(path) => StudyConfig::load(path)?,
        None => StudyConfig::default(),
    };
    if let Some(k) = &args.k {
        c.k = k.clone();
    }
    if let Some(l) = &args.levels {
        c.levels = l.0.clone();
    }
    if let Some(p) = &args.problem {
        c.problem = p.clone();
    }
    if let Some(s) = args.solver {
        c.solver = match s {
            SolverArg::Direct => SolverKind::Direct,
            SolverArg::Iterative => SolverKind::Iterative,
        };
    }
    if let Some(t) = args.tol {
        c.tol = t;
    }
    if let Some(m) = args.max_iter {
        c.max_iter = m;
    }
    if args.load_quad.is_some() {
        c.load_quad = args.load_quad;
    }
    if let Some(n) = args.grad_norm {
        c.grad_norm = match n {
            NormArg::L1 => GradNorm::L1,
            NormArg::Euclidean => GradNorm::Euclidean,
            NormArg::Max => GradNorm::Max,
        };
    }
    if let Some(o) = &args.out {
        c.out = o.clone();
    }
    if let Some(f) = &args.format {
        c.formats = f
            .iter()
            .map(|f| match f {
                FormatArg::Csv => OutputFormat::Csv,
                FormatArg::Md => OutputFormat::Md,
                FormatArg::Plot => OutputFormat::Plot,
            })
            .collect();
    }
    Ok(c)
}

fn study(args: StudyArgs) -> Result<(), StudyError> {
    let config = build_config(&args)?;
    let registry = ProblemRegistry::with_defaults();
    let outcome = run_study(&config, &registry)?;
    if !args.quiet {
        for r in &outcome.reports {
            println!("{}", markdown_table(&outcome.problem, r.k, &r.report));
            println!(
                "max conservation defect: {:.3e}\n",
                r.max_conservation_defect
            );
        }
        for f in &outcome.files {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Study(args) => match study(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::Verify { seed } => {
            let results = verify::run_all(seed);
            for r in &results {
                println!("{r}");
            }
            if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Problems => {
            let registry = ProblemRegistry::with_defaults();
            for id in registry.ids() {
                println!(
                    "{id:<12} {}",
                    registry
                        .get(id)
                        .map(|p| p.description.as_str())
                        .unwrap_or("")
                );
            }
            ExitCode::SUCCESS
        }
    }
}
