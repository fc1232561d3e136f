use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use powinst::certify::Concept;
use powinst::przyluski::Variant;
use powinst::report::{self, AnalysisConfig, Bisection, Format, Scope, SweepSpec};
use powinst::systems::{CoeffSpec, SystemSpec};
use powinst::transition::Norm;
use powinst::Error;

#[derive(Parser)]
#[command(name = "powinst", version, about = "Power instability analysis for linear discrete-time systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every analysis and write the full report.
    Analyze(Common),
    /// Export the minimal growth table.
    Growth(Common),
    /// Fit, verify and classify certificates.
    Certify(Common),
    /// Fit summation criteria.
    Criterion(Common),
    /// Check definition/criterion equivalence in both directions.
    Equivalence(Common),
    /// Classify along a parameter grid and bisect the boundary.
    Sweep(SweepArgs),
}

#[derive(Args)]
#[command(next_help_heading = "Analysis", allow_negative_numbers = true)]
struct Common {
    /// JSON configuration file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in system: paper-example, constant or random-diagonal.
    #[arg(long)]
    system: Option<String>,
    /// System document in JSON.
    #[arg(long, conflicts_with = "system")]
    system_file: Option<PathBuf>,
    /// Parameter c of the built-in example.
    #[arg(long)]
    c: Option<f64>,
    /// Scalar value of a constant system.
    #[arg(long)]
    value: Option<f64>,
    /// Dimension of a random diagonal system.
    #[arg(long)]
    dim: Option<usize>,
    /// Log-gain range `lo,hi` of a random diagonal system.
    #[arg(long, value_delimiter = ',')]
    log_gain_range: Option<Vec<f64>>,
    /// Concepts to fit: UPIS, PIS, SPIS (comma separated).
    #[arg(long, value_delimiter = ',')]
    concept: Option<Vec<Concept>>,
    /// Criterion variants: THM2, PROP3, COR4 (comma separated).
    #[arg(long, value_delimiter = ',')]
    variant: Option<Vec<Variant>>,
    /// Increasing window schedule for classification, at least 3 entries.
    #[arg(long, value_delimiter = ',')]
    schedule: Option<Vec<usize>>,
    /// Window for growth export, fits and equivalence checks.
    #[arg(long)]
    window: Option<usize>,
    /// Tolerance on offset increments and divergence slopes.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Budget on log N for certificate fits.
    #[arg(long)]
    l_budget: Option<f64>,
    /// Budget on log D for criterion fits.
    #[arg(long)]
    d_budget: Option<f64>,
    /// Required gap between rate and degradation for strong variants.
    #[arg(long)]
    gap_delta: Option<f64>,
    /// Geometric margin (> 1) for definition-to-criterion constructions.
    #[arg(long)]
    kappa: Option<f64>,
    /// Explicit grid of d values (> 1) for criterion fits.
    #[arg(long, value_delimiter = ',')]
    d_grid: Option<Vec<f64>>,
    /// Seed for sampled verification and random systems.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sampled triplets per verification.
    #[arg(long)]
    samples: Option<usize>,
    /// Vector norm: one, two or infinity (dense systems: two only).
    #[arg(long)]
    norm: Option<Norm>,
    /// Output format: json, csv or both.
    #[arg(long)]
    format: Option<Format>,
    /// Omit the timestamp so reports are byte-reproducible.
    #[arg(long)]
    no_timestamp: bool,
    /// Output directory [default: out].
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Swept parameter: `c` or `value`.
    #[arg(long, default_value = "c")]
    param: String,
    /// Parameter grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    /// Bisection `lo,hi,width`.
    #[arg(long, value_delimiter = ',')]
    bisect: Option<Vec<f64>>,
}

fn build_system(args: &Common, base: &SystemSpec) -> Result<SystemSpec, Error> {
    if let Some(path) = &args.system_file {
        let text = std::fs::read_to_string(path)?;
        return SystemSpec::parse(&text);
    }
    let name = match &args.system {
        Some(n) => n.as_str(),
        None => {
            let mut spec = base.clone();
            if let Some(c) = args.c {
                spec = report::with_parameter(&spec, "c", c)?;
            }
            if let Some(v) = args.value {
                spec = report::with_parameter(&spec, "value", v)?;
            }
            return Ok(spec);
        }
    };
    match name {
        "paper-example" => Ok(SystemSpec::PaperExample {
            c: args.c.unwrap_or(2.0),
            label: None,
        }),
        "constant" => Ok(SystemSpec::Constant {
            value: CoeffSpec::Scalar(args.value.unwrap_or(2.0)),
            label: None,
        }),
        "random-diagonal" => {
            let range = args.log_gain_range.clone().unwrap_or_else(|| vec![-1.0, 1.0]);
            if range.len() != 2 {
                return Err(Error::invalid("log_gain_range: expected `lo,hi`"));
            }
            Ok(SystemSpec::RandomDiagonal {
                dim: args.dim.unwrap_or(2),
                seed: args.seed.unwrap_or(0),
                log_gain_range: [range[0], range[1]],
                label: None,
            })
        }
        other => Err(Error::invalid(format!(
            "system: unknown built-in `{other}` (expected paper-example, constant or random-diagonal)"
        ))),
    }
}

fn build_config(args: &Common) -> Result<AnalysisConfig, Error> {
    let mut cfg = match &args.config {
        Some(p) => AnalysisConfig::load(p)?,
        None => AnalysisConfig::default(),
    };
    cfg.system = build_system(args, &cfg.system)?;
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field.clone() {
                cfg.$field = v;
            }
        )*};
    }
    set!(schedule, window, epsilon, l_budget, d_budget, gap_delta, kappa, seed, samples, norm, format, output_dir);
    if let Some(v) = args.concept.clone() {
        cfg.concepts = v;
    }
    if let Some(v) = args.variant.clone() {
        cfg.variants = v;
    }
    if args.d_grid.is_some() {
        cfg.d_grid = args.d_grid.clone();
    }
    if args.no_timestamp {
        cfg.timestamp = false;
    }
    Ok(cfg)
}

fn execute(cfg: &AnalysisConfig, scope: Scope) -> Result<(), Error> {
    let report = report::run(cfg, scope)?;
    for p in report::write_outputs(cfg, &report)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    let (args, scope, sweep) = match cli.command {
        Command::Analyze(a) => (a, Scope::Analyze, None),
        Command::Growth(a) => (a, Scope::Growth, None),
        Command::Certify(a) => (a, Scope::Certify, None),
        Command::Criterion(a) => (a, Scope::Criterion, None),
        Command::Equivalence(a) => (a, Scope::Equivalence, None),
        Command::Sweep(s) => {
            let extra = (s.param, s.grid, s.bisect);
            (s.common, Scope::Sweep, Some(extra))
        }
    };
    let mut cfg = build_config(&args)?;
    if let Some((param, grid, bisect)) = sweep {
        let base = cfg.sweep.take();
        let concept = args
            .concept
            .as_ref()
            .and_then(|c| c.first().copied())
            .or(base.as_ref().map(|b| b.concept))
            .unwrap_or(Concept::Spis);
        cfg.sweep = Some(SweepSpec {
            parameter: param,
            concept,
            grid: grid.or(base.as_ref().map(|b| b.grid.clone())).unwrap_or_default(),
            bisect: bisect
                .map(|b| {
                    if b.len() != 3 {
                        return Err(Error::invalid("sweep.bisect: expected `lo,hi,width`"));
                    }
                    Ok(Bisection {
                    lo: b[0],
                    hi: b[1],
                        width: b[2],
                    })
                })
                .transpose()?
                .or(base.and_then(|b| b.bisect)),
        });
    }
    execute(&cfg, scope)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
