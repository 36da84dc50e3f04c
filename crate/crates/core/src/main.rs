use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flate2::read::GzDecoder;

use giftrl::data::{parse_libsvm, synth_dataset, DataError, Dataset, SynthSpec};
use giftrl::engine::{DomainPolicy, ScheduleKind};
use giftrl::exec::Execution;
use giftrl::losses::LossFamily;
use giftrl::report::{emit_csv, emit_svg, load_csv, ReportError};
use giftrl::surrogate::Strategy;
use giftrl::sweep::{good_band, log_grid, run_sweep, SweepConfig, SweepError};
use giftrl::verify::{run_suite, Suite, VerifyParams};

const EXIT_VERIFY_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "giftrl", version, about = "Implicit FTRL learning-rate sweeps and numerical checks")]
struct Cli {
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep η₀ for each strategy and seed; writes sweep.csv and sweep.svg.
    Sweep(Box<SweepArgs>),
    /// Run the numerical invariant suites.
    Verify(VerifyArgs),
    /// Re-render the SVG from a sweep CSV.
    Plot(PlotArgs),
}

#[derive(Args, Default)]
struct SweepArgs {
    /// File of `key=value` lines using the long flag names; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// LibSVM file (optionally .gz) or `synth:<task>[:n=..,d=..,noise=..,seed=..]`.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    /// Comma-separated list.
    #[arg(long)]
    strategies: Option<String>,
    /// `lo:hi:n`, log-spaced.
    #[arg(long = "eta-grid")]
    eta_grid: Option<String>,
    /// Comma-separated list or a half-open range `a..b`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long = "out-dir", env = "GIFTRL_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long = "record-every")]
    record_every: Option<String>,
    /// `true` or `false`.
    #[arg(long)]
    diagnostics: Option<String>,
    /// `true` or `false`.
    #[arg(long)]
    normalize: Option<String>,
    /// `abort` or `skip`.
    #[arg(long = "domain-policy")]
    domain_policy: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite name or `all`.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    input: PathBuf,
    /// Defaults to the input path with an .svg extension.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "averaged loss vs initial learning rate")]
    title: String,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Io(String),
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Config(_) => CliError::Usage(e.to_string()),
            SweepError::Data(DataError::IncompatibleLabels { .. }) => CliError::Usage(e.to_string()),
            SweepError::Data(_) => CliError::Io(e.to_string()),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read_config(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        map.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(map)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| usage(format!("invalid {what} `{x}`"))))
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| usage(format!("invalid seed range `{s}`")))?;
        let b: u64 = b.trim().parse().map_err(|_| usage(format!("invalid seed range `{s}`")))?;
        return Ok((a..b).collect());
    }
    parse_list(s, "seed")
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || usage(format!("invalid eta grid `{s}`, expected lo:hi:n"));
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err(bad());
    };
    let (lo, hi): (f64, f64) = (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?);
    let n: usize = n.parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi >= lo && n > 0) {
        return Err(bad());
    }
    Ok(log_grid(lo, hi, n))
}

fn parse_bool(s: &str) -> Result<bool, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(usage(format!("invalid boolean `{s}`"))),
    }
}

fn load_data(source: &str) -> Result<Dataset, CliError> {
    if let Some(spec) = source.strip_prefix("synth:") {
        let spec: SynthSpec = spec.parse().map_err(|e: DataError| usage(e.to_string()))?;
        return Ok(synth_dataset(&spec));
    }
    let io_err = |e: io::Error| CliError::Io(format!("{source}: {e}"));
    let file = fs::File::open(source).map_err(io_err)?;
    let reader: Box<dyn BufRead> = if source.ends_with(".gz") {
        Box::new(BufReader::new(GzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    parse_libsvm(reader).map_err(|e| CliError::Io(format!("{source}: {e}")))
}

struct SweepPlan {
    config: SweepConfig,
    data_source: String,
    out_dir: PathBuf,
}

fn plan_sweep(args: &SweepArgs) -> Result<SweepPlan, CliError> {
    let file = match &args.config {
        Some(path) => read_config(path)?,
        None => BTreeMap::new(),
    };
    const KNOWN: [&str; 11] = [
        "data", "loss", "strategies", "eta-grid", "seeds", "schedule", "out-dir", "record-every", "diagnostics",
        "normalize", "domain-policy",
    ];
    if let Some(k) = file.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(usage(format!("unknown config key `{k}`")));
    }
    let pick = |flag: &Option<String>, key: &str| flag.clone().or_else(|| file.get(key).cloned());
    let mut config = SweepConfig::default();
    if let Some(v) = pick(&args.loss, "loss") {
        config.loss = v.parse::<LossFamily>().map_err(usage)?;
    }
    if let Some(v) = pick(&args.strategies, "strategies") {
        config.strategies = parse_list::<Strategy>(&v, "strategy")?;
    }
    if let Some(v) = pick(&args.eta_grid, "eta-grid") {
        config.eta_grid = parse_grid(&v)?;
    }
    if let Some(v) = pick(&args.seeds, "seeds") {
        config.seeds = parse_seeds(&v)?;
    }
    if let Some(v) = pick(&args.schedule, "schedule") {
        config.schedule = v.parse::<ScheduleKind>().map_err(usage)?;
    }
    if let Some(v) = pick(&args.record_every, "record-every") {
        config.record_every = v.parse().map_err(|_| usage(format!("invalid record-every `{v}`")))?;
    }
    if let Some(v) = pick(&args.diagnostics, "diagnostics") {
        config.record_diagnostics = parse_bool(&v)?;
    }
    if let Some(v) = pick(&args.normalize, "normalize") {
        config.normalize = parse_bool(&v)?;
    }
    if let Some(v) = pick(&args.domain_policy, "domain-policy") {
        config.policy = match v.as_str() {
            "abort" => DomainPolicy::Abort,
            "skip" => DomainPolicy::Skip,
            _ => return Err(usage(format!("invalid domain policy `{v}`"))),
        };
    }
    config.validate().map_err(CliError::from)?;
    let data_source = pick(&args.data, "data").unwrap_or_else(|| "synth:regression".to_string());
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| file.get("out-dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(SweepPlan { config, data_source, out_dir })
}

fn metadata(plan: &SweepPlan) -> String {
    let c = &plan.config;
    let names: Vec<&str> = c.strategies.iter().map(|s| s.name()).collect();
    let seeds: Vec<String> = c.seeds.iter().map(u64::to_string).collect();
    let etas: Vec<String> = c.eta_grid.iter().map(f64::to_string).collect();
    format!(
        "data={}\nloss={}\nstrategies={}\neta0={}\nseeds={}\nschedule={}\nrecord-every={}\ndiagnostics={}\nnormalize={}\nnormalization=max-abs per column plus bias\ndomain-policy={:?}\n",
        plan.data_source,
        c.loss,
        names.join(","),
        etas.join(","),
        seeds.join(","),
        c.schedule,
        c.record_every,
        c.record_diagnostics,
        c.normalize,
        c.policy,
    )
}

fn sweep(args: &SweepArgs, exec: Execution) -> Result<(), CliError> {
    let plan = plan_sweep(args)?;
    let data = load_data(&plan.data_source)?;
    let result = run_sweep(&plan.config, &data, exec)?;
    fs::create_dir_all(&plan.out_dir).map_err(|e| CliError::Io(format!("{}: {e}", plan.out_dir.display())))?;
    let csv = plan.out_dir.join("sweep.csv");
    emit_csv(&result, &csv)?;
    let meta = plan.out_dir.join("sweep.meta");
    fs::write(&meta, metadata(&plan)).map_err(|e| CliError::Io(format!("{}: {e}", meta.display())))?;
    let summary = result.summary();
    let svg = plan.out_dir.join("sweep.svg");
    let title = format!("{} loss, averaged loss vs initial learning rate", plan.config.loss);
    match emit_svg(&result, &svg, &title) {
        Ok(()) | Err(ReportError::EmptyPlot) => {}
        Err(e) => return Err(e.into()),
    }
    println!("wrote {} ({} rows)", csv.display(), result.rows.len());
    for &s in &plan.config.strategies {
        match good_band(&summary, s, 0.1) {
            Some(b) => println!(
                "{:<10} best={:.6} at eta0={:.4}  10% band [{:.4}, {:.4}] width {:.1}x",
                s.name(),
                b.best,
                b.best_eta,
                b.lo,
                b.hi,
                b.width()
            ),
            None => println!("{:<10} all cells failed", s.name()),
        }
    }
    Ok(())
}

fn verify(args: &VerifyArgs, exec: Execution) -> Result<bool, CliError> {
    let suites: Vec<Suite> = if args.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        parse_list(&args.suite, "suite")?
    };
    let params = VerifyParams { seed: args.seed, exec, ..VerifyParams::default() };
    let mut ok = true;
    for suite in suites {
        let report = run_suite(suite, &params);
        print!("{report}");
        ok &= report.passed();
    }
    Ok(ok)
}

fn plot(args: &PlotArgs) -> Result<(), CliError> {
    let result = load_csv(&args.input)?;
    let output = args.output.clone().unwrap_or_else(|| args.input.with_extension("svg"));
    emit_svg(&result, &output, &args.title)?;
    println!("wrote {}", output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    let outcome = match &cli.command {
        Command::Sweep(args) => sweep(args, exec).map(|()| true),
        Command::Verify(args) => verify(args, exec),
        Command::Plot(args) => plot(args).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY_FAILED),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_IO)
        }
    }
}
