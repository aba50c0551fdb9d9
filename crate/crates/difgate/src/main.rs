//! Command-line front end: `analyze` for a single dataset, `simulate`
//! for the Monte Carlo studies.

use clap::{Args, Parser, Subcommand, ValueEnum};
use difgate::{
    analyze_dataset, ingest_csv, items_to_csv, report_to_json, run_study, summary_to_csv,
    summary_to_json, AnalyzeOptions, Error, IngestOptions, Result, SimulationConfig, StartSpec,
    Study,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "difgate",
    version,
    about = "IRT-based treatment impact estimation with a DIF-robust specification test"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for simulation replications (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one wide-format response CSV
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo study over a DIF-proportion grid
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV: one person per row, `group` column plus item columns
    data: PathBuf,
    /// Test level for tuning and flagging
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Gauss-Hermite nodes for the marginal likelihood
    #[arg(long = "quad-nodes", default_value_t = 61)]
    quad_nodes: usize,
    /// EM parameter-change tolerance
    #[arg(long = "em-tol", default_value_t = 1e-5)]
    em_tol: f64,
    /// EM iteration cap
    #[arg(long = "em-max-iter", default_value_t = 500)]
    em_max_iter: usize,
    /// Starting values for the robust fit: median, mean, all
    #[arg(long, default_value = "median,mean,all")]
    starts: String,
    /// Lower bound on the tuning thresholds
    #[arg(long = "epsilon-floor", default_value_t = 0.0)]
    epsilon_floor: f64,
    /// Screen items before fitting (default)
    #[arg(long, conflicts_with = "no_screen")]
    screen: bool,
    /// Keep every item regardless of coverage or endorsement
    #[arg(long = "no-screen")]
    no_screen: bool,
    /// Recode numeric item scores: 1 when >= threshold, else 0
    #[arg(long = "binarize-threshold")]
    binarize_threshold: Option<f64>,
    /// Provenance seed echoed into the report
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
    /// Output file prefix
    #[arg(long, short, default_value = "difgate")]
    out: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML or JSON config; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// washout or preexposure
    #[arg(long)]
    study: Option<String>,
    #[arg(long)]
    items: Option<usize>,
    /// Persons per group
    #[arg(long)]
    persons: Option<usize>,
    /// Replications per condition
    #[arg(long)]
    reps: Option<usize>,
    /// DIF proportions (repeatable or comma-separated); default is the
    /// full integral grid
    #[arg(long = "dif-prop", value_delimiter = ',')]
    dif_prop: Vec<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "quad-nodes")]
    quad_nodes: Option<usize>,
    #[arg(long = "em-tol")]
    em_tol: Option<f64>,
    #[arg(long = "em-max-iter")]
    em_max_iter: Option<usize>,
    #[arg(long)]
    starts: Option<String>,
    #[arg(long = "epsilon-floor")]
    epsilon_floor: Option<f64>,
    /// Screen generated items before fitting (off by default)
    #[arg(long, conflicts_with = "no_screen")]
    screen: bool,
    #[arg(long = "no-screen")]
    no_screen: bool,
    /// Keep per-replication records in the JSON summary
    #[arg(long = "keep-reps")]
    keep_reps: bool,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
    /// Output file prefix
    #[arg(long, short, default_value = "difgate")]
    out: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let outcome = match cli.command {
        Command::Analyze(args) => analyze(args),
        Command::Simulate(args) => simulate(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(1)
        }
    }
}

fn analyze(args: AnalyzeArgs) -> Result<u8> {
    let options = AnalyzeOptions {
        alpha: args.alpha,
        quad_nodes: args.quad_nodes,
        em: difgate::EmSettings {
            max_iter: args.em_max_iter,
            param_tol: args.em_tol,
            ..difgate::EmSettings::default()
        },
        starts: StartSpec::parse(&args.starts)?,
        epsilon_floor: args.epsilon_floor,
        screen: !args.no_screen,
        seed: args.seed,
        ..AnalyzeOptions::default()
    };
    let ingest = IngestOptions {
        binarize_threshold: args.binarize_threshold,
    };
    let data = ingest_csv(&args.data, &ingest)?;
    if data.dropped_empty_persons() > 0 {
        eprintln!(
            "warning: dropped {} person(s) with no observed responses",
            data.dropped_empty_persons()
        );
    }
    let report = analyze_dataset(&data, &options, args.data.to_str())?;

    if args.format.json() {
        let path = format!("{}.report.json", args.out);
        std::fs::write(&path, report_to_json(&report)?)?;
        println!("wrote {path}");
    }
    if args.format.csv() {
        let path = format!("{}.items.csv", args.out);
        std::fs::write(&path, items_to_csv(&report)?)?;
        println!("wrote {path}");
    }

    println!(
        "{} items retained of {} ({} control / {} treatment persons)",
        report.dataset.items_used,
        report.dataset.items_initial,
        report.dataset.n_control,
        report.dataset.n_treatment
    );
    for d in &report.dataset.screened_out {
        println!("  screened out {} ({})", d.name, d.reason);
    }
    println!(
        "naive      delta_U = {:+.4}  (SE {:.4})",
        report.delta_u, report.se_delta_u
    );
    println!(
        "robust     delta_R = {:+.4}  (SE {:.4})",
        report.delta_r, report.se_delta_r
    );
    println!(
        "difference Delta   = {:+.4}  (SE {:.4})  z = {:+.3}  p = {:.4}",
        report.delta, report.se_delta, report.z, report.p_value
    );
    let flagged: Vec<&str> = report
        .items
        .iter()
        .filter(|r| r.flagged)
        .map(|r| r.name.as_str())
        .collect();
    if flagged.is_empty() {
        println!("no items down-weighted to zero");
    } else {
        println!("down-weighted to zero: {}", flagged.join(", "));
    }
    if report.degenerate {
        println!("degenerate variance for Delta; z and p are not informative");
        return Ok(2);
    }
    Ok(0)
}

fn load_config(path: &Path) -> Result<SimulationConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

fn simulate(args: SimulateArgs) -> Result<u8> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => SimulationConfig::default(),
    };
    if let Some(study) = &args.study {
        config.study = study.parse::<Study>()?;
    }
    if let Some(items) = args.items {
        config.items = items;
    }
    if let Some(persons) = args.persons {
        config.persons_per_group = persons;
    }
    if let Some(reps) = args.reps {
        config.replications = reps;
    }
    if !args.dif_prop.is_empty() {
        config.dif_props = args.dif_prop.clone();
    }
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(nodes) = args.quad_nodes {
        config.quad_nodes = nodes;
    }
    if let Some(tol) = args.em_tol {
        config.em.param_tol = tol;
    }
    if let Some(iters) = args.em_max_iter {
        config.em.max_iter = iters;
    }
    if let Some(starts) = &args.starts {
        config.starts = StartSpec::parse(starts)?;
    }
    if let Some(floor) = args.epsilon_floor {
        config.epsilon_floor = floor;
    }
    if args.screen {
        config.screen = true;
    }
    if args.no_screen {
        config.screen = false;
    }
    if args.keep_reps {
        config.keep_reps = true;
    }

    let summary = run_study(&config)?;

    if args.format.json() {
        let path = format!("{}.summary.json", args.out);
        std::fs::write(&path, summary_to_json(&summary)?)?;
        println!("wrote {path}");
    }
    if args.format.csv() {
        let path = format!("{}.summary.csv", args.out);
        std::fs::write(&path, summary_to_csv(&summary)?)?;
        println!("wrote {path}");
    }

    println!(
        "{} study: {} items, {} persons/group, {} replications",
        summary.study, config.items, config.persons_per_group, config.replications
    );
    println!(
        "{:>8}  {:>5}  {:>5}  {:>7}  {:>9}  {:>9}  {:>10}",
        "p", "reps", "fail", "reject", "mean dU", "mean dR", "mean Delta"
    );
    for c in &summary.conditions {
        println!(
            "{:>8.4}  {:>5}  {:>5}  {:>7.4}  {:>9.4}  {:>9.4}  {:>10.4}",
            c.p,
            c.replications,
            c.failures,
            c.rejection_rate,
            c.mean_delta_u,
            c.mean_delta_r,
            c.mean_delta
        );
    }
    Ok(0)
}
