//! `cosr`: π analysis, single searches, knowledge chains and case reports.
//!
//! Exit codes: 0 success, 2 usage, config or schema error, 3 partial chain,
//! 4 internal error. Logs go to stderr; results go to stdout or `--out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use cosr_core::cases::{builtin_case, builtin_cases, case_data, case_data_from, load_csv, load_plain_csv_str, CaseError, CaseSpec};
use cosr_core::chain::{
    clean_front, collapse_table, export_chain, front_table, import_chain, knee, pi_groups, render_text, run_chain, ChainError,
};
use cosr_core::dataset::Dataset;
use cosr_core::dims::rational_from_int;
use cosr_core::engine::{pair_search_with, search_with, EngineConfig, EngineError, ParetoFront};
use cosr_core::expr::{parse_with_names, BinaryOp, UnaryOp};
use cosr_core::losses::{DegreePolicy, HierarchicalSpec, ImplicitSpec, LossSpec, TransformSpec};

#[derive(Parser)]
#[command(name = "cosr", version, about = "Chain-of-symbolic-regression toolkit")]
struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Canonical π groups of a dataset.
    Pi {
        #[arg(long)]
        data: PathBuf,
        /// Case-style TOML with `base` and `[[variables]]` dimension maps.
        #[arg(long)]
        dims: PathBuf,
        #[arg(long)]
        target: Option<String>,
        /// Largest exponent magnitude tried when canonicalizing.
        #[arg(long, default_value_t = 3)]
        max_exponent: u32,
    },
    /// Runs a case's stage plan and writes the knowledge chain.
    Chain {
        /// Built-in case id or path to a case TOML.
        #[arg(long)]
        case: String,
        #[arg(long)]
        seed: u64,
        /// Replaces the case's data with this CSV.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the data-collapse table (requires `--out`).
        #[arg(long)]
        plot: bool,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// One evolutionary search; prints the Pareto front and the knee.
    Search(SearchArgs),
    /// Re-renders a stored chain.
    Report {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
    },
    /// Built-in cases.
    Case {
        #[command(subcommand)]
        command: CaseCommand,
    },
}

#[derive(Subcommand)]
enum CaseCommand {
    /// Lists the built-in cases with their data provenance.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossKind {
    Hier,
    Implicit,
    Transform,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    loss: LossKind,
    #[arg(long)]
    seed: u64,
    /// Dimension file; without it columns carry no dimensions.
    #[arg(long)]
    dims: Option<PathBuf>,
    /// Target column; defaults to the dimension file's target or the last column.
    #[arg(long)]
    target: Option<String>,
    /// Comma-separated columns the search may use.
    #[arg(long, value_delimiter = ',')]
    variables: Option<Vec<String>>,
    /// Hierarchical: number of intermediates (1 or 2).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    intermediates: u8,
    /// Hierarchical: fixed polynomial degree instead of the sweep.
    #[arg(long)]
    degree: Option<u32>,
    /// Hierarchical and transformation: fit in log space.
    #[arg(long)]
    log_space: bool,
    /// Transformation: polynomial order.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=4))]
    order: u32,
    /// Transformation: baseline expression g(x).
    #[arg(long, default_value = "1")]
    baseline: String,
    #[arg(long)]
    pin_sr1: Option<String>,
    #[arg(long)]
    pin_sr2: Option<String>,
    #[arg(long, default_value_t = 1000)]
    population: usize,
    #[arg(long, default_value_t = 40)]
    iterations: usize,
    /// Comma-separated binary operators (add, sub, mul, div, pow).
    #[arg(long, value_delimiter = ',')]
    binary_ops: Option<Vec<String>>,
    /// Comma-separated unary operators (neg, abs, sqrt, log, exp); `none` for none.
    #[arg(long, value_delimiter = ',')]
    unary_ops: Option<Vec<String>>,
    /// Constants stay small integers (integer powers only).
    #[arg(long)]
    integer_constants: bool,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Also write the front as TSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> Self {
        Failure { code: 4, message: message.into() }
    }
}

impl From<CaseError> for Failure {
    fn from(e: CaseError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<ChainError> for Failure {
    fn from(e: ChainError) -> Self {
        let code = match &e {
            ChainError::LayerFailed { .. } => 3,
            ChainError::NoCandidate(_) => 4,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::internal(format!("cannot write {}: {e}", path.display())))
}

// Clap omits the usage line for some errors (bad values); always show it.
fn parse_args() -> Cli {
    use clap::error::ErrorKind;
    use clap::CommandFactory;
    match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let rendered = e.render().to_string();
            eprint!("{rendered}");
            if !rendered.contains("Usage:") {
                let mut cmd = Cli::command();
                cmd.build();
                let sub = std::env::args().nth(1).and_then(|name| cmd.find_subcommand_mut(&name).map(|c| c.render_usage()));
                let usage = sub.unwrap_or_else(|| Cli::command().render_usage());
                eprintln!("\n{usage}");
            }
            std::process::exit(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = parse_args();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).init();
    let result = match cli.command {
        Command::Pi { data, dims, target, max_exponent } => cmd_pi(&data, &dims, target.as_deref(), max_exponent),
        Command::Chain { case, seed, data, out, plot, threads } => {
            cmd_chain(&case, seed, data.as_deref(), out.as_deref(), plot, threads)
        }
        Command::Search(args) => cmd_search(&args),
        Command::Report { chain, format } => cmd_report(&chain, format),
        Command::Case { command: CaseCommand::List } => cmd_case_list(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_pi(data: &Path, dims: &Path, target: Option<&str>, max_exponent: u32) -> Result<u8, Failure> {
    let spec = CaseSpec::dims_file(&read(dims)?, target)?;
    let load = load_csv(data, &spec)?;
    if load.rejected_rows > 0 {
        warn!("{} row(s) with missing or non-finite values dropped", load.rejected_rows);
    }
    let (groups, notes) = pi_groups(&load.dataset, &spec.reference_groups, max_exponent)?;
    for n in notes {
        warn!("{n}");
    }
    let target = load.dataset.target_name().map(str::to_string);
    let mut dependent = None;
    for g in &groups {
        println!("{} = {}", g.name, g.group.to_infix());
        if target.as_ref().is_some_and(|t| g.group.exponent_of(t).is_some_and(|e| *e != rational_from_int(0))) {
            dependent = Some(g.name.clone());
        }
    }
    match (target, dependent) {
        (Some(t), Some(d)) => println!("dependent group: {d} (contains {t})"),
        (Some(t), None) => println!("dependent group: none ({t} is dimensionless and used as is)"),
        (None, _) => println!("dependent group: none (no target)"),
    }
    Ok(0)
}

fn load_case(case: &str) -> Result<(CaseSpec, Option<PathBuf>), Failure> {
    let path = Path::new(case);
    if path.extension().is_some_and(|e| e == "toml") || path.exists() {
        let spec = CaseSpec::from_path(path)?;
        let dir = path.parent().map(Path::to_path_buf);
        return Ok((spec, dir));
    }
    Ok((builtin_case(case)?, None))
}

fn cmd_chain(
    case: &str,
    seed: u64,
    data: Option<&Path>,
    out: Option<&Path>,
    plot: bool,
    threads: usize,
) -> Result<u8, Failure> {
    if plot && out.is_none() {
        return Err(Failure::usage("--plot needs --out"));
    }
    let (spec, dir) = load_case(case)?;
    let dataset = match data {
        Some(p) => case_data_from(&spec, p)?.dataset,
        None => {
            let d = case_data(&spec, dir.as_deref())?;
            info!("case {} data: {}", spec.id, d.mode.label());
            d.dataset
        }
    };
    let mut config = spec.chain_config(seed);
    config.engine.threads = threads;
    info!("running {} stage(s) with seed {seed}", config.plan.stages.len());
    let run = run_chain(&dataset, &config, Some(&spec.id))?;
    let report = render_text(&run.chain);
    print!("{report}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Failure::internal(format!("cannot create {}: {e}", dir.display())))?;
        write(&dir.join("chain.json"), &export_chain(&run.chain, "json")?)?;
        write(&dir.join("report.txt"), &report)?;
        for (name, front, names) in &run.fronts {
            write(&dir.join(format!("front_{name}.tsv")), &front_table(front, names))?;
        }
        if plot {
            match collapse_table(&run.chain, &dataset) {
                Ok(t) => write(&dir.join("collapse.tsv"), &t)?,
                Err(e) => warn!("no collapse table: {e}"),
            }
        }
        info!("wrote chain artifacts to {}", dir.display());
    }
    match run.failure {
        Some(e) => {
            eprintln!("partial chain: {e}");
            Ok(3)
        }
        None => Ok(0),
    }
}

fn parse_ops<T>(names: &[String], lookup: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, Failure> {
    if names.iter().any(|n| n == "none") {
        return Ok(Vec::new());
    }
    names.iter().map(|n| lookup(n).ok_or_else(|| Failure::usage(format!("unknown operator `{n}`")))).collect()
}

fn search_data(args: &SearchArgs) -> Result<Dataset, Failure> {
    let load = match &args.dims {
        Some(d) => load_csv(&args.data, &CaseSpec::dims_file(&read(d)?, args.target.as_deref())?)?,
        None => {
            let text = read(&args.data)?;
            let header = text.lines().next().unwrap_or_default();
            let last = header.rsplit(',').next().map(|s| s.trim().to_string());
            let target = args.target.clone().or(last);
            load_plain_csv_str(&text, &args.data.display().to_string(), target.as_deref())?
        }
    };
    if load.rejected_rows > 0 {
        warn!("{} row(s) with missing or non-finite values dropped", load.rejected_rows);
    }
    Ok(load.dataset)
}

fn cmd_search(args: &SearchArgs) -> Result<u8, Failure> {
    let mut data = search_data(args)?;
    let names = data.names().to_vec();
    let parse = |t: &str| parse_with_names(t, &names).map_err(|e| Failure::usage(format!("cannot parse `{t}`: {e}")));
    let mut cfg = EngineConfig {
        seed: args.seed,
        population_size: args.population,
        iterations: args.iterations,
        integer_constants: args.integer_constants,
        threads: args.threads,
        ..EngineConfig::default()
    };
    if let Some(ops) = &args.binary_ops {
        cfg.binary_ops = parse_ops(ops, BinaryOp::from_name)?;
    }
    if let Some(ops) = &args.unary_ops {
        cfg.unary_ops = parse_ops(ops, UnaryOp::from_name)?;
    }
    if let Some(vars) = &args.variables {
        let idx = vars
            .iter()
            .map(|v| data.index_of(v).ok_or_else(|| Failure::usage(format!("unknown column `{v}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        cfg.variables = Some(idx);
    }
    let mut clean = None;
    let outcome = match args.loss {
        LossKind::Hier => {
            let degree = args.degree.map_or_else(DegreePolicy::default, |degree| DegreePolicy::Fixed { degree });
            let spec = HierarchicalSpec {
                intermediate_count: args.intermediates as usize,
                degree,
                log_space: args.log_space,
                context: Vec::new(),
            };
            let loss = LossSpec::Hierarchical(spec);
            if args.intermediates == 2 {
                pair_search_with(&data, &loss, &cfg, &[], None)?
            } else {
                search_with(&data, &loss, &cfg, &[], None)?
            }
        }
        LossKind::Implicit => {
            if args.variables.is_none() {
                // The implicit search spans inputs and target alike.
                data.set_target(None);
            }
            let spec = ImplicitSpec { var_dims: data.all_dims(), seed: args.seed, ..ImplicitSpec::default() };
            let outcome = search_with(&data, &LossSpec::Implicit(spec.clone()), &cfg, &[], None)?;
            clean = Some(clean_front(&outcome.front, &data, &spec));
            outcome
        }
        LossKind::Transform => {
            let mut spec = TransformSpec::new(args.order, parse(&args.baseline)?, args.log_space);
            spec.pins = [
                args.pin_sr1.as_deref().map(parse).transpose()?,
                args.pin_sr2.as_deref().map(parse).transpose()?,
            ];
            pair_search_with(&data, &LossSpec::Transformation(spec), &cfg, &[], None)?
        }
    };
    print_front(&outcome.front, clean.as_ref(), &names);
    if let Some(path) = &args.out {
        write(path, &front_table(&outcome.front, &names))?;
    }
    Ok(0)
}

/// Prints the front; with `clean` (implicit searches), penalized entries are
/// starred and the knee is taken among the penalty-free ones.
fn print_front(front: &ParetoFront, clean: Option<&ParetoFront>, names: &[String]) {
    println!("{:>10}  {:>14}  expression", "complexity", "loss");
    for e in front.entries() {
        let star = clean.is_some_and(|c| !c.entries().iter().any(|x| x.expr == e.expr));
        let mark = if star { " *" } else { "" };
        println!("{:>10}  {:>14.6e}  {}{mark}", e.complexity, e.loss, e.expr.format_with(names));
    }
    if clean.is_some_and(|c| c.len() < front.len()) {
        println!("(* carries a sensitivity, dimension or rule penalty)");
    }
    let chosen = match clean {
        Some(c) if !c.is_empty() => c,
        _ => front,
    };
    match knee(chosen) {
        Some((e, score)) => println!("knee: {} (complexity {}, score {score:.6})", e.expr.format_with(names), e.complexity),
        None => println!("knee: none (empty front)"),
    }
}

fn cmd_report(chain: &Path, format: ReportFormat) -> Result<u8, Failure> {
    let chain = import_chain(&read(chain)?)?;
    match format {
        ReportFormat::Text => print!("{}", render_text(&chain)),
        ReportFormat::Json => println!("{}", export_chain(&chain, "json")?),
    }
    Ok(0)
}

fn cmd_case_list() -> Result<u8, Failure> {
    println!("{:<18}  {:<34}  {:<8}  title", "id", "data", "stages");
    for spec in builtin_cases() {
        let data = match spec.data.as_ref().and_then(|d| d.file.as_deref()) {
            Some(f) => format!("shipped {f}"),
            None => match &spec.fallback {
                Some(fb) => format!("synthetic (noise {}, seed {})", fb.noise_rel, fb.seed),
                None => "none".to_string(),
            },
        };
        println!("{:<18}  {:<34}  {:<8}  {}", spec.id, data, spec.plan.stages.len(), spec.title);
    }
    Ok(0)
}
