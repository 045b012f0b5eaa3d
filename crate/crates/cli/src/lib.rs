//! Command-line front end: argument parsing and the subcommands.

pub mod ifttt;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use homecheck::appdsl::parse_apps_with;
use homecheck::attribution::{attribute, AttributionOptions, EnumerationLimits};
use homecheck::engine::FailureConfig;
use homecheck::explorer::{DEFAULT_BITS, DEFAULT_HASHES};
use homecheck::pipeline::{app_groups, replay_trace};
use homecheck::properties::Selection;
use homecheck::{
    check_system, load_config, AppSpec, CapabilityCatalog, CheckOptions, ExplorationConfig, Report, StoreKind,
    SystemConfig, Trace,
};
use serde_json::json;

/// Exit status when the check found violations.
pub const EXIT_VIOLATIONS: i32 = 2;
pub const EXIT_ERROR: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "homecheck", version, about = "Bounded safety checking for smart-home apps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a configured system against the safety properties.
    Check(CheckArgs),
    /// Print the handler dependency graph and the related sets.
    Deps(DepsArgs),
    /// Decide whether a new app is malicious, bad or misconfigured.
    Attribute(AttributeArgs),
    /// Re-execute a saved counterexample trace.
    Replay(ReplayArgs),
    /// Turn trigger-action rules into apps installed in an inventory.
    ImportIfttt(ImportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StoreArg {
    Exact,
    Bitstate,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    /// One JSON object per line.
    Records,
}

#[derive(Debug, Clone, Args)]
pub struct Library {
    /// App source files or directories of `.app` files.
    #[arg(long = "apps", value_name = "PATH")]
    pub apps: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExploreArgs {
    /// Maximum number of external events per run.
    #[arg(long = "events", short = 'k', default_value_t = 1)]
    pub events: usize,
    /// Inject device and communication failures.
    #[arg(long)]
    pub failures: bool,
    /// Inject communication failures only.
    #[arg(long)]
    pub comm_failures: bool,
    /// Failures allowed along one run.
    #[arg(long, default_value_t = 1)]
    pub max_failures: u8,
    #[arg(long, value_enum, default_value_t = StoreArg::Exact)]
    pub store: StoreArg,
    /// Bits in the bitstate table (a power of two).
    #[arg(long, default_value_t = DEFAULT_BITS)]
    pub bits: u64,
    /// Hash functions of the bitstate table.
    #[arg(long, default_value_t = DEFAULT_HASHES)]
    pub hashes: u32,
    /// Handler executions in one cascade before it counts as a loop.
    #[arg(long, default_value_t = 64)]
    pub max_steps: usize,
    /// Properties to check: `all` or a comma-separated list of ids.
    #[arg(long, default_value = "all")]
    pub props: String,
    /// App groups checked in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Check all apps together instead of per related set.
    #[arg(long)]
    pub monolithic: bool,
    /// List every skipped property instead of a count.
    #[arg(long, short = 'v')]
    pub verbose: bool,
}

impl ExploreArgs {
    pub fn options(&self) -> Result<CheckOptions> {
        if self.store == StoreArg::Bitstate && (!self.bits.is_power_of_two() || self.bits < 64) {
            bail!("--bits must be a power of two of at least 64");
        }
        if self.hashes == 0 {
            bail!("--hashes must be positive");
        }
        let store = match self.store {
            StoreArg::Exact => StoreKind::Exact,
            StoreArg::Bitstate => StoreKind::Bitstate {
                bits: self.bits,
                hashes: self.hashes,
            },
            StoreArg::None => StoreKind::None,
        };
        Ok(CheckOptions {
            exploration: ExplorationConfig {
                max_events: self.events,
                failures: FailureConfig {
                    offline: self.failures,
                    comm: self.failures || self.comm_failures,
                    max_failures: self.max_failures,
                },
                store,
                max_steps: self.max_steps,
                workers: 1,
            },
            selection: Selection::parse(&self.props),
            jobs: self.jobs.max(1),
            monolithic: self.monolithic,
        })
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// System configuration.
    pub config: PathBuf,
    #[command(flatten)]
    pub library: Library,
    #[command(flatten)]
    pub explore: ExploreArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write each counterexample as a JSON trace into this directory.
    #[arg(long, value_name = "DIR")]
    pub traces: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DepsArgs {
    pub config: PathBuf,
    #[command(flatten)]
    pub library: Library,
    /// Print the graph in Graphviz dot syntax.
    #[arg(long)]
    pub dot: bool,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    /// Source of the new app.
    pub app: PathBuf,
    /// Configuration of the home the app is installed into.
    #[arg(long)]
    pub into: PathBuf,
    #[command(flatten)]
    pub library: Library,
    #[command(flatten)]
    pub explore: ExploreArgs,
    /// Violation ratio at which a verdict is reached.
    #[arg(long, default_value_t = 0.9)]
    pub threshold: f64,
    /// Seed for sampling configurations beyond the cap.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum configurations checked per phase.
    #[arg(long, default_value_t = 512)]
    pub cap: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub config: PathBuf,
    /// Trace written by `check --traces`.
    pub trace: PathBuf,
    #[command(flatten)]
    pub library: Library,
    #[command(flatten)]
    pub explore: ExploreArgs,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Rule file, one `if ... then ...` rule per line.
    pub rules: PathBuf,
    /// Configuration listing the devices of the home.
    #[arg(long)]
    pub inventory: PathBuf,
    #[command(flatten)]
    pub library: Library,
    /// Write `rules.app` and `system.cfg` here instead of printing them.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Check the imported system right away.
    #[arg(long)]
    pub check: bool,
    #[command(flatten)]
    pub explore: ExploreArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Parses every app in the given files and directories.
pub fn load_library(paths: &[PathBuf]) -> Result<Vec<AppSpec>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("cannot list {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "app"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let mut apps = Vec::new();
    for f in files {
        let parsed = parse_apps_with(&read(&f)?, CapabilityCatalog::builtin())
            .with_context(|| format!("{}", f.display()))?;
        apps.extend(parsed);
    }
    Ok(apps)
}

fn load_system(config: &Path, library: &Library) -> Result<(SystemConfig, Vec<AppSpec>)> {
    let apps = load_library(&library.apps)?;
    let cfg = load_config(&read(config)?, &apps).with_context(|| format!("{}", config.display()))?;
    Ok((cfg, apps))
}

fn emit_report(out: &mut dyn Write, report: &Report, format: Format) -> Result<()> {
    match format {
        Format::Text => write!(out, "{}", report.render_text())?,
        Format::Records => {
            for n in &report.notices {
                writeln!(out, "{}", json!({"type": "notice", "message": n}))?;
            }
            for g in &report.groups {
                writeln!(out, "{}", json!({"type": "group", "group": g}))?;
            }
            for v in &report.violations {
                writeln!(out, "{}", json!({"type": "violation", "violation": v}))?;
            }
            writeln!(
                out,
                "{}",
                json!({
                    "type": "summary",
                    "properties": report.properties.len(),
                    "groups": report.groups.len(),
                    "states": report.states(),
                    "violations": report.violations.len(),
                })
            )?;
        }
    }
    Ok(())
}

fn write_traces(dir: &Path, report: &Report) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (i, v) in report.violations.iter().enumerate() {
        let path = dir.join(format!("{:03}-{}.json", i + 1, v.property));
        fs::write(&path, serde_json::to_string_pretty(&v.trace)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn print_notices(report: &Report, verbose: bool) {
    if verbose {
        for n in &report.notices {
            eprintln!("note: {n}");
        }
    } else if !report.notices.is_empty() {
        eprintln!(
            "note: {} propert{} skipped for lack of devices with the needed roles (-v lists them)",
            report.notices.len(),
            if report.notices.len() == 1 { "y" } else { "ies" }
        );
    }
}

fn check_status(report: &Report) -> i32 {
    if report.has_violations() {
        EXIT_VIOLATIONS
    } else {
        0
    }
}

fn run_check(args: &CheckArgs, out: &mut dyn Write) -> Result<i32> {
    let (cfg, _) = load_system(&args.config, &args.library)?;
    let report = check_system(&cfg, &args.explore.options()?)?;
    print_notices(&report, args.explore.verbose);
    emit_report(out, &report, args.format)?;
    if let Some(dir) = &args.traces {
        write_traces(dir, &report)?;
    }
    Ok(check_status(&report))
}

fn run_deps(args: &DepsArgs, out: &mut dyn Write) -> Result<i32> {
    let (cfg, _) = load_system(&args.config, &args.library)?;
    let (analysis, _) = app_groups(&cfg, false);
    if args.dot {
        write!(out, "{}", analysis.graph.to_dot())?;
    } else {
        write!(out, "{}", analysis.render_table())?;
    }
    Ok(0)
}

fn run_attribute(args: &AttributeArgs, out: &mut dyn Write) -> Result<i32> {
    let (cfg, _) = load_system(&args.into, &args.library)?;
    let apps = parse_apps_with(&read(&args.app)?, &cfg.catalog).with_context(|| format!("{}", args.app.display()))?;
    let [app] = &apps[..] else {
        bail!("{}: expected exactly one app, found {}", args.app.display(), apps.len());
    };
    if !(0.0..=1.0).contains(&args.threshold) {
        bail!("--threshold must lie in [0, 1]");
    }
    let check = args.explore.options()?;
    let opts = AttributionOptions {
        threshold: args.threshold,
        limits: EnumerationLimits {
            cap: args.cap.max(1),
            seed: args.seed,
            ..EnumerationLimits::default()
        },
        phase1_selection: check.selection.clone(),
        check,
    };
    let verdict = attribute(app, &cfg, &opts)?;
    match args.format {
        Format::Text => write!(out, "{}", verdict.render_text())?,
        Format::Records => writeln!(out, "{}", serde_json::to_string(&verdict)?)?,
    }
    Ok(0)
}

fn run_replay(args: &ReplayArgs, out: &mut dyn Write) -> Result<i32> {
    let (cfg, _) = load_system(&args.config, &args.library)?;
    let trace: Trace = serde_json::from_str(&read(&args.trace)?)
        .with_context(|| format!("{}: not a trace", args.trace.display()))?;
    let group = if trace.group.is_empty() {
        cfg.apps.iter().map(|a| a.id.clone()).collect()
    } else {
        for id in &trace.group {
            if cfg.app(id).is_none() {
                bail!("trace names app `{id}`, which the configuration does not install");
            }
        }
        trace.group.iter().cloned().collect()
    };
    let replayed = replay_trace(&cfg, &group, &args.explore.options()?, &trace)?;
    for l in &replayed.lines {
        writeln!(out, "{l}")?;
    }
    match trace.verdict() {
        Some(v) => writeln!(out, "{v}")?,
        None => {
            for f in &replayed.findings {
                writeln!(out, "VIOLATION {}: {}", f.property, f.description)?;
            }
        }
    }
    writeln!(out, "replay ok: {} event(s)", trace.steps.len())?;
    Ok(0)
}

fn run_import(args: &ImportArgs, out: &mut dyn Write) -> Result<i32> {
    let library = load_library(&args.library.apps)?;
    let imported = ifttt::import(&read(&args.rules)?, &read(&args.inventory)?, &library)?;
    match &args.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            fs::write(dir.join("rules.app"), &imported.app_source)?;
            fs::write(dir.join("system.cfg"), &imported.config_source)?;
            eprintln!("wrote {} rule app(s) to {}", imported.apps.len(), dir.display());
        }
        None if !args.check => {
            write!(out, "{}", imported.app_source)?;
            writeln!(out)?;
            write!(out, "{}", imported.config_source)?;
        }
        None => {}
    }
    if !args.check {
        return Ok(0);
    }
    let report = check_system(&imported.config, &args.explore.options()?)?;
    print_notices(&report, args.explore.verbose);
    emit_report(out, &report, args.format)?;
    Ok(check_status(&report))
}

/// Runs a parsed command, writing results to `out`. Returns the exit code.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Check(a) => run_check(a, out),
        Command::Deps(a) => run_deps(a, out),
        Command::Attribute(a) => run_attribute(a, out),
        Command::Replay(a) => run_replay(a, out),
        Command::ImportIfttt(a) => run_import(a, out),
    }
}
