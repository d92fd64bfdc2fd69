//! `podscale`: train scaling agents, evaluate policies on scenarios and compare
//! the resulting reports.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors (bad flags,
//! unreadable configs, unknown scenarios, incompatible checkpoints), 3 when a
//! run aborts after it started.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use podscale::engine::{train_with_progress, AgentOrder, EngineConfig, PolicyKind, TrainedModels};
use podscale::harness::{compare_table, load_report, run_experiment, write_plots, DEFAULT_ITERATIONS};
use podscale::kpi::KpiReport;
use podscale::scenario::{builtin, builtin_names, Scenario};
use podscale::Error;

/// Name of the engine config written next to trained models.
const MODEL_CONFIG_FILE: &str = "config.toml";

#[derive(Parser)]
#[command(name = "podscale", version, about = "In-place vertical scaling with cooperative RL agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per synthetic service and save the model set.
    Train(TrainArgs),
    /// Evaluate a policy on a scenario over several seeded iterations.
    Eval(EvalArgs),
    /// Inspect built-in scenarios.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Print a saved KPI report.
    Report(ReportArgs),
    /// Compare reports of the same scenario side by side and plot them.
    Compare(CompareArgs),
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// List the built-in scenarios.
    List,
    /// Print a scenario as TOML.
    Show { name: String },
}

/// Flags that override values of the engine config file.
#[derive(Args)]
struct ConfigFlags {
    /// Engine config in TOML; defaults are used for anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// heuristic, discrete or continuous.
    #[arg(long)]
    policy: Option<String>,
    /// Root seed.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    ticks_per_episode: Option<u64>,
    /// Apply requested deltas in shuffled rather than ascending service order.
    #[arg(long)]
    shuffle_order: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigFlags,
    /// Output directory for the model set.
    #[arg(long)]
    out: PathBuf,
    /// Print a progress line every this many episodes; 0 disables.
    #[arg(long, default_value_t = 10)]
    progress_every: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigFlags,
    /// Built-in scenario name or path to a scenario TOML.
    #[arg(long)]
    scenario: String,
    /// Model directory written by `train`. Its config is used unless --config is given.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iterations: usize,
    /// Output directory for the report, logs and plots.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json or the directory holding one.
    path: PathBuf,
    /// Print the raw JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Reports (files or directories) of the same scenario.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Write the comparison plots and their data here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure classified by the exit code it maps to.
enum Failure {
    Config(Error),
    Runtime(Error),
}

impl Failure {
    /// Errors of the config kind stay config errors even when raised mid-run.
    fn runtime(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Scenario { command } => scenario(command),
        Command::Report(args) => report(args),
        Command::Compare(args) => compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn build_config(flags: &ConfigFlags, fallback: Option<&Path>) -> CliResult<EngineConfig> {
    let mut cfg = match flags.config.as_deref().or(fallback) {
        Some(path) => EngineConfig::load(path).map_err(|e| {
            Failure::Config(Error::Config(format!("{}: {e}", path.display())))
        })?,
        None => EngineConfig::default(),
    };
    if let Some(p) = &flags.policy {
        cfg.policy = p.parse::<PolicyKind>().map_err(Failure::Config)?;
    }
    cfg.seed = flags.seed;
    if let Some(n) = flags.episodes {
        cfg.episodes = n;
    }
    if let Some(n) = flags.ticks_per_episode {
        cfg.ticks_per_episode = n;
    }
    if flags.shuffle_order {
        cfg.agent_order = AgentOrder::Shuffled;
    }
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

fn train(args: TrainArgs) -> CliResult {
    let cfg = build_config(&args.config, None)?;
    if !cfg.policy.is_learning() {
        return Err(Failure::Config(Error::Config(
            "the heuristic policy has nothing to train; pass --policy discrete or continuous".into(),
        )));
    }
    let every = args.progress_every;
    let models = train_with_progress(&cfg, |s| {
        if every > 0 && (s.episode + 1) % every == 0 {
            eprintln!(
                "episode {:>5}  reward {:>9.3}  response {:>8.3} s  violations {:>5.1}%  exploration {:.3}",
                s.episode + 1,
                s.mean_reward,
                s.mean_response_s,
                s.violation_pct,
                s.exploration
            );
        }
    })
    .map_err(Failure::runtime)?;
    models.save(&args.out).map_err(Failure::Runtime)?;
    let text = cfg.to_toml_string().map_err(Failure::Runtime)?;
    fs::write(args.out.join(MODEL_CONFIG_FILE), text).map_err(|e| Failure::Runtime(e.into()))?;
    println!(
        "trained {} {} agents for {} episodes; saved to {}",
        models.agents.len(),
        cfg.policy.name(),
        cfg.episodes,
        args.out.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> CliResult {
    let fallback = args.models.as_ref().map(|d| d.join(MODEL_CONFIG_FILE));
    let fallback = fallback.as_deref().filter(|p| p.exists());
    let cfg = build_config(&args.config, fallback)?;
    let scenario = Scenario::resolve(&args.scenario).map_err(Failure::Config)?;
    scenario.validate().map_err(Failure::Config)?;
    let models = match (&args.models, cfg.policy.is_learning()) {
        (Some(dir), true) => {
            let m = TrainedModels::load(dir).map_err(Failure::Config)?;
            m.check_compatible(&cfg).map_err(Failure::Config)?;
            Some(m)
        }
        (None, true) => {
            return Err(Failure::Config(Error::Usage(format!(
                "policy {} needs --models",
                cfg.policy.name()
            ))))
        }
        (_, false) => None,
    };
    if args.iterations == 0 {
        return Err(Failure::Config(Error::Usage("--iterations must be positive".into())));
    }
    let exp = run_experiment(&cfg, models.as_ref(), &scenario, args.iterations, cfg.seed)
        .map_err(Failure::runtime)?;
    exp.write(&args.out).map_err(Failure::Runtime)?;
    print!("{}", compare_table(std::slice::from_ref(&exp.report)).map_err(Failure::Runtime)?);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn scenario(command: ScenarioCommand) -> CliResult {
    match command {
        ScenarioCommand::List => {
            for name in builtin_names() {
                let s = builtin(name).expect("listed scenarios exist");
                println!(
                    "{name:<14} {:>3} ticks  {} services  {}",
                    s.horizon,
                    s.services.len(),
                    s.description
                );
            }
        }
        ScenarioCommand::Show { name } => {
            let s = Scenario::resolve(&name).map_err(Failure::Config)?;
            print!("{}", s.to_toml_string().map_err(Failure::Runtime)?);
        }
    }
    Ok(())
}

fn read_report(path: &Path) -> CliResult<KpiReport> {
    load_report(path).map_err(|e| Failure::Config(Error::Config(format!("{}: {e}", path.display()))))
}

fn report(args: ReportArgs) -> CliResult {
    let r = read_report(&args.path)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&r).map_err(|e| Failure::Runtime(e.into()))?);
        return Ok(());
    }
    println!("policy {}  iterations {}  seed {}", r.policy, r.iterations, r.seed);
    print!("{}", compare_table(std::slice::from_ref(&r)).map_err(Failure::Runtime)?);
    println!(
        "aggregate  violation {:.3}%  response {:.3} s  resource delta {:.1} mc",
        r.aggregate.violation_pct, r.aggregate.mean_response_s, r.aggregate.resource_delta_mc
    );
    for w in &r.windows {
        let cells: Vec<String> = w
            .services
            .iter()
            .map(|s| format!("s{} {:.1}%/{:.3}s", s.service, s.violation_pct.mean, s.mean_response_s.mean))
            .collect();
        println!("window {:<16} [{:>3}, {:>3}]  {}", w.name, w.start, w.end, cells.join("  "));
    }
    Ok(())
}

fn compare(args: CompareArgs) -> CliResult {
    let reports = args
        .reports
        .iter()
        .map(|p| read_report(p))
        .collect::<CliResult<Vec<_>>>()?;
    print!("{}", compare_table(&reports).map_err(Failure::Config)?);
    if let Some(out) = &args.out {
        let files = write_plots(&reports, out).map_err(Failure::runtime)?;
        for f in files {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}
