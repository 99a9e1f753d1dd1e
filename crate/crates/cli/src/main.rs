//! `frontier` command-line front end.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Result;
use clap::{ArgAction, Parser, Subcommand};

use commands::{Failure, MaskFormat, Outcome, RunArgs};
use config::{Config, Layer, ProducerKind};

#[derive(Parser)]
#[command(name = "frontier", version, about = "Compile, run, validate and export DAG-structured reasoning traces")]
struct Cli {
    /// TOML settings file. Also read from FRONTIER_CONFIG.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Concurrent workers.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Require exactly one terminal outline.
    #[arg(long, global = true, value_name = "BOOL", action = ArgAction::Set)]
    single_conclusion: Option<bool>,
    /// Chains kept after deduplication.
    #[arg(long, global = true, value_name = "N")]
    chain_cap: Option<usize>,
    /// Reject immediately repeated entities in chains instead of collapsing them.
    #[arg(long, global = true, value_name = "BOOL", action = ArgAction::Set)]
    strict_dedup: Option<bool>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge reasoning chains (`N: A->B->C` per line) into a plan.
    Compile {
        chains: PathBuf,
        /// Plan output; without it the plan is part of the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Graphviz rendering of the merged graph.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Verify and replay trace files or directories of them.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Run the planning and execution pipeline on a question.
    Run {
        /// File holding the question text.
        input: PathBuf,
        #[arg(long, value_enum)]
        producer: Option<ProducerKind>,
        /// Recorded trace for the scripted producer.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Plan file for the synthetic producer.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Synthetic output length range, in words.
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
        lengths: Option<Vec<usize>>,
        /// Token budget sent to the remote producer.
        #[arg(long, default_value_t = 512)]
        max_tokens: usize,
        /// Remote request timeout in seconds.
        #[arg(long, default_value_t = 60)]
        timeout: u64,
        /// Trace output; without it the trace is part of the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Graphviz rendering of the executed net.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Re-execute a recorded trace and report its metrics.
    Replay { trace: PathBuf },
    /// Export the attention mask and positions of a trace.
    Mask {
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: MaskFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> Result<Config> {
    let env_vars: Vec<(String, String)> = std::env::vars().collect();
    let env = Layer::from_env(env_vars.iter().cloned())?;
    let config_path = cli.config.clone().or_else(|| {
        env_vars
            .iter()
            .find(|(k, _)| k == "FRONTIER_CONFIG")
            .map(|(_, v)| PathBuf::from(v))
    });
    let file = config_path.as_deref().map(Layer::from_file).transpose()?;
    let mut flags = Layer {
        single_conclusion: cli.single_conclusion,
        chain_cap: cli.chain_cap,
        strict_dedup: cli.strict_dedup,
        workers: cli.workers,
        ..Default::default()
    };
    if let Command::Run { producer, endpoint, .. } = &cli.command {
        flags.producer = *producer;
        flags.endpoint = endpoint.clone();
    }
    let cfg = Config::resolve(file.as_ref(), &env, &flags);
    log::debug!("settings: {cfg:?}");
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let cfg = resolve(cli)?;
    let or_cfg = |flag: &Option<PathBuf>, fallback: &Option<PathBuf>| flag.clone().or_else(|| fallback.clone());
    match &cli.command {
        Command::Compile { chains, out, dot } => {
            commands::compile(&cfg, chains, or_cfg(out, &cfg.out).as_deref(), or_cfg(dot, &cfg.dot).as_deref())
        }
        Command::Validate { paths } => commands::validate(&cfg, paths),
        Command::Run {
            input,
            script,
            plan,
            seed,
            lengths,
            max_tokens,
            timeout,
            out,
            dot,
            ..
        } => {
            let out = or_cfg(out, &cfg.out);
            let dot = or_cfg(dot, &cfg.dot);
            let args = RunArgs {
                input,
                script: script.as_deref(),
                plan: plan.as_deref(),
                seed: *seed,
                lengths: lengths.as_ref().map(|l| (l[0], l[1])),
                max_tokens: *max_tokens,
                timeout: Duration::from_secs(*timeout),
                out: out.as_deref(),
                dot: dot.as_deref(),
            };
            commands::run(&cfg, &args)
        }
        Command::Replay { trace } => commands::replay(&cfg, trace),
        Command::Mask { trace, format, out } => commands::mask(&cfg, trace, *format, or_cfg(out, &cfg.out).as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(outcome) => {
            let mut stdout = std::io::stdout().lock();
            if let Err(e) = stdout.write_all(&outcome.stdout).and_then(|_| stdout.flush()) {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
            ExitCode::from(outcome.code)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Failure>().map_or(1, |f| f.code))
        }
    }
}
