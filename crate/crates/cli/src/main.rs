mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::json;

use commands::*;

/// Dense virtual-marker soft labels: annotate rigged templates, synthesize
/// posed training data, train and run the classifier, and evaluate
/// correspondences.
#[derive(Debug, Parser)]
#[command(name = "vmark", version, propagate_version = true)]
struct Cli {
    /// Worker threads for stage-internal parallelism (0 = all cores, 1 = fully deterministic).
    #[arg(long, global = true, env = "VMARK_THREADS", default_value_t = 0)]
    threads: usize,
    /// TOML config; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Validate inputs and parameters, print the planned manifest, and exit.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Manifest path (default: next to the primary output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Built-in synthetic templates.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Sparse marker placement.
    #[command(subcommand)]
    Markers(MarkersCommand),
    /// Dense soft labels.
    #[command(subcommand)]
    Labels(LabelsCommand),
    /// Pose sampling and skinning.
    #[command(subcommand)]
    Pose(PoseCommand),
    /// Render depth maps and labeled point clouds from several viewpoints.
    Render(RenderArgs),
    /// Train the soft-label classifier on posed templates.
    Train(TrainArgs),
    /// Predict soft labels with a trained model.
    #[command(subcommand)]
    Infer(InferCommand),
    /// Match soft labels to a target label field.
    Match(MatchArgs),
    /// Geodesic error of correspondence maps against ground truth.
    Eval(EvalArgs),
    /// Oneshot inference latency on a synthetic depth frame.
    Bench(BenchArgs),
}

fn run_command(cmd: &Command, dry_run: bool) -> Result<Outcome> {
    match cmd {
        Command::Synth(c) => synth(c, dry_run),
        Command::Markers(c) => markers(c, dry_run),
        Command::Labels(c) => labels(c, dry_run),
        Command::Pose(c) => pose(c, dry_run),
        Command::Render(a) => render(a, dry_run),
        Command::Train(a) => train_cmd(a, dry_run),
        Command::Infer(c) => infer(c, dry_run),
        Command::Match(a) => match_cmd(a, dry_run),
        Command::Eval(a) => eval(a, dry_run),
        Command::Bench(a) => bench(a, dry_run),
    }
}

fn command_tree() -> clap::Command {
    fn overriding(cmd: clap::Command) -> clap::Command {
        let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_owned()).collect();
        names
            .iter()
            .fold(cmd.args_override_self(true), |c, n| c.mut_subcommand(n, overriding))
    }
    overriding(Cli::command())
}

fn subcommand_path(m: &ArgMatches) -> Vec<String> {
    let mut path = Vec::new();
    let mut cur = m;
    while let Some((name, sub)) = cur.subcommand() {
        path.push(name.to_owned());
        cur = sub;
    }
    path
}

/// Splices config-derived flags into `args` (without the program name):
/// globals first, subcommand flags right after the subcommand path, so that
/// explicit flags, which come later, take precedence.
fn merge_config(args: &[String], root: &clap::Command, path: &[String], table: &toml::Table) -> Result<Vec<String>> {
    let (local, global) = config::to_flags(table, root, path)?;
    let mut out = global;
    let mut it = args.iter();
    let mut matched = 0;
    for a in it.by_ref() {
        out.push(a.clone());
        if matched < path.len() && *a == path[matched] {
            matched += 1;
            if matched == path.len() {
                break;
            }
        }
    }
    out.extend(local);
    out.extend(it.cloned());
    Ok(out)
}

fn strip_config(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--config" {
            skip = true;
        } else if !a.starts_with("--config=") {
            out.push(a.clone());
        }
    }
    out
}

struct Invocation {
    cli: Cli,
    /// Arguments after config merging, without the program name.
    argv: Vec<String>,
    path: Vec<String>,
}

fn parse(raw: &[String]) -> Result<Invocation, clap::Error> {
    let root = command_tree();
    let first = root.clone().try_get_matches_from(raw)?;
    let args: Vec<String> = raw[1..].to_vec();
    let path = subcommand_path(&first);
    let Some(cfg_path) = first.get_one::<PathBuf>("config") else {
        let cli = Cli::from_arg_matches(&first)?;
        return Ok(Invocation { cli, argv: args, path });
    };
    let merged = config::load(cfg_path)
        .and_then(|table| merge_config(&strip_config(&args), &root, &path, &table))
        .map_err(|e| {
            root.clone()
                .error(clap::error::ErrorKind::ValueValidation, format!("{e:#}"))
        })?;
    let full: Vec<String> = std::iter::once(raw[0].clone()).chain(merged.iter().cloned()).collect();
    let m = root.clone().try_get_matches_from(&full)?;
    Ok(Invocation {
        cli: Cli::from_arg_matches(&m)?,
        argv: merged,
        path,
    })
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<vmark::Error>().map(vmark::Error::kind))
        .or_else(|| e.chain().find_map(|c| c.downcast_ref::<std::io::Error>().map(|_| "io")))
        .unwrap_or("stage_failed")
}

fn execute(inv: &Invocation) -> Result<()> {
    let cli = &inv.cli;
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let start = Instant::now();
    let outcome = run_command(&cli.command, cli.dry_run)?;
    let primary = outcome.outputs.first().cloned();
    let m = manifest::Manifest {
        tool: "vmark",
        version: env!("CARGO_PKG_VERSION"),
        command: inv.path.join(" "),
        argv: strip_manifest_flags(&inv.argv),
        threads: rayon::current_num_threads(),
        seed: outcome.seed,
        inputs: manifest::records(&outcome.inputs)?,
        outputs: if cli.dry_run {
            Vec::new()
        } else {
            manifest::records(&outcome.outputs)?
        },
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        dry_run: cli.dry_run,
        summary: outcome.summary,
    };
    let text = serde_json::to_string_pretty(&m)? + "\n";
    if cli.dry_run {
        print!("{text}");
        return Ok(());
    }
    let path = cli
        .manifest
        .clone()
        .or_else(|| primary.as_deref().map(manifest::path_for))
        .context("stage produced no output to anchor the manifest")?;
    std::fs::write(&path, text).with_context(|| format!("writing manifest {}", path.display()))?;
    log::info!("manifest written to {}", path.display());
    Ok(())
}

/// Drops flags that do not affect results, so the manifest replays cleanly.
fn strip_manifest_flags(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
            continue;
        }
        match a.as_str() {
            "--manifest" => skip = true,
            "--dry-run" => {}
            s if s.starts_with("--manifest=") => {}
            _ => out.push(a.clone()),
        }
    }
    out
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let inv = match parse(&raw) {
        Ok(v) => v,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            error_line("usage", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let level = if inv.cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match execute(&inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_line(error_kind(&e), &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
