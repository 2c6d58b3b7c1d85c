use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use sdcbf_core::sim::{check_invariants, plot_data, run_setup, summary_json, write_outputs, Setup};
use sdcbf_core::task_graph::Token;
use sdcbf_core::{check_trace, ScenarioConfig, SimulationTrace};

#[derive(Parser)]
#[command(name = "sdcbf", version, about = "Sampled-data barrier-function control of multi-agent STL scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trace.json, trace.csv and summary.json.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-check the invariants of a recorded trace.
    Check { trace: PathBuf },
    /// Show the leader assignment of a scenario's task graph.
    Tokens { scenario: PathBuf },
    /// Write per-figure CSV tables for a recorded trace.
    PlotData {
        trace: PathBuf,
        /// Defaults to the directory holding the trace.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Whether every invariant held.
fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { scenario, out } => {
            let cfg = ScenarioConfig::load(&scenario)?;
            let setup = Setup::new(&cfg)?;
            let run = run_setup(setup.clone())?;
            let report = check_invariants(&run.trace, &setup)?;
            write_outputs(&run.trace, &report, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary_json(&run.trace, &report))?);
            eprintln!("wrote {}", out.display());
            Ok(report.ok())
        }
        Command::Check { trace } => {
            let trace = load_trace(&trace)?;
            let report = check_trace(&trace)?;
            println!("{}", serde_json::to_string_pretty(&summary_json(&trace, &report))?);
            Ok(report.ok())
        }
        Command::Tokens { scenario } => {
            let cfg = ScenarioConfig::load(&scenario)?;
            let setup = Setup::for_monitoring(&cfg)?;
            let (graph, tokens) = (&setup.graph, &setup.tokens);
            let leaders: Vec<_> = graph
                .edges
                .iter()
                .map(|&(i, j)| {
                    let leader = if tokens.get(i).tokens[&j] == Token::Leader { i } else { j };
                    json!({ "edge": [i, j], "leader": leader })
                })
                .collect();
            let bound = graph.diameter.div_ceil(2) + 1;
            let check = tokens.check(graph);
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "rounds": tokens.rounds_used,
                    "round_bound": bound,
                    "diameter": graph.diameter,
                    "edges": leaders,
                    "independent": graph.independent,
                    "consistent": check.is_ok(),
                }))?
            );
            if let Err(e) = &check {
                eprintln!("{e}");
            }
            Ok(check.is_ok() && tokens.rounds_used <= bound)
        }
        Command::PlotData { trace: path, out } => {
            let trace = load_trace(&path)?;
            let setup = Setup::for_monitoring(&trace.config)?;
            let dir = out.unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
            for f in plot_data(&trace, &setup, &dir)? {
                println!("{}", dir.join(f).display());
            }
            Ok(true)
        }
    }
}

fn load_trace(path: &Path) -> Result<SimulationTrace> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SimulationTrace::from_json(&text)?)
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
