// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `ensim` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid scenario, 3 a demo did
//! not reach its expected outcome.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::report::{render, to_json_string, Format};
use crate::scenario::{load_scenario, oracle, run_with, Demo, RunOptions, Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID_SCENARIO: i32 = 2;
pub const EXIT_DEMO_FAILED: i32 = 3;

/// Environment variable selecting the log level: `off`, `info` or `trace`.
pub const LOG_ENV: &str = "ENSIM_LOG";

#[derive(Debug, Parser)]
#[command(name = "ensim", version, about = "Exposure notification simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its report.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Print the oracle's expected exposures for a scenario.
    Oracle {
        scenario: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Check that a scenario file loads.
    Validate { scenario: PathBuf },
    /// Run a bundled attack demonstration.
    Demo {
        #[arg(value_enum)]
        name: DemoName,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Replace the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
    /// Include the event log in the report.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoName {
    Recentralize,
    Probe,
    Beacon,
    Victim,
}

impl From<DemoName> for Demo {
    fn from(d: DemoName) -> Self {
        match d {
            DemoName::Recentralize => Demo::Recentralize,
            DemoName::Probe => Demo::Probe,
            DemoName::Beacon => Demo::Beacon,
            DemoName::Victim => Demo::Victim,
        }
    }
}

fn options(o: &OutputArgs) -> RunOptions {
    RunOptions { verbose: o.verbose, seed_override: o.seed, record_sightings: false }
}

fn write_output(o: &OutputArgs, text: &str, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    match &o.out {
        Some(path) => match std::fs::write(path, text) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(stderr, "error: cannot write {}: {e}", path.display());
                EXIT_USAGE
            }
        },
        None => match stdout.write_all(text.as_bytes()) {
            Ok(()) => EXIT_OK,
            Err(_) => EXIT_USAGE,
        },
    }
}

fn load(path: &PathBuf, stderr: &mut dyn Write) -> Result<Scenario, i32> {
    load_scenario(path).map_err(|e: ScenarioError| {
        let _ = writeln!(stderr, "error: {e}");
        EXIT_INVALID_SCENARIO
    })
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    match cli.command {
        Command::Run { scenario, output } => {
            let s = match load(&scenario, stderr) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let report = run_with(&s, options(&output));
            if !report.agrees_with_oracle() {
                log::info!(
                    "run disagrees with oracle: {} missed, {} spurious",
                    report.oracle_diff.missed.len(),
                    report.oracle_diff.spurious.len()
                );
            }
            write_output(&output, &render(&report, output.format.into()), stdout, stderr)
        }
        Command::Oracle { scenario, output } => {
            let mut s = match load(&scenario, stderr) {
                Ok(s) => s,
                Err(code) => return code,
            };
            if let Some(seed) = output.seed {
                s.seed = seed;
            }
            let o = oracle(&s);
            let text = match output.format {
                FormatArg::Json => to_json_string(&o),
                FormatArg::Csv => {
                    let mut t = String::from("exposed,diagnosed,day\n");
                    for e in &o.exposure_edges {
                        t.push_str(&format!("{},{},{}\n", e.exposed, e.diagnosed, e.day.0));
                    }
                    t
                }
            };
            write_output(&output, &text, stdout, stderr)
        }
        Command::Validate { scenario } => match load(&scenario, stderr) {
            Ok(s) => {
                let _ = writeln!(
                    stdout,
                    "valid: {} devices, {} contacts, {} days",
                    s.devices.len(),
                    s.contacts.len(),
                    s.duration_days
                );
                EXIT_OK
            }
            Err(code) => code,
        },
        Command::Demo { name, output } => {
            let demo = Demo::from(name);
            let report = run_with(&demo.scenario(), options(&output));
            let outcome = demo.check(&report);
            let verdict = if outcome.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(stdout, "{verdict} demo {demo}: {}", outcome.summary);
            if output.out.is_some() {
                let code = write_output(&output, &render(&report, output.format.into()), stdout, stderr);
                if code != EXIT_OK {
                    return code;
                }
            }
            if outcome.passed {
                EXIT_OK
            } else {
                EXIT_DEMO_FAILED
            }
        }
    }
}
