// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use upf_telemetry::baselines::Mode;
use upf_telemetry_cli::{
    cmd_replay, cmd_run, cmd_size, cmd_sweep, parse_modes, sweep_csv, CliError, RunManifest,
    SizeParams, SweepGrid,
};

#[derive(Parser)]
#[command(
    name = "upftel",
    version,
    about = "User-plane telemetry workbench: simulate, measure, detect, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file, or preset:NAME
    #[arg(long)]
    scenario: Option<String>,
    /// Read every option from a manifest instead
    #[arg(long, conflicts_with = "scenario")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of pm,sketch,dsmp
    #[arg(long)]
    modes: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario and evaluate every enabled telemetry mode
    Run {
        #[command(flatten)]
        common: Common,
        /// Skip the raw telemetry export file
        #[arg(long)]
        no_records: bool,
        /// Evaluate an external scorer's window,teid,qfi,score file too
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Print the sketch sizing report
    Size {
        /// TOML parameters; defaults reproduce the reference deployment
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Run a configuration grid and report cost against AUPRC
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Axes such as "w=256,512;d=2,3;rho=0.01;delta=20000"
        #[arg(long)]
        grid: Option<String>,
    },
    /// Re-run a finished run directory and compare every output file
    Replay {
        /// Directory of the original run
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn manifest(c: Common) -> Result<RunManifest, CliError> {
    let mut m = match (&c.manifest, &c.scenario) {
        (Some(p), _) => RunManifest::load(p)?,
        (None, Some(s)) => RunManifest::new(
            s.clone(),
            c.out
                .clone()
                .ok_or_else(|| CliError::Usage("--out is required".into()))?,
        ),
        (None, None) => {
            return Err(CliError::Usage(
                "one of --scenario or --manifest is required".into(),
            ))
        }
    };
    if c.seed.is_some() {
        m.seed = c.seed;
    }
    if let Some(modes) = &c.modes {
        m.modes = parse_modes(modes)?;
    }
    if let Some(out) = c.out {
        m.out = out;
    }
    Ok(m)
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Run {
            common,
            no_records,
            scores,
        } => {
            let mut m = manifest(common)?;
            if no_records {
                m.records = false;
            }
            if scores.is_some() {
                m.scores = scores;
            }
            let s = cmd_run(&m)?;
            print!("{}", std::fs::read_to_string(s.dir.join("metrics.txt"))?);
            println!("outputs in {}", s.dir.display());
        }
        Cmd::Size { params } => {
            let p = match params {
                Some(path) => SizeParams::load(&path)?,
                None => SizeParams::default(),
            };
            print!("{}", cmd_size(&p)?.text);
        }
        Cmd::Sweep { common, grid } => {
            let mut m = manifest(common)?;
            if let Some(g) = grid {
                m.grid = SweepGrid::parse(&g)?;
            }
            if m.modes.is_empty() {
                m.modes = Mode::ALL.to_vec();
            }
            let rows = cmd_sweep(&m)?;
            print!("{}", sweep_csv(&rows));
        }
        Cmd::Replay { from, out } => {
            let differ = cmd_replay(&from, &out)?;
            if !differ.is_empty() {
                return Err(CliError::Runtime(format!(
                    "replay differs in: {}",
                    differ.join(", ")
                )));
            }
            println!("replay identical: {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
