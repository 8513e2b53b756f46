use std::path::PathBuf;
use std::process::ExitCode;

use biokf_cli::{
    cmd_montecarlo, cmd_run, cmd_simulate, cmd_tune, CliError, RunConfig, TuneTarget,
};

const USAGE: &str = "\
biokf — bioreactor growth estimation from fluorescence measurements

Usage:
  biokf simulate   [--config PATH] [--seed N] [--out DIR]
  biokf tune       [--config PATH] [--out DIR] --target presmooth|bkf|ekf|ckf
  biokf run        [--config PATH] [--out DIR] --filter ckf|bkf|ekf
  biokf montecarlo [--config PATH] [--out DIR] [--replicates N] [--seed N]

Options:
  --config PATH      configuration file (defaults apply when omitted)
  --out DIR          output directory (default ./out)
  --seed N           override the simulation seed (simulate) or the Monte
                     Carlo base seed (montecarlo)
  --filter NAME      which estimator `run` executes
  --target NAME      which hyperparameter group `tune` optimizes
  --replicates N     Monte Carlo replicate count override

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
";

struct Args {
    command: String,
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    filter: Option<String>,
    target: Option<String>,
    replicates: Option<usize>,
}

fn parse_args(mut argv: std::env::Args) -> Result<Args, CliError> {
    let _program = argv.next();
    let command = argv
        .next()
        .ok_or_else(|| CliError::Config("missing subcommand".into()))?;
    let mut args = Args {
        command,
        config: None,
        out: PathBuf::from("out"),
        seed: None,
        filter: None,
        target: None,
        replicates: None,
    };
    let next_value = |argv: &mut std::env::Args, flag: &str| -> Result<String, CliError> {
        argv.next()
            .ok_or_else(|| CliError::Config(format!("flag {flag} needs a value")))
    };
    while let Some(flag) = argv.next() {
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(next_value(&mut argv, "--config")?)),
            "--out" => args.out = PathBuf::from(next_value(&mut argv, "--out")?),
            "--seed" => {
                let v = next_value(&mut argv, "--seed")?;
                args.seed = Some(v.parse().map_err(|_| {
                    CliError::Config(format!("--seed expects an integer, got '{v}'"))
                })?);
            }
            "--filter" => args.filter = Some(next_value(&mut argv, "--filter")?),
            "--target" => args.target = Some(next_value(&mut argv, "--target")?),
            "--replicates" => {
                let v = next_value(&mut argv, "--replicates")?;
                args.replicates = Some(v.parse().map_err(|_| {
                    CliError::Config(format!("--replicates expects an integer, got '{v}'"))
                })?);
            }
            other => return Err(CliError::Config(format!("unknown flag '{other}'"))),
        }
    }
    Ok(args)
}

fn run(args: Args) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match args.command.as_str() {
        "simulate" => {
            if let Some(seed) = args.seed {
                cfg.rng_seed = seed;
            }
            cmd_simulate(&cfg, &args.out)
        }
        "tune" => {
            let target: TuneTarget = args
                .target
                .as_deref()
                .ok_or_else(|| CliError::Config("tune needs --target".into()))?
                .parse()?;
            cmd_tune(&cfg, target, &args.out).map(|_| ())
        }
        "run" => {
            let filter = args
                .filter
                .as_deref()
                .ok_or_else(|| CliError::Config("run needs --filter".into()))?
                .parse()
                .map_err(CliError::from)?;
            cmd_run(&cfg, filter, &args.out)
        }
        "montecarlo" => {
            if let Some(n) = args.replicates {
                cfg.n_replicates = n;
            }
            if let Some(seed) = args.seed {
                cfg.base_seed = seed;
            }
            cmd_montecarlo(&cfg, &args.out)
        }
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Config(format!("unknown subcommand '{other}'"))),
    }
}

fn main() -> ExitCode {
    let args = match parse_args(std::env::args()) {
        Ok(args) => args,
        Err(e) => {
            eprintln!("{e}");
            eprint!("{USAGE}");
            return ExitCode::from(1);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
