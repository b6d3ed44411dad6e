use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use super::config::ExperimentConfig;
use super::run::{run_comparison, write_outputs, ComparisonReport, ComparisonOutcome};
use super::summary::summarize;
use crate::agent::{QFunction, TrainedAgent};
use crate::environment::save_dataset;
use crate::error::{Error, Result};
use crate::nn::snapshot;
use crate::rng::SeededRng;

#[derive(Parser, Debug)]
#[command(
    name = "ssdrl",
    version,
    about = "Semi-supervised deep Q-learning for RSSI grid localization",
    after_help = "Any config key can be overridden as `--key value` (dashes or underscores)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset CSV.
    GenData(Common),
    /// Train one mode (`--mode supervised|semi_supervised`).
    Train(Common),
    /// Train both modes over all seeds and write the report.
    Compare(Common),
    /// Summarize `<out>/report.csv`.
    Summarize(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        num_args = 0..,
        value_name = "--KEY VALUE"
    )]
    overrides: Vec<String>,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Parse { .. } => Failure::Usage(e.to_string()),
            other => Failure::Run(other),
        }
    }
}

struct Resolved {
    config: ExperimentConfig,
    out: PathBuf,
}

fn resolve(c: Common) -> std::result::Result<Resolved, Failure> {
    let mut seed = c.seed;
    let mut config_path = c.config;
    let mut out = c.out;
    let mut pairs = Vec::new();
    let mut it = c.overrides.into_iter();
    while let Some(flag) = it.next() {
        let Some(body) = flag.strip_prefix("--") else {
            return Err(Failure::Usage(format!("unexpected argument `{flag}`")));
        };
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Failure::Usage(format!("option `--{body}` needs a value")))?;
                (body.to_string(), v)
            }
        };
        match key.as_str() {
            "seed" => seed = Some(value.parse().map_err(|_| Failure::Usage(format!("bad seed `{value}`")))?),
            "config" => config_path = Some(PathBuf::from(value)),
            "out" => out = Some(PathBuf::from(value)),
            _ => pairs.push((key, value)),
        }
    }
    let mut config = match &config_path {
        Some(p) => {
            if !p.exists() {
                return Err(Failure::Run(Error::invalid(format!(
                    "config file not found: {}",
                    p.display()
                ))));
            }
            ExperimentConfig::from_file(p)?
        }
        None => ExperimentConfig::default(),
    };
    for (k, v) in &pairs {
        config.set(k, v).map_err(|e| match e {
            Error::Config { ref message, .. } if message == "unknown key" => {
                Failure::Usage(format!("unknown option `--{k}`"))
            }
            other => other.into(),
        })?;
    }
    if let Some(s) = seed {
        config.seeds = vec![s];
    }
    config.validate()?;
    Ok(Resolved {
        config,
        out: out.unwrap_or_else(|| PathBuf::from("out")),
    })
}

fn gen_data(r: Resolved) -> Result<()> {
    let world = r.config.world()?;
    let seed = r.config.seeds[0];
    let data = world.generate_dataset(
        r.config.labeled_per_cell,
        r.config.unlabeled,
        &mut SeededRng::new(seed).fork(100),
    )?;
    let path = if r.out.extension().is_some_and(|e| e == "csv") {
        if let Some(parent) = r.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        r.out
    } else {
        fs::create_dir_all(&r.out).map_err(|e| Error::io(&r.out, e))?;
        r.out.join("dataset.csv")
    };
    save_dataset(&path, &data)?;
    println!("wrote {} bundles to {}", data.len(), path.display());
    Ok(())
}

fn save_agent(dir: &Path, agent: &TrainedAgent) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match &agent.q {
        QFunction::Plain(net) => snapshot::save(net, dir.join("q.bdrl"))?,
        QFunction::Encoded { encoder, head, .. } => {
            snapshot::save(head, dir.join("q_head.bdrl"))?;
            snapshot::save(encoder, dir.join("q_encoder.bdrl"))?;
        }
    }
    if let Some(v) = &agent.vae {
        v.save(dir.join("vae"))?;
    }
    Ok(())
}

fn finish(r: &Resolved, outcome: &ComparisonOutcome) -> Result<bool> {
    write_outputs(&r.out, &r.config, outcome)?;
    if !outcome.report.rows.is_empty() {
        let s = summarize(&outcome.report.rows)?;
        let p = r.out.join("summary.csv");
        fs::write(&p, s.to_csv()).map_err(|e| Error::io(&p, e))?;
        print!("{}", s.table());
    }
    for f in &outcome.failures {
        eprintln!("error: {} seed {} failed: {}", f.mode, f.seed, f.message);
    }
    Ok(outcome.failures.is_empty())
}

fn run(command: Command) -> std::result::Result<bool, Failure> {
    match command {
        Command::GenData(c) => {
            gen_data(resolve(c)?)?;
            Ok(true)
        }
        Command::Train(c) => {
            let r = resolve(c)?;
            if r.config.modes.len() != 1 {
                return Err(Failure::Usage(
                    "config error for key `mode`: train runs a single mode; pass --mode supervised or --mode semi_supervised"
                        .into(),
                ));
            }
            let outcome = run_comparison(&r.config)?;
            for cell in &outcome.cells {
                save_agent(&r.out.join(format!("model_{}_{}", cell.mode, cell.seed)), &cell.agent)?;
            }
            Ok(finish(&r, &outcome)?)
        }
        Command::Compare(c) => {
            let r = resolve(c)?;
            let outcome = run_comparison(&r.config)?;
            Ok(finish(&r, &outcome)?)
        }
        Command::Summarize(c) => {
            let r = resolve(c)?;
            let report = ComparisonReport::load(r.out.join("report.csv"))?;
            let s = summarize(&report.rows)?;
            let p = r.out.join("summary.csv");
            fs::write(&p, s.to_csv()).map_err(|e| Error::io(&p, e))?;
            print!("{}", s.table());
            Ok(true)
        }
    }
}

/// Entry point behind the `ssdrl` binary. Returns the process exit code:
/// 0 on success, 1 when a run fails, 2 for usage or configuration errors.
pub fn cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(args) {
        Ok(p) => p,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(parsed.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            eprintln!("{}", Cli::command().render_usage());
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}
