use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use parc_core::io::config::valid_keys;
use parc_core::io::Config;
use parc_core::{Error, Result};

mod commands;
mod render;
mod report;

/// Data generation, training, rollout and evaluation for PARC-style surrogates.
///
/// Every subcommand resolves a configuration from the built-in defaults, an
/// optional `--config` file and trailing `key=value` overrides, then writes
/// its outputs and the resolved `config.txt` into `--out`.
#[derive(Parser, Debug)]
#[command(name = "parc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file of `key=value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for outputs.
    #[arg(long)]
    out: PathBuf,
    /// `key=value` overrides; keys without a dot take the subcommand's namespace.
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Burgers DNS sweep over the `sweep.*` parameter grid.
    GenBurgers(Common),
    /// Manufactured uniformly decaying flow with its forcing term.
    GenMms(Common),
    /// Analytic Taylor-Green vortex with pressure.
    GenTaylorGreen(Common),
    /// Convert a raster dump described by a descriptor file.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Descriptor file.
        #[arg(long)]
        input: PathBuf,
    },
    /// Train the differentiator (stage 1) or the integral correction (stage 2).
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory or manifest.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to start from; required for stage 2.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Autoregressive prediction from each trajectory's first snapshot.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Metrics table comparing predicted and reference datasets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// CSV tables, frame renders and loss curves from run directories.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directories to collect from (metrics.csv, manifest.txt, loss_stage*.csv).
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenBurgers(c) | Command::GenMms(c) | Command::GenTaylorGreen(c) => c,
            Command::Ingest { common, .. }
            | Command::Train { common, .. }
            | Command::Rollout { common, .. }
            | Command::Eval { common, .. }
            | Command::Report { common, .. } => common,
        }
    }

    fn namespaces(&self) -> &'static [&'static str] {
        match self {
            Command::GenBurgers(_) => &["dns", "sweep"],
            Command::GenMms(_) => &["mms"],
            Command::GenTaylorGreen(_) => &["taylor_green"],
            Command::Ingest { .. } => &[],
            Command::Train { .. } => &["train", "model"],
            Command::Rollout { .. } => &["rollout"],
            Command::Eval { .. } => &["eval"],
            Command::Report { .. } => &["report"],
        }
    }
}

/// Expands a bare key into the first namespace that registers it.
fn qualify(key: &str, namespaces: &[&str]) -> String {
    if key.contains('.') {
        return key.to_string();
    }
    let keys = valid_keys();
    namespaces
        .iter()
        .map(|ns| format!("{ns}.{key}"))
        .find(|k| keys.contains(&k.as_str()))
        .unwrap_or_else(|| key.to_string())
}

fn resolve_config(common: &Common, namespaces: &[&str]) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(p) => Config::read(p)?,
        None => Config::default(),
    };
    for item in &common.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("override {item:?} is not key=value")))?;
        cfg.set(&qualify(k.trim(), namespaces), v.trim())?;
    }
    Ok(cfg)
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(cli: Cli) -> Result<()> {
    let cmd = cli.command;
    let common = cmd.common();
    let cfg = resolve_config(common, cmd.namespaces())?;
    let out = common.out.as_path();
    create_dir(out)?;
    cfg.write(&out.join("config.txt"))?;
    match &cmd {
        Command::GenBurgers(_) => commands::gen_burgers(&cfg, out),
        Command::GenMms(_) => commands::gen_mms(&cfg, out),
        Command::GenTaylorGreen(_) => commands::gen_taylor_green(&cfg, out),
        Command::Ingest { input, .. } => commands::ingest(input, out),
        Command::Train { data, init, .. } => commands::train(&cfg, out, data, init.as_deref()),
        Command::Rollout { checkpoint, data, .. } => commands::rollout(&cfg, out, checkpoint, data),
        Command::Eval { pred, truth, .. } => commands::eval(&cfg, out, pred, truth),
        Command::Report { run, .. } => report::report(&cfg, out, run),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_keys_take_the_first_matching_namespace() {
        assert_eq!(qualify("stage", &["train", "model"]), "train.stage");
        assert_eq!(qualify("seed", &["train", "model"]), "train.seed");
        assert_eq!(qualify("diffusivity", &["train", "model"]), "model.diffusivity");
        assert_eq!(qualify("r", &["dns", "sweep"]), "sweep.r");
        assert_eq!(qualify("eval.rho", &["train"]), "eval.rho");
        assert_eq!(qualify("bogus", &["train"]), "bogus");
    }
}
