//! Command-line front end: `delaycast <simulate|fit|nowcast|diagnose|backtest>`.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "delaycast", version, about = "Nowcasting from daily reporting triangles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic portfolio.
    Simulate(Flags),
    /// Fit one model at the evaluation date.
    Fit(Flags),
    /// Fit and write grouped IBNR nowcasts with prediction intervals.
    Nowcast(Flags),
    /// AICcd, standard errors and the largest Cook's distances.
    Diagnose(Flags),
    /// Moving-window out-of-time evaluation.
    Backtest(Flags),
}

/// Flags shared by all subcommands; each overrides the matching config key.
#[derive(Debug, Clone, Args)]
pub struct Flags {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub eval_date: Option<NaiveDate>,
    /// Model spec, or a comma-separated list (or `all`) for backtests.
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long)]
    pub specs: Option<String>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long)]
    pub simultaneous: bool,
    #[arg(long)]
    pub censoring: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub from: Option<NaiveDate>,
    #[arg(long)]
    pub to: Option<NaiveDate>,
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long)]
    pub top: Option<usize>,
}

impl Flags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.eval_date {
            cfg.eval_date = Some(v);
        }
        if let Some(v) = &self.spec {
            cfg.spec = Some(v.clone());
        }
        if let Some(v) = &self.specs {
            cfg.backtest.specs = Some(v.clone());
        }
        if let Some(v) = self.level {
            cfg.options.level = v;
        }
        if let Some(v) = &self.group {
            cfg.options.group = v.clone();
        }
        if self.simultaneous {
            cfg.options.simultaneous = true;
        }
        if self.censoring {
            cfg.options.censoring = true;
        }
        if let Some(v) = self.seed {
            cfg.options.seed = Some(v);
        }
        if let Some(v) = self.workers {
            cfg.options.workers = v;
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = self.from {
            cfg.backtest.from = Some(v);
        }
        if let Some(v) = self.to {
            cfg.backtest.to = Some(v);
        }
        if let Some(v) = self.step {
            cfg.backtest.step = Some(v);
        }
        if let Some(v) = self.top {
            cfg.options.top = v;
        }
    }
}

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2.
    Config(ConfigError),
    /// Exit 3.
    Fit(crate::Error),
    /// Exit 1.
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Fit(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Fit(e) => write!(f, "fit failed: {e}"),
            CliError::Other(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

/// Parse arguments, run the subcommand and return the process exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("DELAYCAST_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    let (name, flags) = match &cli.command {
        Command::Simulate(f) => ("simulate", f),
        Command::Fit(f) => ("fit", f),
        Command::Nowcast(f) => ("nowcast", f),
        Command::Diagnose(f) => ("diagnose", f),
        Command::Backtest(f) => ("backtest", f),
    };
    let mut cfg = RunConfig::load(&flags.config)?;
    flags.apply(&mut cfg);
    cfg.validate()?;
    let ctx = commands::Context::new(name, cfg)?;
    match cli.command {
        Command::Simulate(_) => commands::simulate(&ctx),
        Command::Fit(_) => commands::fit(&ctx),
        Command::Nowcast(_) => commands::nowcast(&ctx),
        Command::Diagnose(_) => commands::diagnose(&ctx),
        Command::Backtest(_) => commands::backtest(&ctx),
    }
}
