//! Command-line driver for the `mono3d-core` experiments.
//!
//! Every subcommand writes one CSV table (header row, nine significant
//! digits) and prints a short summary. Parameters come from flags, from a
//! JSON file given with `--config`, or from built-in defaults, in that order.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::Value;

mod commands;
mod errors;
pub mod format;

pub use commands::{ConvergenceArgs, DepthArgs, EquivarianceArgs, GiouArgs, NmsArgs};
pub use errors::CliError;

/// Directory used for outputs when neither `--out` nor `output_path` is set.
pub const OUT_DIR_ENV: &str = "MONO3D_OUT_DIR";
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(name = "mono3d", version, about = "Monocular 3D detection experiments")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON file with `command`, `seed`, `output_path` and command parameters.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Classical NMS, Soft-NMS and GrooMeD-NMS rescores of one box set.
    NmsCompare(NmsArgs),
    /// Gradient variances of L1, L2 and dice losses and simulated SGD deviation.
    ConvergenceSim(ConvergenceArgs),
    /// Mean depth error of ground, regressed and merged depth versus camera height change.
    DepthTrend(DepthArgs),
    /// Scale-equivariance error of an SES layer and a single-scale layer.
    EquivarianceCheck(EquivarianceArgs),
    /// IoU2D, IoU3D, gIoU3D and voxel IoU3D of box pairs.
    GiouTable(GiouArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::NmsCompare(_) => "nms-compare",
            Command::ConvergenceSim(_) => "convergence-sim",
            Command::DepthTrend(_) => "depth-trend",
            Command::EquivarianceCheck(_) => "equivariance-check",
            Command::GiouTable(_) => "giou-table",
        }
    }

    fn merge_file(self, params: Value) -> Result<Self, CliError> {
        Ok(match self {
            Command::NmsCompare(a) => Command::NmsCompare(a.merge(parse_params(params)?)),
            Command::ConvergenceSim(a) => Command::ConvergenceSim(a.merge(parse_params(params)?)),
            Command::DepthTrend(a) => Command::DepthTrend(a.merge(parse_params(params)?)),
            Command::EquivarianceCheck(a) => Command::EquivarianceCheck(a.merge(parse_params(params)?)),
            Command::GiouTable(a) => Command::GiouTable(a.merge(parse_params(params)?)),
        })
    }

    fn from_name(name: &str) -> Result<Self, CliError> {
        Ok(match name {
            "nms-compare" => Command::NmsCompare(Default::default()),
            "convergence-sim" => Command::ConvergenceSim(Default::default()),
            "depth-trend" => Command::DepthTrend(Default::default()),
            "equivariance-check" => Command::EquivarianceCheck(Default::default()),
            "giou-table" => Command::GiouTable(Default::default()),
            other => return Err(CliError::Usage(format!("unknown command `{other}`"))),
        })
    }
}

/// Fully resolved invocation.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub command: Command,
    pub seed: u64,
    pub output_path: PathBuf,
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: String,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Default)]
struct FileConfig {
    command: Option<String>,
    seed: Option<u64>,
    output_path: Option<PathBuf>,
    params: Value,
}

fn read_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| {
        CliError::Input(format!(
            "{}: malformed JSON at line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    let Value::Object(mut map) = value else {
        return Err(CliError::Input(format!("{}: config must be a JSON object", path.display())));
    };
    let bad = |field: &str| CliError::Input(format!("{}: `{field}` has the wrong type", path.display()));
    let command = match map.remove("command") {
        None => None,
        Some(Value::String(s)) => Some(s),
        Some(_) => return Err(bad("command")),
    };
    let seed = match map.remove("seed") {
        None => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| bad("seed"))?),
    };
    let output_path = match map.remove("output_path") {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => return Err(bad("output_path")),
    };
    Ok(FileConfig {
        command,
        seed,
        output_path,
        params: Value::Object(map),
    })
}

fn parse_params<T: DeserializeOwned>(params: Value) -> Result<T, CliError> {
    serde_json::from_value(params).map_err(|e| CliError::Input(format!("config parameters: {e}")))
}

/// Combines flags, the optional config file and defaults.
pub fn resolve(cli: Cli) -> Result<Experiment, CliError> {
    let file = match &cli.config {
        Some(path) => read_config(path)?,
        None => FileConfig {
            params: Value::Object(Default::default()),
            ..Default::default()
        },
    };
    let command = match (cli.command, &file.command) {
        (Some(c), Some(name)) if c.name() != name => {
            return Err(CliError::Usage(format!(
                "config is for `{name}` but `{}` was requested",
                c.name()
            )))
        }
        (Some(c), _) => c,
        (None, Some(name)) => Command::from_name(name)?,
        (None, None) => return Err(CliError::Usage("no command given; see --help".into())),
    };
    let command = command.merge_file(file.params)?;
    let output_path = cli
        .out
        .or(file.output_path)
        .unwrap_or_else(|| default_output(command.name()));
    Ok(Experiment {
        seed: cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        command,
        output_path,
    })
}

fn default_output(name: &str) -> PathBuf {
    let file = format!("{name}.csv");
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(file),
        _ => PathBuf::from(file),
    }
}

pub fn run(exp: &Experiment) -> Result<Outcome, CliError> {
    match &exp.command {
        Command::NmsCompare(a) => commands::nms_compare(a, exp),
        Command::ConvergenceSim(a) => commands::convergence_sim(a, exp),
        Command::DepthTrend(a) => commands::depth_trend(a, exp),
        Command::EquivarianceCheck(a) => commands::equivariance_check(a, exp),
        Command::GiouTable(a) => commands::giou_table(a, exp),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { CliError::USAGE } else { 0 };
        }
    };
    match resolve(cli).and_then(|exp| run(&exp)) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
