//! Command implementations behind the `godnf` binary. Every command reads an
//! optional JSON config, validates it fully, computes its results in memory
//! and only then writes its artifacts, each one atomically.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use godnf_core::Error as CoreError;
use serde::de::DeserializeOwned;

pub mod commands;
pub mod config;

#[derive(Debug, Parser)]
#[command(
    name = "godnf",
    version,
    about = "Opinion-dynamics graph diffusion experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the diffusion update and export the trajectory.
    Diffuse(Common),
    /// Train node classification on a graph (an SBM by default).
    TrainNc(Common),
    /// Simulate activation probabilities and train influence regression.
    TrainIe(Common),
    /// Monte Carlo IC / LT / SIS activation probabilities.
    Simulate(Common),
    /// Single, multi and individualized consensus on a community graph.
    ConsensusDemo(Common),
    /// Per-step timing over graphs of doubling size.
    Bench(Common),
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Diffuse(c)
            | Command::TrainNc(c)
            | Command::TrainIe(c)
            | Command::Simulate(c)
            | Command::ConsensusDemo(c)
            | Command::Bench(c) => c,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct Common {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Divergence(String),
    Check(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Check(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Divergence(m) => write!(f, "divergence: {m}"),
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Divergence { .. } | CoreError::TrainingDiverged { .. } => {
                CliError::Divergence(e.to_string())
            }
            CoreError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `path` as JSON, or returns the default config when absent.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = read_input(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Named artifacts produced by a command, written once the command succeeds.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    pub fn json(&mut self, name: &str, value: &impl serde::Serialize) -> CliResult<()> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.add(name, text);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    /// Writes each file to a temporary sibling and renames it into place.
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let io = |p: &Path, e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()));
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for (name, bytes) in &self.files {
            let target = dir.join(name);
            let tmp = dir.join(format!(".{name}.tmp"));
            fs::write(&tmp, bytes).map_err(|e| io(&tmp, e))?;
            fs::rename(&tmp, &target).map_err(|e| io(&target, e))?;
        }
        Ok(())
    }
}

/// Outcome of a command: artifacts to write plus a failure that should be
/// reported after writing them (a consensus mismatch still leaves its
/// report behind).
pub struct Outcome {
    pub artifacts: Artifacts,
    pub failure: Option<CliError>,
}

impl From<Artifacts> for Outcome {
    fn from(artifacts: Artifacts) -> Self {
        Outcome {
            artifacts,
            failure: None,
        }
    }
}

pub fn execute(command: &Command) -> CliResult<Outcome> {
    let common = command.common();
    let path = common.config.as_deref();
    match command {
        Command::Diffuse(_) => commands::diffuse(&overridden(load_config(path)?, common.seed)),
        Command::TrainNc(_) => commands::train_nc(&overridden(load_config(path)?, common.seed)),
        Command::TrainIe(_) => commands::train_ie(&overridden(load_config(path)?, common.seed)),
        Command::Simulate(_) => commands::simulate(&overridden(load_config(path)?, common.seed)),
        Command::ConsensusDemo(_) => {
            commands::consensus_demo(&overridden(load_config(path)?, common.seed))
        }
        Command::Bench(_) => commands::bench(&overridden(load_config(path)?, common.seed)),
    }
}

fn overridden<T: config::Seeded>(mut cfg: T, seed: Option<u64>) -> T {
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    cfg
}

/// Full command-line entry point; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let common = cli.command.common();
    if let Some(threads) = common.threads {
        if threads == 0 {
            eprintln!("config error: --threads must be >= 1");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("i/o error: {e}");
            return 1;
        }
    }
    let outcome = match execute(&cli.command) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    if let Err(e) = outcome.artifacts.write(&common.out) {
        eprintln!("{e}");
        return e.exit_code();
    }
    for name in outcome.artifacts.names() {
        println!("wrote {}", common.out.join(name).display());
    }
    match outcome.failure {
        Some(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
        None => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let code = |e: CoreError| CliError::from(e).exit_code();
        assert_eq!(code(CoreError::Divergence { step: 3 }), 3);
        assert_eq!(
            code(CoreError::TrainingDiverged {
                epoch: 1,
                reason: "nan".into()
            }),
            3
        );
        assert_eq!(code(CoreError::invalid("alpha", "bad")), 2);
        assert_eq!(CliError::Check("x".into()).exit_code(), 4);
    }

    #[test]
    fn empty_json_gives_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, "{}").unwrap();
        let cfg: config::DiffuseConfig = load_config(Some(&p)).unwrap();
        assert_eq!(cfg, config::DiffuseConfig::default());
    }

    #[test]
    fn artifacts_are_written_by_rename() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::default();
        a.add("x.csv", "a,b\n");
        a.write(&dir.path().join("nested")).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join("nested/x.csv")).unwrap(),
            "a,b\n"
        );
        assert!(!dir.path().join("nested/.x.csv.tmp").exists());
    }
}
