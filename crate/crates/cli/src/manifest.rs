//! Run manifests and the exit-code contract.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use facetsep::error::Error;
use serde_json::{json, Value};

pub const MANIFEST: &str = "manifest.json";

/// Why a command stopped. Bad flags or unreadable input exit with 2, a
/// pipeline that ran and failed exits with 3.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Algorithm(Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Algorithm(_) => 3,
        }
    }

    pub fn report(&self) {
        match self {
            Failure::Input(e) => eprintln!("error: {e:#}"),
            Failure::Algorithm(e) => {
                eprintln!("error: {e}");
                if let Some(step) = e.step() {
                    eprintln!("failed at {step}");
                }
            }
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Input(e) => format!("{e:#}"),
            Failure::Algorithm(e) => e.to_string(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.into())
    }
}

/// Everything recorded about one invocation.
pub struct Run {
    subcommand: &'static str,
    out_dir: PathBuf,
    started: Instant,
    pub params: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Arguments that reproduce this run, minus `--out-dir`.
    pub replay: Vec<String>,
}

impl Run {
    pub fn start(subcommand: &'static str, out_dir: &Path) -> Self {
        Run {
            subcommand,
            out_dir: out_dir.to_owned(),
            started: Instant::now(),
            params: Value::Null,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            replay: vec![subcommand.to_string()],
        }
    }

    pub fn output(&mut self, name: &str) -> PathBuf {
        let path = self.out_dir.join(name);
        self.outputs.push(path.clone());
        path
    }

    pub fn input(&mut self, path: &Path) -> PathBuf {
        let abs = std::path::absolute(path).unwrap_or_else(|_| path.to_owned());
        self.inputs.push(abs.clone());
        abs
    }

    pub fn arg(&mut self, flag: &str, value: impl ToString) {
        self.replay.push(format!("--{flag}"));
        self.replay.push(value.to_string());
    }

    pub fn finish(self, outcome: &Result<(), Failure>) -> anyhow::Result<()> {
        let (status, error) = match outcome {
            Ok(()) => ("ok", None),
            Err(f) => (if f.exit_code() == 3 { "algorithm-failure" } else { "input-error" }, Some(f.message())),
        };
        let manifest = json!({
            "subcommand": self.subcommand,
            "params": self.params,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "duration_s": self.started.elapsed().as_secs_f64(),
            "outcome": status,
            "error": error,
            "replay": self.replay,
        });
        let path = self.out_dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
