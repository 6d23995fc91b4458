use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::config::{ExperimentConfig, LoadedConfig};
use crate::io::metrics::{CsvSink, CHECKPOINT_FILE, METRICS_FILE};
use crate::trainer::{Checkpoint, Trainer, TrainingSummary};

pub const LOCK_FILE: &str = ".cmarl.lock";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::config(format!(
                "{} is locked by another run (remove {} if that run is dead)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config_path: PathBuf,
    pub config_sha256: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub resumed_from_step: Option<u64>,
    pub status: RunStatus,
    pub topology: String,
    pub config: ExperimentConfig,
    pub summary: Option<TrainingSummary>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Outcome of [`run_experiment`].
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest_path: PathBuf,
    pub manifest: RunManifest,
    pub result: Result<TrainingSummary>,
}

fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Train according to `loaded` and persist everything into `out`.
///
/// Setup problems (lock held, directory already used, bad checkpoint) are
/// returned as `Err`. Once training starts, a manifest is always written and
/// the training result is carried in [`RunOutcome::result`].
pub fn run_experiment(loaded: &LoadedConfig, out: &Path, resume: bool) -> Result<RunOutcome> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let _lock = RunLock::acquire(out)?;
    let config = &loaded.config;
    let built = config.build_environment()?;
    let env = built.as_env();
    let train = config.train_config(env.num_constraints())?;

    let (mut trainer, mut sink, resumed_from_step, manifest_path) = if resume {
        let cpath = out.join(CHECKPOINT_FILE);
        let text = std::fs::read_to_string(&cpath).map_err(|e| Error::io(&cpath, e))?;
        let mut ckpt = Checkpoint::from_json(&text)?;
        let mut expected = train.clone();
        expected.horizon = ckpt.config.horizon;
        if ckpt.config != expected {
            return Err(Error::config(format!(
                "{} was written with a different configuration",
                cpath.display()
            )));
        }
        ckpt.config.horizon = train.horizon;
        let step = ckpt.state.step;
        let trainer = Trainer::resume(env, ckpt)?;
        let sink = CsvSink::resume(out, env.num_agents(), env.num_constraints(), step)?;
        let mpath = out.join(format!("manifest.resume-{step}.json"));
        (trainer, sink, Some(step), mpath)
    } else {
        if out.join(METRICS_FILE).exists() || out.join(MANIFEST_FILE).exists() {
            return Err(Error::config(format!(
                "{} already holds a run; pick a fresh directory or resume",
                out.display()
            )));
        }
        let trainer = Trainer::new(env, train)?;
        let sink = CsvSink::create(out, env.num_agents(), env.num_constraints())?;
        (trainer, sink, None, out.join(MANIFEST_FILE))
    };
    if manifest_path.exists() {
        return Err(Error::config(format!("{} already exists", manifest_path.display())));
    }
    std::fs::write(out.join(RESOLVED_CONFIG_FILE), config.to_json()?)
        .map_err(|e| Error::io(out.join(RESOLVED_CONFIG_FILE), e))?;

    let started_at = now();
    log::info!(
        "training {} agents for {} steps into {}",
        env.num_agents(),
        trainer.config().horizon,
        out.display()
    );
    let result = trainer.run(&mut sink);
    if result.is_ok() && trainer.config().checkpoint_every.is_some() {
        use crate::trainer::TrainSink;
        sink.checkpoint(&trainer.checkpoint())?;
    }
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_path: loaded.path.clone(),
        config_sha256: sha256_hex(&loaded.bytes),
        seed: config.seed,
        started_at,
        finished_at: now(),
        resumed_from_step,
        status: match &result {
            Ok(_) => RunStatus::Completed,
            Err(e) => RunStatus::Failed { message: e.to_string() },
        },
        topology: trainer.topology().kind().to_string(),
        config: config.clone(),
        summary: result.as_ref().ok().cloned(),
    };
    write_new(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(RunOutcome {
        manifest_path,
        manifest,
        result,
    })
}

/// Where a run should write: the command-line choice wins over the file.
pub fn output_dir(config: &ExperimentConfig, cli: Option<&Path>) -> Result<PathBuf> {
    cli.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::config("no output directory: pass one or set output_dir"))
}
