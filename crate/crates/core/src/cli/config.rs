use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetSchema, LoadOptions};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, Grid};
use crate::model::HyperParams;
use crate::synth::SynthConfig;

pub const SEED_ENV: &str = "MVKM_SEED";
pub const DEFAULT_SEED: u64 = 0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// View registry for CSV input; overrides any `<path>.schema.json` sidecar.
    pub schema: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub folds: usize,
    pub prefix_fraction: f64,
    /// Methods evaluated by `eval`, in report order.
    pub ablations: Vec<String>,
    /// Name of the graded view to predict; the first graded view when absent.
    pub target_view: Option<String>,
    pub jobs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        Self {
            folds: d.folds,
            prefix_fraction: d.prefix_fraction,
            ablations: ["full", "base", "no-penalty", "avg"].map(String::from).to_vec(),
            target_view: None,
            jobs: d.jobs,
        }
    }
}

/// File configuration, one section per module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub hyper: HyperParams,
    pub eval: EvalSection,
    pub grid: Grid,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Propagates one seed into every module section.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.synth.seed = seed;
        self.hyper.seed = seed;
    }

    /// Evaluation protocol for `ds`, resolving the target view by name.
    pub fn eval_config(&self, ds: &crate::data::Dataset) -> Result<EvalConfig> {
        let target_view = match &self.eval.target_view {
            Some(name) => Some(
                ds.views()
                    .iter()
                    .position(|v| &v.name == name)
                    .ok_or_else(|| Error::Config(format!("no view named {name:?}")))?,
            ),
            None => None,
        };
        Ok(EvalConfig {
            folds: self.eval.folds,
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            target_view,
            prefix_fraction: self.eval.prefix_fraction,
            jobs: self.eval.jobs.max(1),
        })
    }

    pub fn load_options(&self) -> Result<LoadOptions> {
        let schema = match &self.data.schema {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let s: DatasetSchema =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Some(s)
            }
            None => None,
        };
        Ok(LoadOptions { schema })
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Flag,
    Config,
    Env,
    Default,
}

/// `--seed`, then the config file, then `MVKM_SEED`, then [`DEFAULT_SEED`].
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<(u64, SeedSource)> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    if let Some(s) = config {
        return Ok((s, SeedSource::Config));
    }
    if let Some(raw) = env {
        let s = raw
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        return Ok((s, SeedSource::Env));
    }
    Ok((DEFAULT_SEED, SeedSource::Default))
}

/// Provenance written next to each output as `<output>.manifest.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub seed_source: SeedSource,
    pub config_sha256: String,
    pub config: RunConfig,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub wall_time_secs: f64,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub(crate) struct RunContext {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub seed_source: SeedSource,
    pub config: RunConfig,
    pub inputs: Vec<PathBuf>,
}

impl RunContext {
    pub fn write_manifest(&self, output: &Path, elapsed: Duration) -> Result<()> {
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            argv: self.argv.clone(),
            seed: self.seed,
            seed_source: self.seed_source,
            config_sha256: self.config.hash(),
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            output: output.to_path_buf(),
            wall_time_secs: elapsed.as_secs_f64(),
        };
        crate::data::write_json_file(&manifest_path(output), &m)
    }
}
