//! Run configuration file and run-directory artifacts.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::baselines::DasConfig;
use crate::cases;
use crate::env::{make_profiles, EnvConfig, TimeSeries};
use crate::error::{Error, Result};
use crate::grid::{load_case, GridCase};
use crate::model::ModelConfig;
use crate::planner::PlannerConfig;
use crate::training::{TrainConfig, TrainSetup};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    /// Model initialization, self-play and sampling.
    pub run: u64,
    /// Synthetic profiles when no series file is given.
    pub profiles: u64,
    /// One evaluation episode per seed.
    pub eval: Vec<u64>,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            run: 0,
            profiles: 7,
            eval: (1000..1010).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    /// Bundled case name or path to a case JSON file.
    pub case: String,
    /// Time-series CSV; synthetic profiles when absent.
    pub series: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            case: "six_bus".into(),
            series: None,
            out: PathBuf::from("runs/latest"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub days: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { days: 14 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub planner: PlannerConfig,
    pub training: TrainConfig,
    pub baseline: DasConfig,
    pub profiles: ProfileConfig,
    pub paths: PathConfig,
    pub seeds: SeedConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.model.validate()?;
        self.planner.validate()?;
        self.training.validate()?;
        if self.profiles.days == 0 {
            return Err(Error::Config("profiles.days must be positive".into()));
        }
        if self.seeds.eval.is_empty() {
            return Err(Error::Config("seeds.eval must not be empty".into()));
        }
        Ok(())
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    pub fn case(&self) -> Result<GridCase> {
        match cases::by_name(&self.paths.case) {
            Some(c) => Ok(c),
            None => load_case(&self.paths.case),
        }
    }

    pub fn series(&self, case: &GridCase) -> Result<TimeSeries> {
        let series = match &self.paths.series {
            Some(p) => TimeSeries::read_csv(p)?,
            None => make_profiles(case, self.seeds.profiles, self.profiles.days),
        };
        series.validate(case)?;
        Ok(series)
    }

    pub fn train_setup(&self) -> Result<TrainSetup> {
        let case = self.case()?;
        let series = self.series(&case)?;
        Ok(TrainSetup {
            case: Arc::new(case),
            series: Arc::new(series),
            env: self.env.clone(),
            model: self.model.clone(),
            planner: self.planner.clone(),
            train: self.training.clone(),
            seed: self.seeds.run,
            echo: self.echo(),
        })
    }
}

/// Contents of `manifest.json` in every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub start_time_unix: u64,
    pub seeds: SeedConfig,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, args: Vec<String>, cfg: &RunConfig) -> Self {
        Manifest {
            version: format!("gridlab {}", env!("CARGO_PKG_VERSION")),
            command: command.into(),
            args,
            start_time_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            seeds: cfg.seeds.clone(),
            config: cfg.echo(),
        }
    }
}

/// Create `dir` and write `manifest.json` and `config.toml` into it.
pub fn write_run_artifacts(dir: &Path, manifest: &Manifest, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&m, text).map_err(|e| Error::io(&m, e))?;
    let c = dir.join("config.toml");
    std::fs::write(&c, cfg.to_toml()).map_err(|e| Error::io(&c, e))
}
