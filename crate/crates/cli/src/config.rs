//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid
//! by command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use gridmask_core::TrainingConfig;
use serde::{Deserialize, Serialize};

/// Layout of a config file. Every key is optional; `training` holds any
/// subset of the training fields (nested tables for `hyper` and `epsilon`).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub feeder: Option<String>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub training: toml::Table,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.training.contains_key("seed") {
            bail!("{}: seed belongs at the top level, not under [training]", path.display());
        }
        Ok(cfg)
    }
}

/// Fully resolved configuration. `seed` is `None` only until validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub feeder: String,
    pub seed: Option<u64>,
    pub training: TrainingConfig,
}

#[derive(Serialize)]
struct Emitted<'a> {
    feeder: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    training: toml::Table,
}

impl RunConfig {
    /// Defaults overlaid with the file's values.
    pub fn from_file(file: Option<FileConfig>) -> Result<Self> {
        let file = file.unwrap_or_default();
        let mut table = training_table(&TrainingConfig::default())?;
        merge(&mut table, file.training);
        let training: TrainingConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid [training] section")?;
        Ok(Self {
            feeder: file.feeder.unwrap_or_else(|| "ieee13".into()),
            seed: file.seed,
            training,
        })
    }

    /// Final training config with the seed applied.
    pub fn resolved_training(&self) -> Result<TrainingConfig> {
        let Some(seed) = self.seed else {
            bail!("a seed is required: pass --seed or set `seed` in the config file");
        };
        let cfg = TrainingConfig {
            seed,
            ..self.training.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        let e = Emitted {
            feeder: &self.feeder,
            seed: self.seed,
            training: training_table(&self.training)?,
        };
        let mut s = String::new();
        if self.seed.is_none() {
            s.push_str("# seed = <required>\n");
        }
        s.push_str(&toml::to_string(&e)?);
        Ok(s)
    }
}

fn training_table(cfg: &TrainingConfig) -> Result<toml::Table> {
    let mut t = toml::Table::try_from(cfg).context("serializing training config")?;
    t.remove("seed");
    Ok(t)
}

/// Recursive overlay of `over` onto `base`; nested tables merge key by key.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
