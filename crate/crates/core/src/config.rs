//! Run configuration file.
//!
//! TOML with `[model]`, `[model.spm]`, `[train]` and `[data]` sections. Every
//! key is optional; an empty file yields the reference configuration.
//!
//! ```toml
//! [model]
//! hidden = 32
//! heads = 4
//! mode = "dsig_only"
//!
//! [model.spm]
//! frames = 64
//!
//! [train]
//! epochs = 10
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::skeleton::{builtin_part_map, BodyPartMap};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Joints per skeleton; selects the built-in part map when no partition
    /// file is given.
    pub joints: Option<usize>,
    /// Partition file with one `<part>: i, j, ...` line per body part.
    pub partition: Option<PathBuf>,
}

impl DataConfig {
    /// Part map for samples with `joints` joints.
    pub fn part_map(&self, joints: usize) -> Result<BodyPartMap> {
        if let Some(expected) = self.joints.filter(|&j| j != joints) {
            return Err(Error::Config(format!("data has {joints} joints, configuration says {expected}")));
        }
        let map = match &self.partition {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                BodyPartMap::parse_config(&text)?
            }
            None => builtin_part_map(joints)?,
        };
        if map.joints() != joints {
            return Err(Error::Config(format!("part map covers {} joints, data has {joints}", map.joints())));
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::parse(line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Every field written out, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
