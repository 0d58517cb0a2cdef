//! Versioned JSON snapshot of a trained run: the frozen MLP, the
//! persistent analytic state, and the config and seed that produced them.
//! Floats round-trip bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adir::AdirState;
use crate::backbone::MlpParams;
use crate::config::Config;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub config: Config,
    pub backbone: MlpParams,
    pub adir: Option<AdirState>,
}

impl Checkpoint {
    pub fn new(config: &Config, backbone: MlpParams, adir: Option<AdirState>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            seed: config.run.seed,
            config: config.clone(),
            backbone,
            adir,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
