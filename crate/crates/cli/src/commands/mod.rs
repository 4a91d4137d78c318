pub mod bench;
pub mod eval;
pub mod net_report;
pub mod run;
pub mod simulate;
pub mod train;

use std::path::PathBuf;

use mocap_core::decoder::{io, PoseDecoder};
use mocap_core::{Error, Result};

use crate::config::RunConfig;

/// Validated configuration plus the global flags.
pub struct Context {
    pub config: RunConfig,
    /// Withhold wall-clock measurements from file outputs.
    pub deterministic: bool,
}

impl Context {
    pub fn new(config: RunConfig, deterministic: bool) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, deterministic })
    }

    /// Output directory, created on first use.
    pub fn out_dir(&self) -> Result<PathBuf> {
        let d = self.config.out_dir();
        std::fs::create_dir_all(&d)?;
        Ok(d)
    }

    pub fn load_decoder(&self) -> Result<PoseDecoder> {
        let p = self.config.model_path();
        if !p.exists() {
            return Err(Error::InvalidInput(format!(
                "model {} not found; run train-decoder first or set \"model\"",
                p.display()
            )));
        }
        io::load(&p)
    }
}
