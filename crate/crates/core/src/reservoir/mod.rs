//! Quantized photonic reservoir: weight generation and time stepping.

mod matrices;
mod quantize;
mod sim;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::PRNG_FAMILY;

pub use matrices::{generate_matrices, HyperParams, ReservoirMatrices};
pub use quantize::QuantizerSpec;
pub use sim::{
    input_drive, input_drive_batch, run_reservoir, step_intensity, step_phase, Reservoir,
    ReservoirState, Variant,
};

/// Reservoir spec file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSpec {
    pub variant: Variant,
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub seed: u64,
    #[serde(default)]
    pub quantizer: QuantizerSpec,
    #[serde(default = "default_prng")]
    pub prng: String,
}

fn default_prng() -> String {
    PRNG_FAMILY.to_string()
}

impl ReservoirSpec {
    pub fn params(&self) -> HyperParams {
        HyperParams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            rho: self.rho,
            n: self.n,
            k: self.k,
            seed: self.seed,
        }
    }

    pub fn build(&self) -> Result<Reservoir> {
        if self.prng != PRNG_FAMILY {
            return Err(Error::Config(format!(
                "unsupported PRNG family `{}` (this build provides `{PRNG_FAMILY}`)",
                self.prng
            )));
        }
        if !self.quantizer.is_valid() {
            return Err(Error::Config("quantizers need at least 2 levels".into()));
        }
        Ok(Reservoir {
            matrices: generate_matrices(&self.params())?,
            quantizer: self.quantizer,
            variant: self.variant,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).expect("spec serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
