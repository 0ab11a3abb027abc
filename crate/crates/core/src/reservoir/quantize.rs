//! Phase (SLM) and intensity (camera) quantizers.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantizerSpec {
    /// Uniform levels over one `2*pi` phase period.
    pub phase_levels: u32,
    /// Levels over `[0, 1]`, both ends included.
    pub intensity_levels: u32,
}

impl Default for QuantizerSpec {
    fn default() -> Self {
        QuantizerSpec {
            phase_levels: 256,
            intensity_levels: 1024,
        }
    }
}

impl QuantizerSpec {
    pub fn is_valid(&self) -> bool {
        self.phase_levels >= 2 && self.intensity_levels >= 2
    }

    pub fn phase_step(&self) -> f64 {
        TAU / self.phase_levels as f64
    }

    /// Index of the largest grid phase `k * step` not above `phi mod 2*pi`.
    ///
    /// The comparison is made against the grid values themselves, so any
    /// grid point maps to its own level and quantization is idempotent.
    pub fn phase_level(&self, phi: f64) -> u32 {
        let levels = self.phase_levels;
        let step = self.phase_step();
        let m = phi.rem_euclid(TAU);
        let mut k = ((m * levels as f64 / TAU).floor().max(0.0) as u64).min(levels as u64 - 1) as u32;
        while k + 1 < levels && (k + 1) as f64 * step <= m {
            k += 1;
        }
        while k > 0 && k as f64 * step > m {
            k -= 1;
        }
        k
    }

    /// Floor quantization of a phase onto the wrapped grid.
    pub fn phase(&self, phi: f64) -> f64 {
        self.phase_level(phi) as f64 * self.phase_step()
    }

    pub fn intensity_level(&self, y: f64) -> u32 {
        let top = (self.intensity_levels - 1) as f64;
        let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, 1.0) };
        (top * y + 0.5).floor() as u32
    }

    /// Clamp to `[0, 1]`, round to the nearest level.
    pub fn intensity(&self, y: f64) -> f64 {
        self.intensity_level(y) as f64 / (self.intensity_levels - 1) as f64
    }

    /// `q_I(sin^2(q_phi(phi)))`, the nonlinearity of the intensity-state model.
    pub fn intensity_nonlinearity(&self, phi: f64) -> f64 {
        let s = self.phase(phi).sin();
        self.intensity(s * s)
    }

    /// `q_I(sin^2(x))`, the camera response to an already quantized phase.
    pub fn phase_readout(&self, x: f64) -> f64 {
        let s = x.sin();
        self.intensity(s * s)
    }
}
