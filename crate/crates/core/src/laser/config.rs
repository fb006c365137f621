use serde::{Deserialize, Serialize};

use super::params::{BiasMap, LaserParams, SolverConfig};
use super::rate::relaxation_frequency;
use super::simulate::simulate_large_signal;
use crate::error::Result;

/// Everything needed to run the ground-truth channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserConfig {
    pub params: LaserParams,
    pub bias: BiasMap,
    pub solver: SolverConfig,
}

impl Default for LaserConfig {
    fn default() -> Self {
        let params = LaserParams::reference();
        LaserConfig {
            params,
            bias: BiasMap::default_for(&params),
            solver: SolverConfig::default(),
        }
    }
}

impl LaserConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.bias.validate()?;
        self.solver.validate()
    }

    pub fn relaxation_frequency(&self) -> Result<f64> {
        relaxation_frequency(&self.params, self.bias.i_bias)
    }

    pub fn simulate(&self, drive: &[f64], f_s: f64) -> Result<Vec<f64>> {
        simulate_large_signal(drive, f_s, &self.bias, &self.params, &self.solver)
    }
}
