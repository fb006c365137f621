use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the single-mode rate equations (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserParams {
    /// Gain slope, m³/s.
    pub g0: f64,
    /// Transparency carrier density, m⁻³.
    #[serde(rename = "N0")]
    pub n0: f64,
    /// Gain-compression factor, m³.
    pub eps: f64,
    /// Carrier lifetime, s.
    pub tau_n: f64,
    /// Photon lifetime, s.
    pub tau_p: f64,
    /// Optical confinement factor.
    pub gamma_c: f64,
    /// Fraction of spontaneous emission coupled into the lasing mode.
    pub beta_sp: f64,
    /// Active-region volume, m³.
    #[serde(rename = "V_act")]
    pub v_act: f64,
    /// Elementary charge, C.
    pub q_e: f64,
}

impl LaserParams {
    /// Reference device. Photon lifetime and gain compression are adjusted so
    /// the default bias (3·I_th) is underdamped with f_R ≈ 5.5 GHz.
    pub fn reference() -> Self {
        LaserParams {
            g0: 8.1e-13,
            n0: 1.1e24,
            eps: 1.0e-23,
            tau_n: 2.0e-9,
            tau_p: 1.0e-12,
            gamma_c: 0.3,
            beta_sp: 1e-4,
            v_act: 1.0e-16,
            q_e: 1.602_176_634e-19,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("g0", self.g0),
            ("N0", self.n0),
            ("eps", self.eps),
            ("tau_n", self.tau_n),
            ("tau_p", self.tau_p),
            ("gamma_c", self.gamma_c),
            ("beta_sp", self.beta_sp),
            ("V_act", self.v_act),
            ("q_e", self.q_e),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!(
                    "laser parameter {name} must be positive, got {v}"
                )));
            }
        }
        if self.beta_sp > 1.0 || self.gamma_c > 1.0 {
            return Err(Error::param("beta_sp and gamma_c must not exceed 1"));
        }
        let nth = self.threshold_density();
        if !(nth.is_finite() && nth > self.n0) {
            return Err(Error::param(
                "threshold carrier density must be finite and above N0",
            ));
        }
        Ok(())
    }

    /// `N_th = N0 + 1/(Γ·g0·τp)`.
    pub fn threshold_density(&self) -> f64 {
        self.n0 + 1.0 / (self.gamma_c * self.g0 * self.tau_p)
    }

    /// Threshold current `q·V·N_th/τn` (spontaneous-emission correction ignored).
    pub fn threshold_current(&self) -> f64 {
        self.q_e * self.v_act * self.threshold_density() / self.tau_n
    }

    /// Photon density produced by one threshold current above threshold,
    /// used as the internal scale of `S`.
    pub fn photon_scale(&self) -> f64 {
        self.gamma_c * self.tau_p * self.threshold_current() / (self.q_e * self.v_act)
    }
}

/// Carrier and photon densities (m⁻³).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateState {
    #[serde(rename = "N")]
    pub n: f64,
    #[serde(rename = "S")]
    pub s: f64,
}

/// Maps a normalized drive `d ∈ [0,1]` to `I = I_bias + (d − ½)·I_pp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasMap {
    /// Bias current, A.
    pub i_bias: f64,
    /// Peak-to-peak modulation current, A.
    pub i_pp: f64,
}

impl BiasMap {
    /// `I_bias = 3·I_th`, `I_pp = 2·I_th`.
    pub fn default_for(p: &LaserParams) -> Self {
        let ith = p.threshold_current();
        BiasMap {
            i_bias: 3.0 * ith,
            i_pp: 2.0 * ith,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i_bias.is_finite() && self.i_pp.is_finite() && self.i_pp >= 0.0) {
            return Err(Error::param(
                "bias currents must be finite, I_pp non-negative",
            ));
        }
        if self.i_bias - 0.5 * self.i_pp <= 0.0 {
            return Err(Error::param(format!(
                "I_bias − I_pp/2 must stay positive (I_bias = {}, I_pp = {})",
                self.i_bias, self.i_pp
            )));
        }
        Ok(())
    }

    pub fn current(&self, drive: f64) -> f64 {
        self.i_bias + (drive - 0.5) * self.i_pp
    }
}

/// Tolerances of the adaptive Dormand–Prince integrator.
///
/// The state is integrated in scaled units (`N/N_th`, `S/photon_scale`), so
/// `abs_tol` is dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest step, s.
    pub max_step: f64,
    /// Let steps cross drive sample instants and read the outputs from the
    /// continuous extension. When false every drive sample is a step
    /// boundary, which keeps full order across the kinks of the
    /// piecewise-linear drive (about 1000× smaller error at equal cost).
    pub dense_output: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tol: 1e-9,
            abs_tol: 1e-10,
            max_step: 2e-11,
            dense_output: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(v > 0.0 && v <= 1e-2) {
                return Err(Error::param(format!(
                    "{name} must lie in (0, 1e-2], got {v}"
                )));
            }
        }
        if !(self.max_step > 0.0 && self.max_step.is_finite()) {
            return Err(Error::param("max_step must be positive"));
        }
        Ok(())
    }

    pub fn with_tolerances(self, rel_tol: f64, abs_tol: f64) -> Self {
        SolverConfig {
            rel_tol,
            abs_tol,
            ..self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parameters_are_valid() {
        let p = LaserParams::reference();
        p.validate().unwrap();
        assert!(p.threshold_density() > p.n0);
        BiasMap::default_for(&p).validate().unwrap();
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut p = LaserParams::reference();
        p.beta_sp = 1.5;
        assert!(p.validate().is_err());
        let mut p = LaserParams::reference();
        p.tau_p = 0.0;
        assert!(p.validate().is_err());
        assert!(BiasMap {
            i_bias: 1e-3,
            i_pp: 3e-3
        }
        .validate()
        .is_err());
        assert!(SolverConfig::default()
            .with_tolerances(0.1, 1e-9)
            .validate()
            .is_err());
    }

    #[test]
    fn config_uses_si_field_names() {
        let json = serde_json::to_string(&LaserParams::reference()).unwrap();
        assert!(json.contains("\"N0\"") && json.contains("\"V_act\""));
        let back: LaserParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, LaserParams::reference());
        // every field is mandatory
        assert!(serde_json::from_str::<LaserParams>(r#"{"g0": 1.0}"#).is_err());
    }
}
