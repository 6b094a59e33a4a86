use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How the analysis anomalies are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Perturbed-observation update, one random draw per member.
    Stochastic,
    /// Deterministic symmetric transform of the forecast anomalies.
    Etkf,
}

/// Which refinements of the conventional update are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Plain EnKF update with multiplicative inflation.
    Conventional,
    /// Recalibration and back-out, still with inflation, no compensation.
    Improvement1,
    /// Recalibration, back-out and adaptive covariance compensation; no inflation.
    Car,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Stochastic, Variant::Etkf];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Stochastic => "stochastic",
            Variant::Etkf => "etkf",
        }
    }
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Conventional, Mode::Improvement1, Mode::Car];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Conventional => "conventional",
            Mode::Improvement1 => "i1",
            Mode::Car => "car",
        }
    }

    pub fn recalibrates(self) -> bool {
        !matches!(self, Mode::Conventional)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stochastic" | "enkf" => Ok(Variant::Stochastic),
            "etkf" => Ok(Variant::Etkf),
            other => Err(Error::InvalidConfig(format!(
                "unknown filter variant '{other}'"
            ))),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conventional" | "conv" => Ok(Mode::Conventional),
            "i1" | "improvement1" => Ok(Mode::Improvement1),
            "car" => Ok(Mode::Car),
            other => Err(Error::InvalidConfig(format!(
                "unknown filter mode '{other}'"
            ))),
        }
    }
}

/// Filter variant, mode and tuning constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub variant: Variant,
    pub mode: Mode,
    rho: f64,
    pub beta0: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl FilterConfig {
    pub const DEFAULT_RHO: f64 = 1.05;
    pub const DEFAULT_BETA0: f64 = 2.0;
    pub const DEFAULT_LAMBDA: f64 = 0.9;
    pub const DEFAULT_MU: f64 = 0.1;

    pub fn new(variant: Variant, mode: Mode) -> Self {
        Self {
            variant,
            mode,
            rho: Self::DEFAULT_RHO,
            beta0: Self::DEFAULT_BETA0,
            lambda: Self::DEFAULT_LAMBDA,
            mu: Self::DEFAULT_MU,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_compensation(mut self, beta0: f64, lambda: f64, mu: f64) -> Self {
        self.beta0 = beta0;
        self.lambda = lambda;
        self.mu = mu;
        self
    }

    /// Effective inflation factor; always 1 in CAR mode.
    pub fn rho(&self) -> f64 {
        match self.mode {
            Mode::Car => 1.0,
            _ => self.rho,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rho.is_finite() || self.rho < 1.0 {
            return Err(Error::InvalidRho(self.rho));
        }
        if !self.beta0.is_finite() || self.beta0 < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "beta0 must be >= 0, got {}",
                self.beta0
            )));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must lie in (0, 1), got {}",
                self.lambda
            )));
        }
        if !self.mu.is_finite() || self.mu <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "mu must be > 0, got {}",
                self.mu
            )));
        }
        Ok(())
    }

    /// `variant-mode`, e.g. `etkf-car`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.variant, self.mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn car_forces_unit_inflation() {
        let c = FilterConfig::new(Variant::Etkf, Mode::Car).with_rho(1.3);
        assert_eq!(c.rho(), 1.0);
        let c = FilterConfig::new(Variant::Etkf, Mode::Improvement1);
        assert_eq!(c.rho(), 1.05);
    }

    #[test]
    fn validation() {
        let base = FilterConfig::new(Variant::Stochastic, Mode::Car);
        assert!(base.validate().is_ok());
        assert!(base.with_rho(0.5).validate().is_err());
        assert!(base.with_compensation(2.0, 1.0, 0.1).validate().is_err());
        assert!(base.with_compensation(2.0, 0.9, 0.0).validate().is_err());
        assert!(base.with_compensation(-1.0, 0.9, 0.1).validate().is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("ETKF".parse::<Variant>().unwrap(), Variant::Etkf);
        assert_eq!("i1".parse::<Mode>().unwrap(), Mode::Improvement1);
        assert!("foo".parse::<Mode>().is_err());
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
    }
}
