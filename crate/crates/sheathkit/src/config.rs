//! Plasma parameters and the electron density closure.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SheathError};

/// Electron density as a function of the electrostatic potential.
///
/// Every model satisfies `n_e(0) = 1`, `n_e'(0) = -1` and `n_e' < 0`.
/// `Power` decays algebraically, `(1 + phi/kappa)^(-kappa)`; for
/// `kappa < 1/2` it decays slower than the ion density of a cold beam, which
/// is what makes the solvability set bounded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElectronModel {
    Boltzmann,
    Linear,
    Power { kappa: f64 },
}

impl ElectronModel {
    pub fn validate(&self) -> Result<()> {
        if let ElectronModel::Power { kappa } = *self {
            if !(kappa > 0.0 && kappa < 1.0) {
                return Err(SheathError::InvalidConfig(format!(
                    "power electron model needs 0 < kappa < 1, got {kappa}"
                )));
            }
        }
        Ok(())
    }

    /// `n_e(phi)`. Outside the domain of the power law this is `+inf`.
    pub fn density(&self, phi: f64) -> f64 {
        match *self {
            ElectronModel::Boltzmann => (-phi).exp(),
            ElectronModel::Linear => 1.0 - phi,
            ElectronModel::Power { kappa } => {
                let base = 1.0 + phi / kappa;
                if base <= 0.0 {
                    f64::INFINITY
                } else {
                    base.powf(-kappa)
                }
            }
        }
    }

    pub fn derivative(&self, phi: f64) -> f64 {
        match *self {
            ElectronModel::Boltzmann => -(-phi).exp(),
            ElectronModel::Linear => -1.0,
            ElectronModel::Power { kappa } => {
                let base = 1.0 + phi / kappa;
                if base <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -base.powf(-kappa - 1.0)
                }
            }
        }
    }

    /// `int_0^phi n_e`.
    pub fn antiderivative(&self, phi: f64) -> f64 {
        match *self {
            ElectronModel::Boltzmann => -(-phi).exp_m1(),
            ElectronModel::Linear => phi - 0.5 * phi * phi,
            ElectronModel::Power { kappa } => {
                let base = 1.0 + phi / kappa;
                kappa / (1.0 - kappa) * (((1.0 - kappa) * base.ln()).exp_m1())
            }
        }
    }

    /// `phi - int_0^phi n_e`, accurate for small `phi` where both terms
    /// nearly cancel.
    pub fn antiderivative_deficit(&self, phi: f64) -> f64 {
        match *self {
            ElectronModel::Linear => 0.5 * phi * phi,
            ElectronModel::Boltzmann if phi.abs() < 0.05 => {
                // sum_{k>=2} (-1)^k phi^k / k!
                let mut term = 0.5 * phi * phi;
                let mut sum = 0.0;
                for k in 2..24 {
                    sum += term;
                    term *= -phi / (k + 1) as f64;
                }
                sum
            }
            ElectronModel::Power { kappa } if phi.abs() < 0.05 * kappa => {
                // 1 - n_e(s) = -sum_{k>=1} binom(-kappa, k) (s/kappa)^k
                let z = phi / kappa;
                let mut c = 1.0;
                let mut zk = 1.0;
                let mut sum = 0.0;
                for k in 1..24 {
                    c *= (-kappa - (k - 1) as f64) / k as f64;
                    zk *= z;
                    sum -= c * zk * phi / (k + 1) as f64;
                }
                sum
            }
            _ => phi - self.antiderivative(phi),
        }
    }

    /// Inverse of `n_e`; `None` where the density value is unattainable.
    pub fn inverse(&self, density: f64) -> Option<f64> {
        match *self {
            ElectronModel::Boltzmann => (density > 0.0).then(|| -density.ln()),
            ElectronModel::Linear => Some(1.0 - density),
            ElectronModel::Power { kappa } => {
                (density > 0.0).then(|| kappa * (density.powf(-1.0 / kappa) - 1.0))
            }
        }
    }
}

/// Physical parameters of one problem instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlasmaConfig {
    pub u_infty: f64,
    pub theta_infty: f64,
    pub r: f64,
    pub sigma: f64,
    pub phi_b: f64,
    pub electron_model: ElectronModel,
}

impl PlasmaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SheathError::InvalidConfig(msg));
        let all = [self.u_infty, self.theta_infty, self.r, self.sigma, self.phi_b];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite".into());
        }
        if self.u_infty >= 0.0 {
            return bad(format!("u_infty must be negative, got {}", self.u_infty));
        }
        if self.theta_infty <= 0.0 {
            return bad(format!("theta_infty must be positive, got {}", self.theta_infty));
        }
        if self.r <= 0.0 || self.sigma <= 0.0 {
            return bad(format!("r and sigma must be positive, got {} and {}", self.r, self.sigma));
        }
        if self.phi_b < 0.0 {
            return bad(format!("phi_b must be nonnegative, got {}", self.phi_b));
        }
        if self.u_infty.abs() <= self.r + 2.0 * self.sigma {
            return bad(format!(
                "need |u_infty| > r + 2 sigma, got |{}| <= {}",
                self.u_infty,
                self.r + 2.0 * self.sigma
            ));
        }
        self.electron_model.validate()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let cfg: PlasmaConfig = read_structured(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads a JSON or TOML document, picking the format from the extension and
/// falling back to trying both.
pub fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        SheathError::InvalidConfig(format!("cannot read {}: {e}", path.display()))
    })?;
    parse_structured(&text, path.extension().and_then(|e| e.to_str()))
}

pub fn parse_structured<T: DeserializeOwned>(text: &str, ext: Option<&str>) -> Result<T> {
    let as_json = || serde_json::from_str::<T>(text).map_err(|e| e.to_string());
    let as_toml = || toml::from_str::<T>(text).map_err(|e| e.to_string());
    let parsed = match ext {
        Some("json") => as_json(),
        Some("toml") => as_toml(),
        _ => as_json().or_else(|_| as_toml()),
    };
    parsed.map_err(SheathError::Serialization)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> PlasmaConfig {
        PlasmaConfig {
            u_infty: -2.0,
            theta_infty: 0.01,
            r: 0.5,
            sigma: 0.1,
            phi_b: 0.1,
            electron_model: ElectronModel::Boltzmann,
        }
    }

    #[test]
    fn deficit_matches_direct_form() {
        for m in [ElectronModel::Boltzmann, ElectronModel::Linear, ElectronModel::Power { kappa: 0.3 }] {
            for phi in [1e-3, 0.01, 0.0149, 0.2, 1.5] {
                let a = m.antiderivative_deficit(phi);
                let b = phi - m.antiderivative(phi);
                assert!((a - b).abs() < 1e-13 * phi, "{m:?} {phi} {a} {b}");
            }
            let tiny = 1e-7;
            let a = m.antiderivative_deficit(tiny);
            let slope = -m.derivative(0.0);
            assert!((a / (0.5 * slope * tiny * tiny) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_slow_drift() {
        let mut c = base();
        c.u_infty = -0.6;
        assert!(c.validate().is_err());
        c.u_infty = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn reads_both_formats() {
        let toml_text = r#"
            u_infty = -2.0
            theta_infty = 0.01
            r = 0.5
            sigma = 0.1
            phi_b = 0.1
            electron_model = "boltzmann"
        "#;
        let a: PlasmaConfig = parse_structured(toml_text, Some("toml")).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let b: PlasmaConfig = parse_structured(&json, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, base());

        let power = r#"{"u_infty":-2,"theta_infty":0.1,"r":0.5,"sigma":0.1,"phi_b":1,
                        "electron_model":{"power":{"kappa":0.1}}}"#;
        let c: PlasmaConfig = parse_structured(power, Some("json")).unwrap();
        assert_eq!(c.electron_model, ElectronModel::Power { kappa: 0.1 });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"u_infty":-2,"theta_infty":0.1,"r":0.5,"sigma":0.1,"phi_b":1,
                       "electron_model":"linear","extra":3}"#;
        assert!(parse_structured::<PlasmaConfig>(text, Some("json")).is_err());
    }

    #[test]
    fn electron_models_share_linearization() {
        let models = [
            ElectronModel::Boltzmann,
            ElectronModel::Linear,
            ElectronModel::Power { kappa: 0.1 },
            ElectronModel::Power { kappa: 0.7 },
        ];
        for m in models {
            assert!((m.density(0.0) - 1.0).abs() < 1e-15);
            assert!((m.derivative(0.0) + 1.0).abs() < 1e-15);
            assert_eq!(m.antiderivative(0.0), 0.0);
            for &phi in &[0.01, 0.3, 0.9] {
                let h = 1e-6;
                let fd = (m.antiderivative(phi + h) - m.antiderivative(phi - h)) / (2.0 * h);
                assert!((fd - m.density(phi)).abs() < 1e-8, "{m:?} at {phi}");
                let dfd = (m.density(phi + h) - m.density(phi - h)) / (2.0 * h);
                assert!((dfd - m.derivative(phi)).abs() < 1e-8);
                let back = m.inverse(m.density(phi)).unwrap();
                assert!((back - phi).abs() < 1e-12);
            }
        }
    }
}
