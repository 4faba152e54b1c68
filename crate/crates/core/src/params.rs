use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The nine model parameters `(ε, γ, c₁, κ, ξ, Be, Ca, Pa, Fa)`. The
/// Reynolds number is fixed to zero (Stokes flow).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParameters {
    /// Interface width.
    pub epsilon: f64,
    /// Phase-field mobility.
    pub gamma: f64,
    /// Weight of the alignment potential.
    pub c1: f64,
    /// Rotational dissipation.
    pub kappa: f64,
    /// Shape factor of the filaments.
    pub xi: f64,
    /// Bending capillary number.
    pub be: f64,
    /// Capillary number.
    pub ca: f64,
    /// Polarity number.
    pub pa: f64,
    /// Active force number (positive for contractile stress).
    pub fa: f64,
}

impl Default for ModelParameters {
    fn default() -> Self {
        ModelParameters {
            epsilon: 0.5,
            gamma: 0.025,
            c1: 5.0,
            kappa: 1.65,
            xi: 1.1,
            be: 1.0,
            ca: 1.0,
            pa: 1.0,
            fa: 1.0,
        }
    }
}

impl ModelParameters {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.epsilon,
            self.gamma,
            self.c1,
            self.kappa,
            self.xi,
            self.be,
            self.ca,
            self.pa,
            self.fa,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("parameters must be finite".into()));
        }
        for (name, v) in [("epsilon", self.epsilon), ("gamma", self.gamma), ("kappa", self.kappa)] {
            if v <= 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("Be", self.be), ("Ca", self.ca), ("Pa", self.pa), ("Fa", self.fa)] {
            if v == 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be nonzero")));
            }
        }
        Ok(())
    }

    /// Parameter vector in the order `(ε, γ, c₁, κ, ξ, Be, Ca, Pa, Fa)`.
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.epsilon,
            self.gamma,
            self.c1,
            self.kappa,
            self.xi,
            self.be,
            self.ca,
            self.pa,
            self.fa,
        ]
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        ModelParameters {
            epsilon: a[0],
            gamma: a[1],
            c1: a[2],
            kappa: a[3],
            xi: a[4],
            be: a[5],
            ca: a[6],
            pa: a[7],
            fa: a[8],
        }
    }
}
