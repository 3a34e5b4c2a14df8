use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid_param, Result};

/// Thermostat mode of a cooling TCL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Off,
    On,
}

impl Mode {
    pub fn index(self) -> usize {
        match self {
            Mode::Off => 0,
            Mode::On => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Mode::Off
        } else {
            Mode::On
        }
    }

    pub fn as_f64(self) -> f64 {
        self.index() as f64
    }
}

/// Physical parameters of one cooling TCL.
///
/// Temperatures in degrees C, `r` in C/kW, `c` in kWh/C, powers in kW.
/// The time step is given in seconds; the thermal time constant `r*c` is in
/// hours, so the decay factor uses `h_seconds / 3600`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TclParams {
    pub theta_s: f64,
    pub delta: f64,
    pub theta_a: f64,
    pub r: f64,
    pub c: f64,
    pub p_rate: f64,
    pub eta: f64,
    pub h_seconds: f64,
    pub sigma: f64,
}

impl TclParams {
    /// Reference household air conditioner; `sigma` is left to the caller.
    pub fn reference(sigma: f64) -> Self {
        Self {
            theta_s: 20.0,
            delta: 0.5,
            theta_a: 32.0,
            r: 2.0,
            c: 10.0,
            p_rate: 14.0,
            eta: 2.5,
            h_seconds: 10.0,
            sigma,
        }
    }

    /// Noise level that scales with the square root of the step length.
    pub fn sigma_for_step(scale: f64, h_seconds: f64) -> f64 {
        scale * h_seconds.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("theta_s", self.theta_s),
            ("delta", self.delta),
            ("theta_a", self.theta_a),
            ("r", self.r),
            ("c", self.c),
            ("p_rate", self.p_rate),
            ("eta", self.eta),
            ("h_seconds", self.h_seconds),
            ("sigma", self.sigma),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(invalid_param(format!("{name} must be finite, got {v}")));
            }
        }
        for (name, v) in [
            ("delta", self.delta),
            ("r", self.r),
            ("c", self.c),
            ("p_rate", self.p_rate),
            ("eta", self.eta),
            ("h_seconds", self.h_seconds),
        ] {
            if v <= 0.0 {
                return Err(invalid_param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sigma < 0.0 {
            return Err(invalid_param(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        let a = self.decay();
        if !(a > 0.0 && a < 1.0) {
            return Err(invalid_param(format!("decay factor {a} outside (0, 1)")));
        }
        let lo = self.theta_a - self.r * self.p_rate;
        if self.theta_minus() < lo || self.theta_plus() > self.theta_a {
            return Err(invalid_param(format!(
                "dead-band [{}, {}] must lie within [{lo}, {}] for a cooling load",
                self.theta_minus(),
                self.theta_plus(),
                self.theta_a
            )));
        }
        Ok(())
    }

    pub fn h_hours(&self) -> f64 {
        self.h_seconds / 3600.0
    }

    /// Per-step decay factor `a = exp(-h / (R C))`.
    pub fn decay(&self) -> f64 {
        (-self.h_hours() / (self.r * self.c)).exp()
    }

    /// Electrical power drawn while ON.
    pub fn p_on(&self) -> f64 {
        self.p_rate / self.eta
    }

    pub fn theta_minus(&self) -> f64 {
        self.theta_s - 0.5 * self.delta
    }

    pub fn theta_plus(&self) -> f64 {
        self.theta_s + 0.5 * self.delta
    }

    /// Noise-free next temperature.
    pub fn mean_next(&self, mode: Mode, theta: f64) -> f64 {
        let a = self.decay();
        a * theta + (1.0 - a) * (self.theta_a - mode.as_f64() * self.r * self.p_rate)
    }

    /// Hysteretic thermostat rule; ties keep the current mode.
    pub fn switch(&self, mode: Mode, theta: f64) -> Mode {
        if theta < self.theta_minus() {
            Mode::Off
        } else if theta > self.theta_plus() {
            Mode::On
        } else {
            mode
        }
    }

    pub fn with_setpoint(&self, theta_s: f64) -> Self {
        Self { theta_s, ..*self }
    }

    /// Hex SHA-256 of the bit patterns of all fields.
    pub fn hash_hex(&self) -> String {
        let mut hasher = Sha256::new();
        for v in [
            self.theta_s,
            self.delta,
            self.theta_a,
            self.r,
            self.c,
            self.p_rate,
            self.eta,
            self.h_seconds,
            self.sigma,
        ] {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}
