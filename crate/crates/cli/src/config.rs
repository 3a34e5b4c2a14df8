//! Scenario configuration.
//!
//! Unknown keys are rejected. Cross-field constraints are checked in
//! [`Config::validate`] and reported with the dotted path of the field.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use tclpop::baseline::BaselineRule;
use tclpop::heterogeneity::HeterogeneousParameter;
use tclpop::partition::build_partition;
use tclpop::TclParams;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(path: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{path}: {msg}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub population: PopulationConfig,
    pub params: ParamsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heterogeneity: Option<HeterogeneityConfig>,
    pub abstraction: AbstractionConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceConfig>,
    pub simulation: SimulationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction: Option<ReductionConfig>,
    #[serde(default)]
    pub bounds: BoundsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub n_p: usize,
    #[serde(default)]
    pub init: InitSpec,
}

/// Initial population.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitSpec {
    /// Every TCL OFF at the set-point.
    #[default]
    SetpointOff,
    /// Every TCL in the same state.
    Uniform { mode: ModeName, theta: f64 },
    /// Alternating modes, temperatures evenly across the dead-band.
    Spread,
    /// Start OFF at the set-point and run the population freely first.
    BurnIn { steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Off,
    On,
}

/// Physical parameters; the field names follow the usual symbols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub theta_s: f64,
    pub delta: f64,
    pub theta_a: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "P_rate")]
    pub p_rate: f64,
    pub eta: f64,
    pub h_seconds: f64,
    pub sigma: f64,
}

impl ParamsConfig {
    pub fn to_params(self) -> TclParams {
        TclParams {
            theta_s: self.theta_s,
            delta: self.delta,
            theta_a: self.theta_a,
            r: self.r,
            c: self.c,
            p_rate: self.p_rate,
            eta: self.eta,
            h_seconds: self.h_seconds,
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeterogeneityConfig {
    pub parameter: HeterogeneousParameter,
    pub distribution: Distribution,
    #[serde(default)]
    pub mode: HeterogeneityMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_clusters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Values { values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeterogeneityMode {
    #[default]
    Averaging,
    Clustering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionConfig {
    #[serde(default)]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Bins of the deterministic baseline; enables the baseline column in `compare`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_d: Option<usize>,
    #[serde(default = "default_rule")]
    pub baseline_rule: BaselineRule,
}

fn default_rule() -> BaselineRule {
    BaselineRule::UniformBin
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    #[default]
    None,
    Onestep,
    Smpc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub mode: ControlMode,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Largest set-point move per step, degrees C.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: f64,
    /// Weight of the expected terminal power in the SMPC cost, per kW.
    #[serde(default)]
    pub kappa: f64,
    /// Measurement noise standard deviation as a fraction of the initial power.
    #[serde(default = "default_rv_fraction")]
    pub rv_fraction: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            mode: ControlMode::None,
            horizon: default_horizon(),
            rate_limit: default_rate_limit(),
            kappa: 0.0,
            rv_fraction: default_rv_fraction(),
        }
    }
}

fn default_horizon() -> usize {
    5
}

fn default_rate_limit() -> f64 {
    0.025
}

fn default_rv_fraction() -> f64 {
    0.005
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceType {
    Constant,
    Piecewise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(rename = "type")]
    pub kind: ReferenceType,
    pub values: Vec<f64>,
    /// Steps each piecewise level is held; the last level is held to the end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_steps: Option<usize>,
    /// Values are multiples of the initial power rather than kW.
    #[serde(default = "yes")]
    pub relative: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub steps: usize,
    #[serde(default = "one")]
    pub mc_runs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    /// Monte Carlo runs for the empirical check; zero skips it.
    #[serde(default)]
    pub verify_runs: usize,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { horizons: default_horizons(), verify_runs: 0 }
    }
}

fn default_horizons() -> Vec<usize> {
    vec![2, 6, 12]
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn params(&self) -> TclParams {
        self.params.to_params()
    }

    /// Formal grid `(l, m)`; validated to exist for the stochastic method.
    pub fn grid(&self) -> Result<(usize, usize), ConfigError> {
        match (self.abstraction.l, self.abstraction.m) {
            (Some(l), Some(m)) => Ok((l, m)),
            _ => Err(err("abstraction", "the stochastic abstraction needs both l and m")),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let params = self.params();
        params.validate().map_err(|e| err("params", e))?;
        if self.population.n_p == 0 {
            return Err(err("population.n_p", "must be positive"));
        }
        match self.population.init {
            InitSpec::Uniform { theta, .. } if !theta.is_finite() => {
                return Err(err("population.init.theta", "must be finite"));
            }
            _ => {}
        }
        if self.simulation.steps == 0 {
            return Err(err("simulation.steps", "must be at least 1"));
        }
        if self.simulation.mc_runs == 0 {
            return Err(err("simulation.mc_runs", "must be at least 1"));
        }

        let a = &self.abstraction;
        match a.method {
            Method::Stochastic => {
                let (l, m) = self.grid()?;
                build_partition(&params, l, m).map_err(|e| err("abstraction", e))?;
                if params.sigma <= 0.0 {
                    return Err(err("params.sigma", "the stochastic abstraction needs sigma > 0"));
                }
            }
            Method::Deterministic => {
                if a.n_d.is_none() {
                    return Err(err("abstraction.n_d", "required by the deterministic method"));
                }
            }
        }
        if a.n_d == Some(0) {
            return Err(err("abstraction.n_d", "must be positive"));
        }

        if let Some(h) = &self.heterogeneity {
            match &h.distribution {
                Distribution::Uniform { lo, hi } => {
                    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                        return Err(err("heterogeneity.distribution", format!("need lo <= hi, got [{lo}, {hi}]")));
                    }
                    for v in [*lo, *hi] {
                        h.parameter.apply(&params, v).validate().map_err(|e| err("heterogeneity.distribution", e))?;
                    }
                }
                Distribution::Values { values } => {
                    if values.len() != self.population.n_p {
                        return Err(err(
                            "heterogeneity.distribution.values",
                            format!("{} values for {} TCLs", values.len(), self.population.n_p),
                        ));
                    }
                    for v in values {
                        h.parameter.apply(&params, *v).validate().map_err(|e| err("heterogeneity.distribution.values", e))?;
                    }
                }
            }
            match h.mode {
                HeterogeneityMode::Averaging => {
                    if self.population.n_p < 2 {
                        return Err(err("population.n_p", "the averaged model needs at least two TCLs"));
                    }
                }
                HeterogeneityMode::Clustering => match h.n_clusters {
                    Some(k) if k > 0 => {}
                    _ => return Err(err("heterogeneity.n_clusters", "clustering needs a positive cluster count")),
                },
            }
        }

        let c = &self.control;
        if c.mode != ControlMode::None {
            if a.method != Method::Stochastic {
                return Err(err("abstraction.method", "control needs the stochastic abstraction"));
            }
            let (l, m) = self.grid()?;
            if m < 2 * l {
                return Err(err("abstraction.m", format!("control moves the set-point by up to l bins; need m >= 2l = {}", 2 * l)));
            }
            if matches!(self.heterogeneity, Some(HeterogeneityConfig { mode: HeterogeneityMode::Clustering, .. })) {
                return Err(err("heterogeneity.mode", "control is built on the averaged model"));
            }
            if c.horizon == 0 {
                return Err(err("control.horizon", "must be at least 1"));
            }
            if !(c.rate_limit >= 0.0) {
                return Err(err("control.rate_limit", "must be non-negative"));
            }
            if !(c.rv_fraction > 0.0 && c.rv_fraction.is_finite()) {
                return Err(err("control.rv_fraction", "must be positive"));
            }
            if !c.kappa.is_finite() {
                return Err(err("control.kappa", "must be finite"));
            }
            match &self.reference {
                None => return Err(err("reference", "required when control is enabled")),
                Some(r) => {
                    if r.values.is_empty() {
                        return Err(err("reference.values", "must not be empty"));
                    }
                    if r.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                        return Err(err("reference.values", "must be finite and non-negative"));
                    }
                    match r.kind {
                        ReferenceType::Constant if r.values.len() != 1 => {
                            return Err(err("reference.values", "a constant reference takes one value"));
                        }
                        ReferenceType::Piecewise if r.segment_steps.unwrap_or(0) == 0 => {
                            return Err(err("reference.segment_steps", "required and positive for a piecewise reference"));
                        }
                        _ => {}
                    }
                }
            }
        }

        if let Some(r) = &self.reduction {
            if r.enabled {
                if a.method != Method::Stochastic {
                    return Err(err("reduction", "reduction applies to the stochastic abstraction"));
                }
                if matches!(self.heterogeneity, Some(HeterogeneityConfig { mode: HeterogeneityMode::Clustering, .. })) {
                    return Err(err("reduction", "reduction applies to a single aggregate model, not to clusters"));
                }
                let (_, m) = self.grid()?;
                // Interior states minus the eliminated one.
                let order_max = 2 * (2 * m) - 1;
                if r.order == 0 || r.order > order_max {
                    return Err(err("reduction.order", format!("must be in 1..={order_max}")));
                }
            }
        }

        if self.bounds.horizons.is_empty() || self.bounds.horizons.contains(&0) {
            return Err(err("bounds.horizons", "need one or more horizons, each at least 1"));
        }
        Ok(())
    }
}

/// Applies a command-line seed override.
pub fn with_seed(mut cfg: Config, seed: Option<u64>) -> Config {
    if let Some(s) = seed {
        cfg.simulation.seed = s;
    }
    cfg
}
