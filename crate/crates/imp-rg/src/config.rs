//! Experiment configuration files.
//!
//! A config is a TOML document with one table per concern. Every field has a
//! default, so a config only needs to name what differs from a full-scale
//! nonlinear-oscillator run.

use std::path::{Path, PathBuf};

use imp_rg_core::imp::{iterations_to_density, ImpConfig, PruneScope};
use imp_rg_core::nn::{Activation, NetworkSpec, TrainConfig};
use imp_rg_core::rg::{CriticalRegion, LambdaEstimator, RegionRule, DEFAULT_MARGINAL_TOLERANCE};
use imp_rg_core::tasks::{TaskBinding, TaskKind};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: TaskKind,
    pub network: NetworkSection,
    pub dynamics: DynamicsSection,
    pub train: TrainSection,
    pub imp: ImpSection,
    pub run: RunSection,
    pub analysis: AnalysisSection,
    pub transfer: Option<TransferSection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            task: TaskKind::NlOscillator,
            network: NetworkSection::default(),
            dynamics: DynamicsSection::default(),
            train: TrainSection::default(),
            imp: ImpSection::default(),
            run: RunSection::default(),
            analysis: AnalysisSection::default(),
            transfer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden: vec![50, 50],
            activation: Activation::Tanh,
        }
    }
}

/// Time domain and initial conditions; unset fields take the task defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    pub t0: Option<f64>,
    pub t_max: Option<f64>,
    pub initial_state: Option<Vec<f64>>,
    pub constrain_initial: bool,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self {
            t0: None,
            t_max: None,
            initial_state: None,
            constrain_initial: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub grid_points: usize,
    pub final_lr_factor: f64,
    pub divergence_threshold: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 50_000,
            lr: 8e-3,
            grid_points: 200,
            final_lr_factor: 1.0,
            divergence_threshold: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpSection {
    pub prune_fraction: f64,
    /// Explicit round count; when absent it is derived from `target_density`.
    pub iterations: Option<usize>,
    pub target_density: f64,
    /// `"full"` or `"layer:<index>"`.
    pub scope: String,
}

impl Default for ImpSection {
    fn default() -> Self {
        Self {
            prune_fraction: 0.01,
            iterations: None,
            target_density: 0.1,
            scope: "full".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub repeats: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            repeats: 8,
            seed: 0,
            output_dir: PathBuf::from("runs/experiment"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub power_law: bool,
    pub sigma: bool,
    pub marginal_tolerance: f64,
    pub lambda_estimator: LambdaEstimator,
    /// Multiple of the full-model loss a round may reach and still count as
    /// a winning ticket.
    pub ticket_tolerance: f64,
    /// Multiple of the full-model loss that marks the critical-region onset.
    pub region_tolerance: f64,
    /// Manually pinned `[d_l, d_c]`; overrides detection.
    pub region: Option<[f64; 2]>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            power_law: true,
            sigma: true,
            marginal_tolerance: DEFAULT_MARGINAL_TOLERANCE,
            lambda_estimator: LambdaEstimator::ArithmeticMean,
            ticket_tolerance: 1.0,
            region_tolerance: 1.0,
            region: None,
        }
    }
}

/// Transfers the masks of another experiment's runs onto this one's network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    /// Output directory of the source experiment.
    pub source_dir: PathBuf,
    /// Only source rounds at or above this density are transferred.
    #[serde(default)]
    pub min_density: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.run.repeats == 0 {
            return Err(HarnessError::Config("run.repeats must be ≥ 1".into()));
        }
        self.spec()?;
        self.task_binding()?;
        self.train_config().validate()?;
        self.scope()?;
        self.region_override()?;
        let x = self.imp.prune_fraction;
        if !(x > 0.0 && x < 1.0) {
            return Err(HarnessError::Config(
                "imp.prune_fraction must lie in (0, 1)".into(),
            ));
        }
        self.iterations()?;
        Ok(())
    }

    pub fn spec(&self) -> Result<NetworkSpec, HarnessError> {
        Ok(NetworkSpec::new(
            1,
            self.network.hidden.clone(),
            self.task.arity(),
            self.network.activation,
        )?)
    }

    pub fn task_binding(&self) -> Result<TaskBinding, HarnessError> {
        let base = TaskBinding::for_kind(self.task);
        let d = &self.dynamics;
        let binding = TaskBinding::new(
            self.task,
            d.initial_state.clone().unwrap_or(base.initial_state),
            d.t0.unwrap_or(base.t0),
            d.t_max.unwrap_or(base.t_max),
        )?;
        Ok(binding.with_constraint(d.constrain_initial))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let mut c = TrainConfig::new(t.epochs, t.lr, t.grid_points);
        c.final_lr_factor = t.final_lr_factor;
        c.divergence_threshold = t.divergence_threshold;
        c
    }

    pub fn scope(&self) -> Result<PruneScope, HarnessError> {
        parse_scope(&self.imp.scope)
    }

    pub fn iterations(&self) -> Result<usize, HarnessError> {
        match self.imp.iterations {
            Some(n) => Ok(n),
            None => Ok(iterations_to_density(
                self.imp.prune_fraction,
                self.imp.target_density,
            )?),
        }
    }

    pub fn imp_config(&self, seed: u64) -> Result<ImpConfig, HarnessError> {
        Ok(ImpConfig {
            prune_fraction: self.imp.prune_fraction,
            iterations: self.iterations()?,
            scope: self.scope()?,
            train: self.train_config(),
            seed,
        })
    }

    pub fn region_override(&self) -> Result<Option<CriticalRegion>, HarnessError> {
        self.analysis
            .region
            .map(|[d_l, d_c]| CriticalRegion::new(d_l, d_c).map_err(HarnessError::from))
            .transpose()
    }

    pub fn region_rule(&self) -> RegionRule {
        RegionRule {
            tolerance_factor: self.analysis.region_tolerance,
            divergence_threshold: self.train.divergence_threshold,
        }
    }

    /// Seeds `base, base+1, …, base+R−1`.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.run.repeats as u64)
            .map(|i| self.run.seed + i)
            .collect()
    }
}

pub fn parse_scope(text: &str) -> Result<PruneScope, HarnessError> {
    let text = text.trim();
    if text == "full" {
        return Ok(PruneScope::FullModel);
    }
    text.strip_prefix("layer:")
        .and_then(|i| i.parse().ok())
        .map(PruneScope::SingleLayer)
        .ok_or_else(|| HarnessError::Config(format!("unknown prune scope `{text}`")))
}

pub fn scope_label(scope: PruneScope) -> String {
    match scope {
        PruneScope::FullModel => "full".into(),
        PruneScope::SingleLayer(l) => format!("layer:{l}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.iterations().unwrap(), 230);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::default();
        c.task = TaskKind::HenonHeiles;
        c.imp.scope = "layer:1".into();
        c.analysis.region = Some([0.3, 0.9]);
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn scope_parsing() {
        assert_eq!(parse_scope("full").unwrap(), PruneScope::FullModel);
        assert_eq!(parse_scope("layer:2").unwrap(), PruneScope::SingleLayer(2));
        assert!(parse_scope("layer:x").is_err());
    }

    #[test]
    fn iteration_counts_from_target_density() {
        for (x, n) in [(0.01, 230), (0.05, 45), (0.10, 22)] {
            let mut c = ExperimentConfig::default();
            c.imp.prune_fraction = x;
            assert_eq!(c.iterations().unwrap(), n);
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml("[run]\nrepeats = 0\n").is_err());
        assert!(ExperimentConfig::from_toml("[imp]\nprune_fraction = 1.5\n").is_err());
        assert!(ExperimentConfig::from_toml("[analysis]\nregion = [0.9, 0.3]\n").is_err());
    }
}
