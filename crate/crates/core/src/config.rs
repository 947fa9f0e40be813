//! Declarative run configuration: a single TOML tree mirroring the pipeline
//! phases. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::detect::{ByzPrunePolicy, DetectionConfig, OmegaSpec};
use crate::error::{Error, Result};
use crate::problem::AttackSpec;
use crate::robust::{RobustMeanEstimator, WarmupRule};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub m: usize,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub d: usize,
    /// Samples per node.
    pub n_per_node: usize,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
}

fn default_noise() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByzantineConfig {
    /// Fraction of Byzantine nodes; the count is `⌊rho·m⌋`.
    pub rho: f64,
    pub attack: AttackSpec,
    #[serde(default = "default_prune_policy")]
    pub prune_policy: ByzPrunePolicy,
}

fn default_prune_policy() -> ByzPrunePolicy {
    ByzPrunePolicy::KeepAll
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupConfig {
    pub rule: WarmupRule,
    pub k0: usize,
    /// Step size is `step_scale / √k0`.
    #[serde(default = "default_step_scale")]
    pub step_scale: f64,
    #[serde(default = "default_warmup_batch")]
    pub batch: usize,
}

fn default_step_scale() -> f64 {
    0.1
}

fn default_warmup_batch() -> usize {
    10
}

impl WarmupConfig {
    pub fn step_size(&self) -> f64 {
        self.step_scale / (self.k0.max(1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    pub estimator: RobustMeanEstimator,
    #[serde(default = "default_omega")]
    pub omega: OmegaSpec,
    pub alpha: f64,
    /// Identification-set size; must be even and below `n_per_node`.
    pub n: usize,
    #[serde(default = "default_include_self")]
    pub include_self: bool,
}

fn default_omega() -> OmegaSpec {
    OmegaSpec::Identity
}

fn default_include_self() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationConfig {
    /// Total iterations K; the default step size is `1/√(m_g K)`.
    pub k_iters: usize,
    #[serde(default = "default_opt_batch")]
    pub batch: usize,
    /// Overrides the tracking warm-start exponent when positive.
    #[serde(default)]
    pub t0_override: usize,
    /// Explicit step size; zero means the default.
    #[serde(default)]
    pub eta_override: f64,
}

fn default_opt_batch() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub topology: TopologyConfig,
    pub task: TaskConfig,
    pub byzantine: ByzantineConfig,
    pub warmup: WarmupConfig,
    pub detection: DetectionSection,
    pub optimization: OptimizationConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("parse failure: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize failure: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.topology.m < 2 {
            return Err(Error::Config("need at least two nodes".into()));
        }
        if !(0.0..=1.0).contains(&self.topology.p) {
            return Err(Error::Config(format!("edge probability {} outside [0,1]", self.topology.p)));
        }
        if self.task.d == 0 || self.task.n_per_node == 0 {
            return Err(Error::Config("dimension and per-node sample count must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.byzantine.rho) {
            return Err(Error::Config(format!(
                "byzantine fraction {} outside [0, 0.5)",
                self.byzantine.rho
            )));
        }
        if self.byzantine.rho > 0.0 && self.byzantine.attack == AttackSpec::None {
            return Err(Error::Config(
                "a positive byzantine fraction needs an attack kind".into(),
            ));
        }
        if !(self.detection.alpha > 0.0 && self.detection.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0,1)", self.detection.alpha)));
        }
        if self.detection.n % 2 != 0 || self.detection.n == 0 {
            return Err(Error::Config(format!(
                "identification size {} must be positive and even",
                self.detection.n
            )));
        }
        if self.detection.n >= self.task.n_per_node {
            return Err(Error::Config(format!(
                "identification size {} must be below the per-node sample count {}",
                self.detection.n, self.task.n_per_node
            )));
        }
        if self.optimization.k_iters == 0 {
            return Err(Error::Config("optimization needs at least one iteration".into()));
        }
        if self.warmup.batch == 0 || self.optimization.batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        self.detection_config().validate()?;
        self.warmup.rule.validate()?;
        if let AttackSpec::Param { s_r, .. } = self.byzantine.attack {
            if !(0.0..=1.0).contains(&s_r) {
                return Err(Error::Config(format!("attack support ratio {s_r} outside [0,1]")));
            }
        }
        Ok(())
    }

    pub fn detection_config(&self) -> DetectionConfig {
        DetectionConfig {
            estimator: self.detection.estimator.clone(),
            omega: self.detection.omega.clone(),
            alpha: self.detection.alpha,
            include_self: self.detection.include_self,
        }
    }

    pub fn byz_count(&self) -> usize {
        (self.byzantine.rho * self.topology.m as f64).floor() as usize
    }

    /// Desk-scale defaults: everything a run needs, sized to finish in
    /// seconds.
    pub fn desk_default() -> Self {
        RunConfig {
            seed: 42,
            topology: TopologyConfig { m: 50, p: 0.5 },
            task: TaskConfig { d: 30, n_per_node: 100, noise_std: 1.0 },
            byzantine: ByzantineConfig {
                rho: 0.2,
                attack: AttackSpec::Param { mu_c: 5.0, s_r: 0.5 },
                prune_policy: ByzPrunePolicy::KeepAll,
            },
            warmup: WarmupConfig {
                rule: WarmupRule::CenteredClip { tau: 1.0, rounds: 1 },
                k0: 300,
                step_scale: 0.1,
                batch: 10,
            },
            detection: DetectionSection {
                estimator: RobustMeanEstimator::CoordinateMedian,
                omega: OmegaSpec::Identity,
                alpha: 0.2,
                n: 50,
                include_self: true,
            },
            optimization: OptimizationConfig {
                k_iters: 1500,
                batch: 10,
                t0_override: 0,
                eta_override: 0.0,
            },
        }
    }

    /// Full-scale defaults matching the reference experiment sizes.
    pub fn paper_scale(mut self) -> Self {
        self.topology.m = 150;
        self.optimization.k_iters = 3000;
        self.warmup.k0 = 300;
        self
    }
}

/// Sweep axes: which scalar the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SR,
    Rho,
    Alpha,
    K,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s_r" | "sr" => Ok(SweepAxis::SR),
            "rho" => Ok(SweepAxis::Rho),
            "alpha" => Ok(SweepAxis::Alpha),
            "k" | "K" => Ok(SweepAxis::K),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?} (expected s_r, rho, alpha, or k)"
            ))),
        }
    }
}

/// A sweep: one axis, a value list, and a replication count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub replications: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("sweep needs at least one replication".into()));
        }
        Ok(())
    }
}

/// Apply one sweep value to a base configuration.
pub fn apply_axis(cfg: &RunConfig, axis: SweepAxis, value: f64) -> Result<RunConfig> {
    let mut out = cfg.clone();
    match axis {
        SweepAxis::SR => match &mut out.byzantine.attack {
            AttackSpec::Param { s_r, .. } => *s_r = value,
            other => {
                return Err(Error::Config(format!(
                    "s_r sweep needs the parameter attack, found {other:?}"
                )))
            }
        },
        SweepAxis::Rho => out.byzantine.rho = value,
        SweepAxis::Alpha => out.detection.alpha = value,
        SweepAxis::K => {
            if value < 1.0 {
                return Err(Error::Config(format!("K value {value} must be >= 1")));
            }
            out.optimization.k_iters = value as usize;
        }
    }
    out.validate()?;
    Ok(out)
}
