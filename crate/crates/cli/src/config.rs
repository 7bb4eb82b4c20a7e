//! Run configuration: a single JSON document, overridable from the command line.

use std::path::Path;

use anyhow::{bail, Context};
use beaflow::calculus::DerivativeConfig;
use beaflow::flows::FieldKind;
use beaflow::harness::{AnchorPolicy, Band};
use beaflow::integrators::IntegratorConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    OrderCheck,
    Regularizers,
    GanCoeffs,
    CheckGradients,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::OrderCheck => "order_check",
            Command::Regularizers => "regularizers",
            Command::GanCoeffs => "gan_coeffs",
            Command::CheckGradients => "check_gradients",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemSpec {
    /// `quadratic`, `logistic`, `quadratic_game`, `bilinear_game` or `dirac_gan`.
    pub name: String,
    /// Parameter dimension (φ block for games).
    pub dim: usize,
    /// θ block dimension for quadratic games.
    pub dim_theta: usize,
    pub num_examples: usize,
    /// Game variant (`general`, `zero_sum`, `common_payoff`, `saturating`,
    /// `non_saturating`).
    pub variant: Option<String>,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self { name: "quadratic".into(), dim: 3, dim_theta: 2, num_examples: 24, variant: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    /// Number of batches, one SGD step each.
    pub n: usize,
    /// Examples per batch; `None` splits the data evenly over `n` batches.
    pub batch_size: Option<usize>,
    /// Reuse the full dataset in every slot.
    pub identical: bool,
    /// Shuffle before partitioning.
    pub shuffle: bool,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { n: 1, batch_size: None, identical: false, shuffle: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanSpec {
    pub d_current: Vec<f64>,
    pub d_prev: Vec<f64>,
    /// Uniform grid `(k + 0.5) / K` used when the explicit lists are empty.
    pub grid: usize,
    /// Simultaneous GD steps of a Dirac-GAN trajectory summary (0 disables it).
    pub steps: usize,
    pub h: f64,
    pub start: [f64; 2],
}

impl Default for GanSpec {
    fn default() -> Self {
        Self { d_current: Vec::new(), d_prev: Vec::new(), grid: 16, steps: 0, h: 0.1, start: [0.5, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub problem: ProblemSpec,
    pub schedule: ScheduleSpec,
    pub flow: FieldKind,
    pub ladder: String,
    /// Learning rate for the regularizer report.
    pub h: f64,
    /// Starting point (stacked `(φ, θ)` for games); drawn from `seed` when absent.
    pub start: Option<Vec<f64>>,
    pub anchor: AnchorPolicy,
    pub integrator: IntegratorConfig,
    pub derivatives: DerivativeConfig,
    /// Slope acceptance band; defaults to the flow's theoretical order ±0.25.
    pub band: Option<Band>,
    pub gan: GanSpec,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::OrderCheck,
            seed: 0,
            problem: ProblemSpec::default(),
            schedule: ScheduleSpec::default(),
            flow: FieldKind::Igr,
            ladder: "2^-4..2^-9".into(),
            h: 0.1,
            start: None,
            anchor: AnchorPolicy::StartPoint,
            integrator: IntegratorConfig::default(),
            derivatives: DerivativeConfig::default(),
            band: None,
            gan: GanSpec::default(),
            out_dir: "out".into(),
        }
    }
}

impl RunConfig {
    /// Reads a config file, or the `config` member of a previously emitted report.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("command").is_none() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).with_context(|| format!("invalid config in {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.schedule.n == 0 {
            bail!("config field schedule.n: must be at least 1");
        }
        if self.problem.dim == 0 || self.problem.num_examples == 0 || self.problem.dim_theta == 0 {
            bail!("config field problem: dimensions and num_examples must be at least 1");
        }
        if self.integrator.substeps_per_h == 0 {
            bail!("config field integrator.substeps_per_h: must be at least 1");
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            bail!("config field h: must be positive");
        }
        if let Some(b) = self.band {
            if b.lo.is_nan() || b.hi.is_nan() || b.lo > b.hi {
                bail!("config field band: lo must not exceed hi");
            }
        }
        Ok(())
    }
}
