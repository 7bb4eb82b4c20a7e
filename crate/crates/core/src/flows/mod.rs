//! Continuous-time vector fields: plain gradient flows and their first-order
//! modified counterparts, for single objectives and for two-player games.
//!
//! Fields are immutable after construction. Anchored kinds compute every
//! gradient at the anchor once, in the constructor, and treat it as a constant.

mod game;

pub use game::{game_anchored_flow, game_bea_flow, simultaneous_gradient_field, GameFieldPair, GameFieldTerms};

use serde::{Deserialize, Serialize};

use crate::calculus::{grad, grad_directional_jacobian, pooled_grad, pooled_hvp, DerivativeConfig};
use crate::error::{check_dim, Error, Result};
use crate::param::ParamVector;
use crate::problems::{digest_values, BatchSchedule, Problem, ProblemDescriptor};

/// Anything the integrators can advance: an autonomous field `x -> ẋ`.
///
/// `h` is the learning rate embedded in the field (0 for unmodified flows).
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;
    fn h(&self) -> f64;
    fn eval(&self, x: &ParamVector) -> Result<ParamVector>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    GradientFlow,
    Igr,
    /// n-step SGD flow with anchor gradients frozen at construction.
    MultiStepSgd,
    /// Same correction as `MultiStepSgd` with the anchor gradients replaced by
    /// gradients at the evaluation point.
    MultiStepFullbatch,
    SimultaneousGradient,
    GameBea,
    GameAnchored,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::GradientFlow => "gradient_flow",
            FieldKind::Igr => "igr",
            FieldKind::MultiStepSgd => "multi_step_sgd",
            FieldKind::MultiStepFullbatch => "multi_step_fullbatch",
            FieldKind::SimultaneousGradient => "simultaneous_gradient",
            FieldKind::GameBea => "game_bea",
            FieldKind::GameAnchored => "game_anchored",
        }
    }

    pub fn is_anchored(self) -> bool {
        matches!(self, FieldKind::MultiStepSgd | FieldKind::GameAnchored)
    }

    pub fn is_game(self) -> bool {
        matches!(self, FieldKind::SimultaneousGradient | FieldKind::GameBea | FieldKind::GameAnchored)
    }
}

impl std::fmt::Display for FieldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = [
            FieldKind::GradientFlow,
            FieldKind::Igr,
            FieldKind::MultiStepSgd,
            FieldKind::MultiStepFullbatch,
            FieldKind::SimultaneousGradient,
            FieldKind::GameBea,
            FieldKind::GameAnchored,
        ];
        all.into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown flow kind {s:?}")))
    }
}

/// Additive split of a single-objective field value.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTerms {
    /// `−∇E` on the pooled schedule.
    pub base: ParamVector,
    /// Gradient-norm (drift) correction.
    pub drift: ParamVector,
    /// Batch-alignment correction; zero for full-batch kinds.
    pub alignment: ParamVector,
}

impl FieldTerms {
    pub fn total(&self) -> ParamVector {
        self.base.add(&self.drift).add(&self.alignment)
    }
}

/// Reproducibility record for a constructed field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub kind: FieldKind,
    pub h: f64,
    pub n: usize,
    pub anchor_digest: Option<String>,
    pub problem_descriptor: ProblemDescriptor,
}

/// Single-objective field over a batch schedule.
pub struct VectorField<'a> {
    kind: FieldKind,
    h: f64,
    problem: &'a dyn Problem,
    schedule: BatchSchedule,
    anchor: Option<ParamVector>,
    /// `A_μ = Σ_{τ<μ} ∇E(anchor; X^τ)` for `μ = 1..n`, anchored kinds only.
    anchor_prefix: Vec<ParamVector>,
    cfg: DerivativeConfig,
}

impl std::fmt::Debug for VectorField<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorField")
            .field("kind", &self.kind)
            .field("h", &self.h)
            .field("n", &self.schedule.len())
            .field("anchor", &self.anchor)
            .finish()
    }
}

fn check_h(h: f64) -> Result<()> {
    if h.is_finite() && h >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("learning rate must be finite and nonnegative, got {h}")))
    }
}

fn warn_unequal_batches(schedule: &BatchSchedule) {
    if !schedule.has_uniform_batch_size() {
        let sizes: Vec<_> = schedule.batches().iter().map(|b| b.len()).collect();
        log::warn!("batch sizes differ {sizes:?}; pooling by mean of batch losses");
    }
}

/// Constructs a field of any single-objective kind. Anchored kinds fail with
/// [`Error::MissingAnchor`] when `anchor` is `None`; for other kinds it is ignored.
pub fn build_field<'a>(
    kind: FieldKind,
    problem: &'a dyn Problem,
    schedule: &BatchSchedule,
    h: f64,
    anchor: Option<&ParamVector>,
    cfg: DerivativeConfig,
) -> Result<VectorField<'a>> {
    if kind.is_game() {
        return Err(Error::InvalidArgument(format!("{kind} is a game field")));
    }
    check_h(h)?;
    cfg.validate()?;
    warn_unequal_batches(schedule);
    let h = if kind == FieldKind::GradientFlow { 0.0 } else { h };
    let (anchor, anchor_prefix) = if kind.is_anchored() {
        let a = anchor.ok_or(Error::MissingAnchor(kind.name()))?;
        check_dim(problem.dim(), a.dim())?;
        let grads = schedule
            .batches()
            .iter()
            .map(|b| grad(problem, a, b, &cfg))
            .collect::<Result<Vec<_>>>()?;
        (Some(a.clone()), prefix_sums(&grads))
    } else {
        (None, Vec::new())
    };
    Ok(VectorField { kind, h, problem, schedule: schedule.clone(), anchor, anchor_prefix, cfg })
}

/// `[g_0, g_0 + g_1, ..., g_0 + .. + g_{n−2}]`, the partial sums feeding
/// slots `1..n`.
fn prefix_sums(grads: &[ParamVector]) -> Vec<ParamVector> {
    let mut out: Vec<ParamVector> = Vec::with_capacity(grads.len().saturating_sub(1));
    for g in &grads[..grads.len() - 1] {
        let next = match out.last() {
            Some(prev) => prev.add(g),
            None => g.clone(),
        };
        out.push(next);
    }
    out
}

/// `θ̇ = −∇E(θ)` on the pooled schedule.
pub fn gradient_flow<'a>(problem: &'a dyn Problem, schedule: &BatchSchedule) -> Result<VectorField<'a>> {
    build_field(FieldKind::GradientFlow, problem, schedule, 0.0, None, DerivativeConfig::default())
}

/// `θ̇ = −∇E − (h/2) H ∇E` on the pooled schedule.
pub fn igr_flow<'a>(problem: &'a dyn Problem, schedule: &BatchSchedule, h: f64) -> Result<VectorField<'a>> {
    build_field(FieldKind::Igr, problem, schedule, h, None, DerivativeConfig::default())
}

/// Modified flow of `n = schedule.len()` SGD steps of size `h` started at
/// `anchor`; it tracks those steps when integrated for time `n h`.
///
/// `θ̇ = −∇Ē − (nh/2) H̄ ∇Ē + (h/n) Σ_{μ≥1} H_μ(θ) Σ_{τ<μ} ∇E_τ(anchor)`
pub fn multi_step_sgd_flow<'a>(
    problem: &'a dyn Problem,
    schedule: &BatchSchedule,
    h: f64,
    anchor: &ParamVector,
) -> Result<VectorField<'a>> {
    build_field(FieldKind::MultiStepSgd, problem, schedule, h, Some(anchor), DerivativeConfig::default())
}

/// As [`multi_step_sgd_flow`] with every anchor gradient taken at the current
/// point instead; with identical batches this is the IGR flow for any `n`.
pub fn multi_step_fullbatch_flow<'a>(problem: &'a dyn Problem, schedule: &BatchSchedule, h: f64) -> Result<VectorField<'a>> {
    build_field(FieldKind::MultiStepFullbatch, problem, schedule, h, None, DerivativeConfig::default())
}

impl<'a> VectorField<'a> {
    /// Replaces the derivative configuration (used for finite-difference fallbacks).
    pub fn with_config(mut self, cfg: DerivativeConfig) -> Result<Self> {
        cfg.validate()?;
        if self.kind.is_anchored() {
            let anchor = self.anchor.take();
            return build_field(self.kind, self.problem, &self.schedule, self.h, anchor.as_ref(), cfg);
        }
        self.cfg = cfg;
        Ok(self)
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.schedule.len()
    }

    pub fn schedule(&self) -> &BatchSchedule {
        &self.schedule
    }

    pub fn anchor(&self) -> Option<&ParamVector> {
        self.anchor.as_ref()
    }

    pub fn problem(&self) -> &'a dyn Problem {
        self.problem
    }

    pub fn derivative_config(&self) -> &DerivativeConfig {
        &self.cfg
    }

    pub fn descriptor(&self) -> FieldDescriptor {
        FieldDescriptor {
            kind: self.kind,
            h: self.h,
            n: self.n(),
            anchor_digest: self.anchor.as_ref().map(|a| digest_values(a.as_slice())),
            problem_descriptor: self.problem.descriptor().clone(),
        }
    }

    pub fn decompose(&self, theta: &ParamVector) -> Result<FieldTerms> {
        check_dim(self.problem.dim(), theta.dim())?;
        let g = pooled_grad(self.problem, theta, &self.schedule, &self.cfg)?;
        let base = g.neg();
        let zeros = ParamVector::zeros(theta.dim());
        if self.h == 0.0 || self.kind == FieldKind::GradientFlow {
            return Ok(FieldTerms { base, drift: zeros.clone(), alignment: zeros });
        }
        let n = self.n() as f64;
        let hg = pooled_hvp(self.problem, theta, &self.schedule, &g, &self.cfg)?;
        let (drift_coeff, alignment) = match self.kind {
            FieldKind::Igr => (self.h / 2.0, zeros),
            FieldKind::MultiStepSgd => (n * self.h / 2.0, self.alignment(theta, &self.anchor_prefix)?),
            FieldKind::MultiStepFullbatch => {
                let grads = self
                    .schedule
                    .batches()
                    .iter()
                    .map(|b| grad(self.problem, theta, b, &self.cfg))
                    .collect::<Result<Vec<_>>>()?;
                (n * self.h / 2.0, self.alignment(theta, &prefix_sums(&grads))?)
            }
            _ => unreachable!("game kinds are rejected at construction"),
        };
        Ok(FieldTerms { base, drift: hg.scaled(-drift_coeff), alignment })
    }

    /// `(h/n) Σ_{μ≥1} H_μ(θ) A_μ`
    fn alignment(&self, theta: &ParamVector, prefix: &[ParamVector]) -> Result<ParamVector> {
        let mut acc = ParamVector::zeros(theta.dim());
        for (batch, a) in self.schedule.batches()[1..].iter().zip(prefix) {
            acc.add_scaled_mut(1.0, &grad_directional_jacobian(self.problem, theta, batch, a, &self.cfg)?);
        }
        Ok(acc.scaled(self.h / self.n() as f64))
    }
}

impl Field for VectorField<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn h(&self) -> f64 {
        self.h
    }

    fn eval(&self, x: &ParamVector) -> Result<ParamVector> {
        Ok(self.decompose(x)?.total())
    }
}

/// Field given by a closure; used for closed-form test systems.
pub struct FnField<F> {
    dim: usize,
    h: f64,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&ParamVector) -> ParamVector + Send + Sync,
{
    pub fn new(dim: usize, h: f64, f: F) -> Self {
        Self { dim, h, f }
    }
}

impl<F> Field for FnField<F>
where
    F: Fn(&ParamVector) -> ParamVector + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn h(&self) -> f64 {
        self.h
    }

    fn eval(&self, x: &ParamVector) -> Result<ParamVector> {
        check_dim(self.dim, x.dim())?;
        Ok((self.f)(x))
    }
}
