//! Modified losses whose negative gradients are the modified flows, the
//! expectation of the n-step loss over batch shufflings, and the GAN
//! interaction-coefficient matrices.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::calculus::{game_grads, grad, DerivativeConfig};
use crate::error::{check_dim, Error, Result};
use crate::param::ParamVector;
use crate::problems::{pooled_loss, BatchSchedule, Game, Player, Problem};
use crate::table::{fmt_f64, CsvTable};

/// Largest schedule accepted by brute-force permutation enumeration.
pub const MAX_ENUMERATION: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerBreakdown {
    pub base_loss: f64,
    /// Gradient-norm penalty, coefficient applied.
    pub norm_term: f64,
    /// Batch-alignment term (single objective) or interaction term (games),
    /// coefficient applied.
    pub alignment_term: f64,
    pub total: f64,
}

impl RegularizerBreakdown {
    pub fn new(base_loss: f64, norm_term: f64, alignment_term: f64) -> Self {
        Self { base_loss, norm_term, alignment_term, total: base_loss + norm_term + alignment_term }
    }

    fn mean(items: &[RegularizerBreakdown]) -> Self {
        let k = items.len() as f64;
        let sum = |f: fn(&RegularizerBreakdown) -> f64| items.iter().map(f).sum::<f64>() / k;
        Self::new(sum(|b| b.base_loss), sum(|b| b.norm_term), sum(|b| b.alignment_term))
    }
}

fn check_inputs(problem: &dyn Problem, theta: &ParamVector, h: f64) -> Result<()> {
    check_dim(problem.dim(), theta.dim())?;
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be finite and nonnegative, got {h}")));
    }
    Ok(())
}

fn batch_grads(problem: &dyn Problem, x: &ParamVector, schedule: &BatchSchedule, cfg: &DerivativeConfig) -> Result<Vec<ParamVector>> {
    schedule.batches().iter().map(|b| grad(problem, x, b, cfg)).collect()
}

/// `E + (nh/4)‖∇E‖² − (h/n) Σ_{μ≥1} ∇E(θ; X^μ)ᵀ Σ_{τ<μ} ∇E(anchor; X^τ)`,
/// all losses pooled by the mean over batches.
pub fn modified_loss_sgd(
    problem: &dyn Problem,
    theta: &ParamVector,
    schedule: &BatchSchedule,
    h: f64,
    anchor: Option<&ParamVector>,
    cfg: &DerivativeConfig,
) -> Result<RegularizerBreakdown> {
    check_inputs(problem, theta, h)?;
    let anchor = anchor.ok_or(Error::MissingAnchor("multi_step_sgd"))?;
    check_dim(problem.dim(), anchor.dim())?;
    let here = batch_grads(problem, theta, schedule, cfg)?;
    let there = if anchor == theta { here.clone() } else { batch_grads(problem, anchor, schedule, cfg)? };
    let n = schedule.len() as f64;
    let mean = ParamVector::mean(&here);
    let mut prefix = ParamVector::zeros(theta.dim());
    let mut pairing = 0.0;
    for mu in 1..here.len() {
        prefix.add_scaled_mut(1.0, &there[mu - 1]);
        pairing += here[mu].dot(&prefix);
    }
    Ok(RegularizerBreakdown::new(
        pooled_loss(problem, theta, schedule),
        n * h / 4.0 * mean.norm_squared(),
        -h / n * pairing,
    ))
}

/// `E + (h/4)‖∇E‖²` on the pooled schedule.
pub fn modified_loss_igr(
    problem: &dyn Problem,
    theta: &ParamVector,
    schedule: &BatchSchedule,
    h: f64,
    cfg: &DerivativeConfig,
) -> Result<RegularizerBreakdown> {
    check_inputs(problem, theta, h)?;
    let g = ParamVector::mean(&batch_grads(problem, theta, schedule, cfg)?);
    Ok(RegularizerBreakdown::new(pooled_loss(problem, theta, schedule), h / 4.0 * g.norm_squared(), 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationMethod {
    ClosedForm,
    BruteForce,
}

/// Mean of [`modified_loss_sgd`] over all orderings of the schedule.
///
/// The closed form is
/// `E + (nh/4)‖∇E‖² − (h/2n) (Σ_k g_k)ᵀ(Σ_k a_k) + (h/2n) Σ_k g_kᵀ a_k`
/// with `g_k = ∇E(θ; X^k)` and `a_k = ∇E(anchor; X^k)`: each ordered pair of
/// distinct batches appears in half of the orderings.
pub fn expected_shuffled_loss(
    problem: &dyn Problem,
    theta: &ParamVector,
    schedule: &BatchSchedule,
    h: f64,
    anchor: Option<&ParamVector>,
    method: ExpectationMethod,
    cfg: &DerivativeConfig,
) -> Result<RegularizerBreakdown> {
    check_inputs(problem, theta, h)?;
    let anchor = anchor.ok_or(Error::MissingAnchor("multi_step_sgd"))?;
    check_dim(problem.dim(), anchor.dim())?;
    let n = schedule.len();
    match method {
        ExpectationMethod::BruteForce => {
            if n > MAX_ENUMERATION {
                return Err(Error::TooManyPermutations { n, max: MAX_ENUMERATION });
            }
            let all = (0..n)
                .permutations(n)
                .map(|order| modified_loss_sgd(problem, theta, &schedule.permuted(&order)?, h, Some(anchor), cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(RegularizerBreakdown::mean(&all))
        }
        ExpectationMethod::ClosedForm => {
            let g = batch_grads(problem, theta, schedule, cfg)?;
            let a = batch_grads(problem, anchor, schedule, cfg)?;
            let nf = n as f64;
            let sum_g = g.iter().fold(ParamVector::zeros(theta.dim()), |acc, v| acc.add(v));
            let sum_a = a.iter().fold(ParamVector::zeros(theta.dim()), |acc, v| acc.add(v));
            let diagonal: f64 = g.iter().zip(&a).map(|(x, y)| x.dot(y)).sum();
            let mean = sum_g.scaled(1.0 / nf);
            Ok(RegularizerBreakdown::new(
                pooled_loss(problem, theta, schedule),
                nf * h / 4.0 * mean.norm_squared(),
                -h / (2.0 * nf) * (sum_g.dot(&sum_a) - diagonal),
            ))
        }
    }
}

/// Anchored modified losses of both players:
/// `Ẽ_φ = E_φ + h(¼‖∇_φE_φ‖² + ½ ∇_θE_φᵀ ∇_θE_θ(anchor))` and the mirror
/// image for `θ`. `alignment_term` holds the interaction part.
pub fn game_modified_losses(
    game: &dyn Game,
    phi: &ParamVector,
    theta: &ParamVector,
    h: f64,
    anchor: Option<(&ParamVector, &ParamVector)>,
    cfg: &DerivativeConfig,
) -> Result<(RegularizerBreakdown, RegularizerBreakdown)> {
    let (phi_a, theta_a) = anchor.ok_or(Error::MissingAnchor("game_anchored"))?;
    check_dim(game.dim_phi(), phi.dim())?;
    check_dim(game.dim_theta(), theta.dim())?;
    check_dim(game.dim_phi(), phi_a.dim())?;
    check_dim(game.dim_theta(), theta_a.dim())?;
    if !(h.is_finite() && h >= 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be finite and nonnegative, got {h}")));
    }
    let here = game_grads(game, phi, theta, cfg)?;
    let there = game_grads(game, phi_a, theta_a, cfg)?;
    let e_phi = RegularizerBreakdown::new(
        game.loss(Player::Phi, phi, theta),
        h / 4.0 * here.phi_phi.norm_squared(),
        h / 2.0 * here.phi_theta.dot(&there.theta_theta),
    );
    let e_theta = RegularizerBreakdown::new(
        game.loss(Player::Theta, phi, theta),
        h / 4.0 * here.theta_theta.norm_squared(),
        h / 2.0 * here.theta_phi.dot(&there.phi_phi),
    );
    Ok((e_phi, e_theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffMode {
    NonSaturating,
    Saturating,
}

impl CoeffMode {
    pub fn name(self) -> &'static str {
        match self {
            CoeffMode::NonSaturating => "non_saturating",
            CoeffMode::Saturating => "saturating",
        }
    }
}

/// `entries[i][j]` pairs current sample `i` with previous sample `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffMatrix {
    pub entries: Vec<Vec<f64>>,
    pub mode: CoeffMode,
}

impl CoeffMatrix {
    /// Row per current index, column per previous index.
    pub fn to_csv(&self) -> CsvTable {
        let cols = self.entries.first().map_or(0, Vec::len);
        let mut t = CsvTable::new(std::iter::once("current".to_string()).chain((0..cols).map(|j| format!("prev{j}"))));
        for (i, row) in self.entries.iter().enumerate() {
            t.push_row(std::iter::once(i.to_string()).chain(row.iter().map(|v| fmt_f64(*v))).collect());
        }
        t
    }
}

fn check_probabilities(values: &[f64], name: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} must not be empty")));
    }
    match values.iter().find(|&&d| !(d > 0.0 && d < 1.0)) {
        Some(&value) => Err(Error::Domain { value }),
        None => Ok(()),
    }
}

/// Non-saturating: `1/(1 − d_cur_i) · 1/d_prev_j`.
/// Saturating: `1/(1 − d_cur_i) · 1/(1 − d_prev_j)`.
pub fn gan_interaction_coeffs(d_current: &[f64], d_prev: &[f64], mode: CoeffMode) -> Result<CoeffMatrix> {
    check_probabilities(d_current, "d_current")?;
    check_probabilities(d_prev, "d_prev")?;
    let entries = d_current
        .iter()
        .map(|&c| {
            d_prev
                .iter()
                .map(|&p| match mode {
                    CoeffMode::NonSaturating => (1.0 / (1.0 - c)) * (1.0 / p),
                    CoeffMode::Saturating => (1.0 / (1.0 - c)) * (1.0 / (1.0 - p)),
                })
                .collect()
        })
        .collect();
    Ok(CoeffMatrix { entries, mode })
}
