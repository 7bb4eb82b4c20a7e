//! Order-of-error experiments: discrete optimizer endpoints against flow
//! solutions over a ladder of learning rates, with log-log slope fits, plus
//! the batch-order permutation study.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{pooled_grad, DerivativeConfig};
use crate::error::{check_dim, Error, Result};
use crate::flows::{build_field, game_anchored_flow, game_bea_flow, simultaneous_gradient_field, FieldKind, GameFieldPair};
use crate::integrators::{integrate, integrate_pair, IntegratorConfig};
use crate::optimizers::{sgd_steps_with, simultaneous_gd_with};
use crate::param::ParamVector;
use crate::problems::{digest_values, short_digest, BatchSchedule, Game, Problem};
use crate::regularizers::{expected_shuffled_loss, modified_loss_sgd, ExpectationMethod};
use crate::table::{fmt_f64, CsvTable};

/// Smallest learning rate accepted on a ladder.
pub const MIN_LADDER_H: f64 = 1.0 / 4096.0;
/// Minimum number of valid ladder points for a slope fit.
pub const MIN_LADDER_POINTS: usize = 4;
/// Largest schedule accepted by [`batch_order_study`].
pub const MAX_ORDER_STUDY: usize = 5;

/// `2^-4, ..., 2^-9`
pub fn default_ladder() -> Vec<f64> {
    (4..=9).map(|k| 2f64.powi(-k)).collect()
}

/// Parses `"2^-4..2^-9"` (inclusive powers of two) or a comma-separated list.
pub fn parse_ladder(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    let bad = || Error::InvalidArgument(format!("ladder: cannot parse {spec:?}"));
    let values = if let Some((a, b)) = spec.split_once("..") {
        let exp = |s: &str| -> Result<i32> { s.trim().strip_prefix("2^").ok_or_else(bad)?.parse::<i32>().map_err(|_| bad()) };
        let (lo, hi) = (exp(a)?, exp(b)?);
        if lo < hi {
            return Err(Error::InvalidArgument(format!("ladder: {spec:?} must run from larger to smaller h")));
        }
        (hi..=lo).rev().map(|k| 2f64.powi(k)).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?
    };
    validate_ladder(&values)?;
    Ok(values)
}

/// At least four values, strictly decreasing, each in `[2^-12, ∞)`.
pub fn validate_ladder(values: &[f64]) -> Result<()> {
    if values.len() < MIN_LADDER_POINTS {
        return Err(Error::InvalidArgument(format!("ladder: need at least {MIN_LADDER_POINTS} values, got {}", values.len())));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= MIN_LADDER_H)) {
        return Err(Error::InvalidArgument(format!("ladder: value {v} below the 2^-12 floor or not finite")));
    }
    if values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("ladder: values must be strictly decreasing".into()));
    }
    Ok(())
}

/// Inclusive acceptance interval for a fitted slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn around(center: f64, half_width: f64) -> Self {
        Self { lo: center - half_width, hi: center + half_width }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Expected slope ±0.25 for a flow kind: 2 for unmodified flows, 3 otherwise.
    pub fn expected_for(kind: FieldKind) -> Self {
        match kind {
            FieldKind::GradientFlow | FieldKind::SimultaneousGradient => Self::around(2.0, 0.25),
            _ => Self::around(3.0, 0.25),
        }
    }
}

impl std::str::FromStr for Band {
    type Err = Error;

    /// `"LO:HI"`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("band: expected LO:HI, got {s:?}"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let lo: f64 = a.trim().parse().map_err(|_| bad())?;
        let hi: f64 = b.trim().parse().map_err(|_| bad())?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(bad());
        }
        Ok(Self { lo, hi })
    }
}

/// Ordinary least squares of `ln error` on `ln h`: `(slope, intercept, r²)`.
pub fn fit_slope(h_values: &[f64], errors: &[f64]) -> Result<(f64, f64, f64)> {
    if h_values.len() != errors.len() {
        return Err(Error::InvalidArgument("fit: h and error lengths differ".into()));
    }
    if h_values.len() < 2 {
        return Err(Error::InsufficientPoints { required: 2, found: h_values.len() });
    }
    if let Some(v) = h_values.iter().chain(errors).find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidArgument(format!("fit: values must be positive and finite, got {v}")));
    }
    let xs: Vec<f64> = h_values.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("fit: h values must not all be equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok((slope, intercept, r_squared))
}

/// How the anchor of anchored flows is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum AnchorPolicy {
    /// The experiment's starting point.
    StartPoint,
    /// A fixed vector (stacked `(φ, θ)` for games).
    Explicit(Vec<f64>),
}

impl AnchorPolicy {
    fn resolve(&self, start: &ParamVector) -> Result<ParamVector> {
        match self {
            AnchorPolicy::StartPoint => Ok(start.clone()),
            AnchorPolicy::Explicit(v) => {
                check_dim(start.dim(), v.len())?;
                ParamVector::new(v.clone())
            }
        }
    }
}

/// One rung of the ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub h: f64,
    /// Euclidean endpoint distance; `None` when the point is invalid.
    pub error: Option<f64>,
    /// Per-player endpoint distances for games.
    pub error_phi: Option<f64>,
    pub error_theta: Option<f64>,
    /// Norms of the field decomposition at the start point:
    /// `[base, drift or self, alignment or interaction]`.
    pub term_norms: [f64; 3],
    pub failure: Option<String>,
}

impl LadderPoint {
    fn failed(h: f64, why: String) -> Self {
        Self { h, error: None, error_phi: None, error_theta: None, term_norms: [f64::NAN; 3], failure: Some(why) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub kind: FieldKind,
    /// Valid ladder values, strictly decreasing.
    pub h_values: Vec<f64>,
    /// Endpoint errors matching `h_values`.
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Every ladder point in ladder order, including invalid ones.
    pub points: Vec<LadderPoint>,
    pub config_digest: String,
}

impl SlopeReport {
    fn from_points(kind: FieldKind, points: Vec<LadderPoint>, config_digest: String) -> Result<Self> {
        let (h_values, errors): (Vec<f64>, Vec<f64>) = points.iter().filter_map(|p| p.error.map(|e| (p.h, e))).unzip();
        if h_values.len() < MIN_LADDER_POINTS {
            return Err(Error::InsufficientPoints { required: MIN_LADDER_POINTS, found: h_values.len() });
        }
        let (slope, intercept, r_squared) = fit_slope(&h_values, &errors)?;
        Ok(Self { kind, h_values, errors, slope, intercept, r_squared, points, config_digest })
    }

    /// Columns `h, error, error_phi, error_theta, base_norm, correction_norm,
    /// alignment_norm, valid`; missing values are empty cells.
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["h", "error", "error_phi", "error_theta", "base_norm", "correction_norm", "alignment_norm", "valid"]);
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for p in &self.points {
            let mut row = vec![fmt_f64(p.h), opt(p.error), opt(p.error_phi), opt(p.error_theta)];
            row.extend(p.term_norms.iter().map(|v| if v.is_finite() { fmt_f64(*v) } else { String::new() }));
            row.push(p.error.is_some().to_string());
            t.push_row(row);
        }
        t
    }
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Divergence { .. } | Error::DivergedAtStep { .. } | Error::DifferentiationFailure { .. })
}

/// Keeps divergences as invalid points; propagates everything else.
fn settle(h: f64, r: Result<LadderPoint>) -> Result<LadderPoint> {
    match r {
        Ok(p) if p.error == Some(0.0) => Ok(LadderPoint { error: None, failure: Some("zero error".into()), ..p }),
        Ok(p) => Ok(p),
        Err(e) if is_divergence(&e) => {
            log::warn!("ladder point h = {h} invalid: {e}");
            Ok(LadderPoint::failed(h, e.to_string()))
        }
        Err(e) => Err(e),
    }
}

/// Runs `n = schedule.len()` SGD steps of size `h` from `θ_0` and integrates
/// the selected flow for time `n h`, for each `h` on the ladder.
#[allow(clippy::too_many_arguments)]
pub fn order_check_single(
    problem: &dyn Problem,
    theta0: &ParamVector,
    schedule: &BatchSchedule,
    kind: FieldKind,
    ladder: &[f64],
    anchor: &AnchorPolicy,
    integrator: &IntegratorConfig,
    derivatives: &DerivativeConfig,
) -> Result<SlopeReport> {
    validate_ladder(ladder)?;
    integrator.validate()?;
    check_dim(problem.dim(), theta0.dim())?;
    if kind.is_game() {
        return Err(Error::InvalidArgument(format!("{kind} needs a game")));
    }
    let anchor = anchor.resolve(theta0)?;
    let n = schedule.len() as f64;
    let points = ladder
        .par_iter()
        .map(|&h| {
            let run = || -> Result<LadderPoint> {
                let discrete = sgd_steps_with(problem, theta0, h, schedule, derivatives)?;
                let field = build_field(kind, problem, schedule, h, Some(&anchor), *derivatives)?;
                let flow = integrate(&field, theta0, n * h, integrator)?;
                let terms = field.decompose(theta0)?;
                Ok(LadderPoint {
                    h,
                    error: Some(discrete.last().distance(&flow)),
                    error_phi: None,
                    error_theta: None,
                    term_norms: [terms.base.norm(), terms.drift.norm(), terms.alignment.norm()],
                    failure: None,
                })
            };
            settle(h, run())
        })
        .collect::<Result<Vec<_>>>()?;
    let digest = short_digest(
        format!(
            "{kind:?}|{ladder:?}|{integrator:?}|{derivatives:?}|{:?}|{}|{}|{}",
            problem.descriptor(),
            schedule.digest(),
            digest_values(theta0.as_slice()),
            digest_values(anchor.as_slice())
        )
        .as_bytes(),
    );
    SlopeReport::from_points(kind, points, digest)
}

fn game_pair<'a>(game: &'a dyn Game, kind: FieldKind, h: f64, anchor: (&ParamVector, &ParamVector), cfg: DerivativeConfig) -> Result<GameFieldPair<'a>> {
    match kind {
        FieldKind::SimultaneousGradient => simultaneous_gradient_field(game).with_config(cfg),
        FieldKind::GameBea => game_bea_flow(game, h)?.with_config(cfg),
        FieldKind::GameAnchored => game_anchored_flow(game, h, Some(anchor))?.with_config(cfg),
        other => Err(Error::InvalidArgument(format!("{other} is not a game flow"))),
    }
}

/// One simultaneous GD step against the selected game flow over time `h`.
#[allow(clippy::too_many_arguments)]
pub fn order_check_game(
    game: &dyn Game,
    phi0: &ParamVector,
    theta0: &ParamVector,
    kind: FieldKind,
    ladder: &[f64],
    anchor: &AnchorPolicy,
    integrator: &IntegratorConfig,
    derivatives: &DerivativeConfig,
) -> Result<SlopeReport> {
    validate_ladder(ladder)?;
    integrator.validate()?;
    check_dim(game.dim_phi(), phi0.dim())?;
    check_dim(game.dim_theta(), theta0.dim())?;
    let start = phi0.concat(theta0);
    let (phi_a, theta_a) = anchor.resolve(&start)?.split_at(game.dim_phi());
    let points = ladder
        .par_iter()
        .map(|&h| {
            let run = || -> Result<LadderPoint> {
                let discrete = simultaneous_gd_with(game, phi0, theta0, h, 1, derivatives)?;
                let (dp, dt) = discrete.last();
                let pair = game_pair(game, kind, h, (&phi_a, &theta_a), *derivatives)?;
                let (fp, ft) = integrate_pair(&pair, phi0, theta0, h, integrator)?;
                let (tp, tt) = pair.decompose(phi0, theta0)?;
                let stacked = |f: fn(&crate::flows::GameFieldTerms) -> &ParamVector| f(&tp).concat(f(&tt)).norm();
                Ok(LadderPoint {
                    h,
                    error: Some(dp.concat(dt).distance(&fp.concat(&ft))),
                    error_phi: Some(dp.distance(&fp)),
                    error_theta: Some(dt.distance(&ft)),
                    term_norms: [stacked(|t| &t.base), stacked(|t| &t.self_term), stacked(|t| &t.interaction)],
                    failure: None,
                })
            };
            settle(h, run())
        })
        .collect::<Result<Vec<_>>>()?;
    let digest = short_digest(
        format!(
            "{kind:?}|{ladder:?}|{integrator:?}|{derivatives:?}|{:?}|{}|{}",
            game.descriptor(),
            digest_values(start.as_slice()),
            digest_values(phi_a.as_slice().iter().chain(theta_a.as_slice()))
        )
        .as_bytes(),
    );
    SlopeReport::from_points(kind, points, digest)
}

/// Result of running every ordering of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOrderReport {
    pub h: f64,
    /// Orderings in lexicographic order; entry `k` lists batch positions.
    pub orders: Vec<Vec<usize>>,
    pub endpoints: Vec<ParamVector>,
    /// Alignment term of the n-step modified loss at the start point (the anchor).
    pub alignment: Vec<f64>,
    /// Distance of each endpoint from the pooled-gradient GD endpoint.
    pub distance_to_pooled: Vec<f64>,
    pub pooled_endpoint: ParamVector,
    pub mean_endpoint: ParamVector,
    pub mean_alignment: f64,
    /// Closed-form shuffling expectation of the alignment term.
    pub expected_alignment: f64,
    /// Spearman correlation of alignment terms and distances; `None` when
    /// either is constant.
    pub rank_correlation: Option<f64>,
}

impl BatchOrderReport {
    /// Columns `order, alignment, distance_to_pooled, p0, p1, ...`; orders are
    /// written as dash-separated positions.
    pub fn to_csv(&self) -> CsvTable {
        let dim = self.pooled_endpoint.dim();
        let header = ["order", "alignment", "distance_to_pooled"].map(String::from).into_iter().chain((0..dim).map(|i| format!("p{i}")));
        let mut t = CsvTable::new(header);
        for k in 0..self.orders.len() {
            let mut row = vec![self.orders[k].iter().join("-"), fmt_f64(self.alignment[k]), fmt_f64(self.distance_to_pooled[k])];
            row.extend(self.endpoints[k].as_slice().iter().map(|v| fmt_f64(*v)));
            t.push_row(row);
        }
        t
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let order: Vec<usize> = (0..values.len()).sorted_by(|&a, &b| values[a].total_cmp(&values[b])).collect();
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let k = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / k, rb.iter().sum::<f64>() / k);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// Runs SGD under every ordering of the schedule and relates endpoints to
/// the alignment term of the modified loss.
pub fn batch_order_study(
    problem: &dyn Problem,
    theta0: &ParamVector,
    schedule: &BatchSchedule,
    h: f64,
    derivatives: &DerivativeConfig,
) -> Result<BatchOrderReport> {
    let n = schedule.len();
    if n < 2 {
        return Err(Error::InvalidArgument("batch order study needs at least 2 batches".into()));
    }
    if n > MAX_ORDER_STUDY {
        return Err(Error::TooManyPermutations { n, max: MAX_ORDER_STUDY });
    }
    check_dim(problem.dim(), theta0.dim())?;
    let mut pooled = theta0.clone();
    for step in 1..=n {
        pooled = pooled.axpy(-h, &pooled_grad(problem, &pooled, schedule, derivatives)?);
        if !pooled.is_finite() {
            return Err(Error::DivergedAtStep { step });
        }
    }
    let orders: Vec<Vec<usize>> = (0..n).permutations(n).collect();
    let mut endpoints = Vec::with_capacity(orders.len());
    let mut alignment = Vec::with_capacity(orders.len());
    for order in &orders {
        let permuted = schedule.permuted(order)?;
        endpoints.push(sgd_steps_with(problem, theta0, h, &permuted, derivatives)?.last().clone());
        alignment.push(modified_loss_sgd(problem, theta0, &permuted, h, Some(theta0), derivatives)?.alignment_term);
    }
    let distance_to_pooled: Vec<f64> = endpoints.iter().map(|e| e.distance(&pooled)).collect();
    let expected = expected_shuffled_loss(problem, theta0, schedule, h, Some(theta0), ExpectationMethod::ClosedForm, derivatives)?;
    Ok(BatchOrderReport {
        h,
        mean_endpoint: ParamVector::mean(&endpoints),
        mean_alignment: alignment.iter().sum::<f64>() / alignment.len() as f64,
        expected_alignment: expected.alignment_term,
        rank_correlation: spearman(&alignment, &distance_to_pooled),
        orders,
        endpoints,
        alignment,
        distance_to_pooled,
        pooled_endpoint: pooled,
    })
}
