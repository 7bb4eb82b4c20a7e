//! Discrete updates: gradient descent, mini-batch SGD over an explicit batch
//! schedule, and simultaneous gradient descent for games.

use crate::calculus::{game_grad, grad, DerivativeConfig};
use crate::error::{check_dim, Error, Result};
use crate::integrators::DIVERGENCE_NORM;
use crate::param::ParamVector;
use crate::problems::{Batch, BatchSchedule, Game, Player, Problem};
use crate::table::{fmt_f64, CsvTable};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `θ_0, ..., θ_n`
    pub iterates: Vec<ParamVector>,
    pub h: f64,
    pub schedule_digest: String,
}

impl Trajectory {
    pub fn last(&self) -> &ParamVector {
        self.iterates.last().expect("trajectories hold the initial point")
    }

    pub fn steps(&self) -> usize {
        self.iterates.len() - 1
    }

    /// Columns `step, p0, p1, ...`.
    pub fn to_csv(&self) -> CsvTable {
        let dim = self.iterates[0].dim();
        let mut t = CsvTable::new(std::iter::once("step".to_string()).chain((0..dim).map(|i| format!("p{i}"))));
        for (step, x) in self.iterates.iter().enumerate() {
            t.push_row(std::iter::once(step.to_string()).chain(x.as_slice().iter().map(|v| fmt_f64(*v))).collect());
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameTrajectory {
    /// `(φ_k, θ_k)` for `k = 0..=n`
    pub iterates: Vec<(ParamVector, ParamVector)>,
    pub h: f64,
}

impl GameTrajectory {
    pub fn last(&self) -> &(ParamVector, ParamVector) {
        self.iterates.last().expect("trajectories hold the initial point")
    }

    /// Columns `step, phi0, ..., theta0, ...`.
    pub fn to_csv(&self) -> CsvTable {
        let (p, t) = &self.iterates[0];
        let header = std::iter::once("step".to_string())
            .chain((0..p.dim()).map(|i| format!("phi{i}")))
            .chain((0..t.dim()).map(|i| format!("theta{i}")));
        let mut table = CsvTable::new(header);
        for (step, (p, t)) in self.iterates.iter().enumerate() {
            let row = std::iter::once(step.to_string())
                .chain(p.as_slice().iter().chain(t.as_slice()).map(|v| fmt_f64(*v)))
                .collect();
            table.push_row(row);
        }
        table
    }
}

fn check_step_size(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("learning rate must be positive, got {h}")))
    }
}

fn healthy(x: &ParamVector) -> bool {
    x.is_finite() && x.norm() <= DIVERGENCE_NORM
}

/// One step `θ ← θ − h ∇E(θ; X^μ)` per batch, in schedule order.
pub fn sgd_steps(problem: &dyn Problem, theta0: &ParamVector, h: f64, schedule: &BatchSchedule) -> Result<Trajectory> {
    sgd_steps_with(problem, theta0, h, schedule, &DerivativeConfig::default())
}

pub fn sgd_steps_with(
    problem: &dyn Problem,
    theta0: &ParamVector,
    h: f64,
    schedule: &BatchSchedule,
    cfg: &DerivativeConfig,
) -> Result<Trajectory> {
    check_step_size(h)?;
    check_dim(problem.dim(), theta0.dim())?;
    let mut iterates = Vec::with_capacity(schedule.len() + 1);
    iterates.push(theta0.clone());
    for (i, batch) in schedule.batches().iter().enumerate() {
        let x = iterates.last().expect("nonempty");
        let g = grad(problem, x, batch, cfg).map_err(|e| match e {
            Error::DifferentiationFailure { .. } => Error::DivergedAtStep { step: i + 1 },
            other => other,
        })?;
        let next = x.axpy(-h, &g);
        if !healthy(&next) {
            return Err(Error::DivergedAtStep { step: i + 1 });
        }
        iterates.push(next);
    }
    Ok(Trajectory { iterates, h, schedule_digest: schedule.digest() })
}

/// `n` full-batch steps on `batch`.
pub fn gd_steps(problem: &dyn Problem, theta0: &ParamVector, h: f64, batch: &Batch, n: usize) -> Result<Trajectory> {
    sgd_steps(problem, theta0, h, &BatchSchedule::repeated(batch, n)?)
}

/// `n` steps of `(φ, θ) ← (φ − h ∇_φ E_φ, θ − h ∇_θ E_θ)`, both gradients at
/// the pre-update pair.
pub fn simultaneous_gd(game: &dyn Game, phi0: &ParamVector, theta0: &ParamVector, h: f64, n: usize) -> Result<GameTrajectory> {
    simultaneous_gd_with(game, phi0, theta0, h, n, &DerivativeConfig::default())
}

pub fn simultaneous_gd_with(
    game: &dyn Game,
    phi0: &ParamVector,
    theta0: &ParamVector,
    h: f64,
    n: usize,
    cfg: &DerivativeConfig,
) -> Result<GameTrajectory> {
    check_step_size(h)?;
    if n == 0 {
        return Err(Error::InvalidArgument("number of steps must be at least 1".into()));
    }
    check_dim(game.dim_phi(), phi0.dim())?;
    check_dim(game.dim_theta(), theta0.dim())?;
    let mut iterates = vec![(phi0.clone(), theta0.clone())];
    for step in 1..=n {
        let (phi, theta) = iterates.last().expect("nonempty");
        let gp = game_grad(game, Player::Phi, Player::Phi, phi, theta, cfg)?;
        let gt = game_grad(game, Player::Theta, Player::Theta, phi, theta, cfg)?;
        let next = (phi.axpy(-h, &gp), theta.axpy(-h, &gt));
        if !healthy(&next.0) || !healthy(&next.1) {
            return Err(Error::DivergedAtStep { step });
        }
        iterates.push(next);
    }
    Ok(GameTrajectory { iterates, h })
}
