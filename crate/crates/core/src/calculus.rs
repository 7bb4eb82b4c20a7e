//! Gradient and directional second-derivative oracles.
//!
//! Analytic derivatives are used whenever the problem provides them. Every
//! quantity also has a central finite-difference path so the two can be
//! cross-validated with [`check_problem_gradient`] and [`check_game_gradient`].

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::param::ParamVector;
use crate::problems::{seeded_rng, Batch, BatchSchedule, Game, Player, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeConfig {
    pub fd_step_scale: f64,
    pub tolerance_abs: f64,
    pub tolerance_rel: f64,
}

impl Default for DerivativeConfig {
    fn default() -> Self {
        Self { fd_step_scale: 1e-5, tolerance_abs: 1e-6, tolerance_rel: 1e-4 }
    }
}

impl DerivativeConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("fd_step_scale", self.fd_step_scale),
            ("tolerance_abs", self.tolerance_abs),
            ("tolerance_rel", self.tolerance_rel),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be strictly positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `max(tolerance_abs, tolerance_rel * scale)`
    pub fn tolerance_for(&self, scale: f64) -> f64 {
        self.tolerance_abs.max(self.tolerance_rel * scale)
    }
}

/// Central-difference gradient of a scalar function, step
/// `fd_step_scale * (1 + |x_k|)` per component.
pub fn fd_gradient<F>(f: F, point: &ParamVector, cfg: &DerivativeConfig) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> f64,
{
    let mut out = Vec::with_capacity(point.dim());
    let mut probe = point.clone();
    for k in 0..point.dim() {
        let x = point[k];
        let step = cfg.fd_step_scale * (1.0 + x.abs());
        probe.as_mut_slice()[k] = x + step;
        let plus = f(&probe);
        probe.as_mut_slice()[k] = x - step;
        let minus = f(&probe);
        probe.as_mut_slice()[k] = x;
        let d = (plus - minus) / (2.0 * step);
        if !d.is_finite() {
            return Err(Error::DifferentiationFailure {
                component: k,
                detail: format!("non-finite loss values ({plus}, {minus})"),
            });
        }
        out.push(d);
    }
    Ok(ParamVector::from_vec(out))
}

/// Central difference of a vector field along `direction`, step
/// `fd_step_scale * (1 + |x|) / max(|v|, 1e-12)`.
pub fn fd_directional<F>(field: F, point: &ParamVector, direction: &ParamVector, cfg: &DerivativeConfig) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> Result<ParamVector>,
{
    check_dim(point.dim(), direction.dim())?;
    let vnorm = direction.norm();
    if vnorm == 0.0 {
        return Ok(ParamVector::zeros(field(point)?.dim()));
    }
    let eps = cfg.fd_step_scale * (1.0 + point.norm()) / vnorm.max(1e-12);
    let plus = field(&point.axpy(eps, direction))?;
    let minus = field(&point.axpy(-eps, direction))?;
    let out = plus.sub(&minus).scaled(1.0 / (2.0 * eps));
    if let Some(k) = out.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::DifferentiationFailure { component: k, detail: "non-finite gradient difference".into() });
    }
    Ok(out)
}

fn check_params(problem: &dyn Problem, params: &ParamVector) -> Result<()> {
    if problem.dim() == 0 {
        return Err(Error::InvalidArgument("zero-dimensional problem".into()));
    }
    check_dim(problem.dim(), params.dim())
}

/// `∇E(θ; X)`: mean of analytic per-example gradients, or central
/// differences of the batch loss when any example lacks one.
pub fn grad(problem: &dyn Problem, params: &ParamVector, batch: &Batch, cfg: &DerivativeConfig) -> Result<ParamVector> {
    check_params(problem, params)?;
    let analytic: Option<Vec<ParamVector>> = batch.examples().iter().map(|e| problem.example_grad(params, e)).collect();
    match analytic {
        Some(gs) => Ok(ParamVector::mean(&gs)),
        None => grad_fd(problem, params, batch, cfg),
    }
}

/// Finite-difference gradient regardless of analytic availability.
pub fn grad_fd(problem: &dyn Problem, params: &ParamVector, batch: &Batch, cfg: &DerivativeConfig) -> Result<ParamVector> {
    check_params(problem, params)?;
    fd_gradient(|p| problem.batch_loss(p, batch), params, cfg)
}

/// `H(θ; X) v`: analytic Hessian-vector product when every example has one,
/// otherwise a central difference of [`grad`] along `v`.
pub fn grad_directional_jacobian(
    problem: &dyn Problem,
    params: &ParamVector,
    batch: &Batch,
    direction: &ParamVector,
    cfg: &DerivativeConfig,
) -> Result<ParamVector> {
    check_params(problem, params)?;
    check_dim(params.dim(), direction.dim())?;
    let analytic: Option<Vec<ParamVector>> = batch
        .examples()
        .iter()
        .map(|e| problem.example_hvp(params, e, direction))
        .collect();
    match analytic {
        Some(hs) => Ok(ParamVector::mean(&hs)),
        None => hvp_fd(problem, params, batch, direction, cfg),
    }
}

/// Finite-difference Hessian-vector product of the (preferred) gradient.
pub fn hvp_fd(
    problem: &dyn Problem,
    params: &ParamVector,
    batch: &Batch,
    direction: &ParamVector,
    cfg: &DerivativeConfig,
) -> Result<ParamVector> {
    check_params(problem, params)?;
    fd_directional(|p| grad(problem, p, batch, cfg), params, direction, cfg)
}

/// Gradient of the pooled loss: mean of the batch gradients.
pub fn pooled_grad(problem: &dyn Problem, params: &ParamVector, schedule: &BatchSchedule, cfg: &DerivativeConfig) -> Result<ParamVector> {
    let gs = schedule
        .batches()
        .iter()
        .map(|b| grad(problem, params, b, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamVector::mean(&gs))
}

/// Hessian of the pooled loss applied to `direction`.
pub fn pooled_hvp(
    problem: &dyn Problem,
    params: &ParamVector,
    schedule: &BatchSchedule,
    direction: &ParamVector,
    cfg: &DerivativeConfig,
) -> Result<ParamVector> {
    let hs = schedule
        .batches()
        .iter()
        .map(|b| grad_directional_jacobian(problem, params, b, direction, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamVector::mean(&hs))
}

fn check_game_point(game: &dyn Game, phi: &ParamVector, theta: &ParamVector) -> Result<()> {
    check_dim(game.dim_phi(), phi.dim())?;
    check_dim(game.dim_theta(), theta.dim())
}

fn block<'a>(which: Player, phi: &'a ParamVector, theta: &'a ParamVector) -> &'a ParamVector {
    match which {
        Player::Phi => phi,
        Player::Theta => theta,
    }
}

/// Evaluates `f(φ, θ)` with the `which` block replaced by `x`.
fn with_block<T>(which: Player, x: &ParamVector, phi: &ParamVector, theta: &ParamVector, f: impl Fn(&ParamVector, &ParamVector) -> T) -> T {
    match which {
        Player::Phi => f(x, theta),
        Player::Theta => f(phi, x),
    }
}

/// `∇_wrt E_loss`, analytic when available.
pub fn game_grad(
    game: &dyn Game,
    loss: Player,
    wrt: Player,
    phi: &ParamVector,
    theta: &ParamVector,
    cfg: &DerivativeConfig,
) -> Result<ParamVector> {
    check_game_point(game, phi, theta)?;
    match game.grad(loss, wrt, phi, theta) {
        Some(g) => Ok(g),
        None => game_grad_fd(game, loss, wrt, phi, theta, cfg),
    }
}

pub fn game_grad_fd(
    game: &dyn Game,
    loss: Player,
    wrt: Player,
    phi: &ParamVector,
    theta: &ParamVector,
    cfg: &DerivativeConfig,
) -> Result<ParamVector> {
    check_game_point(game, phi, theta)?;
    fd_gradient(
        |x| with_block(wrt, x, phi, theta, |p, t| game.loss(loss, p, t)),
        block(wrt, phi, theta),
        cfg,
    )
}

/// The four block gradients of a game at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GameGrads {
    /// `∇_φ E_φ`
    pub phi_phi: ParamVector,
    /// `∇_θ E_φ`
    pub phi_theta: ParamVector,
    /// `∇_φ E_θ`
    pub theta_phi: ParamVector,
    /// `∇_θ E_θ`
    pub theta_theta: ParamVector,
}

pub fn game_grads(game: &dyn Game, phi: &ParamVector, theta: &ParamVector, cfg: &DerivativeConfig) -> Result<GameGrads> {
    Ok(GameGrads {
        phi_phi: game_grad(game, Player::Phi, Player::Phi, phi, theta, cfg)?,
        phi_theta: game_grad(game, Player::Phi, Player::Theta, phi, theta, cfg)?,
        theta_phi: game_grad(game, Player::Theta, Player::Phi, phi, theta, cfg)?,
        theta_theta: game_grad(game, Player::Theta, Player::Theta, phi, theta, cfg)?,
    })
}

/// Selects `J_along(∇_wrt E_loss)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedDerivative {
    pub loss: Player,
    pub wrt: Player,
    pub along: Player,
}

impl MixedDerivative {
    /// `J_θ(∇_φ E_φ)`, the first player's interaction Jacobian.
    pub const PHI_INTERACTION: Self = Self { loss: Player::Phi, wrt: Player::Phi, along: Player::Theta };
    /// `J_φ(∇_θ E_θ)`, the second player's interaction Jacobian.
    pub const THETA_INTERACTION: Self = Self { loss: Player::Theta, wrt: Player::Theta, along: Player::Phi };
    /// `J_φ(∇_φ E_φ)`
    pub const PHI_SELF: Self = Self { loss: Player::Phi, wrt: Player::Phi, along: Player::Phi };
    /// `J_θ(∇_θ E_θ)`
    pub const THETA_SELF: Self = Self { loss: Player::Theta, wrt: Player::Theta, along: Player::Theta };
}

/// Directional derivative of a block gradient, analytic or central FD.
pub fn game_mixed_directional(
    game: &dyn Game,
    which: MixedDerivative,
    phi: &ParamVector,
    theta: &ParamVector,
    v: &ParamVector,
    cfg: &DerivativeConfig,
) -> Result<ParamVector> {
    check_game_point(game, phi, theta)?;
    check_dim(game.dim_of(which.along), v.dim())?;
    match game.grad_jacobian_product(which.loss, which.wrt, which.along, phi, theta, v) {
        Some(out) => Ok(out),
        None => game_mixed_fd(game, which, phi, theta, v, cfg),
    }
}

pub fn game_mixed_fd(
    game: &dyn Game,
    which: MixedDerivative,
    phi: &ParamVector,
    theta: &ParamVector,
    v: &ParamVector,
    cfg: &DerivativeConfig,
) -> Result<ParamVector> {
    check_game_point(game, phi, theta)?;
    check_dim(game.dim_of(which.along), v.dim())?;
    let base = block(which.along, phi, theta);
    if v.norm() == 0.0 {
        return Ok(ParamVector::zeros(game.dim_of(which.wrt)));
    }
    fd_directional(
        |x| with_block(which.along, x, phi, theta, |p, t| game_grad(game, which.loss, which.wrt, p, t, cfg)),
        base,
        v,
        cfg,
    )
}

/// Result of an analytic-versus-FD comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub max_abs: f64,
    pub max_rel: f64,
    pub passed: bool,
    pub points_tested: usize,
}

#[derive(Default)]
struct Accumulator {
    max_abs: f64,
    max_rel: f64,
    passed: bool,
    points: usize,
}

impl Accumulator {
    fn new() -> Self {
        Self { passed: true, ..Default::default() }
    }

    fn compare(&mut self, analytic: &ParamVector, numeric: &ParamVector, cfg: &DerivativeConfig) {
        let diff = analytic.max_abs_diff(numeric);
        let scale = numeric.norm();
        self.max_abs = self.max_abs.max(diff);
        self.max_rel = self.max_rel.max(diff / scale.max(f64::MIN_POSITIVE));
        if diff.is_nan() || diff > cfg.tolerance_for(scale) {
            self.passed = false;
        }
    }

    fn finish(self) -> CheckReport {
        CheckReport { max_abs: self.max_abs, max_rel: self.max_rel, passed: self.passed, points_tested: self.points }
    }
}

/// Compares analytic gradients (and Hessian-vector products, where provided)
/// with central differences on `batch` at each point.
pub fn check_problem_gradient(problem: &dyn Problem, points: &[ParamVector], batch: &Batch, cfg: &DerivativeConfig) -> Result<CheckReport> {
    cfg.validate()?;
    let mut acc = Accumulator::new();
    let mut rng = seeded_rng(0x5eed);
    for p in points {
        check_params(problem, p)?;
        let analytic: Option<Vec<ParamVector>> = batch.examples().iter().map(|e| problem.example_grad(p, e)).collect();
        if let Some(gs) = analytic {
            acc.compare(&ParamVector::mean(&gs), &grad_fd(problem, p, batch, cfg)?, cfg);
        }
        let dir = ParamVector::random_uniform(p.dim(), &mut rng, -1.0, 1.0);
        let analytic_hvp: Option<Vec<ParamVector>> =
            batch.examples().iter().map(|e| problem.example_hvp(p, e, &dir)).collect();
        if let Some(hs) = analytic_hvp {
            acc.compare(&ParamVector::mean(&hs), &hvp_fd(problem, p, batch, &dir, cfg)?, cfg);
        }
        acc.points += 1;
    }
    Ok(acc.finish())
}

/// Compares every analytic block gradient and block Jacobian product of a
/// game with central differences at each `(φ, θ)` point.
pub fn check_game_gradient(game: &dyn Game, points: &[(ParamVector, ParamVector)], cfg: &DerivativeConfig) -> Result<CheckReport> {
    cfg.validate()?;
    let mut acc = Accumulator::new();
    let mut rng = seeded_rng(0x5eed);
    let players = [Player::Phi, Player::Theta];
    for (phi, theta) in points {
        check_game_point(game, phi, theta)?;
        for loss in players {
            for wrt in players {
                if let Some(g) = game.grad(loss, wrt, phi, theta) {
                    acc.compare(&g, &game_grad_fd(game, loss, wrt, phi, theta, cfg)?, cfg);
                }
                for along in players {
                    let v = ParamVector::random_uniform(game.dim_of(along), &mut rng, -1.0, 1.0);
                    let which = MixedDerivative { loss, wrt, along };
                    if let Some(j) = game.grad_jacobian_product(loss, wrt, along, phi, theta, &v) {
                        acc.compare(&j, &game_mixed_fd(game, which, phi, theta, &v, cfg)?, cfg);
                    }
                }
            }
        }
        acc.points += 1;
    }
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{
        make_bilinear_game, make_dirac_gan, make_logistic, make_quadratic, make_quadratic_game, DiracVariant, Example,
        GameVariant, ProblemDescriptor, QuadraticExample, QuadraticProblem,
    };
    use proptest::prelude::*;

    fn cfg() -> DerivativeConfig {
        DerivativeConfig::default()
    }

    fn half_square() -> QuadraticProblem {
        QuadraticProblem::from_parts(1, &[QuadraticExample::scalar(1.0, 0.0)]).unwrap()
    }

    #[test]
    fn config_rejects_nonpositive() {
        assert!(DerivativeConfig { fd_step_scale: 0.0, ..cfg() }.validate().is_err());
        assert!(DerivativeConfig { tolerance_rel: -1.0, ..cfg() }.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn gradient_of_half_square() {
        let p = half_square();
        let g = grad(&p, &ParamVector::scalar(2.0), &p.full_batch(), &cfg()).unwrap();
        assert_eq!(g[0], 2.0);
    }

    #[test]
    fn gradient_vanishes_at_minimizer() {
        let p = make_quadratic(3, 1, 4).unwrap();
        let center = ParamVector::from_vec(p.term(0).center);
        let g = grad(&p, &center, &p.full_batch(), &cfg()).unwrap();
        assert!(g.norm() <= cfg().tolerance_abs);
        let g_fd = grad_fd(&p, &center, &p.full_batch(), &cfg()).unwrap();
        assert!(g_fd.norm() <= cfg().tolerance_abs);
    }

    #[test]
    fn quadratic_analytic_matches_fd() {
        let p = make_quadratic(3, 4, 7).unwrap();
        let batch = p.full_batch();
        let mut rng = seeded_rng(2);
        for _ in 0..10 {
            let theta = ParamVector::random_uniform(3, &mut rng, -2.0, 2.0);
            let a = grad(&p, &theta, &batch, &cfg()).unwrap();
            let f = grad_fd(&p, &theta, &batch, &cfg()).unwrap();
            assert!(a.max_abs_diff(&f) <= 1e-6 * a.norm().max(1.0));
        }
    }

    #[test]
    fn logistic_analytic_matches_fd() {
        let p = make_logistic(2, 8, 3).unwrap();
        let batch = p.full_batch();
        let mut rng = seeded_rng(4);
        for _ in 0..10 {
            let theta = ParamVector::random_uniform(2, &mut rng, -2.0, 2.0);
            let a = grad(&p, &theta, &batch, &cfg()).unwrap();
            let f = grad_fd(&p, &theta, &batch, &cfg()).unwrap();
            assert!(a.max_abs_diff(&f) <= 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = make_quadratic(3, 2, 1).unwrap();
        let err = grad(&p, &ParamVector::zeros(2), &p.full_batch(), &cfg()).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 3, found: 2 });
        let err = grad_directional_jacobian(&p, &ParamVector::zeros(3), &p.full_batch(), &ParamVector::zeros(1), &cfg());
        assert!(err.is_err());
    }

    #[test]
    fn quadratic_hvp_is_matrix_product() {
        let a = vec![2.0, 0.5, 0.5, 1.0];
        let p = QuadraticProblem::from_parts(2, &[QuadraticExample { matrix: a, center: vec![0.3, -0.1] }]).unwrap();
        let v = ParamVector::from(vec![1.0, -2.0]);
        let hv = grad_directional_jacobian(&p, &ParamVector::from(vec![5.0, 5.0]), &p.full_batch(), &v, &cfg()).unwrap();
        assert_eq!(hv.as_slice(), &[1.0, -1.5]);
        let zero = grad_directional_jacobian(&p, &ParamVector::zeros(2), &p.full_batch(), &ParamVector::zeros(2), &cfg()).unwrap();
        assert_eq!(zero.norm(), 0.0);
    }

    #[test]
    fn logistic_fd_hvp_is_richardson_consistent() {
        let p = make_logistic(3, 10, 5).unwrap();
        let batch = p.full_batch();
        let theta = ParamVector::from(vec![0.4, -0.8, 1.1]);
        let v = ParamVector::from(vec![0.3, 0.9, -0.5]);
        let coarse = hvp_fd(&p, &theta, &batch, &v, &cfg()).unwrap();
        let half = DerivativeConfig { fd_step_scale: cfg().fd_step_scale / 2.0, ..cfg() };
        let fine = hvp_fd(&p, &theta, &batch, &v, &half).unwrap();
        assert!(coarse.max_abs_diff(&fine) <= 4.0 * cfg().tolerance_for(fine.norm()));
    }

    /// Problem whose loss overflows to infinity away from the origin.
    struct Blowup(ProblemDescriptor, Vec<Example>);

    impl Problem for Blowup {
        fn dim(&self) -> usize {
            2
        }
        fn descriptor(&self) -> &ProblemDescriptor {
            &self.0
        }
        fn examples(&self) -> &[Example] {
            &self.1
        }
        fn example_loss(&self, params: &ParamVector, _: &Example) -> f64 {
            if params[1] > 1.0 {
                f64::INFINITY
            } else {
                params[0]
            }
        }
    }

    #[test]
    fn non_finite_loss_names_component() {
        let p = Blowup(
            ProblemDescriptor { name: "blowup".into(), dim: 2, num_examples: 1, seed: None, variant: None },
            vec![Example { features: vec![], label: None }],
        );
        let err = grad(&p, &ParamVector::from(vec![0.0, 1.0]), &p.full_batch(), &cfg()).unwrap_err();
        assert!(matches!(err, Error::DifferentiationFailure { component: 1, .. }), "{err:?}");
    }

    #[test]
    fn bilinear_game_grads_by_hand() {
        let game = make_bilinear_game();
        let g = game_grads(&game, &ParamVector::scalar(1.0), &ParamVector::scalar(2.0), &cfg()).unwrap();
        assert_eq!(
            [g.phi_phi[0], g.phi_theta[0], g.theta_phi[0], g.theta_theta[0]],
            [2.0, 1.0, -2.0, -1.0]
        );
        let v = ParamVector::scalar(0.25);
        let j = game_mixed_directional(&game, MixedDerivative::PHI_INTERACTION, &ParamVector::scalar(1.0), &ParamVector::scalar(2.0), &v, &cfg()).unwrap();
        assert_eq!(j[0], 0.25);
        let z = game_mixed_directional(&game, MixedDerivative::THETA_INTERACTION, &ParamVector::scalar(1.0), &ParamVector::scalar(2.0), &ParamVector::scalar(0.0), &cfg()).unwrap();
        assert_eq!(z[0], 0.0);
    }

    #[test]
    fn common_payoff_blocks_coincide() {
        let game = make_quadratic_game(2, 3, 6, GameVariant::CommonPayoff).unwrap();
        let phi = ParamVector::from(vec![0.5, -0.2]);
        let theta = ParamVector::from(vec![0.1, 0.7, -1.0]);
        let g = game_grads(&game, &phi, &theta, &cfg()).unwrap();
        assert_eq!(g.phi_phi, g.theta_phi);
        assert_eq!(g.phi_theta, g.theta_theta);
    }

    #[test]
    fn quadratic_game_cross_gradients_match_fd() {
        let game = make_quadratic_game(2, 3, 11, GameVariant::General).unwrap();
        let mut rng = seeded_rng(11);
        for _ in 0..5 {
            let phi = ParamVector::random_uniform(2, &mut rng, -1.0, 1.0);
            let theta = ParamVector::random_uniform(3, &mut rng, -1.0, 1.0);
            for (loss, wrt) in [(Player::Phi, Player::Theta), (Player::Theta, Player::Phi)] {
                let a = game_grad(&game, loss, wrt, &phi, &theta, &cfg()).unwrap();
                let f = game_grad_fd(&game, loss, wrt, &phi, &theta, &cfg()).unwrap();
                assert!(a.max_abs_diff(&f) <= 1e-6);
            }
        }
    }

    #[test]
    fn dirac_fd_mixed_is_richardson_consistent() {
        let game = make_dirac_gan(DiracVariant::NonSaturating);
        let one = ParamVector::scalar(1.0);
        let v = ParamVector::scalar(1.0);
        let half = DerivativeConfig { fd_step_scale: 5e-6, ..cfg() };
        for which in [MixedDerivative::PHI_INTERACTION, MixedDerivative::THETA_INTERACTION] {
            let a = game_mixed_fd(&game, which, &one, &one, &v, &cfg()).unwrap();
            let b = game_mixed_fd(&game, which, &one, &one, &v, &half).unwrap();
            assert!(a.max_abs_diff(&b) <= 4.0 * cfg().tolerance_for(b.norm()));
        }
    }

    #[test]
    fn checks_pass_on_builtins() {
        let mut rng = seeded_rng(21);
        let q = make_quadratic(3, 4, 7).unwrap();
        let pts: Vec<_> = (0..5).map(|_| ParamVector::random_uniform(3, &mut rng, -1.0, 1.0)).collect();
        let r = check_problem_gradient(&q, &pts, &q.full_batch(), &cfg()).unwrap();
        assert!(r.passed && r.max_abs <= 1e-8, "{r:?}");
        assert_eq!(r.points_tested, 5);

        for variant in [DiracVariant::Saturating, DiracVariant::NonSaturating] {
            let game = make_dirac_gan(variant);
            let pts = vec![(ParamVector::scalar(1.0), ParamVector::scalar(1.0)), (ParamVector::scalar(-0.3), ParamVector::scalar(2.0))];
            assert!(check_game_gradient(&game, &pts, &cfg()).unwrap().passed);
        }
    }

    /// Quadratic with its gradient scaled by 1.01.
    struct Corrupted(QuadraticProblem);

    impl Problem for Corrupted {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn descriptor(&self) -> &ProblemDescriptor {
            self.0.descriptor()
        }
        fn examples(&self) -> &[Example] {
            self.0.examples()
        }
        fn example_loss(&self, p: &ParamVector, e: &Example) -> f64 {
            self.0.example_loss(p, e)
        }
        fn example_grad(&self, p: &ParamVector, e: &Example) -> Option<ParamVector> {
            self.0.example_grad(p, e).map(|g| g.scaled(1.01))
        }
    }

    #[test]
    fn injected_fault_is_detected() {
        let p = Corrupted(make_quadratic(3, 4, 7).unwrap());
        let pts = vec![ParamVector::from(vec![1.0, -1.0, 0.5])];
        let r = check_problem_gradient(&p, &pts, &p.full_batch(), &cfg()).unwrap();
        assert!(!r.passed);
        assert!(r.max_rel > 5e-3);
    }

    #[test]
    fn check_report_serializes() {
        let r = CheckReport { max_abs: 1e-9, max_rel: 2e-9, passed: true, points_tested: 3 };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 4);
        for k in ["max_abs", "max_rel", "passed", "points_tested"] {
            assert!(v.get(k).is_some());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fd_hvp_is_odd_in_direction(seed in 0u64..1000) {
            let p = make_logistic(3, 6, seed).unwrap();
            let batch = p.full_batch();
            let mut rng = seeded_rng(seed);
            let theta = ParamVector::random_uniform(3, &mut rng, -1.0, 1.0);
            let v = ParamVector::random_uniform(3, &mut rng, -1.0, 1.0);
            let a = hvp_fd(&p, &theta, &batch, &v, &cfg()).unwrap();
            let b = hvp_fd(&p, &theta, &batch, &v.neg(), &cfg()).unwrap();
            prop_assert!(a.add(&b).norm() <= 1e-9 * a.norm().max(1e-300));
        }

        #[test]
        fn quadratic_hessian_is_symmetric(seed in 0u64..1000) {
            let p = make_quadratic(4, 3, seed).unwrap();
            let batch = p.full_batch();
            let mut rng = seeded_rng(seed ^ 0xabc);
            let theta = ParamVector::random_uniform(4, &mut rng, -1.0, 1.0);
            let u = ParamVector::random_uniform(4, &mut rng, -1.0, 1.0);
            let v = ParamVector::random_uniform(4, &mut rng, -1.0, 1.0);
            let hv = grad_directional_jacobian(&p, &theta, &batch, &v, &cfg()).unwrap();
            let hu = grad_directional_jacobian(&p, &theta, &batch, &u, &cfg()).unwrap();
            prop_assert!((u.dot(&hv) - v.dot(&hu)).abs() <= 1e-10);
        }

        #[test]
        fn directional_derivative_is_linear(seed in 0u64..1000, a in -2.0..2.0f64, b in -2.0..2.0f64) {
            let p = make_quadratic(3, 2, seed).unwrap();
            let batch = p.full_batch();
            let mut rng = seeded_rng(seed);
            let theta = ParamVector::random_uniform(3, &mut rng, -1.0, 1.0);
            let u = ParamVector::random_uniform(3, &mut rng, -1.0, 1.0);
            let v = ParamVector::random_uniform(3, &mut rng, -1.0, 1.0);
            let combo = u.scaled(a).add(&v.scaled(b));
            let lhs = hvp_fd(&p, &theta, &batch, &combo, &cfg()).unwrap();
            let rhs = hvp_fd(&p, &theta, &batch, &u, &cfg()).unwrap().scaled(a)
                .add(&hvp_fd(&p, &theta, &batch, &v, &cfg()).unwrap().scaled(b));
            prop_assert!(lhs.max_abs_diff(&rhs) <= cfg().tolerance_for(rhs.norm()));
        }

        #[test]
        fn hessian_gradient_is_gradient_of_half_norm(seed in 0u64..500) {
            let mut rng = seeded_rng(seed);
            let theta = ParamVector::random_uniform(3, &mut rng, -1.5, 1.5);
            let q = make_quadratic(3, 3, seed).unwrap();
            let l = make_logistic(3, 8, seed).unwrap();
            for p in [&q as &dyn Problem, &l as &dyn Problem] {
                let batch = p.full_batch();
                let g = grad(p, &theta, &batch, &cfg()).unwrap();
                let hg = grad_directional_jacobian(p, &theta, &batch, &g, &cfg()).unwrap();
                let fd = fd_gradient(|x| 0.5 * grad(p, x, &batch, &cfg()).unwrap().norm_squared(), &theta, &cfg()).unwrap();
                prop_assert!(hg.max_abs_diff(&fd) <= cfg().tolerance_for(hg.norm()));
            }
        }

        #[test]
        fn batch_loss_is_mean_of_examples(seed in 0u64..500, size in 1usize..=16) {
            let l = make_logistic(3, 16, seed).unwrap();
            let q = make_quadratic(2, 16, seed).unwrap();
            let mut rng = seeded_rng(seed);
            for p in [&l as &dyn Problem, &q as &dyn Problem] {
                let theta = ParamVector::random_uniform(p.dim(), &mut rng, -1.0, 1.0);
                let batch = Batch::new(0, p.examples()[..size].to_vec()).unwrap();
                let mean = batch.examples().iter().map(|e| p.example_loss(&theta, e)).sum::<f64>() / size as f64;
                let got = p.batch_loss(&theta, &batch);
                prop_assert!((got - mean).abs() <= 1e-12 * mean.abs().max(f64::MIN_POSITIVE));
            }
        }
    }
}
