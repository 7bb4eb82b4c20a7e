use crate::calculus::{game_grad, game_mixed_directional, DerivativeConfig, MixedDerivative};
use crate::error::{check_dim, Error, Result};
use crate::param::ParamVector;
use crate::problems::{digest_values, Game, Player};

use super::{check_h, Field, FieldDescriptor, FieldKind};

/// Additive split of one player's field value.
#[derive(Debug, Clone, PartialEq)]
pub struct GameFieldTerms {
    /// `−∇ E` of the player's own loss with respect to its own block.
    pub base: ParamVector,
    /// `−(h/2) J_own(∇_own E_own) ∇_own E_own`
    pub self_term: ParamVector,
    /// `−(h/2) J_other(∇_own E_own) ∇_other E_other`, the other player's
    /// gradient frozen at the anchor for the anchored kind.
    pub interaction: ParamVector,
}

impl GameFieldTerms {
    pub fn total(&self) -> ParamVector {
        self.base.add(&self.self_term).add(&self.interaction)
    }
}

/// The pair `(φ̇, θ̇)` for simultaneous gradient descent and its modified flows.
pub struct GameFieldPair<'a> {
    kind: FieldKind,
    h: f64,
    game: &'a dyn Game,
    anchor: Option<(ParamVector, ParamVector)>,
    /// `(∇_φ E_φ, ∇_θ E_θ)` at the anchor.
    anchor_grads: Option<(ParamVector, ParamVector)>,
    cfg: DerivativeConfig,
}

impl std::fmt::Debug for GameFieldPair<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GameFieldPair")
            .field("kind", &self.kind)
            .field("h", &self.h)
            .field("anchor", &self.anchor)
            .finish()
    }
}

/// `(φ̇, θ̇) = (−∇_φ E_φ, −∇_θ E_θ)`
pub fn simultaneous_gradient_field(game: &dyn Game) -> GameFieldPair<'_> {
    GameFieldPair { kind: FieldKind::SimultaneousGradient, h: 0.0, game, anchor: None, anchor_grads: None, cfg: DerivativeConfig::default() }
}

/// First-order modified flow of simultaneous gradient descent with step `h`.
pub fn game_bea_flow(game: &dyn Game, h: f64) -> Result<GameFieldPair<'_>> {
    check_h(h)?;
    Ok(GameFieldPair { kind: FieldKind::GameBea, h, game, anchor: None, anchor_grads: None, cfg: DerivativeConfig::default() })
}

/// Gradient-writable modified flow in which each player's interaction term
/// uses the other player's gradient frozen at `(φ_anchor, θ_anchor)`.
pub fn game_anchored_flow<'a>(game: &'a dyn Game, h: f64, anchor: Option<(&ParamVector, &ParamVector)>) -> Result<GameFieldPair<'a>> {
    check_h(h)?;
    let (phi, theta) = anchor.ok_or(Error::MissingAnchor(FieldKind::GameAnchored.name()))?;
    GameFieldPair {
        kind: FieldKind::GameAnchored,
        h,
        game,
        anchor: Some((phi.clone(), theta.clone())),
        anchor_grads: None,
        cfg: DerivativeConfig::default(),
    }
    .freeze()
}

impl<'a> GameFieldPair<'a> {
    fn freeze(mut self) -> Result<Self> {
        if let Some((phi, theta)) = &self.anchor {
            check_dim(self.game.dim_phi(), phi.dim())?;
            check_dim(self.game.dim_theta(), theta.dim())?;
            let gp = game_grad(self.game, Player::Phi, Player::Phi, phi, theta, &self.cfg)?;
            let gt = game_grad(self.game, Player::Theta, Player::Theta, phi, theta, &self.cfg)?;
            self.anchor_grads = Some((gp, gt));
        }
        Ok(self)
    }

    pub fn with_config(mut self, cfg: DerivativeConfig) -> Result<Self> {
        cfg.validate()?;
        self.cfg = cfg;
        self.freeze()
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn game(&self) -> &'a dyn Game {
        self.game
    }

    pub fn anchor(&self) -> Option<(&ParamVector, &ParamVector)> {
        self.anchor.as_ref().map(|(p, t)| (p, t))
    }

    pub fn derivative_config(&self) -> &DerivativeConfig {
        &self.cfg
    }

    pub fn descriptor(&self) -> FieldDescriptor {
        FieldDescriptor {
            kind: self.kind,
            h: self.h,
            n: 1,
            anchor_digest: self
                .anchor
                .as_ref()
                .map(|(p, t)| digest_values(p.as_slice().iter().chain(t.as_slice()))),
            problem_descriptor: self.game.descriptor().clone(),
        }
    }

    /// Per-player decomposition `(φ terms, θ terms)`.
    pub fn decompose(&self, phi: &ParamVector, theta: &ParamVector) -> Result<(GameFieldTerms, GameFieldTerms)> {
        check_dim(self.game.dim_phi(), phi.dim())?;
        check_dim(self.game.dim_theta(), theta.dim())?;
        let g_phi = game_grad(self.game, Player::Phi, Player::Phi, phi, theta, &self.cfg)?;
        let g_theta = game_grad(self.game, Player::Theta, Player::Theta, phi, theta, &self.cfg)?;
        if self.h == 0.0 || self.kind == FieldKind::SimultaneousGradient {
            let zp = ParamVector::zeros(phi.dim());
            let zt = ParamVector::zeros(theta.dim());
            return Ok((
                GameFieldTerms { base: g_phi.neg(), self_term: zp.clone(), interaction: zp },
                GameFieldTerms { base: g_theta.neg(), self_term: zt.clone(), interaction: zt },
            ));
        }
        let (other_phi, other_theta) = match (&self.kind, &self.anchor_grads) {
            (FieldKind::GameAnchored, Some((ap, at))) => (ap, at),
            (FieldKind::GameAnchored, None) => return Err(Error::MissingAnchor(self.kind.name())),
            _ => (&g_phi, &g_theta),
        };
        let c = -self.h / 2.0;
        let mixed = |which, v: &ParamVector| game_mixed_directional(self.game, which, phi, theta, v, &self.cfg);
        let phi_terms = GameFieldTerms {
            self_term: mixed(MixedDerivative::PHI_SELF, &g_phi)?.scaled(c),
            interaction: mixed(MixedDerivative::PHI_INTERACTION, other_theta)?.scaled(c),
            base: g_phi.neg(),
        };
        let theta_terms = GameFieldTerms {
            self_term: mixed(MixedDerivative::THETA_SELF, &g_theta)?.scaled(c),
            interaction: mixed(MixedDerivative::THETA_INTERACTION, other_phi)?.scaled(c),
            base: g_theta.neg(),
        };
        Ok((phi_terms, theta_terms))
    }

    pub fn eval_pair(&self, phi: &ParamVector, theta: &ParamVector) -> Result<(ParamVector, ParamVector)> {
        let (p, t) = self.decompose(phi, theta)?;
        Ok((p.total(), t.total()))
    }
}

/// The stacked system `z = (φ, θ)`.
impl Field for GameFieldPair<'_> {
    fn dim(&self) -> usize {
        self.game.dim_phi() + self.game.dim_theta()
    }

    fn h(&self) -> f64 {
        self.h
    }

    fn eval(&self, z: &ParamVector) -> Result<ParamVector> {
        check_dim(self.dim(), z.dim())?;
        let (phi, theta) = z.split_at(self.game.dim_phi());
        let (dp, dt) = self.eval_pair(&phi, &theta)?;
        Ok(dp.concat(&dt))
    }
}
