use serde::{Deserialize, Serialize};

use crate::param::ParamVector;

use super::game::{Game, Player};
use super::logistic::{sigmoid, softplus};
use super::ProblemDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiracVariant {
    Saturating,
    NonSaturating,
}

impl DiracVariant {
    pub fn name(self) -> &'static str {
        match self {
            DiracVariant::Saturating => "saturating",
            DiracVariant::NonSaturating => "non_saturating",
        }
    }
}

/// One-parameter GAN: discriminator `D(x; φ) = sigmoid(φ x)`, generator
/// output `θ`, real data the single point `x* = 0`.
///
/// The discriminator loss is `−[log D(0; φ) + log(1 − D(θ; φ))]` so both
/// players minimise. The generator loss is `−log D(θ; φ)` (non-saturating) or
/// `log(1 − D(θ; φ))` (saturating).
#[derive(Debug, Clone)]
pub struct DiracGan {
    variant: DiracVariant,
    descriptor: ProblemDescriptor,
}

pub fn make_dirac_gan(variant: DiracVariant) -> DiracGan {
    DiracGan {
        variant,
        descriptor: ProblemDescriptor {
            name: "dirac_gan".into(),
            dim: 2,
            num_examples: 1,
            seed: None,
            variant: Some(variant.name().into()),
        },
    }
}

impl DiracGan {
    pub fn variant(&self) -> DiracVariant {
        self.variant
    }

    /// Discriminator output on a generated sample, `D(θ; φ)`.
    pub fn fake_probability(phi: f64, theta: f64) -> f64 {
        sigmoid(phi * theta)
    }

    /// Each loss is `F(φθ)` up to a constant; returns `(F'(u), F''(u))`.
    fn outer_derivatives(&self, loss: Player, u: f64) -> (f64, f64) {
        let s = sigmoid(u);
        let ds = s * (1.0 - s);
        match (loss, self.variant) {
            // ln 2 + softplus(u)
            (Player::Phi, _) => (s, ds),
            // softplus(−u)
            (Player::Theta, DiracVariant::NonSaturating) => (-(1.0 - s), ds),
            // −softplus(u)
            (Player::Theta, DiracVariant::Saturating) => (-s, -ds),
        }
    }
}

fn scalars(phi: &ParamVector, theta: &ParamVector) -> (f64, f64) {
    assert_eq!(phi.dim(), 1, "phi dimension mismatch");
    assert_eq!(theta.dim(), 1, "theta dimension mismatch");
    (phi[0], theta[0])
}

impl Game for DiracGan {
    fn dim_phi(&self) -> usize {
        1
    }

    fn dim_theta(&self) -> usize {
        1
    }

    fn descriptor(&self) -> &ProblemDescriptor {
        &self.descriptor
    }

    fn loss(&self, player: Player, phi: &ParamVector, theta: &ParamVector) -> f64 {
        let (p, t) = scalars(phi, theta);
        let u = p * t;
        match (player, self.variant) {
            (Player::Phi, _) => std::f64::consts::LN_2 + softplus(u),
            (Player::Theta, DiracVariant::NonSaturating) => softplus(-u),
            (Player::Theta, DiracVariant::Saturating) => -softplus(u),
        }
    }

    fn grad(&self, loss: Player, wrt: Player, phi: &ParamVector, theta: &ParamVector) -> Option<ParamVector> {
        let (p, t) = scalars(phi, theta);
        let (d1, _) = self.outer_derivatives(loss, p * t);
        let inner = match wrt {
            Player::Phi => t,
            Player::Theta => p,
        };
        Some(ParamVector::scalar(d1 * inner))
    }

    fn grad_jacobian_product(
        &self,
        loss: Player,
        wrt: Player,
        along: Player,
        phi: &ParamVector,
        theta: &ParamVector,
        v: &ParamVector,
    ) -> Option<ParamVector> {
        let (p, t) = scalars(phi, theta);
        assert_eq!(v.dim(), 1, "direction dimension mismatch");
        let (d1, d2) = self.outer_derivatives(loss, p * t);
        let second = match (wrt, along) {
            (Player::Phi, Player::Phi) => t * t * d2,
            (Player::Theta, Player::Theta) => p * p * d2,
            _ => d1 + p * t * d2,
        };
        Some(ParamVector::scalar(second * v[0]))
    }
}
