use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::param::ParamVector;

use super::{random_spd, require_positive, seeded_rng, ProblemDescriptor};
use rand::Rng;

/// Identifies a player, and by extension its loss and its parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Player {
    Phi,
    Theta,
}

impl Player {
    pub fn other(self) -> Self {
        match self {
            Player::Phi => Player::Theta,
            Player::Theta => Player::Phi,
        }
    }
}

/// Two-player differentiable game where both players minimise their own loss.
///
/// `grad(loss, wrt, ..)` is `∇_wrt E_loss`; `grad_jacobian_product(loss, wrt,
/// along, .., v)` is the directional derivative of that gradient field with
/// respect to the `along` block in direction `v`, i.e. `J_along(∇_wrt E_loss) v`.
/// Both return `None` when no closed form exists.
pub trait Game: Send + Sync {
    fn dim_phi(&self) -> usize;

    fn dim_theta(&self) -> usize;

    fn descriptor(&self) -> &ProblemDescriptor;

    fn loss(&self, player: Player, phi: &ParamVector, theta: &ParamVector) -> f64;

    fn grad(&self, _loss: Player, _wrt: Player, _phi: &ParamVector, _theta: &ParamVector) -> Option<ParamVector> {
        None
    }

    fn grad_jacobian_product(
        &self,
        _loss: Player,
        _wrt: Player,
        _along: Player,
        _phi: &ParamVector,
        _theta: &ParamVector,
        _v: &ParamVector,
    ) -> Option<ParamVector> {
        None
    }

    fn dim_of(&self, block: Player) -> usize {
        match block {
            Player::Phi => self.dim_phi(),
            Player::Theta => self.dim_theta(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameVariant {
    /// Independent second loss `½ θᵀCθ + s θᵀBᵀφ + bᵀθ`.
    General,
    /// `E_θ = −E_φ`.
    ZeroSum,
    /// `E_θ = E_φ`.
    CommonPayoff,
}

impl GameVariant {
    fn name(self) -> &'static str {
        match self {
            GameVariant::General => "general",
            GameVariant::ZeroSum => "zero_sum",
            GameVariant::CommonPayoff => "common_payoff",
        }
    }
}

/// `½ zᵀQz + qᵀz` on the stacked vector `z = (φ, θ)`.
#[derive(Debug, Clone, PartialEq)]
struct QuadForm {
    q: Vec<f64>,
    lin: Vec<f64>,
}

impl QuadForm {
    fn size(&self) -> usize {
        self.lin.len()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let n = self.size();
        let mut acc = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| self.q[i * n + j] * z[j]).sum();
            acc += z[i] * (0.5 * row + self.lin[i]);
        }
        acc
    }

    fn grad_rows(&self, z: &[f64], rows: std::ops::Range<usize>) -> Vec<f64> {
        let n = self.size();
        rows.map(|i| (0..n).map(|j| self.q[i * n + j] * z[j]).sum::<f64>() + self.lin[i])
            .collect()
    }

    fn block_product(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, v: &[f64]) -> Vec<f64> {
        let n = self.size();
        rows.map(|i| cols.clone().zip(v).map(|(j, vj)| self.q[i * n + j] * vj).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum SecondLoss {
    Own(QuadForm),
    NegatedFirst,
    SameAsFirst,
}

/// Quadratic two-player game with closed-form first and second derivatives.
#[derive(Debug, Clone)]
pub struct QuadraticGame {
    dim_phi: usize,
    dim_theta: usize,
    first: QuadForm,
    second: SecondLoss,
    descriptor: ProblemDescriptor,
}

impl QuadraticGame {
    /// Builds `E_φ = ½ φᵀAφ + φᵀBθ + aᵀφ` and, for the general variant,
    /// `E_θ = ½ θᵀCθ + s θᵀBᵀφ + bᵀθ`. Matrices are row-major; `b_mat` is
    /// `dim_phi x dim_theta`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        dim_phi: usize,
        dim_theta: usize,
        a_mat: &[f64],
        b_mat: &[f64],
        c_mat: &[f64],
        a_vec: &[f64],
        b_vec: &[f64],
        coupling: f64,
        variant: GameVariant,
    ) -> Result<Self> {
        require_positive("dim_phi", dim_phi)?;
        require_positive("dim_theta", dim_theta)?;
        let (m, n) = (dim_phi, dim_theta);
        let size = m + n;
        crate::error::check_dim(m * m, a_mat.len())?;
        crate::error::check_dim(m * n, b_mat.len())?;
        crate::error::check_dim(n * n, c_mat.len())?;
        crate::error::check_dim(m, a_vec.len())?;
        crate::error::check_dim(n, b_vec.len())?;

        let mut q1 = vec![0.0; size * size];
        let mut q2 = vec![0.0; size * size];
        for i in 0..m {
            for j in 0..m {
                q1[i * size + j] = a_mat[i * m + j];
            }
            for j in 0..n {
                let bij = b_mat[i * n + j];
                q1[i * size + m + j] = bij;
                q1[(m + j) * size + i] = bij;
                q2[i * size + m + j] = coupling * bij;
                q2[(m + j) * size + i] = coupling * bij;
            }
        }
        for i in 0..n {
            for j in 0..n {
                q2[(m + i) * size + m + j] = c_mat[i * n + j];
            }
        }
        let mut lin1 = a_vec.to_vec();
        lin1.extend(std::iter::repeat_n(0.0, n));
        let mut lin2 = vec![0.0; m];
        lin2.extend_from_slice(b_vec);

        let second = match variant {
            GameVariant::General => SecondLoss::Own(QuadForm { q: q2, lin: lin2 }),
            GameVariant::ZeroSum => SecondLoss::NegatedFirst,
            GameVariant::CommonPayoff => SecondLoss::SameAsFirst,
        };
        Ok(Self {
            dim_phi,
            dim_theta,
            first: QuadForm { q: q1, lin: lin1 },
            second,
            descriptor: ProblemDescriptor {
                name: "quadratic_game".into(),
                dim: size,
                num_examples: 0,
                seed: None,
                variant: Some(variant.name().into()),
            },
        })
    }

    fn stacked(&self, phi: &ParamVector, theta: &ParamVector) -> Vec<f64> {
        assert_eq!(phi.dim(), self.dim_phi, "phi dimension mismatch");
        assert_eq!(theta.dim(), self.dim_theta, "theta dimension mismatch");
        phi.concat(theta).into_vec()
    }

    fn rows(&self, block: Player) -> std::ops::Range<usize> {
        match block {
            Player::Phi => 0..self.dim_phi,
            Player::Theta => self.dim_phi..self.dim_phi + self.dim_theta,
        }
    }

    /// The form for `loss` and the sign applied to it.
    fn form(&self, loss: Player) -> (&QuadForm, f64) {
        match (loss, &self.second) {
            (Player::Phi, _) => (&self.first, 1.0),
            (Player::Theta, SecondLoss::Own(f)) => (f, 1.0),
            (Player::Theta, SecondLoss::NegatedFirst) => (&self.first, -1.0),
            (Player::Theta, SecondLoss::SameAsFirst) => (&self.first, 1.0),
        }
    }
}

/// Seeded quadratic game. SPD blocks are `M Mᵀ + 0.1 I`; the remaining
/// entries and the coupling `s` are uniform on (-1, 1).
pub fn make_quadratic_game(dim_phi: usize, dim_theta: usize, seed: u64, variant: GameVariant) -> Result<QuadraticGame> {
    require_positive("dim_phi", dim_phi)?;
    require_positive("dim_theta", dim_theta)?;
    let mut rng = seeded_rng(seed);
    let a_mat = random_spd(&mut rng, dim_phi, 0.1);
    let c_mat = random_spd(&mut rng, dim_theta, 0.1);
    let b_mat: Vec<f64> = (0..dim_phi * dim_theta).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a_vec: Vec<f64> = (0..dim_phi).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b_vec: Vec<f64> = (0..dim_theta).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let coupling = rng.gen_range(-1.0..1.0);
    let mut game = QuadraticGame::from_parts(
        dim_phi, dim_theta, &a_mat, &b_mat, &c_mat, &a_vec, &b_vec, coupling, variant,
    )?;
    game.descriptor.seed = Some(seed);
    Ok(game)
}

/// The zero-sum bilinear game `E_φ = φθ`, `E_θ = −φθ`.
pub fn make_bilinear_game() -> QuadraticGame {
    let mut game = QuadraticGame::from_parts(1, 1, &[0.0], &[1.0], &[0.0], &[0.0], &[0.0], 0.0, GameVariant::ZeroSum)
        .expect("static dimensions are valid");
    game.descriptor.name = "bilinear_game".into();
    game
}

impl Game for QuadraticGame {
    fn dim_phi(&self) -> usize {
        self.dim_phi
    }

    fn dim_theta(&self) -> usize {
        self.dim_theta
    }

    fn descriptor(&self) -> &ProblemDescriptor {
        &self.descriptor
    }

    fn loss(&self, player: Player, phi: &ParamVector, theta: &ParamVector) -> f64 {
        let z = self.stacked(phi, theta);
        let (form, sign) = self.form(player);
        let value = form.value(&z);
        if sign < 0.0 {
            -value
        } else {
            value
        }
    }

    fn grad(&self, loss: Player, wrt: Player, phi: &ParamVector, theta: &ParamVector) -> Option<ParamVector> {
        let z = self.stacked(phi, theta);
        let (form, sign) = self.form(loss);
        let g = form.grad_rows(&z, self.rows(wrt));
        Some(ParamVector::from_vec(g).scaled(sign))
    }

    fn grad_jacobian_product(
        &self,
        loss: Player,
        wrt: Player,
        along: Player,
        _phi: &ParamVector,
        _theta: &ParamVector,
        v: &ParamVector,
    ) -> Option<ParamVector> {
        assert_eq!(v.dim(), self.dim_of(along), "direction dimension mismatch");
        let (form, sign) = self.form(loss);
        let out = form.block_product(self.rows(wrt), self.rows(along), v.as_slice());
        Some(ParamVector::from_vec(out).scaled(sign))
    }
}
