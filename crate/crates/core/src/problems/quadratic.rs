use crate::error::{Error, Result};
use crate::param::ParamVector;

use super::{matvec, random_spd, require_positive, seeded_rng, Example, Problem, ProblemDescriptor};

/// Per-example loss `½ (θ − c)ᵀ A (θ − c)`.
///
/// Each example stores its center followed by the row-major matrix in the
/// feature vector, so the payload length is `dim + dim²`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    dim: usize,
    examples: Vec<Example>,
    descriptor: ProblemDescriptor,
}

/// Hand-specified quadratic term.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticExample {
    /// Row-major symmetric `dim x dim` matrix.
    pub matrix: Vec<f64>,
    pub center: Vec<f64>,
}

impl QuadraticExample {
    /// One-dimensional `½ a (θ − c)²`.
    pub fn scalar(a: f64, c: f64) -> Self {
        Self { matrix: vec![a], center: vec![c] }
    }
}

fn encode(term: &QuadraticExample) -> Example {
    let mut features = term.center.clone();
    features.extend_from_slice(&term.matrix);
    Example { features, label: None }
}

impl QuadraticProblem {
    /// Builds a problem from explicit terms. Matrices must be symmetric.
    pub fn from_parts(dim: usize, terms: &[QuadraticExample]) -> Result<Self> {
        require_positive("dim", dim)?;
        require_positive("num_examples", terms.len())?;
        for t in terms {
            if t.center.len() != dim || t.matrix.len() != dim * dim {
                return Err(Error::DimensionMismatch { expected: dim, found: t.center.len() });
            }
            for i in 0..dim {
                for j in 0..i {
                    if t.matrix[i * dim + j] != t.matrix[j * dim + i] {
                        return Err(Error::InvalidArgument("quadratic matrices must be symmetric".into()));
                    }
                }
            }
        }
        Ok(Self {
            dim,
            examples: terms.iter().map(encode).collect(),
            descriptor: ProblemDescriptor {
                name: "quadratic".into(),
                dim,
                num_examples: terms.len(),
                seed: None,
                variant: Some("explicit".into()),
            },
        })
    }

    fn split<'a>(&self, example: &'a Example) -> (&'a [f64], &'a [f64]) {
        example.features.split_at(self.dim)
    }

    /// Decodes the stored term of example `i`.
    pub fn term(&self, i: usize) -> QuadraticExample {
        let (c, a) = self.split(&self.examples[i]);
        QuadraticExample { matrix: a.to_vec(), center: c.to_vec() }
    }
}

/// Seeded quadratic testbed: `A_i = M Mᵀ + 0.1 I`, centers uniform on (-1, 1).
pub fn make_quadratic(dim: usize, num_examples: usize, seed: u64) -> Result<QuadraticProblem> {
    require_positive("dim", dim)?;
    require_positive("num_examples", num_examples)?;
    let mut rng = seeded_rng(seed);
    let terms: Vec<_> = (0..num_examples)
        .map(|_| {
            let matrix = random_spd(&mut rng, dim, 0.1);
            let center = ParamVector::random_uniform(dim, &mut rng, -1.0, 1.0).into_vec();
            QuadraticExample { matrix, center }
        })
        .collect();
    let mut problem = QuadraticProblem::from_parts(dim, &terms)?;
    problem.descriptor.seed = Some(seed);
    problem.descriptor.variant = None;
    Ok(problem)
}

impl Problem for QuadraticProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn descriptor(&self) -> &ProblemDescriptor {
        &self.descriptor
    }

    fn examples(&self) -> &[Example] {
        &self.examples
    }

    fn example_loss(&self, params: &ParamVector, example: &Example) -> f64 {
        let (c, a) = self.split(example);
        let d: Vec<f64> = params.as_slice().iter().zip(c).map(|(t, c)| t - c).collect();
        let ad = matvec(a, &d);
        0.5 * ad.iter().zip(&d).map(|(x, y)| x * y).sum::<f64>()
    }

    fn example_grad(&self, params: &ParamVector, example: &Example) -> Option<ParamVector> {
        let (c, a) = self.split(example);
        let d: Vec<f64> = params.as_slice().iter().zip(c).map(|(t, c)| t - c).collect();
        Some(ParamVector::from_vec(matvec(a, &d)))
    }

    fn example_hvp(&self, _params: &ParamVector, example: &Example, direction: &ParamVector) -> Option<ParamVector> {
        let (_, a) = self.split(example);
        Some(ParamVector::from_vec(matvec(a, direction.as_slice())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Batch;

    #[test]
    fn half_theta_squared() {
        let p = QuadraticProblem::from_parts(1, &[QuadraticExample::scalar(1.0, 0.0)]).unwrap();
        let theta = ParamVector::scalar(1.0);
        assert_eq!(p.example_loss(&theta, &p.examples()[0]), 0.5);
        assert_eq!(p.example_grad(&theta, &p.examples()[0]).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn loss_vanishes_at_center() {
        for seed in 0..5 {
            let p = make_quadratic(3, 4, seed).unwrap();
            for i in 0..4 {
                let center = ParamVector::from_vec(p.term(i).center);
                assert_eq!(p.example_loss(&center, &p.examples()[i]), 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(make_quadratic(0, 3, 1).is_err());
        assert!(make_quadratic(2, 0, 1).is_err());
        let asym = QuadraticExample { matrix: vec![1.0, 2.0, 0.0, 1.0], center: vec![0.0, 0.0] };
        assert!(QuadraticProblem::from_parts(2, &[asym]).is_err());
    }

    #[test]
    fn same_seed_same_problem() {
        let a = make_quadratic(3, 5, 42).unwrap();
        let b = make_quadratic(3, 5, 42).unwrap();
        assert_eq!(a.descriptor(), b.descriptor());
        assert_eq!(a.examples(), b.examples());
        let c = make_quadratic(3, 5, 43).unwrap();
        assert_ne!(a.examples(), c.examples());
    }

    #[test]
    fn batch_loss_is_mean() {
        let p = make_quadratic(2, 6, 3).unwrap();
        let theta = ParamVector::from(vec![0.3, -0.7]);
        let batch = Batch::new(0, p.examples().to_vec()).unwrap();
        let mean = p.examples().iter().map(|e| p.example_loss(&theta, e)).sum::<f64>() / 6.0;
        assert!((p.batch_loss(&theta, &batch) - mean).abs() <= 1e-12 * mean.abs());
    }
}
