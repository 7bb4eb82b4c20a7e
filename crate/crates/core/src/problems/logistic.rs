use crate::error::Result;
use crate::param::ParamVector;

use super::{require_positive, seeded_rng, Example, Problem, ProblemDescriptor};
use rand::Rng;

/// Binary logistic regression on synthetic data; labels are ±1.
///
/// Only the gradient is analytic. Hessian-vector products go through the
/// finite-difference path, which keeps that path exercised by every flow.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    dim: usize,
    examples: Vec<Example>,
    descriptor: ProblemDescriptor,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn make_logistic(num_features: usize, num_examples: usize, seed: u64) -> Result<LogisticProblem> {
    require_positive("num_features", num_features)?;
    require_positive("num_examples", num_examples)?;
    let mut rng = seeded_rng(seed);
    let truth = ParamVector::random_uniform(num_features, &mut rng, -2.0, 2.0);
    let examples = (0..num_examples)
        .map(|_| {
            let x = ParamVector::random_uniform(num_features, &mut rng, -1.5, 1.5);
            let noise: f64 = rng.gen_range(-0.5..0.5);
            let label = if x.dot(&truth) + noise >= 0.0 { 1.0 } else { -1.0 };
            Example { features: x.into_vec(), label: Some(label) }
        })
        .collect();
    Ok(LogisticProblem {
        dim: num_features,
        examples,
        descriptor: ProblemDescriptor {
            name: "logistic".into(),
            dim: num_features,
            num_examples,
            seed: Some(seed),
            variant: None,
        },
    })
}

impl LogisticProblem {
    fn margin(&self, params: &ParamVector, example: &Example) -> (f64, f64) {
        let y = example.label.expect("logistic examples carry labels");
        let m: f64 = params.as_slice().iter().zip(&example.features).map(|(a, b)| a * b).sum();
        (y, m)
    }
}

impl Problem for LogisticProblem {
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
        let (y, m) = self.margin(params, example);
        softplus(-y * m)
    }

    fn example_grad(&self, params: &ParamVector, example: &Example) -> Option<ParamVector> {
        let (y, m) = self.margin(params, example);
        let w = -y * sigmoid(-y * m);
        Some(ParamVector::from_vec(example.features.iter().map(|x| w * x).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_at_origin_is_ln2() {
        let p = make_logistic(3, 10, 1).unwrap();
        let zero = ParamVector::zeros(3);
        for e in p.examples() {
            assert!((p.example_loss(&zero, e) - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn convex_along_segments() {
        let p = make_logistic(4, 12, 8).unwrap();
        let batch = p.full_batch();
        let mut rng = seeded_rng(99);
        for _ in 0..50 {
            let a = ParamVector::random_uniform(4, &mut rng, -3.0, 3.0);
            let b = ParamVector::random_uniform(4, &mut rng, -3.0, 3.0);
            let mid = a.add(&b).scaled(0.5);
            let lm = p.batch_loss(&mid, &batch);
            let avg = 0.5 * (p.batch_loss(&a, &batch) + p.batch_loss(&b, &batch));
            assert!(lm <= avg + 1e-12);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert!((sigmoid(0.0) - 0.5).abs() == 0.0);
    }

    #[test]
    fn labels_are_plus_minus_one() {
        let p = make_logistic(2, 40, 3).unwrap();
        assert!(p.examples().iter().all(|e| matches!(e.label, Some(l) if l == 1.0 || l == -1.0)));
        assert!(p.examples().iter().any(|e| e.label == Some(1.0)));
        assert!(p.examples().iter().any(|e| e.label == Some(-1.0)));
        assert!(make_logistic(0, 4, 1).is_err());
        assert!(make_logistic(2, 0, 1).is_err());
    }
}
