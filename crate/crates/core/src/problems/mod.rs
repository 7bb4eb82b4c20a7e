//! Differentiable single-objective problems, batches, and two-player games.
//!
//! Every problem evaluates a per-example loss; the loss of a batch is the
//! arithmetic mean over its examples. Pooled losses over a schedule are the
//! mean of the batch losses, so unequal batch sizes stay well-defined.

mod dirac;
mod game;
mod logistic;
mod quadratic;

pub use dirac::{make_dirac_gan, DiracGan, DiracVariant};
pub use game::{make_bilinear_game, make_quadratic_game, Game, GameVariant, Player, QuadraticGame};
pub use logistic::{make_logistic, LogisticProblem};
pub use quadratic::{make_quadratic, QuadraticExample, QuadraticProblem};

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::param::ParamVector;

/// Seeded generator used for every synthetic construction. ChaCha8 is
/// portable and its stream is fixed for a given 64-bit seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Short hex digest of a byte stream; used to identify schedules and anchors
/// in reports.
pub fn short_digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    hex::encode(&hash[..8])
}

pub(crate) fn digest_values<'a, I: IntoIterator<Item = &'a f64>>(values: I) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(|v| v.to_le_bytes()).collect();
    short_digest(&bytes)
}

/// Reproducibility record for a constructed problem or game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDescriptor {
    pub name: String,
    pub dim: usize,
    pub num_examples: usize,
    pub seed: Option<u64>,
    pub variant: Option<String>,
}

/// One data record: a fixed-length feature vector and an optional ±1 label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    id: usize,
    examples: Vec<Example>,
}

impl Batch {
    pub fn new(id: usize, examples: Vec<Example>) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::InvalidArgument("batch must contain at least one example".into()))?;
        let len = first.features.len();
        let labelled = first.label.is_some();
        if examples
            .iter()
            .any(|e| e.features.len() != len || e.label.is_some() != labelled)
        {
            return Err(Error::InvalidArgument("examples in a batch must share one shape".into()));
        }
        Ok(Self { id, examples })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn with_id(&self, id: usize) -> Self {
        Self { id, examples: self.examples.clone() }
    }

    fn content_bytes(&self) -> Vec<u8> {
        let mut bytes = (self.id as u64).to_le_bytes().to_vec();
        for e in &self.examples {
            bytes.extend(e.features.iter().flat_map(|v| v.to_le_bytes()));
            if let Some(l) = e.label {
                bytes.extend(l.to_le_bytes());
            }
        }
        bytes
    }
}

/// Ordered sequence of batches consumed one per SGD step.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSchedule {
    batches: Vec<Batch>,
}

impl BatchSchedule {
    pub fn new(batches: Vec<Batch>) -> Result<Self> {
        if batches.is_empty() {
            return Err(Error::InvalidArgument("schedule must contain at least one batch".into()));
        }
        let mut seen = HashSet::new();
        if let Some(b) = batches.iter().find(|b| !seen.insert(b.id)) {
            return Err(Error::InvalidArgument(format!("duplicate batch id {}", b.id)));
        }
        Ok(Self { batches })
    }

    pub fn single(batch: Batch) -> Self {
        Self { batches: vec![batch] }
    }

    /// The same examples in every slot, with ids `0..n`.
    pub fn repeated(batch: &Batch, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("schedule length must be at least 1".into()));
        }
        Ok(Self { batches: (0..n).map(|i| batch.with_id(i)).collect() })
    }

    /// Consecutive, disjoint batches taken from the front of `examples`.
    pub fn partition(examples: &[Example], batch_size: usize, n: usize) -> Result<Self> {
        if batch_size == 0 || n == 0 {
            return Err(Error::InvalidArgument("batch size and schedule length must be at least 1".into()));
        }
        if batch_size * n > examples.len() {
            return Err(Error::InvalidArgument(format!(
                "{n} batches of size {batch_size} need {} examples, only {} available",
                batch_size * n,
                examples.len()
            )));
        }
        let batches = examples
            .chunks(batch_size)
            .take(n)
            .enumerate()
            .map(|(id, chunk)| Batch::new(id, chunk.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(batches)
    }

    /// Like [`BatchSchedule::partition`] after a seeded shuffle of the examples.
    pub fn shuffled_partition(examples: &[Example], batch_size: usize, n: usize, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;
        let mut shuffled = examples.to_vec();
        shuffled.shuffle(&mut seeded_rng(seed));
        Self::partition(&shuffled, batch_size, n)
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn ids(&self) -> Vec<usize> {
        self.batches.iter().map(Batch::id).collect()
    }

    /// Reorders the batches so that slot `k` holds batch `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument(format!("{order:?} is not a permutation of 0..{n}")));
        }
        Ok(Self { batches: order.iter().map(|&i| self.batches[i].clone()).collect() })
    }

    pub fn has_uniform_batch_size(&self) -> bool {
        self.batches.windows(2).all(|w| w[0].len() == w[1].len())
    }

    /// Content digest including batch order.
    pub fn digest(&self) -> String {
        let bytes: Vec<u8> = self.batches.iter().flat_map(Batch::content_bytes).collect();
        short_digest(&bytes)
    }

    /// True when every slot holds the same examples (ids may differ).
    pub fn all_identical(&self) -> bool {
        self.batches.windows(2).all(|w| w[0].examples == w[1].examples)
    }
}

/// A single-objective loss with per-example evaluation.
///
/// `example_grad` and `example_hvp` return `None` when no analytic form is
/// available; the calculus module then falls back to central differences.
pub trait Problem: Send + Sync {
    fn dim(&self) -> usize;

    fn descriptor(&self) -> &ProblemDescriptor;

    /// The full synthetic dataset.
    fn examples(&self) -> &[Example];

    fn example_loss(&self, params: &ParamVector, example: &Example) -> f64;

    fn example_grad(&self, _params: &ParamVector, _example: &Example) -> Option<ParamVector> {
        None
    }

    fn example_hvp(&self, _params: &ParamVector, _example: &Example, _direction: &ParamVector) -> Option<ParamVector> {
        None
    }

    fn batch_loss(&self, params: &ParamVector, batch: &Batch) -> f64 {
        let sum: f64 = batch.examples().iter().map(|e| self.example_loss(params, e)).sum();
        sum / batch.len() as f64
    }

    /// All examples as one batch with id 0.
    fn full_batch(&self) -> Batch {
        Batch::new(0, self.examples().to_vec()).expect("problems hold at least one example")
    }
}

/// Mean of the batch losses over a schedule.
pub fn pooled_loss(problem: &dyn Problem, params: &ParamVector, schedule: &BatchSchedule) -> f64 {
    let sum: f64 = schedule.batches().iter().map(|b| problem.batch_loss(params, b)).sum();
    sum / schedule.len() as f64
}

pub(crate) fn require_positive(name: &str, value: usize) -> Result<()> {
    if value == 0 {
        Err(Error::InvalidArgument(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

/// Row-major `n x n` matrix times vector.
pub(crate) fn matvec(matrix: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    debug_assert_eq!(matrix.len() % n.max(1), 0);
    matrix.chunks(n).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// `M M^T + shift * I` with `M` drawn uniform on (-1, 1); row-major.
pub(crate) fn random_spd<R: rand::Rng>(rng: &mut R, dim: usize, shift: f64) -> Vec<f64> {
    let m: Vec<f64> = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut s: f64 = (0..dim).map(|k| m[i * dim + k] * m[j * dim + k]).sum();
            if i == j {
                s += shift;
            }
            out[i * dim + j] = s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(v: f64) -> Example {
        Example { features: vec![v], label: None }
    }

    #[test]
    fn batch_rejects_empty_and_mixed_shapes() {
        assert!(Batch::new(0, vec![]).is_err());
        let mixed = vec![ex(1.0), Example { features: vec![1.0, 2.0], label: None }];
        assert!(Batch::new(0, mixed).is_err());
        let labels = vec![ex(1.0), Example { features: vec![1.0], label: Some(1.0) }];
        assert!(Batch::new(0, labels).is_err());
    }

    #[test]
    fn schedule_validates_ids_and_length() {
        assert!(BatchSchedule::new(vec![]).is_err());
        let b = Batch::new(3, vec![ex(1.0)]).unwrap();
        assert!(BatchSchedule::new(vec![b.clone(), b.clone()]).is_err());
        let rep = BatchSchedule::repeated(&b, 3).unwrap();
        assert_eq!(rep.ids(), vec![0, 1, 2]);
        assert!(rep.all_identical());
        assert!(BatchSchedule::repeated(&b, 0).is_err());
    }

    #[test]
    fn partition_preserves_order() {
        let examples: Vec<_> = (0..6).map(|i| ex(i as f64)).collect();
        let s = BatchSchedule::partition(&examples, 2, 3).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.batches()[1].examples()[0].features, vec![2.0]);
        assert!(BatchSchedule::partition(&examples, 4, 2).is_err());
    }

    #[test]
    fn permutation_changes_digest_and_validates() {
        let examples: Vec<_> = (0..3).map(|i| ex(i as f64)).collect();
        let s = BatchSchedule::partition(&examples, 1, 3).unwrap();
        let p = s.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.ids(), vec![2, 0, 1]);
        assert_ne!(s.digest(), p.digest());
        assert_eq!(s.digest(), s.permuted(&[0, 1, 2]).unwrap().digest());
        assert!(s.permuted(&[0, 0, 1]).is_err());
        assert!(s.permuted(&[0, 1]).is_err());
    }

    #[test]
    fn spd_generator_is_symmetric_positive() {
        let a = random_spd(&mut seeded_rng(5), 4, 0.1);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a[i * 4 + j], a[j * 4 + i]);
            }
            assert!(a[i * 4 + i] >= 0.1);
        }
        let mut rng = seeded_rng(9);
        for _ in 0..20 {
            let v = ParamVector::random_uniform(4, &mut rng, -1.0, 1.0);
            let av = matvec(&a, v.as_slice());
            let q: f64 = av.iter().zip(v.as_slice()).map(|(x, y)| x * y).sum();
            assert!(q >= 0.1 * v.norm_squared() - 1e-12);
        }
    }
}
