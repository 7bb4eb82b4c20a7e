//! Flat parameter vectors.
//!
//! Arithmetic between vectors of different lengths is a programming error and
//! panics; public entry points that receive user-supplied vectors check
//! dimensions up front and report [`Error::DimensionMismatch`] instead.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("parameter vector must be nonempty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter component {i}")));
        }
        Ok(Self(values))
    }

    /// Wraps values without validation. Intermediate results may be checked
    /// with [`ParamVector::is_finite`].
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn scalar(value: f64) -> Self {
        Self(vec![value])
    }

    /// Uniform draw from `[lo, hi)` in every component.
    pub fn random_uniform<R: Rng + ?Sized>(dim: usize, rng: &mut R, lo: f64, hi: f64) -> Self {
        Self((0..dim).map(|_| rng.gen_range(lo..hi)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn assert_same_dim(&self, other: &Self) {
        assert_eq!(self.dim(), other.dim(), "parameter dimension mismatch");
    }

    pub fn add(&self, other: &Self) -> Self {
        self.assert_same_dim(other);
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.assert_same_dim(other);
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|a| a * factor).collect())
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|a| -a).collect())
    }

    /// `self + factor * other`
    pub fn axpy(&self, factor: f64, other: &Self) -> Self {
        self.assert_same_dim(other);
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + factor * b).collect())
    }

    /// In-place `self += factor * other`.
    pub fn add_scaled_mut(&mut self, factor: f64, other: &Self) {
        self.assert_same_dim(other);
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.assert_same_dim(other);
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.sub(other).norm()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.assert_same_dim(other);
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Mean of a nonempty collection of equally sized vectors.
    pub fn mean<'a, I>(items: I) -> Self
    where
        I: IntoIterator<Item = &'a ParamVector>,
    {
        let mut iter = items.into_iter();
        let first = iter.next().expect("mean of an empty collection").clone();
        let (sum, count) = iter.fold((first, 1usize), |(acc, n), v| (acc.add(v), n + 1));
        sum.scaled(1.0 / count as f64)
    }

    /// Concatenates two blocks, used to stack `(phi, theta)` pairs.
    pub fn concat(&self, other: &Self) -> Self {
        let mut values = self.0.clone();
        values.extend_from_slice(&other.0);
        Self(values)
    }

    /// Splits at `mid` into `(head, tail)`.
    pub fn split_at(&self, mid: usize) -> (Self, Self) {
        let (a, b) = self.0.split_at(mid);
        (Self(a.to_vec()), Self(b.to_vec()))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}
