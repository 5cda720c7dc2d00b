//! Probability distributions over a closed integer vocabulary.

use crate::error::{Error, Result};
use crate::tree::Token;

const SUM_TOLERANCE: f64 = 1e-9;

/// A normalized probability vector over `[0, vocab_size)`.
///
/// Construction renormalizes the input when its sum is within `1e-9` of one
/// and rejects anything further off, so downstream arithmetic can assume a
/// proper distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::BadDistribution("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| **p < 0.0 || !p.is_finite()) {
            return Err(Error::BadDistribution(format!("bad entry {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::BadDistribution(format!("sum {sum} not within 1e-9 of 1")));
        }
        let probs = probs.into_iter().map(|p| p / sum).collect();
        Ok(Self { probs })
    }

    /// Normalizes an arbitrary non-negative weight vector.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::BadDistribution("weights sum to zero".into()));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn point_mass(token: Token, vocab_size: usize) -> Self {
        let mut probs = vec![0.0; vocab_size];
        probs[token.0 as usize] = 1.0;
        Self { probs }
    }

    pub fn uniform(vocab_size: usize) -> Self {
        Self { probs: vec![1.0 / vocab_size as f64; vocab_size] }
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, token: Token) -> f64 {
        self.probs[token.0 as usize]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Argmax with ties broken by lowest token id.
    pub fn argmax(&self) -> Token {
        let mut best = 0usize;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        Token(best as u32)
    }

    /// The `k` most probable tokens, descending, ties by lowest id.
    pub fn top_k(&self, k: usize) -> Result<Vec<Token>> {
        if k == 0 || k > self.probs.len() {
            return Err(Error::BadK { k, vocab: self.probs.len() });
        }
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| {
            self.probs[b].partial_cmp(&self.probs[a]).unwrap().then(a.cmp(&b))
        });
        Ok(idx.into_iter().take(k).map(|i| Token(i as u32)).collect())
    }

    /// Applies temperature: `probs^(1/T)` renormalized. Temperature 0 returns
    /// a point mass at the argmax.
    pub fn with_temperature(&self, temperature: f64) -> Self {
        if temperature == 0.0 {
            return Self::point_mass(self.argmax(), self.probs.len());
        }
        if (temperature - 1.0).abs() < f64::EPSILON {
            return self.clone();
        }
        let inv = 1.0 / temperature;
        let weights: Vec<f64> = self.probs.iter().map(|p| p.powf(inv)).collect();
        Self::from_weights(weights).expect("tempered weights sum positive")
    }

    /// Inverse-CDF draw from a single uniform variate in `[0,1)`.
    pub fn sample_with(&self, u: f64) -> Token {
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Token(i as u32);
            }
        }
        // Rounding can leave acc marginally below 1; fall back to the last
        // token with positive mass.
        let last = self
            .probs
            .iter()
            .rposition(|p| *p > 0.0)
            .expect("distribution has positive mass");
        Token(last as u32)
    }
}

/// `normalize(max(0, p - q))`: the distribution a rejected token is resampled
/// from so the overall process stays lossless.
pub fn residual_distribution(p: &Distribution, q: &Distribution) -> Result<Distribution> {
    assert_eq!(p.vocab_size(), q.vocab_size(), "vocabulary mismatch");
    let weights: Vec<f64> = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(&pi, &qi)| (pi - qi).max(0.0))
        .collect();
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::ZeroResidual);
    }
    Distribution::new(weights.into_iter().map(|w| w / sum).collect())
}
