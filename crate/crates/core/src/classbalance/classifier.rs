//! Parametric stand-in for a trained probabilistic classifier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::point::PointView;
use crate::seed::splitmix64;
use crate::value::CoreError;

/// Synthetic soft classifier over `K` classes.
///
/// The predicted class is decoded from the payload (index of its largest
/// entry); `alpha` of the mass goes there and the rest is spread evenly.
/// With `noise > 0` every entry gets a seeded uniform perturbation in
/// `[0, noise)` keyed by point id, and the vector is renormalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftClassifier {
    classes: usize,
    alpha: f64,
    alpha_max: f64,
    saturation: f64,
    noise: f64,
    noise_seed: u64,
    updates: u64,
}

impl SoftClassifier {
    pub fn new(classes: usize, alpha: f64) -> Result<Self, CoreError> {
        Self::with_growth(classes, alpha, alpha.clamp(0.95, 1.0), 500.0)
    }

    pub fn with_growth(classes: usize, alpha: f64, alpha_max: f64, saturation: f64) -> Result<Self, CoreError> {
        if classes < 2 {
            return Err(CoreError::InvalidParameter(format!("classifier needs at least 2 classes, got {classes}")));
        }
        let floor = 1.0 / classes as f64;
        if !(floor - 1e-12..=1.0).contains(&alpha) {
            return Err(CoreError::InvalidParameter(format!("alpha {alpha} outside [1/K, 1]")));
        }
        if !(alpha..=1.0).contains(&alpha_max) {
            return Err(CoreError::InvalidParameter(format!("alpha_max {alpha_max} outside [alpha, 1]")));
        }
        if !(saturation > 0.0) {
            return Err(CoreError::InvalidParameter(format!("saturation scale {saturation} must be positive")));
        }
        Ok(SoftClassifier {
            classes,
            alpha: alpha.max(floor),
            alpha_max,
            saturation,
            noise: 0.0,
            noise_seed: 0,
            updates: 0,
        })
    }

    pub fn with_noise(mut self, noise: f64, seed: u64) -> Result<Self, CoreError> {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(CoreError::InvalidParameter(format!("noise {noise} must be nonnegative")));
        }
        self.noise = noise;
        self.noise_seed = seed;
        Ok(self)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Index of the largest payload entry (first one on ties).
    pub fn decode(&self, x: PointView<'_>) -> Result<usize, CoreError> {
        let v = x.payload().as_slice();
        if v.len() != self.classes {
            return Err(CoreError::Dimension {
                id: x.id(),
                expected: self.classes,
                found: v.len(),
            });
        }
        let mut best = 0;
        for (k, &e) in v.iter().enumerate() {
            if e > v[best] {
                best = k;
            }
        }
        Ok(best)
    }

    /// `π̂(x)`.
    pub fn predict(&self, x: PointView<'_>) -> Result<Vec<f64>, CoreError> {
        let top = self.decode(x)?;
        let rest = (1.0 - self.alpha) / (self.classes - 1) as f64;
        let mut p: Vec<f64> = (0..self.classes)
            .map(|k| if k == top { self.alpha } else { rest })
            .collect();
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.noise_seed ^ x.id()));
            for e in &mut p {
                *e += self.noise * rng.gen::<f64>();
            }
            let sum: f64 = p.iter().sum();
            for e in &mut p {
                *e /= sum;
            }
        }
        Ok(p)
    }

    /// Classifier after training on `newly_labeled` more points:
    /// `α ← α_max − (α_max − α)·exp(−m/s)`.
    pub fn update(&self, newly_labeled: usize) -> SoftClassifier {
        let mut next = self.clone();
        next.alpha = self.alpha_max - (self.alpha_max - self.alpha) * (-(newly_labeled as f64) / self.saturation).exp();
        next.updates += 1;
        next
    }
}
