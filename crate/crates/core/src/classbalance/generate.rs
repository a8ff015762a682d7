//! Imbalanced synthetic streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::point::{Point, Stream};
use crate::value::CoreError;

/// Which classes are rare, which are common, and how much more often a
/// common-group point is drawn than a rare-group one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImbalanceSpec {
    pub classes: usize,
    pub rare: Vec<usize>,
    pub common: Vec<usize>,
    pub beta: f64,
    pub length: usize,
    pub seed: u64,
    /// Id of the first generated point; ids then increase by one.
    #[serde(default)]
    pub first_id: u64,
}

impl ImbalanceSpec {
    /// Ten classes, the first five rare.
    pub fn standard(beta: f64, length: usize, seed: u64) -> Self {
        ImbalanceSpec {
            classes: 10,
            rare: (0..5).collect(),
            common: (5..10).collect(),
            beta,
            length,
            seed,
            first_id: 0,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |m: String| Err(CoreError::InvalidParameter(m));
        if self.rare.is_empty() || self.common.is_empty() {
            return bad("rare and common class groups must both be nonempty".into());
        }
        if let Some(k) = self.rare.iter().chain(&self.common).find(|&&k| k >= self.classes) {
            return bad(format!("class {k} out of range for {} classes", self.classes));
        }
        if let Some(k) = self.rare.iter().find(|k| self.common.contains(k)) {
            return bad(format!("class {k} is both rare and common"));
        }
        let mut all: Vec<usize> = self.rare.iter().chain(&self.common).copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return bad("a class is listed twice".into());
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return bad(format!("imbalance factor {} must be at least 1", self.beta));
        }
        Ok(())
    }

    pub fn is_rare(&self, class: usize) -> bool {
        self.rare.contains(&class)
    }

    /// Probability that a draw lands in the rare group.
    pub fn rare_mass(&self) -> f64 {
        1.0 / (self.beta + 1.0)
    }
}

/// Gaussian features: class `k` has mean `separation·e_k` in `K`
/// dimensions and isotropic standard deviation `sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureModel {
    pub separation: f64,
    pub sigma: f64,
}

impl Default for FeatureModel {
    fn default() -> Self {
        FeatureModel {
            separation: 4.0,
            sigma: 1.0,
        }
    }
}

impl FeatureModel {
    /// Noise-free features, decoded exactly by the synthetic classifier.
    pub fn exact() -> Self {
        FeatureModel {
            separation: 1.0,
            sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.separation > 0.0 && self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(CoreError::InvalidParameter(format!(
                "feature model needs separation > 0 and sigma ≥ 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Labeled points of an imbalanced stream, deterministic per `spec.seed`.
pub fn gen_imbalanced_points(spec: &ImbalanceSpec, model: &FeatureModel) -> Result<Vec<Point>, CoreError> {
    spec.validate()?;
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, model.sigma).map_err(|e| CoreError::InvalidParameter(e.to_string()))?;
    let rare_mass = spec.rare_mass();
    let mut out = Vec::with_capacity(spec.length);
    for i in 0..spec.length {
        let group = if rng.gen::<f64>() < rare_mass { &spec.rare } else { &spec.common };
        let class = group[rng.gen_range(0..group.len())];
        let features = (0..spec.classes)
            .map(|k| {
                let mean = if k == class { model.separation } else { 0.0 };
                if model.sigma > 0.0 {
                    mean + noise.sample(&mut rng)
                } else {
                    mean
                }
            })
            .collect();
        out.push(Point::with_features(spec.first_id + i as u64, features).labeled(class));
    }
    Ok(out)
}

pub fn gen_imbalanced_stream(spec: &ImbalanceSpec, model: &FeatureModel) -> Result<Stream, CoreError> {
    Ok(Stream::generated(spec.seed, gen_imbalanced_points(spec, model)?))
}
