//! Threshold schedules.
//!
//! A schedule emits one threshold per arriving point. It sees the current
//! point (through a label-free [`PointView`]), the selected set with its
//! revealed labels, and its own past thresholds, and nothing else: it
//! cannot look ahead in the stream or at unselected labels.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::point::PointView;
use crate::set::SelectedSet;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScheduleError {
    #[error("schedule configuration: {0}")]
    Config(String),
    #[error("schedule emitted non-positive threshold {tau} at t={t}")]
    NonPositive { t: usize, tau: f64 },
    #[error("cost function returned negative marginal cost {0}")]
    NegativeCost(f64),
    #[error("point {0} is already selected")]
    AlreadySelected(u64),
}

/// Cost of a set as a function of its cardinality: `c(S) = scale · |S|^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostFunction {
    pub scale: f64,
    pub exponent: f64,
}

impl CostFunction {
    pub fn cardinality(scale: f64) -> Self {
        CostFunction { scale, exponent: 1.0 }
    }

    pub fn power(scale: f64, exponent: f64) -> Self {
        CostFunction { scale, exponent }
    }

    fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(ScheduleError::Config(format!("cost scale must be positive, got {}", self.scale)));
        }
        if !(self.exponent.is_finite() && self.exponent > 0.0) {
            return Err(ScheduleError::Config(format!(
                "cost exponent must be positive, got {}",
                self.exponent
            )));
        }
        Ok(())
    }

    pub fn cost(&self, size: usize) -> f64 {
        self.scale * (size as f64).powf(self.exponent)
    }
}

/// `c(L ∪ {x}) − c(L)`: the cost-based threshold for `x`.
pub fn marginal_cost_threshold(
    cost: &CostFunction,
    x: PointView<'_>,
    selected: &SelectedSet,
) -> Result<f64, ScheduleError> {
    if selected.contains(x.id()) {
        return Err(ScheduleError::AlreadySelected(x.id()));
    }
    let n = selected.len();
    let delta = cost.cost(n + 1) - cost.cost(n);
    if delta < 0.0 {
        return Err(ScheduleError::NegativeCost(delta));
    }
    Ok(delta)
}

/// User-supplied threshold routine.
pub trait ThresholdRule: Send + fmt::Debug {
    fn next(&mut self, x: PointView<'_>, selected: &SelectedSet, history: &[f64]) -> f64;

    /// The same rule with its internal state reset.
    fn fresh(&self) -> Box<dyn ThresholdRule>;
}

/// Schedule configuration as it appears in run files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleConfig {
    /// `τ_t = tau` for all t.
    Uniform { tau: f64 },
    /// `τ_t = c(L ∪ {x_t}) − c(L)` with `c(S) = scale·|S|^exponent`.
    Cost {
        cost: CostKind,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exponent: Option<f64>,
    },
    /// Multiplicative pacing: raise the threshold by `step` after a
    /// selection, lower it otherwise, clamped to `[min, max]`.
    Pacing {
        initial: f64,
        step: f64,
        min: f64,
        max: f64,
    },
    /// Seeded arbitrary thresholds drawn uniformly from `[lo, hi]`.
    Jitter { lo: f64, hi: f64, seed: u64 },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Cardinality,
    Power,
}

impl FromStr for ScheduleConfig {
    type Err = ScheduleError;

    /// Short forms: `uniform:0.5`, `cost:cardinality:0.1`,
    /// `cost:power:2[:scale]`, `pacing:initial:step:min:max`,
    /// `jitter:lo:hi:seed`, or a JSON object.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.starts_with('{') {
            return serde_json::from_str(s).map_err(|e| ScheduleError::Config(e.to_string()));
        }
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64, ScheduleError> {
            parts
                .get(i)
                .ok_or_else(|| ScheduleError::Config(format!("`{s}`: missing field {i}")))?
                .parse::<f64>()
                .map_err(|e| ScheduleError::Config(format!("`{s}`: {e}")))
        };
        let cfg = match parts[0] {
            "uniform" => ScheduleConfig::Uniform { tau: num(1)? },
            "cost" => match parts.get(1).copied() {
                Some("cardinality") => ScheduleConfig::Cost {
                    cost: CostKind::Cardinality,
                    scale: if parts.len() > 2 { num(2)? } else { 1.0 },
                    exponent: None,
                },
                Some("power") => ScheduleConfig::Cost {
                    cost: CostKind::Power,
                    exponent: Some(num(2)?),
                    scale: if parts.len() > 3 { num(3)? } else { 1.0 },
                },
                _ => return Err(ScheduleError::Config(format!("`{s}`: unknown cost"))),
            },
            "pacing" => ScheduleConfig::Pacing {
                initial: num(1)?,
                step: num(2)?,
                min: num(3)?,
                max: num(4)?,
            },
            "jitter" => ScheduleConfig::Jitter {
                lo: num(1)?,
                hi: num(2)?,
                seed: num(3)? as u64,
            },
            other => return Err(ScheduleError::Config(format!("unknown schedule kind `{other}`"))),
        };
        Ok(cfg)
    }
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
enum Kind {
    Uniform(f64),
    Cost(CostFunction),
    Pacing {
        current: f64,
        initial: f64,
        step: f64,
        min: f64,
        max: f64,
        last_len: usize,
    },
    Jitter {
        lo: f64,
        hi: f64,
        seed: u64,
        rng: ChaCha8Rng,
    },
    Custom(Box<dyn ThresholdRule>),
}

/// A threshold-setting routine together with everything it has emitted.
#[derive(Debug)]
pub struct ThresholdSchedule {
    kind: Kind,
    config: Option<ScheduleConfig>,
    history: Vec<f64>,
    tau_min: f64,
    tau_max: f64,
}

impl ThresholdSchedule {
    fn with_kind(kind: Kind, config: Option<ScheduleConfig>) -> Self {
        ThresholdSchedule {
            kind,
            config,
            history: Vec::new(),
            tau_min: f64::INFINITY,
            tau_max: f64::NEG_INFINITY,
        }
    }

    pub fn uniform(tau: f64) -> Result<Self, ScheduleError> {
        Self::from_config(&ScheduleConfig::Uniform { tau })
    }

    pub fn cost(cost: CostFunction) -> Result<Self, ScheduleError> {
        cost.validate()?;
        let config = if cost.exponent == 1.0 {
            ScheduleConfig::Cost {
                cost: CostKind::Cardinality,
                scale: cost.scale,
                exponent: None,
            }
        } else {
            ScheduleConfig::Cost {
                cost: CostKind::Power,
                scale: cost.scale,
                exponent: Some(cost.exponent),
            }
        };
        Ok(Self::with_kind(Kind::Cost(cost), Some(config)))
    }

    pub fn custom(rule: Box<dyn ThresholdRule>) -> Self {
        Self::with_kind(Kind::Custom(rule), None)
    }

    /// Validates a configuration and builds the schedule. Zero or negative
    /// thresholds are rejected here, before any point is seen.
    pub fn from_config(config: &ScheduleConfig) -> Result<Self, ScheduleError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ScheduleError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        let kind = match *config {
            ScheduleConfig::Uniform { tau } => {
                positive("tau", tau)?;
                Kind::Uniform(tau)
            }
            ScheduleConfig::Cost { cost, scale, exponent } => {
                let exponent = match (cost, exponent) {
                    (CostKind::Cardinality, None) | (CostKind::Cardinality, Some(1.0)) => 1.0,
                    (CostKind::Cardinality, Some(e)) => {
                        return Err(ScheduleError::Config(format!(
                            "cardinality cost takes no exponent (got {e})"
                        )))
                    }
                    (CostKind::Power, Some(e)) => e,
                    (CostKind::Power, None) => {
                        return Err(ScheduleError::Config("power cost needs an exponent".into()))
                    }
                };
                let c = CostFunction { scale, exponent };
                c.validate()?;
                Kind::Cost(c)
            }
            ScheduleConfig::Pacing { initial, step, min, max } => {
                positive("min", min)?;
                if !(min <= initial && initial <= max) {
                    return Err(ScheduleError::Config(format!(
                        "pacing needs min <= initial <= max, got {min} <= {initial} <= {max}"
                    )));
                }
                if !(0.0..1.0).contains(&step) {
                    return Err(ScheduleError::Config(format!("pacing step must lie in [0, 1), got {step}")));
                }
                Kind::Pacing {
                    current: initial,
                    initial,
                    step,
                    min,
                    max,
                    last_len: 0,
                }
            }
            ScheduleConfig::Jitter { lo, hi, seed } => {
                positive("lo", lo)?;
                if !(hi.is_finite() && hi >= lo) {
                    return Err(ScheduleError::Config(format!("jitter needs lo <= hi, got {lo}, {hi}")));
                }
                Kind::Jitter {
                    lo,
                    hi,
                    seed,
                    rng: ChaCha8Rng::seed_from_u64(seed),
                }
            }
        };
        Ok(Self::with_kind(kind, Some(config.clone())))
    }

    /// The same routine with an empty history.
    pub fn fresh(&self) -> Self {
        let kind = match &self.kind {
            Kind::Uniform(t) => Kind::Uniform(*t),
            Kind::Cost(c) => Kind::Cost(*c),
            Kind::Pacing { initial, step, min, max, .. } => Kind::Pacing {
                current: *initial,
                initial: *initial,
                step: *step,
                min: *min,
                max: *max,
                last_len: 0,
            },
            Kind::Jitter { lo, hi, seed, .. } => Kind::Jitter {
                lo: *lo,
                hi: *hi,
                seed: *seed,
                rng: ChaCha8Rng::seed_from_u64(*seed),
            },
            Kind::Custom(rule) => Kind::Custom(rule.fresh()),
        };
        Self::with_kind(kind, self.config.clone())
    }

    pub fn config(&self) -> Option<&ScheduleConfig> {
        self.config.as_ref()
    }

    /// Emits `τ_t` for the arriving point `x` and records it.
    pub fn next_threshold(&mut self, x: PointView<'_>, selected: &SelectedSet) -> Result<f64, ScheduleError> {
        let t = self.history.len() + 1;
        let tau = match &mut self.kind {
            Kind::Uniform(tau) => *tau,
            Kind::Cost(c) => marginal_cost_threshold(c, x, selected)?,
            Kind::Pacing {
                current,
                step,
                min,
                max,
                last_len,
                ..
            } => {
                if t > 1 {
                    let factor = if selected.len() > *last_len { 1.0 + *step } else { 1.0 - *step };
                    *current = (*current * factor).clamp(*min, *max);
                }
                *last_len = selected.len();
                *current
            }
            Kind::Jitter { lo, hi, rng, .. } => {
                if lo == hi {
                    *lo
                } else {
                    rng.gen_range(*lo..=*hi)
                }
            }
            Kind::Custom(rule) => rule.next(x, selected, &self.history),
        };
        if !(tau.is_finite() && tau > 0.0) {
            return Err(ScheduleError::NonPositive { t, tau });
        }
        self.history.push(tau);
        self.tau_min = self.tau_min.min(tau);
        self.tau_max = self.tau_max.max(tau);
        Ok(tau)
    }

    /// Every threshold emitted so far, in order.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn tau_min(&self) -> Option<f64> {
        (!self.history.is_empty()).then_some(self.tau_min)
    }

    pub fn tau_max(&self) -> Option<f64> {
        (!self.history.is_empty()).then_some(self.tau_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point::Point;

    fn selected(n: u64) -> SelectedSet {
        let pts: Vec<Point> = (100..100 + n).map(|i| Point::with_features(i, vec![0.0])).collect();
        SelectedSet::revealed(&pts).unwrap()
    }

    fn x() -> Point {
        Point::with_features(1, vec![0.0])
    }

    #[test]
    fn uniform_is_constant() {
        let mut s = ThresholdSchedule::uniform(0.1).unwrap();
        for _ in 0..5 {
            assert_eq!(s.next_threshold(x().view(), &selected(2)).unwrap(), 0.1);
        }
        assert_eq!((s.tau_min(), s.tau_max()), (Some(0.1), Some(0.1)));
    }

    #[test]
    fn cardinality_cost_is_one() {
        let mut s = ThresholdSchedule::cost(CostFunction::cardinality(1.0)).unwrap();
        for n in [0, 3, 9] {
            assert_eq!(s.next_threshold(x().view(), &selected(n)).unwrap(), 1.0);
        }
    }

    #[test]
    fn squared_cost_at_three() {
        let mut s = ThresholdSchedule::cost(CostFunction::power(1.0, 2.0)).unwrap();
        assert_eq!(s.next_threshold(x().view(), &selected(3)).unwrap(), 7.0);
    }

    #[test]
    fn marginal_costs() {
        let p = x();
        let card = CostFunction::cardinality(1.0);
        assert_eq!(marginal_cost_threshold(&card, p.view(), &selected(5)).unwrap(), 1.0);
        let scaled = CostFunction::cardinality(0.1);
        for n in [0, 1, 7] {
            let v = marginal_cost_threshold(&scaled, p.view(), &selected(n)).unwrap();
            assert!((v - 0.1).abs() < 1e-15);
        }
        let root = CostFunction::power(1.0, 0.5);
        let v = marginal_cost_threshold(&root, p.view(), &selected(24)).unwrap();
        assert!((v - (5.0 - 24f64.sqrt())).abs() < 1e-12);
        assert!((v - 0.10102).abs() < 1e-5);
    }

    #[test]
    fn marginal_cost_precondition() {
        let s = selected(2);
        let member = Point::with_features(100, vec![0.0]);
        assert_eq!(
            marginal_cost_threshold(&CostFunction::cardinality(1.0), member.view(), &s),
            Err(ScheduleError::AlreadySelected(100))
        );
    }

    #[test]
    fn non_positive_configs_are_rejected() {
        assert!(ThresholdSchedule::uniform(0.0).is_err());
        assert!(ThresholdSchedule::uniform(-1.0).is_err());
        assert!(ThresholdSchedule::cost(CostFunction::cardinality(0.0)).is_err());
        assert!(ThresholdSchedule::from_config(&ScheduleConfig::Jitter { lo: 0.0, hi: 1.0, seed: 1 }).is_err());
    }

    #[derive(Debug)]
    struct Falling;

    impl ThresholdRule for Falling {
        fn next(&mut self, _x: PointView<'_>, _s: &SelectedSet, history: &[f64]) -> f64 {
            1.0 - history.len() as f64
        }
        fn fresh(&self) -> Box<dyn ThresholdRule> {
            Box::new(Falling)
        }
    }

    #[test]
    fn custom_rule_emitting_zero_is_an_error() {
        let mut s = ThresholdSchedule::custom(Box::new(Falling));
        assert_eq!(s.next_threshold(x().view(), &selected(0)).unwrap(), 1.0);
        assert_eq!(
            s.next_threshold(x().view(), &selected(0)),
            Err(ScheduleError::NonPositive { t: 2, tau: 0.0 })
        );
        assert_eq!(s.history(), &[1.0]);
    }

    #[test]
    fn pacing_moves_with_decisions() {
        let cfg = ScheduleConfig::Pacing { initial: 1.0, step: 0.5, min: 0.25, max: 2.0 };
        let mut s = ThresholdSchedule::from_config(&cfg).unwrap();
        let p = x();
        assert_eq!(s.next_threshold(p.view(), &selected(0)).unwrap(), 1.0);
        // previous point selected
        assert_eq!(s.next_threshold(p.view(), &selected(1)).unwrap(), 1.5);
        assert_eq!(s.next_threshold(p.view(), &selected(2)).unwrap(), 2.0);
        assert_eq!(s.next_threshold(p.view(), &selected(2)).unwrap(), 1.0);
        assert_eq!(s.next_threshold(p.view(), &selected(2)).unwrap(), 0.5);
        assert_eq!(s.next_threshold(p.view(), &selected(2)).unwrap(), 0.25);
        assert_eq!(s.tau_min(), Some(0.25));
        assert_eq!(s.tau_max(), Some(2.0));
    }

    #[test]
    fn jitter_replays_under_fresh() {
        let mut a = ThresholdSchedule::from_config(&ScheduleConfig::Jitter { lo: 0.1, hi: 0.9, seed: 4 }).unwrap();
        let p = x();
        let first: Vec<f64> = (0..20).map(|_| a.next_threshold(p.view(), &selected(0)).unwrap()).collect();
        let mut b = a.fresh();
        let again: Vec<f64> = (0..20).map(|_| b.next_threshold(p.view(), &selected(0)).unwrap()).collect();
        assert_eq!(first, again);
        assert!(first.iter().all(|t| (0.1..=0.9).contains(t)));
    }

    #[test]
    fn config_json_and_short_forms() {
        let u: ScheduleConfig = serde_json::from_str(r#"{"kind":"uniform","tau":0.1}"#).unwrap();
        assert_eq!(u, ScheduleConfig::Uniform { tau: 0.1 });
        let c: ScheduleConfig = serde_json::from_str(r#"{"kind":"cost","cost":"cardinality","scale":0.1}"#).unwrap();
        assert_eq!(c, ScheduleConfig::Cost { cost: CostKind::Cardinality, scale: 0.1, exponent: None });
        assert!(serde_json::from_str::<ScheduleConfig>(r#"{"kind":"uniform","tau":0.1,"x":1}"#).is_err());
        assert_eq!("uniform:0.5".parse::<ScheduleConfig>().unwrap(), ScheduleConfig::Uniform { tau: 0.5 });
        assert_eq!("cost:cardinality:0.1".parse::<ScheduleConfig>().unwrap(), c);
        assert_eq!(
            "cost:power:2".parse::<ScheduleConfig>().unwrap(),
            ScheduleConfig::Cost { cost: CostKind::Power, scale: 1.0, exponent: Some(2.0) }
        );
        assert!("bogus:1".parse::<ScheduleConfig>().is_err());
        assert_eq!(serde_json::to_string(&u).unwrap(), r#"{"kind":"uniform","tau":0.1}"#);
    }
}
