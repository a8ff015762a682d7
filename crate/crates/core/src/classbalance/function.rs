//! Class-balance value functions.
//!
//! Both modes apply a concave `g` per class and sum:
//!
//! * soft: `f(S) = Σ_k g(Σ_{z∈S} π̂_k(z))`, accumulated predicted mass;
//! * label-aware: `f(S) = Σ_k g(c_k(S))` over the revealed labels of `S`.
//!
//! A point's label is unknown while it is being considered, so the
//! label-aware gain is its expectation under `π̂(x)`:
//! `Σ_k π̂_k(x)·[g(c_k+1) − g(c_k)]`. With a one-hot (correct) `π̂` this is
//! exactly `g(c_y+1) − g(c_y)`.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::classifier::SoftClassifier;
use crate::point::{Point, PointView};
use crate::set::SelectedSet;
use crate::value::{CoreError, GainState, SetFunction};

/// Concave, increasing `g` with `g(0) = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Concave {
    #[default]
    Sqrt,
    Log1p,
}

impl Concave {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Concave::Sqrt => x.sqrt(),
            Concave::Log1p => x.ln_1p(),
        }
    }

    /// `g(x + d) − g(x)`, computed without cancellation for the square root.
    pub fn increment(self, x: f64, d: f64) -> f64 {
        match self {
            Concave::Sqrt => {
                let s = (x + d).sqrt() + x.sqrt();
                if s == 0.0 {
                    0.0
                } else {
                    d / s
                }
            }
            Concave::Log1p => (d / (1.0 + x)).ln_1p(),
        }
    }
}

impl fmt::Display for Concave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Concave::Sqrt => "sqrt",
            Concave::Log1p => "log1p",
        })
    }
}

impl FromStr for Concave {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sqrt" => Ok(Concave::Sqrt),
            "log1p" | "log" => Ok(Concave::Log1p),
            "identity" | "linear" => Err(CoreError::InvalidParameter(
                "g must be strictly concave; the identity gives no balancing pressure".into(),
            )),
            other => Err(CoreError::InvalidParameter(format!("unknown concave function '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    Soft,
    #[default]
    LabelAware,
}

impl FromStr for BalanceMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "soft" => Ok(BalanceMode::Soft),
            "label-aware" | "label_aware" | "labels" => Ok(BalanceMode::LabelAware),
            other => Err(CoreError::InvalidParameter(format!("unknown balance mode '{other}'"))),
        }
    }
}

/// Where `π̂(x)` comes from.
#[derive(Clone, Debug)]
pub enum ProbabilitySource {
    /// The point's own probability payload.
    Payload,
    Classifier(Arc<SoftClassifier>),
}

#[derive(Clone, Debug)]
pub struct ClassBalance {
    classes: usize,
    g: Concave,
    mode: BalanceMode,
    source: ProbabilitySource,
}

impl ClassBalance {
    pub fn new(classes: usize, g: Concave, mode: BalanceMode, source: ProbabilitySource) -> Result<Self, CoreError> {
        if classes < 2 {
            return Err(CoreError::InvalidParameter(format!("class balance needs at least 2 classes, got {classes}")));
        }
        if let ProbabilitySource::Classifier(c) = &source {
            if c.classes() != classes {
                return Err(CoreError::InvalidParameter(format!(
                    "classifier has {} classes, value function {classes}",
                    c.classes()
                )));
            }
        }
        Ok(ClassBalance { classes, g, mode, source })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn concave(&self) -> Concave {
        self.g
    }

    pub fn mode(&self) -> BalanceMode {
        self.mode
    }

    pub fn source(&self) -> &ProbabilitySource {
        &self.source
    }

    /// `π̂(x)`, validated.
    pub fn probs<'a>(&self, x: PointView<'a>) -> Result<Cow<'a, [f64]>, CoreError> {
        let p: Cow<'a, [f64]> = match &self.source {
            ProbabilitySource::Payload => match x.probs() {
                Some(p) => Cow::Borrowed(p),
                None => {
                    return Err(CoreError::PayloadKind {
                        id: x.id(),
                        expected: "probs",
                        found: x.payload().kind(),
                    })
                }
            },
            ProbabilitySource::Classifier(c) => Cow::Owned(c.predict(x)?),
        };
        if p.len() != self.classes {
            return Err(CoreError::Dimension {
                id: x.id(),
                expected: self.classes,
                found: p.len(),
            });
        }
        crate::point::validate_probabilities(x.id(), &p)?;
        Ok(p)
    }

    fn label_of(&self, id: u64, label: Option<usize>) -> Result<usize, CoreError> {
        let label = label.ok_or(CoreError::MissingLabel { id })?;
        if label >= self.classes {
            return Err(CoreError::LabelOutOfRange {
                id,
                label,
                classes: self.classes,
            });
        }
        Ok(label)
    }

    /// Per-class accumulated mass (soft) or label counts (label-aware) of `set`.
    pub fn class_totals(&self, set: &SelectedSet) -> Result<Vec<f64>, CoreError> {
        let mut totals = vec![0.0; self.classes];
        for m in set {
            match self.mode {
                BalanceMode::Soft => {
                    for (t, p) in totals.iter_mut().zip(self.probs(m.point().view())?.iter()) {
                        *t += p;
                    }
                }
                BalanceMode::LabelAware => totals[self.label_of(m.id(), m.label())?] += 1.0,
            }
        }
        Ok(totals)
    }

    fn gain_from_totals(&self, totals: &[f64], p: &[f64]) -> f64 {
        match self.mode {
            BalanceMode::Soft => totals.iter().zip(p).map(|(&m, &pk)| self.g.increment(m, pk)).sum(),
            BalanceMode::LabelAware => totals.iter().zip(p).map(|(&c, &pk)| pk * self.g.increment(c, 1.0)).sum(),
        }
    }

    fn value_from_totals(&self, totals: &[f64]) -> f64 {
        totals.iter().map(|&t| self.g.apply(t)).sum()
    }
}

impl SetFunction for ClassBalance {
    fn describe(&self) -> String {
        let mode = match self.mode {
            BalanceMode::Soft => "soft",
            BalanceMode::LabelAware => "label-aware",
        };
        let source = match &self.source {
            ProbabilitySource::Payload => "payload".to_string(),
            ProbabilitySource::Classifier(c) => format!("classifier(alpha={:.4})", c.alpha()),
        };
        format!("class-balance({mode}, g={}, K={}, probs={source})", self.g, self.classes)
    }

    fn value(&self, set: &SelectedSet) -> Result<f64, CoreError> {
        Ok(self.value_from_totals(&self.class_totals(set)?))
    }

    fn marginal_gain(&self, x: PointView<'_>, set: &SelectedSet) -> Result<f64, CoreError> {
        if set.contains(x.id()) {
            return Err(CoreError::AlreadyMember(x.id()));
        }
        let p = self.probs(x)?;
        Ok(self.gain_from_totals(&self.class_totals(set)?, &p))
    }

    fn gain_by_evaluation(&self, x: &Point, set: &SelectedSet) -> Result<f64, CoreError> {
        if set.contains(x.id()) {
            return Err(CoreError::AlreadyMember(x.id()));
        }
        let base = self.value(set)?;
        match self.mode {
            BalanceMode::Soft => Ok(self.value(&set.with(x.view().to_unlabeled(), None)?)? - base),
            BalanceMode::LabelAware => {
                // expectation of the value increase over the label x might turn out to have
                let p = self.probs(x.view())?;
                let mut total = 0.0;
                for (k, &pk) in p.iter().enumerate() {
                    if pk > 0.0 {
                        total += pk * (self.value(&set.with(x.view().to_unlabeled(), Some(k))?)? - base);
                    }
                }
                Ok(total)
            }
        }
    }

    fn new_state(&self) -> Box<dyn GainState> {
        Box::new(BalanceState {
            f: self.clone(),
            totals: vec![0.0; self.classes],
            value: 0.0,
        })
    }
}

#[derive(Debug)]
struct BalanceState {
    f: ClassBalance,
    totals: Vec<f64>,
    value: f64,
}

impl GainState for BalanceState {
    fn gain(&self, x: PointView<'_>) -> Result<f64, CoreError> {
        let p = self.f.probs(x)?;
        Ok(self.f.gain_from_totals(&self.totals, &p))
    }

    fn commit(&mut self, x: PointView<'_>, label: Option<usize>) -> Result<(), CoreError> {
        match self.f.mode {
            BalanceMode::Soft => {
                let p = self.f.probs(x)?;
                for (t, pk) in self.totals.iter_mut().zip(p.iter()) {
                    *t += pk;
                }
            }
            BalanceMode::LabelAware => {
                let k = self.f.label_of(x.id(), label)?;
                self.totals[k] += 1.0;
            }
        }
        self.value = self.f.value_from_totals(&self.totals);
        Ok(())
    }

    fn value(&self) -> f64 {
        self.value
    }
}

/// Gain of `x` under a class-balance function: soft mode gives the
/// set-function increase, label-aware mode the expected increase.
pub fn cb_marginal(f: &ClassBalance, x: PointView<'_>, set: &SelectedSet) -> Result<f64, CoreError> {
    f.marginal_gain(x, set)
}

/// `Σ_k π̂_k(x)·[g(m_k + π̂_k(x)) − g(m_k)]` with `m_k` the accumulated mass
/// of the selection: the soft score weighted by the candidate's own
/// prediction. Not the marginal of a set function.
pub fn weighted_soft_score(g: Concave, x: &[f64], selected: &[&[f64]]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(k, &pk)| {
            let m: f64 = selected.iter().map(|z| z[k]).sum();
            pk * g.increment(m, pk)
        })
        .sum()
}
