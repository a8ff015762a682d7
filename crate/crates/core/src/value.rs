//! Set value functions.
//!
//! A [`SetFunction`] is the pure definition `f: 2^D -> R+`. Engines evaluate
//! it through an incremental [`GainState`] that holds whatever per-run
//! bookkeeping makes a marginal gain cheap (covered elements, per-class
//! mass). The two routes must agree: the stateless
//! [`SetFunction::marginal_gain`] on `S` equals the state's gain after
//! committing `S`, and both equal [`SetFunction::gain_by_evaluation`], which
//! is assembled from `value` calls only.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::point::{Point, PointView};
use crate::set::SelectedSet;

/// Relative tolerance shared by all numerical property assertions.
pub const TOLERANCE: f64 = 1e-9;

/// `true` when `a` and `b` agree to [`TOLERANCE`], relative to their magnitude.
pub fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= tolerance_for(a, b)
}

pub(crate) fn tolerance_for(a: f64, b: f64) -> f64 {
    TOLERANCE * 1f64.max(a.abs()).max(b.abs())
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CoreError {
    #[error("point {id}: payload dimension {found}, expected {expected}")]
    Dimension { id: u64, expected: usize, found: usize },
    #[error("point {id}: {found} payload given, {expected} payload required")]
    PayloadKind {
        id: u64,
        expected: &'static str,
        found: &'static str,
    },
    #[error("point {id}: invalid probability vector ({reason})")]
    InvalidProbabilities { id: u64, reason: String },
    #[error("point {0} is already in the set")]
    AlreadyMember(u64),
    #[error("point {id} has no revealed label")]
    MissingLabel { id: u64 },
    #[error("point {id}: label {label} out of range for {classes} classes")]
    LabelOutOfRange { id: u64, label: usize, classes: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// The definition of a nonnegative set function over stream points.
pub trait SetFunction: Send + Sync + fmt::Debug {
    /// Short human-readable descriptor, e.g. `coverage(universe=3)`.
    fn describe(&self) -> String;

    /// `f(S)`, evaluated from scratch. Order-insensitive.
    fn value(&self, set: &SelectedSet) -> Result<f64, CoreError>;

    /// `f(S ∪ {x}) − f(S)` for an unselected `x`, computed without
    /// consulting `x`'s label.
    fn marginal_gain(&self, x: PointView<'_>, set: &SelectedSet) -> Result<f64, CoreError> {
        if set.contains(x.id()) {
            return Err(CoreError::AlreadyMember(x.id()));
        }
        let with = set.with(x.to_unlabeled(), None)?;
        Ok(self.value(&with)? - self.value(set)?)
    }

    /// The gain of `x` rebuilt from `value` calls alone, for checking the
    /// other two routes. Label-blind functions use the plain difference;
    /// functions whose gain is an expectation over `x`'s unknown label
    /// override this.
    fn gain_by_evaluation(&self, x: &Point, set: &SelectedSet) -> Result<f64, CoreError> {
        if set.contains(x.id()) {
            return Err(CoreError::AlreadyMember(x.id()));
        }
        let with = set.with(x.clone(), x.reveal_label())?;
        Ok(self.value(&with)? - self.value(set)?)
    }

    /// Fresh incremental state for the empty set.
    fn new_state(&self) -> Box<dyn GainState>;
}

/// Incremental bookkeeping for one run of a [`SetFunction`].
pub trait GainState: Send + Sync + fmt::Debug {
    /// Marginal gain of `x` with respect to everything committed so far.
    fn gain(&self, x: PointView<'_>) -> Result<f64, CoreError>;

    /// Adds `x` (with its revealed label) to the committed set.
    fn commit(&mut self, x: PointView<'_>, label: Option<usize>) -> Result<(), CoreError>;

    /// Value of the committed set.
    fn value(&self) -> f64;
}

/// A set function bundled with its incremental state and evaluation
/// counters. Read-only methods may be called concurrently; `commit` needs
/// exclusive access.
#[derive(Debug)]
pub struct ValueFunctionHandle {
    function: Arc<dyn SetFunction>,
    state: Box<dyn GainState>,
    committed: SelectedSet,
    gain_evals: AtomicU64,
    value_evals: AtomicU64,
}

impl ValueFunctionHandle {
    pub fn new(function: Arc<dyn SetFunction>) -> Self {
        let state = function.new_state();
        ValueFunctionHandle {
            function,
            state,
            committed: SelectedSet::new(),
            gain_evals: AtomicU64::new(0),
            value_evals: AtomicU64::new(0),
        }
    }

    pub fn function(&self) -> &Arc<dyn SetFunction> {
        &self.function
    }

    /// Stateless `f(S)`.
    pub fn value(&self, set: &SelectedSet) -> Result<f64, CoreError> {
        self.value_evals.fetch_add(1, Ordering::Relaxed);
        self.function.value(set)
    }

    /// Stateless `f(S ∪ {x}) − f(S)`.
    pub fn marginal_gain(&self, x: PointView<'_>, set: &SelectedSet) -> Result<f64, CoreError> {
        self.gain_evals.fetch_add(1, Ordering::Relaxed);
        self.function.marginal_gain(x, set)
    }

    /// Gain of `x` against the committed set, via the incremental state.
    pub fn gain(&self, x: PointView<'_>) -> Result<f64, CoreError> {
        if self.committed.contains(x.id()) {
            return Err(CoreError::AlreadyMember(x.id()));
        }
        self.gain_evals.fetch_add(1, Ordering::Relaxed);
        self.state.gain(x)
    }

    /// Commits a selected point. `t` is its arrival index.
    pub fn commit(&mut self, point: Arc<Point>, label: Option<usize>, t: usize) -> Result<(), CoreError> {
        if self.committed.contains(point.id()) {
            return Err(CoreError::AlreadyMember(point.id()));
        }
        self.state.commit(point.view(), label)?;
        self.committed.insert(point, label, t)
    }

    /// Value of the committed set as tracked by the incremental state.
    pub fn committed_value(&self) -> f64 {
        self.state.value()
    }

    pub fn committed(&self) -> &SelectedSet {
        &self.committed
    }

    /// `(gain evaluations, value evaluations)` so far.
    pub fn evaluations(&self) -> (u64, u64) {
        (
            self.gain_evals.load(Ordering::Relaxed),
            self.value_evals.load(Ordering::Relaxed),
        )
    }
}

/// Weighted coverage: each point covers the universe elements whose
/// feature entry is positive; `f(S)` is the total weight covered by `S`.
#[derive(Clone, Debug)]
pub struct Coverage {
    weights: Arc<[f64]>,
}

impl Coverage {
    /// Unit weights over a universe of `universe` elements.
    pub fn new(universe: usize) -> Self {
        Coverage {
            weights: vec![1.0; universe].into(),
        }
    }

    pub fn with_weights(weights: Vec<f64>) -> Result<Self, CoreError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CoreError::InvalidParameter(
                "coverage weights must be finite and nonnegative".into(),
            ));
        }
        Ok(Coverage {
            weights: weights.into(),
        })
    }

    pub fn universe(&self) -> usize {
        self.weights.len()
    }

    /// A point covering the listed elements (0-based) of a universe.
    pub fn point(id: u64, elements: &[usize], universe: usize) -> Point {
        let mut f = vec![0.0; universe];
        for &e in elements {
            f[e] = 1.0;
        }
        Point::with_features(id, f)
    }

    fn incidence<'a>(&self, x: PointView<'a>) -> Result<&'a [f64], CoreError> {
        let f = x.features().ok_or(CoreError::PayloadKind {
            id: x.id(),
            expected: "features",
            found: x.payload().kind(),
        })?;
        if f.len() != self.weights.len() {
            return Err(CoreError::Dimension {
                id: x.id(),
                expected: self.weights.len(),
                found: f.len(),
            });
        }
        Ok(f)
    }

    fn covered(&self, set: &SelectedSet) -> Result<Vec<bool>, CoreError> {
        let mut covered = vec![false; self.weights.len()];
        for m in set {
            for (c, v) in covered.iter_mut().zip(self.incidence(m.point().view())?) {
                *c |= *v > 0.0;
            }
        }
        Ok(covered)
    }

    fn gain_over(&self, covered: &[bool], inc: &[f64]) -> f64 {
        inc.iter()
            .zip(covered)
            .zip(self.weights.iter())
            .filter(|((v, c), _)| **v > 0.0 && !**c)
            .map(|(_, w)| w)
            .fold(0.0, |a, w| a + w)
    }
}

impl SetFunction for Coverage {
    fn describe(&self) -> String {
        format!("coverage(universe={})", self.weights.len())
    }

    fn value(&self, set: &SelectedSet) -> Result<f64, CoreError> {
        let covered = self.covered(set)?;
        Ok(covered
            .iter()
            .zip(self.weights.iter())
            .filter(|(c, _)| **c)
            .map(|(_, w)| w)
            .fold(0.0, |a, w| a + w))
    }

    fn marginal_gain(&self, x: PointView<'_>, set: &SelectedSet) -> Result<f64, CoreError> {
        if set.contains(x.id()) {
            return Err(CoreError::AlreadyMember(x.id()));
        }
        let covered = self.covered(set)?;
        Ok(self.gain_over(&covered, self.incidence(x)?))
    }

    fn new_state(&self) -> Box<dyn GainState> {
        Box::new(CoverageState {
            function: self.clone(),
            covered: vec![false; self.weights.len()],
            value: 0.0,
        })
    }
}

#[derive(Debug)]
struct CoverageState {
    function: Coverage,
    covered: Vec<bool>,
    value: f64,
}

impl GainState for CoverageState {
    fn gain(&self, x: PointView<'_>) -> Result<f64, CoreError> {
        Ok(self.function.gain_over(&self.covered, self.function.incidence(x)?))
    }

    fn commit(&mut self, x: PointView<'_>, _label: Option<usize>) -> Result<(), CoreError> {
        let inc = self.function.incidence(x)?;
        self.value += self.function.gain_over(&self.covered, inc);
        for (c, v) in self.covered.iter_mut().zip(inc) {
            *c |= *v > 0.0;
        }
        Ok(())
    }

    fn value(&self) -> f64 {
        self.value
    }
}

/// `S ↦ f(B ∪ S)` for a fixed base set `B`: the value function of a later
/// batch that already holds the selections of earlier batches. Monotone,
/// nonnegative and submodular whenever `f` is.
#[derive(Debug, Clone)]
pub struct Conditioned {
    inner: Arc<dyn SetFunction>,
    base: SelectedSet,
}

impl Conditioned {
    pub fn new(inner: Arc<dyn SetFunction>, base: SelectedSet) -> Self {
        Conditioned { inner, base }
    }

    pub fn base(&self) -> &SelectedSet {
        &self.base
    }

    pub fn inner(&self) -> &Arc<dyn SetFunction> {
        &self.inner
    }
}

impl SetFunction for Conditioned {
    fn describe(&self) -> String {
        format!("{} | base of {}", self.inner.describe(), self.base.len())
    }

    fn value(&self, set: &SelectedSet) -> Result<f64, CoreError> {
        self.inner.value(&self.base.union(set))
    }

    fn marginal_gain(&self, x: PointView<'_>, set: &SelectedSet) -> Result<f64, CoreError> {
        if set.contains(x.id()) {
            return Err(CoreError::AlreadyMember(x.id()));
        }
        let joined = self.base.union(set);
        if joined.contains(x.id()) {
            return Ok(0.0);
        }
        self.inner.marginal_gain(x, &joined)
    }

    fn gain_by_evaluation(&self, x: &Point, set: &SelectedSet) -> Result<f64, CoreError> {
        if set.contains(x.id()) {
            return Err(CoreError::AlreadyMember(x.id()));
        }
        let joined = self.base.union(set);
        if joined.contains(x.id()) {
            return Ok(0.0);
        }
        self.inner.gain_by_evaluation(x, &joined)
    }

    fn new_state(&self) -> Box<dyn GainState> {
        let mut state = self.inner.new_state();
        for m in &self.base {
            state
                .commit(m.point().view(), m.label())
                .expect("base members were valid when they were selected");
        }
        Box::new(ConditionedState {
            state,
            base: self.base.sorted_ids(),
        })
    }
}

#[derive(Debug)]
struct ConditionedState {
    state: Box<dyn GainState>,
    base: Vec<u64>,
}

impl GainState for ConditionedState {
    fn gain(&self, x: PointView<'_>) -> Result<f64, CoreError> {
        if self.base.binary_search(&x.id()).is_ok() {
            return Ok(0.0);
        }
        self.state.gain(x)
    }

    fn commit(&mut self, x: PointView<'_>, label: Option<usize>) -> Result<(), CoreError> {
        if self.base.binary_search(&x.id()).is_ok() {
            return Ok(());
        }
        self.state.commit(x, label)
    }

    fn value(&self) -> f64 {
        self.state.value()
    }
}
