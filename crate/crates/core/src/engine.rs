//! Selection drivers.
//!
//! [`dmgt`] makes one pass over a stream and keeps a point exactly when its
//! marginal gain against the current selection strictly exceeds the
//! threshold emitted for it. Rejected points are dropped on the spot; the
//! only points retained are the selected ones.
//!
//! [`batch_dmgt`] runs it over consecutive batches with a hook that builds
//! each batch's value function from earlier selections, and [`fed_dmgt`]
//! runs independent agents concurrently and pools their selections.
//! [`rand_select`] is the uniform random baseline.

use std::collections::HashSet;
use std::sync::Arc;
use std::thread;

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::point::{Point, Stream, StreamError};
use crate::schedule::{ScheduleError, ThresholdSchedule};
use crate::set::SelectedSet;
use crate::value::{Conditioned, CoreError, SetFunction, ValueFunctionHandle};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("stream failed after t={last_good_t}: {source}")]
    Stream {
        last_good_t: usize,
        #[source]
        source: StreamError,
    },
    #[error("value function failed at t={t} (point {id}): {source}")]
    Value {
        t: usize,
        id: u64,
        #[source]
        source: CoreError,
    },
    #[error("schedule failed at t={t}: {source}")]
    Schedule {
        t: usize,
        #[source]
        source: ScheduleError,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Dmgt,
    Random,
}

/// The decision taken on one arriving point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// 1-based arrival index.
    pub t: usize,
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    pub selected: bool,
    /// Value of the selection after this point, when a value function drove the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

/// Everything a run decided, in arrival order.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionTrace {
    pub kind: TraceKind,
    pub selected: SelectedSet,
    pub thresholds: Vec<f64>,
    pub decisions: Vec<Decision>,
    /// Number of stream points consumed.
    pub touched: usize,
    /// Value of the final selection as tracked during the run.
    pub value: Option<f64>,
}

impl SelectionTrace {
    fn new(kind: TraceKind) -> Self {
        SelectionTrace {
            kind,
            selected: SelectedSet::new(),
            thresholds: Vec::new(),
            decisions: Vec::new(),
            touched: 0,
            value: None,
        }
    }

    pub fn tau_min(&self) -> Option<f64> {
        self.thresholds.iter().copied().reduce(f64::min)
    }

    pub fn tau_max(&self) -> Option<f64> {
        self.thresholds.iter().copied().reduce(f64::max)
    }

    /// `f(L_t)` after each arrival.
    pub fn value_curve(&self) -> Vec<f64> {
        self.decisions.iter().filter_map(|d| d.value).collect()
    }
}

/// Single-pass dynamic marginal-gain thresholding over `stream`.
///
/// Selected points are committed into `f`'s incremental state, so `f`
/// should start from the state the run is meant to extend (normally empty).
pub fn dmgt(
    stream: Stream,
    f: &mut ValueFunctionHandle,
    schedule: &mut ThresholdSchedule,
) -> Result<SelectionTrace, EngineError> {
    let mut trace = SelectionTrace::new(TraceKind::Dmgt);
    for (i, item) in stream.enumerate() {
        let t = i + 1;
        let point = item.map_err(|source| EngineError::Stream {
            last_good_t: t - 1,
            source,
        })?;
        trace.touched += 1;
        let tau = schedule
            .next_threshold(point.view(), &trace.selected)
            .map_err(|source| EngineError::Schedule { t, source })?;
        let id = point.id();
        let value_err = |source| EngineError::Value { t, id, source };
        let gain = f.gain(point.view()).map_err(value_err)?;
        let selected = gain > tau;
        if selected {
            let label = point.reveal_label();
            let point = Arc::new(point);
            f.commit(Arc::clone(&point), label, t).map_err(value_err)?;
            trace.selected.insert(point, label, t).map_err(value_err)?;
        }
        trace.thresholds.push(tau);
        trace.decisions.push(Decision {
            t,
            id,
            tau: Some(tau),
            gain: Some(gain),
            selected,
            value: Some(f.committed_value()),
        });
    }
    trace.value = Some(f.committed_value());
    Ok(trace)
}

/// Uniform random `k`-subsequence of `stream`, chosen in one pass with a
/// reservoir of `k` points. Deterministic per `seed`.
pub fn rand_select(stream: Stream, k: usize, seed: u64) -> Result<SelectionTrace, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failure = None;
    let mut seen: Vec<u64> = Vec::new();
    let sample: Vec<(usize, Point)> = stream
        .enumerate()
        .map_while(|(i, item)| match item {
            Ok(p) => Some((i + 1, p)),
            Err(e) => {
                failure = Some(EngineError::Stream {
                    last_good_t: i,
                    source: e,
                });
                None
            }
        })
        .inspect(|(_, p)| seen.push(p.id()))
        .choose_multiple(&mut rng, k);
    if let Some(e) = failure {
        return Err(e);
    }
    if k > seen.len() {
        return Err(EngineError::Argument(format!(
            "cannot draw {k} points from a stream of {}",
            seen.len()
        )));
    }
    let mut sample = sample;
    sample.sort_by_key(|(t, _)| *t);

    let mut trace = SelectionTrace::new(TraceKind::Random);
    let chosen: HashSet<usize> = sample.iter().map(|(t, _)| *t).collect();
    for (t, p) in sample {
        let label = p.reveal_label();
        let id = p.id();
        trace
            .selected
            .push(p, label, t)
            .map_err(|source| EngineError::Value { t, id, source })?;
    }
    trace.touched = seen.len();
    trace.decisions = seen
        .into_iter()
        .enumerate()
        .map(|(i, id)| Decision {
            t: i + 1,
            id,
            tau: None,
            gain: None,
            selected: chosen.contains(&(i + 1)),
            value: None,
        })
        .collect();
    Ok(trace)
}

/// One agent's (or batch's) input.
#[derive(Debug)]
pub struct StreamInput {
    pub stream: Stream,
    pub schedule: ThresholdSchedule,
}

impl StreamInput {
    pub fn new(stream: Stream, schedule: ThresholdSchedule) -> Self {
        StreamInput { stream, schedule }
    }
}

/// Result of [`fed_dmgt`].
#[derive(Debug)]
pub struct FederatedRun {
    /// Per-agent outcome, in agent order. A failed agent does not affect the others.
    pub agents: Vec<Result<SelectionTrace, EngineError>>,
    /// Union of the successful agents' selections.
    pub selected: SelectedSet,
    /// Concatenation of the successful agents' thresholds.
    pub thresholds: Vec<f64>,
}

impl FederatedRun {
    pub fn tau_min(&self) -> Option<f64> {
        self.thresholds.iter().copied().reduce(f64::min)
    }

    pub fn tau_max(&self) -> Option<f64> {
        self.thresholds.iter().copied().reduce(f64::max)
    }

    pub fn traces(&self) -> impl Iterator<Item = &SelectionTrace> {
        self.agents.iter().filter_map(|a| a.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (usize, &EngineError)> {
        self.agents
            .iter()
            .enumerate()
            .filter_map(|(j, a)| a.as_ref().err().map(|e| (j, e)))
    }

    pub fn touched(&self) -> usize {
        self.traces().map(|t| t.touched).sum()
    }
}

/// Runs one independent DMGT per agent, each with its own copy of `f`'s
/// state, and pools the results. Agent streams are expected to carry
/// disjoint ids; the pool is a union keyed by id.
pub fn fed_dmgt(agents: Vec<StreamInput>, f: &Arc<dyn SetFunction>) -> Result<FederatedRun, EngineError> {
    if agents.is_empty() {
        return Err(EngineError::Argument("federated run needs at least one agent".into()));
    }
    let outcomes: Vec<Result<SelectionTrace, EngineError>> = thread::scope(|scope| {
        let handles: Vec<_> = agents
            .into_iter()
            .map(|input| {
                let f = Arc::clone(f);
                scope.spawn(move || {
                    let StreamInput { stream, mut schedule } = input;
                    let mut handle = ValueFunctionHandle::new(f);
                    dmgt(stream, &mut handle, &mut schedule)
                })
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(j, h)| {
                h.join()
                    .unwrap_or_else(|_| Err(EngineError::Argument(format!("agent {j} panicked"))))
            })
            .collect()
    });
    let mut selected = SelectedSet::new();
    let mut thresholds = Vec::new();
    for trace in outcomes.iter().filter_map(|o| o.as_ref().ok()) {
        selected = selected.union(&trace.selected);
        thresholds.extend_from_slice(&trace.thresholds);
    }
    Ok(FederatedRun {
        agents: outcomes,
        selected,
        thresholds,
    })
}

/// One completed batch: the value function it ran with and its trace.
#[derive(Debug)]
pub struct BatchSegment {
    pub function: Arc<dyn SetFunction>,
    pub trace: SelectionTrace,
}

/// What the between-batch hook gets to see.
#[derive(Debug)]
pub struct BatchBoundary<'a> {
    /// 0-based index of the batch about to start.
    pub next_batch: usize,
    /// Union of all selections so far.
    pub cumulative: &'a SelectedSet,
    pub completed: &'a [BatchSegment],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchFailure {
    /// 0-based index of the batch that did not complete.
    pub batch: usize,
    pub reason: String,
}

/// Result of [`batch_dmgt`].
#[derive(Debug)]
pub struct BatchRun {
    pub segments: Vec<BatchSegment>,
    pub selected: SelectedSet,
    pub thresholds: Vec<f64>,
    /// Set when a hook or a batch failed; `segments` then holds the batches
    /// completed before it.
    pub failure: Option<BatchFailure>,
}

impl BatchRun {
    pub fn tau_min(&self) -> Option<f64> {
        self.thresholds.iter().copied().reduce(f64::min)
    }

    pub fn tau_max(&self) -> Option<f64> {
        self.thresholds.iter().copied().reduce(f64::max)
    }

    pub fn touched(&self) -> usize {
        self.segments.iter().map(|s| s.trace.touched).sum()
    }

    /// The last batch's value function.
    pub fn last_function(&self) -> Option<&Arc<dyn SetFunction>> {
        self.segments.last().map(|s| &s.function)
    }
}

/// Hook signature for [`batch_dmgt`].
pub type BatchHook<'h> = dyn FnMut(&BatchBoundary<'_>) -> Result<Arc<dyn SetFunction>, String> + 'h;

/// DMGT over consecutive batches. `first` drives batch 0; before each
/// later batch the hook builds that batch's value function from what has
/// been selected so far.
pub fn batch_dmgt<H>(batches: Vec<StreamInput>, first: Arc<dyn SetFunction>, mut hook: H) -> Result<BatchRun, EngineError>
where
    H: FnMut(&BatchBoundary<'_>) -> Result<Arc<dyn SetFunction>, String>,
{
    if batches.is_empty() {
        return Err(EngineError::Argument("batch run needs at least one batch".into()));
    }
    let mut run = BatchRun {
        segments: Vec::new(),
        selected: SelectedSet::new(),
        thresholds: Vec::new(),
        failure: None,
    };
    for (b, input) in batches.into_iter().enumerate() {
        let function = if b == 0 {
            Arc::clone(&first)
        } else {
            let boundary = BatchBoundary {
                next_batch: b,
                cumulative: &run.selected,
                completed: &run.segments,
            };
            match hook(&boundary) {
                Ok(f) => f,
                Err(reason) => {
                    run.failure = Some(BatchFailure { batch: b, reason });
                    return Ok(run);
                }
            }
        };
        let StreamInput { stream, mut schedule } = input;
        let mut handle = ValueFunctionHandle::new(Arc::clone(&function));
        match dmgt(stream, &mut handle, &mut schedule) {
            Ok(trace) => {
                run.selected = run.selected.union(&trace.selected);
                run.thresholds.extend_from_slice(&trace.thresholds);
                run.segments.push(BatchSegment { function, trace });
            }
            Err(e) => {
                run.failure = Some(BatchFailure {
                    batch: b,
                    reason: e.to_string(),
                });
                return Ok(run);
            }
        }
    }
    Ok(run)
}

/// Hook that conditions a fixed base function on everything selected so
/// far: batch `b` runs with `S ↦ base(L_1 ∪ … ∪ L_{b−1} ∪ S)`.
pub fn carry_over(base: Arc<dyn SetFunction>) -> impl FnMut(&BatchBoundary<'_>) -> Result<Arc<dyn SetFunction>, String> {
    move |boundary| {
        let f: Arc<dyn SetFunction> = Arc::new(Conditioned::new(Arc::clone(&base), boundary.cumulative.clone()));
        Ok(f)
    }
}

/// Hook that reuses `base` with a fresh, empty state in every batch.
pub fn independent(base: Arc<dyn SetFunction>) -> impl FnMut(&BatchBoundary<'_>) -> Result<Arc<dyn SetFunction>, String> {
    move |_| Ok(Arc::clone(&base))
}
