//! Exact and greedy offline solvers for small instances, and the reports
//! that check a run's selection against the constant-factor bounds.
//!
//! For a selection `L` built with thresholds in `[τ_min, τ_max]` over `M`
//! disjoint streams (or `B` batches), the bound checked is
//!
//! ```text
//! f(L) ≥ τ_min/(M(τ_min+τ_max)) · f(OPT) + τ_min·τ_max/(M(τ_min+τ_max)) · |OPT ∩ L|
//! ```
//!
//! with `OPT` the best `|L|`-subset of the ground set. `M = 1` for a
//! single run.

use std::sync::Arc;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{BatchRun, FederatedRun, SelectionTrace, TraceKind};
use crate::point::Point;
use crate::set::SelectedSet;
use crate::value::{tolerance_for, CoreError, SetFunction, ValueFunctionHandle};

/// Largest number of `k`-subsets [`opt_bruteforce`] will enumerate.
pub const DEFAULT_BUDGET: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumerating C({n},{k}) = {required} subsets exceeds the budget of {budget}")]
    Budget { n: usize, k: usize, required: u128, budget: u64 },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact at every step: acc·(n−i) is divisible by (i+1)
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    /// Ascending ids.
    pub ids: Vec<u64>,
    pub value: f64,
    /// Number of subsets evaluated.
    pub evaluated: u64,
}

fn sorted_arcs(ground: &[Point]) -> Result<Vec<Arc<Point>>, OracleError> {
    let mut pts: Vec<Arc<Point>> = ground.iter().cloned().map(Arc::new).collect();
    pts.sort_by_key(|p| p.id());
    if let Some(w) = pts.windows(2).find(|w| w[0].id() == w[1].id()) {
        return Err(OracleError::Argument(format!("duplicate point id {}", w[0].id())));
    }
    Ok(pts)
}

/// Exact maximizer of `f` over all `k`-subsets of `ground`, by enumeration
/// in lexicographic combination order. Among sets of equal value (to the
/// shared tolerance) the lexicographically smallest id-set wins.
pub fn opt_bruteforce(f: &dyn SetFunction, ground: &[Point], k: usize) -> Result<Optimum, OracleError> {
    opt_bruteforce_with_budget(f, ground, k, DEFAULT_BUDGET)
}

pub fn opt_bruteforce_with_budget(
    f: &dyn SetFunction,
    ground: &[Point],
    k: usize,
    budget: u64,
) -> Result<Optimum, OracleError> {
    let n = ground.len();
    if k > n {
        return Err(OracleError::Argument(format!("k={k} exceeds ground size {n}")));
    }
    let required = binomial(n, k);
    if required > budget as u128 {
        return Err(OracleError::Budget { n, k, required, budget });
    }
    let pts = sorted_arcs(ground)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut evaluated = 0u64;
    for combo in (0..n).combinations(k) {
        let set = SelectedSet::revealed_arcs(combo.iter().map(|&i| &pts[i]))?;
        let v = f.value(&set)?;
        evaluated += 1;
        let better = match &best {
            None => true,
            Some((_, b)) => v > b + tolerance_for(v, *b),
        };
        if better {
            best = Some((combo, v));
        }
    }
    let (combo, value) = best.expect("at least one subset exists for k ≤ n");
    Ok(Optimum {
        ids: combo.iter().map(|&i| pts[i].id()).collect(),
        value,
        evaluated,
    })
}

/// `k` rounds of picking the point with the largest value increase; ties
/// go to the smallest id. Labels of the ground points are used as revealed.
pub fn greedy_offline(f: &dyn SetFunction, ground: &[Point], k: usize) -> Result<Optimum, OracleError> {
    let n = ground.len();
    if k > n {
        return Err(OracleError::Argument(format!("k={k} exceeds ground size {n}")));
    }
    let pts = sorted_arcs(ground)?;
    let mut set = SelectedSet::new();
    let mut current = f.value(&set)?;
    let mut evaluated = 1u64;
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in pts.iter().enumerate() {
            if set.contains(p.id()) {
                continue;
            }
            let mut trial = set.clone();
            trial.insert(Arc::clone(p), p.reveal_label(), 0)?;
            let v = f.value(&trial)?;
            evaluated += 1;
            let better = match best {
                None => true,
                Some((_, b)) => v > b + tolerance_for(v, b),
            };
            if better {
                best = Some((i, v));
            }
        }
        let (i, v) = best.expect("an unselected point remains while |S| < k ≤ n");
        set.insert(Arc::clone(&pts[i]), pts[i].reveal_label(), 0)?;
        current = v;
    }
    Ok(Optimum {
        ids: set.sorted_ids(),
        value: current,
        evaluated,
    })
}

/// Result of checking one selection against the bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub instance: String,
    /// `|L|`.
    pub k: usize,
    /// Number of agents or batches the bound is divided by.
    pub divisor: usize,
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    /// Ascending ids of `L`.
    pub selected: Vec<u64>,
    /// `f(L)`, evaluated from scratch.
    pub selected_value: f64,
    /// `None` when the enumeration budget was exceeded.
    pub opt: Option<Optimum>,
    pub overlap: Option<usize>,
    pub factor_term: Option<f64>,
    pub overlap_term: Option<f64>,
    pub rhs: Option<f64>,
    /// `f(L) − rhs`.
    pub slack: Option<f64>,
    /// `slack ≥ −tolerance`; `None` when OPT is unavailable.
    pub pass: Option<bool>,
    /// `τ_min·|L|` and whether `f(L)` strictly exceeds it (vacuous on empty `L`).
    pub floor: f64,
    pub floor_holds: bool,
    /// Replay discrepancies found by [`audit_decisions`], when run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<String>,
}

impl OracleReport {
    /// Bound holds, floor holds and the replay found nothing.
    pub fn ok(&self) -> bool {
        self.pass != Some(false) && self.floor_holds && self.issues.is_empty()
    }
}

/// Checks `selected` (built from `thresholds`) against the bound with
/// divisor `divisor`, with OPT taken over `ground`.
pub fn verify_selection(
    instance: &str,
    f: &dyn SetFunction,
    ground: &[Point],
    selected: &SelectedSet,
    thresholds: &[f64],
    divisor: usize,
    budget: u64,
) -> Result<OracleReport, OracleError> {
    if divisor == 0 {
        return Err(OracleError::Argument("divisor must be at least 1".into()));
    }
    if let Some(id) = selected.ids().into_iter().find(|id| !ground.iter().any(|p| p.id() == *id)) {
        return Err(OracleError::Argument(format!("selected point {id} is not in the ground set")));
    }
    let tau_min = thresholds.iter().copied().reduce(f64::min);
    let tau_max = thresholds.iter().copied().reduce(f64::max);
    let k = selected.len();
    let selected_value = f.value(selected)?;

    let opt = match opt_bruteforce_with_budget(f, ground, k, budget) {
        Ok(o) => Some(o),
        Err(OracleError::Budget { .. }) => None,
        Err(e) => return Err(e),
    };
    let overlap = opt.as_ref().map(|o| selected.overlap(&o.ids));
    let (factor, overlap_coeff) = match (tau_min, tau_max) {
        (Some(lo), Some(hi)) => {
            let d = divisor as f64 * (lo + hi);
            (lo / d, lo * hi / d)
        }
        // no threshold was ever emitted: empty stream, vacuous bound
        _ => (0.0, 0.0),
    };
    let factor_term = opt.as_ref().map(|o| factor * o.value);
    let overlap_term = overlap.map(|c| overlap_coeff * c as f64);
    let rhs = factor_term.zip(overlap_term).map(|(a, b)| a + b);
    let slack = rhs.map(|r| selected_value - r);
    let pass = rhs.map(|r| selected_value - r >= -tolerance_for(selected_value, r));
    let floor = tau_min.unwrap_or(0.0) * k as f64;
    let floor_holds = k == 0 || selected_value > floor;
    Ok(OracleReport {
        instance: instance.to_string(),
        k,
        divisor,
        tau_min,
        tau_max,
        selected: selected.sorted_ids(),
        selected_value,
        opt,
        overlap,
        factor_term,
        overlap_term,
        rhs,
        slack,
        pass,
        floor,
        floor_holds,
        issues: Vec::new(),
    })
}

/// Bound check for a single DMGT run over `ground`.
pub fn verify_dmgt(trace: &SelectionTrace, f: &dyn SetFunction, ground: &[Point]) -> Result<OracleReport, OracleError> {
    verify_selection("dmgt", f, ground, &trace.selected, &trace.thresholds, 1, DEFAULT_BUDGET)
}

/// Bound check for a pooled federated run, divisor = number of agents
/// that completed. `ground` is the union of those agents' streams.
pub fn verify_federated(run: &FederatedRun, f: &dyn SetFunction, ground: &[Point]) -> Result<OracleReport, OracleError> {
    let m = run.traces().count();
    if m == 0 {
        return Err(OracleError::Argument("no agent completed".into()));
    }
    verify_selection(
        &format!("fed-dmgt(M={m})"),
        f,
        ground,
        &run.selected,
        &run.thresholds,
        m,
        DEFAULT_BUDGET,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    /// One report per completed batch, each against that batch's own function and stream.
    pub per_batch: Vec<OracleReport>,
    /// The cumulative selection under the last batch's function, divisor `B`.
    pub cumulative: OracleReport,
}

impl BatchReport {
    pub fn ok(&self) -> bool {
        self.per_batch.iter().all(OracleReport::ok) && self.cumulative.ok()
    }
}

/// Bound checks for a batch run. `batches[b]` must hold the points of
/// batch `b`.
pub fn verify_batch(run: &BatchRun, batches: &[Vec<Point>]) -> Result<BatchReport, OracleError> {
    if run.segments.is_empty() {
        return Err(OracleError::Argument("no batch completed".into()));
    }
    if batches.len() < run.segments.len() {
        return Err(OracleError::Argument(format!(
            "{} batches completed but {} point lists given",
            run.segments.len(),
            batches.len()
        )));
    }
    let mut per_batch = Vec::new();
    for (b, seg) in run.segments.iter().enumerate() {
        per_batch.push(verify_selection(
            &format!("batch {b}"),
            seg.function.as_ref(),
            &batches[b],
            &seg.trace.selected,
            &seg.trace.thresholds,
            1,
            DEFAULT_BUDGET,
        )?);
    }
    let b = run.segments.len();
    let ground: Vec<Point> = batches[..b].iter().flatten().cloned().collect();
    let last = run.last_function().expect("segments is nonempty");
    let cumulative = verify_selection(
        &format!("batch-dmgt(B={b})"),
        last.as_ref(),
        &ground,
        &run.selected,
        &run.thresholds,
        b,
        DEFAULT_BUDGET,
    )?;
    Ok(BatchReport { per_batch, cumulative })
}

/// Replays a recorded trace against `f` on `stream` (the points in arrival
/// order) and lists every discrepancy: mismatched ids, non-positive
/// thresholds, recorded gains that differ from a recomputation, and
/// decisions that contradict the strict threshold rule.
pub fn audit_decisions(trace: &SelectionTrace, f: &Arc<dyn SetFunction>, stream: &[Point]) -> Vec<String> {
    let mut issues = Vec::new();
    if trace.decisions.len() != stream.len() {
        issues.push(format!(
            "trace has {} records for a stream of {} points",
            trace.decisions.len(),
            stream.len()
        ));
    }
    let flagged: Vec<u64> = trace.decisions.iter().filter(|d| d.selected).map(|d| d.id).collect();
    let mut flagged_sorted = flagged.clone();
    flagged_sorted.sort_unstable();
    if flagged_sorted != trace.selected.sorted_ids() {
        issues.push("selected set differs from the records flagged as selected".into());
    }
    if trace.kind == TraceKind::Random {
        return issues;
    }
    let mut handle = ValueFunctionHandle::new(Arc::clone(f));
    for (d, p) in trace.decisions.iter().zip(stream) {
        if d.id != p.id() {
            issues.push(format!("t={}: record id {} but stream id {}", d.t, d.id, p.id()));
            break;
        }
        let (Some(tau), Some(gain)) = (d.tau, d.gain) else {
            issues.push(format!("t={}: record lacks threshold or gain", d.t));
            continue;
        };
        if !(tau > 0.0) {
            issues.push(format!("t={}: non-positive threshold {tau}", d.t));
        }
        if d.selected != (gain > tau) {
            issues.push(format!(
                "t={}: point {} recorded selected={} with gain {gain} against threshold {tau}",
                d.t, d.id, d.selected
            ));
        }
        match handle.gain(p.view()) {
            Ok(g) => {
                if (g - gain).abs() > tolerance_for(g, gain) {
                    issues.push(format!("t={}: recorded gain {gain}, recomputed {g}", d.t));
                }
            }
            Err(e) => {
                issues.push(format!("t={}: {e}", d.t));
                break;
            }
        }
        if d.selected {
            if let Err(e) = handle.commit(Arc::new(p.clone()), p.reveal_label(), d.t) {
                issues.push(format!("t={}: {e}", d.t));
                break;
            }
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::dmgt;
    use crate::point::Stream;
    use crate::schedule::ThresholdSchedule;
    use crate::value::Coverage;

    fn demo() -> Vec<Point> {
        vec![
            Coverage::point(0, &[0, 1], 3),
            Coverage::point(1, &[1, 2], 3),
            Coverage::point(2, &[0], 3),
        ]
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(20, 10), 184_756);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(200, 100), u128::MAX);
    }

    #[test]
    fn opt_on_demo() {
        let f = Coverage::new(3);
        let o = opt_bruteforce(&f, &demo(), 2).unwrap();
        assert_eq!((o.ids.clone(), o.value), (vec![0, 1], 3.0));
        assert_eq!(o.evaluated, 3);
        let empty = opt_bruteforce(&f, &demo(), 0).unwrap();
        assert!(empty.ids.is_empty());
        assert_eq!(empty.value, 0.0);
        let all = opt_bruteforce(&f, &demo(), 3).unwrap();
        assert_eq!(all.ids, vec![0, 1, 2]);
    }

    #[test]
    fn ties_take_the_smallest_id_set() {
        // {3,5} and {3,9} both cover everything
        let pts = vec![
            Coverage::point(5, &[0], 2),
            Coverage::point(3, &[1], 2),
            Coverage::point(9, &[0], 2),
        ];
        let o = opt_bruteforce(&Coverage::new(2), &pts, 2).unwrap();
        assert_eq!(o.ids, vec![3, 5]);
    }

    #[test]
    fn budget_is_enforced() {
        let pts: Vec<Point> = (0..30).map(|i| Coverage::point(i, &[0], 1)).collect();
        match opt_bruteforce(&Coverage::new(1), &pts, 15) {
            Err(OracleError::Budget { required, .. }) => assert_eq!(required, 155_117_520),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn greedy_on_demo() {
        let f = Coverage::new(3);
        assert_eq!(greedy_offline(&f, &demo(), 2).unwrap().ids, vec![0, 1]);
        let one = greedy_offline(&f, &demo(), 1).unwrap();
        assert_eq!((one.ids, one.value), (vec![0], 2.0));
    }

    #[test]
    fn demo_run_report() {
        let f: Arc<dyn SetFunction> = Arc::new(Coverage::new(3));
        let mut h = ValueFunctionHandle::new(Arc::clone(&f));
        let mut s = ThresholdSchedule::uniform(0.5).unwrap();
        let trace = dmgt(Stream::from_points(demo()), &mut h, &mut s).unwrap();
        let r = verify_dmgt(&trace, f.as_ref(), &demo()).unwrap();
        assert_eq!(r.selected_value, 3.0);
        assert_eq!(r.rhs, Some(2.0));
        assert_eq!(r.slack, Some(1.0));
        assert_eq!(r.overlap, Some(2));
        assert_eq!(r.pass, Some(true));
        assert!(r.floor_holds);
        assert!(audit_decisions(&trace, &f, &demo()).is_empty());
    }

    #[test]
    fn empty_selection_passes_with_zero_slack() {
        let f = Coverage::new(3);
        let r = verify_selection("empty", &f, &demo(), &SelectedSet::new(), &[4.0, 4.0, 4.0], 1, DEFAULT_BUDGET).unwrap();
        assert_eq!((r.selected_value, r.rhs, r.slack), (0.0, Some(0.0), Some(0.0)));
        assert!(r.ok());
    }

    #[test]
    fn fabricated_selection_is_caught_by_replay() {
        let f: Arc<dyn SetFunction> = Arc::new(Coverage::new(3));
        let mut h = ValueFunctionHandle::new(Arc::clone(&f));
        let mut s = ThresholdSchedule::uniform(0.5).unwrap();
        let mut trace = dmgt(Stream::from_points(demo()), &mut h, &mut s).unwrap();
        trace.decisions[2].selected = true;
        let c = demo()[2].clone();
        trace.selected.push(c, None, 3).unwrap();
        let issues = audit_decisions(&trace, &f, &demo());
        assert!(issues.iter().any(|i| i.contains("t=3")), "{issues:?}");
    }

    #[test]
    fn over_budget_report_is_partial() {
        let pts: Vec<Point> = (0..30).map(|i| Coverage::point(i, &[(i % 3) as usize], 3)).collect();
        let sel = SelectedSet::revealed(&pts[..15]).unwrap();
        let r = verify_selection("big", &Coverage::new(3), &pts, &sel, &[0.5], 1, DEFAULT_BUDGET).unwrap();
        assert!(r.opt.is_none());
        assert_eq!(r.pass, None);
    }
}
