//! Instance generators and independent reference computations shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use std::sync::Arc;

use dmgt::classbalance::{BalanceMode, ClassBalance, Concave, ProbabilitySource};
use dmgt::engine::{dmgt, SelectionTrace};
use dmgt::point::{Point, PointView, Stream};
use dmgt::schedule::{CostKind, ScheduleConfig, ThresholdSchedule};
use dmgt::set::SelectedSet;
use dmgt::value::{CoreError, Coverage, GainState, SetFunction, ValueFunctionHandle};
use rand::seq::SliceRandom;
use rand::Rng;

/// Value families used by the randomized sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Coverage,
    WeightedCoverage,
    SoftBalance,
    /// Label-aware balance on one-hot probabilities, where the expected
    /// gain equals the realized gain.
    OneHotBalance,
}

pub const FAMILIES: [Family; 4] = [
    Family::Coverage,
    Family::WeightedCoverage,
    Family::SoftBalance,
    Family::OneHotBalance,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Random,
    /// Weakest singletons first, so the best points arrive after the
    /// threshold has been spent on weak ones.
    Ascending,
    Descending,
}

pub const ORDERS: [Order; 3] = [Order::Random, Order::Ascending, Order::Descending];

/// A ground set in arrival order (ids `first_id..` ascending) with its function.
#[derive(Clone, Debug)]
pub struct Instance {
    pub family: Family,
    pub f: Arc<dyn SetFunction>,
    pub points: Vec<Point>,
}

impl Instance {
    pub fn stream(&self) -> Stream {
        Stream::from_points(self.points.clone())
    }

    /// Largest singleton value, the natural scale for thresholds.
    pub fn scale(&self) -> f64 {
        self.points
            .iter()
            .map(|p| self.f.value(&SelectedSet::revealed([p]).unwrap()).unwrap())
            .fold(0.0, f64::max)
    }
}

fn random_probs<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.01).collect();
    let s: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / s).collect();
    // push the rounding residue into the largest entry
    let residue = 1.0 - p.iter().sum::<f64>();
    let (imax, _) = p.iter().enumerate().fold((0, 0.0), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    p[imax] += residue;
    p
}

/// Raw payloads and labels for `n` points of a family.
#[allow(clippy::type_complexity)]
fn payloads<R: Rng>(rng: &mut R, family: Family, n: usize) -> (Arc<dyn SetFunction>, Vec<(Vec<f64>, Option<usize>, bool)>) {
    match family {
        Family::Coverage | Family::WeightedCoverage => {
            let universe = rng.gen_range(4..=10);
            let density = rng.gen_range(0.15..0.5);
            let f: Arc<dyn SetFunction> = if family == Family::Coverage {
                Arc::new(Coverage::new(universe))
            } else {
                let w = (0..universe).map(|_| rng.gen_range(0.2..3.0)).collect();
                Arc::new(Coverage::with_weights(w).unwrap())
            };
            let pl = (0..n)
                .map(|_| {
                    let v = (0..universe).map(|_| if rng.gen_bool(density) { 1.0 } else { 0.0 }).collect();
                    (v, None, false)
                })
                .collect();
            (f, pl)
        }
        Family::SoftBalance => {
            let k = rng.gen_range(2..=4);
            let g = if rng.gen_bool(0.5) { Concave::Sqrt } else { Concave::Log1p };
            let f = Arc::new(ClassBalance::new(k, g, BalanceMode::Soft, ProbabilitySource::Payload).unwrap());
            let pl = (0..n).map(|_| (random_probs(rng, k), Some(rng.gen_range(0..k)), true)).collect();
            (f, pl)
        }
        Family::OneHotBalance => {
            let k = rng.gen_range(2..=4);
            let g = if rng.gen_bool(0.5) { Concave::Sqrt } else { Concave::Log1p };
            let f = Arc::new(ClassBalance::new(k, g, BalanceMode::LabelAware, ProbabilitySource::Payload).unwrap());
            let pl = (0..n)
                .map(|_| {
                    let y = rng.gen_range(0..k);
                    let mut p = vec![0.0; k];
                    p[y] = 1.0;
                    (p, Some(y), true)
                })
                .collect();
            (f, pl)
        }
    }
}

fn make_point(id: u64, payload: Vec<f64>, label: Option<usize>, probs: bool) -> Point {
    let p = if probs {
        Point::with_probs(id, payload).unwrap()
    } else {
        Point::with_features(id, payload)
    };
    match label {
        Some(l) => p.labeled(l),
        None => p,
    }
}

/// A random instance of `n` points arranged in `order`, ids from `first_id`.
pub fn instance<R: Rng>(rng: &mut R, family: Family, n: usize, order: Order, first_id: u64) -> Instance {
    let (f, mut pl) = payloads(rng, family, n);
    let single = |p: &(Vec<f64>, Option<usize>, bool)| {
        let pt = make_point(0, p.0.clone(), p.1, p.2);
        f.value(&SelectedSet::revealed([&pt]).unwrap()).unwrap()
    };
    match order {
        Order::Random => pl.shuffle(rng),
        Order::Ascending => pl.sort_by(|a, b| single(a).total_cmp(&single(b))),
        Order::Descending => pl.sort_by(|a, b| single(b).total_cmp(&single(a))),
    }
    let points = pl
        .into_iter()
        .enumerate()
        .map(|(i, (v, l, probs))| make_point(first_id + i as u64, v, l, probs))
        .collect();
    Instance { family, f, points }
}

/// Splits an instance's points into `m` nonempty contiguous-id streams
/// with random cut points.
pub fn split<R: Rng>(rng: &mut R, points: &[Point], m: usize) -> Vec<Vec<Point>> {
    assert!(points.len() >= m);
    let mut owner: Vec<usize> = (0..points.len()).map(|i| if i < m { i } else { rng.gen_range(0..m) }).collect();
    owner.shuffle(rng);
    let mut parts = vec![Vec::new(); m];
    for (p, j) in points.iter().zip(owner) {
        parts[j].push(p.clone());
    }
    parts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Uniform,
    Cardinality,
    Power,
    Pacing,
    Jitter,
}

pub const SCHEDULE_KINDS: [ScheduleKind; 5] = [
    ScheduleKind::Uniform,
    ScheduleKind::Cardinality,
    ScheduleKind::Power,
    ScheduleKind::Pacing,
    ScheduleKind::Jitter,
];

/// A schedule of the given kind whose thresholds sit around `scale`.
pub fn schedule<R: Rng>(rng: &mut R, kind: ScheduleKind, scale: f64) -> ScheduleConfig {
    let s = scale.max(1e-3);
    match kind {
        ScheduleKind::Uniform => ScheduleConfig::Uniform {
            tau: s * rng.gen_range(0.05..0.9),
        },
        ScheduleKind::Cardinality => ScheduleConfig::Cost {
            cost: CostKind::Cardinality,
            scale: s * rng.gen_range(0.05..0.9),
            exponent: None,
        },
        ScheduleKind::Power => ScheduleConfig::Cost {
            cost: CostKind::Power,
            scale: s * rng.gen_range(0.05..0.6),
            exponent: Some(rng.gen_range(0.5..1.6)),
        },
        ScheduleKind::Pacing => {
            let min = s * rng.gen_range(0.02..0.3);
            let max = min * rng.gen_range(1.0..6.0);
            ScheduleConfig::Pacing {
                initial: rng.gen_range(min..=max),
                step: rng.gen_range(0.0..0.5),
                min,
                max,
            }
        }
        ScheduleKind::Jitter => {
            let lo = s * rng.gen_range(0.02..0.4);
            ScheduleConfig::Jitter {
                lo,
                hi: lo * rng.gen_range(1.0..5.0),
                seed: rng.gen(),
            }
        }
    }
}

pub fn run_dmgt(inst: &Instance, cfg: &ScheduleConfig) -> SelectionTrace {
    let mut handle = ValueFunctionHandle::new(Arc::clone(&inst.f));
    let mut sched = ThresholdSchedule::from_config(cfg).unwrap();
    dmgt(inst.stream(), &mut handle, &mut sched).unwrap()
}

/// Exact maximum of `f` over `k`-subsets by bitmask enumeration.
pub fn reference_opt(f: &dyn SetFunction, ground: &[Point], k: usize) -> (f64, u64) {
    let n = ground.len();
    assert!(n < 64);
    let mut best = f64::NEG_INFINITY;
    let mut best_mask = 0u64;
    for mask in 0u64..(1u64 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let set = SelectedSet::revealed((0..n).filter(|i| mask >> i & 1 == 1).map(|i| &ground[i])).unwrap();
        let v = f.value(&set).unwrap();
        if v > best {
            best = v;
            best_mask = mask;
        }
    }
    (best, best_mask)
}

/// The guarantee recomputed from its definition.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceBound {
    pub lhs: f64,
    pub opt: f64,
    /// Smallest and largest right-hand side over all optimal sets; the
    /// guarantee holds for every optimal set, so `lhs ≥ rhs_max`.
    pub rhs_min: f64,
    pub rhs_max: f64,
}

impl ReferenceBound {
    pub fn holds(&self) -> bool {
        self.lhs - self.rhs_max >= -1e-9 * self.lhs.abs().max(self.rhs_max.abs()).max(1.0)
    }
}

/// `f(L)` against `(lo·OPT + lo·hi·|OPT ∩ L|) / (d·(lo+hi))`.
pub fn reference_bound(f: &dyn SetFunction, ground: &[Point], selected: &SelectedSet, thresholds: &[f64], d: usize) -> ReferenceBound {
    let lhs = f.value(selected).unwrap();
    let k = selected.len();
    let n = ground.len();
    let (opt, _) = reference_opt(f, ground, k);
    if thresholds.is_empty() {
        return ReferenceBound { lhs, opt, rhs_min: 0.0, rhs_max: 0.0 };
    }
    let lo = thresholds.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = thresholds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut rhs_min = f64::INFINITY;
    let mut rhs_max = f64::NEG_INFINITY;
    for mask in 0u64..(1u64 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let members: Vec<&Point> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| &ground[i]).collect();
        let v = f.value(&SelectedSet::revealed(members.iter().copied()).unwrap()).unwrap();
        if (v - opt).abs() > 1e-9 * opt.abs().max(1.0) {
            continue;
        }
        let overlap = members.iter().filter(|p| selected.contains(p.id())).count() as f64;
        let rhs = (lo * opt + lo * hi * overlap) / (d as f64 * (lo + hi));
        rhs_min = rhs_min.min(rhs);
        rhs_max = rhs_max.max(rhs);
    }
    ReferenceBound { lhs, opt, rhs_min, rhs_max }
}

/// `f(S) = |S|²`, the planted supermodular counterexample.
#[derive(Debug)]
pub struct Squared;

#[derive(Debug, Default)]
struct SquaredState(usize);

impl GainState for SquaredState {
    fn gain(&self, _x: PointView<'_>) -> Result<f64, CoreError> {
        Ok((2 * self.0 + 1) as f64)
    }
    fn commit(&mut self, _x: PointView<'_>, _l: Option<usize>) -> Result<(), CoreError> {
        self.0 += 1;
        Ok(())
    }
    fn value(&self) -> f64 {
        (self.0 * self.0) as f64
    }
}

impl SetFunction for Squared {
    fn describe(&self) -> String {
        "squared-cardinality".into()
    }
    fn value(&self, set: &SelectedSet) -> Result<f64, CoreError> {
        Ok((set.len() * set.len()) as f64)
    }
    fn new_state(&self) -> Box<dyn GainState> {
        Box::<SquaredState>::default()
    }
}

/// Coverage points `a:{0,1}`, `b:{1,2}`, `c:{0}` over a 3-element universe.
pub fn demo() -> (Coverage, Vec<Point>) {
    (
        Coverage::new(3),
        vec![
            Coverage::point(0, &[0, 1], 3),
            Coverage::point(1, &[1, 2], 3),
            Coverage::point(2, &[0], 3),
        ],
    )
}
