//! Randomized checks of the structural properties a value function must
//! have: diminishing returns, monotonicity, subadditivity, nonnegativity,
//! and agreement between the incremental and from-scratch gain routes.
//!
//! Violations are reported, never raised; only domain errors (a payload
//! the function cannot read) abort a check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::point::Point;
use crate::set::SelectedSet;
use crate::value::{tolerance_for, CoreError, SetFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    /// f(S∪{x})−f(S) ≥ f(T∪{x})−f(T) for S ⊆ T, x ∉ T.
    Submodularity,
    /// f(S) ≤ f(T) for S ⊆ T.
    Monotonicity,
    /// f(S∪U) ≤ f(S)+f(U).
    Subadditivity,
    /// f(S) ≥ 0.
    Nonnegativity,
    /// Incremental gain, stateless gain and value-built gain agree.
    GainConsistency,
}

/// The first witness found against a property.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub property: Property,
    /// The smaller set S (ids).
    pub small: Vec<u64>,
    /// The larger (or second) set T or U (ids).
    pub large: Vec<u64>,
    pub point: Option<u64>,
    /// The side that should be at least `rhs` (or equal to it).
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub property: Property,
    pub evaluated: usize,
    pub violations: usize,
    pub first: Option<Violation>,
}

impl CheckOutcome {
    fn new(property: Property) -> Self {
        CheckOutcome {
            property,
            evaluated: 0,
            violations: 0,
            first: None,
        }
    }

    fn record(&mut self, ok: bool, witness: impl FnOnce() -> Violation) {
        self.evaluated += 1;
        if !ok {
            self.violations += 1;
            if self.first.is_none() {
                self.first = Some(witness());
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyReport {
    pub function: String,
    pub ground_size: usize,
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<CheckOutcome>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.violations == 0)
    }

    pub fn outcome(&self, property: Property) -> &CheckOutcome {
        self.checks
            .iter()
            .find(|c| c.property == property)
            .expect("every property is checked")
    }

    /// First violation across all checks.
    pub fn first_violation(&self) -> Option<&Violation> {
        self.checks.iter().find_map(|c| c.first.as_ref())
    }
}

/// Samples `trials` triples `S ⊆ T`, `x ∉ T` (plus an independent set `U`
/// for subadditivity) from `ground` and checks every [`Property`].
///
/// Ground sets up to about 20 points keep nested sampling meaningful.
pub fn check_properties(
    f: &dyn SetFunction,
    ground: &[Point],
    trials: usize,
    seed: u64,
) -> Result<PropertyReport, CoreError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sub = CheckOutcome::new(Property::Submodularity);
    let mut mono = CheckOutcome::new(Property::Monotonicity);
    let mut subadd = CheckOutcome::new(Property::Subadditivity);
    let mut nonneg = CheckOutcome::new(Property::Nonnegativity);
    let mut gains = CheckOutcome::new(Property::GainConsistency);

    if !ground.is_empty() {
        for _ in 0..trials {
            let xi = rng.gen_range(0..ground.len());
            let x = &ground[xi];
            let p_t: f64 = rng.gen();
            let p_s: f64 = rng.gen();
            let p_u: f64 = rng.gen();
            let mut t_idx = Vec::new();
            let mut s_idx = Vec::new();
            let mut u_idx = Vec::new();
            for i in 0..ground.len() {
                if i != xi && rng.gen_bool(p_t) {
                    t_idx.push(i);
                    if rng.gen_bool(p_s) {
                        s_idx.push(i);
                    }
                }
                if rng.gen_bool(p_u) {
                    u_idx.push(i);
                }
            }
            let pick = |idx: &[usize]| SelectedSet::revealed(idx.iter().map(|&i| &ground[i]));
            let s = pick(&s_idx)?;
            let t = pick(&t_idx)?;
            let u = pick(&u_idx)?;
            let ids = |set: &SelectedSet| set.sorted_ids();

            let fs = f.value(&s)?;
            let ft = f.value(&t)?;
            let fu = f.value(&u)?;
            let fsx = f.value(&s.with(x.clone(), x.reveal_label())?)?;
            let ftx = f.value(&t.with(x.clone(), x.reveal_label())?)?;
            let fsu = f.value(&s.union(&u))?;

            let gs = fsx - fs;
            let gt = ftx - ft;
            sub.record(gs >= gt - tolerance_for(gs, gt), || Violation {
                property: Property::Submodularity,
                small: ids(&s),
                large: ids(&t),
                point: Some(x.id()),
                lhs: gs,
                rhs: gt,
            });
            mono.record(ft >= fs - tolerance_for(ft, fs), || Violation {
                property: Property::Monotonicity,
                small: ids(&s),
                large: ids(&t),
                point: None,
                lhs: ft,
                rhs: fs,
            });
            let sum = fs + fu;
            subadd.record(sum >= fsu - tolerance_for(sum, fsu), || Violation {
                property: Property::Subadditivity,
                small: ids(&s),
                large: ids(&u),
                point: None,
                lhs: sum,
                rhs: fsu,
            });
            for (set, v) in [(&s, fs), (&t, ft), (&u, fu)] {
                nonneg.record(v >= 0.0, || Violation {
                    property: Property::Nonnegativity,
                    small: ids(set),
                    large: Vec::new(),
                    point: None,
                    lhs: v,
                    rhs: 0.0,
                });
            }

            // three routes to the gain of x on T
            let stateless = f.marginal_gain(x.view(), &t)?;
            let mut state = f.new_state();
            for m in &t {
                state.commit(m.point().view(), m.label())?;
            }
            let incremental = state.gain(x.view())?;
            let evaluated = f.gain_by_evaluation(x, &t)?;
            let ok = (stateless - incremental).abs() <= tolerance_for(stateless, incremental)
                && (stateless - evaluated).abs() <= tolerance_for(stateless, evaluated)
                && (state.value() - ft).abs() <= tolerance_for(state.value(), ft);
            gains.record(ok, || Violation {
                property: Property::GainConsistency,
                small: Vec::new(),
                large: ids(&t),
                point: Some(x.id()),
                lhs: incremental,
                rhs: evaluated,
            });
        }
    }

    Ok(PropertyReport {
        function: f.describe(),
        ground_size: ground.len(),
        trials,
        seed,
        checks: vec![sub, mono, subadd, nonneg, gains],
    })
}
