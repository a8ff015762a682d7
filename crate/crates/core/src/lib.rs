//! Streaming subset selection by marginal-gain thresholding.
//!
//! Points arrive one at a time. Each is kept when its marginal gain under a
//! monotone submodular value function strictly exceeds the current
//! threshold, and is never revisited. For a run whose thresholds span
//! `[τ_min, τ_max]`,
//!
//! ```text
//! f(L) ≥ τ_min/(τ_min+τ_max) · f(OPT) + τ_min·τ_max/(τ_min+τ_max) · |OPT ∩ L|
//! ```
//!
//! where `OPT` is the best subset of size `|L|`. Running `M` independent
//! agents and pooling their picks divides the bound by `M`; a sequence of
//! `B` batches divides it by `B`.
//!
//! ```
//! use std::sync::Arc;
//! use dmgt::{dmgt, Coverage, SetFunction, Stream, ThresholdSchedule, ValueFunctionHandle};
//!
//! let f: Arc<dyn SetFunction> = Arc::new(Coverage::new(3));
//! let points = vec![
//!     Coverage::point(0, &[0, 1], 3),
//!     Coverage::point(1, &[1, 2], 3),
//!     Coverage::point(2, &[0], 3),
//! ];
//! let mut handle = ValueFunctionHandle::new(f);
//! let mut schedule = ThresholdSchedule::uniform(0.5)?;
//! let trace = dmgt(Stream::from_points(points), &mut handle, &mut schedule)?;
//! assert_eq!(trace.selected.ids(), vec![0, 1]);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```
//!
//! Modules:
//! - [`point`], [`set`], [`value`], [`properties`]: stream elements, selected sets, value functions and sampled property checks.
//! - [`schedule`]: uniform, cost-based and adaptive threshold routines.
//! - [`engine`]: single-stream, federated, batch and random selection.
//! - [`oracle`]: exact optimum on small instances, offline greedy, bound reports.
//! - [`classbalance`]: class-balancing value functions and the imbalanced-stream simulation.
//! - [`cli`]: the `dmgt` command.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classbalance;
pub mod cli;
pub mod engine;
pub mod oracle;
pub mod point;
pub mod properties;
pub mod schedule;
pub mod seed;
pub mod set;
pub mod value;

pub use engine::{batch_dmgt, dmgt, fed_dmgt, rand_select, EngineError, SelectionTrace, StreamInput};
pub use oracle::{greedy_offline, opt_bruteforce, verify_selection, OracleReport};
pub use point::{Point, PointView, Stream};
pub use schedule::{ScheduleConfig, ThresholdSchedule};
pub use set::SelectedSet;
pub use value::{CoreError, Coverage, SetFunction, ValueFunctionHandle};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/value-functions.md")]
    mod value_functions {}
    #[doc = include_str!("../../../book/src/schedules.md")]
    mod schedules {}
    #[doc = include_str!("../../../book/src/guarantees.md")]
    mod guarantees {}
    #[doc = include_str!("../../../book/src/federated-and-batch.md")]
    mod federated_and_batch {}
    #[doc = include_str!("../../../book/src/class-balance.md")]
    mod class_balance {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
