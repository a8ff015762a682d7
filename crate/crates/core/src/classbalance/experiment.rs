//! Round-based selection experiment on imbalanced synthetic streams.
//!
//! A warm-start round labels the first points of a fresh stream; every
//! later round draws a new stream, selects from it (DMGT with a uniform
//! threshold, or RAND at given cardinalities) and then retrains the
//! classifier on the round's selections. Each round's value function
//! starts from an empty selection and reads the classifier as it stood at
//! the start of the round.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::calibration::{target_for_threshold, threshold_for_target};
use super::classifier::SoftClassifier;
use super::function::{BalanceMode, ClassBalance, Concave, ProbabilitySource};
use super::generate::{gen_imbalanced_points, FeatureModel, ImbalanceSpec};
use crate::engine::{batch_dmgt, fed_dmgt, rand_select, BatchBoundary, EngineError, StreamInput};
use crate::point::{Point, Stream};
use crate::schedule::ThresholdSchedule;
use crate::seed::sub_seed;
use crate::set::SelectedSet;
use crate::value::{CoreError, SetFunction};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("round {round} failed: {reason}")]
    Round { round: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One agent of the federated variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub beta: f64,
    pub tau: f64,
}

impl AgentSpec {
    /// Three agents with imbalance 2, 5, 10 and thresholds 0.15, 0.1, 0.05.
    pub fn default_trio() -> Vec<AgentSpec> {
        vec![
            AgentSpec { beta: 2.0, tau: 0.15 },
            AgentSpec { beta: 5.0, tau: 0.1 },
            AgentSpec { beta: 10.0, tau: 0.05 },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub classes: usize,
    pub rare: Vec<usize>,
    pub common: Vec<usize>,
    pub beta: f64,
    pub rounds: usize,
    pub round_size: usize,
    /// Points labeled before the first selection round.
    pub warm_start: usize,
    /// Uniform threshold; mutually exclusive with `target`. Defaults to 0.1.
    pub tau: Option<f64>,
    /// Per-class target count, converted to a threshold.
    pub target: Option<u64>,
    pub concave: Concave,
    pub mode: BalanceMode,
    pub alpha: f64,
    pub alpha_max: f64,
    pub saturation: f64,
    pub noise: f64,
    pub features: FeatureModel,
    pub seed: u64,
    /// Runs the federated variant when set.
    pub agents: Option<Vec<AgentSpec>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            classes: 10,
            rare: (0..5).collect(),
            common: (5..10).collect(),
            beta: 5.0,
            rounds: 10,
            round_size: 1000,
            warm_start: 100,
            tau: None,
            target: None,
            concave: Concave::Sqrt,
            mode: BalanceMode::LabelAware,
            alpha: 0.7,
            alpha_max: 0.95,
            saturation: 500.0,
            noise: 0.0,
            features: FeatureModel::default(),
            seed: 0,
            agents: None,
        }
    }
}

impl ExperimentConfig {
    pub fn threshold(&self) -> Result<f64, ExperimentError> {
        match (self.tau, self.target) {
            (Some(_), Some(_)) => Err(ExperimentError::Config("set either tau or target, not both".into())),
            (Some(t), None) => Ok(t),
            (None, Some(n)) => Ok(threshold_for_target(n)),
            (None, None) => Ok(0.1),
        }
    }

    fn spec(&self, beta: f64, length: usize, seed: u64, first_id: u64) -> ImbalanceSpec {
        ImbalanceSpec {
            classes: self.classes,
            rare: self.rare.clone(),
            common: self.common.clone(),
            beta,
            length,
            seed,
            first_id,
        }
    }

    fn classifier(&self) -> Result<SoftClassifier, ExperimentError> {
        Ok(SoftClassifier::with_growth(self.classes, self.alpha, self.alpha_max, self.saturation)?
            .with_noise(self.noise, sub_seed(self.seed, "noise"))?)
    }

    /// Checks everything that can be checked before round 1.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let tau = self.threshold()?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(ExperimentError::Config(format!("threshold {tau} must be positive")));
        }
        if self.rounds == 0 || self.round_size == 0 {
            return Err(ExperimentError::Config("rounds and round_size must be positive".into()));
        }
        self.spec(self.beta, 0, 0, 0).validate()?;
        self.classifier()?;
        if let Some(agents) = &self.agents {
            if agents.is_empty() {
                return Err(ExperimentError::Config("agents list is empty".into()));
            }
            for a in agents {
                self.spec(a.beta, 0, 0, 0).validate()?;
                if !(a.tau > 0.0 && a.tau.is_finite()) {
                    return Err(ExperimentError::Config(format!("agent threshold {} must be positive", a.tau)));
                }
            }
        }
        self.features.validate()?;
        Ok(())
    }

    fn value_function(&self, clf: &SoftClassifier) -> Result<Arc<dyn SetFunction>, CoreError> {
        Ok(Arc::new(ClassBalance::new(
            self.classes,
            self.concave,
            self.mode,
            ProbabilitySource::Classifier(Arc::new(clf.clone())),
        )?))
    }

    fn warm_start_points(&self) -> Result<Vec<Point>, CoreError> {
        gen_imbalanced_points(
            &self.spec(self.beta, self.warm_start, sub_seed(self.seed, "warm-start"), 0),
            &self.features,
        )
    }

    fn round_points(&self, round: usize) -> Result<Vec<Point>, CoreError> {
        let first = self.warm_start as u64 + ((round - 1) * self.round_size) as u64;
        gen_imbalanced_points(
            &self.spec(self.beta, self.round_size, sub_seed(self.seed, &format!("stream/{round}")), first),
            &self.features,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Selector {
    Dmgt,
    /// Uniform draws of the given size in each round (1-based rounds, in order).
    Rand { cardinalities: Vec<usize> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentMode {
    Dmgt,
    Rand,
    Fed,
}

impl ExperimentMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentMode::Dmgt => "dmgt",
            ExperimentMode::Rand => "rand",
            ExperimentMode::Fed => "fed",
        }
    }
}

/// Per-round statistics. Round 0 is the warm start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub seen: usize,
    pub selected: usize,
    pub per_class: Vec<usize>,
    pub rare: usize,
    pub common: usize,
    /// Value of the round's selection under the round's value function.
    pub value: f64,
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    /// Classifier confidence during the round.
    pub alpha: f64,
    pub cum_rare: usize,
    pub cum_common: usize,
}

impl RoundRecord {
    pub fn rare_fraction(&self) -> f64 {
        if self.selected == 0 {
            0.0
        } else {
            self.rare as f64 / self.selected as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub mode: ExperimentMode,
    pub classes: usize,
    pub rounds: Vec<RoundRecord>,
    /// Per-agent rounds of a federated run, agent-major.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agent_rounds: Vec<Vec<RoundRecord>>,
    pub final_alpha: f64,
}

impl ExperimentRecord {
    fn selection_rounds(&self) -> impl Iterator<Item = &RoundRecord> {
        self.rounds.iter().filter(|r| r.round > 0)
    }

    /// Selection sizes of rounds 1.., for pairing a RAND run.
    pub fn cardinalities(&self) -> Vec<usize> {
        self.selection_rounds().map(|r| r.selected).collect()
    }

    pub fn total_selected(&self) -> usize {
        self.selection_rounds().map(|r| r.selected).sum()
    }

    pub fn total_rare(&self) -> usize {
        self.selection_rounds().map(|r| r.rare).sum()
    }

    pub fn total_common(&self) -> usize {
        self.selection_rounds().map(|r| r.common).sum()
    }

    /// Rare-group share of everything selected after the warm start.
    pub fn rare_fraction(&self) -> f64 {
        let n = self.total_selected();
        if n == 0 {
            0.0
        } else {
            self.total_rare() as f64 / n as f64
        }
    }
}

struct Tally<'a> {
    cfg: &'a ExperimentConfig,
    cum_rare: usize,
    cum_common: usize,
}

impl Tally<'_> {
    fn record(
        &mut self,
        round: usize,
        seen: usize,
        selected: &SelectedSet,
        value: f64,
        thresholds: &[f64],
        alpha: f64,
    ) -> Result<RoundRecord, CoreError> {
        let mut per_class = vec![0usize; self.cfg.classes];
        for m in selected {
            let label = m.label().ok_or(CoreError::MissingLabel { id: m.id() })?;
            per_class[label] += 1;
        }
        let rare: usize = self.cfg.rare.iter().map(|&k| per_class[k]).sum();
        let common: usize = self.cfg.common.iter().map(|&k| per_class[k]).sum();
        self.cum_rare += rare;
        self.cum_common += common;
        Ok(RoundRecord {
            round,
            seen,
            selected: selected.len(),
            per_class,
            rare,
            common,
            value,
            tau_min: thresholds.iter().copied().reduce(f64::min),
            tau_max: thresholds.iter().copied().reduce(f64::max),
            alpha,
            cum_rare: self.cum_rare,
            cum_common: self.cum_common,
        })
    }
}

/// Warm start: label every warm-start point and train on them.
fn warm_start(cfg: &ExperimentConfig, tally: &mut Tally<'_>) -> Result<(RoundRecord, SoftClassifier), ExperimentError> {
    let clf = cfg.classifier()?;
    let pts = cfg.warm_start_points()?;
    let set = SelectedSet::revealed(&pts)?;
    let value = cfg.value_function(&clf)?.value(&set)?;
    let record = tally.record(0, pts.len(), &set, value, &[], clf.alpha())?;
    let next = clf.update(pts.len());
    Ok((record, next))
}

/// Runs the experiment with either selector.
pub fn run_rounds(cfg: &ExperimentConfig, selector: &Selector) -> Result<ExperimentRecord, ExperimentError> {
    cfg.validate()?;
    let tau = cfg.threshold()?;
    let mut tally = Tally {
        cfg,
        cum_rare: 0,
        cum_common: 0,
    };
    let (warm, clf) = warm_start(cfg, &mut tally)?;
    let mut rounds = vec![warm];

    match selector {
        Selector::Dmgt => {
            let mut batches = Vec::with_capacity(cfg.rounds);
            for b in 1..=cfg.rounds {
                let schedule = ThresholdSchedule::uniform(tau).map_err(|e| ExperimentError::Config(e.to_string()))?;
                batches.push(StreamInput::new(Stream::from_points(cfg.round_points(b)?), schedule));
            }
            let mut alphas = vec![clf.alpha()];
            let mut current = clf;
            let first = cfg.value_function(&current)?;
            let run = batch_dmgt(batches, first, |boundary: &BatchBoundary<'_>| {
                let labeled = boundary.completed.last().map_or(0, |s| s.trace.selected.len());
                current = current.update(labeled);
                alphas.push(current.alpha());
                cfg.value_function(&current).map_err(|e| e.to_string())
            })?;
            if let Some(f) = &run.failure {
                return Err(ExperimentError::Round {
                    round: f.batch + 1,
                    reason: f.reason.clone(),
                });
            }
            for (i, seg) in run.segments.iter().enumerate() {
                rounds.push(tally.record(
                    i + 1,
                    seg.trace.touched,
                    &seg.trace.selected,
                    seg.trace.value.unwrap_or(0.0),
                    &seg.trace.thresholds,
                    alphas[i],
                )?);
            }
            let final_alpha = current.update(run.segments.last().map_or(0, |s| s.trace.selected.len())).alpha();
            Ok(ExperimentRecord {
                mode: ExperimentMode::Dmgt,
                classes: cfg.classes,
                rounds,
                agent_rounds: Vec::new(),
                final_alpha,
            })
        }
        Selector::Rand { cardinalities } => {
            if cardinalities.len() != cfg.rounds {
                return Err(ExperimentError::Config(format!(
                    "{} cardinalities given for {} rounds",
                    cardinalities.len(),
                    cfg.rounds
                )));
            }
            if let Some(k) = cardinalities.iter().find(|&&k| k > cfg.round_size) {
                return Err(ExperimentError::Config(format!("cardinality {k} exceeds round size {}", cfg.round_size)));
            }
            let mut clf = clf;
            for (i, &k) in cardinalities.iter().enumerate() {
                let b = i + 1;
                let trace = rand_select(Stream::from_points(cfg.round_points(b)?), k, sub_seed(cfg.seed, &format!("rand/{b}")))?;
                let value = cfg.value_function(&clf)?.value(&trace.selected)?;
                rounds.push(tally.record(b, trace.touched, &trace.selected, value, &[], clf.alpha())?);
                clf = clf.update(k);
            }
            Ok(ExperimentRecord {
                mode: ExperimentMode::Rand,
                classes: cfg.classes,
                rounds,
                agent_rounds: Vec::new(),
                final_alpha: clf.alpha(),
            })
        }
    }
}

/// DMGT run and RAND run on the same streams, RAND matched to DMGT's
/// per-round cardinalities.
pub fn run_paired(cfg: &ExperimentConfig) -> Result<(ExperimentRecord, ExperimentRecord), ExperimentError> {
    let dmgt = run_rounds(cfg, &Selector::Dmgt)?;
    let rand = run_rounds(
        cfg,
        &Selector::Rand {
            cardinalities: dmgt.cardinalities(),
        },
    )?;
    Ok((dmgt, rand))
}

/// Federated variant: each round every agent draws its own stream (with its
/// own imbalance) and runs DMGT at its own threshold against one shared
/// classifier snapshot; the pooled selections then train the classifier.
pub fn run_federated(cfg: &ExperimentConfig) -> Result<ExperimentRecord, ExperimentError> {
    cfg.validate()?;
    let agents = cfg.agents.clone().unwrap_or_else(AgentSpec::default_trio);
    let m = agents.len();
    let mut tally = Tally {
        cfg,
        cum_rare: 0,
        cum_common: 0,
    };
    let (warm, mut clf) = warm_start(cfg, &mut tally)?;
    let mut rounds = vec![warm];
    let mut agent_tallies: Vec<Tally<'_>> = (0..m)
        .map(|_| Tally {
            cfg,
            cum_rare: 0,
            cum_common: 0,
        })
        .collect();
    let mut agent_rounds: Vec<Vec<RoundRecord>> = vec![Vec::new(); m];

    for b in 1..=cfg.rounds {
        let base = cfg.warm_start as u64 + ((b - 1) * m * cfg.round_size) as u64;
        let mut inputs = Vec::with_capacity(m);
        for (j, a) in agents.iter().enumerate() {
            let spec = cfg.spec(
                a.beta,
                cfg.round_size,
                sub_seed(cfg.seed, &format!("stream/{b}/agent/{j}")),
                base + (j * cfg.round_size) as u64,
            );
            let pts = gen_imbalanced_points(&spec, &cfg.features)?;
            let schedule = ThresholdSchedule::uniform(a.tau).map_err(|e| ExperimentError::Config(e.to_string()))?;
            inputs.push(StreamInput::new(Stream::from_points(pts), schedule));
        }
        let f = cfg.value_function(&clf)?;
        let run = fed_dmgt(inputs, &f)?;
        if let Some((j, e)) = run.failures().next() {
            return Err(ExperimentError::Round {
                round: b,
                reason: format!("agent {j}: {e}"),
            });
        }
        for (j, trace) in run.traces().enumerate() {
            agent_rounds[j].push(agent_tallies[j].record(
                b,
                trace.touched,
                &trace.selected,
                trace.value.unwrap_or(0.0),
                &trace.thresholds,
                clf.alpha(),
            )?);
        }
        let pooled_value = f.value(&run.selected)?;
        rounds.push(tally.record(b, run.touched(), &run.selected, pooled_value, &run.thresholds, clf.alpha())?);
        clf = clf.update(run.selected.len());
    }
    Ok(ExperimentRecord {
        mode: ExperimentMode::Fed,
        classes: cfg.classes,
        rounds,
        agent_rounds,
        final_alpha: clf.alpha(),
    })
}

/// Final counts of one DMGT run at a given threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub tau: f64,
    pub target_real: Option<f64>,
    pub selected: usize,
    pub rare: usize,
    pub common: usize,
    /// Rare-group selections per rare class per round.
    pub rare_per_class_round: f64,
    pub common_per_class_round: f64,
}

pub fn sweep_tau(cfg: &ExperimentConfig, taus: &[f64]) -> Result<Vec<SweepRecord>, ExperimentError> {
    taus.iter()
        .map(|&tau| {
            let run_cfg = ExperimentConfig {
                tau: Some(tau),
                target: None,
                agents: None,
                ..cfg.clone()
            };
            let rec = run_rounds(&run_cfg, &Selector::Dmgt)?;
            let rounds = cfg.rounds as f64;
            Ok(SweepRecord {
                tau,
                target_real: target_for_threshold(tau).ok().map(|t| t.real),
                selected: rec.total_selected(),
                rare: rec.total_rare(),
                common: rec.total_common(),
                rare_per_class_round: rec.total_rare() as f64 / (rounds * cfg.rare.len() as f64),
                common_per_class_round: rec.total_common() as f64 / (rounds * cfg.common.len() as f64),
            })
        })
        .collect()
}

/// `lo, lo+step, …` up to `hi` inclusive (within a relative step tolerance).
pub fn tau_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, ExperimentError> {
    if !(lo > 0.0 && hi >= lo && step > 0.0 && hi.is_finite()) {
        return Err(ExperimentError::Config(format!("invalid threshold range {lo}:{hi}:{step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    if count > 10_000 {
        return Err(ExperimentError::Config(format!("threshold range has {count} points")));
    }
    Ok((0..count).map(|i| lo + i as f64 * step).collect())
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-round CSV: `round,mode,seen,selected,rare,common,rare_fraction,value,tau_min,tau_max,alpha,cum_rare,cum_common,class_0,…`.
pub fn write_rounds_csv<W: Write>(out: W, record: &ExperimentRecord) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "round",
        "mode",
        "seen",
        "selected",
        "rare",
        "common",
        "rare_fraction",
        "value",
        "tau_min",
        "tau_max",
        "alpha",
        "cum_rare",
        "cum_common",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..record.classes).map(|k| format!("class_{k}")));
    w.write_record(&header)?;
    for r in &record.rounds {
        let mut row = vec![
            r.round.to_string(),
            record.mode.as_str().to_string(),
            r.seen.to_string(),
            r.selected.to_string(),
            r.rare.to_string(),
            r.common.to_string(),
            r.rare_fraction().to_string(),
            r.value.to_string(),
            opt_str(r.tau_min),
            opt_str(r.tau_max),
            r.alpha.to_string(),
            r.cum_rare.to_string(),
            r.cum_common.to_string(),
        ];
        row.extend(r.per_class.iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Sweep CSV, one row per threshold.
pub fn write_sweep_csv<W: Write>(out: W, records: &[SweepRecord]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record([
            "tau",
            "target_real",
            "selected",
            "rare",
            "common",
            "rare_per_class_round",
            "common_per_class_round",
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
