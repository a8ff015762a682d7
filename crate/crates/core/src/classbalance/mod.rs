//! Class-balance selection: value functions that reward even class
//! coverage, threshold calibration, a synthetic classifier, imbalanced
//! stream generation and the round-based experiment harness.

pub mod calibration;
pub mod classifier;
pub mod experiment;
pub mod function;
pub mod generate;

pub use calibration::{target_for_threshold, threshold_for_target, BalanceTarget};
pub use classifier::SoftClassifier;
pub use experiment::{
    run_federated, run_paired, run_rounds, sweep_tau, tau_grid, write_rounds_csv, write_sweep_csv, AgentSpec,
    ExperimentConfig, ExperimentError, ExperimentMode, ExperimentRecord, RoundRecord, Selector, SweepRecord,
};
pub use function::{cb_marginal, weighted_soft_score, BalanceMode, ClassBalance, Concave, ProbabilitySource};
pub use generate::{gen_imbalanced_points, gen_imbalanced_stream, FeatureModel, ImbalanceSpec};
