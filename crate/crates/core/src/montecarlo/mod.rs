//! Simulation engine for the team-accuracy results: grid sweeps, threshold
//! estimation and the individual verification experiments.

pub mod adversarial;
pub mod benchmark;
pub mod cell;
pub mod family;
pub mod identities;
pub mod kclass;
pub mod phase;
pub mod robustness;
pub mod tertile;
pub mod threshold;
pub mod variance;

pub use adversarial::{adversarial_sweep, AdversarialPair, AdversarialSpec};
pub use benchmark::{rule_benchmark, BenchmarkReport, BenchmarkSpec};
pub use cell::{run_sweep, simulate_cell, symmetric_pair, CellResult, CellSpec, CellStats, RuleResult, SweepSpec};
pub use family::{Family, FamilySampler};
pub use identities::{verify_disagreement_identities, DisagreementReport};
pub use kclass::{kclass_sweep, KClassReport, KClassSpec};
pub use phase::{phase_rows, PhaseRow};
pub use robustness::{robustness_grid, robustness_sweep, RobustnessReport};
pub use tertile::{tertile_gain_analysis, GapGain, TertileReport};
pub use threshold::{estimate_threshold, threshold_from_points, threshold_from_results, ThresholdEstimate, ThresholdOptions};
pub use variance::{variance_check, VarianceReport, VarianceSpec};
