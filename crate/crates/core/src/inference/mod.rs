//! Likelihood-based estimation, parameter recovery and model comparison.

pub mod compare;
pub mod fit;
pub mod likelihood;
pub mod recovery;

pub use fit::{fit_sdt, fit_sdt_with, CiMethod, FitOptions, FitResult, FitStatus, ParamEstimate};
pub use likelihood::{log_likelihood, SdtParams, SufficientStats};
pub use recovery::{recovery_study, recovery_study_with, PriorBox, RecoveryOptions, RecoveryReport};
pub use compare::{bic_study, compare_models, BicStudy, rule_comparison, CorrectnessModel, ModelComparison, ModelFit, RuleScore};
