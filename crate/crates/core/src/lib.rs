//! Causal decomposition of disparities in outcomes, scores, predictions and
//! prediction margins, with a business-necessity audit on top.

pub mod audit;
pub mod data;
pub mod decompose;
pub mod error;
pub mod inference;
pub mod nuisance;
pub mod scm;
pub mod stats;

pub use audit::{audit, audit_report, explain, AuditReport, AuditVerdict, BnPolicy, Designation, Outcome, Overall};
pub use data::{
    load_dataset, Columns, Covariate, CovariateValues, Group, Row, ScoreSource, SfmDataset,
    SfmSchema, Target, ThresholdMode, ThresholdSpec, Value,
};
pub use decompose::{
    decompose, decompose_with, estimate_effect, id_formula_effect, sample_influence, tv,
    DecompositionMode, DecompositionReport, EffectEstimate, EffectKind, Interval,
};
pub use error::{Error, Result};
pub use inference::{
    bootstrap_decomposition, test_equal, test_zero, BootstrapConfig, Decision, HypothesisResult,
    ReplicateMatrix, Term, TestOptions,
};
pub use nuisance::{NuisanceConfig, NuisanceMethod, NuisanceSet};
pub use scm::{
    export_model, import_model, oracle_effects, oracle_stratum_direct_effects, BuiltinModel,
    OracleEffects, OracleMode, ScmSpec, StratumDirectEffect,
};
