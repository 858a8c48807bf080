//! Experiment harness: configuration profiles, the three experiment drivers,
//! and the report writers behind the `satsynth` binary.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] satsynth_data::DataError),
    #[error(transparent)]
    Gan(#[from] satsynth_gan::GanError),
    #[error(transparent)]
    Eval(#[from] satsynth_eval::EvalError),
}

pub use config::{HarnessConfig, Scale};
pub use experiments::{
    ensure_dataset, run_lambda_sweep, run_mix_sweep, run_substitution, DataBundle, ExperimentKind,
    ExperimentPlan, LambdaSweepReport, MixSweepReport, SubstitutionReport, LAMBDA_SWEEP_HEADER,
    MIX_SWEEP_HEADER,
};
