//! Configuration, data ingestion and the experiment runners.

mod config;
pub mod data;
mod runners;

pub use config::{DataSource, ExperimentConfig, MaskMode};
pub use data::{Dataset, MaskSource, SyntheticDatasetSpec, SyntheticKind};
pub use runners::{
    dump_diagnostics, eval_pairs, evaluate, pairs_hash, run_ablation, run_eval, run_infer, run_mask_gen,
    run_shift_analyze, run_synth_data, run_table4, run_train, AblationRow, CurvePoint, EvalOptions, EvalOutcome,
    EvalPair, Evaluation, ShiftRow, SweepRow, TrainReport,
};
