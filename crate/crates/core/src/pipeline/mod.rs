//! End-to-end orchestration: data generation, training, restoration and evaluation.

mod commands;
mod config;

pub use commands::{
    check_disjoint, cmd_eval, cmd_gen_data, cmd_restore, cmd_train, detail_csv, load_models, read_detail, split_seeds,
    summarize, summary_csv, Branch, DetailRow, EvalTables, Layout, RestoreMode, RunManifest, SummaryRow,
};
pub use config::{DataSection, EvalSection, FuseSection, Overrides, Preset, RunConfig, TrainSection};
