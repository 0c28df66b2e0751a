//! Experiment harness for dual-schedule inversion.
//!
//! Each command reads an [`ExperimentConfig`], runs round trips through the
//! `dualsched` library and returns CSV-ready rows. The `dsinv` binary wraps
//! them as the `reconstruct`, `ablate`, `irreversibility` and `edit`
//! subcommands.

mod commands;
mod config;
mod error;

pub use crate::commands::{
    ablation_grid, run_ablate, run_edit, run_irreversibility, run_reconstruct, write_csv, write_edited, AblationRow,
    EditReport, EditRow, EditedLatent, EditedLatents, IrreversibilityRow, Method, ReconstructRow, SampleId,
};
pub use crate::config::{
    AblationConfig, Axis, ConditionConfig, ConditionKeyword, DataConfig, Experiment, ExperimentConfig, GridConfig,
    GuidanceConfig, Model, OutputConfig, PredictorConfig,
};
pub use crate::error::CliError;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/harness.md")]
mod book_harness {}
