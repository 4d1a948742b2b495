//! Predicting abnormal laboratory values from routine 12-lead ECG features.
//!
//! The crate covers the whole path from raw tables to per-task reports:
//!
//! - [`ingest`] reads ECG and laboratory tables.
//! - [`cohort`] pairs each ECG with the nearest lab observation and turns
//!   every (analyte, direction) into a binary task.
//! - [`split`] assigns subjects to train/validation/test folds, stratified by
//!   gender and age quartile.
//! - [`gbdt`] fits boosted decision stumps.
//! - [`eval`] computes AUROC with bootstrap intervals and subgroup analyses.
//! - [`explain`] gives exact Shapley attributions for stump ensembles.
//! - [`synth`] generates seeded cohorts with known ground truth.
//! - [`pipeline`] chains the stages behind a run directory.

pub mod cohort;
pub mod config;
pub mod eval;
pub mod explain;
pub mod gbdt;
pub mod ingest;
pub mod pipeline;
pub mod split;
pub mod synth;
