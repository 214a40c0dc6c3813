//! Backbone selection and frozen-embedding evaluation.
//!
//! - [`store`]: embedding tables and the EMB1 binary format
//! - [`cohort`]: patient-level folds and nested label-fraction subsamples
//! - [`transfer`]: LogME, NLEEP and PARC scores plus Borda aggregation
//! - [`probe`]: deterministic multinomial logistic probe
//! - [`metrics`]: AUROC, average precision, F1 summaries, paired t-test
//! - [`ssl`]: student-teacher self-distillation on synthetic vectors
//! - [`harness`]: experiment orchestration behind the command-line tool

pub mod cohort;
pub mod harness;
pub mod metrics;
pub mod probe;
pub mod rank;
pub mod ssl;
pub mod store;
pub mod transfer;

pub use store::{read_table, validate, write_table, EmbeddingTable, StoreError, TableMeta, Violation};
