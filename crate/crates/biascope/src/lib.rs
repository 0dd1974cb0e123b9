//! Bias auditing for tabular datasets: identify, measure, and mitigate.
//!
//! The library walks a dataset through a three-step pipeline driven by a
//! declarative [`profile::AuditProfile`]:
//!
//! 1. **Identification** ([`pipeline::identify`]) pre-fills a per-bias
//!    question checklist with dataset facts and records which bias families
//!    are in scope.
//! 2. **Measurement** ([`pipeline::measure`]) quantifies four bias families:
//!    minority bias (value densities, coverage of the categorical attribute
//!    space, group fairness statistics), missing-data bias (completeness at
//!    table/attribute/tuple/group granularity), informativeness bias
//!    (coefficients of an interpretable logistic model), and selection bias
//!    (two-sample tests between train/test/validation splits).
//! 3. **Mitigation** ([`pipeline::mitigate`]) applies a pre-processing
//!    action — reweighing, coverage repair, deletion or imputation, K-fold
//!    split generation — then re-measures and reports every metric that
//!    moved, including the ones that got worse.
//!
//! Findings travel with the dataset in a content-hashed metadata sidecar
//! (`<dataset>.biasmeta.json`) so later studies can reuse them and detect
//! when the data changed under the record.
//!
//! Everything is deterministic: datasets are immutable after load, all
//! randomized operations take explicit seeds, and repeated audits of the
//! same inputs produce byte-identical findings. Per-group model refits are
//! available by composing [`dataset::rows_matching`] with
//! [`dataset::Dataset::filter_rows`] and re-running the informativeness
//! operations on the filtered rows.

pub mod completeness;
pub mod dataset;
pub mod error;
pub mod informativeness;
pub mod minority;
pub mod mitigation;
pub mod pipeline;
pub mod profile;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};
