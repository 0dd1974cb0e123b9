//! The audit profile: the researcher's declarative answers to the
//! identification-step questions, plus the dataset schema and every
//! threshold the measurement step consults.
//!
//! Profiles are JSON documents with fixed field names; unknown fields are
//! rejected so a typo cannot silently disable a check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnType, Dataset, GroupKey};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaField {
    pub name: String,
    pub kind: ColumnType,
}

/// Which bias families the researcher declares relevant for the trial goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelevanceFlags {
    pub minority: bool,
    pub missing_data: bool,
    pub informativeness: bool,
    pub selection: bool,
}

impl Default for RelevanceFlags {
    fn default() -> Self {
        RelevanceFlags {
            minority: true,
            missing_data: true,
            informativeness: true,
            selection: true,
        }
    }
}

/// Severity thresholds used by the measurement step. All overridable per
/// profile; the defaults are starting points, not claims about any domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Protected-value density below this is a warning.
    pub density_warning: f64,
    /// Protected-value density below this is critical.
    pub density_critical: f64,
    /// |statistical parity difference| above this is a warning.
    pub spd_warning: f64,
    /// Disparate impact below this is a warning.
    pub di_warning: f64,
    /// Max per-group completeness gap above this raises the disparity flag.
    pub completeness_disparity: f64,
    /// Largest coverage combination space the audit will enumerate.
    pub coverage_space_cap: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            density_warning: 0.10,
            density_critical: 0.01,
            spd_warning: 0.1,
            di_warning: 0.8,
            completeness_disparity: 0.10,
            coverage_space_cap: 1_000_000,
        }
    }
}

/// How a value can come to be missing. Declared by the researcher, never
/// inferred from the data alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MissingnessClass {
    Mcar,
    Mar,
    Mnar,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingnessDeclaration {
    pub class: MissingnessClass,
    #[serde(default)]
    pub rationale: String,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_tau() -> usize {
    1
}

fn default_favorable() -> u8 {
    1
}

/// Declarative audit configuration. See the crate docs for a worked example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditProfile {
    /// Column schema of the dataset; ingestion never infers types.
    pub schema: Vec<SchemaField>,
    #[serde(default = "crate::dataset::default_missing_tokens")]
    pub missing_tokens: Vec<String>,
    pub protected_attributes: Vec<String>,
    /// Reference group for fairness differences.
    #[serde(default)]
    pub privileged_group: GroupKey,
    /// Groups compared against the privileged group; differences are
    /// (unprivileged - privileged).
    #[serde(default)]
    pub unprivileged_groups: Vec<GroupKey>,
    #[serde(default)]
    pub outcome_column: Option<String>,
    #[serde(default)]
    pub prediction_column: Option<String>,
    /// The binary-label value considered beneficial to the individual.
    #[serde(default = "default_favorable")]
    pub favorable_label: u8,
    /// Coverage threshold: combinations with fewer rows are uncovered.
    #[serde(default = "default_tau")]
    pub tau: usize,
    /// Significance level for the split-comparison tests.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub relevance_flags: RelevanceFlags,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Researcher-declared missingness class per attribute.
    #[serde(default)]
    pub missingness: BTreeMap<String, MissingnessDeclaration>,
    /// Extra categorical values to include in the coverage space beyond the
    /// observed ones, per attribute.
    #[serde(default)]
    pub value_extensions: BTreeMap<String, Vec<String>>,
    /// Initialization seed for the interpretable model fit.
    #[serde(default)]
    pub model_seed: u64,
}

impl AuditProfile {
    /// Minimal profile over a schema: every flag on, all defaults.
    pub fn new(schema: Vec<SchemaField>, protected_attributes: Vec<String>) -> Self {
        AuditProfile {
            schema,
            missing_tokens: crate::dataset::default_missing_tokens(),
            protected_attributes,
            privileged_group: GroupKey::empty(),
            unprivileged_groups: Vec::new(),
            outcome_column: None,
            prediction_column: None,
            favorable_label: 1,
            tau: 1,
            alpha: 0.05,
            relevance_flags: RelevanceFlags::default(),
            thresholds: Thresholds::default(),
            missingness: BTreeMap::new(),
            value_extensions: BTreeMap::new(),
            model_seed: 0,
        }
    }

    pub fn schema_pairs(&self) -> Vec<(String, ColumnType)> {
        self.schema
            .iter()
            .map(|f| (f.name.clone(), f.kind))
            .collect()
    }

    /// True when the profile asks for fairness metrics: it names both a
    /// prediction column and an outcome column and at least one group pair.
    pub fn fairness_requested(&self) -> bool {
        self.prediction_column.is_some() && !self.unprivileged_groups.is_empty()
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let profile: AuditProfile = serde_json::from_str(json)?;
        profile.validate_internal()?;
        Ok(profile)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn validate_internal(&self) -> Result<()> {
        if self.tau < 1 {
            return Err(Error::ProfileMismatch("tau must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::ProfileMismatch(
                "alpha must lie strictly between 0 and 1".into(),
            ));
        }
        if self.favorable_label > 1 {
            return Err(Error::ProfileMismatch(
                "favorable_label must be 0 or 1".into(),
            ));
        }
        Ok(())
    }

    /// Validate the profile against a loaded dataset.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        self.validate_internal()?;
        for attr in &self.protected_attributes {
            let col = ds.column(attr).map_err(|_| {
                Error::ProfileMismatch(format!("protected attribute {attr} not in dataset"))
            })?;
            if col.data.column_type() != ColumnType::Categorical {
                return Err(Error::ProfileMismatch(format!(
                    "protected attribute {attr} is not categorical"
                )));
            }
        }
        if let Some(outcome) = &self.outcome_column {
            ds.binary_cells(outcome)?;
        }
        if let Some(pred) = &self.prediction_column {
            ds.binary_cells(pred)?;
            if self.outcome_column.is_none() {
                return Err(Error::ProfileMismatch(
                    "prediction_column requires outcome_column".into(),
                ));
            }
        }
        if self.fairness_requested() {
            if self.prediction_column.is_none() || self.outcome_column.is_none() {
                return Err(Error::ProfileMismatch(
                    "fairness metrics need both prediction_column and outcome_column".into(),
                ));
            }
            self.privileged_group.validate(ds).map_err(|e| {
                Error::ProfileMismatch(format!("privileged_group invalid: {e}"))
            })?;
            if self.privileged_group.is_empty() {
                return Err(Error::ProfileMismatch(
                    "fairness metrics need a non-empty privileged_group".into(),
                ));
            }
            for g in &self.unprivileged_groups {
                g.validate(ds).map_err(|e| {
                    Error::ProfileMismatch(format!("unprivileged group invalid: {e}"))
                })?;
            }
        }
        for attr in self.value_extensions.keys() {
            ds.observed_values(attr).map_err(|_| {
                Error::ProfileMismatch(format!(
                    "value_extensions names {attr}, which is not a categorical attribute"
                ))
            })?;
        }
        Ok(())
    }
}
