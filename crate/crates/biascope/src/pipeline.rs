//! The audit pipeline: identification (checklist intake), measurement of the
//! four bias families, explicit mitigation with automatic re-measurement,
//! and report plus metadata-sidecar emission.
//!
//! The pipeline never loops on its own: every mitigation is an explicit
//! plan, and its result includes the re-measured deltas so the researcher
//! decides what happens next.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::completeness::{
    completeness, completeness_csv, group_completeness, missingness_disparity, CompletenessReport,
    DisparityFinding,
};
use crate::dataset::{enumerate_groups, ColumnType, Dataset, GroupKey};
use crate::error::{Error, Result};
use crate::informativeness::{
    encode, importance, importance_csv, train_logistic, ImportanceReport, TrainConfig,
};
use crate::minority::{
    coverage_capped, density, density_csv, fairness, fairness_csv, CoverageFinding, DensityTable,
    FairnessReport,
};
use crate::mitigation::{
    favorable_outcome_rates, impute, kfold, materialize_repairs, repair_order, reweigh, ChangeLog,
    ImputationSpec, KFoldSplits, RepairOrder, WeightVector,
};
use crate::profile::AuditProfile;
use crate::selection::{
    compare_splits, ecdf_csv, explore, Decision, SplitComparison, SplitSpec,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasType {
    Minority,
    MissingData,
    Informativeness,
    Selection,
}

impl BiasType {
    pub fn family_id(self) -> &'static str {
        match self {
            BiasType::Minority => "minority",
            BiasType::MissingData => "missing_data",
            BiasType::Informativeness => "informativeness",
            BiasType::Selection => "selection",
        }
    }

    fn from_family_id(id: &str) -> Option<Self> {
        match id {
            "minority" => Some(BiasType::Minority),
            "missing_data" => Some(BiasType::MissingData),
            "informativeness" => Some(BiasType::Informativeness),
            "selection" => Some(BiasType::Selection),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    None,
    Info,
    Warning,
    Critical,
}

/// The fixed bias-to-mitigation mapping. Externally executed actions are
/// marked as such; they are recommended in reports but never applied by the
/// tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    CoverageRepair,
    Reweighing,
    OptimizedPreprocessingExternal,
    Deletion,
    SingleImputation,
    ModelBasedImputation,
    AnteHocModel,
    PostHocExplanationExternal,
    KFoldCrossValidation,
}

impl Recommendation {
    pub fn label(self) -> &'static str {
        match self {
            Recommendation::CoverageRepair => "coverage repair (collect the rows in the repair order)",
            Recommendation::Reweighing => "reweighing",
            Recommendation::OptimizedPreprocessingExternal => "optimized pre-processing (external tooling)",
            Recommendation::Deletion => "deletion of incomplete rows",
            Recommendation::SingleImputation => "single imputation (mean, median, or mode)",
            Recommendation::ModelBasedImputation => "model-based imputation (nearest neighbours)",
            Recommendation::AnteHocModel => "ante-hoc interpretable model",
            Recommendation::PostHocExplanationExternal => "post-hoc explanation system (external tooling)",
            Recommendation::KFoldCrossValidation => "K-fold cross-validation (K of 5 or 10 is usual; K = n is leave-one-out)",
        }
    }
}

/// The recommendations allowed for each bias family.
pub fn recommended_for(bias: BiasType) -> &'static [Recommendation] {
    match bias {
        BiasType::Minority => &[
            Recommendation::CoverageRepair,
            Recommendation::Reweighing,
            Recommendation::OptimizedPreprocessingExternal,
        ],
        BiasType::MissingData => &[
            Recommendation::Deletion,
            Recommendation::SingleImputation,
            Recommendation::ModelBasedImputation,
        ],
        BiasType::Informativeness => &[
            Recommendation::AnteHocModel,
            Recommendation::PostHocExplanationExternal,
        ],
        BiasType::Selection => &[Recommendation::KFoldCrossValidation],
    }
}

/// Whether a larger headline value means less bias or more bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

/// One measured finding. `headline` is the single scalar the delta report
/// tracks across mitigations; `metric_values` holds the full structured
/// result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasFinding {
    /// Stable identifier, `<family>/<metric>`.
    pub id: String,
    pub bias_type: BiasType,
    pub metric_name: String,
    pub metric_values: serde_json::Value,
    pub headline: Option<f64>,
    pub direction: Direction,
    pub severity: Severity,
    pub recommended_mitigations: Vec<Recommendation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl BiasFinding {
    fn new(bias_type: BiasType, metric_name: &str, direction: Direction) -> Self {
        BiasFinding {
            id: format!("{}/{}", bias_type.family_id(), metric_name),
            bias_type,
            metric_name: metric_name.to_string(),
            metric_values: serde_json::Value::Null,
            headline: None,
            direction,
            severity: Severity::None,
            recommended_mitigations: recommended_for(bias_type).to_vec(),
            notes: Vec::new(),
        }
    }

    fn with_error(mut self, err: &Error) -> Self {
        self.notes.push(format!("not measured: {err}"));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionAnswer {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSection {
    pub bias_type: BiasType,
    pub questions: Vec<QuestionAnswer>,
    pub relevant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
}

impl BiasSection {
    pub fn active(&self) -> bool {
        self.relevant && self.skip_reason.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeFact {
    pub name: String,
    pub kind: ColumnType,
    pub missing_cells: usize,
}

/// The identification step's output: the question lists pre-filled with
/// dataset facts, and a skip record for every bias family that will not be
/// measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationChecklist {
    pub attribute_inventory: Vec<AttributeFact>,
    pub split_present: bool,
    pub sections: Vec<BiasSection>,
}

impl IdentificationChecklist {
    pub fn section(&self, bias: BiasType) -> &BiasSection {
        self.sections
            .iter()
            .find(|s| s.bias_type == bias)
            .expect("all four sections present")
    }
}

/// Run the identification step: validate the profile against the dataset
/// and pre-fill the per-bias question lists with dataset facts. Families
/// the profile declares irrelevant, or that the facts rule out (no missing
/// values, a single group), are marked skipped with the reason.
pub fn identify(
    profile: &AuditProfile,
    ds: &Dataset,
    split_present: bool,
) -> Result<IdentificationChecklist> {
    profile.validate(ds)?;

    let attribute_inventory: Vec<AttributeFact> = ds
        .columns()
        .iter()
        .map(|c| AttributeFact {
            name: c.name.clone(),
            kind: c.data.column_type(),
            missing_cells: c.data.missing_count(),
        })
        .collect();
    let inventory_text = attribute_inventory
        .iter()
        .map(|f| format!("{} ({})", f.name, f.kind))
        .collect::<Vec<_>>()
        .join(", ");
    let total_missing = ds.total_missing();

    // Minority.
    let protected_text = if profile.protected_attributes.is_empty() {
        "none declared".to_string()
    } else {
        profile.protected_attributes.join(", ")
    };
    let group_count = enumerate_groups(ds, &profile.protected_attributes)?
        .iter()
        .filter(|(_, count)| *count > 0)
        .count();
    let minority_skip = if !profile.relevance_flags.minority {
        Some("skipped by relevance flag".to_string())
    } else if group_count <= 1 {
        Some("only one group".to_string())
    } else {
        None
    };
    let minority = BiasSection {
        bias_type: BiasType::Minority,
        questions: vec![
            QuestionAnswer {
                question: "Which attributes and features are present in the dataset?".into(),
                answer: inventory_text.clone(),
            },
            QuestionAnswer {
                question: "Which are more relevant for the study?".into(),
                answer: format!(
                    "declared by the researcher; protected attributes: {protected_text}"
                ),
            },
            QuestionAnswer {
                question: "Are there protected attributes for the study?".into(),
                answer: if profile.protected_attributes.is_empty() {
                    "no".to_string()
                } else {
                    format!(
                        "yes: {} ({} observed groups)",
                        profile.protected_attributes.join(", "),
                        group_count
                    )
                },
            },
        ],
        relevant: profile.relevance_flags.minority,
        skip_reason: minority_skip,
    };

    // Missing data.
    let declared: Vec<String> = profile
        .missingness
        .iter()
        .map(|(attr, d)| format!("{attr}: {:?} ({})", d.class, d.rationale))
        .collect();
    let missing_answer = if total_missing == 0 {
        "no missing values".to_string()
    } else if declared.is_empty() {
        format!("{total_missing} missing cells; no missingness class declared (treated as Unknown)")
    } else {
        format!("{total_missing} missing cells; declared: {}", declared.join("; "))
    };
    let missing_skip = if !profile.relevance_flags.missing_data {
        Some("skipped by relevance flag".to_string())
    } else if total_missing == 0 {
        Some("no missing values".to_string())
    } else {
        None
    };
    let missing = BiasSection {
        bias_type: BiasType::MissingData,
        questions: vec![QuestionAnswer {
            question: "Are there any missing values? If so, why?".into(),
            answer: missing_answer,
        }],
        relevant: profile.relevance_flags.missing_data,
        skip_reason: missing_skip,
    };

    // Informativeness.
    let informativeness_skip = if !profile.relevance_flags.informativeness {
        Some("skipped by relevance flag".to_string())
    } else if profile.outcome_column.is_none() {
        Some("no outcome column declared".to_string())
    } else {
        None
    };
    let informativeness = BiasSection {
        bias_type: BiasType::Informativeness,
        questions: vec![
            QuestionAnswer {
                question: "Which features are more important for predicting the result?".into(),
                answer: match &profile.outcome_column {
                    Some(outcome) => format!(
                        "measured by the coefficients of an interpretable model for {outcome}"
                    ),
                    None => "not measurable: no outcome column declared".into(),
                },
            },
            QuestionAnswer {
                question: "Are there features for which more information is needed?".into(),
                answer: "see flagged protected values in the importance finding".into(),
            },
        ],
        relevant: profile.relevance_flags.informativeness,
        skip_reason: informativeness_skip,
    };

    // Selection.
    let selection_skip = if !profile.relevance_flags.selection {
        Some("skipped by relevance flag".to_string())
    } else {
        None
    };
    let selection = BiasSection {
        bias_type: BiasType::Selection,
        questions: vec![
            QuestionAnswer {
                question: "Are there training and testing phases for the study?".into(),
                answer: if split_present {
                    "yes: a train/test split was provided".into()
                } else {
                    "no split provided".into()
                },
            },
            QuestionAnswer {
                question: "Has the model been evaluated? If yes, how?".into(),
                answer: match &profile.prediction_column {
                    Some(pred) => format!("predictions present in column {pred}"),
                    None => "no prediction column declared".into(),
                },
            },
        ],
        relevant: profile.relevance_flags.selection,
        skip_reason: selection_skip,
    };

    Ok(IdentificationChecklist {
        attribute_inventory,
        split_present,
        sections: vec![minority, missing, informativeness, selection],
    })
}

/// The raw per-module results behind the findings, kept for plot-data
/// export.
#[derive(Debug, Clone, Default)]
pub struct MeasurementArtifacts {
    pub density_tables: Vec<DensityTable>,
    pub coverage_findings: Vec<CoverageFinding>,
    pub fairness: Option<FairnessReport>,
    pub completeness: Option<CompletenessReport>,
    pub group_completeness: Vec<(GroupKey, Option<f64>)>,
    pub importance: Option<ImportanceReport>,
    pub comparison: Option<SplitComparison>,
}

#[derive(Debug, Clone)]
pub struct MeasurementOutput {
    pub findings: Vec<BiasFinding>,
    pub artifacts: MeasurementArtifacts,
}

fn severity_for_density(min_fraction: f64, profile: &AuditProfile) -> Severity {
    if min_fraction < profile.thresholds.density_critical {
        Severity::Critical
    } else if min_fraction < profile.thresholds.density_warning {
        Severity::Warning
    } else {
        Severity::None
    }
}

fn measure_minority(
    ds: &Dataset,
    profile: &AuditProfile,
    artifacts: &mut MeasurementArtifacts,
) -> Vec<BiasFinding> {
    let mut findings = Vec::new();

    // Density of every protected attribute value.
    let mut finding = BiasFinding::new(BiasType::Minority, "density", Direction::HigherIsBetter);
    let mut tables = Vec::new();
    let mut min_fraction = f64::INFINITY;
    for attr in &profile.protected_attributes {
        match density(ds, attr) {
            Ok(table) => {
                for entry in &table.entries {
                    min_fraction = min_fraction.min(entry.fraction);
                }
                tables.push(table);
            }
            Err(err) => finding.notes.push(format!("{attr}: {err}")),
        }
    }
    if !tables.is_empty() {
        finding.metric_values = serde_json::to_value(&tables).expect("serializable");
        finding.headline = Some(min_fraction);
        finding.severity = severity_for_density(min_fraction, profile);
    }
    artifacts.density_tables = tables;
    findings.push(finding);

    // Joint coverage over the protected attributes.
    let mut finding = BiasFinding::new(BiasType::Minority, "coverage", Direction::LowerIsBetter);
    match coverage_capped(
        ds,
        &profile.protected_attributes,
        profile.tau,
        &profile.value_extensions,
        false,
        u128::from(profile.thresholds.coverage_space_cap),
    ) {
        Ok(uncovered) => {
            let total_deficit: usize = uncovered.iter().map(|f| f.deficit).sum();
            finding.metric_values = serde_json::json!({
                "tau": profile.tau,
                "uncovered": uncovered,
            });
            finding.headline = Some(total_deficit as f64);
            finding.severity = if total_deficit > 0 {
                Severity::Warning
            } else {
                Severity::None
            };
            artifacts.coverage_findings = uncovered;
        }
        Err(err) => finding = finding.with_error(&err),
    }
    findings.push(finding);

    // Fairness, when the profile requests it.
    if profile.fairness_requested() {
        let mut finding = BiasFinding::new(BiasType::Minority, "fairness", Direction::LowerIsBetter);
        match fairness(ds, profile) {
            Ok(report) => {
                let max_spd = report
                    .per_group
                    .iter()
                    .map(|g| g.statistical_parity_difference.abs())
                    .fold(0.0f64, f64::max);
                let di_breach = report.per_group.iter().any(|g| {
                    g.disparate_impact
                        .is_some_and(|di| di < profile.thresholds.di_warning)
                });
                finding.metric_values = serde_json::to_value(&report).expect("serializable");
                finding.headline = Some(max_spd);
                finding.severity = if max_spd > profile.thresholds.spd_warning || di_breach {
                    Severity::Warning
                } else {
                    Severity::None
                };
                artifacts.fairness = Some(report);
            }
            Err(err) => finding = finding.with_error(&err),
        }
        findings.push(finding);
    }

    findings
}

fn measure_missing_data(
    ds: &Dataset,
    profile: &AuditProfile,
    artifacts: &mut MeasurementArtifacts,
) -> Vec<BiasFinding> {
    let mut findings = Vec::new();

    let mut finding =
        BiasFinding::new(BiasType::MissingData, "completeness", Direction::HigherIsBetter);
    match completeness(ds) {
        Ok(report) => {
            let tuple_min = report.per_tuple.iter().cloned().fold(f64::INFINITY, f64::min);
            let tuple_mean =
                report.per_tuple.iter().sum::<f64>() / report.per_tuple.len() as f64;
            finding.metric_values = serde_json::json!({
                "table": report.table,
                "per_attribute": report.per_attribute,
                "tuple_min": tuple_min,
                "tuple_mean": tuple_mean,
                "declared_missingness": profile.missingness,
            });
            finding.headline = Some(report.table);
            artifacts.completeness = Some(report);
        }
        Err(err) => finding = finding.with_error(&err),
    }
    findings.push(finding);

    // Per-group completeness disparity: for each measured attribute, the
    // completeness ratios over every protected value group (all protected
    // attributes pooled into one listing), and the max-min gap among them.
    let mut finding =
        BiasFinding::new(BiasType::MissingData, "disparity", Direction::LowerIsBetter);
    let mut entries = Vec::new();
    let mut worst: Option<(f64, DisparityFinding)> = None;
    for col in ds.columns() {
        let mut groups: Vec<GroupKey> = Vec::new();
        for protected in &profile.protected_attributes {
            if protected == &col.name {
                continue;
            }
            match ds.observed_values(protected) {
                Ok(values) => {
                    groups.extend(values.into_iter().map(|v| GroupKey::single(protected, v)));
                }
                Err(err) => finding.notes.push(format!("{protected}: {err}")),
            }
        }
        if groups.is_empty() {
            continue;
        }
        let ratios = match group_completeness(ds, &groups, &col.name) {
            Ok(r) => r,
            Err(err) => {
                finding.notes.push(format!("{}: {err}", col.name));
                continue;
            }
        };
        let defined: Vec<f64> = ratios.iter().filter_map(|(_, r)| *r).collect();
        let Ok(disparity) =
            missingness_disparity(&defined, profile.thresholds.completeness_disparity)
        else {
            continue;
        };
        if worst.as_ref().is_none_or(|(gap, _)| disparity.gap > *gap) {
            worst = Some((disparity.gap, disparity));
            artifacts.group_completeness = ratios.clone();
        }
        entries.push(serde_json::json!({
            "attribute": col.name,
            "gap": disparity.gap,
            "flagged": disparity.flagged,
            "ratios": ratios,
        }));
    }
    if let Some((gap, disparity)) = worst {
        finding.metric_values = serde_json::json!({
            "threshold": profile.thresholds.completeness_disparity,
            "per_attribute": entries,
        });
        finding.headline = Some(gap);
        finding.severity = if disparity.flagged {
            Severity::Warning
        } else {
            Severity::None
        };
    } else {
        finding
            .notes
            .push("no attribute with two defined group completeness ratios".into());
    }
    findings.push(finding);

    findings
}

fn measure_informativeness(
    ds: &Dataset,
    profile: &AuditProfile,
    artifacts: &mut MeasurementArtifacts,
) -> Vec<BiasFinding> {
    let mut finding =
        BiasFinding::new(BiasType::Informativeness, "importance", Direction::LowerIsBetter);
    let outcome = profile
        .outcome_column
        .as_deref()
        .expect("checked by identification");
    let features: Vec<String> = ds
        .columns()
        .iter()
        .map(|c| c.name.clone())
        .filter(|name| {
            Some(name.as_str()) != profile.outcome_column.as_deref()
                && Some(name.as_str()) != profile.prediction_column.as_deref()
        })
        .collect();
    let result = encode(ds, outcome, &features).and_then(|matrix| {
        let config = TrainConfig {
            seed: profile.model_seed,
            ..TrainConfig::default()
        };
        let model = train_logistic(&matrix, &config)?;
        Ok((matrix, model))
    });
    match result {
        Ok((matrix, model)) => {
            let report = importance(&model, profile);
            let flagged: Vec<&str> = report.flagged().map(|p| p.value.as_str()).collect();
            let flag_count = flagged.len();
            finding.metric_values = serde_json::json!({
                "report": report,
                "excluded_rows": matrix.excluded_rows,
                "converged": model.converged,
                "iterations": model.iterations,
                "final_gradient_norm": model.final_gradient_norm,
            });
            if !model.converged {
                finding.notes.push("model fit did not converge; coefficients are the best iterate".into());
            }
            finding.headline = Some(flag_count as f64);
            finding.severity = if flag_count > 0 {
                Severity::Warning
            } else {
                Severity::None
            };
            artifacts.importance = Some(report);
        }
        Err(err) => finding = finding.with_error(&err),
    }
    vec![finding]
}

fn measure_selection(
    ds: &Dataset,
    profile: &AuditProfile,
    split: Option<&SplitSpec>,
    artifacts: &mut MeasurementArtifacts,
) -> Vec<BiasFinding> {
    let mut finding =
        BiasFinding::new(BiasType::Selection, "split_tests", Direction::LowerIsBetter);
    let Some(split) = split else {
        finding.notes.push("no split provided; distributions not compared".into());
        return vec![finding];
    };
    match compare_splits(ds, split, profile) {
        Ok(comparison) => {
            let protected_rejections = comparison
                .tests
                .iter()
                .filter(|t| {
                    t.protected
                        && t.result.as_ref().is_some_and(|r| r.decision == Decision::RejectH0)
                })
                .count();
            let any_rejections = comparison
                .tests
                .iter()
                .filter(|t| {
                    t.result.as_ref().is_some_and(|r| r.decision == Decision::RejectH0)
                })
                .count();
            let exploration = explore(ds, split).ok();
            finding.metric_values = serde_json::json!({
                "comparison": comparison,
                "exploration": exploration,
            });
            finding.headline = Some(protected_rejections as f64);
            finding.severity = if protected_rejections > 0 {
                Severity::Critical
            } else if any_rejections > 0 {
                Severity::Warning
            } else {
                Severity::None
            };
            artifacts.comparison = Some(comparison);
        }
        Err(err) => finding = finding.with_error(&err),
    }
    vec![finding]
}

/// Run every relevant measurement module over the dataset and collect the
/// findings. Module errors become notes on the affected finding; they never
/// abort the rest of the audit.
pub fn measure(
    ds: &Dataset,
    profile: &AuditProfile,
    split: Option<&SplitSpec>,
    checklist: &IdentificationChecklist,
) -> MeasurementOutput {
    let mut findings = Vec::new();
    let mut artifacts = MeasurementArtifacts::default();
    if checklist.section(BiasType::Minority).active() {
        findings.extend(measure_minority(ds, profile, &mut artifacts));
    }
    if checklist.section(BiasType::MissingData).active() {
        findings.extend(measure_missing_data(ds, profile, &mut artifacts));
    }
    if checklist.section(BiasType::Informativeness).active() {
        findings.extend(measure_informativeness(ds, profile, &mut artifacts));
    }
    if checklist.section(BiasType::Selection).active() {
        findings.extend(measure_selection(ds, profile, split, &mut artifacts));
    }
    MeasurementOutput {
        findings,
        artifacts,
    }
}

/// An executable mitigation. Actions must match the target finding's bias
/// family per the summary mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum MitigationAction {
    Reweigh {
        protected_attribute: String,
    },
    Impute {
        spec: ImputationSpec,
    },
    CoverageRepair {
        /// Materialize synthetic rows instead of only emitting the order.
        #[serde(default)]
        materialize: bool,
    },
    GenerateKfold {
        k: usize,
        #[serde(default = "default_repeats")]
        repeats: usize,
        #[serde(default)]
        stratify_on: Option<String>,
        seed: u64,
    },
}

fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationPlan {
    /// Id of the finding this plan addresses, `<family>/<metric>`.
    pub target_finding: String,
    #[serde(flatten)]
    pub action: MitigationAction,
}

impl MitigationPlan {
    pub fn from_json(json: &str) -> Result<Self> {
        let plan: MitigationPlan = serde_json::from_str(json)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn target_bias_type(&self) -> Result<BiasType> {
        let family = self.target_finding.split('/').next().unwrap_or_default();
        BiasType::from_family_id(family).ok_or_else(|| {
            Error::InvalidPlan(format!(
                "target finding {} names no known bias family",
                self.target_finding
            ))
        })
    }

    /// Check the action against the summary mapping for the target family.
    pub fn validate(&self) -> Result<()> {
        let bias = self.target_bias_type()?;
        let ok = matches!(
            (&self.action, bias),
            (MitigationAction::Reweigh { .. }, BiasType::Minority)
                | (MitigationAction::CoverageRepair { .. }, BiasType::Minority)
                | (MitigationAction::Impute { .. }, BiasType::MissingData)
                | (MitigationAction::GenerateKfold { .. }, BiasType::Selection)
        );
        if !ok {
            if bias == BiasType::Informativeness {
                return Err(Error::InvalidPlan(
                    "informativeness mitigations (ante-hoc or post-hoc modelling) are \
                     modelling recommendations, not dataset transformations"
                        .into(),
                ));
            }
            return Err(Error::InvalidPlan(format!(
                "action is not valid for {} findings",
                bias.family_id()
            )));
        }
        Ok(())
    }
}

/// Headline movement of one finding across a mitigation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub finding_id: String,
    pub bias_type: BiasType,
    pub metric_name: String,
    pub direction: Direction,
    pub before: Option<f64>,
    pub after: Option<f64>,
    pub severity_before: Severity,
    pub severity_after: Severity,
    pub improved: bool,
    pub worsened: bool,
}

fn diff_findings(before: &[BiasFinding], after: &[BiasFinding]) -> Vec<MetricDelta> {
    let after_map: BTreeMap<&str, &BiasFinding> =
        after.iter().map(|f| (f.id.as_str(), f)).collect();
    let mut deltas = Vec::new();
    for b in before {
        let Some(a) = after_map.get(b.id.as_str()) else {
            continue;
        };
        let (mut improved, mut worsened) = (false, false);
        if let (Some(x), Some(y)) = (b.headline, a.headline) {
            let moved = y - x;
            let tolerance = 1e-12;
            let better = match b.direction {
                Direction::HigherIsBetter => moved > tolerance,
                Direction::LowerIsBetter => moved < -tolerance,
            };
            let worse = match b.direction {
                Direction::HigherIsBetter => moved < -tolerance,
                Direction::LowerIsBetter => moved > tolerance,
            };
            improved = better;
            worsened = worse;
        }
        if a.severity > b.severity {
            worsened = true;
        }
        if a.severity < b.severity {
            improved = true;
        }
        deltas.push(MetricDelta {
            finding_id: b.id.clone(),
            bias_type: b.bias_type,
            metric_name: b.metric_name.clone(),
            direction: b.direction,
            before: b.headline,
            after: a.headline,
            severity_before: b.severity,
            severity_after: a.severity,
            improved,
            worsened,
        });
    }
    deltas
}

/// What a mitigation produced besides the (possibly unchanged) dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationProduct {
    Weights {
        weights: WeightVector,
        /// Spread of per-group favorable-outcome rates before and after
        /// weighting; reweighing drives the weighted spread to zero.
        rate_spread_before: f64,
        rate_spread_after: f64,
    },
    ImputedDataset {
        change_log: ChangeLog,
    },
    RepairOrder {
        order: RepairOrder,
        materialized: bool,
    },
    Splits {
        splits: KFoldSplits,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationResult {
    pub plan: MitigationPlan,
    pub product: MitigationProduct,
    pub deltas: Vec<MetricDelta>,
    /// Finding ids whose metrics moved the wrong way; mitigating one bias
    /// can raise another, so this list is part of the contract.
    pub worsened: Vec<String>,
}

fn rate_spread(rates: &[(String, f64)]) -> f64 {
    let (min, max) = rates
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, r)| {
            (lo.min(*r), hi.max(*r))
        });
    if rates.len() < 2 {
        0.0
    } else {
        max - min
    }
}

/// Apply a mitigation plan, re-run the measurement step on the result, and
/// report the metric deltas. Returns the new dataset (the original when the
/// action does not transform rows) alongside the result record.
pub fn mitigate(
    ds: &Dataset,
    profile: &AuditProfile,
    plan: &MitigationPlan,
    split: Option<&SplitSpec>,
) -> Result<(Dataset, MitigationResult)> {
    plan.validate()?;
    let checklist = identify(profile, ds, split.is_some())?;
    let before = measure(ds, profile, split, &checklist);

    let mut split_after: Option<SplitSpec> = split.cloned();
    let (ds_after, product) = match &plan.action {
        MitigationAction::Reweigh {
            protected_attribute,
        } => {
            let outcome = profile.outcome_column.as_deref().ok_or_else(|| {
                Error::InvalidPlan("reweighing needs an outcome_column in the profile".into())
            })?;
            let weights = reweigh(ds, protected_attribute, outcome)?;
            let unweighted =
                favorable_outcome_rates(ds, protected_attribute, outcome, profile.favorable_label, None)?;
            let weighted = favorable_outcome_rates(
                ds,
                protected_attribute,
                outcome,
                profile.favorable_label,
                Some(&weights.weights),
            )?;
            (
                ds.clone(),
                MitigationProduct::Weights {
                    rate_spread_before: rate_spread(&unweighted),
                    rate_spread_after: rate_spread(&weighted),
                    weights,
                },
            )
        }
        MitigationAction::Impute { spec } => {
            let (imputed, change_log) = impute(ds, spec)?;
            // Row indices shift under deletion, so a provided split no
            // longer addresses the same rows; drop it for re-measurement.
            if !change_log.removed_rows.is_empty() {
                split_after = None;
            }
            (imputed, MitigationProduct::ImputedDataset { change_log })
        }
        MitigationAction::CoverageRepair { materialize } => {
            let findings = coverage_capped(
                ds,
                &profile.protected_attributes,
                profile.tau,
                &profile.value_extensions,
                false,
                u128::from(profile.thresholds.coverage_space_cap),
            )?;
            let order = repair_order(&findings);
            let ds_after = if *materialize {
                materialize_repairs(ds, &order)?
            } else {
                ds.clone()
            };
            (
                ds_after,
                MitigationProduct::RepairOrder {
                    order,
                    materialized: *materialize,
                },
            )
        }
        MitigationAction::GenerateKfold {
            k,
            repeats,
            stratify_on,
            seed,
        } => {
            let splits = kfold(ds, *k, *repeats, stratify_on.as_deref(), *seed)?;
            split_after = splits.splits.first().cloned();
            (ds.clone(), MitigationProduct::Splits { splits })
        }
    };

    // Re-measure the same families the first pass measured, even when the
    // mitigation removed the facts that made them relevant (a fully imputed
    // dataset no longer identifies missing-data bias, but the delta must
    // still show completeness reaching 1).
    let after = measure(&ds_after, profile, split_after.as_ref(), &checklist);
    let deltas = diff_findings(&before.findings, &after.findings);
    let worsened = deltas
        .iter()
        .filter(|d| d.worsened)
        .map(|d| d.finding_id.clone())
        .collect();

    Ok((
        ds_after,
        MitigationResult {
            plan: plan.clone(),
            product,
            deltas,
            worsened,
        },
    ))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationHistoryEntry {
    pub plan: MitigationPlan,
    pub deltas: Vec<MetricDelta>,
}

/// One audit record: everything measured for a dataset under one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasMetadata {
    pub schema_version: u32,
    pub dataset_name: String,
    /// SHA-256 of the dataset file bytes at audit time.
    pub dataset_hash: String,
    /// SHA-256 of the canonical profile JSON.
    pub profile_hash: String,
    pub tool_version: String,
    pub timestamp_unix: u64,
    pub findings: Vec<BiasFinding>,
    #[serde(default)]
    pub mitigation_history: Vec<MitigationHistoryEntry>,
}

/// The sidecar document stored next to a dataset: one record per profile
/// hash. Merging records across profiles is left to the reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataSidecar {
    pub schema_version: u32,
    pub records: Vec<BiasMetadata>,
}

impl MetadataSidecar {
    pub fn record_for(&self, profile_hash: &str) -> Option<&BiasMetadata> {
        self.records.iter().find(|r| r.profile_hash == profile_hash)
    }

    /// Insert or replace the record with the same profile hash.
    pub fn upsert(&mut self, record: BiasMetadata) {
        match self
            .records
            .iter_mut()
            .find(|r| r.profile_hash == record.profile_hash)
        {
            Some(existing) => *existing = record,
            None => self.records.push(record),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetadataFreshness {
    Fresh,
    /// The dataset bytes changed since the audit; the findings no longer
    /// describe this file.
    Stale,
}

pub fn build_metadata(
    ds: &Dataset,
    dataset_bytes: &[u8],
    profile: &AuditProfile,
    findings: Vec<BiasFinding>,
) -> Result<BiasMetadata> {
    let profile_canonical = serde_json::to_vec(profile)?;
    Ok(BiasMetadata {
        schema_version: SCHEMA_VERSION,
        dataset_name: ds.name().to_string(),
        dataset_hash: sha256_hex(dataset_bytes),
        profile_hash: sha256_hex(&profile_canonical),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        findings,
        mitigation_history: Vec::new(),
    })
}

/// Re-verify a metadata record against the current dataset bytes.
pub fn verify_metadata(record: &BiasMetadata, dataset_bytes: &[u8]) -> MetadataFreshness {
    if record.dataset_hash == sha256_hex(dataset_bytes) {
        MetadataFreshness::Fresh
    } else {
        MetadataFreshness::Stale
    }
}

/// Sidecar path for a dataset file: `<stem>.biasmeta.json` in `dir`.
pub fn sidecar_path(dir: &Path, dataset_path: &Path) -> PathBuf {
    let stem = dataset_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    dir.join(format!("{stem}.biasmeta.json"))
}

pub fn write_sidecar(path: &Path, record: BiasMetadata) -> Result<()> {
    let mut sidecar = match std::fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or(MetadataSidecar {
            schema_version: SCHEMA_VERSION,
            records: Vec::new(),
        }),
        Err(_) => MetadataSidecar {
            schema_version: SCHEMA_VERSION,
            records: Vec::new(),
        },
    };
    sidecar.upsert(record);
    std::fs::write(path, serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<MetadataSidecar> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// The canonical report document. Deliberately timestamp-free so repeated
/// audits of identical inputs are byte-identical; timestamps live in the
/// metadata sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub dataset: String,
    pub checklist: IdentificationChecklist,
    pub findings: Vec<BiasFinding>,
}

pub fn max_severity(findings: &[BiasFinding]) -> Severity {
    findings
        .iter()
        .map(|f| f.severity)
        .max()
        .unwrap_or(Severity::None)
}

/// Process exit code for an audit: 0 clean, 2 warnings, 3 critical.
pub fn exit_code(findings: &[BiasFinding]) -> i32 {
    match max_severity(findings) {
        Severity::Critical => 3,
        Severity::Warning => 2,
        Severity::None | Severity::Info => 0,
    }
}

fn severity_tag(severity: Severity) -> &'static str {
    match severity {
        Severity::None => "none",
        Severity::Info => "info",
        Severity::Warning => "WARNING",
        Severity::Critical => "CRITICAL",
    }
}

/// Human-readable rendering of the report document.
pub fn render_text(document: &ReportDocument) -> String {
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("bias audit report: {}", document.dataset));
    line("=".repeat(24 + document.dataset.len()));
    line(String::new());
    line("identification checklist".into());
    line("-".repeat(24));
    for section in &document.checklist.sections {
        let status = match (&section.relevant, &section.skip_reason) {
            (false, _) => "skipped by relevance flag".to_string(),
            (true, Some(reason)) => format!("skipped: {reason}"),
            (true, None) => "measured".to_string(),
        };
        line(format!("[{}] {status}", section.bias_type.family_id()));
        for qa in &section.questions {
            line(format!("  Q: {}", qa.question));
            line(format!("  A: {}", qa.answer));
        }
    }
    line(String::new());
    line("findings".into());
    line("-".repeat(8));
    if document.findings.is_empty() {
        line("no bias findings".into());
    }
    for finding in &document.findings {
        let headline = finding
            .headline
            .map(|h| format!(" ({h})"))
            .unwrap_or_default();
        line(format!(
            "[{}] {}{headline}",
            severity_tag(finding.severity),
            finding.id
        ));
        for note in &finding.notes {
            line(format!("  note: {note}"));
        }
        line(format!(
            "  recommended mitigations: {}",
            finding
                .recommended_mitigations
                .iter()
                .map(|r| r.label())
                .collect::<Vec<_>>()
                .join("; ")
        ));
    }
    out
}

/// Flat CSV rendering of the findings (id, severity, headline, notes).
pub fn findings_csv(document: &ReportDocument) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["id", "bias_type", "metric", "severity", "headline", "notes"])?;
    for f in &document.findings {
        wtr.write_record([
            f.id.clone(),
            f.bias_type.family_id().to_string(),
            f.metric_name.clone(),
            severity_tag(f.severity).to_string(),
            f.headline.map(|h| h.to_string()).unwrap_or_default(),
            f.notes.join("; "),
        ])?;
    }
    Ok(String::from_utf8(wtr.into_inner().expect("in-memory writer")).expect("utf8"))
}

/// Write the report document, its text rendering, and the plot-data CSVs.
/// Returns the paths written. The JSON document is canonical; CSVs carry the
/// data behind the density, fairness, importance, and ECDF plots.
pub fn emit_report(
    out_dir: &Path,
    document: &ReportDocument,
    artifacts: &MeasurementArtifacts,
    ds: &Dataset,
    split: Option<&SplitSpec>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut write = |name: String, contents: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, contents)?;
        written.push(path);
        Ok(())
    };

    write(
        "findings.json".into(),
        serde_json::to_string_pretty(document)? + "\n",
    )?;
    write("report.txt".into(), render_text(document))?;
    if !artifacts.density_tables.is_empty() {
        write("density.csv".into(), density_csv(&artifacts.density_tables)?)?;
    }
    if let Some(fairness) = &artifacts.fairness {
        write("fairness.csv".into(), fairness_csv(fairness)?)?;
    }
    if let Some(importance) = &artifacts.importance {
        write("importance.csv".into(), importance_csv(importance)?)?;
    }
    if let Some(report) = &artifacts.completeness {
        write(
            "completeness.csv".into(),
            completeness_csv(report, &artifacts.group_completeness)?,
        )?;
    }
    if let Some(split) = split {
        for col in ds.columns() {
            if col.data.column_type() == ColumnType::Numeric {
                write(
                    format!("ecdf_{}.csv", col.name),
                    ecdf_csv(ds, &col.name, split)?,
                )?;
            }
        }
    }
    Ok(written)
}
