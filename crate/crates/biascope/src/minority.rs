//! Minority-bias measurements: value densities, coverage of the categorical
//! attribute space, and group fairness statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{enumerate_groups, rows_matching, ColumnType, Dataset, GroupKey};
use crate::error::{Error, Result};
use crate::profile::AuditProfile;

/// Hard cap on the coverage combination space. Exhaustive counting past this
/// point would silently dominate the audit's cost.
pub const COVERAGE_SPACE_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEntry {
    pub value: String,
    pub count: usize,
    pub fraction: f64,
}

/// Per-value occurrence fractions for one categorical attribute, computed
/// over non-missing cells. Fractions sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub attribute: String,
    pub non_missing: usize,
    pub entries: Vec<DensityEntry>,
}

impl DensityTable {
    pub fn fraction_of(&self, value: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.value == value)
            .map(|e| e.fraction)
    }
}

/// Density of each observed value of a categorical attribute.
pub fn density(ds: &Dataset, attribute: &str) -> Result<DensityTable> {
    let col = ds.column(attribute)?;
    if col.data.column_type() != ColumnType::Categorical {
        return Err(Error::NonCategoricalAttribute(attribute.to_string()));
    }
    let cells = ds.categorical_cells(attribute)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for cell in cells.iter().flatten() {
        *counts.entry(cell.as_str()).or_insert(0) += 1;
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Error::EmptyColumn(attribute.to_string()));
    }
    let entries = counts
        .into_iter()
        .map(|(value, count)| DensityEntry {
            value: value.to_string(),
            count,
            fraction: count as f64 / total as f64,
        })
        .collect();
    Ok(DensityTable {
        attribute: attribute.to_string(),
        non_missing: total,
        entries,
    })
}

/// A (possibly zero-count) combination of the coverage space with its
/// shortfall against the threshold tau.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageFinding {
    pub group: GroupKey,
    pub count: usize,
    pub deficit: usize,
}

/// Count every combination of the (optionally extended) value spaces of the
/// given categorical attributes and report those with fewer than `tau` rows.
///
/// Findings are sorted by deficit descending, then by group key. Pass
/// `full_listing = true` to also include covered combinations (deficit 0).
/// The combination space is capped at [`COVERAGE_SPACE_CAP`]; use
/// [`coverage_capped`] to set the cap explicitly.
pub fn coverage(
    ds: &Dataset,
    attributes: &[String],
    tau: usize,
    value_extensions: &BTreeMap<String, Vec<String>>,
    full_listing: bool,
) -> Result<Vec<CoverageFinding>> {
    coverage_capped(
        ds,
        attributes,
        tau,
        value_extensions,
        full_listing,
        COVERAGE_SPACE_CAP,
    )
}

pub fn coverage_capped(
    ds: &Dataset,
    attributes: &[String],
    tau: usize,
    value_extensions: &BTreeMap<String, Vec<String>>,
    full_listing: bool,
    cap: u128,
) -> Result<Vec<CoverageFinding>> {
    if tau < 1 {
        return Err(Error::InvalidSpec("coverage tau must be at least 1".into()));
    }
    let mut value_sets: Vec<(String, Vec<String>)> = Vec::with_capacity(attributes.len());
    for attr in attributes {
        let mut values: std::collections::BTreeSet<String> =
            ds.observed_values(attr)?.into_iter().collect();
        if let Some(extra) = value_extensions.get(attr) {
            values.extend(extra.iter().cloned());
        }
        value_sets.push((attr.clone(), values.into_iter().collect()));
    }

    let combinations: u128 = value_sets
        .iter()
        .map(|(_, vs)| vs.len() as u128)
        .product();
    if combinations > cap {
        return Err(Error::SpaceTooLarge { combinations, cap });
    }

    // Counts over observed rows; zero-count combinations come from the
    // product expansion below.
    let observed = enumerate_groups(ds, attributes)?;
    let counts: BTreeMap<GroupKey, usize> = observed.into_iter().collect();

    let mut findings = Vec::new();
    let mut stack: Vec<(String, String)> = Vec::new();
    expand(&value_sets, &mut stack, &mut |terms| {
        let key = GroupKey::from_terms(terms.iter().cloned());
        let count = counts.get(&key).copied().unwrap_or(0);
        let deficit = tau.saturating_sub(count);
        if deficit > 0 || full_listing {
            findings.push(CoverageFinding {
                group: key,
                count,
                deficit,
            });
        }
    });

    findings.sort_by(|a, b| b.deficit.cmp(&a.deficit).then_with(|| a.group.cmp(&b.group)));
    Ok(findings)
}

fn expand(
    value_sets: &[(String, Vec<String>)],
    stack: &mut Vec<(String, String)>,
    emit: &mut impl FnMut(&[(String, String)]),
) {
    match value_sets.split_first() {
        None => {
            if !stack.is_empty() {
                emit(stack);
            }
        }
        Some(((attr, values), rest)) => {
            for v in values {
                stack.push((attr.clone(), v.clone()));
                expand(rest, stack, emit);
                stack.pop();
            }
        }
    }
}

/// Fairness statistics for one unprivileged group against the privileged
/// group. Differences are (unprivileged - privileged); `disparate_impact`
/// is the ratio of favorable-prediction rates and is `None` when the
/// privileged rate is zero. Rate differences that need a conditional rate
/// with an empty denominator are also reported as `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFairness {
    pub group: GroupKey,
    pub group_size: usize,
    pub favorable_rate: f64,
    pub statistical_parity_difference: f64,
    pub disparate_impact: Option<f64>,
    pub equal_opportunity_difference: Option<f64>,
    pub average_odds_difference: Option<f64>,
    pub accuracy_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub privileged_group: GroupKey,
    pub privileged_size: usize,
    pub privileged_favorable_rate: f64,
    /// Rows matching an evaluated group but missing a prediction or outcome
    /// cell, excluded from every rate.
    pub excluded_rows: usize,
    pub per_group: Vec<GroupFairness>,
}

#[derive(Debug, Clone, Copy)]
struct GroupRates {
    n: usize,
    favorable_rate: f64,
    tpr: Option<f64>,
    fpr: Option<f64>,
    accuracy: f64,
    excluded: usize,
}

fn group_rates(
    ds: &Dataset,
    group: &GroupKey,
    prediction: &[Option<u8>],
    outcome: &[Option<u8>],
    favorable: u8,
) -> Result<GroupRates> {
    let rows = rows_matching(ds, group)?;
    let mut n = 0usize;
    let mut excluded = 0usize;
    let mut fav_pred = 0usize;
    let mut correct = 0usize;
    let mut pos = 0usize; // outcome favorable
    let mut tp = 0usize;
    let mut neg = 0usize;
    let mut fp = 0usize;
    for &row in &rows {
        let (p, y) = match (prediction[row], outcome[row]) {
            (Some(p), Some(y)) => (p, y),
            _ => {
                excluded += 1;
                continue;
            }
        };
        n += 1;
        if p == favorable {
            fav_pred += 1;
        }
        if p == y {
            correct += 1;
        }
        if y == favorable {
            pos += 1;
            if p == favorable {
                tp += 1;
            }
        } else {
            neg += 1;
            if p == favorable {
                fp += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyGroup(group.to_string()));
    }
    Ok(GroupRates {
        n,
        favorable_rate: fav_pred as f64 / n as f64,
        tpr: (pos > 0).then(|| tp as f64 / pos as f64),
        fpr: (neg > 0).then(|| fp as f64 / neg as f64),
        accuracy: correct as f64 / n as f64,
        excluded,
    })
}

/// The five group fairness statistics for every unprivileged group in the
/// profile, each against the privileged group.
pub fn fairness(ds: &Dataset, profile: &AuditProfile) -> Result<FairnessReport> {
    let prediction_column = profile
        .prediction_column
        .as_deref()
        .ok_or(Error::MissingPredictionColumn)?;
    let outcome_column = profile.outcome_column.as_deref().ok_or_else(|| {
        Error::ProfileMismatch("fairness metrics need an outcome_column".into())
    })?;
    let prediction = ds.binary_cells(prediction_column)?;
    let outcome = ds.binary_cells(outcome_column)?;
    let favorable = profile.favorable_label;

    let priv_rates = group_rates(ds, &profile.privileged_group, prediction, outcome, favorable)?;
    let mut excluded = priv_rates.excluded;
    let mut per_group = Vec::new();
    for group in &profile.unprivileged_groups {
        let rates = group_rates(ds, group, prediction, outcome, favorable)?;
        excluded += rates.excluded;
        let spd = rates.favorable_rate - priv_rates.favorable_rate;
        let di = if priv_rates.favorable_rate > 0.0 {
            Some(rates.favorable_rate / priv_rates.favorable_rate)
        } else {
            None
        };
        let eod = match (rates.tpr, priv_rates.tpr) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        };
        let aod = match (rates.fpr, priv_rates.fpr, eod) {
            (Some(fa), Some(fb), Some(eod)) => Some(0.5 * ((fa - fb) + eod)),
            _ => None,
        };
        per_group.push(GroupFairness {
            group: group.clone(),
            group_size: rates.n,
            favorable_rate: rates.favorable_rate,
            statistical_parity_difference: spd,
            disparate_impact: di,
            equal_opportunity_difference: eod,
            average_odds_difference: aod,
            accuracy_difference: rates.accuracy - priv_rates.accuracy,
        });
    }
    Ok(FairnessReport {
        privileged_group: profile.privileged_group.clone(),
        privileged_size: priv_rates.n,
        privileged_favorable_rate: priv_rates.favorable_rate,
        excluded_rows: excluded,
        per_group,
    })
}

/// Plot data behind the density table: rows of (key, metric, value).
pub fn density_csv(tables: &[DensityTable]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["key", "metric", "value"])?;
    for table in tables {
        for entry in &table.entries {
            wtr.write_record([
                format!("{}={}", table.attribute, entry.value),
                "density".to_string(),
                entry.fraction.to_string(),
            ])?;
        }
    }
    Ok(String::from_utf8(wtr.into_inner().expect("in-memory writer")).expect("utf8"))
}

/// Plot data behind the fairness report: rows of (key, metric, value).
/// Undefined metrics render as an empty value.
pub fn fairness_csv(report: &FairnessReport) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["key", "metric", "value"])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for g in &report.per_group {
        let key = g.group.to_string();
        wtr.write_record([
            key.clone(),
            "statistical_parity_difference".into(),
            g.statistical_parity_difference.to_string(),
        ])?;
        wtr.write_record([key.clone(), "disparate_impact".into(), fmt(g.disparate_impact)])?;
        wtr.write_record([
            key.clone(),
            "equal_opportunity_difference".into(),
            fmt(g.equal_opportunity_difference),
        ])?;
        wtr.write_record([
            key.clone(),
            "average_odds_difference".into(),
            fmt(g.average_odds_difference),
        ])?;
        wtr.write_record([
            key,
            "accuracy_difference".into(),
            g.accuracy_difference.to_string(),
        ])?;
    }
    Ok(String::from_utf8(wtr.into_inner().expect("in-memory writer")).expect("utf8"))
}
