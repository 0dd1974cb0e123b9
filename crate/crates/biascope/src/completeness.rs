//! Missing-data measurements: completeness ratios at table, attribute,
//! tuple, and per-group granularity, plus the disparity summary that turns
//! per-group ratios into a single reportable gap.

use serde::{Deserialize, Serialize};

use crate::dataset::{rows_matching, Dataset, GroupKey};
use crate::error::{Error, Result};

/// Ratio of non-missing cells to total cells, at three granularities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub table: f64,
    /// (attribute, ratio) in column order.
    pub per_attribute: Vec<(String, f64)>,
    pub per_tuple: Vec<f64>,
}

/// Table, attribute, and tuple completeness in one pass.
pub fn completeness(ds: &Dataset) -> Result<CompletenessReport> {
    let n_rows = ds.n_rows();
    let n_cols = ds.columns().len();
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut per_attribute = Vec::with_capacity(n_cols);
    let mut tuple_observed = vec![0usize; n_rows];
    let mut total_observed = 0usize;
    for col in ds.columns() {
        let mut observed = 0usize;
        for (row, observed_in_row) in tuple_observed.iter_mut().enumerate() {
            if !col.data.is_missing(row) {
                observed += 1;
                *observed_in_row += 1;
            }
        }
        total_observed += observed;
        per_attribute.push((col.name.clone(), observed as f64 / n_rows as f64));
    }
    Ok(CompletenessReport {
        table: total_observed as f64 / (n_rows * n_cols) as f64,
        per_attribute,
        per_tuple: tuple_observed
            .into_iter()
            .map(|o| o as f64 / n_cols as f64)
            .collect(),
    })
}

/// Completeness of one attribute over the rows matching each group.
/// Groups matching no rows report `None` rather than a ratio.
pub fn group_completeness(
    ds: &Dataset,
    groups: &[GroupKey],
    attribute: &str,
) -> Result<Vec<(GroupKey, Option<f64>)>> {
    let col = ds.column(attribute)?;
    let mut out = Vec::with_capacity(groups.len());
    for group in groups {
        let rows = rows_matching(ds, group)?;
        if rows.is_empty() {
            out.push((group.clone(), None));
            continue;
        }
        let observed = rows.iter().filter(|&&r| !col.data.is_missing(r)).count();
        out.push((group.clone(), Some(observed as f64 / rows.len() as f64)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparityFinding {
    pub max_ratio: f64,
    pub min_ratio: f64,
    /// max_ratio - min_ratio.
    pub gap: f64,
    pub threshold: f64,
    pub flagged: bool,
}

/// Largest pairwise gap between defined per-group completeness ratios,
/// flagged when it exceeds the threshold.
pub fn missingness_disparity(ratios: &[f64], threshold: f64) -> Result<DisparityFinding> {
    if ratios.len() < 2 {
        return Err(Error::InsufficientGroups);
    }
    let max_ratio = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let gap = max_ratio - min_ratio;
    Ok(DisparityFinding {
        max_ratio,
        min_ratio,
        gap,
        threshold,
        flagged: gap > threshold,
    })
}

/// Two-column CSV (key, ratio) mirroring the completeness tables.
pub fn completeness_csv(
    report: &CompletenessReport,
    per_group: &[(GroupKey, Option<f64>)],
) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["key", "ratio"])?;
    wtr.write_record(["table".to_string(), report.table.to_string()])?;
    for (attr, ratio) in &report.per_attribute {
        wtr.write_record([format!("attribute:{attr}"), ratio.to_string()])?;
    }
    for (group, ratio) in per_group {
        wtr.write_record([
            format!("group:{group}"),
            ratio.map(|r| r.to_string()).unwrap_or_default(),
        ])?;
    }
    Ok(String::from_utf8(wtr.into_inner().expect("in-memory writer")).expect("utf8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Column, ColumnData};

    /// 50 rows over (ethnicity, sex, biomarker) where the biomarker column is
    /// missing at planted per-group rates: Black 15%, Caucasian 5%,
    /// Asiatic 30%, Female 25%, Male 0%.
    pub(crate) fn completeness_example() -> Dataset {
        let mut ethnicity: Vec<Option<String>> = Vec::new();
        let mut sex: Vec<Option<String>> = Vec::new();
        let mut biomarker: Vec<Option<f64>> = Vec::new();
        let mut push = |eth: &str, sx: &str, missing: bool| {
            ethnicity.push(Some(eth.to_string()));
            sex.push(Some(sx.to_string()));
            biomarker.push(if missing { None } else { Some(1.0) });
        };
        // Black: 20 rows, 3 missing (all missing rows female).
        for i in 0..20 {
            push("Black", if i < 3 { "F" } else { "M" }, i < 3);
        }
        // Caucasian: 20 rows, 1 missing.
        for i in 0..20 {
            push("Caucasian", if i < 1 { "F" } else { "M" }, i < 1);
        }
        // Asiatic: 10 rows, 3 missing.
        for i in 0..10 {
            push("Asiatic", if i < 3 { "F" } else { "M" }, i < 3);
        }
        // Rebalance sex so Female has 28 rows total (7 missing / 21 observed).
        // So far Female rows: 3 + 1 + 3 = 7, all missing. Convert 21 male
        // observed rows to female observed rows.
        let mut converted = 0;
        for (i, cell) in sex.iter_mut().enumerate() {
            if converted == 21 {
                break;
            }
            if cell.as_deref() == Some("M") && biomarker[i].is_some() {
                *cell = Some("F".to_string());
                converted += 1;
            }
        }
        Dataset::new(
            "completeness_example",
            vec![
                Column::new("ethnicity", ColumnData::Categorical(ethnicity)),
                Column::new("sex", ColumnData::Categorical(sex)),
                Column::new("biomarker", ColumnData::Numeric(biomarker)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn completeness_full_data() {
        let ds = Dataset::new(
            "t",
            vec![Column::new(
                "a",
                ColumnData::Numeric(vec![Some(1.0), Some(2.0)]),
            )],
        )
        .unwrap();
        let report = completeness(&ds).unwrap();
        assert_eq!(report.table, 1.0);
        assert!(report.per_attribute.iter().all(|(_, r)| *r == 1.0));
        assert!(report.per_tuple.iter().all(|r| *r == 1.0));
    }

    #[test]
    fn completeness_two_by_two_one_missing() {
        let ds = Dataset::new(
            "t",
            vec![
                Column::new("a", ColumnData::Numeric(vec![Some(1.0), None])),
                Column::new("b", ColumnData::Numeric(vec![Some(1.0), Some(2.0)])),
            ],
        )
        .unwrap();
        let report = completeness(&ds).unwrap();
        assert_eq!(report.table, 0.75);
        assert_eq!(report.per_attribute[0].1, 0.5);
        assert_eq!(report.per_attribute[1].1, 1.0);
        assert_eq!(report.per_tuple, vec![1.0, 0.5]);
    }

    #[test]
    fn completeness_empty_dataset_errors() {
        let ds = Dataset::new("t", vec![]).unwrap();
        assert!(matches!(completeness(&ds), Err(Error::EmptyDataset)));
    }

    #[test]
    fn table_equals_weighted_tuple_and_attribute_means() {
        let ds = completeness_example();
        let report = completeness(&ds).unwrap();
        let tuple_mean: f64 =
            report.per_tuple.iter().sum::<f64>() / report.per_tuple.len() as f64;
        let attr_mean: f64 = report.per_attribute.iter().map(|(_, r)| r).sum::<f64>()
            / report.per_attribute.len() as f64;
        assert!((report.table - tuple_mean).abs() < 1e-12);
        assert!((report.table - attr_mean).abs() < 1e-12);
    }

    #[test]
    fn group_completeness_reproduces_worked_table() {
        let ds = completeness_example();
        let groups = vec![
            GroupKey::single("ethnicity", "Black"),
            GroupKey::single("ethnicity", "Caucasian"),
            GroupKey::single("ethnicity", "Asiatic"),
            GroupKey::single("sex", "F"),
            GroupKey::single("sex", "M"),
        ];
        let ratios = group_completeness(&ds, &groups, "biomarker").unwrap();
        let values: Vec<f64> = ratios.iter().map(|(_, r)| r.unwrap()).collect();
        assert_eq!(values, vec![0.85, 0.95, 0.70, 0.75, 1.00]);
    }

    #[test]
    fn group_completeness_empty_group_is_undefined() {
        let ds = completeness_example();
        let groups = vec![GroupKey::single("sex", "X")];
        let ratios = group_completeness(&ds, &groups, "biomarker").unwrap();
        assert_eq!(ratios[0].1, None);
    }

    #[test]
    fn disparity_from_worked_table() {
        let finding = missingness_disparity(&[0.85, 0.95, 0.70, 0.75, 1.00], 0.10).unwrap();
        assert!((finding.gap - 0.30).abs() < 1e-12);
        assert!(finding.flagged);
    }

    #[test]
    fn disparity_edges() {
        let equal = missingness_disparity(&[0.9, 0.9, 0.9], 0.10).unwrap();
        assert_eq!(equal.gap, 0.0);
        assert!(!equal.flagged);

        let near = missingness_disparity(&[0.95, 0.90], 0.10).unwrap();
        assert!((near.gap - 0.05).abs() < 1e-12);
        assert!(!near.flagged);

        assert!(matches!(
            missingness_disparity(&[1.0], 0.10),
            Err(Error::InsufficientGroups)
        ));
    }

    #[test]
    fn group_completeness_permutation_invariant_and_monotone() {
        let base = completeness_example();
        let groups = vec![GroupKey::single("ethnicity", "Asiatic")];
        let before = group_completeness(&base, &groups, "biomarker").unwrap()[0]
            .1
            .unwrap();

        // Reversing the rows leaves every group ratio unchanged.
        let reversed_rows: Vec<usize> = (0..base.n_rows()).rev().collect();
        let reversed = base.filter_rows(&reversed_rows).unwrap();
        let after_reverse = group_completeness(&reversed, &groups, "biomarker").unwrap()[0]
            .1
            .unwrap();
        assert_eq!(before, after_reverse);

        // Adding a fully observed row to a group cannot decrease its ratio.
        let mut columns = base.columns().to_vec();
        if let ColumnData::Categorical(v) = &mut columns[0].data {
            v.push(Some("Asiatic".into()));
        }
        if let ColumnData::Categorical(v) = &mut columns[1].data {
            v.push(Some("M".into()));
        }
        if let ColumnData::Numeric(v) = &mut columns[2].data {
            v.push(Some(2.0));
        }
        let extended = Dataset::new("t", columns).unwrap();
        let after = group_completeness(&extended, &groups, "biomarker").unwrap()[0]
            .1
            .unwrap();
        assert!(after >= before);
    }
}
