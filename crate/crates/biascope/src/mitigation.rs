//! Pre-processing mitigations: reweighing, coverage repair orders, missing
//! value deletion and imputation, and cross-validation split generation.
//!
//! Every mitigation is a deterministic function of (dataset, parameters,
//! seed) and produces a new value; the input dataset is never modified.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnData, Dataset, GroupKey};
use crate::error::{Error, Result};
use crate::minority::CoverageFinding;
use crate::selection::SplitSpec;

/// Per-row weights from reweighing. Weights sum to the row count, so the
/// weighted dataset has the same total mass as the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    /// Rows left at weight 1 because the group or outcome cell was missing.
    pub unweighted_rows: Vec<usize>,
    /// The weight assigned to each (group value, label) cell.
    pub cells: Vec<CellWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellWeight {
    pub group_value: String,
    pub label: u8,
    pub count: usize,
    pub weight: f64,
}

/// Weight each (group, label) cell by `n(g) n(y) / (n n(g, y))`, which makes
/// group and label statistically independent under the weights: the weighted
/// favorable-outcome rate is identical across groups.
///
/// Every observed (group value, label value) cell must be non-empty,
/// otherwise its weight is undefined and the mitigation is aborted.
pub fn reweigh(ds: &Dataset, protected: &str, outcome: &str) -> Result<WeightVector> {
    let groups = ds.categorical_cells(protected)?;
    let labels = ds.binary_cells(outcome)?;

    let mut n = 0usize;
    let mut group_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut label_counts: BTreeMap<u8, usize> = BTreeMap::new();
    let mut cell_counts: BTreeMap<(&str, u8), usize> = BTreeMap::new();
    for row in 0..ds.n_rows() {
        if let (Some(g), Some(y)) = (groups[row].as_deref(), labels[row]) {
            n += 1;
            *group_counts.entry(g).or_insert(0) += 1;
            *label_counts.entry(y).or_insert(0) += 1;
            *cell_counts.entry((g, y)).or_insert(0) += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyColumn(protected.to_string()));
    }

    let mut cell_weights: BTreeMap<(&str, u8), f64> = BTreeMap::new();
    let mut cells = Vec::new();
    for (&g, &ng) in &group_counts {
        for (&y, &ny) in &label_counts {
            let Some(&ngy) = cell_counts.get(&(g, y)) else {
                return Err(Error::EmptyCell {
                    group: format!("{protected}={g}"),
                    label: y.to_string(),
                });
            };
            let weight = (ng as f64 * ny as f64) / (n as f64 * ngy as f64);
            cell_weights.insert((g, y), weight);
            cells.push(CellWeight {
                group_value: g.to_string(),
                label: y,
                count: ngy,
                weight,
            });
        }
    }

    let mut weights = Vec::with_capacity(ds.n_rows());
    let mut unweighted_rows = Vec::new();
    for row in 0..ds.n_rows() {
        match (groups[row].as_deref(), labels[row]) {
            (Some(g), Some(y)) => weights.push(cell_weights[&(g, y)]),
            _ => {
                weights.push(1.0);
                unweighted_rows.push(row);
            }
        }
    }
    Ok(WeightVector {
        weights,
        unweighted_rows,
        cells,
    })
}

/// Favorable-outcome rate per group value, optionally weighted. Rows with a
/// missing group or outcome cell are ignored.
pub fn favorable_outcome_rates(
    ds: &Dataset,
    protected: &str,
    outcome: &str,
    favorable: u8,
    weights: Option<&[f64]>,
) -> Result<Vec<(String, f64)>> {
    let groups = ds.categorical_cells(protected)?;
    let labels = ds.binary_cells(outcome)?;
    let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
    let mut favorable_mass: BTreeMap<&str, f64> = BTreeMap::new();
    for row in 0..ds.n_rows() {
        if let (Some(g), Some(y)) = (groups[row].as_deref(), labels[row]) {
            let w = weights.map_or(1.0, |w| w[row]);
            *mass.entry(g).or_insert(0.0) += w;
            if y == favorable {
                *favorable_mass.entry(g).or_insert(0.0) += w;
            }
        }
    }
    Ok(mass
        .into_iter()
        .map(|(g, total)| {
            let fav = favorable_mass.get(g).copied().unwrap_or(0.0);
            (g.to_string(), fav / total)
        })
        .collect())
}

/// Emit the dataset as CSV with the weight vector appended as a final
/// `weight` column.
pub fn write_weighted_csv<W: std::io::Write>(
    ds: &Dataset,
    weights: &[f64],
    writer: W,
) -> Result<()> {
    if weights.len() != ds.n_rows() {
        return Err(Error::InvalidSpec(format!(
            "{} weights for {} rows",
            weights.len(),
            ds.n_rows()
        )));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.columns().iter().map(|c| c.name.as_str()).collect();
    header.push("weight");
    wtr.write_record(&header)?;
    for (row, weight) in weights.iter().enumerate() {
        let mut record: Vec<String> = ds.columns().iter().map(|c| c.data.render(row)).collect();
        record.push(weight.to_string());
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

/// What to collect to cover every combination: the positive deficits from a
/// coverage run. Never proposes deleting rows.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RepairOrder {
    pub additions: Vec<(GroupKey, usize)>,
}

impl RepairOrder {
    pub fn total_rows(&self) -> usize {
        self.additions.iter().map(|(_, n)| n).sum()
    }
}

/// The least set of additions that brings every combination up to tau.
pub fn repair_order(findings: &[CoverageFinding]) -> RepairOrder {
    RepairOrder {
        additions: findings
            .iter()
            .filter(|f| f.deficit > 0)
            .map(|f| (f.group.clone(), f.deficit))
            .collect(),
    }
}

/// Materialize a repair order as synthetic rows appended to the dataset:
/// the group attributes are set and every other cell is missing. Off by
/// default in the pipeline; fabricated rows are for testing coverage
/// closure, not for analysis.
pub fn materialize_repairs(ds: &Dataset, order: &RepairOrder) -> Result<Dataset> {
    let extra: usize = order.total_rows();
    let mut columns = ds.columns().to_vec();
    for col in columns.iter_mut() {
        let values: Vec<Option<String>> = order
            .additions
            .iter()
            .flat_map(|(group, count)| {
                std::iter::repeat_n(group.value(&col.name).map(str::to_string), *count)
            })
            .collect();
        match &mut col.data {
            ColumnData::Categorical(v) => v.extend(values),
            ColumnData::Numeric(v) => v.extend(std::iter::repeat_n(None, extra)),
            ColumnData::BinaryLabel(v) => v.extend(std::iter::repeat_n(None, extra)),
        }
    }
    Dataset::new(ds.name().to_string(), columns)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationStrategy {
    Deletion,
    Mean,
    Median,
    Mode,
    ModelBased,
}

fn default_k() -> usize {
    5
}

/// Which strategy to apply to which attributes. Mean/median apply to numeric
/// attributes, mode to categorical ones; model-based fills any kind from the
/// k nearest complete rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputationSpec {
    pub strategy: ImputationStrategy,
    pub scope: Vec<String>,
    /// Neighbour count for the model-based strategy.
    #[serde(default = "default_k")]
    pub k: usize,
}

/// One filled cell; the old value was always the missing marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilledCell {
    pub row: usize,
    pub attribute: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChangeLog {
    pub filled: Vec<FilledCell>,
    pub removed_rows: Vec<usize>,
}

impl ChangeLog {
    pub fn len(&self) -> usize {
        self.filled.len() + self.removed_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filled.is_empty() && self.removed_rows.is_empty()
    }
}

fn median_of(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Distance between two rows over the given attributes: Hamming on
/// categorical and binary cells, range-scaled absolute difference on numeric
/// cells. Attributes missing in either row contribute the maximum 1.
fn row_distance(
    ds: &Dataset,
    ranges: &BTreeMap<String, f64>,
    a: usize,
    b: usize,
    skip: &str,
) -> f64 {
    let mut dist = 0.0;
    for col in ds.columns() {
        if col.name == skip {
            continue;
        }
        let d = match &col.data {
            ColumnData::Categorical(v) => match (&v[a], &v[b]) {
                (Some(x), Some(y)) => f64::from(u8::from(x != y)),
                _ => 1.0,
            },
            ColumnData::BinaryLabel(v) => match (v[a], v[b]) {
                (Some(x), Some(y)) => f64::from(u8::from(x != y)),
                _ => 1.0,
            },
            ColumnData::Numeric(v) => match (v[a], v[b]) {
                (Some(x), Some(y)) => {
                    let range = ranges.get(&col.name).copied().unwrap_or(0.0);
                    if range > 0.0 {
                        ((x - y) / range).abs()
                    } else {
                        0.0
                    }
                }
                _ => 1.0,
            },
        };
        dist += d;
    }
    dist
}

/// Apply an imputation strategy to the scope attributes, producing a new
/// dataset and a change log. Completeness of the scope afterwards is 1
/// (for deletion, over the surviving rows). Non-missing cells are never
/// altered.
pub fn impute(ds: &Dataset, spec: &ImputationSpec) -> Result<(Dataset, ChangeLog)> {
    for attr in &spec.scope {
        ds.column(attr)?;
    }
    let mut log = ChangeLog::default();

    if spec.strategy == ImputationStrategy::Deletion {
        let keep: Vec<usize> = (0..ds.n_rows())
            .filter(|&row| {
                let removed = spec
                    .scope
                    .iter()
                    .any(|attr| ds.column(attr).expect("checked").data.is_missing(row));
                if removed {
                    log.removed_rows.push(row);
                }
                !removed
            })
            .collect();
        return Ok((ds.filter_rows(&keep)?, log));
    }

    let mut columns = ds.columns().to_vec();

    // Donor pool and numeric ranges for the model-based strategy.
    let complete_rows: Vec<usize> = (0..ds.n_rows()).filter(|&r| ds.row_complete(r)).collect();
    let mut ranges: BTreeMap<String, f64> = BTreeMap::new();
    for col in ds.columns() {
        if let ColumnData::Numeric(v) = &col.data {
            let min = v.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
            let max = v.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
            if min.is_finite() && max.is_finite() {
                ranges.insert(col.name.clone(), max - min);
            }
        }
    }

    for attr in &spec.scope {
        let col_idx = columns.iter().position(|c| &c.name == attr).expect("checked");
        let missing_rows: Vec<usize> = (0..ds.n_rows())
            .filter(|&r| columns[col_idx].data.is_missing(r))
            .collect();
        if missing_rows.is_empty() {
            continue;
        }
        match (spec.strategy, &mut columns[col_idx].data) {
            (ImputationStrategy::Mean, ColumnData::Numeric(v)) => {
                let observed: Vec<f64> = v.iter().flatten().cloned().collect();
                if observed.is_empty() {
                    return Err(Error::AllMissingAttribute(attr.clone()));
                }
                let fill = observed.iter().sum::<f64>() / observed.len() as f64;
                for row in missing_rows {
                    v[row] = Some(fill);
                    log.filled.push(FilledCell {
                        row,
                        attribute: attr.clone(),
                        value: fill.to_string(),
                    });
                }
            }
            (ImputationStrategy::Median, ColumnData::Numeric(v)) => {
                let mut observed: Vec<f64> = v.iter().flatten().cloned().collect();
                if observed.is_empty() {
                    return Err(Error::AllMissingAttribute(attr.clone()));
                }
                observed.sort_by(f64::total_cmp);
                let fill = median_of(&observed);
                for row in missing_rows {
                    v[row] = Some(fill);
                    log.filled.push(FilledCell {
                        row,
                        attribute: attr.clone(),
                        value: fill.to_string(),
                    });
                }
            }
            (ImputationStrategy::Mode, ColumnData::Categorical(v)) => {
                let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
                for cell in v.iter().flatten() {
                    *counts.entry(cell).or_insert(0) += 1;
                }
                // Ties break to the lexicographically smallest value.
                let fill = counts
                    .iter()
                    .max_by(|(ka, va), (kb, vb)| va.cmp(vb).then(kb.cmp(ka)))
                    .map(|(k, _)| (*k).clone())
                    .ok_or_else(|| Error::AllMissingAttribute(attr.clone()))?;
                for row in missing_rows {
                    v[row] = Some(fill.clone());
                    log.filled.push(FilledCell {
                        row,
                        attribute: attr.clone(),
                        value: fill.clone(),
                    });
                }
            }
            (ImputationStrategy::ModelBased, _) => {
                if complete_rows.len() < spec.k {
                    return Err(Error::InsufficientDonors {
                        needed: spec.k,
                        got: complete_rows.len(),
                    });
                }
                for row in missing_rows {
                    let mut donors: Vec<(f64, usize)> = complete_rows
                        .iter()
                        .map(|&d| (row_distance(ds, &ranges, row, d, attr), d))
                        .collect();
                    donors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    let nearest = &donors[..spec.k];
                    let fill = match &ds.column(attr)?.data {
                        ColumnData::Numeric(v) => {
                            let mean = nearest.iter().map(|&(_, d)| v[d].unwrap()).sum::<f64>()
                                / spec.k as f64;
                            mean.to_string()
                        }
                        ColumnData::Categorical(v) => {
                            let mut votes: BTreeMap<&String, usize> = BTreeMap::new();
                            for &(_, d) in nearest {
                                *votes.entry(v[d].as_ref().unwrap()).or_insert(0) += 1;
                            }
                            votes
                                .iter()
                                .max_by(|(ka, va), (kb, vb)| va.cmp(vb).then(kb.cmp(ka)))
                                .map(|(k, _)| (*k).clone())
                                .expect("nonempty votes")
                        }
                        ColumnData::BinaryLabel(v) => {
                            let ones: usize = nearest
                                .iter()
                                .filter(|&&(_, d)| v[d] == Some(1))
                                .count();
                            // Majority vote; ties fall to 0.
                            u8::from(2 * ones > spec.k).to_string()
                        }
                    };
                    match &mut columns[col_idx].data {
                        ColumnData::Numeric(v) => v[row] = Some(fill.parse().expect("rendered")),
                        ColumnData::Categorical(v) => v[row] = Some(fill.clone()),
                        ColumnData::BinaryLabel(v) => v[row] = Some(fill.parse().expect("rendered")),
                    }
                    log.filled.push(FilledCell {
                        row,
                        attribute: attr.clone(),
                        value: fill,
                    });
                }
            }
            (strategy, data) => {
                return Err(Error::InvalidPlan(format!(
                    "strategy {strategy:?} cannot apply to {} column {attr}",
                    data.column_type()
                )));
            }
        }
    }

    Ok((Dataset::new(ds.name().to_string(), columns)?, log))
}

/// K-fold splits plus the values that were too small to stratify.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldSplits {
    pub splits: Vec<SplitSpec>,
    /// Stratum values with fewer rows than K, placed unstratified.
    pub understratified: Vec<String>,
}

/// Allocate `extra` single rows to the folds with the smallest totals,
/// keeping the overall fold-size spread at one row or less.
fn allocate_extras(fold_sizes: &mut [usize], base: usize, extra: usize) -> Vec<usize> {
    let k = fold_sizes.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&f| (fold_sizes[f], f));
    let mut allocation = vec![base; k];
    for &f in order.iter().take(extra) {
        allocation[f] += 1;
    }
    for (f, &a) in allocation.iter().enumerate() {
        fold_sizes[f] += a;
    }
    allocation
}

/// Seeded K-fold split generation, optionally stratified and repeated.
///
/// Each repeat shuffles with the derived seed `seed + repeat` and cuts K
/// folds with sizes differing by at most one row; every fold serves as the
/// test set once. Stratification keeps each value's count per fold within
/// one row of even; values with fewer rows than K fall back to unstratified
/// placement and are reported. `k = n` is leave-one-out.
pub fn kfold(
    ds: &Dataset,
    k: usize,
    repeats: usize,
    stratify_on: Option<&str>,
    seed: u64,
) -> Result<KFoldSplits> {
    let n = ds.n_rows();
    if k < 2 || k > n {
        return Err(Error::InvalidK { k, n_rows: n });
    }
    if repeats < 1 {
        return Err(Error::InvalidSpec("repeats must be at least 1".into()));
    }
    let strata_cells = match stratify_on {
        Some(attr) => Some(ds.categorical_cells(attr)?),
        None => None,
    };

    let mut understratified: Vec<String> = Vec::new();
    let mut splits = Vec::with_capacity(k * repeats);
    for repeat in 0..repeats {
        let mut rng = ChaCha12Rng::seed_from_u64(seed + repeat as u64);
        let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
        let mut fold_sizes = vec![0usize; k];

        // Strata in deterministic order; rows the stratifier cannot place
        // (missing value or an understratified value) pool at the end.
        let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut leftover: Vec<usize> = Vec::new();
        match strata_cells {
            Some(cells) => {
                for (row, cell) in cells.iter().enumerate() {
                    match cell {
                        Some(v) => strata.entry(v.clone()).or_default().push(row),
                        None => leftover.push(row),
                    }
                }
                let small: Vec<String> = strata
                    .iter()
                    .filter(|(_, rows)| rows.len() < k)
                    .map(|(v, _)| v.clone())
                    .collect();
                for value in small {
                    let rows = strata.remove(&value).expect("present");
                    leftover.extend(rows);
                    if repeat == 0 {
                        understratified.push(value);
                    }
                }
                leftover.sort_unstable();
            }
            None => leftover = (0..n).collect(),
        }

        let place = |rows: &mut Vec<usize>,
                         folds: &mut Vec<Vec<usize>>,
                         fold_sizes: &mut Vec<usize>,
                         rng: &mut ChaCha12Rng| {
            rows.shuffle(rng);
            let base = rows.len() / k;
            let extra = rows.len() % k;
            let allocation = allocate_extras(fold_sizes, base, extra);
            let mut cursor = 0;
            for (fold, &take) in allocation.iter().enumerate() {
                folds[fold].extend(&rows[cursor..cursor + take]);
                cursor += take;
            }
        };

        for rows in strata.values() {
            let mut rows = rows.clone();
            place(&mut rows, &mut folds, &mut fold_sizes, &mut rng);
        }
        if !leftover.is_empty() {
            place(&mut leftover, &mut folds, &mut fold_sizes, &mut rng);
        }

        for test_fold in 0..k {
            let mut test = folds[test_fold].clone();
            test.sort_unstable();
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(f, _)| *f != test_fold)
                .flat_map(|(_, rows)| rows.iter().copied())
                .collect();
            train.sort_unstable();
            splits.push(SplitSpec::new(train, test));
        }
    }
    Ok(KFoldSplits {
        splits,
        understratified,
    })
}

/// Seeded two-thirds/one-third holdout: ceil(2n/3) train rows, the rest
/// test.
pub fn holdout(ds: &Dataset, seed: u64) -> Result<SplitSpec> {
    let n = ds.n_rows();
    if n < 3 {
        return Err(Error::DatasetTooSmall { needed: 3, got: n });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let train_size = (2 * n).div_ceil(3);
    let mut train = rows[..train_size].to_vec();
    let mut test = rows[train_size..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec::new(train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Column;
    use crate::minority::coverage;

    fn reweigh_example() -> Dataset {
        // 10 rows: 8 M (6 favorable), 2 F (1 favorable).
        let mut sex = Vec::new();
        let mut y = Vec::new();
        for i in 0..8 {
            sex.push(Some("M".to_string()));
            y.push(Some(u8::from(i < 6)));
        }
        for i in 0..2 {
            sex.push(Some("F".to_string()));
            y.push(Some(u8::from(i < 1)));
        }
        Dataset::new(
            "t",
            vec![
                Column::new("sex", ColumnData::Categorical(sex)),
                Column::new("y", ColumnData::BinaryLabel(y)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn reweigh_hand_arithmetic() {
        let ds = reweigh_example();
        let wv = reweigh(&ds, "sex", "y").unwrap();
        let weight_of = |g: &str, y: u8| {
            wv.cells
                .iter()
                .find(|c| c.group_value == g && c.label == y)
                .unwrap()
                .weight
        };
        assert!((weight_of("M", 1) - 56.0 / 60.0).abs() < 1e-12);
        assert!((weight_of("F", 1) - 1.4).abs() < 1e-12);
        assert!((weight_of("M", 0) - 1.2).abs() < 1e-12);
        assert!((weight_of("F", 0) - 0.6).abs() < 1e-12);
        let sum: f64 = wv.weights.iter().sum();
        assert!((sum - 10.0).abs() < 1e-9);
    }

    #[test]
    fn reweigh_balanced_dataset_gives_unit_weights() {
        // Independent group and label: 2x2 balanced.
        let sex: Vec<Option<String>> = ["M", "M", "F", "F", "M", "M", "F", "F"]
            .iter()
            .map(|s| Some(s.to_string()))
            .collect();
        let y: Vec<Option<u8>> = [1, 0, 1, 0, 1, 0, 1, 0].iter().map(|&v| Some(v)).collect();
        let ds = Dataset::new(
            "t",
            vec![
                Column::new("sex", ColumnData::Categorical(sex)),
                Column::new("y", ColumnData::BinaryLabel(y)),
            ],
        )
        .unwrap();
        let wv = reweigh(&ds, "sex", "y").unwrap();
        assert!(wv.weights.iter().all(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn reweigh_equalizes_weighted_rates() {
        let ds = reweigh_example();
        let wv = reweigh(&ds, "sex", "y").unwrap();
        let rates = favorable_outcome_rates(&ds, "sex", "y", 1, Some(&wv.weights)).unwrap();
        let (min, max) = rates
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, r)| {
                (lo.min(*r), hi.max(*r))
            });
        assert!((max - min).abs() < 1e-12);
    }

    #[test]
    fn reweigh_empty_cell_aborts() {
        // All F rows favorable: cell (F, 0) is empty.
        let sex: Vec<Option<String>> = ["M", "M", "F", "F"]
            .iter()
            .map(|s| Some(s.to_string()))
            .collect();
        let y: Vec<Option<u8>> = [1, 0, 1, 1].iter().map(|&v| Some(v)).collect();
        let ds = Dataset::new(
            "t",
            vec![
                Column::new("sex", ColumnData::Categorical(sex)),
                Column::new("y", ColumnData::BinaryLabel(y)),
            ],
        )
        .unwrap();
        assert!(matches!(
            reweigh(&ds, "sex", "y"),
            Err(Error::EmptyCell { .. })
        ));
    }

    #[test]
    fn reweigh_missing_rows_get_unit_weight() {
        let sex: Vec<Option<String>> = vec![
            Some("M".into()),
            None,
            Some("F".into()),
            Some("M".into()),
            Some("F".into()),
        ];
        let y: Vec<Option<u8>> = vec![Some(1), Some(1), Some(0), Some(0), Some(1)];
        let ds = Dataset::new(
            "t",
            vec![
                Column::new("sex", ColumnData::Categorical(sex)),
                Column::new("y", ColumnData::BinaryLabel(y)),
            ],
        )
        .unwrap();
        let wv = reweigh(&ds, "sex", "y").unwrap();
        assert_eq!(wv.unweighted_rows, vec![1]);
        assert_eq!(wv.weights[1], 1.0);
    }

    #[test]
    fn repair_order_from_findings() {
        assert!(repair_order(&[]).additions.is_empty());
        let findings = vec![
            CoverageFinding {
                group: GroupKey::single("a", "x"),
                count: 0,
                deficit: 5,
            },
            CoverageFinding {
                group: GroupKey::single("a", "y"),
                count: 2,
                deficit: 3,
            },
            CoverageFinding {
                group: GroupKey::single("a", "z"),
                count: 5,
                deficit: 0,
            },
        ];
        let order = repair_order(&findings);
        assert_eq!(order.total_rows(), 8);
        assert_eq!(order.additions.len(), 2);
        assert_eq!(order.additions[0].1, 5);
        assert_eq!(order.additions[1].1, 3);
    }

    #[test]
    fn materialized_repairs_close_the_coverage_gap() {
        let ds = crate::dataset::load_csv_reader(
            "t",
            "sex,ethnicity\nF,Black\nF,Black\nM,Caucasian\nM,Asiatic\n".as_bytes(),
            &[
                ("sex".to_string(), crate::dataset::ColumnType::Categorical),
                ("ethnicity".to_string(), crate::dataset::ColumnType::Categorical),
            ],
            &crate::dataset::default_missing_tokens(),
        )
        .unwrap();
        let attrs = vec!["sex".to_string(), "ethnicity".to_string()];
        let findings = coverage(&ds, &attrs, 2, &BTreeMap::new(), false).unwrap();
        let order = repair_order(&findings);
        let repaired = materialize_repairs(&ds, &order).unwrap();
        let after = coverage(&repaired, &attrs, 2, &BTreeMap::new(), false).unwrap();
        assert!(after.is_empty());
    }

    fn missing_numeric_dataset() -> Dataset {
        Dataset::new(
            "t",
            vec![Column::new(
                "x",
                ColumnData::Numeric(vec![Some(1.0), Some(2.0), None, Some(3.0)]),
            )],
        )
        .unwrap()
    }

    #[test]
    fn impute_mean_fills_arithmetic_mean() {
        let ds = missing_numeric_dataset();
        let spec = ImputationSpec {
            strategy: ImputationStrategy::Mean,
            scope: vec!["x".into()],
            k: 5,
        };
        let (out, log) = impute(&ds, &spec).unwrap();
        assert_eq!(out.numeric_cells("x").unwrap()[2], Some(2.0));
        assert_eq!(log.filled.len(), 1);
        assert_eq!(log.filled[0].row, 2);
    }

    #[test]
    fn impute_median_and_mode() {
        let ds = missing_numeric_dataset();
        let spec = ImputationSpec {
            strategy: ImputationStrategy::Median,
            scope: vec!["x".into()],
            k: 5,
        };
        let (out, _) = impute(&ds, &spec).unwrap();
        assert_eq!(out.numeric_cells("x").unwrap()[2], Some(2.0));

        let cat = Dataset::new(
            "t",
            vec![Column::new(
                "c",
                ColumnData::Categorical(vec![
                    Some("A".into()),
                    Some("A".into()),
                    Some("B".into()),
                    None,
                ]),
            )],
        )
        .unwrap();
        let spec = ImputationSpec {
            strategy: ImputationStrategy::Mode,
            scope: vec!["c".into()],
            k: 5,
        };
        let (out, log) = impute(&cat, &spec).unwrap();
        assert_eq!(out.categorical_cells("c").unwrap()[3], Some("A".to_string()));
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn impute_no_missing_is_identity() {
        let ds = Dataset::new(
            "t",
            vec![Column::new("x", ColumnData::Numeric(vec![Some(1.0), Some(2.0)]))],
        )
        .unwrap();
        let spec = ImputationSpec {
            strategy: ImputationStrategy::Mean,
            scope: vec!["x".into()],
            k: 5,
        };
        let (out, log) = impute(&ds, &spec).unwrap();
        assert_eq!(out, ds);
        assert!(log.is_empty());
    }

    #[test]
    fn impute_deletion_drops_rows_with_scope_missing() {
        let ds = Dataset::new(
            "t",
            vec![
                Column::new("x", ColumnData::Numeric(vec![Some(1.0), None, Some(3.0)])),
                Column::new(
                    "c",
                    ColumnData::Categorical(vec![None, Some("a".into()), Some("b".into())]),
                ),
            ],
        )
        .unwrap();
        let spec = ImputationSpec {
            strategy: ImputationStrategy::Deletion,
            scope: vec!["x".into()],
            k: 5,
        };
        let (out, log) = impute(&ds, &spec).unwrap();
        assert_eq!(out.n_rows(), 2);
        assert_eq!(log.removed_rows, vec![1]);
        // The surviving rows are untouched, including their missing cells.
        assert_eq!(out.categorical_cells("c").unwrap()[0], None);
    }

    #[test]
    fn impute_strategy_type_mismatch() {
        let ds = missing_numeric_dataset();
        let spec = ImputationSpec {
            strategy: ImputationStrategy::Mode,
            scope: vec!["x".into()],
            k: 5,
        };
        assert!(matches!(impute(&ds, &spec), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn impute_all_missing_errors() {
        let ds = Dataset::new(
            "t",
            vec![Column::new("x", ColumnData::Numeric(vec![None, None]))],
        )
        .unwrap();
        let spec = ImputationSpec {
            strategy: ImputationStrategy::Mean,
            scope: vec!["x".into()],
            k: 5,
        };
        assert!(matches!(
            impute(&ds, &spec),
            Err(Error::AllMissingAttribute(_))
        ));
    }

    fn knn_dataset() -> Dataset {
        Dataset::new(
            "t",
            vec![
                Column::new(
                    "g",
                    ColumnData::Categorical(vec![
                        Some("a".into()),
                        Some("a".into()),
                        Some("a".into()),
                        Some("b".into()),
                        Some("b".into()),
                        Some("a".into()),
                    ]),
                ),
                Column::new(
                    "x",
                    ColumnData::Numeric(vec![
                        Some(1.0),
                        Some(1.1),
                        Some(0.9),
                        Some(10.0),
                        Some(10.2),
                        None,
                    ]),
                ),
            ],
        )
        .unwrap()
    }

    #[test]
    fn impute_model_based_uses_nearest_donors() {
        let ds = knn_dataset();
        let spec = ImputationSpec {
            strategy: ImputationStrategy::ModelBased,
            scope: vec!["x".into()],
            k: 3,
        };
        let (out, log) = impute(&ds, &spec).unwrap();
        // Row 5 is in group "a"; its three nearest complete rows are the
        // other "a" rows, mean (1.0 + 1.1 + 0.9) / 3 = 1.0.
        assert_eq!(out.numeric_cells("x").unwrap()[5], Some(1.0));
        assert_eq!(log.filled.len(), 1);
    }

    #[test]
    fn impute_model_based_needs_donors() {
        let ds = knn_dataset();
        let spec = ImputationSpec {
            strategy: ImputationStrategy::ModelBased,
            scope: vec!["x".into()],
            k: 50,
        };
        assert!(matches!(
            impute(&ds, &spec),
            Err(Error::InsufficientDonors { .. })
        ));
    }

    fn kfold_dataset(n: usize) -> Dataset {
        let values: Vec<Option<String>> = (0..n)
            .map(|i| Some(if i % 3 == 0 { "a" } else { "b" }.to_string()))
            .collect();
        Dataset::new(
            "t",
            vec![Column::new("g", ColumnData::Categorical(values))],
        )
        .unwrap()
    }

    fn assert_partition(splits: &[SplitSpec], n: usize) {
        for split in splits {
            split.validate(n).unwrap();
            let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        let mut covered: Vec<usize> = splits.iter().flat_map(|s| s.test.clone()).collect();
        covered.sort_unstable();
        assert_eq!(covered, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn kfold_partitions_rows() {
        let ds = kfold_dataset(10);
        let folds = kfold(&ds, 5, 1, None, 7).unwrap();
        assert_eq!(folds.splits.len(), 5);
        assert_partition(&folds.splits, 10);
        assert!(folds.splits.iter().all(|s| s.test.len() == 2));
    }

    #[test]
    fn kfold_leave_one_out() {
        let ds = kfold_dataset(6);
        let folds = kfold(&ds, 6, 1, None, 7).unwrap();
        assert_eq!(folds.splits.len(), 6);
        assert!(folds.splits.iter().all(|s| s.test.len() == 1));
        assert!(folds.splits.iter().all(|s| s.train.len() == 5));
    }

    #[test]
    fn kfold_stratified_counts_within_one() {
        let ds = kfold_dataset(103);
        let folds = kfold(&ds, 5, 1, Some("g"), 42).unwrap();
        assert_partition(&folds.splits, 103);
        for value in ["a", "b"] {
            let cells = ds.categorical_cells("g").unwrap();
            let counts: Vec<usize> = folds
                .splits
                .iter()
                .map(|s| {
                    s.test
                        .iter()
                        .filter(|&&r| cells[r].as_deref() == Some(value))
                        .count()
                })
                .collect();
            let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
            assert!(spread <= 1, "value {value} counts {counts:?}");
        }
    }

    #[test]
    fn kfold_small_stratum_falls_back() {
        let mut values: Vec<Option<String>> = vec![Some("common".into()); 20];
        values.push(Some("rare".into()));
        let ds = Dataset::new(
            "t",
            vec![Column::new("g", ColumnData::Categorical(values))],
        )
        .unwrap();
        let folds = kfold(&ds, 5, 1, Some("g"), 1).unwrap();
        assert_eq!(folds.understratified, vec!["rare".to_string()]);
        assert_partition(&folds.splits, 21);
    }

    #[test]
    fn kfold_determinism_and_repeats() {
        let ds = kfold_dataset(20);
        let a = kfold(&ds, 4, 2, None, 9).unwrap();
        let b = kfold(&ds, 4, 2, None, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.splits.len(), 8);
        // The two repeats use derived seeds, so they differ.
        assert_ne!(a.splits[0], a.splits[4]);
    }

    #[test]
    fn kfold_invalid_k() {
        let ds = kfold_dataset(5);
        assert!(matches!(
            kfold(&ds, 1, 1, None, 0),
            Err(Error::InvalidK { .. })
        ));
        assert!(matches!(
            kfold(&ds, 6, 1, None, 0),
            Err(Error::InvalidK { .. })
        ));
    }

    #[test]
    fn holdout_sizes_and_determinism() {
        let ds = kfold_dataset(9);
        let split = holdout(&ds, 3).unwrap();
        assert_eq!(split.train.len(), 6);
        assert_eq!(split.test.len(), 3);

        let ds10 = kfold_dataset(10);
        let split10 = holdout(&ds10, 3).unwrap();
        assert_eq!(split10.train.len(), 7);
        assert_eq!(split10.test.len(), 3);

        assert_eq!(holdout(&ds, 3).unwrap(), split);
        let tiny = kfold_dataset(2);
        assert!(matches!(
            holdout(&tiny, 0),
            Err(Error::DatasetTooSmall { .. })
        ));
    }
}
