//! Seeded synthetic tabular data with planted bias structure, used as
//! ground truth when exercising the measurement pipeline.
//!
//! Generation draws from a single ChaCha12 stream in a fixed order (per row:
//! categorical attributes, numeric attributes, outcome, prediction; then the
//! missingness plan), so a spec and seed always reproduce the same dataset
//! bit for bit.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Column, ColumnData, Dataset, GroupKey};
use crate::error::{Error, Result};
use crate::selection::SplitSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalSpec {
    pub name: String,
    pub values: Vec<String>,
    /// Probability per value; must sum to 1.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericGroupOverride {
    pub group: GroupKey,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericSpec {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// First matching override wins; rows matching none use the base
    /// parameters.
    #[serde(default)]
    pub group_overrides: Vec<NumericGroupOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupProb {
    pub group: GroupKey,
    pub prob: f64,
}

/// A binary column drawn per row as Bernoulli(p) where p is the first
/// matching group probability, else the base probability. `prob` is the
/// probability of label 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinarySpec {
    pub name: String,
    pub base_prob: f64,
    #[serde(default)]
    pub group_probs: Vec<GroupProb>,
}

/// Mask cells of `attribute` with the given probability, restricted to rows
/// matching `group` when present. Group membership is evaluated on the
/// fully generated row, before any masking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingnessSpec {
    pub attribute: String,
    #[serde(default)]
    pub group: Option<GroupKey>,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericShift {
    pub attribute: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalShift {
    pub attribute: String,
    /// Alternate probabilities over the attribute's declared values.
    pub probs: Vec<f64>,
}

/// Alternate distributions for a trailing block of rows, planting a
/// train/test distribution shift. The block is the last
/// `floor(block_fraction * n_rows)` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub block_fraction: f64,
    #[serde(default)]
    pub numeric: Vec<NumericShift>,
    #[serde(default)]
    pub categorical: Vec<CategoricalShift>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub n_rows: usize,
    pub seed: u64,
    #[serde(default)]
    pub categorical: Vec<CategoricalSpec>,
    #[serde(default)]
    pub numeric: Vec<NumericSpec>,
    #[serde(default)]
    pub outcome: Option<BinarySpec>,
    #[serde(default)]
    pub prediction: Option<BinarySpec>,
    #[serde(default)]
    pub missingness: Vec<MissingnessSpec>,
    #[serde(default)]
    pub shift: Option<ShiftSpec>,
}

fn default_name() -> String {
    "synth".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessTruth {
    pub attribute: String,
    pub group: Option<GroupKey>,
    pub prob: f64,
    pub eligible_rows: usize,
    pub masked_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftTruth {
    pub block_start: usize,
    pub block_end: usize,
}

/// What was actually planted: the generator parameters plus realized
/// counts, so tests can compare measured metrics against known truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub n_rows: usize,
    pub seed: u64,
    /// Post-masking value counts per categorical attribute.
    pub categorical_counts: BTreeMap<String, BTreeMap<String, usize>>,
    /// Realized outcome-1 rate per declared outcome group.
    pub outcome_rates: Vec<(GroupKey, f64)>,
    pub missingness: Vec<MissingnessTruth>,
    pub shift: Option<ShiftTruth>,
    /// Train/test split separating the shifted block, when one was planted.
    pub suggested_split: Option<SplitSpec>,
}

fn check_probs(context: &str, probs: &[f64], arity: usize) -> Result<()> {
    if probs.len() != arity {
        return Err(Error::InvalidSpec(format!(
            "{context}: {} probabilities for {arity} values",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidSpec(format!(
            "{context}: probabilities must lie in [0, 1]"
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidSpec(format!(
            "{context}: probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

impl SynthSpec {
    pub fn from_json(json: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(json)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 {
            return Err(Error::InvalidSpec("n_rows must be positive".into()));
        }
        let mut names = BTreeSet::new();
        let mut all_columns = BTreeSet::new();
        for c in &self.categorical {
            if !names.insert(&c.name) {
                return Err(Error::InvalidSpec(format!("duplicate attribute {}", c.name)));
            }
            all_columns.insert(c.name.clone());
            if c.values.is_empty() {
                return Err(Error::InvalidSpec(format!("{} has no values", c.name)));
            }
            let distinct: BTreeSet<&String> = c.values.iter().collect();
            if distinct.len() != c.values.len() {
                return Err(Error::InvalidSpec(format!("{} has duplicate values", c.name)));
            }
            check_probs(&c.name, &c.probs, c.values.len())?;
        }
        let group_ok = |group: &GroupKey| -> Result<()> {
            for (attr, _) in group.terms() {
                if !self.categorical.iter().any(|c| c.name == attr) {
                    return Err(Error::InvalidSpec(format!(
                        "group references unknown categorical attribute {attr}"
                    )));
                }
            }
            Ok(())
        };
        for n in &self.numeric {
            if !names.insert(&n.name) {
                return Err(Error::InvalidSpec(format!("duplicate attribute {}", n.name)));
            }
            all_columns.insert(n.name.clone());
            if n.sd <= 0.0 {
                return Err(Error::InvalidSpec(format!("{}: sd must be positive", n.name)));
            }
            for o in &n.group_overrides {
                group_ok(&o.group)?;
                if o.sd <= 0.0 {
                    return Err(Error::InvalidSpec(format!("{}: sd must be positive", n.name)));
                }
            }
        }
        for b in [&self.outcome, &self.prediction].into_iter().flatten() {
            if !names.insert(&b.name) {
                return Err(Error::InvalidSpec(format!("duplicate attribute {}", b.name)));
            }
            all_columns.insert(b.name.clone());
            if !(0.0..=1.0).contains(&b.base_prob) {
                return Err(Error::InvalidSpec(format!(
                    "{}: base_prob must lie in [0, 1]",
                    b.name
                )));
            }
            for gp in &b.group_probs {
                group_ok(&gp.group)?;
                if !(0.0..=1.0).contains(&gp.prob) {
                    return Err(Error::InvalidSpec(format!(
                        "{}: group prob must lie in [0, 1]",
                        b.name
                    )));
                }
            }
        }
        for m in &self.missingness {
            if !all_columns.contains(&m.attribute) {
                return Err(Error::InvalidSpec(format!(
                    "missingness references unknown attribute {}",
                    m.attribute
                )));
            }
            if let Some(g) = &m.group {
                group_ok(g)?;
            }
            if !(0.0..=1.0).contains(&m.prob) {
                return Err(Error::InvalidSpec("missingness prob must lie in [0, 1]".into()));
            }
        }
        if let Some(shift) = &self.shift {
            if !(shift.block_fraction > 0.0 && shift.block_fraction < 1.0) {
                return Err(Error::InvalidSpec(
                    "shift block_fraction must lie strictly between 0 and 1".into(),
                ));
            }
            for ns in &shift.numeric {
                if !self.numeric.iter().any(|n| n.name == ns.attribute) {
                    return Err(Error::InvalidSpec(format!(
                        "shift references unknown numeric attribute {}",
                        ns.attribute
                    )));
                }
                if ns.sd <= 0.0 {
                    return Err(Error::InvalidSpec("shift sd must be positive".into()));
                }
            }
            for cs in &shift.categorical {
                let Some(cat) = self.categorical.iter().find(|c| c.name == cs.attribute) else {
                    return Err(Error::InvalidSpec(format!(
                        "shift references unknown categorical attribute {}",
                        cs.attribute
                    )));
                };
                check_probs(&cs.attribute, &cs.probs, cat.values.len())?;
            }
        }
        Ok(())
    }
}

fn draw_categorical(rng: &mut ChaCha12Rng, values: &[String], probs: &[f64]) -> String {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (value, p) in values.iter().zip(probs) {
        cumulative += p;
        if u < cumulative {
            return value.clone();
        }
    }
    values.last().expect("nonempty").clone()
}

/// Generate the dataset and its ground-truth record.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let n = spec.n_rows;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);

    let block_start = spec
        .shift
        .as_ref()
        .map(|s| n - (s.block_fraction * n as f64).floor() as usize);

    let mut cat_values: Vec<Vec<String>> = vec![Vec::with_capacity(n); spec.categorical.len()];
    let mut num_values: Vec<Vec<f64>> = vec![Vec::with_capacity(n); spec.numeric.len()];
    let mut outcome_values: Vec<u8> = Vec::new();
    let mut prediction_values: Vec<u8> = Vec::new();

    let cat_index: BTreeMap<&str, usize> = spec
        .categorical
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.as_str(), i))
        .collect();

    let matches_group = |group: &GroupKey, cat_values: &[Vec<String>], row: usize| -> bool {
        group.terms().all(|(attr, value)| {
            cat_index
                .get(attr)
                .map(|&i| cat_values[i][row] == value)
                .unwrap_or(false)
        })
    };

    for row in 0..n {
        let in_block = block_start.is_some_and(|start| row >= start);
        for (i, cat) in spec.categorical.iter().enumerate() {
            let shifted = spec
                .shift
                .as_ref()
                .filter(|_| in_block)
                .and_then(|s| s.categorical.iter().find(|cs| cs.attribute == cat.name));
            let probs = shifted.map(|cs| cs.probs.as_slice()).unwrap_or(&cat.probs);
            let value = draw_categorical(&mut rng, &cat.values, probs);
            cat_values[i].push(value);
        }
        for (i, num) in spec.numeric.iter().enumerate() {
            let shifted = spec
                .shift
                .as_ref()
                .filter(|_| in_block)
                .and_then(|s| s.numeric.iter().find(|ns| ns.attribute == num.name));
            let (mean, sd) = match shifted {
                Some(ns) => (ns.mean, ns.sd),
                None => num
                    .group_overrides
                    .iter()
                    .find(|o| matches_group(&o.group, &cat_values, row))
                    .map(|o| (o.mean, o.sd))
                    .unwrap_or((num.mean, num.sd)),
            };
            let normal = Normal::new(mean, sd).expect("validated sd");
            num_values[i].push(normal.sample(&mut rng));
        }
        for (binary, target) in [
            (&spec.outcome, &mut outcome_values),
            (&spec.prediction, &mut prediction_values),
        ] {
            if let Some(b) = binary {
                let prob = b
                    .group_probs
                    .iter()
                    .find(|gp| matches_group(&gp.group, &cat_values, row))
                    .map(|gp| gp.prob)
                    .unwrap_or(b.base_prob);
                let u: f64 = rng.random();
                target.push(u8::from(u < prob));
            }
        }
    }

    // Realized outcome rates per declared group, before masking.
    let mut outcome_rates = Vec::new();
    if let Some(outcome) = &spec.outcome {
        for gp in &outcome.group_probs {
            let mut hits = 0usize;
            let mut total = 0usize;
            for (row, &label) in outcome_values.iter().enumerate() {
                if matches_group(&gp.group, &cat_values, row) {
                    total += 1;
                    hits += usize::from(label == 1);
                }
            }
            if total > 0 {
                outcome_rates.push((gp.group.clone(), hits as f64 / total as f64));
            }
        }
    }

    // Wrap in Option cells, then apply the missingness plan.
    let mut cat_cells: Vec<Vec<Option<String>>> = cat_values
        .iter()
        .map(|v| v.iter().cloned().map(Some).collect())
        .collect();
    let mut num_cells: Vec<Vec<Option<f64>>> = num_values
        .iter()
        .map(|v| v.iter().copied().map(Some).collect())
        .collect();
    let mut outcome_cells: Vec<Option<u8>> = outcome_values.iter().copied().map(Some).collect();
    let mut prediction_cells: Vec<Option<u8>> =
        prediction_values.iter().copied().map(Some).collect();

    let mut missingness_truth = Vec::new();
    for plan in &spec.missingness {
        let mut eligible = 0usize;
        let mut masked = 0usize;
        for row in 0..n {
            let in_group = plan
                .group
                .as_ref()
                .is_none_or(|g| matches_group(g, &cat_values, row));
            if !in_group {
                continue;
            }
            eligible += 1;
            let u: f64 = rng.random();
            if u < plan.prob {
                masked += 1;
                if let Some(&i) = cat_index.get(plan.attribute.as_str()) {
                    cat_cells[i][row] = None;
                } else if let Some(i) =
                    spec.numeric.iter().position(|nm| nm.name == plan.attribute)
                {
                    num_cells[i][row] = None;
                } else if spec.outcome.as_ref().map(|b| b.name.as_str())
                    == Some(plan.attribute.as_str())
                {
                    outcome_cells[row] = None;
                } else {
                    prediction_cells[row] = None;
                }
            }
        }
        missingness_truth.push(MissingnessTruth {
            attribute: plan.attribute.clone(),
            group: plan.group.clone(),
            prob: plan.prob,
            eligible_rows: eligible,
            masked_rows: masked,
        });
    }

    let mut columns = Vec::new();
    let mut categorical_counts = BTreeMap::new();
    for (cat, cells) in spec.categorical.iter().zip(cat_cells) {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for v in cells.iter().flatten() {
            *counts.entry(v.clone()).or_insert(0) += 1;
        }
        categorical_counts.insert(cat.name.clone(), counts);
        columns.push(Column::new(cat.name.clone(), ColumnData::Categorical(cells)));
    }
    for (num, cells) in spec.numeric.iter().zip(num_cells) {
        columns.push(Column::new(num.name.clone(), ColumnData::Numeric(cells)));
    }
    if let Some(outcome) = &spec.outcome {
        columns.push(Column::new(
            outcome.name.clone(),
            ColumnData::BinaryLabel(outcome_cells),
        ));
    }
    if let Some(prediction) = &spec.prediction {
        columns.push(Column::new(
            prediction.name.clone(),
            ColumnData::BinaryLabel(prediction_cells),
        ));
    }
    let ds = Dataset::new(spec.name.clone(), columns)?;

    let (shift, suggested_split) = match block_start {
        Some(start) if start > 0 && start < n => (
            Some(ShiftTruth {
                block_start: start,
                block_end: n,
            }),
            Some(SplitSpec::new(
                (0..start).collect(),
                (start..n).collect(),
            )),
        ),
        _ => (None, None),
    };

    Ok((
        ds,
        GroundTruth {
            n_rows: n,
            seed: spec.seed,
            categorical_counts,
            outcome_rates,
            missingness: missingness_truth,
            shift,
            suggested_split,
        },
    ))
}
