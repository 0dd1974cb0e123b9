//! Informativeness measurement via an interpretable model: a full one-hot
//! design, an l2-penalized logistic fit by deterministic full-batch gradient
//! descent, and per-feature importance read directly from the coefficients.
//!
//! The design uses one indicator per observed categorical value with no
//! dropped reference level, so every attribute value gets a coefficient in
//! the report. The small l2 penalty restores identifiability of the
//! resulting collinear system; within each one-hot block the penalty is
//! minimized exactly every iteration, which pins the block mean at zero and
//! removes the otherwise ill-conditioned directions from the descent.

use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnData, Dataset};
use crate::error::{Error, Result};
use crate::profile::AuditProfile;

/// Standardization parameters of one numeric feature (population moments
/// over the encoded rows). `None` marks indicator features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

/// Design matrix with an explicit intercept column (index 0), one-hot
/// expanded categorical features, and standardized numeric features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// Names of the non-intercept features, in design order.
    pub feature_names: Vec<String>,
    /// Row-major design; each row is `[1.0, x_1, ..., x_k]`.
    pub rows: Vec<Vec<f64>>,
    /// Binary targets, one per row.
    pub targets: Vec<f64>,
    /// Rows dropped for a missing outcome or feature cell.
    pub excluded_rows: usize,
    /// Per-feature standardization, aligned to `feature_names`.
    pub standardization: Vec<Option<Standardization>>,
    /// One-hot blocks as (attribute, range of feature indices).
    pub blocks: Vec<(String, Range<usize>)>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }
}

/// Build the design matrix for `outcome ~ features`.
///
/// Feature order is the given attribute order, categorical values expanded
/// in lexicographic order. Rows with a missing outcome or feature cell are
/// excluded and counted.
pub fn encode(ds: &Dataset, outcome: &str, features: &[String]) -> Result<FeatureMatrix> {
    let target_cells = ds.binary_cells(outcome)?;
    if features.iter().any(|f| f == outcome) {
        return Err(Error::InvalidSpec(format!(
            "outcome {outcome} cannot also be a feature"
        )));
    }

    enum Enc<'a> {
        OneHot(&'a str, Vec<String>, &'a [Option<String>]),
        Numeric(&'a str, Vec<Option<f64>>),
    }

    let mut encoders = Vec::with_capacity(features.len());
    for attr in features {
        let col = ds.column(attr)?;
        match &col.data {
            ColumnData::Categorical(cells) => {
                let values = ds.observed_values(attr)?;
                if values.is_empty() {
                    return Err(Error::EmptyColumn(attr.clone()));
                }
                encoders.push(Enc::OneHot(attr, values, cells));
            }
            ColumnData::Numeric(cells) => encoders.push(Enc::Numeric(attr, cells.clone())),
            ColumnData::BinaryLabel(cells) => encoders.push(Enc::Numeric(
                attr,
                cells.iter().map(|c| c.map(f64::from)).collect(),
            )),
        }
    }

    let mut feature_names = Vec::new();
    let mut blocks = Vec::new();
    for enc in &encoders {
        match enc {
            Enc::OneHot(attr, values, _) => {
                let start = feature_names.len();
                for v in values {
                    feature_names.push(format!("{attr}={v}"));
                }
                blocks.push((attr.to_string(), start..feature_names.len()));
            }
            Enc::Numeric(attr, _) => feature_names.push(attr.to_string()),
        }
    }

    let mut kept = Vec::new();
    'rows: for row in 0..ds.n_rows() {
        if target_cells[row].is_none() {
            continue;
        }
        for enc in &encoders {
            let missing = match enc {
                Enc::OneHot(_, _, cells) => cells[row].is_none(),
                Enc::Numeric(_, cells) => cells[row].is_none(),
            };
            if missing {
                continue 'rows;
            }
        }
        kept.push(row);
    }
    if kept.is_empty() {
        return Err(Error::NoCompleteRows);
    }
    let excluded_rows = ds.n_rows() - kept.len();

    let n = kept.len() as f64;
    let mut rows = vec![Vec::with_capacity(1 + feature_names.len()); kept.len()];
    for r in rows.iter_mut() {
        r.push(1.0);
    }
    let mut standardization = Vec::with_capacity(feature_names.len());
    for enc in &encoders {
        match enc {
            Enc::OneHot(_, values, cells) => {
                for v in values {
                    for (i, &row) in kept.iter().enumerate() {
                        let x = (cells[row].as_deref() == Some(v.as_str())) as u8;
                        rows[i].push(f64::from(x));
                    }
                    standardization.push(None);
                }
            }
            Enc::Numeric(_, cells) => {
                let raw: Vec<f64> = kept.iter().map(|&row| cells[row].unwrap()).collect();
                let mean = raw.iter().sum::<f64>() / n;
                let var = raw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                for (i, &x) in raw.iter().enumerate() {
                    // Zero-variance columns standardize to all zeros.
                    rows[i].push(if sd > 0.0 { (x - mean) / sd } else { 0.0 });
                }
                standardization.push(Some(Standardization { mean, sd }));
            }
        }
    }

    let targets = kept
        .iter()
        .map(|&row| f64::from(target_cells[row].unwrap()))
        .collect();

    Ok(FeatureMatrix {
        feature_names,
        rows,
        targets,
        excluded_rows,
        standardization,
        blocks,
    })
}

/// Mean negative log-likelihood plus `l2_lambda/2 * ||w||^2` over the
/// non-intercept coordinates. `weights[0]` is the intercept.
pub fn penalized_loss(x: &FeatureMatrix, weights: &[f64], l2_lambda: f64) -> f64 {
    let n = x.rows.len() as f64;
    let mut nll = 0.0;
    for (row, &y) in x.rows.iter().zip(&x.targets) {
        let z: f64 = row.iter().zip(weights).map(|(a, b)| a * b).sum();
        // log(1 + e^z) - y z, computed stably.
        nll += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
    }
    let penalty: f64 = weights[1..].iter().map(|w| w * w).sum();
    nll / n + 0.5 * l2_lambda * penalty
}

/// Gradient of [`penalized_loss`] with respect to `weights`.
pub fn penalized_gradient(x: &FeatureMatrix, weights: &[f64], l2_lambda: f64) -> Vec<f64> {
    let n = x.rows.len() as f64;
    let mut grad = vec![0.0; weights.len()];
    for (row, &y) in x.rows.iter().zip(&x.targets) {
        let z: f64 = row.iter().zip(weights).map(|(a, b)| a * b).sum();
        let residual = sigmoid(z) - y;
        for (g, &xi) in grad.iter_mut().zip(row) {
            *g += residual * xi;
        }
    }
    for g in grad.iter_mut() {
        *g /= n;
    }
    for (g, w) in grad[1..].iter_mut().zip(&weights[1..]) {
        *g += l2_lambda * w;
    }
    grad
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fit configuration. The defaults make the objective strictly convex while
/// shrinking coefficients negligibly at desk scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub l2_lambda: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2_lambda: 1e-4,
            tolerance: 1e-8,
            max_iterations: 10_000,
            seed: 0,
        }
    }
}

/// A fitted logistic model with its training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub feature_names: Vec<String>,
    /// Aligned to `feature_names`.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub l2_lambda: f64,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    /// False when the fit stopped at the iteration cap or stalled; the best
    /// iterate found is still returned.
    pub converged: bool,
    pub seed: u64,
    /// Objective value after every accepted step (non-increasing).
    pub loss_trace: Vec<f64>,
}

impl LogisticModel {
    /// Probability of the favorable class for a feature vector in the
    /// design's (standardized) space. Always inside the open unit interval.
    pub fn predict_probability(&self, features: &[f64]) -> f64 {
        let z = self.intercept
            + self
                .coefficients
                .iter()
                .zip(features)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }
}

/// Exact penalty minimization along the loss-flat one-hot directions: each
/// block's indicators sum to the intercept column, so shifting the block
/// mean into the intercept leaves every linear predictor unchanged while
/// strictly reducing the penalty. Pins each block mean at zero.
fn recenter_blocks(weights: &mut [f64], blocks: &[(String, Range<usize>)]) {
    for (_, range) in blocks {
        let coef = range.clone().map(|j| weights[1 + j]);
        let mean = coef.clone().sum::<f64>() / range.len() as f64;
        if mean != 0.0 {
            for j in range.clone() {
                weights[1 + j] -= mean;
            }
            weights[0] += mean;
        }
    }
}

/// Minimize the penalized mean negative log-likelihood by full-batch
/// gradient descent with a backtracking (Armijo) line search.
///
/// Deterministic: the seed only sets the initial point, and with a positive
/// penalty the optimum is unique, so any seed reaches the same coefficients.
/// Stops when the gradient infinity norm falls below the tolerance; on the
/// iteration cap the best iterate is returned with `converged = false`.
pub fn train_logistic(x: &FeatureMatrix, config: &TrainConfig) -> Result<LogisticModel> {
    let n = x.n_rows();
    if n < 2 {
        return Err(Error::SampleTooSmall { needed: 2, got: n });
    }
    let first = x.targets[0];
    if x.targets.iter().all(|&y| y == first) {
        return Err(Error::SingleClassTarget);
    }

    let dim = 1 + x.n_features();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut weights: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.01..0.01)).collect();
    recenter_blocks(&mut weights, &x.blocks);

    let mut loss = penalized_loss(x, &weights, config.l2_lambda);
    let mut loss_trace = vec![loss];
    let mut best = (loss, weights.clone());
    let mut step = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad = penalized_gradient(x, &weights, config.l2_lambda);

    const ARMIJO_C1: f64 = 1e-4;
    const MAX_HALVINGS: usize = 60;

    while iterations < config.max_iterations {
        let grad_inf = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_inf <= config.tolerance {
            converged = true;
            break;
        }
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();

        let mut t = step;
        let mut accepted = false;
        let mut candidate = weights.clone();
        for _ in 0..MAX_HALVINGS {
            for ((c, w), g) in candidate.iter_mut().zip(&weights).zip(&grad) {
                *c = w - t * g;
            }
            recenter_blocks(&mut candidate, &x.blocks);
            let candidate_loss = penalized_loss(x, &candidate, config.l2_lambda);
            if candidate_loss <= loss - ARMIJO_C1 * t * grad_sq {
                accepted = true;
                weights.copy_from_slice(&candidate);
                loss = candidate_loss;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Stalled below float resolution; the best iterate stands.
            break;
        }
        step = (t * 2.0).min(1e6);
        iterations += 1;
        loss_trace.push(loss);
        if loss < best.0 {
            best = (loss, weights.clone());
        }
        grad = penalized_gradient(x, &weights, config.l2_lambda);
    }

    if !converged {
        weights = best.1;
        grad = penalized_gradient(x, &weights, config.l2_lambda);
    }
    let final_gradient_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if final_gradient_norm <= config.tolerance {
        converged = true;
    }

    Ok(LogisticModel {
        feature_names: x.feature_names.clone(),
        coefficients: weights[1..].to_vec(),
        intercept: weights[0],
        l2_lambda: config.l2_lambda,
        iterations,
        final_gradient_norm,
        converged,
        seed: config.seed,
        loss_trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub coefficient: f64,
    /// Rank by |coefficient| descending; ties broken by feature order.
    pub rank: usize,
}

/// Coefficients whose magnitude sits below this floor are indistinguishable
/// from zero at the trainer's tolerance, so their sign carries no
/// information and never raises a flag.
pub const SIGN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectedFeature {
    pub attribute: String,
    pub value: String,
    pub coefficient: f64,
    pub rank: usize,
    /// Whether the rank falls in the top half of all features.
    pub top_half: bool,
    /// Raised when the coefficient is negative (beyond [`SIGN_FLOOR`]) for
    /// the favorable outcome.
    pub flagged: bool,
    pub message: Option<String>,
}

/// Coefficient importance over all features, with the protected attribute
/// values broken out and flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub features: Vec<FeatureImportance>,
    pub protected: Vec<ProtectedFeature>,
}

impl ImportanceReport {
    pub fn flagged(&self) -> impl Iterator<Item = &ProtectedFeature> {
        self.protected.iter().filter(|p| p.flagged)
    }
}

/// Rank coefficients and flag protected values whose coefficient points away
/// from the favorable outcome.
pub fn importance(model: &LogisticModel, profile: &AuditProfile) -> ImportanceReport {
    let n = model.feature_names.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        model.coefficients[b]
            .abs()
            .partial_cmp(&model.coefficients[a].abs())
            .expect("finite coefficients")
            .then(a.cmp(&b))
    });
    let mut rank = vec![0usize; n];
    for (position, &idx) in order.iter().enumerate() {
        rank[idx] = position + 1;
    }

    let features: Vec<FeatureImportance> = model
        .feature_names
        .iter()
        .enumerate()
        .map(|(i, name)| FeatureImportance {
            feature: name.clone(),
            coefficient: model.coefficients[i],
            rank: rank[i],
        })
        .collect();

    let mut protected = Vec::new();
    for attr in &profile.protected_attributes {
        let prefix = format!("{attr}=");
        for (i, name) in model.feature_names.iter().enumerate() {
            if let Some(value) = name.strip_prefix(&prefix) {
                let coefficient = model.coefficients[i];
                let flagged = coefficient < -SIGN_FLOOR;
                protected.push(ProtectedFeature {
                    attribute: attr.clone(),
                    value: value.to_string(),
                    coefficient,
                    rank: rank[i],
                    top_half: rank[i] <= n.div_ceil(2),
                    flagged,
                    message: flagged.then(|| {
                        format!("group {value} will probably receive a negative outcome")
                    }),
                });
            }
        }
    }

    ImportanceReport {
        features,
        protected,
    }
}

/// Plot data behind the importance chart: rows of (feature, coefficient).
pub fn importance_csv(report: &ImportanceReport) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["feature", "coefficient"])?;
    for f in &report.features {
        wtr.write_record([f.feature.clone(), f.coefficient.to_string()])?;
    }
    Ok(String::from_utf8(wtr.into_inner().expect("in-memory writer")).expect("utf8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Column, Dataset};
    use crate::profile::AuditProfile;

    fn dataset_from_sex_outcome(rows: &[(&str, u8)]) -> Dataset {
        Dataset::new(
            "t",
            vec![
                Column::new(
                    "sex",
                    ColumnData::Categorical(rows.iter().map(|(s, _)| Some(s.to_string())).collect()),
                ),
                Column::new(
                    "y",
                    ColumnData::BinaryLabel(rows.iter().map(|(_, y)| Some(*y)).collect()),
                ),
            ],
        )
        .unwrap()
    }

    /// 200 M rows with 160 favorable, 200 F rows with 40 favorable: exact
    /// 0.8 / 0.2 favorable rates.
    pub(crate) fn planted_sign_dataset() -> Dataset {
        let mut rows = Vec::new();
        for i in 0..200 {
            rows.push(("M", u8::from(i < 160)));
        }
        for i in 0..200 {
            rows.push(("F", u8::from(i < 40)));
        }
        dataset_from_sex_outcome(&rows)
    }

    #[test]
    fn encode_one_hot_arity() {
        let ds = Dataset::new(
            "t",
            vec![
                Column::new(
                    "sex",
                    ColumnData::Categorical(vec![Some("F".into()), Some("M".into())]),
                ),
                Column::new(
                    "ethnicity",
                    ColumnData::Categorical(vec![Some("A".into()), Some("B".into())]),
                ),
                Column::new("y", ColumnData::BinaryLabel(vec![Some(0), Some(1)])),
            ],
        )
        .unwrap();
        // Third ethnicity value via an extra row.
        let mut columns = ds.columns().to_vec();
        if let ColumnData::Categorical(v) = &mut columns[0].data {
            v.push(Some("F".into()));
        }
        if let ColumnData::Categorical(v) = &mut columns[1].data {
            v.push(Some("C".into()));
        }
        if let ColumnData::BinaryLabel(v) = &mut columns[2].data {
            v.push(Some(1));
        }
        let ds = Dataset::new("t", columns).unwrap();
        let x = encode(&ds, "y", &["sex".to_string(), "ethnicity".to_string()]).unwrap();
        assert_eq!(x.n_features(), 5);
        assert_eq!(x.rows[0].len(), 6); // intercept + 5 indicators
        assert_eq!(
            x.feature_names,
            vec!["sex=F", "sex=M", "ethnicity=A", "ethnicity=B", "ethnicity=C"]
        );
    }

    #[test]
    fn encode_constant_numeric_becomes_zeros() {
        let ds = Dataset::new(
            "t",
            vec![
                Column::new("x", ColumnData::Numeric(vec![Some(7.0); 4])),
                Column::new(
                    "y",
                    ColumnData::BinaryLabel(vec![Some(0), Some(1), Some(0), Some(1)]),
                ),
            ],
        )
        .unwrap();
        let x = encode(&ds, "y", &["x".to_string()]).unwrap();
        assert!(x.rows.iter().all(|r| r[1] == 0.0));
        assert_eq!(x.standardization[0].unwrap().sd, 0.0);
    }

    #[test]
    fn encode_four_row_design_matrix() {
        let ds = Dataset::new(
            "t",
            vec![
                Column::new(
                    "sex",
                    ColumnData::Categorical(
                        ["F", "F", "M", "M"].iter().map(|s| Some(s.to_string())).collect(),
                    ),
                ),
                Column::new(
                    "ethnicity",
                    ColumnData::Categorical(
                        ["Black", "Black", "Caucasian", "Asiatic"]
                            .iter()
                            .map(|s| Some(s.to_string()))
                            .collect(),
                    ),
                ),
                Column::new(
                    "y",
                    ColumnData::BinaryLabel(vec![Some(1), Some(0), Some(1), Some(0)]),
                ),
            ],
        )
        .unwrap();
        let x = encode(&ds, "y", &["sex".to_string(), "ethnicity".to_string()]).unwrap();
        // Features: sex=F, sex=M, ethnicity=Asiatic, ethnicity=Black, ethnicity=Caucasian
        assert_eq!(x.rows[0], vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(x.rows[3], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_excludes_rows_with_missing_cells() {
        let ds = Dataset::new(
            "t",
            vec![
                Column::new(
                    "sex",
                    ColumnData::Categorical(vec![Some("F".into()), None, Some("M".into())]),
                ),
                Column::new(
                    "y",
                    ColumnData::BinaryLabel(vec![Some(1), Some(0), None]),
                ),
            ],
        )
        .unwrap();
        let x = encode(&ds, "y", &["sex".to_string()]).unwrap();
        assert_eq!(x.n_rows(), 1);
        assert_eq!(x.excluded_rows, 2);
    }

    #[test]
    fn encode_errors() {
        let ds = Dataset::new(
            "t",
            vec![
                Column::new("sex", ColumnData::Categorical(vec![Some("F".into())])),
                Column::new("y", ColumnData::BinaryLabel(vec![None])),
            ],
        )
        .unwrap();
        assert!(matches!(
            encode(&ds, "sex", &[]),
            Err(Error::OutcomeNotBinary(_))
        ));
        assert!(matches!(
            encode(&ds, "y", &["sex".to_string()]),
            Err(Error::NoCompleteRows)
        ));
    }

    #[test]
    fn train_symmetric_feature_gets_zero_coefficient() {
        // Identical class balance in both sex levels: the sex coefficients
        // must vanish.
        let rows: Vec<(&str, u8)> = vec![
            ("F", 1),
            ("F", 0),
            ("F", 1),
            ("F", 0),
            ("M", 1),
            ("M", 0),
            ("M", 1),
            ("M", 0),
        ];
        let ds = dataset_from_sex_outcome(&rows);
        let x = encode(&ds, "y", &["sex".to_string()]).unwrap();
        let model = train_logistic(&x, &TrainConfig::default()).unwrap();
        assert!(model.converged);
        for c in &model.coefficients {
            assert!(c.abs() < 1e-6, "coefficient {c} should vanish");
        }
    }

    #[test]
    fn train_recovers_planted_signs() {
        let ds = planted_sign_dataset();
        let x = encode(&ds, "y", &["sex".to_string()]).unwrap();
        let model = train_logistic(&x, &TrainConfig::default()).unwrap();
        assert!(model.converged);
        let coef_f = model.coefficients[x.feature_names.iter().position(|n| n == "sex=F").unwrap()];
        let coef_m = model.coefficients[x.feature_names.iter().position(|n| n == "sex=M").unwrap()];
        assert!(coef_m > 0.0, "coef(M) = {coef_m}");
        assert!(coef_f < 0.0, "coef(F) = {coef_f}");
        // Against the exact log-odds oracle: logit(0.8) - logit(0.2) =
        // 2 log 4, split between the two indicators (shrinkage is tiny).
        let gap = coef_m - coef_f;
        assert!((gap - 16.0f64.ln()).abs() < 0.05, "gap {gap}");
    }

    #[test]
    fn train_single_class_errors() {
        let rows: Vec<(&str, u8)> = vec![("F", 1), ("M", 1)];
        let ds = dataset_from_sex_outcome(&rows);
        let x = encode(&ds, "y", &["sex".to_string()]).unwrap();
        assert!(matches!(
            train_logistic(&x, &TrainConfig::default()),
            Err(Error::SingleClassTarget)
        ));
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        // Rows straddling the favorable/unfavorable boundary in each sex, so
        // both target classes are present.
        let ds = planted_sign_dataset();
        let sub = ds.filter_rows(&(150..170).chain(230..250).collect::<Vec<_>>()).unwrap();
        let x = encode(&sub, "y", &["sex".to_string()]).unwrap();
        // Check at a non-stationary point so the comparison has magnitude.
        let config = TrainConfig {
            max_iterations: 5,
            ..TrainConfig::default()
        };
        let model = train_logistic(&x, &config).unwrap();
        let mut weights = vec![model.intercept];
        weights.extend(&model.coefficients);
        let analytic = penalized_gradient(&x, &weights, config.l2_lambda);
        let h = 1e-6;
        for j in 0..weights.len() {
            let mut plus = weights.clone();
            let mut minus = weights.clone();
            plus[j] += h;
            minus[j] -= h;
            let fd = (penalized_loss(&x, &plus, config.l2_lambda)
                - penalized_loss(&x, &minus, config.l2_lambda))
                / (2.0 * h);
            let scale = analytic[j].abs().max(fd.abs()).max(1e-8);
            assert!(
                (analytic[j] - fd).abs() / scale < 1e-4,
                "component {j}: analytic {} vs fd {fd}",
                analytic[j]
            );
        }
    }

    #[test]
    fn loss_trace_is_non_increasing() {
        let ds = planted_sign_dataset();
        let x = encode(&ds, "y", &["sex".to_string()]).unwrap();
        let model = train_logistic(&x, &TrainConfig::default()).unwrap();
        assert!(model
            .loss_trace
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn two_seeds_reach_the_same_optimum() {
        let ds = planted_sign_dataset();
        let x = encode(&ds, "y", &["sex".to_string()]).unwrap();
        let a = train_logistic(&x, &TrainConfig { seed: 1, ..TrainConfig::default() }).unwrap();
        let b = train_logistic(&x, &TrainConfig { seed: 99, ..TrainConfig::default() }).unwrap();
        for (ca, cb) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((ca - cb).abs() < 1e-6, "{ca} vs {cb}");
        }
        assert!((a.intercept - b.intercept).abs() < 1e-6);
    }

    #[test]
    fn duplicating_rows_leaves_the_optimum_unchanged() {
        let ds = planted_sign_dataset();
        let x = encode(&ds, "y", &["sex".to_string()]).unwrap();
        let doubled_rows: Vec<usize> = (0..ds.n_rows()).chain(0..ds.n_rows()).collect();
        let doubled = ds.filter_rows(&doubled_rows).unwrap();
        let x2 = encode(&doubled, "y", &["sex".to_string()]).unwrap();
        let a = train_logistic(&x, &TrainConfig::default()).unwrap();
        let b = train_logistic(&x2, &TrainConfig::default()).unwrap();
        for (ca, cb) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((ca - cb).abs() < 1e-6);
        }
    }

    #[test]
    fn label_flip_negates_coefficients_and_intercept() {
        let ds = planted_sign_dataset();
        let x = encode(&ds, "y", &["sex".to_string()]).unwrap();
        let mut flipped = x.clone();
        for y in flipped.targets.iter_mut() {
            *y = 1.0 - *y;
        }
        let a = train_logistic(&x, &TrainConfig::default()).unwrap();
        let b = train_logistic(&flipped, &TrainConfig::default()).unwrap();
        for (ca, cb) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((ca + cb).abs() < 1e-6, "{ca} vs {cb}");
        }
        assert!((a.intercept + b.intercept).abs() < 1e-6);
    }

    #[test]
    fn predict_probability_is_in_open_unit_interval() {
        let model = LogisticModel {
            feature_names: vec!["x".into()],
            coefficients: vec![1000.0],
            intercept: 0.0,
            l2_lambda: 1e-4,
            iterations: 0,
            final_gradient_norm: 0.0,
            converged: true,
            seed: 0,
            loss_trace: vec![],
        };
        let hi = model.predict_probability(&[1000.0]);
        let lo = model.predict_probability(&[-1000.0]);
        assert!(hi < 1.0 && hi > 0.0);
        assert!(lo > 0.0 && lo < 1.0);
    }

    fn model_with(names: &[&str], coefs: &[f64]) -> LogisticModel {
        LogisticModel {
            feature_names: names.iter().map(|s| s.to_string()).collect(),
            coefficients: coefs.to_vec(),
            intercept: 0.0,
            l2_lambda: 1e-4,
            iterations: 0,
            final_gradient_norm: 0.0,
            converged: true,
            seed: 0,
            loss_trace: vec![],
        }
    }

    #[test]
    fn importance_flags_negative_protected_values() {
        let model = model_with(
            &[
                "ethnicity=Caucasian",
                "ethnicity=Asiatic",
                "ethnicity=Black",
                "sex=Male",
                "sex=Female",
            ],
            &[0.52, 0.29, -0.81, 0.85, -0.42],
        );
        let profile = AuditProfile::new(vec![], vec!["ethnicity".into(), "sex".into()]);
        let report = importance(&model, &profile);
        let flagged: Vec<&str> = report.flagged().map(|p| p.value.as_str()).collect();
        assert_eq!(flagged, vec!["Black", "Female"]);
        let black = report.protected.iter().find(|p| p.value == "Black").unwrap();
        assert_eq!(black.rank, 2);
        assert!(black.message.as_deref().unwrap().contains("negative outcome"));
    }

    #[test]
    fn importance_zero_coefficients_no_flags_ranks_by_order() {
        let model = model_with(&["a=x", "a=y", "b"], &[0.0, 0.0, 0.0]);
        let profile = AuditProfile::new(vec![], vec!["a".into()]);
        let report = importance(&model, &profile);
        assert_eq!(report.flagged().count(), 0);
        let ranks: Vec<usize> = report.features.iter().map(|f| f.rank).collect();
        assert_eq!(ranks, vec![1, 2, 3]);
    }

    #[test]
    fn importance_ranks_are_a_permutation() {
        let model = model_with(&["a", "b", "c", "d"], &[0.3, -0.9, 0.3, 0.0]);
        let profile = AuditProfile::new(vec![], vec![]);
        let report = importance(&model, &profile);
        let mut ranks: Vec<usize> = report.features.iter().map(|f| f.rank).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, vec![1, 2, 3, 4]);
    }
}
