//! Typed tabular data model: columns with explicit missing cells, CSV
//! ingestion and emission, group definition and row selection.
//!
//! A [`Dataset`] is immutable after construction. Mitigations and other
//! transformations always build a new `Dataset`, so measurements taken on one
//! value can never be invalidated behind the caller's back. Missing cells are
//! a first-class state (`None`), never a sentinel value, so completeness
//! counting cannot be confused by legitimate values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three column kinds the audit understands.
///
/// `BinaryLabel` columns hold only 0/1 (or missing) and are the only columns
/// usable as outcomes or predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Categorical,
    Numeric,
    BinaryLabel,
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnType::Categorical => write!(f, "categorical"),
            ColumnType::Numeric => write!(f, "numeric"),
            ColumnType::BinaryLabel => write!(f, "binary_label"),
        }
    }
}

/// Cell storage for one column. `None` is the missing marker.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Categorical(Vec<Option<String>>),
    Numeric(Vec<Option<f64>>),
    BinaryLabel(Vec<Option<u8>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Categorical(v) => v.len(),
            ColumnData::Numeric(v) => v.len(),
            ColumnData::BinaryLabel(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column_type(&self) -> ColumnType {
        match self {
            ColumnData::Categorical(_) => ColumnType::Categorical,
            ColumnData::Numeric(_) => ColumnType::Numeric,
            ColumnData::BinaryLabel(_) => ColumnType::BinaryLabel,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Categorical(v) => v[row].is_none(),
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::BinaryLabel(v) => v[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        match self {
            ColumnData::Categorical(v) => v.iter().filter(|c| c.is_none()).count(),
            ColumnData::Numeric(v) => v.iter().filter(|c| c.is_none()).count(),
            ColumnData::BinaryLabel(v) => v.iter().filter(|c| c.is_none()).count(),
        }
    }

    /// Cell rendered the way the CSV writer emits it; missing renders as "".
    pub fn render(&self, row: usize) -> String {
        match self {
            ColumnData::Categorical(v) => v[row].clone().unwrap_or_default(),
            ColumnData::Numeric(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            ColumnData::BinaryLabel(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
        }
    }

    /// Categorical view of a cell: the value string for categorical columns,
    /// "0"/"1" for binary labels, `None` for numeric columns or missing cells.
    pub fn as_category(&self, row: usize) -> Option<String> {
        match self {
            ColumnData::Categorical(v) => v[row].clone(),
            ColumnData::BinaryLabel(v) => v[row].map(|x| x.to_string()),
            ColumnData::Numeric(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn new(name: impl Into<String>, data: ColumnData) -> Self {
        Column {
            name: name.into(),
            data,
        }
    }
}

/// Immutable typed table with explicit missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    columns: Vec<Column>,
    n_rows: usize,
}

impl Dataset {
    /// Build a dataset, validating the structural invariants: equal column
    /// lengths, unique non-empty attribute names, finite numeric cells.
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self> {
        let n_rows = columns.first().map(|c| c.data.len()).unwrap_or(0);
        let mut seen = BTreeSet::new();
        for col in &columns {
            if col.name.is_empty() {
                return Err(Error::SchemaMismatch("empty attribute name".into()));
            }
            if !seen.insert(col.name.clone()) {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate attribute name: {}",
                    col.name
                )));
            }
            if col.data.len() != n_rows {
                return Err(Error::SchemaMismatch(format!(
                    "column {} has {} cells, expected {}",
                    col.name,
                    col.data.len(),
                    n_rows
                )));
            }
            if let ColumnData::Numeric(v) = &col.data {
                if let Some(row) = v.iter().position(|c| c.is_some_and(|x| !x.is_finite())) {
                    return Err(Error::ParseError {
                        row,
                        column: col.name.clone(),
                        detail: "non-finite numeric cell".into(),
                    });
                }
            }
            if let ColumnData::BinaryLabel(v) = &col.data {
                if let Some(row) = v.iter().position(|c| c.is_some_and(|x| x > 1)) {
                    return Err(Error::ParseError {
                        row,
                        column: col.name.clone(),
                        detail: "binary label outside {0, 1}".into(),
                    });
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            columns,
            n_rows,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn column_type(&self, name: &str) -> Result<ColumnType> {
        Ok(self.column(name)?.data.column_type())
    }

    /// Sorted distinct observed values of a categorical column.
    pub fn observed_values(&self, attribute: &str) -> Result<Vec<String>> {
        let col = self.column(attribute)?;
        match &col.data {
            ColumnData::Categorical(v) => {
                let set: BTreeSet<String> = v.iter().flatten().cloned().collect();
                Ok(set.into_iter().collect())
            }
            _ => Err(Error::NonCategoricalAttribute(attribute.to_string())),
        }
    }

    pub fn categorical_cells(&self, attribute: &str) -> Result<&[Option<String>]> {
        match &self.column(attribute)?.data {
            ColumnData::Categorical(v) => Ok(v),
            _ => Err(Error::NonCategoricalAttribute(attribute.to_string())),
        }
    }

    pub fn numeric_cells(&self, attribute: &str) -> Result<&[Option<f64>]> {
        match &self.column(attribute)?.data {
            ColumnData::Numeric(v) => Ok(v),
            _ => Err(Error::SchemaMismatch(format!(
                "attribute {attribute} is not numeric"
            ))),
        }
    }

    pub fn binary_cells(&self, attribute: &str) -> Result<&[Option<u8>]> {
        match &self.column(attribute)?.data {
            ColumnData::BinaryLabel(v) => Ok(v),
            _ => Err(Error::OutcomeNotBinary(attribute.to_string())),
        }
    }

    pub fn total_missing(&self) -> usize {
        self.columns.iter().map(|c| c.data.missing_count()).sum()
    }

    /// True when the row has no missing cell in any column.
    pub fn row_complete(&self, row: usize) -> bool {
        self.columns.iter().all(|c| !c.data.is_missing(row))
    }

    /// New dataset holding the given rows, in the given order.
    pub fn filter_rows(&self, rows: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_rows) {
            return Err(Error::InvalidSplit(format!(
                "row index {bad} out of bounds for {} rows",
                self.n_rows
            )));
        }
        let columns = self
            .columns
            .iter()
            .map(|c| {
                let data = match &c.data {
                    ColumnData::Categorical(v) => {
                        ColumnData::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
                    }
                    ColumnData::Numeric(v) => {
                        ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect())
                    }
                    ColumnData::BinaryLabel(v) => {
                        ColumnData::BinaryLabel(rows.iter().map(|&r| v[r]).collect())
                    }
                };
                Column::new(c.name.clone(), data)
            })
            .collect();
        Dataset::new(self.name.clone(), columns)
    }
}

/// A conjunction of `attribute = value` terms selecting a group of rows.
///
/// At most one term per attribute; the empty key selects every row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupKey(BTreeMap<String, String>);

impl GroupKey {
    pub fn empty() -> Self {
        GroupKey(BTreeMap::new())
    }

    pub fn from_terms<I, A, V>(terms: I) -> Self
    where
        I: IntoIterator<Item = (A, V)>,
        A: Into<String>,
        V: Into<String>,
    {
        GroupKey(
            terms
                .into_iter()
                .map(|(a, v)| (a.into(), v.into()))
                .collect(),
        )
    }

    pub fn single(attribute: impl Into<String>, value: impl Into<String>) -> Self {
        GroupKey::from_terms([(attribute.into(), value.into())])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(a, v)| (a.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn value(&self, attribute: &str) -> Option<&str> {
        self.0.get(attribute).map(|v| v.as_str())
    }

    /// Merge two keys; `None` when they bind the same attribute to
    /// conflicting values (the union would not be a valid key).
    pub fn merge(&self, other: &GroupKey) -> Option<GroupKey> {
        let mut merged = self.0.clone();
        for (a, v) in &other.0 {
            match merged.get(a) {
                Some(existing) if existing != v => return None,
                _ => {
                    merged.insert(a.clone(), v.clone());
                }
            }
        }
        Some(GroupKey(merged))
    }

    /// Every term attribute must exist in the dataset and be categorical.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        for (attribute, _) in self.terms() {
            let col = ds.column(attribute)?;
            if col.data.column_type() != ColumnType::Categorical {
                return Err(Error::NonCategoricalAttribute(attribute.to_string()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "(all rows)");
        }
        let parts: Vec<String> = self.0.iter().map(|(a, v)| format!("{a}={v}")).collect();
        write!(f, "{}", parts.join(" & "))
    }
}

/// Tokens the loader treats as missing: empty string, "NA", "null".
pub fn default_missing_tokens() -> Vec<String> {
    vec![String::new(), "NA".to_string(), "null".to_string()]
}

fn parse_cell(
    raw: &str,
    kind: ColumnType,
    missing: &BTreeSet<&str>,
    row: usize,
    column: &str,
) -> Result<Option<String>> {
    // Returned as the raw string here; typed conversion happens per column.
    if missing.contains(raw) {
        return Ok(None);
    }
    match kind {
        ColumnType::Categorical => Ok(Some(raw.to_string())),
        ColumnType::Numeric => {
            let x: f64 = raw.parse().map_err(|_| Error::ParseError {
                row,
                column: column.to_string(),
                detail: format!("cannot parse {raw:?} as a number"),
            })?;
            if !x.is_finite() {
                return Err(Error::ParseError {
                    row,
                    column: column.to_string(),
                    detail: format!("non-finite numeric value {raw:?}"),
                });
            }
            Ok(Some(raw.to_string()))
        }
        ColumnType::BinaryLabel => match raw {
            "0" | "1" => Ok(Some(raw.to_string())),
            _ => Err(Error::ParseError {
                row,
                column: column.to_string(),
                detail: format!("binary label must be 0 or 1, got {raw:?}"),
            }),
        },
    }
}

/// Load a dataset from CSV (RFC 4180, comma-delimited, header row required).
///
/// The header must match the schema attribute names in order. Cells equal to
/// any missing token become the missing marker; numeric parse failures are
/// errors, not missing values.
pub fn load_csv_reader<R: Read>(
    name: impl Into<String>,
    reader: R,
    schema: &[(String, ColumnType)],
    missing_tokens: &[String],
) -> Result<Dataset> {
    let missing: BTreeSet<&str> = missing_tokens.iter().map(|s| s.as_str()).collect();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    if headers.len() != schema.len() {
        return Err(Error::SchemaMismatch(format!(
            "header has {} columns, schema declares {}",
            headers.len(),
            schema.len()
        )));
    }
    for (got, (want, _)) in headers.iter().zip(schema) {
        if got != want {
            return Err(Error::SchemaMismatch(format!(
                "header column {got:?} does not match schema attribute {want:?}"
            )));
        }
    }

    let mut raw_columns: Vec<Vec<Option<String>>> = vec![Vec::new(); schema.len()];
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::ParseError {
            row: row_idx,
            column: String::new(),
            detail: e.to_string(),
        })?;
        if record.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "row {} has {} fields, expected {}",
                row_idx,
                record.len(),
                schema.len()
            )));
        }
        for (col_idx, raw) in record.iter().enumerate() {
            let (col_name, kind) = &schema[col_idx];
            let cell = parse_cell(raw, *kind, &missing, row_idx, col_name)?;
            raw_columns[col_idx].push(cell);
        }
    }

    let columns = schema
        .iter()
        .zip(raw_columns)
        .map(|((col_name, kind), cells)| {
            let data = match kind {
                ColumnType::Categorical => ColumnData::Categorical(cells),
                ColumnType::Numeric => ColumnData::Numeric(
                    cells
                        .into_iter()
                        .map(|c| c.map(|s| s.parse::<f64>().expect("validated numeric")))
                        .collect(),
                ),
                ColumnType::BinaryLabel => ColumnData::BinaryLabel(
                    cells
                        .into_iter()
                        .map(|c| c.map(|s| s.parse::<u8>().expect("validated binary")))
                        .collect(),
                ),
            };
            Column::new(col_name.clone(), data)
        })
        .collect();

    Dataset::new(name, columns)
}

pub fn load_csv(
    path: &Path,
    schema: &[(String, ColumnType)],
    missing_tokens: &[String],
) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.display().to_string()));
    }
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    load_csv_reader(name, file, schema, missing_tokens)
}

/// Emit the dataset as CSV. Missing cells are written as the empty string,
/// so reloading with the default missing tokens round-trips exactly.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(ds.columns().iter().map(|c| c.name.as_str()))?;
    for row in 0..ds.n_rows() {
        let record: Vec<String> = ds.columns().iter().map(|c| c.data.render(row)).collect();
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_csv_path(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(ds, file)
}

/// The schema of a dataset as (attribute, type) pairs, as needed to reload
/// an emitted CSV.
pub fn schema_of(ds: &Dataset) -> Vec<(String, ColumnType)> {
    ds.columns()
        .iter()
        .map(|c| (c.name.clone(), c.data.column_type()))
        .collect()
}

/// Enumerate the full cross product of observed value sets for the given
/// categorical attributes, with per-combination row counts.
///
/// Zero-count combinations are included. Rows with a missing cell in any
/// listed attribute are excluded from every count, so the counts sum to the
/// number of rows fully observed on those attributes. With no attributes the
/// result is the single empty key counting every row.
pub fn enumerate_groups(ds: &Dataset, attributes: &[String]) -> Result<Vec<(GroupKey, usize)>> {
    let mut value_sets = Vec::with_capacity(attributes.len());
    for attr in attributes {
        value_sets.push((attr.clone(), ds.observed_values(attr)?));
    }

    let mut counts: BTreeMap<GroupKey, usize> = BTreeMap::new();
    'rows: for row in 0..ds.n_rows() {
        let mut terms = Vec::with_capacity(attributes.len());
        for attr in attributes {
            match ds.categorical_cells(attr)?[row].as_ref() {
                Some(v) => terms.push((attr.clone(), v.clone())),
                None => continue 'rows,
            }
        }
        *counts.entry(GroupKey::from_terms(terms)).or_insert(0) += 1;
    }

    let mut out = Vec::new();
    let mut stack: Vec<(String, String)> = Vec::new();
    product_groups(&value_sets, &mut stack, &mut |terms| {
        let key = GroupKey::from_terms(terms.iter().cloned());
        let count = counts.get(&key).copied().unwrap_or(0);
        out.push((key, count));
    });
    // With no attributes the product is the single empty combination.
    if attributes.is_empty() {
        out = vec![(GroupKey::empty(), ds.n_rows())];
    }
    Ok(out)
}

fn product_groups(
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
                product_groups(rest, stack, emit);
                stack.pop();
            }
        }
    }
}

/// Indices of the rows matching every term of the group key, in row order.
/// Rows with a missing cell in a term attribute never match.
pub fn rows_matching(ds: &Dataset, group: &GroupKey) -> Result<Vec<usize>> {
    group.validate(ds)?;
    let mut cells = Vec::new();
    for (attribute, value) in group.terms() {
        cells.push((ds.categorical_cells(attribute)?, value));
    }
    Ok((0..ds.n_rows())
        .filter(|&row| {
            cells
                .iter()
                .all(|(col, value)| col[row].as_deref() == Some(*value))
        })
        .collect())
}
