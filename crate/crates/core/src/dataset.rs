//! Ingestion, validation, alignment, splitting, and optional standardization
//! of multivariate time-series sensor logs.
//!
//! A [`TimeSeriesTable`] is a uniformly sampled log with named columns. All
//! modeling downstream works on integer sample indices; timestamps are
//! carried as metadata only.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named series of the table.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
    pub unit: String,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
            unit: String::new(),
        }
    }
}

/// Uniformly sampled multivariate sensor log.
///
/// Invariants (enforced on construction): all columns share the same length,
/// at least 2 rows, no NaN/infinite values, unique column names, positive
/// sample period.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesTable {
    columns: Vec<Column>,
    sample_period: f64,
    start_time: Option<String>,
    dropped_rows: usize,
}

impl TimeSeriesTable {
    pub fn new(columns: Vec<Column>, sample_period: f64) -> Result<Self> {
        Self::with_metadata(columns, sample_period, None, 0)
    }

    pub fn with_metadata(
        columns: Vec<Column>,
        sample_period: f64,
        start_time: Option<String>,
        dropped_rows: usize,
    ) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidTable {
                reason: "table has no columns".into(),
            });
        }
        if !(sample_period > 0.0) {
            return Err(Error::InvalidTable {
                reason: format!("sample period must be positive, got {sample_period}"),
            });
        }
        let n_rows = columns[0].values.len();
        let mut names = HashSet::new();
        for col in &columns {
            if col.values.len() != n_rows {
                return Err(Error::InvalidTable {
                    reason: format!(
                        "column `{}` has {} rows, expected {}",
                        col.name,
                        col.values.len(),
                        n_rows
                    ),
                });
            }
            if !names.insert(col.name.clone()) {
                return Err(Error::InvalidTable {
                    reason: format!("duplicate column name `{}`", col.name),
                });
            }
            if let Some(v) = col.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidTable {
                    reason: format!("column `{}` contains non-finite value {v}", col.name),
                });
            }
        }
        if n_rows < 2 {
            return Err(Error::TooFewRows {
                need: 2,
                got: n_rows,
            });
        }
        Ok(Self {
            columns,
            sample_period,
            start_time,
            dropped_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.columns[0].values.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn start_time(&self) -> Option<&str> {
        self.start_time.as_deref()
    }

    /// Number of rows removed during ingestion by the missing-data policy.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn values(&self, name: &str) -> Result<&[f64]> {
        self.column(name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| Error::ColumnNotFound { name: name.into() })
    }

    /// Contiguous row slice `[start, end)` as a new table.
    pub fn slice(&self, start: usize, end: usize) -> Result<TimeSeriesTable> {
        if start >= end || end > self.n_rows() {
            return Err(Error::InvalidSplit {
                reason: format!("slice [{start}, {end}) out of bounds for {} rows", self.n_rows()),
            });
        }
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                values: c.values[start..end].to_vec(),
                unit: c.unit.clone(),
            })
            .collect();
        TimeSeriesTable::with_metadata(
            columns,
            self.sample_period,
            self.start_time.clone(),
            self.dropped_rows,
        )
    }

    /// New table restricted to `names`, in the order given.
    pub fn select(&self, names: &[&str]) -> Result<TimeSeriesTable> {
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let col = self
                .column(name)
                .ok_or_else(|| Error::ColumnNotFound { name: (*name).into() })?;
            columns.push(col.clone());
        }
        TimeSeriesTable::with_metadata(
            columns,
            self.sample_period,
            self.start_time.clone(),
            self.dropped_rows,
        )
    }
}

/// Role of a column in the identification problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Output,
    CandidateInput,
    Excluded,
}

/// Column-role assignment. Exactly one output; candidate order is preserved
/// and used for stable tie-breaking downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleMap {
    output: String,
    candidates: Vec<String>,
    #[serde(default)]
    excluded: Vec<String>,
}

impl RoleMap {
    pub fn new(
        output: impl Into<String>,
        candidates: Vec<String>,
        excluded: Vec<String>,
    ) -> Result<Self> {
        let output = output.into();
        let mut seen = HashSet::new();
        seen.insert(output.clone());
        for name in candidates.iter().chain(excluded.iter()) {
            if !seen.insert(name.clone()) {
                return Err(Error::InvalidConfig {
                    reason: format!("column `{name}` assigned more than one role"),
                });
            }
        }
        Ok(Self {
            output,
            candidates,
            excluded,
        })
    }

    pub fn output(&self) -> &str {
        &self.output
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn excluded(&self) -> &[String] {
        &self.excluded
    }

    pub fn role_of(&self, name: &str) -> Option<ColumnRole> {
        if self.output == name {
            Some(ColumnRole::Output)
        } else if self.candidates.iter().any(|c| c == name) {
            Some(ColumnRole::CandidateInput)
        } else if self.excluded.iter().any(|c| c == name) {
            Some(ColumnRole::Excluded)
        } else {
            None
        }
    }
}

/// How rows with unparseable, NaN, or infinite cells are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Drop any row containing an invalid cell (default).
    #[default]
    Drop,
    /// Replace invalid cells with the last valid value of the same column;
    /// rows with no previous valid value are dropped.
    ForwardFill,
}

/// Options for [`load_csv`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Nominal sampling interval in seconds.
    pub sample_period: f64,
    /// Column holding timestamps; parsed as metadata, never as data.
    pub timestamp_column: Option<String>,
    pub missing_policy: MissingPolicy,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            sample_period: 1.0,
            timestamp_column: None,
            missing_policy: MissingPolicy::Drop,
        }
    }
}

/// Loads the schema columns of a headered CSV file into a table.
///
/// Only the output and candidate-input columns of `roles` are loaded, in
/// CSV header order; excluded columns are validated against the header and
/// skipped. Row order is preserved and invalid cells are handled per
/// `options.missing_policy`, with the number of dropped rows recorded on
/// the table.
pub fn load_csv(path: impl AsRef<Path>, roles: &RoleMap, options: &LoadOptions) -> Result<TimeSeriesTable> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile { path: path.into() });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.into(),
            source,
        })?;

    let header: Vec<String> = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.into(),
            source,
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let find = |name: &str| header.iter().position(|h| h == name);

    if find(roles.output()).is_none() {
        return Err(Error::OutputColumnMissing {
            name: roles.output().into(),
        });
    }
    for name in roles.candidates().iter().chain(roles.excluded().iter()) {
        if find(name).is_none() {
            return Err(Error::HeaderMismatch {
                name: name.clone(),
                header: header.clone(),
            });
        }
    }
    let ts_index = match &options.timestamp_column {
        Some(name) => Some(find(name).ok_or_else(|| Error::HeaderMismatch {
            name: name.clone(),
            header: header.clone(),
        })?),
        None => None,
    };

    // Data columns in header order, restricted to output + candidates.
    let selected: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| {
            matches!(
                roles.role_of(h),
                Some(ColumnRole::Output) | Some(ColumnRole::CandidateInput)
            )
        })
        .map(|(i, h)| (i, h.clone()))
        .collect();

    let mut series: Vec<Vec<f64>> = vec![Vec::new(); selected.len()];
    let mut last_valid: Vec<Option<f64>> = vec![None; selected.len()];
    let mut start_time: Option<String> = None;
    let mut dropped = 0usize;

    for record in reader.records() {
        let record = record.map_err(|source| Error::Csv {
            path: path.into(),
            source,
        })?;
        let mut parsed: Vec<Option<f64>> = Vec::with_capacity(selected.len());
        for (idx, _) in &selected {
            let cell = record.get(*idx).unwrap_or("").trim();
            let value = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            parsed.push(value);
        }
        let row_ok = match options.missing_policy {
            MissingPolicy::Drop => parsed.iter().all(Option::is_some),
            MissingPolicy::ForwardFill => parsed
                .iter()
                .zip(&last_valid)
                .all(|(v, last)| v.is_some() || last.is_some()),
        };
        if !row_ok {
            dropped += 1;
            continue;
        }
        for (i, value) in parsed.into_iter().enumerate() {
            let v = value.unwrap_or_else(|| last_valid[i].expect("fill source checked above"));
            last_valid[i] = Some(v);
            series[i].push(v);
        }
        if start_time.is_none() {
            if let Some(ts) = ts_index {
                start_time = record.get(ts).map(|s| s.trim().to_string());
            }
        }
    }

    let n_valid = series.first().map(Vec::len).unwrap_or(0);
    if n_valid < 2 {
        return Err(Error::TooFewRows {
            need: 2,
            got: n_valid,
        });
    }
    let columns = selected
        .into_iter()
        .zip(series)
        .map(|((_, name), values)| Column::new(name, values))
        .collect();
    TimeSeriesTable::with_metadata(columns, options.sample_period, start_time, dropped)
}

/// Train/test partition of a table into contiguous chronological slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitSpec {
    /// First `train_fraction` of rows is train, the remainder test.
    Fraction { train_fraction: f64 },
    /// Explicit half-open index ranges; train must precede test.
    IndexRanges {
        train: (usize, usize),
        test: (usize, usize),
    },
}

/// Splits a table into chronological train and test slices. No shuffling.
pub fn split(table: &TimeSeriesTable, spec: &SplitSpec) -> Result<(TimeSeriesTable, TimeSeriesTable)> {
    let n = table.n_rows();
    let ((ts, te), (vs, ve)) = match spec {
        SplitSpec::Fraction { train_fraction } => {
            if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                return Err(Error::InvalidSplit {
                    reason: format!(
                        "train fraction must lie in (0, 1), got {train_fraction}"
                    ),
                });
            }
            let n_train = (*train_fraction * n as f64).floor() as usize;
            ((0, n_train), (n_train, n))
        }
        SplitSpec::IndexRanges { train, test } => {
            for (name, (s, e)) in [("train", train), ("test", test)] {
                if s >= e {
                    return Err(Error::InvalidSplit {
                        reason: format!("{name} range [{s}, {e}) is empty or reversed"),
                    });
                }
                if *e > n {
                    return Err(Error::InvalidSplit {
                        reason: format!("{name} range [{s}, {e}) exceeds {n} rows"),
                    });
                }
            }
            if train.1 > test.0 {
                return Err(Error::InvalidSplit {
                    reason: format!(
                        "ranges must be non-overlapping and chronological: train [{}, {}) vs test [{}, {})",
                        train.0, train.1, test.0, test.1
                    ),
                });
            }
            (*train, *test)
        }
    };
    if ts >= te {
        return Err(Error::EmptySplit { which: "train" });
    }
    if vs >= ve {
        return Err(Error::EmptySplit { which: "test" });
    }
    Ok((table.slice(ts, te)?, table.slice(vs, ve)?))
}

/// Which divisor the empirical standard deviation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    /// Divide by n - 1.
    #[default]
    Sample,
    /// Divide by n.
    Population,
}

/// Per-column standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    /// Column had (numerically) zero variance and was passed through.
    pub zero_variance: bool,
}

const ZERO_VARIANCE_EPS: f64 = 1e-12;

/// Transforms every column to `(v - mean) / std`.
///
/// When `stats` is omitted the statistics are computed from `table` and
/// returned, so test data can be standardized with training statistics.
/// Zero-variance columns pass through unchanged and are flagged.
pub fn standardize(
    table: &TimeSeriesTable,
    stats: Option<&[ColumnStats]>,
    kind: StdKind,
) -> Result<(TimeSeriesTable, Vec<ColumnStats>)> {
    let stats: Vec<ColumnStats> = match stats {
        Some(given) => table
            .columns()
            .iter()
            .map(|col| {
                given
                    .iter()
                    .find(|s| s.name == col.name)
                    .cloned()
                    .ok_or_else(|| Error::StatsMissing {
                        name: col.name.clone(),
                    })
                    .and_then(|s| {
                        if !s.zero_variance && !(s.std > 0.0) {
                            Err(Error::InvalidArgument {
                                reason: format!(
                                    "supplied std for column `{}` must be positive, got {}",
                                    s.name, s.std
                                ),
                            })
                        } else {
                            Ok(s)
                        }
                    })
            })
            .collect::<Result<_>>()?,
        None => table
            .columns()
            .iter()
            .map(|col| compute_stats(col, kind))
            .collect(),
    };

    let columns = table
        .columns()
        .iter()
        .zip(&stats)
        .map(|(col, s)| {
            let values = if s.zero_variance {
                col.values.clone()
            } else {
                col.values.iter().map(|v| (v - s.mean) / s.std).collect()
            };
            Column {
                name: col.name.clone(),
                values,
                unit: col.unit.clone(),
            }
        })
        .collect();
    let out = TimeSeriesTable::with_metadata(
        columns,
        table.sample_period(),
        table.start_time().map(str::to_string),
        table.dropped_rows(),
    )?;
    Ok((out, stats))
}

fn compute_stats(col: &Column, kind: StdKind) -> ColumnStats {
    let n = col.values.len() as f64;
    let mean = col.values.iter().sum::<f64>() / n;
    let ss: f64 = col.values.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = match kind {
        StdKind::Sample => (n - 1.0).max(1.0),
        StdKind::Population => n,
    };
    let std = (ss / denom).sqrt();
    ColumnStats {
        name: col.name.clone(),
        mean,
        std,
        zero_variance: std <= ZERO_VARIANCE_EPS,
    }
}
