//! Discretization of continuous series into symbol sequences and
//! information-theoretic dependence measures on them: entropy, mutual
//! information, square-root normalized mutual information, and the pairwise
//! dependency matrix used to rank exogenous inputs.
//!
//! All information quantities are reported in bits (base-2 logarithm); the
//! square-root NMI is base-invariant.

use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesTable;
use crate::error::{Error, Result};

/// Discretization strategy for continuous series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningStrategy {
    EqualWidth,
    /// Quantile bins. Robust to heavy-tailed sensor data; the default.
    #[default]
    EqualFrequency,
}

/// Describes a fitted binning so that new data can be discretized with the
/// same rule. Bins are left-closed: symbol(v) = number of interior edges <= v.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningDescriptor {
    pub strategy: BinningStrategy,
    /// Interior bin edges, strictly increasing. `k` edges define `k + 1` bins.
    pub edges: Vec<f64>,
    /// True when the fitted series could not support more than one bin.
    pub degenerate: bool,
}

impl BinningDescriptor {
    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }

    /// Symbol for a single value under this binning. Out-of-range values
    /// clamp to the first or last bin.
    pub fn symbol_of(&self, value: f64) -> usize {
        self.edges.partition_point(|e| *e <= value)
    }

    /// Discretizes new data with the fitted edges.
    pub fn apply(&self, values: &[f64]) -> Result<SymbolSequence> {
        if values.is_empty() {
            return Err(Error::InvalidArgument {
                reason: "cannot symbolize an empty sequence".into(),
            });
        }
        let symbols = values.iter().map(|v| self.symbol_of(*v)).collect();
        Ok(SymbolSequence {
            symbols,
            n_bins: self.n_bins(),
            binning: Some(self.clone()),
        })
    }
}

/// Discretized series over a finite alphabet `[0, n_bins)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolSequence {
    symbols: Vec<usize>,
    n_bins: usize,
    binning: Option<BinningDescriptor>,
}

impl SymbolSequence {
    /// Wraps pre-discretized symbols (no binning descriptor attached).
    pub fn from_symbols(symbols: Vec<usize>, n_bins: usize) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidArgument {
                reason: "symbol sequence must be nonempty".into(),
            });
        }
        if n_bins == 0 {
            return Err(Error::InvalidArgument {
                reason: "n_bins must be positive".into(),
            });
        }
        if let Some(&bad) = symbols.iter().find(|&&s| s >= n_bins) {
            return Err(Error::InvalidArgument {
                reason: format!("symbol {bad} out of range for {n_bins} bins"),
            });
        }
        Ok(Self {
            symbols,
            n_bins,
            binning: None,
        })
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn binning(&self) -> Option<&BinningDescriptor> {
        self.binning.as_ref()
    }

    /// True when the sequence carries no information (a single effective bin).
    pub fn is_degenerate(&self) -> bool {
        self.n_bins == 1 || self.symbols.iter().all(|&s| s == self.symbols[0])
    }

    fn bin_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_bins];
        for &s in &self.symbols {
            counts[s] += 1;
        }
        counts
    }
}

/// Default bin count for `n` samples: `max(2, floor(sqrt(n) / 2))`, capped
/// at 16 to bound joint-histogram sparsity.
pub fn default_bin_count(n_samples: usize) -> usize {
    (((n_samples as f64).sqrt() / 2.0).floor() as usize).clamp(2, 16)
}

/// Discretizes `values` into `n_bins` symbols.
///
/// Series with at most `n_bins` distinct values are symbolized by their
/// distinct values directly, bypassing the requested strategy (this keeps
/// binary flags like occupancy intact under quantile binning). Equal-width
/// edges uniformly partition `[min, max]` with the maximum mapping to the
/// top bin; equal-frequency edges sit at empirical quantiles with duplicate
/// edges collapsed, so equal values always share a bin. The returned
/// descriptor re-bins new data with the same edges.
pub fn symbolize(values: &[f64], n_bins: usize, strategy: BinningStrategy) -> Result<SymbolSequence> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument {
            reason: format!("n_bins must be at least 2, got {n_bins}"),
        });
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument {
            reason: "cannot symbolize an empty sequence".into(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument {
            reason: "cannot symbolize non-finite values".into(),
        });
    }
    if strategy == BinningStrategy::EqualFrequency && values.len() < n_bins {
        return Err(Error::InvalidArgument {
            reason: format!(
                "equal-frequency binning needs at least {n_bins} samples, got {}",
                values.len()
            ),
        });
    }

    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));

    let mut distinct: Vec<f64> = Vec::new();
    for &v in &sorted {
        if distinct.last().map_or(true, |&d| v > d) {
            distinct.push(v);
        }
        if distinct.len() > n_bins {
            break;
        }
    }

    let edges: Vec<f64> = if distinct.len() <= n_bins {
        // Distinct-value bypass: one bin per observed value.
        distinct[1..].to_vec()
    } else {
        match strategy {
            BinningStrategy::EqualWidth => {
                let (min, max) = (sorted[0], *sorted.last().unwrap());
                let width = (max - min) / n_bins as f64;
                (1..n_bins).map(|j| min + j as f64 * width).collect()
            }
            BinningStrategy::EqualFrequency => {
                let n = sorted.len();
                let mut edges = Vec::with_capacity(n_bins - 1);
                for j in 1..n_bins {
                    let e = sorted[j * n / n_bins];
                    if e > sorted[0] && edges.last().map_or(true, |&last| e > last) {
                        edges.push(e);
                    }
                }
                edges
            }
        }
    };

    let descriptor = BinningDescriptor {
        strategy,
        degenerate: edges.is_empty(),
        edges,
    };
    descriptor.apply(values)
}

/// Empirical joint bin-count table of two equal-length symbol sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    counts: Vec<u64>,
    n_bins_a: usize,
    n_bins_b: usize,
    total: u64,
}

impl JointHistogram {
    pub fn from_sequences(a: &SymbolSequence, b: &SymbolSequence) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        let (na, nb) = (a.n_bins(), b.n_bins());
        let mut counts = vec![0u64; na * nb];
        for (&u, &v) in a.symbols().iter().zip(b.symbols()) {
            counts[u * nb + v] += 1;
        }
        Ok(Self {
            counts,
            n_bins_a: na,
            n_bins_b: nb,
            total: a.len() as u64,
        })
    }

    pub fn count(&self, u: usize, v: usize) -> u64 {
        self.counts[u * self.n_bins_b + v]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn marginal_a(&self) -> Vec<u64> {
        (0..self.n_bins_a)
            .map(|u| (0..self.n_bins_b).map(|v| self.count(u, v)).sum())
            .collect()
    }

    pub fn marginal_b(&self) -> Vec<u64> {
        (0..self.n_bins_b)
            .map(|v| (0..self.n_bins_a).map(|u| self.count(u, v)).sum())
            .collect()
    }
}

/// Shannon entropy of the empirical bin distribution, in bits.
pub fn entropy(s: &SymbolSequence) -> f64 {
    let n = s.len() as f64;
    s.bin_counts()
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Mutual information between two symbol sequences, in bits.
///
/// Computed from the empirical joint histogram; zero-count cells contribute
/// nothing and tiny negative rounding is clamped to zero.
pub fn mutual_information(a: &SymbolSequence, b: &SymbolSequence) -> Result<f64> {
    let hist = JointHistogram::from_sequences(a, b)?;
    let n = hist.total() as f64;
    let pa = hist.marginal_a();
    let pb = hist.marginal_b();
    let mut mi = 0.0;
    for u in 0..a.n_bins() {
        if pa[u] == 0 {
            continue;
        }
        for v in 0..b.n_bins() {
            let c = hist.count(u, v);
            if c == 0 {
                continue;
            }
            let p_uv = c as f64 / n;
            let p_u = pa[u] as f64 / n;
            let p_v = pb[v] as f64 / n;
            mi += p_uv * (p_uv / (p_u * p_v)).log2();
        }
    }
    debug_assert!(mi > -1e-12, "MI fell below the numerical floor: {mi}");
    Ok(mi.max(0.0))
}

/// Square-root normalized mutual information, `I / sqrt(H_a * H_b)`,
/// clamped to `[0, 1]`. Independent of the logarithm base.
///
/// Errors with [`Error::DegenerateInput`] when either sequence has zero
/// entropy; callers that tabulate pairs should record 0 with a flag instead.
pub fn nmi_sqrt(a: &SymbolSequence, b: &SymbolSequence) -> Result<f64> {
    let ha = entropy(a);
    let hb = entropy(b);
    if ha <= 0.0 || hb <= 0.0 {
        return Err(Error::DegenerateInput {
            name: if ha <= 0.0 { "first" } else { "second" }.into(),
            reason: "zero entropy: constant symbol sequence".into(),
        });
    }
    let mi = mutual_information(a, b)?;
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Which dependence measure a matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyMetric {
    Mi,
    #[default]
    NmiSqrt,
}

/// Pairwise dependence matrix over table columns.
///
/// Diagonal entries are 0 by convention: only relations between distinct
/// variables are displayed, even though self-information equals entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyMatrix {
    labels: Vec<String>,
    /// Row-major square matrix.
    values: Vec<f64>,
    metric: DependencyMetric,
    /// Columns whose symbolization was degenerate; their cells hold 0.
    degenerate_columns: Vec<String>,
}

impl DependencyMatrix {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn metric(&self) -> DependencyMetric {
        self.metric
    }

    pub fn degenerate_columns(&self) -> &[String] {
        &self.degenerate_columns
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.labels.len() + col]
    }

    pub fn value_by_name(&self, row: &str, col: &str) -> Result<f64> {
        let r = self.index_of(row)?;
        let c = self.index_of(col)?;
        Ok(self.value(r, c))
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::ColumnNotFound { name: name.into() })
    }

    /// CSV rendering: header row of labels, then one row per label.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str("column");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..self.labels.len() {
                out.push(',');
                out.push_str(&format!("{:.6}", self.value(i, j)));
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text grid for terminal display.
    pub fn to_text_grid(&self) -> String {
        let width = self
            .labels
            .iter()
            .map(|l| l.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = format!("{:>width$}", "");
        for l in &self.labels {
            out.push_str(&format!(" {l:>width$}"));
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(&format!("{l:>width$}"));
            for j in 0..self.labels.len() {
                out.push_str(&format!(" {:>width$.4}", self.value(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// Options for [`dependency_matrix`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixOptions {
    /// Bin count; `None` selects [`default_bin_count`] from the row count.
    pub n_bins: Option<usize>,
    pub strategy: BinningStrategy,
    pub metric: DependencyMetric,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        Self {
            n_bins: None,
            strategy: BinningStrategy::EqualFrequency,
            metric: DependencyMetric::NmiSqrt,
        }
    }
}

/// Computes the pairwise dependence of every column pair of `table`.
///
/// Symmetric by construction; the diagonal is forced to 0. Cells touching a
/// degenerate (constant) column are recorded as 0 and the column is flagged.
pub fn dependency_matrix(table: &TimeSeriesTable, options: &MatrixOptions) -> Result<DependencyMatrix> {
    let k = table.n_columns();
    if k < 2 {
        return Err(Error::InvalidArgument {
            reason: "dependency matrix needs at least 2 columns".into(),
        });
    }
    let n_bins = options.n_bins.unwrap_or_else(|| default_bin_count(table.n_rows()));
    if table.n_rows() < n_bins {
        return Err(Error::TooFewRows {
            need: n_bins,
            got: table.n_rows(),
        });
    }

    let sequences: Vec<SymbolSequence> = table
        .columns()
        .iter()
        .map(|c| symbolize(&c.values, n_bins, options.strategy))
        .collect::<Result<_>>()?;

    let labels: Vec<String> = table.columns().iter().map(|c| c.name.clone()).collect();
    let degenerate_columns: Vec<String> = labels
        .iter()
        .zip(&sequences)
        .filter(|(_, s)| s.is_degenerate())
        .map(|(l, _)| l.clone())
        .collect();

    let mut values = vec![0.0; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let cell = if sequences[i].is_degenerate() || sequences[j].is_degenerate() {
                0.0
            } else {
                match options.metric {
                    DependencyMetric::Mi => mutual_information(&sequences[i], &sequences[j])?,
                    DependencyMetric::NmiSqrt => nmi_sqrt(&sequences[i], &sequences[j])?,
                }
            };
            values[i * k + j] = cell;
            values[j * k + i] = cell;
        }
    }

    Ok(DependencyMatrix {
        labels,
        values,
        metric: options.metric,
        degenerate_columns,
    })
}

/// Candidate columns ordered by their dependence with `target`, descending.
/// Ties keep the matrix column order (stable).
pub fn rank_inputs(matrix: &DependencyMatrix, target: &str) -> Result<Vec<(String, f64)>> {
    let t = matrix.index_of(target)?;
    let mut ranked: Vec<(String, f64)> = matrix
        .labels()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != t)
        .map(|(i, l)| (l.clone(), matrix.value(t, i)))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite metric values"));
    Ok(ranked)
}
