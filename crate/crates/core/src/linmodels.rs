//! ARX / ARMAX model structures, estimation, simulation, one-step
//! prediction, and the normalized model-fit score.
//!
//! The model family is
//!
//! ```text
//! y_t + ar[0] y_{t-1} + ... + ar[na-1] y_{t-na}
//!   = sum_j ( b_j[0] x_{j,t-d_j} + ... + b_j[m_j] x_{j,t-d_j-m_j} )
//!   + e_t + ma[0] e_{t-1} + ... + ma[nc-1] e_{t-nc}
//! ```
//!
//! ARX is the special case with an empty moving-average polynomial. ARMAX
//! estimation uses extended least squares (pseudo-linear regression)
//! initialized by an ARX fit, with an optional prediction-error refinement
//! step. Each input carries a free leading coefficient so channels can be
//! scaled against the output.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesTable;
use crate::error::{Error, Result};
use crate::lstsq;

/// One exogenous input channel: `coeffs[k]` multiplies `x_{t-delay-k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputChannel {
    pub name: String,
    pub coeffs: Vec<f64>,
    pub delay: usize,
}

/// Polynomial (ARX/ARMAX family) model.
///
/// `ar` and `ma` store the coefficients after the implicit leading 1 of the
/// autoregressive and moving-average polynomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub output_name: String,
    pub ar: Vec<f64>,
    pub inputs: Vec<InputChannel>,
    pub ma: Vec<f64>,
    pub noise_variance: f64,
}

/// Versioned on-disk wrapper for [`PolyModel`] JSON documents.
#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    library_version: String,
    model: PolyModel,
}

const MODEL_FORMAT: &str = "poly-model/1";

impl PolyModel {
    pub fn new(
        output_name: impl Into<String>,
        ar: Vec<f64>,
        inputs: Vec<InputChannel>,
        ma: Vec<f64>,
        noise_variance: f64,
    ) -> Result<Self> {
        if !(noise_variance >= 0.0) {
            return Err(Error::InvalidArgument {
                reason: format!("noise variance must be nonnegative, got {noise_variance}"),
            });
        }
        for ch in &inputs {
            if ch.coeffs.is_empty() {
                return Err(Error::InvalidArgument {
                    reason: format!("input `{}` has no coefficients", ch.name),
                });
            }
        }
        Ok(Self {
            output_name: output_name.into(),
            ar,
            inputs,
            ma,
            noise_variance,
        })
    }

    pub fn ar_order(&self) -> usize {
        self.ar.len()
    }

    pub fn ma_order(&self) -> usize {
        self.ma.len()
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|c| c.name.as_str()).collect()
    }

    /// Samples needed before the first index where every lag is in range.
    pub fn startup_lag(&self) -> usize {
        let input_depth = self
            .inputs
            .iter()
            .map(|c| c.delay + c.coeffs.len() - 1)
            .max()
            .unwrap_or(0);
        self.ar_order().max(input_depth)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format: MODEL_FORMAT.into(),
            library_version: crate::VERSION.into(),
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::InvalidArgument {
                reason: format!("unsupported model format `{}`", doc.format),
            });
        }
        Ok(doc.model)
    }
}

/// Ridge penalty applied to every estimated coefficient (the implicit
/// leading 1s are never penalized).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    #[default]
    Off,
    Fixed(f64),
    /// Weight chosen by generalized cross-validation on a log grid.
    Gcv,
}

impl Ridge {
    fn resolve(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        match self {
            Ridge::Off => 0.0,
            Ridge::Fixed(v) => *v,
            Ridge::Gcv => lstsq::gcv_lambda(x, y, &lstsq::default_gcv_grid()),
        }
    }
}

/// Estimation options for [`fit_arx`] / [`fit_armax`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Autoregressive order (number of output lags).
    pub ar_order: usize,
    /// Input polynomial degree; each input contributes `input_order + 1`
    /// coefficients.
    pub input_order: usize,
    /// Moving-average order; 0 reduces ARMAX to ARX.
    pub ma_order: usize,
    /// Input-output delay, applied to every input channel.
    pub delay: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the parameter-vector change (2-norm).
    pub tolerance: f64,
    pub ridge: Ridge,
    /// Gauss-Newton prediction-error refinement after ELS convergence.
    pub refine: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        // fourth order, unit delay: the reference configuration
        Self {
            ar_order: 4,
            input_order: 4,
            ma_order: 4,
            delay: 1,
            max_iterations: 50,
            tolerance: 1e-8,
            ridge: Ridge::Off,
            refine: false,
        }
    }
}

/// Which prediction produced a reported fit value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    FreeRun,
    OneStep,
}

/// Fit scores of one model on one evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub name: String,
    pub free_run_fit_pct: f64,
    pub one_step_fit_pct: f64,
}

/// Outcome of one estimation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: PolyModel,
    pub iterations_used: usize,
    pub converged: bool,
    pub residual_variance: f64,
    /// Ridge weight actually used (0 when off; the GCV choice when automatic).
    pub ridge_lambda: f64,
    /// Mode of the headline `train_fit_pct` / `test_fit_pct` numbers.
    pub prediction_mode: PredictionMode,
    pub train_fit_pct: f64,
    pub test_fit_pct: Option<f64>,
    /// Per-split scores filled in by evaluation helpers.
    pub test_evaluations: Vec<TestEvaluation>,
}

/// Lagged regressor matrix and aligned target vector.
pub struct Regressors {
    pub matrix: DMatrix<f64>,
    pub targets: DVector<f64>,
    /// First sample index with every lag in range; rows cover `start..n_rows`.
    pub start: usize,
}

/// Column layout: `[-y_{t-1} .. -y_{t-ar_order}]`, then per input
/// `[x_{t-delay} .. x_{t-delay-input_order}]`. Rows with out-of-range lags
/// are excluded rather than zero-padded.
pub fn build_regressors(
    table: &TimeSeriesTable,
    output: &str,
    inputs: &[&str],
    ar_order: usize,
    input_order: usize,
    delay: usize,
) -> Result<Regressors> {
    let y = table.values(output)?;
    let xs: Vec<&[f64]> = inputs
        .iter()
        .map(|name| table.values(name))
        .collect::<Result<_>>()?;

    let input_depth = if xs.is_empty() { 0 } else { delay + input_order };
    let start = ar_order.max(input_depth);
    let n = y.len();
    if start >= n {
        return Err(Error::InsufficientSamples {
            order: start,
            need: start + 1,
            got: n,
        });
    }
    let rows = n - start;
    let cols = ar_order + xs.len() * (input_order + 1);
    if rows < cols {
        return Err(Error::InsufficientSamples {
            order: start,
            need: cols + start,
            got: n,
        });
    }

    let mut matrix = DMatrix::zeros(rows, cols);
    let mut targets = DVector::zeros(rows);
    for (row, t) in (start..n).enumerate() {
        let mut col = 0;
        for i in 1..=ar_order {
            matrix[(row, col)] = -y[t - i];
            col += 1;
        }
        for x in &xs {
            for k in 0..=input_order {
                matrix[(row, col)] = x[t - delay - k];
                col += 1;
            }
        }
        targets[row] = y[t];
    }
    Ok(Regressors {
        matrix,
        targets,
        start,
    })
}

fn unpack_parameters(
    theta: &DVector<f64>,
    output: &str,
    inputs: &[&str],
    opts: &FitOptions,
    noise_variance: f64,
) -> PolyModel {
    let na = opts.ar_order;
    let nb1 = opts.input_order + 1;
    let ar = (0..na).map(|i| theta[i]).collect();
    let channels = inputs
        .iter()
        .enumerate()
        .map(|(j, name)| InputChannel {
            name: (*name).to_string(),
            coeffs: (0..nb1).map(|k| theta[na + j * nb1 + k]).collect(),
            delay: opts.delay,
        })
        .collect();
    let ma = (0..opts.ma_order)
        .map(|l| theta[na + inputs.len() * nb1 + l])
        .collect();
    PolyModel {
        output_name: output.to_string(),
        ar,
        inputs: channels,
        ma,
        noise_variance,
    }
}

/// Least-squares ARX fit. The headline train fit is a seeded free-run score.
pub fn fit_arx(
    table: &TimeSeriesTable,
    output: &str,
    inputs: &[&str],
    opts: &FitOptions,
) -> Result<FitReport> {
    let opts = FitOptions {
        ma_order: 0,
        ..opts.clone()
    };
    fit_armax(table, output, inputs, &opts)
}

const DIVERGENCE_NORM: f64 = 1e9;

/// Extended-least-squares ARMAX fit (pseudo-linear regression).
///
/// Starts from the ARX solution, then alternates residual reconstruction
/// with a ridge-aware least-squares solve on the residual-augmented
/// regressor until the parameter change drops below `opts.tolerance`.
/// With `ma_order == 0` this is exactly the ARX fit.
pub fn fit_armax(
    table: &TimeSeriesTable,
    output: &str,
    inputs: &[&str],
    opts: &FitOptions,
) -> Result<FitReport> {
    if opts.ar_order == 0 && inputs.is_empty() {
        return Err(Error::InvalidArgument {
            reason: "model needs an autoregressive part or at least one input".into(),
        });
    }
    if !(opts.tolerance > 0.0) {
        return Err(Error::InvalidArgument {
            reason: format!("tolerance must be positive, got {}", opts.tolerance),
        });
    }
    let base = build_regressors(
        table,
        output,
        inputs,
        opts.ar_order,
        opts.input_order,
        opts.delay,
    )?;
    let y = table.values(output)?;
    let n = y.len();
    let start = base.start;
    let lambda = opts.ridge.resolve(&base.matrix, &base.targets);

    // ARX stage.
    let arx = lstsq::solve(&base.matrix, &base.targets, lambda)?;
    let mut theta = arx.coeffs.clone();
    let mut iterations = 0usize;
    let mut converged = true;

    // Full-length residual buffer, zero where undefined.
    let mut residuals = vec![0.0; n];
    let fitted = &base.matrix * &theta;
    for (row, t) in (start..n).enumerate() {
        residuals[t] = y[t] - fitted[row];
    }

    if opts.ma_order > 0 {
        converged = false;
        let base_cols = base.matrix.ncols();
        let cols = base_cols + opts.ma_order;
        // widen theta with zero MA coefficients
        let mut theta_full = DVector::zeros(cols);
        theta_full.rows_mut(0, base_cols).copy_from(&theta);
        theta = theta_full;

        for iter in 1..=opts.max_iterations {
            let mut aug = DMatrix::zeros(n - start, cols);
            aug.columns_mut(0, base_cols).copy_from(&base.matrix);
            for (row, t) in (start..n).enumerate() {
                for l in 1..=opts.ma_order {
                    let v = if t >= l && t - l >= start {
                        residuals[t - l]
                    } else {
                        0.0
                    };
                    aug[(row, base_cols + l - 1)] = v;
                }
            }
            let mut next = lstsq::solve(&aug, &base.targets, lambda)?.coeffs;
            if !next.iter().all(|v| v.is_finite()) || next.norm() > DIVERGENCE_NORM {
                return Err(Error::Divergence {
                    iteration: iter,
                    norm: next.norm(),
                    last_stable_norm: theta.norm(),
                });
            }
            // A non-invertible MA estimate would blow up the residual
            // recursion; reflect its roots inside the unit circle.
            {
                let mut ma: Vec<f64> = (0..opts.ma_order)
                    .map(|l| next[base_cols + l])
                    .collect();
                enforce_invertible_ma(&mut ma);
                for (l, v) in ma.into_iter().enumerate() {
                    next[base_cols + l] = v;
                }
            }
            let delta = (&next - &theta).norm();
            theta = next;
            iterations = iter;

            // Recursive residual pass with the fresh parameters.
            recompute_residuals(
                &mut residuals,
                y,
                &base.matrix,
                &theta,
                base_cols,
                opts.ma_order,
                start,
            );
            if residuals.iter().any(|r| !r.is_finite()) {
                return Err(Error::Divergence {
                    iteration: iter,
                    norm: f64::INFINITY,
                    last_stable_norm: theta.norm(),
                });
            }

            if delta < opts.tolerance {
                converged = true;
                break;
            }
        }
    }

    if opts.refine && opts.ma_order > 0 {
        theta = refine_prediction_error(
            &base.matrix,
            y,
            theta,
            opts.ma_order,
            start,
            lambda,
        );
        recompute_residuals(
            &mut residuals,
            y,
            &base.matrix,
            &theta,
            base.matrix.ncols(),
            opts.ma_order,
            start,
        );
    }

    let used = n - start;
    let residual_variance =
        residuals[start..].iter().map(|r| r * r).sum::<f64>() / used as f64;

    let model = unpack_parameters(&theta, output, inputs, opts, residual_variance);
    let train_fit = free_run_fit(&model, table)?;

    Ok(FitReport {
        model,
        iterations_used: iterations,
        converged,
        residual_variance,
        ridge_lambda: lambda,
        prediction_mode: PredictionMode::FreeRun,
        train_fit_pct: train_fit,
        test_fit_pct: None,
        test_evaluations: Vec::new(),
    })
}

/// Reflects roots of `z^q + ma[0] z^{q-1} + ... + ma[q-1]` with magnitude
/// >= 1 to `1 / conj(root)`, rebuilding real coefficients, so the inverse
/// noise filter stays stable.
fn enforce_invertible_ma(ma: &mut [f64]) {
    let q = ma.len();
    if q == 0 {
        return;
    }
    let mut companion = DMatrix::zeros(q, q);
    for (i, th) in ma.iter().enumerate() {
        companion[(0, i)] = -th;
    }
    for i in 1..q {
        companion[(i, i - 1)] = 1.0;
    }
    let roots = companion.complex_eigenvalues();
    const MARGIN: f64 = 1.0 - 1e-6;
    if roots.iter().all(|r| r.norm() < 1.0) {
        return;
    }
    let reflected: Vec<nalgebra::Complex<f64>> = roots
        .iter()
        .map(|r| {
            let mag = r.norm();
            if mag >= 1.0 {
                r.conj() * (MARGIN / (mag * mag))
            } else {
                *r
            }
        })
        .collect();
    // rebuild monic polynomial from its roots
    let mut poly = vec![nalgebra::Complex::new(1.0, 0.0)];
    for r in &reflected {
        let mut next = vec![nalgebra::Complex::new(0.0, 0.0); poly.len() + 1];
        for (i, c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        poly = next;
    }
    for (i, v) in ma.iter_mut().enumerate() {
        *v = poly[i + 1].re;
    }
}

/// One-step residuals recomputed sequentially so MA regressor lags always
/// refer to the current parameter estimate.
fn recompute_residuals(
    residuals: &mut [f64],
    y: &[f64],
    base_matrix: &DMatrix<f64>,
    theta: &DVector<f64>,
    base_cols: usize,
    ma_order: usize,
    start: usize,
) {
    for r in residuals.iter_mut() {
        *r = 0.0;
    }
    for (row, t) in (start..y.len()).enumerate() {
        let mut pred = 0.0;
        for c in 0..base_cols {
            pred += base_matrix[(row, c)] * theta[c];
        }
        for l in 1..=ma_order {
            if t >= l && t - l >= start {
                pred += theta[base_cols + l - 1] * residuals[t - l];
            }
        }
        residuals[t] = y[t] - pred;
    }
}

/// Finite-difference Gauss-Newton on the one-step prediction errors.
/// Only steps that reduce the residual sum of squares are accepted.
fn refine_prediction_error(
    base_matrix: &DMatrix<f64>,
    y: &[f64],
    mut theta: DVector<f64>,
    ma_order: usize,
    start: usize,
    lambda: f64,
) -> DVector<f64> {
    let n = y.len();
    let base_cols = base_matrix.ncols();
    let residual_vec = |th: &DVector<f64>| -> DVector<f64> {
        let mut buf = vec![0.0; n];
        recompute_residuals(&mut buf, y, base_matrix, th, base_cols, ma_order, start);
        DVector::from_iterator(n - start, buf[start..].iter().cloned())
    };

    let mut errors = residual_vec(&theta);
    let mut rss = errors.norm_squared();
    for _ in 0..10 {
        let p = theta.len();
        let mut jacobian = DMatrix::zeros(errors.len(), p);
        for j in 0..p {
            let h = 1e-6 * theta[j].abs().max(1.0);
            let mut bumped = theta.clone();
            bumped[j] += h;
            let e_b = residual_vec(&bumped);
            for i in 0..errors.len() {
                jacobian[(i, j)] = (e_b[i] - errors[i]) / h;
            }
        }
        let neg_err = -&errors;
        let Ok(step) = lstsq::solve(&jacobian, &neg_err, lambda.max(1e-10)) else {
            break;
        };
        // backtracking line search
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..6 {
            let trial = &theta + &step.coeffs * scale;
            let e_t = residual_vec(&trial);
            let rss_t = e_t.norm_squared();
            if rss_t < rss {
                theta = trial;
                errors = e_t;
                let gain = rss - rss_t;
                rss = rss_t;
                improved = true;
                if gain < 1e-12 * rss.max(1.0) {
                    return theta;
                }
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    theta
}

/// Free-run simulation: the recursion feeds on its own past outputs, never
/// on measurements. `init` supplies pre-sample outputs (last element is
/// `y_{-1}`); absent values and pre-sample inputs are zero.
pub fn simulate(
    model: &PolyModel,
    inputs: &[&[f64]],
    init: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if inputs.len() != model.inputs.len() {
        return Err(Error::InvalidArgument {
            reason: format!(
                "model has {} input channels, got {} sequences",
                model.inputs.len(),
                inputs.len()
            ),
        });
    }
    let n = if let Some(first) = inputs.first() {
        for x in inputs {
            if x.len() != first.len() {
                return Err(Error::LengthMismatch {
                    left: first.len(),
                    right: x.len(),
                });
            }
        }
        first.len()
    } else {
        init.map(<[f64]>::len).unwrap_or(0)
    };
    if n == 0 && inputs.is_empty() {
        return Err(Error::InvalidArgument {
            reason: "simulation horizon is zero: no inputs and no init".into(),
        });
    }

    let init = init.unwrap_or(&[]);
    let past_output = |out: &[f64], t: isize| -> f64 {
        if t >= 0 {
            out[t as usize]
        } else {
            let k = init.len() as isize + t;
            if k >= 0 {
                init[k as usize]
            } else {
                0.0
            }
        }
    };

    let mut out = Vec::with_capacity(n);
    for t in 0..n as isize {
        let mut value = 0.0;
        for (i, phi) in model.ar.iter().enumerate() {
            value -= phi * past_output(&out, t - 1 - i as isize);
        }
        for (channel, x) in model.inputs.iter().zip(inputs) {
            for (k, b) in channel.coeffs.iter().enumerate() {
                let idx = t - channel.delay as isize - k as isize;
                if idx >= 0 {
                    value += b * x[idx as usize];
                }
            }
        }
        out.push(value);
    }
    Ok(out)
}

/// One-step-ahead predictions from measured lags, with MA residuals
/// reconstructed recursively. Returns the first predicted index and the
/// predictions for `start..n_rows`.
pub struct OneStepPrediction {
    pub start: usize,
    pub values: Vec<f64>,
}

pub fn predict_one_step(model: &PolyModel, table: &TimeSeriesTable) -> Result<OneStepPrediction> {
    let y = table.values(&model.output_name)?;
    let xs: Vec<&[f64]> = model
        .inputs
        .iter()
        .map(|c| table.values(&c.name))
        .collect::<Result<_>>()?;
    let start = model.startup_lag();
    let n = y.len();
    if start >= n {
        return Err(Error::InsufficientSamples {
            order: start,
            need: start + 1,
            got: n,
        });
    }

    let mut residuals = vec![0.0; n];
    let mut values = Vec::with_capacity(n - start);
    for t in start..n {
        let mut pred = 0.0;
        for (i, phi) in model.ar.iter().enumerate() {
            pred -= phi * y[t - 1 - i];
        }
        for (channel, x) in model.inputs.iter().zip(&xs) {
            for (k, b) in channel.coeffs.iter().enumerate() {
                pred += b * x[t - channel.delay - k];
            }
        }
        for (l, th) in model.ma.iter().enumerate() {
            if t >= l + 1 && t - l - 1 >= start {
                pred += th * residuals[t - l - 1];
            }
        }
        residuals[t] = y[t] - pred;
        values.push(pred);
    }
    Ok(OneStepPrediction { start, values })
}

/// Free-run forecast over a measured table: the first `startup_lag()`
/// outputs are seeded with measurements, then the recursion runs free on
/// measured inputs only. Returns a full-length series.
pub fn free_run_forecast(model: &PolyModel, table: &TimeSeriesTable) -> Result<Vec<f64>> {
    let y = table.values(&model.output_name)?;
    let xs: Vec<&[f64]> = model
        .inputs
        .iter()
        .map(|c| table.values(&c.name))
        .collect::<Result<_>>()?;
    let start = model.startup_lag();
    let n = y.len();
    if start >= n {
        return Err(Error::InsufficientSamples {
            order: start,
            need: start + 1,
            got: n,
        });
    }
    let mut out = y[..start].to_vec();
    for t in start..n {
        let mut value = 0.0;
        for (i, phi) in model.ar.iter().enumerate() {
            value -= phi * out[t - 1 - i];
        }
        for (channel, x) in model.inputs.iter().zip(&xs) {
            for (k, b) in channel.coeffs.iter().enumerate() {
                value += b * x[t - channel.delay - k];
            }
        }
        out.push(value);
    }
    Ok(out)
}

/// Seeded free-run forecast scored with [`model_fit`] over the full series.
pub fn free_run_fit(model: &PolyModel, table: &TimeSeriesTable) -> Result<f64> {
    let y = table.values(&model.output_name)?;
    let forecast = free_run_forecast(model, table)?;
    model_fit(y, &forecast)
}

/// One-step predictions scored with [`model_fit`] over the usable rows.
pub fn one_step_fit(model: &PolyModel, table: &TimeSeriesTable) -> Result<f64> {
    let y = table.values(&model.output_name)?;
    let pred = predict_one_step(model, table)?;
    model_fit(&y[pred.start..], &pred.values)
}

/// Normalized model-fit score `100 * (1 - ||y - y_hat|| / ||y - mean(y)||)`.
///
/// 100 is a perfect match; 0 matches the mean predictor; negative values
/// are worse than predicting the mean.
pub fn model_fit(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: y_hat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument {
            reason: "model fit needs nonempty sequences".into(),
        });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let denom = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::ConstantReference);
    }
    let num = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * (1.0 - num / denom))
}

/// Stability report for the autoregressive polynomial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stable: bool,
    /// Magnitudes of the characteristic roots, descending.
    pub root_magnitudes: Vec<f64>,
}

/// Roots of `z^na + ar[0] z^{na-1} + ... + ar[na-1]`; stable iff all lie
/// strictly inside the unit circle.
pub fn check_stability(model: &PolyModel) -> StabilityReport {
    let na = model.ar_order();
    if na == 0 {
        return StabilityReport {
            stable: true,
            root_magnitudes: vec![],
        };
    }
    let mut companion = DMatrix::zeros(na, na);
    for (i, phi) in model.ar.iter().enumerate() {
        companion[(0, i)] = -phi;
    }
    for i in 1..na {
        companion[(i, i - 1)] = 1.0;
    }
    let mut magnitudes: Vec<f64> = companion
        .complex_eigenvalues()
        .iter()
        .map(|e| e.norm())
        .collect();
    magnitudes.sort_by(|a, b| b.partial_cmp(a).expect("finite magnitudes"));
    StabilityReport {
        stable: magnitudes.first().map_or(true, |&m| m < 1.0),
        root_magnitudes: magnitudes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Column;
    use approx::assert_abs_diff_eq;
    use rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(cols: Vec<(&str, Vec<f64>)>) -> TimeSeriesTable {
        TimeSeriesTable::new(
            cols.into_iter().map(|(n, v)| Column::new(n, v)).collect(),
            1.0,
        )
        .unwrap()
    }

    fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        let u1 = uniform(rng).max(1e-300);
        let u2 = uniform(rng);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[test]
    fn regressors_pure_ar() {
        let t = table(vec![("y", vec![1.0, 2.0, 3.0, 4.0])]);
        let r = build_regressors(&t, "y", &[], 1, 0, 0).unwrap();
        assert_eq!(r.start, 1);
        assert_eq!(r.matrix.nrows(), 3);
        assert_eq!(r.matrix[(0, 0)], -1.0);
        assert_eq!(r.matrix[(1, 0)], -2.0);
        assert_eq!(r.matrix[(2, 0)], -3.0);
        assert_eq!(r.targets.as_slice(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn regressors_single_delayed_input() {
        let t = table(vec![
            ("y", vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]),
            ("x", vec![10.0, 11.0, 12.0, 13.0, 14.0, 15.0]),
        ]);
        let r = build_regressors(&t, "y", &["x"], 1, 0, 1).unwrap();
        // row t=1: [-y_0, x_0]
        assert_eq!(r.start, 1);
        assert_eq!(r.matrix.ncols(), 2);
        assert_eq!(r.matrix[(0, 1)], 10.0);
        assert_eq!(r.matrix[(4, 1)], 14.0);
    }

    #[test]
    fn regressors_hand_built_siso() {
        // na=2, nb=1 (2 coeffs), delay=1 -> start = max(2, 1+1) = 2
        let y = vec![1.0, 2.0, 4.0, 7.0, 11.0, 16.0];
        let x = vec![0.5, 1.5, 2.5, 3.5, 4.5, 5.5];
        let t = table(vec![("y", y), ("x", x)]);
        let r = build_regressors(&t, "y", &["x"], 2, 1, 1).unwrap();
        assert_eq!(r.start, 2);
        assert_eq!(r.matrix.nrows(), 4);
        // row for t=2: [-y1, -y0, x1, x0]
        let row0: Vec<f64> = (0..4).map(|c| r.matrix[(0, c)]).collect();
        assert_eq!(row0, vec![-2.0, -1.0, 1.5, 0.5]);
        // row for t=5: [-y4, -y3, x4, x3]
        let row3: Vec<f64> = (0..4).map(|c| r.matrix[(3, c)]).collect();
        assert_eq!(row3, vec![-11.0, -7.0, 4.5, 3.5]);
        assert_eq!(r.targets.as_slice(), &[4.0, 7.0, 11.0, 16.0]);
    }

    #[test]
    fn regressors_insufficient_rows() {
        let t = table(vec![("y", vec![1.0, 2.0, 3.0])]);
        assert!(build_regressors(&t, "y", &[], 3, 0, 0).is_err());
    }

    fn noiseless_arx_data(n: usize) -> TimeSeriesTable {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut x = Vec::with_capacity(n);
        let mut y = vec![0.0; n];
        for _ in 0..n {
            x.push(gauss(&mut rng));
        }
        for t in 1..n {
            y[t] = 0.5 * y[t - 1] + x[t - 1];
        }
        table(vec![("y", y), ("x", x)])
    }

    #[test]
    fn arx_recovers_noiseless_system() {
        let t = noiseless_arx_data(50);
        let opts = FitOptions {
            ar_order: 1,
            input_order: 0,
            ma_order: 0,
            delay: 1,
            ..FitOptions::default()
        };
        let report = fit_arx(&t, "y", &["x"], &opts).unwrap();
        assert_abs_diff_eq!(report.model.ar[0], -0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(report.model.inputs[0].coeffs[0], 1.0, epsilon = 1e-8);
        assert!(report.converged);
        assert!(report.train_fit_pct > 99.99);
    }

    #[test]
    fn arx_residuals_orthogonal_to_regressors() {
        let t = armax_data(7, 200, &[-0.5], &[1.0], &[], 0.2);
        let r = build_regressors(&t, "y", &["x"], 2, 1, 1).unwrap();
        let sol = crate::lstsq::solve(&r.matrix, &r.targets, 0.0).unwrap();
        let resid = &r.targets - &r.matrix * &sol.coeffs;
        let cross = r.matrix.transpose() * resid;
        let scale = r.matrix.norm() * r.targets.norm();
        assert!(cross.norm() <= 1e-8 * scale.max(1.0));
    }

    #[test]
    fn arx_white_noise_coefficient_near_zero() {
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n = 2000;
            let y: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
            let t = table(vec![("y", y)]);
            let opts = FitOptions {
                ar_order: 1,
                input_order: 0,
                ma_order: 0,
                delay: 0,
                ..FitOptions::default()
            };
            let report = fit_arx(&t, "y", &[], &opts).unwrap();
            worst = worst.max(report.model.ar[0].abs());
        }
        assert!(worst < 3.0 / (2000f64).sqrt(), "worst |phi1| = {worst}");
    }

    #[test]
    fn arx_rank_deficiency_errors_without_ridge() {
        let t = noiseless_arx_data(60);
        let dup = table(vec![
            ("y", t.values("y").unwrap().to_vec()),
            ("x", t.values("x").unwrap().to_vec()),
            ("x2", t.values("x").unwrap().to_vec()),
        ]);
        let opts = FitOptions {
            ar_order: 1,
            input_order: 0,
            ma_order: 0,
            delay: 1,
            ..FitOptions::default()
        };
        let err = fit_arx(&dup, "y", &["x", "x2"], &opts).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
        let ridged = FitOptions {
            ridge: Ridge::Fixed(1e-6),
            ..opts
        };
        assert!(fit_arx(&dup, "y", &["x", "x2"], &ridged).is_ok());
    }

    fn armax_data(
        seed: u64,
        n: usize,
        ar: &[f64],
        b: &[f64],
        ma: &[f64],
        noise_std: f64,
    ) -> TimeSeriesTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        for _ in 0..n {
            x.push(gauss(&mut rng));
        }
        let mut e = Vec::with_capacity(n);
        for _ in 0..n {
            e.push(noise_std * gauss(&mut rng));
        }
        let mut y = vec![0.0; n];
        for t in 0..n {
            let mut v = e[t];
            for (i, phi) in ar.iter().enumerate() {
                if t > i {
                    v -= phi * y[t - 1 - i];
                }
            }
            for (k, bk) in b.iter().enumerate() {
                // delay 1
                if t >= k + 1 {
                    v += bk * x[t - 1 - k];
                }
            }
            for (l, th) in ma.iter().enumerate() {
                if t > l {
                    v += th * e[t - 1 - l];
                }
            }
            y[t] = v;
        }
        table(vec![("y", y), ("x", x)])
    }

    #[test]
    fn armax_with_zero_ma_equals_arx() {
        let t = armax_data(5, 300, &[-0.8], &[1.0, 0.3], &[], 0.05);
        let opts = FitOptions {
            ar_order: 2,
            input_order: 1,
            ma_order: 0,
            delay: 1,
            ..FitOptions::default()
        };
        let a = fit_arx(&t, "y", &["x"], &opts).unwrap();
        let b = fit_armax(&t, "y", &["x"], &opts).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(b.iterations_used, 0);
    }

    #[test]
    fn armax_recovers_synthetic_system() {
        // y_t = 0.7 y_{t-1} + 1.0 x_{t-1} + e_t + 0.5 e_{t-1}
        let t = armax_data(42, 4000, &[-0.7], &[1.0], &[0.5], 0.1);
        let opts = FitOptions {
            ar_order: 1,
            input_order: 0,
            ma_order: 1,
            delay: 1,
            max_iterations: 50,
            tolerance: 1e-9,
            ..FitOptions::default()
        };
        let report = fit_armax(&t, "y", &["x"], &opts).unwrap();
        assert!(report.converged, "ELS did not converge");
        assert_abs_diff_eq!(report.model.ar[0], -0.7, epsilon = 0.05);
        assert_abs_diff_eq!(report.model.inputs[0].coeffs[0], 1.0, epsilon = 0.05);
        assert_abs_diff_eq!(report.model.ma[0], 0.5, epsilon = 0.05);
    }

    #[test]
    fn armax_refinement_does_not_hurt() {
        let t = armax_data(9, 1500, &[-0.7], &[1.0], &[0.5], 0.2);
        let opts = FitOptions {
            ar_order: 1,
            input_order: 0,
            ma_order: 1,
            delay: 1,
            ..FitOptions::default()
        };
        let plain = fit_armax(&t, "y", &["x"], &opts).unwrap();
        let refined = fit_armax(
            &t,
            "y",
            &["x"],
            &FitOptions {
                refine: true,
                ..opts
            },
        )
        .unwrap();
        assert!(refined.residual_variance <= plain.residual_variance + 1e-12);
    }

    #[test]
    fn ridge_monotonically_shrinks_armax_coefficients() {
        let t = armax_data(3, 500, &[-0.6], &[1.0], &[0.4], 0.3);
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.01, 0.1, 1.0, 10.0] {
            let opts = FitOptions {
                ar_order: 2,
                input_order: 1,
                ma_order: 0,
                delay: 1,
                ridge: Ridge::Fixed(lambda),
                ..FitOptions::default()
            };
            let report = fit_arx(&t, "y", &["x"], &opts).unwrap();
            let norm: f64 = report
                .model
                .ar
                .iter()
                .chain(report.model.inputs[0].coeffs.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!(norm <= prev + 1e-12, "norm grew at lambda {lambda}");
            prev = norm;
        }
    }

    #[test]
    fn gcv_ridge_reports_chosen_lambda() {
        let t = armax_data(17, 400, &[-0.6], &[1.0], &[], 0.3);
        let opts = FitOptions {
            ar_order: 2,
            input_order: 1,
            ma_order: 0,
            delay: 1,
            ridge: Ridge::Gcv,
            ..FitOptions::default()
        };
        let report = fit_arx(&t, "y", &["x"], &opts).unwrap();
        assert!(report.ridge_lambda >= 1e-4 && report.ridge_lambda <= 1e2);
    }

    #[test]
    fn simulate_zero_inputs_zero_output() {
        let model = PolyModel::new(
            "y",
            vec![-0.5],
            vec![InputChannel {
                name: "x".into(),
                coeffs: vec![1.0],
                delay: 0,
            }],
            vec![],
            0.0,
        )
        .unwrap();
        let out = simulate(&model, &[&[0.0; 10]], None).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn simulate_impulse_is_geometric() {
        let model = PolyModel::new(
            "y",
            vec![-0.5],
            vec![InputChannel {
                name: "x".into(),
                coeffs: vec![1.0],
                delay: 0,
            }],
            vec![],
            0.0,
        )
        .unwrap();
        let mut impulse = vec![0.0; 6];
        impulse[0] = 1.0;
        let out = simulate(&model, &[&impulse], None).unwrap();
        let expect = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125];
        for (o, e) in out.iter().zip(expect) {
            assert_abs_diff_eq!(*o, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn simulate_linear_in_inputs() {
        let model = PolyModel::new(
            "y",
            vec![-1.2, 0.36],
            vec![InputChannel {
                name: "x".into(),
                coeffs: vec![1.0, -0.4],
                delay: 1,
            }],
            vec![],
            0.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x1: Vec<f64> = (0..100).map(|_| gauss(&mut rng)).collect();
        let x2: Vec<f64> = (0..100).map(|_| gauss(&mut rng)).collect();
        let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
        let s1 = simulate(&model, &[&x1], None).unwrap();
        let s2 = simulate(&model, &[&x2], None).unwrap();
        let s12 = simulate(&model, &[&sum], None).unwrap();
        for t in 0..100 {
            assert_abs_diff_eq!(s12[t], s1[t] + s2[t], epsilon = 1e-9);
        }
    }

    #[test]
    fn one_step_perfect_model_reproduces_measurements() {
        let t = armax_data(8, 100, &[-0.7], &[1.0], &[], 0.0);
        let model = PolyModel::new(
            "y",
            vec![-0.7],
            vec![InputChannel {
                name: "x".into(),
                coeffs: vec![1.0],
                delay: 1,
            }],
            vec![],
            0.0,
        )
        .unwrap();
        let y = t.values("y").unwrap();
        let pred = predict_one_step(&model, &t).unwrap();
        for (i, p) in pred.values.iter().enumerate() {
            assert_abs_diff_eq!(*p, y[pred.start + i], epsilon = 1e-10);
        }
    }

    #[test]
    fn one_step_matches_hand_recursion() {
        // na=1 model on 5 samples, by hand
        let y = vec![1.0, 2.0, 1.5, 3.0, 2.5];
        let t = table(vec![("y", y.clone())]);
        let model = PolyModel::new("y", vec![-0.5], vec![], vec![], 0.0).unwrap();
        let pred = predict_one_step(&model, &t).unwrap();
        assert_eq!(pred.start, 1);
        let expect: Vec<f64> = (1..5).map(|t| 0.5 * y[t - 1]).collect();
        for (p, e) in pred.values.iter().zip(expect) {
            assert_abs_diff_eq!(*p, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn one_step_beats_free_run_on_noisy_data() {
        let mut wins = 0;
        let trials = 10;
        for seed in 0..trials {
            let t = armax_data(200 + seed, 600, &[-0.85], &[1.0], &[0.3], 0.3);
            let opts = FitOptions {
                ar_order: 1,
                input_order: 0,
                ma_order: 1,
                delay: 1,
                ..FitOptions::default()
            };
            let report = fit_armax(&t, "y", &["x"], &opts).unwrap();
            let start = report.model.startup_lag();
            let y = t.values("y").unwrap();
            let free = free_run_forecast(&report.model, &t).unwrap();
            let one = predict_one_step(&report.model, &t).unwrap();
            let fit_free = model_fit(&y[start..], &free[start..]).unwrap();
            let fit_one = model_fit(&y[start..], &one.values).unwrap();
            if fit_one >= fit_free {
                wins += 1;
            }
        }
        assert!(wins * 2 > trials, "one-step won only {wins}/{trials}");
    }

    #[test]
    fn model_fit_exact_cases() {
        let y = [1.0, 2.0, 3.0];
        assert_abs_diff_eq!(model_fit(&y, &y).unwrap(), 100.0, epsilon = 1e-12);
        let mean = [2.0, 2.0, 2.0];
        assert_abs_diff_eq!(model_fit(&y, &mean).unwrap(), 0.0, epsilon = 1e-12);
        let y_hat = [1.0, 1.0, 3.0];
        assert_abs_diff_eq!(
            model_fit(&y, &y_hat).unwrap(),
            100.0 * (1.0 - 1.0 / 2.0f64.sqrt()),
            epsilon = 1e-9
        );
    }

    #[test]
    fn model_fit_constant_reference_is_error() {
        assert!(matches!(
            model_fit(&[2.0, 2.0], &[1.0, 3.0]).unwrap_err(),
            Error::ConstantReference
        ));
    }

    #[test]
    fn model_fit_affine_invariance() {
        let y = [1.0, 2.0, 3.0, 5.0];
        let y_hat = [1.1, 1.9, 3.2, 4.7];
        let f = model_fit(&y, &y_hat).unwrap();
        let ty: Vec<f64> = y.iter().map(|v| 3.0 * v + 7.0).collect();
        let th: Vec<f64> = y_hat.iter().map(|v| 3.0 * v + 7.0).collect();
        assert_abs_diff_eq!(model_fit(&ty, &th).unwrap(), f, epsilon = 1e-9);
    }

    #[test]
    fn stability_first_order() {
        let stable = PolyModel::new("y", vec![-0.5], vec![], vec![], 0.0).unwrap();
        let r = check_stability(&stable);
        assert!(r.stable);
        assert_abs_diff_eq!(r.root_magnitudes[0], 0.5, epsilon = 1e-12);

        let marginal = PolyModel::new("y", vec![-1.0], vec![], vec![], 0.0).unwrap();
        assert!(!check_stability(&marginal).stable);
    }

    #[test]
    fn stability_second_order() {
        let model = PolyModel::new("y", vec![-1.5, 0.7], vec![], vec![], 0.0).unwrap();
        let r = check_stability(&model);
        assert!(r.stable);
        for m in &r.root_magnitudes {
            assert_abs_diff_eq!(*m, 0.7f64.sqrt(), epsilon = 1e-9);
        }
    }

    #[test]
    fn model_json_round_trip() {
        let model = PolyModel::new(
            "temp",
            vec![-1.5, 0.7],
            vec![InputChannel {
                name: "light".into(),
                coeffs: vec![1.0, 0.5],
                delay: 1,
            }],
            vec![0.3],
            0.01,
        )
        .unwrap();
        let json = model.to_json().unwrap();
        let back = PolyModel::from_json(&json).unwrap();
        assert_eq!(model, back);
    }
}
