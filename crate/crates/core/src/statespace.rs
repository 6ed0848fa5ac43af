//! Discrete-time innovation-form state-space models of configurable order:
//! estimation from data via high-order ARX Markov parameters and a
//! Ho-Kalman (eigensystem) realization, plus simulation helpers.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesTable;
use crate::error::{Error, Result};
use crate::linmodels::{self, FitOptions, PolyModel, Ridge, TestEvaluation};
use crate::lstsq;

/// Innovation-form model
/// `x_{t+1} = A x_t + B u_t + K e_t`, `y_t = C x_t + D u_t + e_t`.
///
/// The gain `K` only participates in one-step prediction; free-run
/// simulation uses the deterministic part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SsWire", into = "SsWire")]
pub struct SSModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// 1 x n output map.
    pub c: RowDVector<f64>,
    /// 1 x m direct term.
    pub d: RowDVector<f64>,
    pub k: DVector<f64>,
    pub input_names: Vec<String>,
    pub output_name: String,
}

/// Wire form: matrices row-major with explicit dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SsWire {
    order: usize,
    n_inputs: usize,
    /// `order * order`, row-major.
    a: Vec<f64>,
    /// `order * n_inputs`, row-major.
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    k: Vec<f64>,
    input_names: Vec<String>,
    output_name: String,
}

impl From<SSModel> for SsWire {
    fn from(m: SSModel) -> Self {
        let row_major = |mat: &DMatrix<f64>| -> Vec<f64> {
            (0..mat.nrows())
                .flat_map(|i| (0..mat.ncols()).map(move |j| mat[(i, j)]))
                .collect()
        };
        SsWire {
            order: m.order(),
            n_inputs: m.n_inputs(),
            a: row_major(&m.a),
            b: row_major(&m.b),
            c: m.c.iter().cloned().collect(),
            d: m.d.iter().cloned().collect(),
            k: m.k.iter().cloned().collect(),
            input_names: m.input_names,
            output_name: m.output_name,
        }
    }
}

impl TryFrom<SsWire> for SSModel {
    type Error = Error;

    fn try_from(w: SsWire) -> Result<Self> {
        let (n, m) = (w.order, w.n_inputs);
        if w.a.len() != n * n || w.b.len() != n * m {
            return Err(Error::InvalidArgument {
                reason: format!(
                    "matrix payload sizes do not match order {n} and {m} inputs"
                ),
            });
        }
        SSModel::new(
            DMatrix::from_row_slice(n, n, &w.a),
            DMatrix::from_row_slice(n, m, &w.b),
            RowDVector::from_row_slice(&w.c),
            RowDVector::from_row_slice(&w.d),
            DVector::from_column_slice(&w.k),
            w.input_names,
            w.output_name,
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SsDocument {
    format: String,
    library_version: String,
    model: SSModel,
}

const SS_FORMAT: &str = "state-space-model/1";

impl SSModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: RowDVector<f64>,
        d: RowDVector<f64>,
        k: DVector<f64>,
        input_names: Vec<String>,
        output_name: impl Into<String>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n || b.nrows() != n || c.len() != n || d.len() != m || k.len() != n {
            return Err(Error::InvalidArgument {
                reason: format!(
                    "inconsistent state-space dimensions: A {}x{}, B {}x{}, C {}, D {}, K {}",
                    a.nrows(),
                    a.ncols(),
                    b.nrows(),
                    b.ncols(),
                    c.len(),
                    d.len(),
                    k.len()
                ),
            });
        }
        if input_names.len() != m {
            return Err(Error::InvalidArgument {
                reason: format!("{} input names for {m} input columns", input_names.len()),
            });
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            k,
            input_names,
            output_name: output_name.into(),
        })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    /// Largest eigenvalue magnitude of `A`.
    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// Markov parameters `h_0 = D`, `h_k = C A^{k-1} B` as 1 x m rows.
    pub fn markov_parameters(&self, count: usize) -> Vec<RowDVector<f64>> {
        let mut params = Vec::with_capacity(count);
        if count == 0 {
            return params;
        }
        params.push(self.d.clone());
        let mut ca = self.c.clone();
        for _ in 1..count {
            params.push(&ca * &self.b);
            ca = &ca * &self.a;
        }
        params
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = SsDocument {
            format: SS_FORMAT.into(),
            library_version: crate::VERSION.into(),
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SsDocument = serde_json::from_str(text)?;
        if doc.format != SS_FORMAT {
            return Err(Error::InvalidArgument {
                reason: format!("unsupported model format `{}`", doc.format),
            });
        }
        Ok(doc.model)
    }
}

/// Deterministic state recursion with zero (or given) initial state.
pub fn simulate_ss(
    model: &SSModel,
    inputs: &[&[f64]],
    initial_state: Option<&DVector<f64>>,
) -> Result<Vec<f64>> {
    if inputs.len() != model.n_inputs() {
        return Err(Error::InvalidArgument {
            reason: format!(
                "model has {} input channels, got {} sequences",
                model.n_inputs(),
                inputs.len()
            ),
        });
    }
    let n_steps = inputs.first().map(|x| x.len()).unwrap_or(0);
    for x in inputs {
        if x.len() != n_steps {
            return Err(Error::LengthMismatch {
                left: n_steps,
                right: x.len(),
            });
        }
    }
    if n_steps == 0 {
        return Err(Error::InvalidArgument {
            reason: "simulation horizon is zero".into(),
        });
    }
    let mut state = match initial_state {
        Some(x0) => {
            if x0.len() != model.order() {
                return Err(Error::InvalidArgument {
                    reason: format!(
                        "initial state has {} entries for order {}",
                        x0.len(),
                        model.order()
                    ),
                });
            }
            x0.clone()
        }
        None => DVector::zeros(model.order()),
    };
    let mut out = Vec::with_capacity(n_steps);
    let m = model.n_inputs();
    let mut u = DVector::zeros(m);
    for t in 0..n_steps {
        for (j, x) in inputs.iter().enumerate() {
            u[j] = x[t];
        }
        let y = (&model.c * &state)[0] + (&model.d * &u)[0];
        out.push(y);
        state = &model.a * &state + &model.b * &u;
    }
    Ok(out)
}

/// One-step predictions using the innovation gain, starting from a zero
/// state estimate.
pub fn predict_one_step_ss(model: &SSModel, table: &TimeSeriesTable) -> Result<Vec<f64>> {
    let y = table.values(&model.output_name)?;
    let xs: Vec<&[f64]> = model
        .input_names
        .iter()
        .map(|name| table.values(name))
        .collect::<Result<_>>()?;
    let m = model.n_inputs();
    let mut state = DVector::zeros(model.order());
    let mut u = DVector::zeros(m);
    let mut out = Vec::with_capacity(y.len());
    for t in 0..y.len() {
        for (j, x) in xs.iter().enumerate() {
            u[j] = x[t];
        }
        let pred = (&model.c * &state)[0] + (&model.d * &u)[0];
        out.push(pred);
        let innovation = y[t] - pred;
        state = &model.a * &state + &model.b * &u + &model.k * innovation;
    }
    Ok(out)
}

/// Least-squares estimate of the initial state that best explains the first
/// `horizon` outputs given the measured inputs, so free-run scores are not
/// dominated by an arbitrary zero-state transient.
pub fn estimate_initial_state(
    model: &SSModel,
    table: &TimeSeriesTable,
    horizon: usize,
) -> Result<DVector<f64>> {
    let y = table.values(&model.output_name)?;
    let xs: Vec<&[f64]> = model
        .input_names
        .iter()
        .map(|name| table.values(name))
        .collect::<Result<_>>()?;
    let n = model.order();
    let horizon = horizon.min(y.len());
    if horizon < n {
        return Err(Error::InsufficientSamples {
            order: n,
            need: n,
            got: horizon,
        });
    }
    // forced response with zero initial state
    let truncated: Vec<&[f64]> = xs.iter().map(|x| &x[..horizon]).collect();
    let forced = simulate_ss(model, &truncated, None)?;
    // y_t - forced_t = C A^t x0
    let mut rows = DMatrix::zeros(horizon, n);
    let mut rhs = DVector::zeros(horizon);
    let mut ca = model.c.clone();
    for t in 0..horizon {
        rows.row_mut(t).copy_from(&ca);
        rhs[t] = y[t] - forced[t];
        ca = &ca * &model.a;
    }
    // tiny ridge: an unobservable mode direction falls back to zero
    Ok(lstsq::solve(&rows, &rhs, 1e-9)?.coeffs)
}

/// Free-run simulation over a measured table with an estimated initial
/// state, scored with the normalized model-fit score.
pub fn free_run_fit_ss(model: &SSModel, table: &TimeSeriesTable) -> Result<f64> {
    let y = table.values(&model.output_name)?;
    let xs: Vec<&[f64]> = model
        .input_names
        .iter()
        .map(|name| table.values(name))
        .collect::<Result<_>>()?;
    let horizon = (4 * model.order() + 8).min(y.len());
    let x0 = estimate_initial_state(model, table, horizon)?;
    let sim = simulate_ss(model, &xs, Some(&x0))?;
    linmodels::model_fit(y, &sim)
}

/// One-step predictions scored with the normalized model-fit score.
pub fn one_step_fit_ss(model: &SSModel, table: &TimeSeriesTable) -> Result<f64> {
    let y = table.values(&model.output_name)?;
    let pred = predict_one_step_ss(model, table)?;
    linmodels::model_fit(y, &pred)
}

/// Exact observer-canonical realization of an ARX model (empty MA part).
///
/// Simulating the result reproduces `linmodels::simulate` of the source
/// model; this constructor is part of the cross-checking test surface.
pub fn from_poly(model: &PolyModel) -> Result<SSModel> {
    if model.ma_order() != 0 {
        return Err(Error::InvalidArgument {
            reason: "only ARX models (empty MA polynomial) have an exact direct realization"
                .into(),
        });
    }
    let m = model.inputs.len();
    let n = model.startup_lag().max(1);

    // zero-padded AR coefficients a_1..a_n
    let mut a_coeffs = vec![0.0; n];
    for (i, phi) in model.ar.iter().enumerate() {
        a_coeffs[i] = *phi;
    }
    // per-channel input coefficients realigned to lags 0..=n
    let mut b_coeffs = vec![vec![0.0; n + 1]; m];
    for (j, channel) in model.inputs.iter().enumerate() {
        for (k, coeff) in channel.coeffs.iter().enumerate() {
            b_coeffs[j][channel.delay + k] = *coeff;
        }
    }

    // observer canonical form: first column -a_i, superdiagonal identity
    let mut a = DMatrix::zeros(n, n);
    for (i, ai) in a_coeffs.iter().enumerate() {
        a[(i, 0)] = -ai;
    }
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }

    let mut b = DMatrix::zeros(n, m);
    let mut d = RowDVector::zeros(m);
    for j in 0..m {
        d[j] = b_coeffs[j][0];
        for i in 0..n {
            b[(i, j)] = b_coeffs[j][i + 1] - a_coeffs[i] * b_coeffs[j][0];
        }
    }
    let mut c = RowDVector::zeros(n);
    c[0] = 1.0;

    SSModel::new(
        a,
        b,
        c,
        d,
        DVector::zeros(n),
        model.input_names().iter().map(|s| s.to_string()).collect(),
        model.output_name.clone(),
    )
}

/// Options for [`fit_ss`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsOptions {
    /// Block-Hankel horizon; `None` selects `max(order + 2, 12)`.
    pub hankel_horizon: Option<usize>,
    /// Small ridge weight for the internal high-order ARX stage, which is
    /// routinely ill-conditioned.
    pub arx_ridge: f64,
    /// Gauss-Newton refinement of the innovation gain after realization.
    pub refine_gain: bool,
}

impl Default for SsOptions {
    fn default() -> Self {
        Self {
            hankel_horizon: None,
            arx_ridge: 1e-8,
            refine_gain: false,
        }
    }
}

/// Fit summary for a state-space estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsFitReport {
    pub order: usize,
    pub spectral_radius: f64,
    pub stable: bool,
    pub train_fit_pct: f64,
    pub test_evaluations: Vec<TestEvaluation>,
}

/// Two-stage state-space estimation.
///
/// 1. A high-order ARX fit (order `2n + 5`, zero delay) captures the
///    impulse-response (Markov) parameters.
/// 2. SVD of the block-Hankel matrix of those parameters, truncated to rank
///    `n`, realizes balanced `A`, `B`, `C` (`D` is the direct term); the
///    innovation gain is regressed from observability-stack state estimates.
///
/// An unstable realized `A` is allowed but flagged in the report.
pub fn fit_ss(
    table: &TimeSeriesTable,
    output: &str,
    inputs: &[&str],
    order: usize,
    opts: &SsOptions,
) -> Result<(SSModel, SsFitReport)> {
    if order == 0 {
        return Err(Error::InvalidArgument {
            reason: "state-space order must be at least 1".into(),
        });
    }
    let m = inputs.len().max(1);
    let need = 10 * order * (m + 2);
    let arx_order = 2 * order + 5;
    let usable = table.n_rows().saturating_sub(arx_order);
    if usable < need {
        return Err(Error::InsufficientSamples {
            order,
            need,
            got: usable,
        });
    }

    // Stage 1: high-order ARX Markov-parameter model.
    let arx_opts = FitOptions {
        ar_order: arx_order,
        input_order: arx_order,
        ma_order: 0,
        delay: 0,
        ridge: Ridge::Fixed(opts.arx_ridge),
        ..FitOptions::default()
    };
    let arx = linmodels::fit_arx(table, output, inputs, &arx_opts)?;

    // Stage 2: impulse responses give h_0 .. h_{2*horizon}.
    let horizon = opts.hankel_horizon.unwrap_or((order + 2).max(12));
    let n_markov = 2 * horizon + 1;
    let mut markov: Vec<RowDVector<f64>> = vec![RowDVector::zeros(inputs.len()); n_markov];
    for j in 0..inputs.len() {
        let mut impulse_inputs: Vec<Vec<f64>> = vec![vec![0.0; n_markov]; inputs.len()];
        impulse_inputs[j][0] = 1.0;
        let refs: Vec<&[f64]> = impulse_inputs.iter().map(Vec::as_slice).collect();
        let response = linmodels::simulate(&arx.model, &refs, None)?;
        for (k, h) in response.iter().enumerate() {
            markov[k][j] = *h;
        }
    }

    let model = realize(&markov, order, horizon, inputs, output)?;
    let model = attach_innovation_gain(model, table, opts)?;

    let train_fit = free_run_fit_ss(&model, table)?;
    let radius = model.spectral_radius();
    let report = SsFitReport {
        order,
        spectral_radius: radius,
        stable: radius < 1.0,
        train_fit_pct: train_fit,
        test_evaluations: Vec::new(),
    };
    Ok((model, report))
}

/// Ho-Kalman realization of order `n` from Markov parameters
/// (`markov[0] = D`, `markov[k] = C A^{k-1} B`).
pub fn realize(
    markov: &[RowDVector<f64>],
    order: usize,
    horizon: usize,
    input_names: &[&str],
    output_name: &str,
) -> Result<SSModel> {
    let m = markov.first().map(|h| h.len()).unwrap_or(0);
    if markov.len() < 2 * horizon + 1 || horizon < order {
        return Err(Error::InvalidArgument {
            reason: format!(
                "need 2*horizon+1 Markov parameters with horizon >= order; got {} rows, horizon {horizon}, order {order}",
                markov.len()
            ),
        });
    }

    let mut h0 = DMatrix::zeros(horizon, horizon * m);
    let mut h1 = DMatrix::zeros(horizon, horizon * m);
    for i in 0..horizon {
        for j in 0..horizon {
            for l in 0..m {
                h0[(i, j * m + l)] = markov[i + j + 1][l];
                h1[(i, j * m + l)] = markov[i + j + 2][l];
            }
        }
    }

    let svd = h0.svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sigma = &svd.singular_values;
    if sigma.len() < order {
        return Err(Error::HankelRankDeficient { order, ratio: 0.0 });
    }
    let ratio = sigma[order - 1] / sigma[0].max(f64::MIN_POSITIVE);
    if !(ratio > 1e-10) {
        return Err(Error::HankelRankDeficient { order, ratio });
    }

    let u_n = u.columns(0, order);
    let v_tn = v_t.rows(0, order);
    let sqrt_sigma = DMatrix::from_diagonal(&DVector::from_iterator(
        order,
        (0..order).map(|i| sigma[i].sqrt()),
    ));
    let inv_sqrt_sigma = DMatrix::from_diagonal(&DVector::from_iterator(
        order,
        (0..order).map(|i| 1.0 / sigma[i].sqrt()),
    ));

    let observability = u_n * &sqrt_sigma; // horizon x n
    let controllability = &sqrt_sigma * v_tn; // n x horizon*m

    let a = &inv_sqrt_sigma * u_n.transpose() * &h1 * v_tn.transpose() * &inv_sqrt_sigma;
    let b = controllability.columns(0, m).into_owned();
    let c = RowDVector::from_iterator(order, observability.row(0).iter().cloned());
    let d = markov[0].clone();

    SSModel::new(
        a,
        b,
        c,
        d,
        DVector::zeros(order),
        input_names.iter().map(|s| s.to_string()).collect(),
        output_name,
    )
}

/// Estimates the innovation gain by regressing the state-update residual on
/// the output innovation, with states reconstructed from an observability
/// stack over future outputs.
fn attach_innovation_gain(
    mut model: SSModel,
    table: &TimeSeriesTable,
    opts: &SsOptions,
) -> Result<SSModel> {
    let y = table.values(&model.output_name)?;
    let xs: Vec<&[f64]> = model
        .input_names
        .iter()
        .map(|name| table.values(name))
        .collect::<Result<_>>()?;
    let n = model.order();
    let m = model.n_inputs();
    let p = n + 2; // stack depth, slightly deep for conditioning
    let n_rows = y.len();
    if n_rows < p + 2 {
        return Ok(model);
    }

    let mut obs = DMatrix::zeros(p, n);
    let mut ca = model.c.clone();
    for i in 0..p {
        obs.row_mut(i).copy_from(&ca);
        ca = &ca * &model.a;
    }
    // impulse blocks g_0 = D, g_k = C A^{k-1} B
    let g = model.markov_parameters(p);

    // state estimates for t in 0 .. n_rows - p
    let t_max = n_rows - p;
    let obs_svd = obs.svd(true, true);
    let mut states = Vec::with_capacity(t_max);
    let mut stacked = DVector::zeros(p);
    for t in 0..t_max {
        for i in 0..p {
            let mut v = y[t + i];
            for k in 0..=i {
                for (j, x) in xs.iter().enumerate() {
                    v -= g[i - k][j] * x[t + k];
                }
            }
            stacked[i] = v;
        }
        let x_t = obs_svd
            .solve(&stacked, 1e-12)
            .map_err(|reason| Error::InvalidArgument {
                reason: reason.to_string(),
            })?;
        states.push(x_t);
    }

    // innovation regression: x_{t+1} - A x_t - B u_t = K e_t
    let mut num = DVector::zeros(n);
    let mut den = 0.0;
    let mut u = DVector::zeros(m);
    for t in 0..t_max.saturating_sub(1) {
        for (j, x) in xs.iter().enumerate() {
            u[j] = x[t];
        }
        let e = y[t] - ((&model.c * &states[t])[0] + (&model.d * &u)[0]);
        let w = &states[t + 1] - &model.a * &states[t] - &model.b * &u;
        num += w * e;
        den += e * e;
    }
    if den > 1e-12 {
        let regressed = num / den;
        // The smoothed-state regression is only approximate and can even
        // hand back a destabilizing gain. Keep the candidate (including a
        // shrunken one or zero) with the best training one-step error.
        let predictor_radius = |m: &SSModel, k: &DVector<f64>| -> f64 {
            (&m.a - k * &m.c)
                .complex_eigenvalues()
                .iter()
                .map(|e| e.norm())
                .fold(0.0, f64::max)
        };
        let mut best_k = DVector::zeros(n);
        let mut best_rss = f64::INFINITY;
        for scale in [1.0, 0.5, 0.25, 0.125, 0.0] {
            let candidate = &regressed * scale;
            if predictor_radius(&model, &candidate) >= 1.0 {
                continue;
            }
            let mut trial = model.clone();
            trial.k = candidate.clone();
            let pred = predict_one_step_ss(&trial, table)?;
            let rss: f64 = y.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum();
            if rss.is_finite() && rss < best_rss {
                best_rss = rss;
                best_k = candidate;
            }
        }
        model.k = best_k;
    }

    if opts.refine_gain {
        model = refine_gain(model, table)?;
    }
    Ok(model)
}

/// Finite-difference Gauss-Newton on one-step errors with respect to `K`.
fn refine_gain(mut model: SSModel, table: &TimeSeriesTable) -> Result<SSModel> {
    let y = table.values(&model.output_name)?;
    let errors = |m: &SSModel| -> Result<DVector<f64>> {
        let pred = predict_one_step_ss(m, table)?;
        Ok(DVector::from_iterator(
            y.len(),
            y.iter().zip(&pred).map(|(a, b)| a - b),
        ))
    };
    let n = model.order();
    let mut e = errors(&model)?;
    let mut rss = e.norm_squared();
    for _ in 0..10 {
        let mut jac = DMatrix::zeros(e.len(), n);
        for j in 0..n {
            let h = 1e-6 * model.k[j].abs().max(1.0);
            let mut bumped = model.clone();
            bumped.k[j] += h;
            let e_b = errors(&bumped)?;
            for i in 0..e.len() {
                jac[(i, j)] = (e_b[i] - e[i]) / h;
            }
        }
        let neg = -&e;
        let Ok(step) = lstsq::solve(&jac, &neg, 1e-10) else {
            break;
        };
        let mut improved = false;
        let mut scale = 1.0;
        for _ in 0..6 {
            let mut trial = model.clone();
            trial.k += &step.coeffs * scale;
            let e_t = errors(&trial)?;
            let rss_t = e_t.norm_squared();
            if rss_t < rss {
                model = trial;
                e = e_t;
                let gain = rss - rss_t;
                rss = rss_t;
                improved = true;
                if gain < 1e-12 * rss.max(1.0) {
                    return Ok(model);
                }
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(model)
}
