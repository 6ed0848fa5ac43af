//! Seeded synthetic ground-truth data (polynomial and state-space models)
//! plus deliberately naive reference implementations used for differential
//! testing of the estimators.
//!
//! Randomness contract: all draws come from ChaCha20 seeded with the 64-bit
//! seed written little-endian into the first 8 bytes of the 32-byte key
//! (rest zero). Uniforms are `(next_u64() >> 11) * 2^-53` in `[0, 1)`;
//! Gaussians use the Box-Muller cosine branch on two fresh uniforms. This
//! makes fixtures bit-reproducible from the documented algorithm alone.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::dataset::{Column, TimeSeriesTable};
use crate::error::{Error, Result};
use crate::infotheory::SymbolSequence;
use crate::linmodels::{self, PolyModel};
use crate::statespace::{self, SSModel};

/// Deterministic random source implementing the documented contract.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self {
            inner: ChaCha20Rng::from_seed(key),
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard Gaussian via Box-Muller (cosine branch, two uniforms per draw).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform().max(f64::MIN_POSITIVE);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Input excitation for one generator channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputProcess {
    /// Zero-mean Gaussian noise; persistently exciting of all orders.
    WhiteNoise { std: f64 },
    /// Two-level signal that switches with the given per-sample probability.
    RandomBinary {
        low: f64,
        high: f64,
        switch_prob: f64,
    },
    Sinusoid {
        amplitude: f64,
        period: f64,
        phase: f64,
    },
    /// Piecewise-constant schedule of `(start_index, level)` steps.
    Steps { schedule: Vec<(usize, f64)> },
}

impl InputProcess {
    fn generate(&self, n: usize, rng: &mut SeededRng) -> Vec<f64> {
        match self {
            InputProcess::WhiteNoise { std } => (0..n).map(|_| std * rng.gaussian()).collect(),
            InputProcess::RandomBinary {
                low,
                high,
                switch_prob,
            } => {
                let mut level = *low;
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    if rng.uniform() < *switch_prob {
                        level = if level == *low { *high } else { *low };
                    }
                    out.push(level);
                }
                out
            }
            InputProcess::Sinusoid {
                amplitude,
                period,
                phase,
            } => (0..n)
                .map(|t| amplitude * (std::f64::consts::TAU * t as f64 / period + phase).sin())
                .collect(),
            InputProcess::Steps { schedule } => {
                let mut out = vec![0.0; n];
                let mut level = 0.0;
                let mut next = schedule.iter().peekable();
                for (t, v) in out.iter_mut().enumerate() {
                    while next.peek().is_some_and(|(s, _)| *s <= t) {
                        level = next.next().unwrap().1;
                    }
                    *v = level;
                }
                out
            }
        }
    }
}

/// Ground-truth model for the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TruthModel {
    Poly(PolyModel),
    StateSpace(SSModel),
}

/// Full description of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub model: TruthModel,
    /// One process per model input channel.
    pub input_processes: Vec<InputProcess>,
    /// Standard deviation of the driving white noise `e_t`.
    pub noise_std: f64,
    /// Samples kept after the warmup prefix is discarded.
    pub n_samples: usize,
    pub seed: u64,
    /// Discarded prefix length.
    pub warmup: usize,
    /// Permit an unstable truth model (outputs may grow without bound).
    pub allow_unstable: bool,
}

impl GeneratorSpec {
    pub fn new(model: TruthModel, input_processes: Vec<InputProcess>, n_samples: usize, seed: u64) -> Self {
        Self {
            model,
            input_processes,
            noise_std: 0.0,
            n_samples,
            seed,
            warmup: 200,
            allow_unstable: false,
        }
    }
}

/// Everything needed to score a recovery: the exact generating model and
/// the reproducibility handles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub model: TruthModel,
    pub seed: u64,
    pub noise_std: f64,
    pub warmup: usize,
}

/// Simulates the ground-truth model with seeded inputs and noise.
///
/// Draw order is fixed: every input channel in order (full length each),
/// then the noise sequence. The first `warmup` samples are discarded.
pub fn generate(spec: &GeneratorSpec) -> Result<(TimeSeriesTable, TruthRecord)> {
    let (n_inputs, input_names, output_name) = match &spec.model {
        TruthModel::Poly(m) => (m.inputs.len(), m.input_names(), m.output_name.clone()),
        TruthModel::StateSpace(m) => (
            m.n_inputs(),
            m.input_names.iter().map(String::as_str).collect(),
            m.output_name.clone(),
        ),
    };
    if spec.input_processes.len() != n_inputs {
        return Err(Error::InvalidConfig {
            reason: format!(
                "{} input processes for a model with {} inputs",
                spec.input_processes.len(),
                n_inputs
            ),
        });
    }
    if !spec.allow_unstable {
        let stable = match &spec.model {
            TruthModel::Poly(m) => linmodels::check_stability(m).stable,
            TruthModel::StateSpace(m) => m.is_stable(),
        };
        if !stable {
            return Err(Error::InvalidConfig {
                reason: "truth model is unstable; set allow_unstable to generate anyway".into(),
            });
        }
    }
    if spec.n_samples < 2 {
        return Err(Error::InvalidConfig {
            reason: "need at least 2 samples".into(),
        });
    }

    let total = spec.warmup + spec.n_samples;
    let mut rng = SeededRng::new(spec.seed);
    let inputs: Vec<Vec<f64>> = spec
        .input_processes
        .iter()
        .map(|p| p.generate(total, &mut rng))
        .collect();
    let noise: Vec<f64> = (0..total).map(|_| spec.noise_std * rng.gaussian()).collect();

    let output = match &spec.model {
        TruthModel::Poly(m) => simulate_poly_with_noise(m, &inputs, &noise),
        TruthModel::StateSpace(m) => {
            let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
            let clean = statespace::simulate_ss(m, &refs, None)?;
            clean.iter().zip(&noise).map(|(y, e)| y + e).collect()
        }
    };

    let mut columns = Vec::with_capacity(1 + n_inputs);
    columns.push(Column::new(
        output_name.clone(),
        output[spec.warmup..].to_vec(),
    ));
    for (name, series) in input_names.iter().zip(&inputs) {
        columns.push(Column::new(*name, series[spec.warmup..].to_vec()));
    }
    let table = TimeSeriesTable::new(columns, 1.0)?;
    let record = TruthRecord {
        model: spec.model.clone(),
        seed: spec.seed,
        noise_std: spec.noise_std,
        warmup: spec.warmup,
    };
    Ok((table, record))
}

/// Exact ARMAX recursion with an explicit noise sequence.
fn simulate_poly_with_noise(model: &PolyModel, inputs: &[Vec<f64>], noise: &[f64]) -> Vec<f64> {
    let n = noise.len();
    let mut y = vec![0.0; n];
    for t in 0..n {
        let mut v = noise[t];
        for (i, phi) in model.ar.iter().enumerate() {
            if t > i {
                v -= phi * y[t - 1 - i];
            }
        }
        for (channel, x) in model.inputs.iter().zip(inputs) {
            for (k, b) in channel.coeffs.iter().enumerate() {
                let lag = channel.delay + k;
                if t >= lag {
                    v += b * x[t - lag];
                }
            }
        }
        for (l, th) in model.ma.iter().enumerate() {
            if t > l {
                v += th * noise[t - 1 - l];
            }
        }
        y[t] = v;
    }
    y
}

/// The canonical recovery fixture: a second-order system with one input,
/// a single moving-average term, and unit delay.
pub fn canonical_armax_spec(seed: u64, n_samples: usize) -> GeneratorSpec {
    let model = PolyModel::new(
        "y",
        vec![-1.5, 0.7],
        vec![crate::linmodels::InputChannel {
            name: "x".into(),
            coeffs: vec![1.0, 0.5],
            delay: 1,
        }],
        vec![0.3],
        0.01,
    )
    .expect("valid fixture model");
    GeneratorSpec {
        model: TruthModel::Poly(model),
        input_processes: vec![InputProcess::WhiteNoise { std: 1.0 }],
        noise_std: 0.1,
        n_samples,
        seed,
        warmup: 200,
        allow_unstable: false,
    }
}

/// Naive mutual information in bits: explicit joint-count table, direct
/// double loop with marginals recomputed in place; differential oracle for
/// the histogram estimator.
pub fn oracle_mi(a: &SymbolSequence, b: &SymbolSequence) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len() as f64;
    let (na, nb) = (a.n_bins(), b.n_bins());
    let mut joint = vec![vec![0.0_f64; nb]; na];
    for (&u, &v) in a.symbols().iter().zip(b.symbols()) {
        joint[u][v] += 1.0;
    }
    let mut mi = 0.0;
    for u in 0..na {
        for v in 0..nb {
            let c_uv = joint[u][v];
            if c_uv == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for vv in 0..nb {
                row += joint[u][vv];
            }
            let mut col = 0.0;
            for uu in 0..na {
                col += joint[uu][v];
            }
            let p_uv = c_uv / n;
            let p_u = row / n;
            let p_v = col / n;
            mi += p_uv * (p_uv / (p_u * p_v)).log2();
        }
    }
    Ok(mi.max(0.0))
}

/// Naive sample-by-sample recursion over pre-padded arrays; differential
/// oracle for the vectorized free-run simulation.
pub fn oracle_simulate(
    model: &PolyModel,
    inputs: &[&[f64]],
    init: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if inputs.len() != model.inputs.len() {
        return Err(Error::InvalidArgument {
            reason: "input channel count mismatch".into(),
        });
    }
    let n = inputs.first().map(|x| x.len()).unwrap_or(0);
    let pad = model.startup_lag() + 1;
    // padded output: [zeros/init | simulated]
    let mut padded = vec![0.0; pad + n];
    if let Some(init) = init {
        let take = init.len().min(pad);
        padded[pad - take..pad].copy_from_slice(&init[init.len() - take..]);
    }
    // padded inputs with zero history
    let padded_inputs: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| {
            let mut px = vec![0.0; pad + n];
            px[pad..].copy_from_slice(x);
            px
        })
        .collect();

    for t in 0..n {
        let tt = pad + t;
        let mut v = 0.0;
        for i in 1..=model.ar.len() {
            v -= model.ar[i - 1] * padded[tt - i];
        }
        for (channel, px) in model.inputs.iter().zip(&padded_inputs) {
            for (k, b) in channel.coeffs.iter().enumerate() {
                v += b * px[tt - channel.delay - k];
            }
        }
        padded[tt] = v;
    }
    Ok(padded[pad..].to_vec())
}

/// Occupancy-style synthetic building log with a planted dominant input.
///
/// Six channels mimic an office sensor suite: binary occupancy on a daily
/// schedule, lighting driven by occupancy plus a daylight bump, CO2 as
/// slow-filtered occupancy, weather-driven humidity, a humidity ratio
/// derived from humidity and temperature, and a temperature that follows
/// lighting through second-order dynamics with colored noise. Lighting is
/// therefore the ground-truth dominating input.
#[derive(Debug, Clone)]
pub struct BuildingDataset {
    pub train: TimeSeriesTable,
    pub test1: TimeSeriesTable,
    pub test2: TimeSeriesTable,
}

const SAMPLES_PER_DAY: usize = 1440; // one-minute sampling

pub fn building_dataset(seed: u64) -> Result<BuildingDataset> {
    let (n_train, n_test1, n_test2) = (8000, 2600, 6000);
    let warmup = 600;
    let total = warmup + n_train + n_test1 + n_test2;
    let mut rng = SeededRng::new(seed);

    // occupancy: office-hours schedule with per-day jitter and short exits
    let mut occupancy = vec![0.0; total];
    let days = total / SAMPLES_PER_DAY + 2;
    let mut day_windows = Vec::with_capacity(days);
    for day in 0..days {
        let workday = day % 7 < 5;
        let arrive = 480 + (rng.uniform() * 90.0) as usize;
        let leave = 1020 + (rng.uniform() * 90.0) as usize;
        day_windows.push((workday, arrive, leave));
    }
    let mut absence_left = 0usize;
    for (t, occ) in occupancy.iter_mut().enumerate() {
        let (workday, arrive, leave) = day_windows[t / SAMPLES_PER_DAY];
        let tod = t % SAMPLES_PER_DAY;
        let mut value = if workday && tod >= arrive && tod < leave {
            1.0
        } else {
            0.0
        };
        if value == 1.0 {
            if absence_left > 0 {
                absence_left -= 1;
                value = 0.0;
            } else if rng.uniform() < 0.003 {
                absence_left = 20 + (rng.uniform() * 40.0) as usize;
                value = 0.0;
            }
        }
        *occ = value;
    }

    // lighting: artificial when occupied plus a daylight bump
    let mut light = vec![0.0; total];
    for t in 0..total {
        let tod = (t % SAMPLES_PER_DAY) as f64;
        let daylight = if (360.0..1080.0).contains(&tod) {
            (std::f64::consts::PI * (tod - 360.0) / 720.0).sin().max(0.0) * 80.0
        } else {
            0.0
        };
        let v: f64 = 450.0 * occupancy[t] + daylight + 4.0 * rng.gaussian();
        light[t] = v.max(0.0);
    }

    // CO2: first-order accumulation driven by occupancy
    let mut co2 = vec![0.0; total];
    let mut c = 420.0;
    for (t, slot) in co2.iter_mut().enumerate() {
        c += 0.01 * (420.0 - c) + 2.4 * occupancy[t] + 0.8 * rng.gaussian();
        *slot = c;
    }

    // humidity: slow weather-driven wander, independent of the rest
    let mut humidity = vec![0.0; total];
    let mut h = 27.0;
    for slot in humidity.iter_mut() {
        h += 0.002 * (27.0 - h) + 0.05 * rng.gaussian();
        *slot = h;
    }

    // temperature: second-order dynamics on lighting with colored noise
    //   d_t = 1.28 d_{t-1} - 0.31 d_{t-2} + g_l * light_{t-1} + g_o * occ_{t-1}
    //         + e_t + 0.5 e_{t-1}
    let noise: Vec<f64> = (0..total).map(|_| 0.018 * rng.gaussian()).collect();
    let mut temp = vec![0.0; total];
    let (phi1, phi2) = (1.28, -0.31);
    let gain_light = 2.0 * (1.0 - phi1 - phi2) / 450.0;
    let gain_occ = 0.3 * (1.0 - phi1 - phi2);
    for t in 0..total {
        let mut d = noise[t];
        if t >= 1 {
            d += phi1 * temp[t - 1] + 0.5 * noise[t - 1];
            d += gain_light * light[t - 1] + gain_occ * occupancy[t - 1];
        }
        if t >= 2 {
            d += phi2 * temp[t - 2];
        }
        temp[t] = d;
    }
    for v in temp.iter_mut() {
        *v += 19.5;
    }

    // humidity ratio: humidity-dominated psychrometric blend
    let hr: Vec<f64> = (0..total)
        .map(|t| 0.00117 * (humidity[t] / 27.0) * (1.0 + 0.05 * (temp[t] - 20.0)))
        .collect();

    let make_table = |range: std::ops::Range<usize>| -> Result<TimeSeriesTable> {
        TimeSeriesTable::new(
            vec![
                Column::new("Temperature", temp[range.clone()].to_vec()),
                Column::new("Humidity", humidity[range.clone()].to_vec()),
                Column::new("Light", light[range.clone()].to_vec()),
                Column::new("CO2", co2[range.clone()].to_vec()),
                Column::new("HumidityRatio", hr[range.clone()].to_vec()),
                Column::new("Occupancy", occupancy[range.clone()].to_vec()),
            ],
            60.0,
        )
    };

    let a = warmup;
    let b = a + n_train;
    let c2 = b + n_test1;
    let d = c2 + n_test2;
    Ok(BuildingDataset {
        train: make_table(a..b)?,
        test1: make_table(b..c2)?,
        test2: make_table(c2..d)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmodels::InputChannel;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rng_is_reproducible() {
        let mut a = SeededRng::new(7);
        let mut b = SeededRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
        let mut c = SeededRng::new(8);
        assert_ne!(SeededRng::new(7).uniform(), c.uniform());
    }

    #[test]
    fn generate_same_seed_identical_tables() {
        let spec = canonical_armax_spec(33, 500);
        let (t1, _) = generate(&spec).unwrap();
        let (t2, _) = generate(&spec).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn generate_noiseless_zero_inputs_zero_output() {
        let model = PolyModel::new(
            "y",
            vec![-0.5],
            vec![InputChannel {
                name: "x".into(),
                coeffs: vec![1.0],
                delay: 1,
            }],
            vec![],
            0.0,
        )
        .unwrap();
        let spec = GeneratorSpec {
            model: TruthModel::Poly(model),
            input_processes: vec![InputProcess::Steps { schedule: vec![] }],
            noise_std: 0.0,
            n_samples: 100,
            seed: 1,
            warmup: 50,
            allow_unstable: false,
        };
        let (table, _) = generate(&spec).unwrap();
        assert!(table.values("y").unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generate_rejects_unstable_model() {
        let model = PolyModel::new("y", vec![-1.05], vec![], vec![], 0.0).unwrap();
        let spec = GeneratorSpec {
            model: TruthModel::Poly(model),
            input_processes: vec![],
            noise_std: 0.1,
            n_samples: 100,
            seed: 1,
            warmup: 10,
            allow_unstable: false,
        };
        assert!(generate(&spec).is_err());
        let spec = GeneratorSpec {
            allow_unstable: true,
            ..spec
        };
        assert!(generate(&spec).is_ok());
    }

    #[test]
    fn oracle_mi_matches_primary_on_examples() {
        let a = SymbolSequence::from_symbols(vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let b = SymbolSequence::from_symbols(vec![1, 1, 0, 0, 1, 1], 2).unwrap();
        let primary = crate::infotheory::mutual_information(&a, &b).unwrap();
        let oracle = oracle_mi(&a, &b).unwrap();
        assert_abs_diff_eq!(primary, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle, 0.9182958340544896, epsilon = 1e-12);
    }

    #[test]
    fn oracle_simulate_matches_primary() {
        let model = PolyModel::new(
            "y",
            vec![-1.1, 0.3],
            vec![InputChannel {
                name: "x".into(),
                coeffs: vec![0.8, -0.2],
                delay: 2,
            }],
            vec![],
            0.0,
        )
        .unwrap();
        let mut rng = SeededRng::new(5);
        let x: Vec<f64> = (0..150).map(|_| rng.gaussian()).collect();
        let init = [0.3, -0.2];
        let primary = linmodels::simulate(&model, &[&x], Some(&init)).unwrap();
        let oracle = oracle_simulate(&model, &[&x], Some(&init)).unwrap();
        for (p, o) in primary.iter().zip(&oracle) {
            assert_abs_diff_eq!(*p, *o, epsilon = 1e-12);
        }
    }

    #[test]
    fn noiseless_generation_refits_exactly() {
        let mut spec = canonical_armax_spec(77, 3000);
        spec.noise_std = 0.0;
        let (table, truth) = generate(&spec).unwrap();
        let TruthModel::Poly(true_model) = &truth.model else {
            panic!("poly fixture")
        };
        let opts = crate::linmodels::FitOptions {
            ar_order: 2,
            input_order: 1,
            ma_order: 0,
            delay: 1,
            ..Default::default()
        };
        let report = crate::linmodels::fit_arx(&table, "y", &["x"], &opts).unwrap();
        for (est, truth_c) in report.model.ar.iter().zip(&true_model.ar) {
            assert_abs_diff_eq!(*est, *truth_c, epsilon = 1e-6);
        }
        for (est, truth_c) in report.model.inputs[0]
            .coeffs
            .iter()
            .zip(&true_model.inputs[0].coeffs)
        {
            assert_abs_diff_eq!(*est, *truth_c, epsilon = 1e-6);
        }
    }

    #[test]
    fn building_dataset_shape_and_determinism() {
        let d1 = building_dataset(2024).unwrap();
        let d2 = building_dataset(2024).unwrap();
        assert_eq!(d1.train, d2.train);
        assert_eq!(d1.test2, d2.test2);
        assert_eq!(d1.train.n_columns(), 6);
        assert_eq!(d1.train.n_rows(), 8000);
        // occupancy is binary and non-constant in every split
        for t in [&d1.train, &d1.test1, &d1.test2] {
            let occ = t.values("Occupancy").unwrap();
            assert!(occ.iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(occ.iter().any(|&v| v == 1.0));
            assert!(occ.iter().any(|&v| v == 0.0));
        }
    }
}
