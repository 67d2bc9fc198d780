//! Benchmark signals and the replicate study harness.
//!
//! Four test functions on `[0, 1]` are used: two smooth curves with a sharp
//! bump (n = 256) and two spatially inhomogeneous signals, a blocky sine and
//! a Doppler-type chirp (n = 2048).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{self, design_matrix, min_initial_knots, place_knots, BasisSpec};
use crate::error::{Error, Result};
use crate::penalty::ScadParams;
use crate::selection::{self, select_lambda, Criterion, GammaSpec, SelectionOptions, SelectionResult};
use crate::solver::{penalty_weights, FitConfig, SplineModel};

/// One benchmark configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleSpec {
    pub id: u8,
    pub sigma: f64,
    pub n: usize,
    pub replicates: usize,
    /// Published `SD(f) / sigma`.
    pub target_sd_ratio: f64,
}

pub const EXAMPLES: [ExampleSpec; 4] = [
    ExampleSpec { id: 1, sigma: 0.3, n: 256, replicates: 400, target_sd_ratio: 2.80 },
    ExampleSpec { id: 2, sigma: 0.4, n: 256, replicates: 400, target_sd_ratio: 3.16 },
    ExampleSpec { id: 3, sigma: 1.0, n: 2048, replicates: 31, target_sd_ratio: 6.54 },
    ExampleSpec { id: 4, sigma: 1.0, n: 2048, replicates: 31, target_sd_ratio: 6.36 },
];

impl ExampleSpec {
    pub fn by_id(id: u8) -> Result<Self> {
        EXAMPLES
            .iter()
            .find(|e| e.id == id)
            .copied()
            .ok_or_else(|| Error::Domain(format!("unknown example id {id}")))
    }

    /// True regression function at `t`.
    pub fn signal(&self, t: f64) -> f64 {
        signal(self.id, t)
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        Self { sigma, ..self }
    }

    pub fn with_n(self, n: usize) -> Self {
        Self { n, ..self }
    }
}

fn signal(id: u8, t: f64) -> f64 {
    match id {
        1 => {
            let u = 4.0 * t - 2.0;
            (2.0 * u).sin() + 2.0 * (-16.0 * u * u).exp()
        }
        2 => {
            let u = 4.0 * t - 2.0;
            u + 2.0 * (-16.0 * u * u).exp()
        }
        3 => 2.2 * (4.0 * (4.0 * PI * t).sin() - sign(t - 0.3) - sign(0.72 - t)),
        4 => 22.0 * (t * (1.0 - t)).max(0.0).sqrt() * (2.0 * PI * 1.05 / (t + 0.05)).sin(),
        _ => unreachable!("example ids are validated"),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Benchmark signal `id` (1 to 4) at `t`.
pub fn test_function(id: u8, t: f64) -> Result<f64> {
    ExampleSpec::by_id(id)?;
    Ok(signal(id, t))
}

/// Population standard deviation of signal `id` on a midpoint grid of `points` values.
pub fn signal_sd(id: u8, points: usize) -> Result<f64> {
    ExampleSpec::by_id(id)?;
    let values: Vec<f64> = (0..points)
        .map(|i| signal(id, (i as f64 + 0.5) / points as f64))
        .collect();
    let mean = values.iter().sum::<f64>() / points as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / points as f64;
    Ok(var.sqrt())
}

/// Placement of design points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    /// i.i.d. uniform on `[0, 1)`.
    #[default]
    Uniform,
    /// `(i - 1/2) / n`.
    Equispaced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Draws one sample `y_i = f(x_i) + sigma e_i`; the seed fixes it completely.
pub fn generate_dataset(example: &ExampleSpec, seed: u64, design: DesignKind) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = example.n;
    let x: Vec<f64> = match design {
        DesignKind::Uniform => (0..n).map(|_| rng.random::<f64>()).collect(),
        DesignKind::Equispaced => (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect(),
    };
    let y = x
        .iter()
        .map(|&t| {
            let e: f64 = rng.sample(StandardNormal);
            example.signal(t) + example.sigma * e
        })
        .collect();
    Dataset { x, y }
}

/// Mean squared distance between fitted values and the true signal.
pub fn mse_of_values(fitted: &[f64], example: &ExampleSpec, x: &[f64]) -> Result<f64> {
    if fitted.len() != x.len() {
        return Err(Error::Dimension(format!(
            "{} fitted values for {} points",
            fitted.len(),
            x.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::InvalidData("no design points".into()));
    }
    Ok(fitted
        .iter()
        .zip(x)
        .map(|(f, &t)| (f - example.signal(t)).powi(2))
        .sum::<f64>()
        / x.len() as f64)
}

/// MSE of a fitted spline against the true signal at the design points.
pub fn mse(model: &SplineModel, example: &ExampleSpec, x: &[f64]) -> Result<f64> {
    mse_of_values(&model.predict(x)?, example, x)
}

/// How the initial knot count is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum KnotRule {
    /// Run-length rule driven by `alpha` and the span divisor.
    Auto { alpha: f64, divisor: f64 },
    Fixed { count: usize },
}

impl Default for KnotRule {
    fn default() -> Self {
        KnotRule::Auto {
            alpha: basis::DEFAULT_ALPHA,
            divisor: basis::DEFAULT_SPAN_DIVISOR,
        }
    }
}

impl KnotRule {
    pub fn count(&self, n: usize) -> Result<usize> {
        match *self {
            KnotRule::Auto { alpha, divisor } => min_initial_knots(n, alpha, divisor),
            KnotRule::Fixed { count } => Ok(count),
        }
    }
}

/// Error variance given to PREC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum NoiseVariance {
    /// Residual variance of the unpenalized spline.
    #[default]
    Estimate,
    /// The simulation's own `sigma^2`.
    True,
    Fixed(f64),
}

/// Everything needed to fit one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub knots: KnotRule,
    pub order: usize,
    pub a: f64,
    pub criterion: Criterion,
    pub gamma: GammaSpec,
    pub sigma2: NoiseVariance,
    pub design: DesignKind,
    pub grid_size: usize,
    pub fit: FitConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            knots: KnotRule::default(),
            order: 3,
            a: crate::penalty::DEFAULT_A,
            criterion: Criterion::Mgcv,
            gamma: GammaSpec::Constant(2.5),
            sigma2: NoiseVariance::Estimate,
            design: DesignKind::Uniform,
            grid_size: selection::DEFAULT_GRID_SIZE,
            fit: FitConfig::default(),
        }
    }
}

/// Places knots, builds the basis and runs the grid search on one dataset.
pub fn fit_dataset(
    data: &Dataset,
    config: &StudyConfig,
    true_sigma2: Option<f64>,
) -> Result<(SplineModel, SelectionResult)> {
    let k = config.knots.count(data.x.len())?;
    let knots = place_knots(&data.x, k)?;
    let basis = BasisSpec::new(config.order, knots)?;
    let design = design_matrix(&data.x, &basis);
    let weights = penalty_weights(&design)?.weights;
    let grid = selection::lambda_grid(&design, &data.y, &weights, config.grid_size)?;
    let sigma2 = match config.sigma2 {
        NoiseVariance::Estimate => None,
        NoiseVariance::True => true_sigma2,
        NoiseVariance::Fixed(v) => Some(v),
    };
    let options = SelectionOptions {
        criterion: config.criterion,
        gamma: config.gamma,
        sigma2,
        config: config.fit,
        parallel: false,
    };
    let template = ScadParams::new(0.0, config.a)?;
    let result = select_lambda(&design, &data.y, &weights, &template, &grid, &options)?;
    let model = SplineModel {
        basis,
        fit: result.best_fit.clone(),
    };
    Ok((model, result))
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub seed: u64,
    pub mse: f64,
    pub knots_selected: usize,
    pub iterations: usize,
    pub lambda: f64,
    pub converged: bool,
    /// Initial knot locations of this replicate.
    #[serde(skip)]
    pub initial_knots: Vec<f64>,
    /// Positions of the surviving knots.
    #[serde(skip)]
    pub active_knots: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// How often each initial knot survived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotFrequency {
    pub index: usize,
    /// Mean location of this knot across completed replicates.
    pub location: f64,
    pub frequency: usize,
}

/// Aggregate of a replicate study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub example: ExampleSpec,
    pub config: StudyConfig,
    pub base_seed: u64,
    pub replicates: usize,
    pub completed: usize,
    pub failures: usize,
    pub initial_knots: usize,
    pub median_mse_x1000: f64,
    pub q1_mse_x1000: f64,
    pub q3_mse_x1000: f64,
    pub iqr_mse_x1000: f64,
    pub mean_knots_selected: f64,
    pub knot_frequency: Vec<KnotFrequency>,
    /// `knot_count_histogram[m]` replicates kept exactly `m` knots.
    pub knot_count_histogram: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    pub summary: StudySummary,
    pub records: Vec<ReplicateRecord>,
}

/// Linearly interpolated sample quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let pos = q.clamp(0.0, 1.0) * (len - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

fn run_replicate(example: &ExampleSpec, config: &StudyConfig, index: usize, seed: u64) -> ReplicateRecord {
    let data = generate_dataset(example, seed, config.design);
    let sigma2 = example.sigma * example.sigma;
    let outcome = fit_dataset(&data, config, (sigma2 > 0.0).then_some(sigma2))
        .and_then(|(model, _)| Ok((mse(&model, example, &data.x)?, model)));
    match outcome {
        Ok((mse, model)) => ReplicateRecord {
            index,
            seed,
            mse,
            knots_selected: model.fit.num_active_knots(),
            iterations: model.fit.iterations,
            lambda: model.fit.lambda(),
            converged: model.fit.converged,
            initial_knots: model.basis.knots().to_vec(),
            active_knots: model.fit.active_knots,
            error: None,
        },
        Err(err) => ReplicateRecord {
            index,
            seed,
            mse: f64::NAN,
            knots_selected: 0,
            iterations: 0,
            lambda: f64::NAN,
            converged: false,
            initial_knots: Vec::new(),
            active_knots: Vec::new(),
            error: Some(err.to_string()),
        },
    }
}

/// Runs `replicates` independent fits with seeds `base_seed + index`.
///
/// `workers` sizes a dedicated thread pool (`None` uses the global pool).
/// Results do not depend on the number of workers.
pub fn run_study(
    example: &ExampleSpec,
    config: &StudyConfig,
    replicates: usize,
    base_seed: u64,
    workers: Option<usize>,
) -> Result<StudyOutcome> {
    if replicates == 0 {
        return Err(Error::Domain("at least one replicate is required".into()));
    }
    let k = config.knots.count(example.n)?;
    let seeds: Vec<u64> = (0..replicates).map(|i| base_seed.wrapping_add(i as u64)).collect();
    let job = || -> Vec<ReplicateRecord> {
        seeds
            .par_iter()
            .enumerate()
            .map(|(i, &s)| run_replicate(example, config, i, s))
            .collect()
    };
    let records = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Domain(format!("cannot build worker pool: {e}")))?
            .install(job),
        None => job(),
    };
    let summary = summarize(example, config, base_seed, k, &records, seeds)?;
    Ok(StudyOutcome { summary, records })
}

fn summarize(
    example: &ExampleSpec,
    config: &StudyConfig,
    base_seed: u64,
    k: usize,
    records: &[ReplicateRecord],
    seeds: Vec<u64>,
) -> Result<StudySummary> {
    let done: Vec<&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let failures = records.len() - done.len();
    if failures > 0 {
        log::warn!("{failures} of {} replicates failed and were excluded", records.len());
    }
    if done.is_empty() {
        return Err(Error::Selection("every replicate failed".into()));
    }
    let mut mses: Vec<f64> = done.iter().map(|r| r.mse * 1000.0).collect();
    mses.sort_by(f64::total_cmp);
    let q1 = quantile(&mses, 0.25);
    let q3 = quantile(&mses, 0.75);

    let mut frequency = vec![0usize; k];
    let mut location_sum = vec![0.0; k];
    let mut location_count = vec![0usize; k];
    let mut histogram = vec![0usize; k + 1];
    for r in &done {
        for (pos, &t) in r.initial_knots.iter().enumerate().take(k) {
            location_sum[pos] += t;
            location_count[pos] += 1;
        }
        for &pos in &r.active_knots {
            if pos < k {
                frequency[pos] += 1;
            }
        }
        histogram[r.knots_selected.min(k)] += 1;
    }
    let knot_frequency = (0..k)
        .map(|i| KnotFrequency {
            index: i,
            location: if location_count[i] > 0 {
                location_sum[i] / location_count[i] as f64
            } else {
                f64::NAN
            },
            frequency: frequency[i],
        })
        .collect();
    let mean_knots = done.iter().map(|r| r.knots_selected as f64).sum::<f64>() / done.len() as f64;
    Ok(StudySummary {
        example: *example,
        config: *config,
        base_seed,
        replicates: records.len(),
        completed: done.len(),
        failures,
        initial_knots: k,
        median_mse_x1000: quantile(&mses, 0.5),
        q1_mse_x1000: q1,
        q3_mse_x1000: q3,
        iqr_mse_x1000: q3 - q1,
        mean_knots_selected: mean_knots,
        knot_frequency,
        knot_count_histogram: histogram,
        seeds,
    })
}
