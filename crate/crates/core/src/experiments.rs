//! The two nonlinear system-identification benchmarks: signal generation,
//! Monte Carlo learning curves and theory-versus-simulation comparison.
//!
//! Randomness: every stream is a ChaCha8 generator seeded from the master seed
//! and separated by stream id. Stream 0 feeds the Wiener-solution estimate,
//! stream `r + 1` feeds Monte Carlo run `r`, and [`COHERENCE_STREAM`] feeds
//! coherence-based dictionary selection.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dictionary::{coherence_sweep, CoherenceSweep, Dictionary};
use crate::error::{check_dim, Error, Result};
use crate::filter::KlmsFilter;
use crate::kernel::GaussianKernel;
use crate::moments::{Ar1Params, InputModel, KernelMoments};
use crate::theory::{
    estimate_optimal, parse_field, ConvergenceModel, EstimationConfig, PredictedCurve, SampleSource, StorageMode,
    TheoryModel,
};

/// Stream id reserved for the samples a coherence dictionary is drawn from.
pub const COHERENCE_STREAM: u64 = u64::MAX;
/// Stream id of the Wiener-solution estimate.
pub const ESTIMATION_STREAM: u64 = 0;
/// Dimension of the `[x(n), x(n-1)]` embedding used by both benchmarks.
pub const EMBEDDING_DIM: usize = 2;

/// Generator for stream `stream` of a master seed.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Stream id of Monte Carlo run `run`.
pub fn run_stream(run: usize) -> u64 {
    run as u64 + 1
}

/// Stationary AR(1) process `x(n) = rho x(n-1) + sigma_x sqrt(1 - rho^2) w(n)`.
#[derive(Debug, Clone)]
pub struct Ar1Source {
    params: Ar1Params,
    rng: ChaCha8Rng,
    last: Option<f64>,
}

impl Ar1Source {
    pub fn new(params: Ar1Params, rng: ChaCha8Rng) -> Self {
        Self { params, rng, last: None }
    }

    pub fn params(&self) -> Ar1Params {
        self.params
    }

    /// Next sample; the first one is drawn from the stationary law.
    pub fn next_value(&mut self) -> f64 {
        let w: f64 = StandardNormal.sample(&mut self.rng);
        let Ar1Params { rho, sigma_x } = self.params;
        let x = match self.last {
            None => sigma_x * w,
            Some(prev) => rho * prev + sigma_x * (1.0 - rho * rho).sqrt() * w,
        };
        self.last = Some(x);
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    /// `u = 0.5 x(n) - 0.3 x(n-1)`, `y = u - 0.5 u^2 + 0.1 u^3 + v`.
    WienerPoly,
    /// `u = 0.1044 x(n) + 0.0883 x(n-1) + 1.4138 y(n-1) - 0.6065 y(n-2)`,
    /// `y = 0.3163 u / sqrt(0.1 + 0.9 u^2) + v`.
    FluidFlow,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::WienerPoly => "wiener_poly",
            SystemKind::FluidFlow => "fluid_flow",
        }
    }
}

impl std::str::FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wiener_poly" => Ok(SystemKind::WienerPoly),
            "fluid_flow" => Ok(SystemKind::FluidFlow),
            other => Err(Error::InvalidParameter(format!("unknown system {other:?}"))),
        }
    }
}

/// A benchmark plant with additive Gaussian output noise.
///
/// The plant noise `v(n)` enters the fluid-flow recursion through `y(n-1)`
/// and `y(n-2)`, which start at zero.
#[derive(Debug, Clone)]
pub struct BenchmarkSystem {
    kind: SystemKind,
    noise_std: f64,
    y1: f64,
    y2: f64,
}

impl BenchmarkSystem {
    pub fn new(kind: SystemKind, noise_std: f64) -> Result<Self> {
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise std must be non-negative, got {noise_std}")));
        }
        Ok(Self { kind, noise_std, y1: 0.0, y2: 0.0 })
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Noise-free plant output for the regressor `[x(n), x(n-1)]`; advances
    /// the internal state with the noisy output `clean + noise`.
    pub fn respond(&mut self, x: [f64; 2], noise: f64) -> f64 {
        let y = match self.kind {
            SystemKind::WienerPoly => {
                let u = 0.5 * x[0] - 0.3 * x[1];
                u - 0.5 * u * u + 0.1 * u * u * u
            }
            SystemKind::FluidFlow => {
                let u = 0.1044 * x[0] + 0.0883 * x[1] + 1.4138 * self.y1 - 0.6065 * self.y2;
                0.3163 * u / (0.10 + 0.90 * u * u).sqrt()
            }
        } + noise;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Embedded AR(1) input driving a benchmark plant.
#[derive(Debug, Clone)]
pub struct BenchmarkStream {
    source: Ar1Source,
    system: BenchmarkSystem,
    prev: f64,
}

impl BenchmarkStream {
    /// Draws `x(-1)` from the stationary law so that the first regressor
    /// `[x(0), x(-1)]` is already stationary.
    pub fn new(params: Ar1Params, system: BenchmarkSystem, rng: ChaCha8Rng) -> Self {
        let mut source = Ar1Source::new(params, rng);
        let prev = source.next_value();
        Self { source, system, prev }
    }

    pub fn next_pair(&mut self) -> ([f64; 2], f64) {
        let x = [self.source.next_value(), self.prev];
        self.prev = x[0];
        let noise = if self.system.noise_std > 0.0 {
            let v: f64 = StandardNormal.sample(&mut self.source.rng);
            self.system.noise_std * v
        } else {
            0.0
        };
        (x, self.system.respond(x, noise))
    }
}

impl SampleSource for BenchmarkStream {
    fn dim(&self) -> usize {
        EMBEDDING_DIM
    }

    fn next_sample(&mut self, x: &mut [f64]) -> f64 {
        let (v, y) = self.next_pair();
        x.copy_from_slice(&v);
        y
    }
}

/// `n` consecutive (regressor, output) pairs.
pub fn generate(params: Ar1Params, system: BenchmarkSystem, n: usize, rng: ChaCha8Rng) -> Result<Vec<([f64; 2], f64)>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let mut stream = BenchmarkStream::new(params, system, rng);
    Ok((0..n).map(|_| stream.next_pair()).collect())
}

/// Where a dictionary comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DictionarySpec {
    Grid { lower: Vec<f64>, upper: Vec<f64>, points: Vec<usize> },
    /// Coherence admission over `stream_len` regressors of the experiment's
    /// input, with either a fixed threshold or a sweep towards a target size.
    Coherence { stream_len: usize, threshold: CoherenceThreshold },
    Explicit(Dictionary),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoherenceThreshold {
    Fixed(f64),
    TargetSize(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub steady_state: f64,
    pub transient: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { steady_state: 0.05, transient: 0.10 }
    }
}

/// Smoothing window and checkpoints of a theory-versus-simulation comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareSettings {
    pub window: usize,
    pub checkpoints: Vec<usize>,
    /// Fraction of the smoothed curve averaged for the steady-state estimate.
    pub tail_fraction: f64,
    pub tolerances: Tolerances,
}

impl Default for CompareSettings {
    fn default() -> Self {
        Self { window: 100, checkpoints: vec![200, 500, 1000, 2000], tail_fraction: 0.1, tolerances: Tolerances::default() }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemKind,
    pub input: Ar1Params,
    pub noise_std: f64,
    pub bandwidth: f64,
    pub step_size: f64,
    pub dictionary: DictionarySpec,
    pub runs: usize,
    pub horizon: usize,
    pub seed: u64,
    pub estimation_samples: usize,
    pub storage: StorageMode,
    pub compare: CompareSettings,
}

impl ExperimentConfig {
    /// Wiener polynomial plant, 5x5 grid on [-1, 1]^2.
    pub fn experiment1() -> Self {
        Self {
            name: "exp1".into(),
            system: SystemKind::WienerPoly,
            input: Ar1Params { rho: 0.5, sigma_x: 0.5 },
            noise_std: 0.05,
            bandwidth: 0.25,
            step_size: 0.05,
            dictionary: DictionarySpec::Grid { lower: vec![-1.0, -1.0], upper: vec![1.0, 1.0], points: vec![5, 5] },
            runs: 100,
            horizon: 5000,
            seed: 1,
            estimation_samples: 1_000_000,
            storage: StorageMode::default(),
            compare: CompareSettings::default(),
        }
    }

    /// Fluid-flow plant, 37 centers selected by coherence.
    pub fn experiment2() -> Self {
        Self {
            name: "exp2".into(),
            system: SystemKind::FluidFlow,
            input: Ar1Params { rho: 0.5, sigma_x: 0.25 },
            bandwidth: 0.15,
            dictionary: DictionarySpec::Coherence { stream_len: 5000, threshold: CoherenceThreshold::TargetSize(37) },
            seed: 2,
            ..Self::experiment1()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "exp1" => Ok(Self::experiment1()),
            "exp2" => Ok(Self::experiment2()),
            other => Err(Error::InvalidParameter(format!("unknown preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        Ar1Params::new(self.input.rho, self.input.sigma_x)?;
        BenchmarkSystem::new(self.system, self.noise_std)?;
        GaussianKernel::new(self.bandwidth)?;
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.runs == 0 || self.horizon == 0 {
            return Err(Error::InvalidParameter("runs and horizon must be at least 1".into()));
        }
        if self.compare.window == 0 || !(self.compare.tail_fraction > 0.0 && self.compare.tail_fraction <= 1.0) {
            return Err(Error::InvalidParameter("smoothing window and tail fraction must be positive".into()));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<GaussianKernel> {
        GaussianKernel::new(self.bandwidth)
    }

    pub fn input_model(&self) -> Result<InputModel> {
        InputModel::ar1_embedding(Ar1Params::new(self.input.rho, self.input.sigma_x)?, EMBEDDING_DIM)
    }

    pub fn plant(&self) -> Result<BenchmarkSystem> {
        BenchmarkSystem::new(self.system, self.noise_std)
    }

    /// Input/output stream on the given stream id of the master seed.
    pub fn stream(&self, stream: u64) -> Result<BenchmarkStream> {
        Ok(BenchmarkStream::new(self.input, self.plant()?, stream_rng(self.seed, stream)))
    }

    /// Regressors the coherence rule scans.
    pub fn coherence_regressors(&self, len: usize) -> Result<Vec<DVector<f64>>> {
        let mut stream = self.stream(COHERENCE_STREAM)?;
        Ok((0..len).map(|_| DVector::from_column_slice(&stream.next_pair().0)).collect())
    }

    /// The dictionary plus, for a coherence sweep, the threshold it settled on.
    pub fn build_dictionary(&self) -> Result<(Dictionary, Option<CoherenceSweep>)> {
        match &self.dictionary {
            DictionarySpec::Grid { lower, upper, points } => Ok((Dictionary::from_grid(lower, upper, points)?, None)),
            DictionarySpec::Explicit(d) => Ok((d.clone(), None)),
            DictionarySpec::Coherence { stream_len, threshold } => {
                let regressors = self.coherence_regressors(*stream_len)?;
                let kernel = self.kernel()?;
                match *threshold {
                    CoherenceThreshold::Fixed(mu0) => {
                        Ok((Dictionary::from_coherence(&regressors, &kernel, mu0)?, None))
                    }
                    CoherenceThreshold::TargetSize(m) => {
                        let sweep = coherence_sweep(&regressors, &kernel, m)?;
                        Ok((sweep.dictionary.clone(), Some(sweep)))
                    }
                }
            }
        }
    }

    /// Closed-form moments, convergence operator and sampled Wiener solution.
    pub fn build_theory(&self, dict: &Dictionary) -> Result<TheoryModel> {
        check_dim(EMBEDDING_DIM, dict.dim())?;
        let moments = KernelMoments::new(self.kernel()?, self.input_model()?)?;
        let convergence = ConvergenceModel::build(&moments, dict, self.step_size, self.storage)?;
        let estimation = EstimationConfig {
            n_samples: self.estimation_samples,
            seed: self.seed ^ 0xb007_5eed,
            ..EstimationConfig::default()
        };
        let mut stream = self.stream(ESTIMATION_STREAM)?;
        let optimal = estimate_optimal(&moments, dict, &mut stream, &estimation)?;
        TheoryModel::new(convergence, optimal)
    }
}

/// Squared a-priori error averaged over independent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    /// Entry `n` averages `e(n)^2`, the error made with the weights `alpha(n)`.
    pub mse_empirical: Vec<f64>,
    /// Standard error of each entry across runs; empty when unknown.
    pub mse_std_error: Vec<f64>,
    pub runs: usize,
    pub horizon: usize,
    /// Per-run mean of `e(n)^2` over the last tail of the horizon; empty when
    /// the curve was read back from a file.
    pub run_tail_means: Vec<f64>,
    pub mse_theory: Option<Vec<f64>>,
}

impl LearningCurve {
    /// Standard error of the steady-state estimate across runs.
    pub fn steady_state_std_error(&self) -> Option<f64> {
        let n = self.run_tail_means.len();
        if n < 2 {
            return None;
        }
        let mean = self.run_tail_means.iter().sum::<f64>() / n as f64;
        let var = self.run_tail_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Some((var / n as f64).sqrt())
    }

    /// Attaches the first `horizon` entries of a predicted curve.
    pub fn with_theory(mut self, predicted: &PredictedCurve) -> Result<Self> {
        if predicted.horizon != self.horizon {
            return Err(Error::HorizonMismatch { left: self.horizon, right: predicted.horizon });
        }
        self.mse_theory = Some(predicted.mse[..self.horizon].to_vec());
        Ok(self)
    }

    /// CSV with columns `n,mse_empirical,mse_theory`; the theory column is
    /// empty when absent.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "mse_empirical", "mse_theory"])?;
        for (n, e) in self.mse_empirical.iter().enumerate() {
            let t = self.mse_theory.as_ref().map(|t| t[n].to_string()).unwrap_or_default();
            out.write_record([n.to_string(), e.to_string(), t])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        let ec = headers
            .iter()
            .position(|h| h == "mse_empirical")
            .ok_or_else(|| Error::Parse("missing column \"mse_empirical\"".into()))?;
        let tc = headers.iter().position(|h| h == "mse_theory");
        let mut mse = Vec::new();
        let mut theory = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            mse.push(parse_field(&rec, ec)?);
            if let Some(tc) = tc {
                if rec.get(tc).is_some_and(|s| !s.is_empty()) {
                    theory.push(parse_field(&rec, tc)?);
                }
            }
        }
        if mse.is_empty() {
            return Err(Error::Parse("learning curve is empty".into()));
        }
        if mse.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parse("learning curve entries must be finite and non-negative".into()));
        }
        let horizon = mse.len();
        let mse_theory = (theory.len() == horizon).then_some(theory);
        Ok(Self { mse_empirical: mse, mse_std_error: Vec::new(), runs: 0, horizon, run_tail_means: Vec::new(), mse_theory })
    }
}

/// Runs `runs` independent filters from `initial_weights` and averages their
/// squared errors. `make_source(r)` supplies the data of run `r`.
///
/// Runs execute in parallel; the reduction is in run order, so the result is
/// bit-identical for any thread count.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_with<F, S>(
    dict: Arc<Dictionary>,
    kernel: GaussianKernel,
    step_size: f64,
    initial_weights: &DVector<f64>,
    runs: usize,
    horizon: usize,
    tail_fraction: f64,
    make_source: F,
) -> Result<LearningCurve>
where
    F: Fn(usize) -> Result<S> + Sync,
    S: SampleSource,
{
    if runs == 0 || horizon == 0 {
        return Err(Error::InvalidParameter("runs and horizon must be at least 1".into()));
    }
    check_dim(dict.len(), initial_weights.len())?;
    let tail = tail_len(horizon, tail_fraction);
    let per_run: Vec<Vec<f64>> = (0..runs)
        .into_par_iter()
        .map(|run| -> Result<Vec<f64>> {
            let mut source = make_source(run)?;
            check_dim(dict.dim(), source.dim())?;
            let mut filter = KlmsFilter::with_weights(dict.clone(), kernel, step_size, initial_weights.clone())?;
            let mut x = vec![0.0; source.dim()];
            let mut sq = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let y = source.next_sample(&mut x);
                match filter.step(&x, y) {
                    Ok(rec) => sq.push(rec.error * rec.error),
                    Err(Error::NonFinite { iteration }) => return Err(Error::RunDiverged { run, iteration }),
                    Err(e) => return Err(e),
                }
            }
            Ok(sq)
        })
        .collect::<Result<_>>()?;

    let mut mse = vec![0.0; horizon];
    let mut second = vec![0.0; horizon];
    for sq in &per_run {
        for ((acc, acc2), v) in mse.iter_mut().zip(second.iter_mut()).zip(sq) {
            *acc += v;
            *acc2 += v * v;
        }
    }
    let nf = runs as f64;
    mse.iter_mut().for_each(|v| *v /= nf);
    let mse_std_error = if runs < 2 {
        Vec::new()
    } else {
        mse.iter()
            .zip(&second)
            .map(|(m, s2)| (((s2 - nf * m * m) / (nf - 1.0)).max(0.0) / nf).sqrt())
            .collect()
    };
    let run_tail_means = per_run.iter().map(|sq| sq[horizon - tail..].iter().sum::<f64>() / tail as f64).collect();
    Ok(LearningCurve { mse_empirical: mse, mse_std_error, runs, horizon, run_tail_means, mse_theory: None })
}

/// Zero-initialized Monte Carlo learning curve of an experiment.
pub fn monte_carlo(config: &ExperimentConfig, dict: Arc<Dictionary>, runs: usize) -> Result<LearningCurve> {
    config.validate()?;
    let zeros = DVector::zeros(dict.len());
    monte_carlo_with(
        dict,
        config.kernel()?,
        config.step_size,
        &zeros,
        runs,
        config.horizon,
        config.compare.tail_fraction,
        |run| config.stream(run_stream(run)),
    )
}

/// Ensemble statistics of the weight vector at selected iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightEnsemble {
    pub iterations: Vec<usize>,
    pub mean: Vec<DVector<f64>>,
    pub std_error: Vec<DVector<f64>>,
    pub runs: usize,
    /// Runs whose weights blew up, with the iteration at which they did.
    pub diverged: Vec<(usize, usize)>,
}

/// Mean of `alpha(n)` over zero-initialized runs at the requested iterations.
/// Diverged runs are listed and excluded from the statistics.
pub fn weight_ensemble(
    config: &ExperimentConfig,
    dict: Arc<Dictionary>,
    step_size: f64,
    runs: usize,
    iterations: &[usize],
) -> Result<WeightEnsemble> {
    if runs == 0 {
        return Err(Error::InvalidParameter("runs must be at least 1".into()));
    }
    let kernel = config.kernel()?;
    let last = iterations.iter().copied().max().unwrap_or(0);
    let outcomes: Vec<std::result::Result<Vec<DVector<f64>>, usize>> = (0..runs)
        .into_par_iter()
        .map(|run| -> Result<_> {
            let mut stream = config.stream(run_stream(run))?;
            let mut filter = KlmsFilter::new(dict.clone(), kernel, step_size)?;
            let mut snaps = Vec::with_capacity(iterations.len());
            for n in 0..=last {
                if iterations.contains(&n) {
                    snaps.push((n, filter.weights().clone()));
                }
                if n == last {
                    break;
                }
                let (x, y) = stream.next_pair();
                match filter.step(&x, y) {
                    Ok(_) => {}
                    Err(Error::NonFinite { iteration }) => return Ok(Err(iteration)),
                    Err(e) => return Err(e),
                }
            }
            Ok(Ok(iterations
                .iter()
                .map(|n| snaps.iter().find(|(k, _)| k == n).expect("snapshot taken").1.clone())
                .collect()))
        })
        .collect::<Result<_>>()?;

    let m = dict.len();
    let mut diverged = Vec::new();
    let mut sums = vec![DVector::<f64>::zeros(m); iterations.len()];
    let mut sq = vec![DVector::<f64>::zeros(m); iterations.len()];
    let mut count = 0usize;
    for (run, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Err(iteration) => diverged.push((run, iteration)),
            Ok(snaps) => {
                count += 1;
                for (k, w) in snaps.iter().enumerate() {
                    sums[k] += w;
                    sq[k] += w.component_mul(w);
                }
            }
        }
    }
    let nf = count as f64;
    let mean: Vec<DVector<f64>> = sums.iter().map(|s| s / nf.max(1.0)).collect();
    let std_error = sq
        .iter()
        .zip(&mean)
        .map(|(s, mu)| {
            if count < 2 {
                return DVector::from_element(m, f64::NAN);
            }
            DVector::from_iterator(m, s.iter().zip(mu.iter()).map(|(s2, mu)| {
                let var = ((s2 - nf * mu * mu) / (nf - 1.0)).max(0.0);
                (var / nf).sqrt()
            }))
        })
        .collect();
    Ok(WeightEnsemble { iterations: iterations.to_vec(), mean, std_error, runs, diverged })
}

/// Centered moving average; near the ends the window is truncated to the
/// samples available.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let n = xs.len();
    if n == 0 || window <= 1 {
        return xs.to_vec();
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for x in xs {
        prefix.push(prefix.last().unwrap() + x);
    }
    let before = (window - 1) / 2;
    let after = window - 1 - before;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn tail_len(len: usize, fraction: f64) -> usize {
    ((len as f64 * fraction).round() as usize).clamp(1, len)
}

fn tail_mean(xs: &[f64], fraction: f64) -> f64 {
    let t = tail_len(xs.len(), fraction);
    xs[xs.len() - t..].iter().sum::<f64>() / t as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub n: usize,
    pub empirical: f64,
    pub theory: f64,
    pub relative_error: f64,
}

/// Theory-versus-simulation agreement. Relative errors are taken with the
/// theoretical value as reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub horizon: usize,
    pub window: usize,
    pub steady_state_empirical: f64,
    pub steady_state_empirical_std_error: Option<f64>,
    pub steady_state_theory: f64,
    pub steady_state_relative_error: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub max_transient_deviation: f64,
    pub max_transient_at: usize,
    pub tolerances: Tolerances,
    pub steady_state_pass: bool,
    pub transient_pass: bool,
}

impl ComparisonReport {
    pub fn passed(&self) -> bool {
        self.steady_state_pass && self.transient_pass
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "horizon = {}", self.horizon)?;
        writeln!(f, "window = {}", self.window)?;
        writeln!(f, "steady_state_empirical = {:.12e}", self.steady_state_empirical)?;
        if let Some(se) = self.steady_state_empirical_std_error {
            writeln!(f, "steady_state_empirical_std_error = {se:.6e}")?;
        }
        writeln!(f, "steady_state_theory = {:.12e}", self.steady_state_theory)?;
        writeln!(f, "steady_state_relative_error = {:.6}", self.steady_state_relative_error)?;
        for c in &self.checkpoints {
            writeln!(f, "checkpoint_{}_relative_error = {:.6}", c.n, c.relative_error)?;
        }
        writeln!(f, "max_transient_deviation = {:.6}", self.max_transient_deviation)?;
        writeln!(f, "max_transient_at = {}", self.max_transient_at)?;
        writeln!(f, "tolerance_steady_state = {}", self.tolerances.steady_state)?;
        writeln!(f, "tolerance_transient = {}", self.tolerances.transient)?;
        writeln!(f, "steady_state_pass = {}", self.steady_state_pass)?;
        writeln!(f, "transient_pass = {}", self.transient_pass)?;
        writeln!(f, "result = {}", if self.passed() { "pass" } else { "fail" })
    }
}

/// Compares an empirical curve with a prediction of the same horizon.
///
/// The steady-state theory value is the closed-form fixed point when the
/// prediction carries one, otherwise the tail mean of the smoothed
/// prediction. Checkpoints beyond the horizon are skipped.
pub fn compare(curve: &LearningCurve, predicted: &PredictedCurve, settings: &CompareSettings) -> Result<ComparisonReport> {
    if curve.horizon != predicted.horizon {
        return Err(Error::HorizonMismatch { left: curve.horizon, right: predicted.horizon });
    }
    let horizon = curve.horizon;
    if curve.mse_empirical.len() != horizon || predicted.mse.len() < horizon {
        return Err(Error::InvalidParameter("curve lengths disagree with their horizons".into()));
    }
    let emp = moving_average(&curve.mse_empirical, settings.window);
    let th = moving_average(&predicted.mse[..horizon], settings.window);
    let rel = |e: f64, t: f64| (e - t).abs() / t.abs();

    let steady_state_empirical = tail_mean(&emp, settings.tail_fraction);
    let steady_state_theory = predicted.steady_state_mse.unwrap_or_else(|| tail_mean(&th, settings.tail_fraction));
    let steady_state_relative_error = rel(steady_state_empirical, steady_state_theory);

    let checkpoints: Vec<Checkpoint> = settings
        .checkpoints
        .iter()
        .filter(|&&n| n < horizon)
        .map(|&n| Checkpoint { n, empirical: emp[n], theory: th[n], relative_error: rel(emp[n], th[n]) })
        .collect();
    let (max_transient_at, max_transient_deviation) = emp
        .iter()
        .zip(&th)
        .map(|(e, t)| rel(*e, *t))
        .enumerate()
        .fold((0, 0.0), |best, (i, d)| if d > best.1 { (i, d) } else { best });

    let tolerances = settings.tolerances;
    Ok(ComparisonReport {
        horizon,
        window: settings.window,
        steady_state_empirical,
        steady_state_empirical_std_error: curve.steady_state_std_error(),
        steady_state_theory,
        steady_state_relative_error,
        steady_state_pass: steady_state_relative_error <= tolerances.steady_state,
        transient_pass: checkpoints.iter().all(|c| c.relative_error <= tolerances.transient),
        checkpoints,
        max_transient_deviation,
        max_transient_at,
        tolerances,
    })
}

/// Everything an end-to-end experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dictionary: Dictionary,
    pub sweep: Option<CoherenceSweep>,
    pub theory: TheoryModel,
    pub predicted: PredictedCurve,
    pub curve: LearningCurve,
    pub report: ComparisonReport,
}

/// Dictionary, theory, Monte Carlo and comparison for one configuration.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let (dictionary, sweep) = config.build_dictionary()?;
    let theory = config.build_theory(&dictionary)?;
    let predicted = theory.predict_curve(&theory.zero_init_covariance(), config.horizon)?;
    let curve = monte_carlo(config, Arc::new(dictionary.clone()), config.runs)?.with_theory(&predicted)?;
    let report = compare(&curve, &predicted, &config.compare)?;
    Ok(ExperimentOutcome { dictionary, sweep, theory, predicted, curve, report })
}
