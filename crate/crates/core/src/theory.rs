//! Analytical transient and steady-state model of Gaussian KLMS for a given
//! dictionary.
//!
//! With `v(n) = alpha(n) - alpha*` the weight-error vector and
//! `C(n) = E{v(n) v(n)'}`:
//!
//! ```text
//! E{v(n+1)} = (I - eta R) E{v(n)}
//! C(n+1)    = C(n) - eta (R C(n) + C(n) R) + eta^2 T(C(n)) + eta^2 J_min R
//! T(C)_ij   = trace{K^(i,j) C},   K^(i,j)_lp = E{k_i k_j k_l k_p}
//! J(n)      = J_min + trace{R C(n)}
//! ```
//!
//! Column-stacked, the covariance recursion is `c(n+1) = G c(n) + eta^2 J_min r`
//! with `G = I - eta (I (x) R + R (x) I) + eta^2 G3`, `G3[i + jM, l + pM] = K^(i,j)_lp`.
//! `G` is symmetric, so its spectral radius is its largest absolute eigenvalue.

use std::fmt;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dictionary::Dictionary;
use crate::error::{check_dim, Error, Result};
use crate::filter::kernelize;
use crate::moments::{max_asymmetry, symmetrize, FourthOrderTable, KernelMoments};

/// Largest accepted condition number of the kernelized-input correlation matrix.
pub const MAX_RKK_CONDITION: f64 = 1e12;
/// Default largest dictionary size for which `G` is stored densely.
pub const DEFAULT_DENSE_LIMIT: usize = 80;
/// Trace of `C(n)` beyond which the covariance recursion is declared diverged.
pub const DIVERGENCE_TRACE: f64 = 1e12;

const RESYMMETRIZE_TOL: f64 = 1e-12;

/// A stationary stream of (input vector, desired output) pairs.
pub trait SampleSource {
    fn dim(&self) -> usize;

    /// Writes the next input into `x` and returns the matching output.
    fn next_sample(&mut self, x: &mut [f64]) -> f64;
}

impl<S: SampleSource + ?Sized> SampleSource for &mut S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn next_sample(&mut self, x: &mut [f64]) -> f64 {
        (**self).next_sample(x)
    }
}

#[derive(Debug, Clone)]
pub struct EstimationConfig {
    pub n_samples: usize,
    /// Contiguous batches resampled by the bootstrap.
    pub batches: usize,
    pub bootstrap_replicates: usize,
    pub seed: u64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { n_samples: 1_000_000, batches: 50, bootstrap_replicates: 200, seed: 0x5eed }
    }
}

/// Wiener solution for a fixed dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    pub cross_correlation: DVector<f64>,
    pub optimal_weights: DVector<f64>,
    /// `J_min`, clamped at zero.
    pub min_mse: f64,
    /// `E{y^2} - p' alpha*` before clamping.
    pub min_mse_raw: f64,
    /// Bootstrap standard error of `min_mse`; zero for exact statistics.
    pub min_mse_std_error: f64,
    pub output_power: f64,
    pub n_samples: usize,
}

impl OptimalSolution {
    /// Solves `R alpha* = p` for known second-order statistics.
    pub fn from_statistics(rkk: &DMatrix<f64>, cross_correlation: DVector<f64>, output_power: f64) -> Result<Self> {
        check_dim(rkk.nrows(), cross_correlation.len())?;
        let solver = RkkSolver::new(rkk)?;
        let optimal_weights = solver.solve(&cross_correlation)?;
        let raw = output_power - cross_correlation.dot(&optimal_weights);
        Ok(Self {
            cross_correlation,
            optimal_weights,
            min_mse: raw.max(0.0),
            min_mse_raw: raw,
            min_mse_std_error: 0.0,
            output_power,
            n_samples: 0,
        })
    }
}

struct RkkSolver<'a> {
    rkk: &'a DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl<'a> RkkSolver<'a> {
    fn new(rkk: &'a DMatrix<f64>) -> Result<Self> {
        let condition = condition_number(rkk);
        if condition.is_nan() || condition > MAX_RKK_CONDITION {
            return Err(Error::IllConditioned { condition, limit: MAX_RKK_CONDITION });
        }
        let chol = Cholesky::new(rkk.clone())
            .ok_or_else(|| Error::SingularMatrix("kernelized-input correlation is not positive definite".into()))?;
        Ok(Self { rkk, chol })
    }

    /// Cholesky solve with one step of iterative refinement; the residual must
    /// fall below `1e-8 |p|`.
    fn solve(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = self.chol.solve(p);
        let residual = p - self.rkk * &x;
        x += self.chol.solve(&residual);
        let residual = (p - self.rkk * &x).norm();
        if residual > 1e-8 * p.norm() {
            return Err(Error::SingularMatrix(format!("Wiener solve residual {residual:e} too large")));
        }
        Ok(x)
    }
}

/// Estimates `p = E{y k(x)}` and `E{y^2}` by sample averaging and solves for
/// the optimal weights against the closed-form correlation matrix.
///
/// The standard error of `J_min` comes from a bootstrap over contiguous
/// batches, which keeps the time correlation of the stream inside each batch.
pub fn estimate_optimal<S: SampleSource>(
    moments: &KernelMoments,
    dict: &Dictionary,
    source: &mut S,
    config: &EstimationConfig,
) -> Result<OptimalSolution> {
    check_dim(dict.dim(), source.dim())?;
    if config.batches < 2 || config.n_samples < 10 * config.batches {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 batches and 10 samples per batch (n_samples = {}, batches = {})",
            config.n_samples, config.batches
        )));
    }
    let rkk = moments.rkk_matrix(dict)?;
    let solver = RkkSolver::new(&rkk)?;
    let m = dict.len();
    let kernel = moments.kernel();

    let mut batch_p = vec![DVector::<f64>::zeros(m); config.batches];
    let mut batch_y2 = vec![0.0; config.batches];
    let mut batch_n = vec![0usize; config.batches];
    let mut x = vec![0.0; dict.dim()];
    for n in 0..config.n_samples {
        let b = n * config.batches / config.n_samples;
        let y = source.next_sample(&mut x);
        let k = kernelize(&x, dict, kernel)?;
        batch_p[b].axpy(y, &k, 1.0);
        batch_y2[b] += y * y;
        batch_n[b] += 1;
    }

    let solve_from = |idx: &mut dyn Iterator<Item = usize>| -> Result<(DVector<f64>, f64, f64, DVector<f64>)> {
        let mut p = DVector::zeros(m);
        let mut y2 = 0.0;
        let mut count = 0usize;
        for b in idx {
            p += &batch_p[b];
            y2 += batch_y2[b];
            count += batch_n[b];
        }
        p /= count as f64;
        y2 /= count as f64;
        let w = solver.solve(&p)?;
        let j = y2 - p.dot(&w);
        Ok((p, y2, j, w))
    };

    let (p, ey2, raw, weights) = solve_from(&mut (0..config.batches))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reps = Vec::with_capacity(config.bootstrap_replicates);
    for _ in 0..config.bootstrap_replicates {
        let picks: Vec<usize> = (0..config.batches).map(|_| rng.random_range(0..config.batches)).collect();
        let (_, _, j, _) = solve_from(&mut picks.into_iter())?;
        reps.push(j);
    }
    let se = std_dev(&reps);

    Ok(OptimalSolution {
        cross_correlation: p,
        optimal_weights: weights,
        min_mse: raw.max(0.0),
        min_mse_raw: raw,
        min_mse_std_error: se,
        output_power: ey2,
        n_samples: config.n_samples,
    })
}

/// `2 / lambda_max(R)`: the mean recursion converges for step sizes strictly
/// between zero and this bound.
pub fn mean_stability_bound(rkk: &DMatrix<f64>) -> f64 {
    2.0 / symmetric_eigenvalues(rkk).max()
}

/// Spectral radius of `I - eta R`.
pub fn mean_iteration_radius(rkk: &DMatrix<f64>, eta: f64) -> f64 {
    symmetric_eigenvalues(rkk)
        .iter()
        .map(|l| (1.0 - eta * l).abs())
        .fold(0.0, f64::max)
}

/// Iterates `v(n+1) = (I - eta R) v(n)`; returns `v(0) ..= v(horizon)`.
pub fn mean_weight_recursion(rkk: &DMatrix<f64>, eta: f64, v0: &DVector<f64>, horizon: usize) -> Result<Vec<DVector<f64>>> {
    check_dim(rkk.nrows(), v0.len())?;
    let mut out = Vec::with_capacity(horizon + 1);
    let mut v = v0.clone();
    for _ in 0..horizon {
        let next = &v - (rkk * &v) * eta;
        out.push(std::mem::replace(&mut v, next));
    }
    out.push(v);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsStability {
    pub stable: bool,
    pub spectral_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub covariance: DMatrix<f64>,
    pub mse: f64,
}

#[derive(Debug, Clone)]
enum Storage {
    Dense { g: DMatrix<f64>, g3: DMatrix<f64> },
    MatrixFree { table: FourthOrderTable },
}

/// How `G` is held in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageMode {
    /// Dense up to the given dictionary size, matrix-free beyond.
    Auto(usize),
    Dense,
    MatrixFree,
}

impl Default for StorageMode {
    fn default() -> Self {
        StorageMode::Auto(DEFAULT_DENSE_LIMIT)
    }
}

/// Mean and mean-square convergence model for one (dictionary, kernel,
/// input law, step size).
#[derive(Debug, Clone)]
pub struct ConvergenceModel {
    rkk: DMatrix<f64>,
    eta: f64,
    storage: Storage,
}

impl ConvergenceModel {
    pub fn build(moments: &KernelMoments, dict: &Dictionary, eta: f64, mode: StorageMode) -> Result<Self> {
        check_step(eta)?;
        let rkk = moments.rkk_matrix(dict)?;
        let table = moments.fourth_order_table(dict)?;
        let dense = match mode {
            StorageMode::Auto(limit) => dict.len() <= limit,
            StorageMode::Dense => true,
            StorageMode::MatrixFree => false,
        };
        if dense {
            build_g(&rkk, &table.to_dense(), eta)
        } else {
            Ok(Self { rkk, eta, storage: Storage::MatrixFree { table } })
        }
    }

    pub fn size(&self) -> usize {
        self.rkk.nrows()
    }

    pub fn step_size(&self) -> f64 {
        self.eta
    }

    pub fn rkk(&self) -> &DMatrix<f64> {
        &self.rkk
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense { .. })
    }

    /// Dense `G`, when stored.
    pub fn g(&self) -> Option<&DMatrix<f64>> {
        match &self.storage {
            Storage::Dense { g, .. } => Some(g),
            Storage::MatrixFree { .. } => None,
        }
    }

    pub fn g3(&self) -> DMatrix<f64> {
        match &self.storage {
            Storage::Dense { g3, .. } => g3.clone(),
            Storage::MatrixFree { table } => table.to_dense(),
        }
    }

    /// `I (x) R`.
    pub fn g1(&self) -> DMatrix<f64> {
        DMatrix::<f64>::identity(self.size(), self.size()).kronecker(&self.rkk)
    }

    /// `R (x) I`.
    pub fn g2(&self) -> DMatrix<f64> {
        self.rkk.kronecker(&DMatrix::<f64>::identity(self.size(), self.size()))
    }

    pub fn mean_stability_bound(&self) -> f64 {
        mean_stability_bound(&self.rkk)
    }

    pub fn mean_iteration_radius(&self) -> f64 {
        mean_iteration_radius(&self.rkk, self.eta)
    }

    pub fn mean_weight_recursion(&self, v0: &DVector<f64>, horizon: usize) -> Result<Vec<DVector<f64>>> {
        mean_weight_recursion(&self.rkk, self.eta, v0, horizon)
    }

    /// `G c` for a column-stacked `c`.
    pub fn apply_g(&self, c: &DVector<f64>) -> DVector<f64> {
        let m = self.size();
        debug_assert_eq!(c.len(), m * m);
        match &self.storage {
            Storage::Dense { g, .. } => {
                // G is symmetric, so row a equals the contiguous column a.
                let m2 = m * m;
                let cs = c.as_slice();
                let out: Vec<f64> = g
                    .as_slice()
                    .par_chunks(m2)
                    .map(|col| col.iter().zip(cs).map(|(a, b)| a * b).sum())
                    .collect();
                DVector::from_vec(out)
            }
            Storage::MatrixFree { table } => {
                let cm = DMatrix::from_column_slice(m, m, c.as_slice());
                let lin = &cm - (&self.rkk * &cm + &cm * &self.rkk) * self.eta;
                let t = trace_term(table, c);
                let mut out = lin;
                out += DMatrix::from_column_slice(m, m, t.as_slice()) * (self.eta * self.eta);
                DVector::from_column_slice(out.as_slice())
            }
        }
    }

    /// One step of the covariance recursion in matrix form.
    pub fn step_covariance(&self, c: &DMatrix<f64>, j_min: f64) -> DMatrix<f64> {
        let m = self.size();
        let next = self.apply_g(&DVector::from_column_slice(c.as_slice()));
        let mut out = DMatrix::from_column_slice(m, m, next.as_slice());
        out += &self.rkk * (self.eta * self.eta * j_min);
        out
    }

    /// Lazily iterates the covariance recursion from `c0`.
    pub fn covariance_iter(&self, c0: &DMatrix<f64>, j_min: f64) -> Result<CovarianceIter<'_>> {
        let m = self.size();
        check_dim(m, c0.nrows())?;
        check_dim(m, c0.ncols())?;
        Ok(CovarianceIter { model: self, current: Some(c0.clone()), j_min, step: 0 })
    }

    /// `C(0) ..= C(horizon)`.
    pub fn covariance_recursion(&self, c0: &DMatrix<f64>, j_min: f64, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
        self.covariance_iter(c0, j_min)?.take(horizon + 1).collect()
    }

    pub fn ms_stability(&self) -> MsStability {
        let spectral_radius = match &self.storage {
            Storage::Dense { g, .. } => symmetric_eigenvalues(g).iter().fold(0.0f64, |acc, l| acc.max(l.abs())),
            Storage::MatrixFree { .. } => self.lanczos_radius(),
        };
        MsStability { stable: spectral_radius < 1.0, spectral_radius }
    }

    /// Fixed point `c = G c + eta^2 J_min r`.
    pub fn steady_state(&self, j_min: f64) -> Result<SteadyState> {
        let stability = self.ms_stability();
        if !stability.stable {
            return Err(Error::Unstable { spectral_radius: stability.spectral_radius });
        }
        let m = self.size();
        let rhs = DVector::from_column_slice(self.rkk.as_slice()) * (self.eta * self.eta * j_min);
        let c = match &self.storage {
            Storage::Dense { g, .. } => {
                let a = DMatrix::<f64>::identity(m * m, m * m) - g;
                let solve = |b: &DVector<f64>| -> Result<DVector<f64>> {
                    match Cholesky::new(a.clone()) {
                        Some(ch) => Ok(ch.solve(b)),
                        None => a
                            .clone()
                            .lu()
                            .solve(b)
                            .ok_or_else(|| Error::SingularMatrix("I - G is singular".into())),
                    }
                };
                let mut c = solve(&rhs)?;
                let residual = &rhs - &a * &c;
                c += solve(&residual)?;
                c
            }
            Storage::MatrixFree { .. } => self.conjugate_gradient(&rhs)?,
        };
        let covariance = symmetrize(DMatrix::from_column_slice(m, m, c.as_slice()));
        let mse = j_min + (&self.rkk * &covariance).trace();
        Ok(SteadyState { covariance, mse })
    }

    /// Solves `(I - G) c = b` without forming `G`; `I - G` is positive
    /// definite whenever the model is mean-square stable.
    fn conjugate_gradient(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let apply = |v: &DVector<f64>| v - self.apply_g(v);
        let n = b.len();
        let mut x = DVector::zeros(n);
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = r.dot(&r);
        let target = 1e-28 * b.dot(b).max(f64::MIN_POSITIVE);
        for _ in 0..(20 * n).max(1000) {
            if rr <= target {
                return Ok(x);
            }
            let ap = apply(&p);
            let alpha = rr / p.dot(&ap);
            x.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &ap, 1.0);
            let next = r.dot(&r);
            p = &r + &p * (next / rr);
            rr = next;
        }
        if rr <= 1e-20 * b.dot(b) {
            Ok(x)
        } else {
            Err(Error::SingularMatrix("conjugate gradient did not converge on I - G".into()))
        }
    }

    /// Extreme eigenvalues of the symmetric operator `G` by Lanczos with full
    /// reorthogonalization. Exact once the Krylov space spans `R^(M^2)`.
    fn lanczos_radius(&self) -> f64 {
        let n = self.size() * self.size();
        let steps = n.min(300);
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(steps);
        let mut alphas = Vec::with_capacity(steps);
        let mut betas: Vec<f64> = Vec::with_capacity(steps);
        let mut q = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 113) as f64 / 113.0);
        q /= q.norm();
        for k in 0..steps {
            let mut w = self.apply_g(&q);
            let alpha = q.dot(&w);
            w.axpy(-alpha, &q, 1.0);
            if k > 0 {
                w.axpy(-betas[k - 1], &basis[k - 1], 1.0);
            }
            for b in basis.iter().chain(std::iter::once(&q)) {
                let proj = b.dot(&w);
                w.axpy(-proj, b, 1.0);
            }
            alphas.push(alpha);
            basis.push(q.clone());
            let beta = w.norm();
            if beta < 1e-12 || k + 1 == steps {
                break;
            }
            betas.push(beta);
            q = w / beta;
        }
        let k = alphas.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alphas[i];
            if i + 1 < k {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        symmetric_eigenvalues(&t).iter().fold(0.0f64, |acc, l| acc.max(l.abs()))
    }
}

/// Assembles `G = I - eta (I (x) R + R (x) I) + eta^2 G3` from `R` and the
/// column-stacked fourth-order moment matrix.
pub fn build_g(rkk: &DMatrix<f64>, k4: &DMatrix<f64>, eta: f64) -> Result<ConvergenceModel> {
    check_step(eta)?;
    let m = rkk.nrows();
    check_dim(m, rkk.ncols())?;
    check_dim(m * m, k4.nrows())?;
    check_dim(m * m, k4.ncols())?;
    let scale = k4.amax().max(f64::MIN_POSITIVE);
    if max_asymmetry(k4) > 1e-12 * scale {
        return Err(Error::InvalidParameter("fourth-order moment matrix must be symmetric".into()));
    }
    let m2 = m * m;
    let eta2 = eta * eta;
    let mut data = vec![0.0; m2 * m2];
    data.par_chunks_mut(m2).enumerate().for_each(|(b, col)| {
        let (l, p) = (b % m, b / m);
        for (a, out) in col.iter_mut().enumerate() {
            let (i, j) = (a % m, a / m);
            let mut lin = 0.0;
            if j == p {
                lin += rkk[(i, l)];
            }
            if i == l {
                lin += rkk[(j, p)];
            }
            let id = if a == b { 1.0 } else { 0.0 };
            *out = id - eta * lin + eta2 * k4[(a, b)];
        }
    });
    Ok(ConvergenceModel {
        rkk: rkk.clone(),
        eta,
        storage: Storage::Dense { g: DMatrix::from_vec(m2, m2, data), g3: k4.clone() },
    })
}

fn trace_term(table: &FourthOrderTable, c: &DVector<f64>) -> DVector<f64> {
    let m2 = c.len();
    let cs = c.as_slice();
    let t: Vec<f64> = (0..m2)
        .into_par_iter()
        .map(|a| (0..m2).map(|b| table.entry(a, b) * cs[b]).sum())
        .collect();
    DVector::from_vec(t)
}

fn check_step(eta: f64) -> Result<()> {
    if eta.is_finite() && eta >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("step size must be non-negative, got {eta}")))
    }
}

/// Iterator over `C(0), C(1), ...`; yields `Err(Diverged)` once and stops
/// when the trace leaves `[-DIVERGENCE_TRACE, DIVERGENCE_TRACE]` or turns
/// non-finite.
pub struct CovarianceIter<'a> {
    model: &'a ConvergenceModel,
    current: Option<DMatrix<f64>>,
    j_min: f64,
    step: usize,
}

impl Iterator for CovarianceIter<'_> {
    type Item = Result<DMatrix<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        let current = self.current.take()?;
        let trace = current.trace();
        if !trace.is_finite() || trace.abs() > DIVERGENCE_TRACE {
            return Some(Err(Error::Diverged { step: self.step, trace }));
        }
        let mut next = self.model.step_covariance(&current, self.j_min);
        let scale = next.amax().max(f64::MIN_POSITIVE);
        if max_asymmetry(&next) > RESYMMETRIZE_TOL * scale {
            next = symmetrize(next);
        }
        self.current = Some(next);
        self.step += 1;
        Some(Ok(current))
    }
}

/// Predicted learning curve `J(n) = J_min + trace{R C(n)}` for `n = 0 ..= horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedCurve {
    pub mse: Vec<f64>,
    pub emse: Vec<f64>,
    pub min_mse: f64,
    pub steady_state_mse: Option<f64>,
    pub horizon: usize,
}

impl PredictedCurve {
    /// CSV with columns `n,mse_theory,emse_theory`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "mse_theory", "emse_theory"])?;
        for (n, (m, e)) in self.mse.iter().zip(&self.emse).enumerate() {
            out.write_record([n.to_string(), m.to_string(), e.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Parse(format!("missing column {name:?}")))
        };
        let (mc, ec) = (col("mse_theory")?, col("emse_theory")?);
        let mut mse = Vec::new();
        let mut emse = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            mse.push(parse_field(&rec, mc)?);
            emse.push(parse_field(&rec, ec)?);
        }
        if mse.is_empty() {
            return Err(Error::Parse("predicted curve is empty".into()));
        }
        let min_mse = mse[0] - emse[0];
        let horizon = mse.len() - 1;
        Ok(Self { mse, emse, min_mse, steady_state_mse: None, horizon })
    }
}

pub(crate) fn parse_field(rec: &csv::StringRecord, idx: usize) -> Result<f64> {
    let s = rec.get(idx).ok_or_else(|| Error::Parse("short CSV row".into()))?;
    s.parse().map_err(|_| Error::Parse(format!("bad number {s:?}")))
}

/// The full analytical model: convergence operator plus Wiener solution.
#[derive(Debug, Clone)]
pub struct TheoryModel {
    pub convergence: ConvergenceModel,
    pub optimal: OptimalSolution,
}

impl TheoryModel {
    pub fn new(convergence: ConvergenceModel, optimal: OptimalSolution) -> Result<Self> {
        check_dim(convergence.size(), optimal.optimal_weights.len())?;
        Ok(Self { convergence, optimal })
    }

    pub fn min_mse(&self) -> f64 {
        self.optimal.min_mse
    }

    /// `alpha* alpha*'`: the weight-error covariance of a zero-initialized filter.
    pub fn zero_init_covariance(&self) -> DMatrix<f64> {
        let w = &self.optimal.optimal_weights;
        w * w.transpose()
    }

    pub fn steady_state(&self) -> Result<SteadyState> {
        self.convergence.steady_state(self.min_mse())
    }

    pub fn predict_curve(&self, c0: &DMatrix<f64>, horizon: usize) -> Result<PredictedCurve> {
        let j_min = self.min_mse();
        let rkk = self.convergence.rkk();
        let mut mse = Vec::with_capacity(horizon + 1);
        let mut emse = Vec::with_capacity(horizon + 1);
        for c in self.convergence.covariance_iter(c0, j_min)?.take(horizon + 1) {
            let e = rkk.component_mul(&c?).sum();
            emse.push(e);
            mse.push(j_min + e);
        }
        let steady_state_mse = match self.steady_state() {
            Ok(s) => Some(s.mse),
            Err(Error::Unstable { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(PredictedCurve { mse, emse, min_mse: j_min, steady_state_mse, horizon })
    }

    pub fn summary(&self) -> Result<TheorySummary> {
        let rkk = self.convergence.rkk();
        let eig = symmetric_eigenvalues(rkk);
        let eta = self.convergence.step_size();
        let bound = 2.0 / eig.max();
        let ms = self.convergence.ms_stability();
        let steady_state_mse = if ms.stable { Some(self.steady_state()?.mse) } else { None };
        Ok(TheorySummary {
            dictionary_size: self.convergence.size(),
            step_size: eta,
            lambda_max: eig.max(),
            lambda_min: eig.min(),
            mean_stability_bound: bound,
            mean_stable: eta > 0.0 && eta < bound,
            g_spectral_radius: ms.spectral_radius,
            ms_stable: ms.stable,
            min_mse: self.optimal.min_mse,
            min_mse_std_error: self.optimal.min_mse_std_error,
            output_power: self.optimal.output_power,
            steady_state_mse,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheorySummary {
    pub dictionary_size: usize,
    pub step_size: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub mean_stability_bound: f64,
    pub mean_stable: bool,
    pub g_spectral_radius: f64,
    pub ms_stable: bool,
    pub min_mse: f64,
    pub min_mse_std_error: f64,
    pub output_power: f64,
    pub steady_state_mse: Option<f64>,
}

impl fmt::Display for TheorySummary {
    /// One `key = value` per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dictionary_size = {}", self.dictionary_size)?;
        writeln!(f, "step_size = {}", self.step_size)?;
        writeln!(f, "lambda_max = {:.12e}", self.lambda_max)?;
        writeln!(f, "lambda_min = {:.12e}", self.lambda_min)?;
        writeln!(f, "mean_stability_bound = {:.12e}", self.mean_stability_bound)?;
        writeln!(f, "mean_stable = {}", self.mean_stable)?;
        writeln!(f, "g_spectral_radius = {:.15}", self.g_spectral_radius)?;
        writeln!(f, "ms_stable = {}", self.ms_stable)?;
        writeln!(f, "min_mse = {:.12e}", self.min_mse)?;
        writeln!(f, "min_mse_std_error = {:.6e}", self.min_mse_std_error)?;
        writeln!(f, "output_power = {:.12e}", self.output_power)?;
        match self.steady_state_mse {
            Some(v) => writeln!(f, "steady_state_mse = {v:.12e}"),
            None => writeln!(f, "steady_state_mse = unstable"),
        }
    }
}

pub(crate) fn symmetric_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(a.clone()).eigenvalues
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    let eig = symmetric_eigenvalues(a);
    let lo = eig.min();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        eig.max() / lo
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}
