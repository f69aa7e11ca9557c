//! Closed-form expectations of Gaussian-kernel products under a zero-mean
//! Gaussian input law.
//!
//! Every moment here is an instance of the moment generating function of a
//! Gaussian quadratic form,
//!
//! ```text
//! zeta = xi' H xi + b' xi,   xi ~ N(0, R)
//! E{exp(s zeta)} = |I - 2 s H R|^(-1/2) * exp(s^2/2 * b' R (I - 2 s H R)^(-1) b)
//! ```
//!
//! With `n` kernels centred at `c_1..c_n` the product
//! `prod_k exp(-|x - c_k|^2 / 2 sigma^2)` is such a form with `H = (n/2) I`,
//! `b = -sum_k c_k` and `s = -1/sigma^2`, which gives
//!
//! ```text
//! E{prod_k k(x, c_k)} = |I + (n/sigma^2) R|^(-1/2)
//!     * exp(-1/(2 n sigma^2) * [n sum_k |c_k|^2 - |cbar|^2_{(I + sigma^2 R^-1 / n)^-1}])
//! ```
//!
//! `n = 2` yields the correlation matrix of the kernelized input and `n = 4`
//! the fourth-order moments that drive the covariance recursion.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;

use crate::dictionary::Dictionary;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{sq_norm, GaussianKernel};

/// Largest accepted condition number of an input autocorrelation matrix.
pub const MAX_INPUT_CONDITION: f64 = 1e12;

const SYMMETRY_TOL: f64 = 1e-12;

/// Parameters of a stationary AR(1) process `x(n) = rho x(n-1) + sigma_x sqrt(1 - rho^2) w(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Params {
    pub rho: f64,
    pub sigma_x: f64,
}

impl Ar1Params {
    pub fn new(rho: f64, sigma_x: f64) -> Result<Self> {
        if !(rho.is_finite() && rho.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!("AR(1) coefficient must lie in (-1, 1), got {rho}")));
        }
        if !(sigma_x.is_finite() && sigma_x > 0.0) {
            return Err(Error::InvalidParameter(format!("AR(1) standard deviation must be positive, got {sigma_x}")));
        }
        Ok(Self { rho, sigma_x })
    }
}

/// Zero-mean Gaussian law of the filter input vector.
#[derive(Debug, Clone)]
pub struct InputModel {
    autocorrelation: DMatrix<f64>,
    generator: Option<Ar1Params>,
}

impl InputModel {
    /// Accepts a symmetric positive-definite autocorrelation matrix whose
    /// condition number does not exceed [`MAX_INPUT_CONDITION`].
    pub fn new(autocorrelation: DMatrix<f64>) -> Result<Self> {
        let n = autocorrelation.nrows();
        check_dim(n, autocorrelation.ncols())?;
        if n == 0 {
            return Err(Error::InvalidParameter("input dimension must be at least 1".into()));
        }
        if autocorrelation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("autocorrelation has non-finite entries".into()));
        }
        let scale = autocorrelation.amax().max(f64::MIN_POSITIVE);
        if max_asymmetry(&autocorrelation) > SYMMETRY_TOL * scale {
            return Err(Error::InvalidParameter("autocorrelation must be symmetric".into()));
        }
        let eig = SymmetricEigen::new(autocorrelation.clone()).eigenvalues;
        let lo = eig.min();
        let hi = eig.max();
        if lo <= 0.0 {
            return Err(Error::SingularMatrix(format!(
                "autocorrelation is not positive definite (smallest eigenvalue {lo:e})"
            )));
        }
        let condition = hi / lo;
        if condition > MAX_INPUT_CONDITION {
            return Err(Error::IllConditioned { condition, limit: MAX_INPUT_CONDITION });
        }
        Ok(Self { autocorrelation, generator: None })
    }

    /// Input law of the tapped-delay embedding `[x(n), ..., x(n-L+1)]` of a
    /// stationary AR(1) sequence: `R_ij = sigma_x^2 rho^|i-j|`.
    pub fn ar1_embedding(params: Ar1Params, dimension: usize) -> Result<Self> {
        let var = params.sigma_x * params.sigma_x;
        let r = DMatrix::from_fn(dimension, dimension, |i, j| var * params.rho.powi(i.abs_diff(j) as i32));
        let mut model = Self::new(r)?;
        model.generator = Some(params);
        Ok(model)
    }

    pub fn isotropic(dimension: usize, variance: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal_element(dimension, dimension, variance))
    }

    #[inline]
    pub fn dimension(&self) -> usize {
        self.autocorrelation.nrows()
    }

    #[inline]
    pub fn autocorrelation(&self) -> &DMatrix<f64> {
        &self.autocorrelation
    }

    pub fn generator(&self) -> Option<Ar1Params> {
        self.generator
    }
}

/// The quadratic form `zeta = xi' H xi + b' xi` evaluated at MGF argument `s`.
#[derive(Debug, Clone)]
pub struct QuadraticFormSpec {
    h: DMatrix<f64>,
    b: DVector<f64>,
    s: f64,
}

impl QuadraticFormSpec {
    pub fn new(h: DMatrix<f64>, b: DVector<f64>, s: f64) -> Result<Self> {
        check_dim(h.nrows(), h.ncols())?;
        check_dim(h.nrows(), b.len())?;
        let scale = h.amax().max(1.0);
        if max_asymmetry(&h) > SYMMETRY_TOL * scale {
            return Err(Error::InvalidParameter("quadratic form matrix must be symmetric".into()));
        }
        if !s.is_finite() {
            return Err(Error::InvalidParameter("MGF argument must be finite".into()));
        }
        Ok(Self { h, b, s })
    }

    pub fn dimension(&self) -> usize {
        self.b.len()
    }
}

/// Moment generating function of a Gaussian quadratic form.
///
/// Evaluated through the Cholesky factor `R = L L'`, which turns
/// `|I - 2sHR|` into `|I - 2s L'HL|` and the exponent into a solve against the
/// symmetric matrix `I - 2s L'HL`. A non-positive pivot means the expectation
/// does not exist for this `s`.
pub fn mgf_quadratic(spec: &QuadraticFormSpec, input: &InputModel) -> Result<f64> {
    check_dim(input.dimension(), spec.dimension())?;
    let n = spec.dimension();
    let r_chol = Cholesky::new(input.autocorrelation.clone())
        .ok_or_else(|| Error::SingularMatrix("input autocorrelation is not positive definite".into()))?;
    let l = r_chol.l();
    let core = DMatrix::identity(n, n) - (l.transpose() * &spec.h * &l) * (2.0 * spec.s);
    let core = symmetrize(core);
    let chol = Cholesky::new(core).ok_or_else(|| {
        Error::SingularMatrix(format!("I - 2sHR has a non-positive pivot at s = {}", spec.s))
    })?;
    let det = chol_determinant(&chol);
    let lb = l.transpose() * &spec.b;
    let quad = lb.dot(&chol.solve(&lb));
    Ok(det.powf(-0.5) * (0.5 * spec.s * spec.s * quad).exp())
}

/// `v' A v`.
pub fn weighted_sq_norm(v: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
    v.dot(&(a * v))
}

/// Factors shared by every `n`-fold kernel product moment.
#[derive(Debug, Clone)]
struct ProductMoment {
    order: usize,
    det_factor: f64,
    /// Cholesky factor of `R + (sigma^2 / n) I`.
    shifted: Cholesky<f64, Dyn>,
}

impl ProductMoment {
    fn new(order: usize, kernel: &GaussianKernel, input: &InputModel) -> Result<Self> {
        let sigma2 = kernel.bandwidth().powi(2);
        let r = input.autocorrelation();
        let l = r.nrows();
        let scaled = symmetrize(DMatrix::identity(l, l) + r * (order as f64 / sigma2));
        let det = Cholesky::new(scaled)
            .map(|c| chol_determinant(&c))
            .ok_or_else(|| Error::SingularMatrix(format!("I + ({order}/sigma^2) R is not positive definite")))?;
        if !(det > 0.0 && det.is_finite()) {
            return Err(Error::SingularMatrix(format!("non-positive determinant {det:e}")));
        }
        let shifted = Cholesky::new(r + DMatrix::identity(l, l) * (sigma2 / order as f64))
            .ok_or_else(|| Error::SingularMatrix("R + (sigma^2/n) I is not positive definite".into()))?;
        Ok(Self { order, det_factor: det.powf(-0.5), shifted })
    }

    /// `cbar' (I + c R^-1)^-1 cbar`, computed as `cbar' R (R + c I)^-1 cbar`
    /// with `c = sigma^2 / n`, without inverting `R`.
    fn tilted_norm(&self, r: &DMatrix<f64>, cbar: &DVector<f64>) -> f64 {
        let u = self.shifted.solve(cbar);
        cbar.dot(&(r * u))
    }

    fn eval(&self, sigma2: f64, r: &DMatrix<f64>, sum: &DVector<f64>, sum_sq_norms: f64) -> f64 {
        let n = self.order as f64;
        let w = self.tilted_norm(r, sum);
        self.det_factor * (-(n * sum_sq_norms - w) / (2.0 * n * sigma2)).exp()
    }
}

/// Closed-form second and fourth order kernel moments for one
/// (kernel, input law) pair.
#[derive(Debug, Clone)]
pub struct KernelMoments {
    kernel: GaussianKernel,
    input: InputModel,
    second: ProductMoment,
    fourth: ProductMoment,
}

impl KernelMoments {
    pub fn new(kernel: GaussianKernel, input: InputModel) -> Result<Self> {
        let second = ProductMoment::new(2, &kernel, &input)?;
        let fourth = ProductMoment::new(4, &kernel, &input)?;
        Ok(Self { kernel, input, second, fourth })
    }

    pub fn kernel(&self) -> &GaussianKernel {
        &self.kernel
    }

    pub fn input(&self) -> &InputModel {
        &self.input
    }

    fn sigma2(&self) -> f64 {
        self.kernel.bandwidth().powi(2)
    }

    fn check(&self, dict: &Dictionary, indices: &[usize]) -> Result<()> {
        check_dim(self.input.dimension(), dict.dim())?;
        for &i in indices {
            if i >= dict.len() {
                return Err(Error::InvalidParameter(format!("center index {i} out of range (M = {})", dict.len())));
            }
        }
        Ok(())
    }

    fn product(&self, moment: &ProductMoment, dict: &Dictionary, indices: &[usize]) -> f64 {
        let mut sum = DVector::zeros(dict.dim());
        let mut sq = 0.0;
        for &k in indices {
            let c = dict.center(k);
            sum += c;
            sq += sq_norm(c.as_slice());
        }
        moment.eval(self.sigma2(), self.input.autocorrelation(), &sum, sq)
    }

    /// `E{k(x, c_i) k(x, c_j)}`.
    pub fn rkk_entry(&self, i: usize, j: usize, dict: &Dictionary) -> Result<f64> {
        self.check(dict, &[i, j])?;
        Ok(self.product(&self.second, dict, &[i, j]))
    }

    /// Correlation matrix of the kernelized input. Only the upper triangle is
    /// evaluated, so the result is exactly symmetric.
    pub fn rkk_matrix(&self, dict: &Dictionary) -> Result<DMatrix<f64>> {
        self.check(dict, &[])?;
        let m = dict.len();
        let mut out = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = self.product(&self.second, dict, &[i, j]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    /// `E{k(x, c_i) k(x, c_j) k(x, c_l) k(x, c_p)}`.
    pub fn k4_entry(&self, i: usize, j: usize, l: usize, p: usize, dict: &Dictionary) -> Result<f64> {
        self.check(dict, &[i, j, l, p])?;
        Ok(self.product(&self.fourth, dict, &[i, j, l, p]))
    }

    /// Pair-sum table from which any fourth-order moment is assembled in
    /// `O(L)` work. Pair index `a = i + j M`.
    pub fn fourth_order_table(&self, dict: &Dictionary) -> Result<FourthOrderTable> {
        self.check(dict, &[])?;
        let m = dict.len();
        let r = self.input.autocorrelation();
        let mut sums = Vec::with_capacity(m * m);
        let mut tilted = Vec::with_capacity(m * m);
        let mut sq = Vec::with_capacity(m * m);
        for j in 0..m {
            for i in 0..m {
                let s = dict.center(i) + dict.center(j);
                tilted.push(r * self.fourth.shifted.solve(&s));
                sq.push(sq_norm(dict.center(i).as_slice()) + sq_norm(dict.center(j).as_slice()));
                sums.push(s);
            }
        }
        Ok(FourthOrderTable {
            m,
            det_factor: self.fourth.det_factor,
            inv_scale: 1.0 / (2.0 * 4.0 * self.sigma2()),
            sums,
            tilted,
            sq,
        })
    }

    /// All fourth-order moments arranged as an `M^2 x M^2` matrix with entry
    /// `[i + j M, l + p M] = E{k_i k_j k_l k_p}` (column-stacking order).
    /// Columns are filled in parallel; the result is exactly symmetric.
    pub fn k4_lexicographic(&self, dict: &Dictionary) -> Result<DMatrix<f64>> {
        Ok(self.fourth_order_table(dict)?.to_dense())
    }
}

/// Precomputed pair sums `c_i + c_j` and their tilted images
/// `R (R + sigma^2/4 I)^-1 (c_i + c_j)`.
#[derive(Debug, Clone)]
pub struct FourthOrderTable {
    m: usize,
    det_factor: f64,
    inv_scale: f64,
    sums: Vec<DVector<f64>>,
    tilted: Vec<DVector<f64>>,
    sq: Vec<f64>,
}

impl FourthOrderTable {
    pub fn size(&self) -> usize {
        self.m
    }

    /// `E{k_i k_j k_l k_p}` for pair indices `a = i + j M`, `b = l + p M`.
    #[inline]
    pub fn entry(&self, a: usize, b: usize) -> f64 {
        let w: f64 = self.sums[a]
            .iter()
            .zip(self.sums[b].iter())
            .zip(self.tilted[a].iter().zip(self.tilted[b].iter()))
            .map(|((sa, sb), (ta, tb))| (sa + sb) * (ta + tb))
            .sum();
        self.det_factor * (-(4.0 * (self.sq[a] + self.sq[b]) - w) * self.inv_scale).exp()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m2 = self.m * self.m;
        let mut data = vec![0.0; m2 * m2];
        // column-major: column b is contiguous
        data.par_chunks_mut(m2).enumerate().for_each(|(b, col)| {
            for (a, out) in col.iter_mut().enumerate() {
                *out = self.entry(a, b);
            }
        });
        DMatrix::from_vec(m2, m2, data)
    }
}

pub(crate) fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn symmetrize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

fn chol_determinant(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|d| d * d).product()
}
