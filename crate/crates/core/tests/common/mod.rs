//! Independent numerical oracles for Gaussian-kernel product moments
//! `E{prod_k k(x, c_k)}` with `x ~ N(0, R)`.
//!
//! Neither oracle uses the closed form: the Monte Carlo estimator evaluates
//! the kernel product on samples, the quadrature integrates it on a grid.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Shared standard-normal draws reused across entries.
pub struct NormalDraws {
    pub dim: usize,
    pub z: Vec<f64>,
}

impl NormalDraws {
    pub fn new(dim: usize, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = (0..dim * count).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { dim, z }
    }

    pub fn count(&self) -> usize {
        self.z.len() / self.dim
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Importance-sampling estimate of the product moment.
///
/// Proposal: `N(c_bar, 1.5 sigma^2 / n I)` with `c_bar` the mean of the
/// centers. Plain sampling from the input law cannot resolve entries that
/// are many orders of magnitude below one; this proposal covers the
/// integrand, whose covariance is bounded by `sigma^2 / n I`, so the weights
/// stay bounded.
pub fn mc_product_moment(centers: &[&DVector<f64>], sigma: f64, r: &DMatrix<f64>, draws: &NormalDraws) -> Estimate {
    let dim = r.nrows();
    assert_eq!(dim, draws.dim);
    let n = centers.len() as f64;
    let r_inv = r.clone().try_inverse().expect("input covariance invertible");
    let log_det_r = r.determinant().ln();
    let mut c_bar = DVector::zeros(dim);
    for c in centers {
        c_bar += *c;
    }
    c_bar /= n;
    let s2 = 1.5 * sigma * sigma / n;
    let s = s2.sqrt();
    // log N(x; 0, R) - log N(x; c_bar, s^2 I) without the shared (2 pi) terms.
    let log_const = -0.5 * log_det_r + 0.5 * dim as f64 * s2.ln();
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);

    let r_inv: Vec<f64> = r_inv.iter().copied().collect();
    let flat: Vec<f64> = centers.iter().flat_map(|c| c.iter().copied()).collect();
    let shape = Shape { c_bar: c_bar.as_slice(), s, r_inv: &r_inv, centers: &flat, log_const, inv2s2 };
    let (sum, sum_sq) = match dim {
        1 => weight_sums::<1>(&shape, &draws.z),
        2 => weight_sums::<2>(&shape, &draws.z),
        3 => weight_sums::<3>(&shape, &draws.z),
        _ => panic!("Monte Carlo oracle supports L <= 3"),
    };
    let m = draws.count() as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    Estimate { value: mean, std_error: (var / m).sqrt() }
}

struct Shape<'a> {
    c_bar: &'a [f64],
    s: f64,
    r_inv: &'a [f64],
    centers: &'a [f64],
    log_const: f64,
    inv2s2: f64,
}

/// Sum and sum of squares of the importance weights times the kernel product.
fn weight_sums<const D: usize>(shape: &Shape<'_>, z: &[f64]) -> (f64, f64) {
    let c_bar: [f64; D] = shape.c_bar.try_into().unwrap();
    let mut r_inv = [[0.0; D]; D];
    for (a, row) in r_inv.iter_mut().enumerate() {
        row.copy_from_slice(&shape.r_inv[a * D..(a + 1) * D]);
    }
    let centers: Vec<[f64; D]> = shape.centers.chunks_exact(D).map(|c| c.try_into().unwrap()).collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for z in z.chunks_exact(D) {
        let mut x = [0.0; D];
        let mut zz = 0.0;
        for k in 0..D {
            x[k] = c_bar[k] + shape.s * z[k];
            zz += z[k] * z[k];
        }
        let mut quad = 0.0;
        for a in 0..D {
            for b in 0..D {
                quad += x[a] * r_inv[a][b] * x[b];
            }
        }
        let mut dist = 0.0;
        for c in &centers {
            for k in 0..D {
                dist += (x[k] - c[k]) * (x[k] - c[k]);
            }
        }
        let w = (shape.log_const - 0.5 * quad + 0.5 * zz - dist * shape.inv2s2).exp();
        sum += w;
        sum_sq += w * w;
    }
    (sum, sum_sq)
}

/// Plain Monte Carlo estimate with draws from the input law itself.
pub fn mc_plain(centers: &[&DVector<f64>], sigma: f64, r: &DMatrix<f64>, draws: &NormalDraws) -> Estimate {
    let dim = r.nrows();
    let l = r.clone().cholesky().expect("positive definite").l();
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut x = vec![0.0; dim];
    for z in draws.z.chunks_exact(dim) {
        for a in 0..dim {
            x[a] = (0..=a).map(|b| l[(a, b)] * z[b]).sum();
        }
        let dist: f64 = centers
            .iter()
            .map(|c| (0..dim).map(|k| (x[k] - c[k]).powi(2)).sum::<f64>())
            .sum();
        let v = (-dist * inv2s2).exp();
        sum += v;
        sum_sq += v * v;
    }
    let m = draws.count() as f64;
    let mean = sum / m;
    Estimate { value: mean, std_error: ((sum_sq / m - mean * mean).max(0.0) / m).sqrt() }
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Tensor-product composite Gauss-Legendre rule in whitened coordinates
/// `x = L z`, `R = L L'`, over `[-half_width, half_width]^dim`.
pub struct Quadrature {
    pub dim: usize,
    /// Physical points, `dim` values each.
    pub points: Vec<f64>,
    /// Standard-normal density times quadrature weight.
    pub weights: Vec<f64>,
    /// Total weight of the nodes dropped as negligible; the integrand is at
    /// most one, so this bounds the truncation error.
    pub dropped_weight: f64,
}

impl Quadrature {
    pub fn new(r: &DMatrix<f64>, half_width: f64, panel: f64, order: usize) -> Self {
        let dim = r.nrows();
        assert!(dim == 1 || dim == 2, "quadrature oracle supports L = 1 or 2");
        let l = r.clone().cholesky().expect("positive definite").l();
        let (gx, gw) = gauss_legendre(order);
        let panels = (2.0 * half_width / panel).round() as usize;
        let h = 2.0 * half_width / panels as f64;
        let mut nodes = Vec::new();
        let mut wts = Vec::new();
        for p in 0..panels {
            let mid = -half_width + (p as f64 + 0.5) * h;
            for (x, w) in gx.iter().zip(&gw) {
                let z = mid + 0.5 * h * x;
                nodes.push(z);
                wts.push(0.5 * h * w * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt());
            }
        }
        const NEGLIGIBLE: f64 = 1e-20;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut dropped_weight = 0.0;
        if dim == 1 {
            for (z, w) in nodes.iter().zip(&wts) {
                points.push(l[(0, 0)] * z);
                weights.push(*w);
            }
        } else {
            for (z0, w0) in nodes.iter().zip(&wts) {
                for (z1, w1) in nodes.iter().zip(&wts) {
                    let w = w0 * w1;
                    if w < NEGLIGIBLE {
                        dropped_weight += w;
                        continue;
                    }
                    points.push(l[(0, 0)] * z0);
                    points.push(l[(1, 0)] * z0 + l[(1, 1)] * z1);
                    weights.push(w);
                }
            }
        }
        Self { dim, points, weights, dropped_weight }
    }

    /// Default rule: `[-9, 9]`, panels of width 0.25, 8 nodes each.
    pub fn standard(r: &DMatrix<f64>) -> Self {
        Self::new(r, 9.0, 0.25, 8)
    }

    pub fn product_moment(&self, centers: &[&DVector<f64>], sigma: f64) -> f64 {
        let inv2s2 = 1.0 / (2.0 * sigma * sigma);
        let dim = self.dim;
        let flat: Vec<f64> = centers.iter().flat_map(|c| c.iter().copied()).collect();
        self.points
            .chunks_exact(dim)
            .zip(&self.weights)
            .map(|(x, w)| {
                let dist: f64 = flat
                    .chunks_exact(dim)
                    .map(|c| c.iter().zip(x).map(|(ck, xk)| (xk - ck) * (xk - ck)).sum::<f64>())
                    .sum();
                w * (-dist * inv2s2).exp()
            })
            .sum()
    }
}

/// Samples uniform index tuples with a fixed seed.
pub fn random_tuples(m: usize, count: usize, seed: u64) -> Vec<[usize; 4]> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| [rng.random_range(0..m), rng.random_range(0..m), rng.random_range(0..m), rng.random_range(0..m)])
        .collect()
}

/// Direct matrix form of one covariance step:
/// `C - eta (R C + C R) + eta^2 T(C) + eta^2 J_min R`, `T(C)_ij = trace{K^(i,j) C}`.
pub fn direct_covariance_step(
    rkk: &DMatrix<f64>,
    k4: impl Fn(usize, usize, usize, usize) -> f64,
    c: &DMatrix<f64>,
    eta: f64,
    j_min: f64,
) -> DMatrix<f64> {
    let m = rkk.nrows();
    let t = DMatrix::from_fn(m, m, |i, j| {
        let mut acc = 0.0;
        for l in 0..m {
            for p in 0..m {
                acc += k4(i, j, l, p) * c[(p, l)];
            }
        }
        acc
    });
    c - (rkk * c + c * rkk) * eta + t * (eta * eta) + rkk * (eta * eta * j_min)
}
