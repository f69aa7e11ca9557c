//! The fixed dictionary: an ordered set of kernel centers chosen before
//! adaptation starts.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{sq_dist, GaussianKernel};

/// Kernel coherence above which two centers are reported as near-duplicates.
pub const NEAR_DUPLICATE_COHERENCE: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    centers: Vec<DVector<f64>>,
    dim: usize,
}

impl Dictionary {
    /// Builds a dictionary from explicit centers. Rejects an empty set,
    /// mixed dimensions, non-finite coordinates and exact duplicates.
    pub fn new(centers: Vec<DVector<f64>>) -> Result<Self> {
        let first = centers
            .first()
            .ok_or_else(|| Error::InvalidParameter("dictionary must contain at least one center".into()))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidParameter("centers must have dimension >= 1".into()));
        }
        for c in &centers {
            check_dim(dim, c.len())?;
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("center has non-finite coordinates".into()));
            }
        }
        for i in 0..centers.len() {
            for j in 0..i {
                if centers[i] == centers[j] {
                    return Err(Error::InvalidParameter(format!("centers {j} and {i} are identical")));
                }
            }
        }
        Ok(Self { centers, dim })
    }

    /// Cartesian-product grid. The first axis varies slowest.
    pub fn from_grid(lower: &[f64], upper: &[f64], points_per_axis: &[usize]) -> Result<Self> {
        let dim = lower.len();
        check_dim(dim, upper.len())?;
        check_dim(dim, points_per_axis.len())?;
        if dim == 0 {
            return Err(Error::InvalidParameter("grid needs at least one axis".into()));
        }
        let mut axes = Vec::with_capacity(dim);
        for ((&lo, &hi), &n) in lower.iter().zip(upper).zip(points_per_axis) {
            if n == 0 {
                return Err(Error::InvalidParameter("each axis needs at least one point".into()));
            }
            if !(lo.is_finite() && hi.is_finite()) || lo > hi || (n > 1 && lo == hi) {
                return Err(Error::InvalidParameter(format!("invalid grid interval [{lo}, {hi}] with {n} points")));
            }
            let nodes: Vec<f64> = if n == 1 {
                vec![lo]
            } else {
                (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
            };
            axes.push(nodes);
        }
        let total: usize = points_per_axis.iter().product();
        let mut centers = Vec::with_capacity(total);
        let mut index = vec![0usize; dim];
        for _ in 0..total {
            centers.push(DVector::from_iterator(dim, index.iter().zip(&axes).map(|(&k, ax)| ax[k])));
            for axis in (0..dim).rev() {
                index[axis] += 1;
                if index[axis] < axes[axis].len() {
                    break;
                }
                index[axis] = 0;
            }
        }
        Self::new(centers)
    }

    /// Coherence-criterion selection: a sample is admitted iff its largest
    /// kernel value against the current centers is at most `mu0`. The first
    /// sample is always admitted and admission order is preserved.
    pub fn from_coherence<'a, I>(stream: I, kernel: &GaussianKernel, mu0: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a DVector<f64>>,
    {
        if !(0.0..1.0).contains(&mu0) {
            return Err(Error::InvalidParameter(format!("coherence threshold must lie in [0, 1), got {mu0}")));
        }
        let mut iter = stream.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidParameter("coherence stream is empty".into()))?;
        let dim = first.len();
        let mut centers = vec![first.clone()];
        for x in iter {
            check_dim(dim, x.len())?;
            let admit = centers
                .iter()
                .all(|c| kernel.eval(x.as_slice(), c.as_slice()) <= mu0);
            if admit {
                centers.push(x.clone());
            }
        }
        Self::new(centers)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn center(&self, i: usize) -> &DVector<f64> {
        &self.centers[i]
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    pub fn validate(&self, kernel: &GaussianKernel) -> DictionaryDiagnostics {
        DictionaryDiagnostics::compute(&self.centers, kernel)
    }

    /// Plain-text form: a `M L` header followed by one center per line,
    /// coordinates written with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for c in &self.centers {
            let line: Vec<String> = c.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines().filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let header = lines.next().ok_or_else(|| Error::Parse("empty dictionary file".into()))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header token {t:?}"))))
            .collect::<Result<_>>()?;
        let [m, l] = dims[..] else {
            return Err(Error::Parse(format!("header must be `M L`, got {header:?}")));
        };
        let mut centers = Vec::with_capacity(m);
        for k in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("expected {m} centers, found {k}")))??;
            let coords: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad coordinate {t:?} on center {k}"))))
                .collect::<Result<_>>()?;
            check_dim(l, coords.len())?;
            centers.push(DVector::from_vec(coords));
        }
        if let Some(extra) = lines.next() {
            return Err(Error::Parse(format!("trailing content after {m} centers: {:?}", extra?)));
        }
        Self::new(centers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

/// Outcome of a coherence-threshold sweep.
#[derive(Debug, Clone)]
pub struct CoherenceSweep {
    pub threshold: f64,
    pub dictionary: Dictionary,
    pub exact: bool,
}

/// Finds a coherence threshold whose dictionary has `target` centers.
///
/// Scans thresholds in steps of 0.01 for the first one reaching the target
/// size, then rescans the preceding interval in steps of 1e-4 for an exact
/// match. Without an exact match the closest size found is returned.
pub fn coherence_sweep(stream: &[DVector<f64>], kernel: &GaussianKernel, target: usize) -> Result<CoherenceSweep> {
    if target == 0 {
        return Err(Error::InvalidParameter("target dictionary size must be at least 1".into()));
    }
    let build = |mu: f64| Dictionary::from_coherence(stream, kernel, mu);
    let mut best: Option<(usize, f64, Dictionary)> = None;
    let consider = |mu: f64, dict: Dictionary, best: &mut Option<(usize, f64, Dictionary)>| {
        let gap = dict.len().abs_diff(target);
        if best.as_ref().is_none_or(|(g, _, _)| gap < *g) {
            *best = Some((gap, mu, dict));
        }
    };
    let mut bracket = None;
    for k in 0..100usize {
        let mu = k as f64 * 0.01;
        let dict = build(mu)?;
        let size = dict.len();
        consider(mu, dict, &mut best);
        if size == target {
            return Ok(CoherenceSweep { threshold: mu, dictionary: build(mu)?, exact: true });
        }
        if size > target {
            bracket = Some(k);
            break;
        }
    }
    if let Some(k) = bracket {
        let start = (k.saturating_sub(1)) * 100;
        for f in start..=k * 100 {
            let mu = f as f64 * 1e-4;
            let dict = build(mu)?;
            if dict.len() == target {
                return Ok(CoherenceSweep { threshold: mu, dictionary: dict, exact: true });
            }
            consider(mu, dict, &mut best);
        }
    }
    let (_, threshold, dictionary) = best.expect("sweep evaluates at least one threshold");
    Ok(CoherenceSweep { threshold, dictionary, exact: false })
}

/// Separation and conditioning summary of a set of centers.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryDiagnostics {
    pub size: usize,
    pub dim: usize,
    /// Smallest pairwise Euclidean distance; infinite for a single center.
    pub min_distance: f64,
    /// Largest off-diagonal kernel value; 0 for a single center.
    pub max_coherence: f64,
    /// Condition number of the kernel Gram matrix of the centers.
    pub gram_condition: f64,
    pub near_duplicates: Vec<(usize, usize)>,
}

impl DictionaryDiagnostics {
    /// Works on raw centers so that duplicated sets can be diagnosed too.
    pub fn compute(centers: &[DVector<f64>], kernel: &GaussianKernel) -> Self {
        let m = centers.len();
        let dim = centers.first().map_or(0, |c| c.len());
        let mut min_distance = f64::INFINITY;
        let mut max_coherence = 0.0f64;
        let mut near_duplicates = Vec::new();
        let mut gram = DMatrix::identity(m, m);
        for i in 0..m {
            for j in 0..i {
                let d2 = sq_dist(centers[i].as_slice(), centers[j].as_slice());
                let k = kernel.from_sq_dist(d2);
                gram[(i, j)] = k;
                gram[(j, i)] = k;
                min_distance = min_distance.min(d2.sqrt());
                max_coherence = max_coherence.max(k);
                if k > NEAR_DUPLICATE_COHERENCE {
                    near_duplicates.push((j, i));
                }
            }
        }
        let gram_condition = if m == 0 {
            f64::NAN
        } else {
            let eig = SymmetricEigen::new(gram).eigenvalues;
            let (lo, hi) = (eig.min(), eig.max());
            // Eigenvalues at rounding level mean a numerically singular Gram matrix.
            if lo <= f64::EPSILON * hi * m as f64 {
                f64::INFINITY
            } else {
                hi / lo
            }
        };
        Self { size: m, dim, min_distance, max_coherence, gram_condition, near_duplicates }
    }

    pub fn has_near_duplicates(&self) -> bool {
        !self.near_duplicates.is_empty()
    }
}
