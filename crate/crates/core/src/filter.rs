//! Online Gaussian KLMS against a fixed dictionary.
//!
//! ```text
//! k(n)     = [k(x(n), c_1), ..., k(x(n), c_M)]'
//! e(n)     = y(n) - alpha(n)' k(n)
//! alpha(n+1) = alpha(n) + eta e(n) k(n)
//! ```

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;

use crate::dictionary::Dictionary;
use crate::error::{check_dim, Error, Result};
use crate::kernel::GaussianKernel;

/// Weight norm above which a filter is declared diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;

/// Kernelized input vector of `x` against every center.
pub fn kernelize(x: &[f64], dict: &Dictionary, kernel: &GaussianKernel) -> Result<DVector<f64>> {
    check_dim(dict.dim(), x.len())?;
    Ok(kernelize_unchecked(x, dict, kernel))
}

fn kernelize_unchecked(x: &[f64], dict: &Dictionary, kernel: &GaussianKernel) -> DVector<f64> {
    DVector::from_iterator(dict.len(), dict.centers().iter().map(|c| kernel.eval(x, c.as_slice())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub kernelized_input: DVector<f64>,
    pub prediction: f64,
    pub error: f64,
    pub desired: f64,
}

#[derive(Debug, Clone)]
pub struct KlmsFilter {
    weights: DVector<f64>,
    step_size: f64,
    dict: Arc<Dictionary>,
    kernel: GaussianKernel,
    iteration: usize,
    diverged_at: Option<usize>,
}

impl KlmsFilter {
    /// Zero-initialized filter.
    pub fn new(dict: Arc<Dictionary>, kernel: GaussianKernel, step_size: f64) -> Result<Self> {
        let weights = DVector::zeros(dict.len());
        Self::with_weights(dict, kernel, step_size, weights)
    }

    pub fn with_weights(
        dict: Arc<Dictionary>,
        kernel: GaussianKernel,
        step_size: f64,
        weights: DVector<f64>,
    ) -> Result<Self> {
        // eta = 0 is accepted so that frozen filters can be replayed.
        if !(step_size.is_finite() && step_size >= 0.0) {
            return Err(Error::InvalidParameter(format!("step size must be non-negative, got {step_size}")));
        }
        check_dim(dict.len(), weights.len())?;
        Ok(Self { weights, step_size, dict, kernel, iteration: 0, diverged_at: None })
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn kernel(&self) -> &GaussianKernel {
        &self.kernel
    }

    /// Iteration at which the weights blew up, if they did.
    pub fn diverged_at(&self) -> Option<usize> {
        self.diverged_at
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(kernelize(x, &self.dict, &self.kernel)?.dot(&self.weights))
    }

    /// One a-priori error update.
    ///
    /// When the update would produce non-finite weights or a weight norm above
    /// [`DIVERGENCE_NORM`], the weights are left at their previous value, the
    /// filter is frozen and `NonFinite` is returned; every later call fails
    /// the same way.
    pub fn step(&mut self, x: &[f64], y: f64) -> Result<StepRecord> {
        if let Some(iteration) = self.diverged_at {
            return Err(Error::NonFinite { iteration });
        }
        let k = kernelize(x, &self.dict, &self.kernel)?;
        let prediction = k.dot(&self.weights);
        let error = y - prediction;
        let updated = &self.weights + &k * (self.step_size * error);
        if !updated.iter().all(|w| w.is_finite()) || updated.norm() > DIVERGENCE_NORM {
            self.diverged_at = Some(self.iteration);
            return Err(Error::NonFinite { iteration: self.iteration });
        }
        self.weights = updated;
        self.iteration += 1;
        Ok(StepRecord { kernelized_input: k, prediction, error, desired: y })
    }

    /// Runs the filter over a stream, stopping at the first divergence.
    pub fn run<'a, I>(&mut self, stream: I) -> Result<RunOutcome>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let mut records = Vec::new();
        for (x, y) in stream {
            match self.step(x, y) {
                Ok(rec) => records.push(rec),
                Err(Error::NonFinite { iteration }) => {
                    return Ok(RunOutcome { records, diverged_at: Some(iteration) });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(RunOutcome { records, diverged_at: None })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub records: Vec<StepRecord>,
    pub diverged_at: Option<usize>,
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// CSV with columns `n,y,prediction,error`; `n` counts from `first_index`.
    pub fn write_csv<W: Write>(&self, w: W, first_index: usize) -> Result<()> {
        write_records_csv(&self.records, w, first_index)
    }
}

pub fn write_records_csv<W: Write>(records: &[StepRecord], w: W, first_index: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "y", "prediction", "error"])?;
    for (k, r) in records.iter().enumerate() {
        out.write_record([
            (first_index + k).to_string(),
            r.desired.to_string(),
            r.prediction.to_string(),
            r.error.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> Arc<Dictionary> {
        Arc::new(Dictionary::from_grid(&[-1.0, -1.0], &[1.0, 1.0], &[5, 5]).unwrap())
    }

    #[test]
    fn kernelize_at_origin_on_grid() {
        let k = GaussianKernel::new(0.25).unwrap();
        let d = grid();
        let kv = kernelize(&[0.0, 0.0], &d, &k).unwrap();
        assert_eq!(kv.len(), 25);
        assert_eq!(kv[12], 1.0);
        for nb in [7, 11, 13, 17] {
            assert!((kv[nb] - (-2.0f64).exp()).abs() < 1e-15);
        }
        assert!(kv.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn kernelize_at_center_and_bad_dim() {
        let k = GaussianKernel::new(0.3).unwrap();
        let d = grid();
        let kv = kernelize(d.center(3).as_slice(), &d, &k).unwrap();
        assert_eq!(kv[3], 1.0);
        assert!(matches!(kernelize(&[0.0], &d, &k), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_initialized_first_step() {
        let k = GaussianKernel::new(0.25).unwrap();
        let mut f = KlmsFilter::new(grid(), k, 0.05).unwrap();
        let x = [0.2, -0.3];
        let rec = f.step(&x, 0.7).unwrap();
        assert_eq!(rec.prediction, 0.0);
        assert_eq!(rec.error, 0.7);
        assert_eq!(f.weights(), &(&rec.kernelized_input * (0.05 * 0.7)));
        assert_eq!(f.iteration(), 1);
    }

    #[test]
    fn zero_step_size_freezes_weights() {
        let k = GaussianKernel::new(0.25).unwrap();
        let w0 = DVector::from_fn(25, |i, _| i as f64 * 0.01);
        let mut f = KlmsFilter::with_weights(grid(), k, 0.0, w0.clone()).unwrap();
        for i in 0..10 {
            f.step(&[0.1 * i as f64, -0.05], 3.0).unwrap();
        }
        assert_eq!(f.weights(), &w0);
    }

    #[test]
    fn two_step_hand_trace() {
        let d = Arc::new(Dictionary::new(vec![DVector::zeros(1)]).unwrap());
        let mut f = KlmsFilter::new(d, GaussianKernel::new(1.0).unwrap(), 0.5).unwrap();
        let r1 = f.step(&[0.0], 1.0).unwrap();
        assert_eq!(r1.error, 1.0);
        assert_eq!(f.weights()[0], 0.5);
        let r2 = f.step(&[0.0], 1.0).unwrap();
        assert_eq!(r2.prediction, 0.5);
        assert_eq!(r2.error, 0.5);
        assert_eq!(f.weights()[0], 0.75);
    }

    #[test]
    fn empty_stream() {
        let mut f = KlmsFilter::new(grid(), GaussianKernel::new(0.25).unwrap(), 0.05).unwrap();
        let out = f.run(std::iter::empty()).unwrap();
        assert!(out.records.is_empty());
        assert!(!out.diverged());
        assert_eq!(f.iteration(), 0);
        assert!(f.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn divergence_freezes_state() {
        let d = Arc::new(Dictionary::new(vec![DVector::zeros(1)]).unwrap());
        // |1 - eta| = 9 per step on a constant input at the center.
        let mut f = KlmsFilter::new(d, GaussianKernel::new(1.0).unwrap(), 10.0).unwrap();
        let xs = [0.0f64];
        let stream = (0..100).map(|_| (&xs[..], 1.0));
        let out = f.run(stream).unwrap();
        let at = out.diverged_at.expect("must diverge");
        assert_eq!(out.records.len(), at);
        assert_eq!(f.diverged_at(), Some(at));
        let frozen = f.weights().clone();
        assert!(frozen.iter().all(|w| w.is_finite()));
        assert!(matches!(f.step(&[0.0], 1.0), Err(Error::NonFinite { .. })));
        assert_eq!(f.weights(), &frozen);
    }

    #[test]
    fn realizable_fixed_point() {
        let d = grid();
        let k = GaussianKernel::new(0.25).unwrap();
        let target = DVector::from_fn(25, |i, _| ((i * 7) % 11) as f64 / 11.0 - 0.5);
        let mut f = KlmsFilter::with_weights(d.clone(), k, 0.3, target.clone()).unwrap();
        for i in 0..200 {
            let t = i as f64 * 0.37;
            let x = [t.sin(), (1.3 * t).cos()];
            let y = kernelize(&x, &d, &k).unwrap().dot(&target);
            let rec = f.step(&x, y).unwrap();
            assert_eq!(rec.error, 0.0);
        }
        assert_eq!(f.weights(), &target);
    }

    #[test]
    fn csv_layout() {
        let d = Arc::new(Dictionary::new(vec![DVector::zeros(1)]).unwrap());
        let mut f = KlmsFilter::new(d, GaussianKernel::new(1.0).unwrap(), 0.5).unwrap();
        let xs = [0.0f64];
        let out = f.run([(&xs[..], 1.0), (&xs[..], 1.0)]).unwrap();
        let mut buf = Vec::new();
        out.write_csv(&mut buf, 0).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "n,y,prediction,error\n0,1,0,1\n1,1,0.5,0.5\n");
    }

    proptest! {
        #[test]
        fn step_is_deterministic_and_linear_in_error(
            x in prop::collection::vec(-1.5f64..1.5, 2),
            y in -2.0f64..2.0,
            eta in 0.0f64..1.0,
            w in prop::collection::vec(-1.0f64..1.0, 25),
        ) {
            let k = GaussianKernel::new(0.25).unwrap();
            let w = DVector::from_vec(w);
            let mut a = KlmsFilter::with_weights(grid(), k, eta, w.clone()).unwrap();
            let mut b = a.clone();
            let ra = a.step(&x, y).unwrap();
            let rb = b.step(&x, y).unwrap();
            prop_assert_eq!(&ra, &rb);
            prop_assert_eq!(a.weights(), b.weights());
            prop_assert_eq!(ra.error, ra.desired - ra.prediction);

            // Doubling the a-priori error doubles the increment.
            let mut c = KlmsFilter::with_weights(grid(), k, eta, w.clone()).unwrap();
            let y2 = ra.prediction + 2.0 * ra.error;
            let rc = c.step(&x, y2).unwrap();
            prop_assert!((rc.error - 2.0 * ra.error).abs() <= 1e-15 * (1.0 + rc.error.abs()));
            let inc_a = a.weights() - &w;
            let inc_c = c.weights() - &w;
            for (p, q) in inc_a.iter().zip(inc_c.iter()) {
                prop_assert!((q - 2.0 * p).abs() <= 1e-14 * (1.0 + q.abs()));
            }
        }
    }
}
