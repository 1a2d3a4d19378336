use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Probability that one given frame is never drawn in `batches` rounds of
/// `frames_per_view` independent uniform draws: `(1 - 1/T)^(B*y)`.
pub fn coverage_probability(frame_count: usize, frames_per_view: usize, batches: usize) -> f64 {
    let exponent = batches as f64 * frames_per_view as f64;
    (1.0 - 1.0 / frame_count as f64).powf(exponent)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageEstimate {
    pub estimate: f64,
    /// Binomial standard error of `estimate`.
    pub std_err: f64,
    pub trials: u64,
}

impl CoverageEstimate {
    /// Whether `closed_form` lies within `k` standard errors of the estimate.
    ///
    /// The standard error is the larger of the empirical one and the one
    /// implied by `closed_form`, so that a zero-hit estimate of a tiny but
    /// non-zero probability is not judged with a zero-width interval.
    pub fn agrees_with(&self, closed_form: f64, k: f64) -> bool {
        let expected_se = (closed_form * (1.0 - closed_form) / self.trials as f64).sqrt();
        (self.estimate - closed_form).abs() <= k * self.std_err.max(expected_se)
    }
}

const CHUNKS: u64 = 64;

/// Monte Carlo estimate of [`coverage_probability`] for frame index 0.
///
/// Trials are split into fixed chunks, each on its own random stream, so the
/// estimate depends only on the arguments and not on thread scheduling.
pub fn monte_carlo_coverage(
    frame_count: usize,
    frames_per_view: usize,
    batches: usize,
    trials: u64,
    seed: u64,
) -> Result<CoverageEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    if frame_count == 0 {
        return Err(Error::InvalidArgument(
            "frame count must be positive".into(),
        ));
    }
    let draws = batches * frames_per_view;
    let misses: u64 = (0..CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let n = trials / CHUNKS + u64::from(chunk < trials % CHUNKS);
            let mut rng = rng_for(seed, chunk);
            (0..n)
                .filter(|_| (0..draws).all(|_| rng.random_range(0..frame_count) != 0))
                .count() as u64
        })
        .sum();
    let p = misses as f64 / trials as f64;
    Ok(CoverageEstimate {
        estimate: p,
        std_err: (p * (1.0 - p) / trials as f64).sqrt(),
        trials,
    })
}
