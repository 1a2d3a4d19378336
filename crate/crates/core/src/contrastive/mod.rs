//! Temperature-scaled similarities and the supervised contrastive objective.
//!
//! A batch holds `2N` embeddings: two temporal views of each of `N` videos.
//! Row `i`'s positives are every other row with the same label, which always
//! includes its sibling view. See [`scfa_loss`] and [`scfa_loss_grad`].

mod batch;
mod loss;

pub use batch::{positive_mask, EmbeddingBatch, PositiveMask};
pub use loss::{ntxent_loss, scfa_loss, scfa_loss_grad, scfa_loss_masked, LossResult};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Guard against division by a vanishing norm.
pub const NORM_EPS: f64 = 1e-12;

/// Positive temperature `τ` dividing dot-product similarities.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self(tau))
        } else {
            Err(Error::InvalidArgument(format!(
                "temperature must be positive and finite, got {tau}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// `v / max(|v|, 1e-12)`.
pub fn l2_normalize(v: ArrayView1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    &v / norm.max(NORM_EPS)
}

/// Row-wise [`l2_normalize`].
pub fn normalize_rows(z: ArrayView2<f64>) -> Array2<f64> {
    let mut out = z.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt().max(NORM_EPS);
        row /= norm;
    }
    out
}

/// `S[i][j] = z_i . z_j / τ`, computed once per unordered pair so that `S`
/// is exactly symmetric.
pub fn similarity_matrix(z: ArrayView2<f64>, tau: f64) -> Result<Array2<f64>> {
    let tau = Temperature::new(tau)?.get();
    let n = z.nrows();
    let mut s = Array2::zeros((n, n));
    for i in 0..n {
        let zi = z.row(i);
        for j in i..n {
            let v = zi.dot(&z.row(j)) / tau;
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
    }
    Ok(s)
}
