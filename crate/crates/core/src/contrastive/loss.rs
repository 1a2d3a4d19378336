use ndarray::{Array2, ArrayView2};

use super::{normalize_rows, similarity_matrix, EmbeddingBatch, PositiveMask, NORM_EPS};
use crate::error::{Error, Result};

/// Loss value and, when requested, its gradient with respect to the
/// pre-normalization embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Supervised contrastive loss over sibling-paired views.
///
/// ```text
/// L = -1/(2N) * sum_i log( sum_{j in P(i)} exp(S_ij) / sum_{k != i} exp(S_ik) )
/// ```
///
/// Rows of `batch.z` are used as given and are expected to be unit norm.
pub fn scfa_loss(batch: &EmbeddingBatch, tau: f64) -> Result<f64> {
    Ok(evaluate(batch.z.view(), &batch.mask(), tau, false)?.0)
}

/// [`scfa_loss`] evaluated on row-normalized embeddings, with the gradient
/// taken with respect to the un-normalized rows of `batch.z`.
pub fn scfa_loss_grad(batch: &EmbeddingBatch, tau: f64) -> Result<LossResult> {
    loss_and_grad(batch.z.view(), &batch.mask(), tau)
}

/// Loss and gradient for raw rows `z` under an arbitrary positive mask.
///
/// Anchors with no positive contribute nothing and are reported with a
/// warning.
pub fn scfa_loss_masked(z: ArrayView2<f64>, mask: &PositiveMask, tau: f64) -> Result<LossResult> {
    if mask.size() != z.nrows() {
        return Err(Error::shape("positive mask", z.nrows(), mask.size()));
    }
    loss_and_grad(z, mask, tau)
}

fn loss_and_grad(z: ArrayView2<f64>, mask: &PositiveMask, tau: f64) -> Result<LossResult> {
    let u = normalize_rows(z);
    let (value, g) = evaluate(u.view(), mask, tau, true)?;
    let g = g.expect("gradient requested");

    // dL/dU = (G + G^T) U / tau
    let sym = &g + &g.t();
    let grad_u = sym.dot(&u) / tau;

    // back through v -> v / max(|v|, eps)
    let mut grad = Array2::zeros(z.raw_dim());
    for i in 0..z.nrows() {
        let v = z.row(i);
        let norm = v.dot(&v).sqrt();
        let gi = grad_u.row(i);
        if norm > NORM_EPS {
            let ui = u.row(i);
            let radial = ui.dot(&gi);
            grad.row_mut(i).assign(&((&gi - &(&ui * radial)) / norm));
        } else {
            grad.row_mut(i).assign(&(&gi / NORM_EPS));
        }
    }
    Ok(LossResult { value, grad })
}

/// Evaluate the loss on rows `u`; optionally return `G = dL/dS`.
fn evaluate(
    u: ArrayView2<f64>,
    mask: &PositiveMask,
    tau: f64,
    want_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    let s = similarity_matrix(u, tau)?;
    let rows = u.nrows();
    if rows < 2 {
        return Err(Error::InvalidArgument(format!(
            "contrastive loss needs at least 2 rows, got {rows}"
        )));
    }
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    let mut g = want_grad.then(|| Array2::zeros((rows, rows)));
    let mut empty = 0usize;

    for i in 0..rows {
        let pos = mask.row(i);
        let srow = s.row(i);
        let others = (0..rows).filter(|&k| k != i);
        let den_max = others
            .clone()
            .map(|k| srow[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let Some(pos_max) = (0..rows)
            .filter(|&j| pos[j])
            .map(|j| srow[j])
            .reduce(f64::max)
        else {
            empty += 1;
            continue;
        };

        let mut den = 0.0;
        let mut num = 0.0;
        for k in others.clone() {
            let e = (srow[k] - den_max).exp();
            den += e;
            if pos[k] {
                num += e;
            }
        }
        // Shared shift keeps num <= den exactly; fall back to the positives'
        // own maximum if their terms underflowed.
        let term = if num > f64::MIN_POSITIVE {
            den.ln() - num.ln()
        } else {
            let num_shifted: f64 = (0..rows)
                .filter(|&j| pos[j])
                .map(|j| (srow[j] - pos_max).exp())
                .sum();
            (den_max + den.ln()) - (pos_max + num_shifted.ln())
        };
        total += term;

        if let Some(g) = g.as_mut() {
            let num_shifted: f64 = (0..rows)
                .filter(|&j| pos[j])
                .map(|j| (srow[j] - pos_max).exp())
                .sum();
            for k in others.clone() {
                let q = (srow[k] - den_max).exp() / den;
                let p = if pos[k] {
                    (srow[k] - pos_max).exp() / num_shifted
                } else {
                    0.0
                };
                g[[i, k]] = scale * (q - p);
            }
        }
    }
    if empty > 0 {
        log::warn!("{empty} of {rows} anchors have no positive and were skipped");
    }
    Ok((scale * total, g))
}

/// NT-Xent: each row's only positive is its sibling view, contrasted against
/// every other row. Mean over all anchors.
pub fn ntxent_loss(batch: &EmbeddingBatch, tau: f64) -> Result<f64> {
    let s = similarity_matrix(batch.z.view(), tau)?;
    let rows = batch.rows();
    let mut total = 0.0;
    for i in 0..rows {
        let j = batch.sibling(i);
        let m = (0..rows)
            .filter(|&k| k != i)
            .map(|k| s[[i, k]])
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = m
            + (0..rows)
                .filter(|&k| k != i)
                .map(|k| (s[[i, k]] - m).exp())
                .sum::<f64>()
                .ln();
        total += lse - s[[i, j]];
    }
    Ok(total / rows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn batch(z: Array2<f64>, labels: &[usize]) -> EmbeddingBatch {
        let n = labels.len() / 2;
        EmbeddingBatch::new(
            z,
            labels.to_vec(),
            (0..n)
                .flat_map(|j| [format!("v{j}"), format!("v{j}")])
                .collect(),
            (0..n).flat_map(|_| [0, 1]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_video_is_zero() {
        let b = batch(array![[0.6, 0.8], [0.6, 0.8]], &[0, 0]);
        for tau in [0.07, 1.0, 10.0] {
            assert_eq!(scfa_loss(&b, tau).unwrap(), 0.0);
            assert_eq!(ntxent_loss(&b, tau).unwrap(), 0.0);
        }
        let r = scfa_loss_grad(&b, 0.07).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn two_class_closed_form() {
        let z = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let b = batch(z, &[0, 0, 1, 1]);
        let want = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((scfa_loss(&b, 1.0).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn orthogonal_ntxent_is_log3() {
        let b = batch(Array2::eye(4), &[0, 0, 1, 1]);
        assert!((ntxent_loss(&b, 1.0).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn tiny_temperature_stays_finite() {
        let z = normalize_rows(
            array![
                [1.0, 0.1, 0.0],
                [0.0, 1.0, 0.3],
                [-1.0, 0.2, 0.1],
                [0.3, -1.0, 0.5]
            ]
            .view(),
        );
        let b = batch(z, &[0, 0, 1, 1]);
        let r = scfa_loss_grad(&b, 1e-3).unwrap();
        assert!(r.value.is_finite() && r.value >= 0.0);
        assert!(r.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn empty_positive_rows_contribute_nothing() {
        let z = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]];
        let mask = PositiveMask::from_fn(3, |i, j| (i, j) == (0, 1));
        let r = scfa_loss_masked(z.view(), &mask, 1.0).unwrap();
        // only anchor 0 counts: -log(e^0 / (e^0 + e^0.6)), averaged over 3 rows
        let want = ((1.0 + 0.6f64.exp()).ln()) / 3.0;
        assert!((r.value - want).abs() < 1e-12);
        assert!(r.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn bad_temperature() {
        let b = batch(Array2::eye(2), &[0, 0]);
        assert!(scfa_loss(&b, 0.0).is_err());
        assert!(ntxent_loss(&b, -0.5).is_err());
    }
}
