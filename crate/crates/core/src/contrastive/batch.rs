use std::collections::HashMap;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// `2N` projection rows with per-row label, video id and view id.
///
/// Every video contributes exactly two rows, one per view. Batches built by
/// [`EmbeddingBatch::from_views`] interleave them (rows `2j`, `2j + 1`), but
/// any row order is accepted as long as the pairing is intact.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub z: Array2<f64>,
    pub labels: Vec<usize>,
    pub video_ids: Vec<String>,
    pub view_ids: Vec<u8>,
    siblings: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(
        z: Array2<f64>,
        labels: Vec<usize>,
        video_ids: Vec<String>,
        view_ids: Vec<u8>,
    ) -> Result<Self> {
        let rows = z.nrows();
        if labels.len() != rows || video_ids.len() != rows || view_ids.len() != rows {
            return Err(Error::shape(
                "batch metadata",
                format!("{rows} labels, video ids and view ids"),
                format!("{}, {}, {}", labels.len(), video_ids.len(), view_ids.len()),
            ));
        }
        let siblings = sibling_pairing(&labels, &video_ids, &view_ids)?;
        Ok(Self {
            z,
            labels,
            video_ids,
            view_ids,
            siblings,
        })
    }

    /// Interleave two view matrices: row `2j` is `z1[j]`, row `2j + 1` is `z2[j]`.
    pub fn from_views(
        z1: ArrayView2<f64>,
        z2: ArrayView2<f64>,
        labels: &[usize],
        video_ids: &[String],
    ) -> Result<Self> {
        if z1.dim() != z2.dim() {
            return Err(Error::shape(
                "second view",
                format!("{:?}", z1.dim()),
                format!("{:?}", z2.dim()),
            ));
        }
        let (n, d) = z1.dim();
        let mut z = Array2::zeros((2 * n, d));
        for j in 0..n {
            z.row_mut(2 * j).assign(&z1.row(j));
            z.row_mut(2 * j + 1).assign(&z2.row(j));
        }
        let twice = |v: &[usize]| v.iter().flat_map(|&x| [x, x]).collect::<Vec<_>>();
        Self::new(
            z,
            twice(labels),
            video_ids
                .iter()
                .flat_map(|v| [v.clone(), v.clone()])
                .collect(),
            (0..n).flat_map(|_| [0u8, 1u8]).collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.z.nrows()
    }

    /// Index of the other view of row `i`'s video.
    pub fn sibling(&self, i: usize) -> usize {
        self.siblings[i]
    }

    pub fn mask(&self) -> PositiveMask {
        positive_mask(&self.labels, &self.video_ids, &self.view_ids)
            .expect("validated at construction")
    }

    /// Same batch with embeddings replaced (e.g. after normalization).
    pub fn with_embeddings(&self, z: Array2<f64>) -> Result<Self> {
        if z.dim() != self.z.dim() {
            return Err(Error::shape(
                "embeddings",
                format!("{:?}", self.z.dim()),
                format!("{:?}", z.dim()),
            ));
        }
        Ok(Self { z, ..self.clone() })
    }

    /// Reorder rows: row `k` of the result is row `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::new(
            self.z.select(Axis(0), perm),
            perm.iter().map(|&i| self.labels[i]).collect(),
            perm.iter().map(|&i| self.video_ids[i].clone()).collect(),
            perm.iter().map(|&i| self.view_ids[i]).collect(),
        )
    }
}

fn sibling_pairing(labels: &[usize], video_ids: &[String], view_ids: &[u8]) -> Result<Vec<usize>> {
    let rows = labels.len();
    if rows == 0 || !rows.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "a contrastive batch needs a positive even number of rows, got {rows}"
        )));
    }
    let mut by_video: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, id) in video_ids.iter().enumerate() {
        by_video.entry(id).or_default().push(i);
    }
    let mut siblings = vec![0; rows];
    for (id, members) in by_video {
        let &[a, b] = members.as_slice() else {
            return Err(Error::InvalidArgument(format!(
                "video {id} has {} rows in the batch, expected two sibling views",
                members.len()
            )));
        };
        if view_ids[a] == view_ids[b] || view_ids[a] > 1 || view_ids[b] > 1 {
            return Err(Error::InvalidArgument(format!(
                "video {id} rows must carry view ids 0 and 1"
            )));
        }
        if labels[a] != labels[b] {
            return Err(Error::InvalidArgument(format!(
                "video {id} has two different labels"
            )));
        }
        siblings[a] = b;
        siblings[b] = a;
    }
    Ok(siblings)
}

/// `M[i][j]` is true iff `j` is a positive for anchor `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositiveMask {
    size: usize,
    bits: Vec<bool>,
}

impl PositiveMask {
    /// Build from an arbitrary predicate; the diagonal is forced false.
    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = vec![false; size * size];
        for i in 0..size {
            for j in 0..size {
                bits[i * size + j] = i != j && f(i, j);
            }
        }
        Self { size, bits }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.size..(i + 1) * self.size]
    }

    pub fn count(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&b| b).count()
    }
}

/// Positives are other rows with the same label or the same video.
pub fn positive_mask(
    labels: &[usize],
    video_ids: &[String],
    view_ids: &[u8],
) -> Result<PositiveMask> {
    let n = labels.len();
    if video_ids.len() != n || view_ids.len() != n {
        return Err(Error::shape(
            "positive mask inputs",
            format!("{n} entries each"),
            format!("{}, {}, {}", n, video_ids.len(), view_ids.len()),
        ));
    }
    Ok(PositiveMask::from_fn(n, |i, j| {
        labels[i] == labels[j] || video_ids[i] == video_ids[j]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_video() {
        let m = positive_mask(&[0, 0], &ids(&["a", "a"]), &[0, 1]).unwrap();
        assert!(!m.get(0, 0) && m.get(0, 1) && m.get(1, 0) && !m.get(1, 1));
    }

    #[test]
    fn distinct_labels_only_siblings() {
        let m = positive_mask(&[0, 0, 1, 1], &ids(&["a", "a", "b", "b"]), &[0, 1, 0, 1]).unwrap();
        for i in 0..4 {
            assert_eq!(m.count(i), 1);
            assert!(m.get(i, i ^ 1));
        }
    }

    #[test]
    fn shared_label_all_positive() {
        let m = positive_mask(&[2, 2, 2, 2], &ids(&["a", "a", "b", "b"]), &[0, 1, 0, 1]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.get(i, j), i != j);
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(positive_mask(&[0, 0], &ids(&["a"]), &[0, 1]).is_err());
    }

    #[test]
    fn batch_validation() {
        let z = Array2::zeros((4, 2));
        let ok = EmbeddingBatch::new(
            z.clone(),
            vec![0, 1, 0, 1],
            ids(&["a", "b", "a", "b"]),
            vec![0, 0, 1, 1],
        )
        .unwrap();
        assert_eq!(ok.sibling(0), 2);
        assert_eq!(ok.sibling(3), 1);
        // three rows of one video
        assert!(EmbeddingBatch::new(
            z.clone(),
            vec![0; 4],
            ids(&["a", "a", "a", "b"]),
            vec![0, 1, 0, 1]
        )
        .is_err());
        // same view id twice
        assert!(EmbeddingBatch::new(
            z.clone(),
            vec![0; 4],
            ids(&["a", "a", "b", "b"]),
            vec![0, 0, 0, 1]
        )
        .is_err());
        // sibling label disagreement
        assert!(EmbeddingBatch::new(
            z.clone(),
            vec![0, 1, 0, 0],
            ids(&["a", "a", "b", "b"]),
            vec![0, 1, 0, 1]
        )
        .is_err());
        assert!(EmbeddingBatch::new(
            Array2::zeros((3, 2)),
            vec![0; 3],
            ids(&["a", "a", "b"]),
            vec![0, 1, 0]
        )
        .is_err());
    }
}
