use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_rows, table_rows};
use crate::error::{Error, Result};
use crate::feature_store::EmbeddingTable;
use crate::matrix::squared_distance;
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubpoolMode {
    /// One representative per k-means cluster in teacher space.
    Selective,
    Random,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subpool {
    /// Global train indices, ascending.
    pub indices: Vec<usize>,
    /// Set when the requested size exceeded the unlabeled pool.
    pub clamped: bool,
}

/// Compresses the unlabeled pool into a candidate subpool.
///
/// `teacher` holds the full training table; `unlabeled` indexes into it.
/// Selective mode runs k-means with `k = size` and keeps, per centroid in
/// order, the nearest point not already taken by an earlier centroid.
pub fn build_subpool(
    unlabeled: &[usize],
    teacher: &EmbeddingTable,
    mode: SubpoolMode,
    size: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Subpool> {
    if unlabeled.is_empty() {
        return Err(Error::Empty("unlabeled pool"));
    }
    let clamped = size > unlabeled.len();
    let size = size.min(unlabeled.len());
    let mut indices = match mode {
        SubpoolMode::None => unlabeled.to_vec(),
        SubpoolMode::Random => {
            if size == 0 {
                return Err(Error::invalid("subpool size must be positive"));
            }
            index::sample(&mut rng_from_seed(seed), unlabeled.len(), size)
                .into_iter()
                .map(|i| unlabeled[i])
                .collect()
        }
        SubpoolMode::Selective => {
            if size == 0 {
                return Err(Error::invalid("subpool size must be positive"));
            }
            let points = table_rows(&teacher.select(unlabeled)?);
            let km = kmeans_rows(&points, size, seed, max_iter)?;
            let mut taken = vec![false; points.len()];
            let mut out = Vec::with_capacity(size);
            for centroid in km.centroids.iter_rows() {
                let mut best: Option<(usize, f64)> = None;
                for (i, p) in points.iter().enumerate() {
                    if taken[i] {
                        continue;
                    }
                    let d = squared_distance(p, centroid);
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((i, d));
                    }
                }
                if let Some((i, _)) = best {
                    taken[i] = true;
                    out.push(unlabeled[i]);
                }
            }
            out
        }
    };
    indices.sort_unstable();
    Ok(Subpool { indices, clamped })
}
