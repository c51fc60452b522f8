use ndarray::{s, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `S_B` windows stacked as an `S_B × (n+m) × k` tensor, with the absolute
/// start row of each window.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub tensor: Array3<f64>,
    pub starts: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

/// Start rows of every full window of length `k` taken every `stride` rows.
pub fn window_starts(rows: usize, k: usize, stride: usize) -> Result<Vec<usize>> {
    if k == 0 || stride == 0 {
        return Err(Error::contract("window length and stride must be positive"));
    }
    if rows < k {
        return Err(Error::InsufficientData { needed: k, got: rows });
    }
    Ok((0..=rows - k).step_by(stride).collect())
}

/// Slices `data` (N × (n+m), states then inputs) into windows, shuffles them
/// with `seed`, and groups them into batches of `batch_size`. A trailing
/// partial batch is dropped.
pub fn make_batches(data: &Array2<f64>, batch_size: usize, k: usize, stride: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    let mut starts = window_starts(data.nrows(), k, stride)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    starts.shuffle(&mut rng);
    let width = data.ncols();
    Ok(starts
        .chunks_exact(batch_size)
        .map(|group| {
            let mut tensor = Array3::zeros((batch_size, width, k));
            for (b, &start) in group.iter().enumerate() {
                tensor.slice_mut(s![b, .., ..]).assign(&data.slice(s![start..start + k, ..]).t());
            }
            Batch { tensor, starts: group.to_vec() }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(rows: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, 3), |(i, j)| (i * 10 + j) as f64)
    }

    #[test]
    fn counts_under_stride_k() {
        let b = make_batches(&data(100), 5, 10, 10, 1).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].tensor.dim(), (5, 3, 10));
        let b = make_batches(&data(95), 5, 10, 10, 1).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn deterministic_order_and_alignment() {
        let d = data(100);
        let a = make_batches(&d, 5, 10, 10, 42).unwrap();
        assert_eq!(a, make_batches(&d, 5, 10, 10, 42).unwrap());
        for batch in &a {
            for (b, &start) in batch.starts.iter().enumerate() {
                assert_eq!(start % 10, 0);
                assert_eq!(batch.tensor[(b, 2, 3)], d[(start + 3, 2)]);
            }
        }
    }

    #[test]
    fn too_short() {
        assert!(matches!(make_batches(&data(5), 1, 10, 10, 0), Err(Error::InsufficientData { needed: 10, got: 5 })));
    }
}
