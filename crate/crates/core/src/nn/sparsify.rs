use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::library::{SparseModel, TermLibrary};

/// Top-`p` magnitude selection over a coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub support: BTreeSet<(usize, usize)>,
    /// Set when some selected entries are exactly zero (fewer than `p`
    /// nonzero candidates).
    pub degenerate: bool,
}

impl Selection {
    /// Every entry of an `rows × cols` matrix.
    pub fn full(rows: usize, cols: usize) -> Self {
        let support = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect();
        Selection { support, degenerate: false }
    }

    /// Zeroes entries outside the support.
    pub fn mask(&self, theta: &Array2<f64>) -> Array2<f64> {
        let mut out = theta.clone();
        for ((r, c), v) in out.indexed_iter_mut() {
            if !self.support.contains(&(r, c)) {
                *v = 0.0;
            }
        }
        out
    }

    pub fn model(&self, library: &TermLibrary, theta_raw: &Array2<f64>) -> Result<SparseModel> {
        SparseModel::with_support(library.clone(), self.mask(theta_raw), self.support.clone())
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// Keeps the `p` entries of largest magnitude. Ties go to the smaller
/// row-major index.
pub fn sparsify(theta_raw: ArrayView2<'_, f64>, p: usize) -> Result<Selection> {
    let (rows, cols) = theta_raw.dim();
    let total = rows * cols;
    if p == 0 || p > total {
        return Err(Error::contract(format!("support size {p} outside 1..={total}")));
    }
    let flat: Vec<f64> = theta_raw.iter().copied().collect();
    let mut order: Vec<usize> = (0..total).collect();
    // stable sort keeps index order among equal magnitudes
    order.sort_by(|&a, &b| flat[b].abs().total_cmp(&flat[a].abs()));
    let chosen = &order[..p];
    let degenerate = chosen.iter().any(|&i| flat[i] == 0.0);
    let support = chosen.iter().map(|&i| (i / cols, i % cols)).collect();
    Ok(Selection { support, degenerate })
}

/// Adds `shifts[j]` to every entry of column `j`.
pub fn apply_shifts(u: ArrayView2<'_, f64>, shifts: &Array1<f64>) -> Result<Array2<f64>> {
    if u.ncols() != shifts.len() {
        return Err(Error::contract(format!("{} shifts for {} input channels", shifts.len(), u.ncols())));
    }
    Ok(&u + &shifts.view().insert_axis(ndarray::Axis(0)))
}

/// Mean squared error over all entries.
pub fn ode_loss(y: ArrayView2<'_, f64>, y_est: ArrayView2<'_, f64>) -> Result<f64> {
    if y.dim() != y_est.dim() {
        return Err(Error::contract(format!("loss shapes differ: {:?} vs {:?}", y.dim(), y_est.dim())));
    }
    if y.is_empty() {
        return Err(Error::contract("loss over an empty trajectory"));
    }
    let sum: f64 = y.iter().zip(y_est.iter()).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(sum / y.len() as f64)
}

/// Gradient of [`ode_loss`] with respect to `y_est`.
pub fn ode_loss_grad(y: ArrayView2<'_, f64>, y_est: ArrayView2<'_, f64>) -> Array2<f64> {
    let scale = 2.0 / y.len() as f64;
    (&y_est - &y) * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn keeps_largest_magnitudes() {
        let theta = array![[0.5, -3.0, 0.01, 2.0]];
        let sel = sparsify(theta.view(), 2).unwrap();
        assert_eq!(sel.support, [(0, 1), (0, 3)].into_iter().collect());
        assert_eq!(sel.mask(&theta), array![[0.0, -3.0, 0.0, 2.0]]);
        assert!(!sel.degenerate);
    }

    #[test]
    fn full_budget_is_identity() {
        let theta = array![[0.5, -3.0], [0.01, 2.0]];
        let sel = sparsify(theta.view(), 4).unwrap();
        assert_eq!(sel.mask(&theta), theta);
        assert_eq!(sel, Selection::full(2, 2));
    }

    #[test]
    fn all_zero_takes_first_indices() {
        let theta = Array2::zeros((2, 3));
        let sel = sparsify(theta.view(), 2).unwrap();
        assert_eq!(sel.support, [(0, 0), (0, 1)].into_iter().collect());
        assert!(sel.degenerate);
    }

    #[test]
    fn budget_bounds() {
        let theta = Array2::zeros((1, 3));
        assert!(sparsify(theta.view(), 0).is_err());
        assert!(sparsify(theta.view(), 4).is_err());
    }

    #[test]
    fn shift_examples() {
        let u = array![[1.0], [1.0], [1.0]];
        assert_eq!(apply_shifts(u.view(), &array![0.0]).unwrap(), u);
        assert_eq!(apply_shifts(u.view(), &array![0.2]).unwrap(), array![[1.2], [1.2], [1.2]]);
        assert!(apply_shifts(u.view(), &array![0.2, 0.1]).is_err());
    }

    #[test]
    fn loss_examples() {
        let y = array![[1.0], [1.0]];
        assert_eq!(ode_loss(y.view(), y.view()).unwrap(), 0.0);
        assert_eq!(ode_loss(y.view(), array![[0.0], [2.0]].view()).unwrap(), 1.0);
        assert!(ode_loss(y.view(), array![[0.0, 1.0], [2.0, 1.0]].view()).is_err());
    }
}
