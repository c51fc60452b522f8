use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Multi-layer perceptron from the hidden state to `n·L` coefficients plus
/// `q` input shifts. ReLU on hidden layers, identity on the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub layers: Vec<DenseLayer>,
    pub n: usize,
    pub library_len: usize,
    pub q: usize,
}

impl DenseParams {
    /// Zero-initialised head with the given hidden widths.
    pub fn zeros(input: usize, hidden: &[usize], n: usize, library_len: usize, q: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(n * library_len + q);
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer { weight: Array2::zeros((w[1], w[0])), bias: Array1::zeros(w[1]) })
            .collect();
        DenseParams { layers, n, library_len, q }
    }

    /// Uniform(−s, s) with `s = 1/√fan_in` per layer.
    pub fn init<R: Rng>(input: usize, hidden: &[usize], n: usize, library_len: usize, q: usize, rng: &mut R) -> Self {
        let mut p = DenseParams::zeros(input, hidden, n, library_len, q);
        for layer in &mut p.layers {
            let s = 1.0 / (layer.weight.ncols() as f64).sqrt();
            for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *v = rng.random_range(-s..s);
            }
        }
        p
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.ncols())
    }

    pub fn output_width(&self) -> usize {
        self.n * self.library_len + self.q
    }

    pub fn check(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::contract("dense head needs at least one layer"));
        };
        if last.weight.nrows() != self.output_width() {
            return Err(Error::contract(format!(
                "dense output width {} differs from n·L + q = {}",
                last.weight.nrows(),
                self.output_width()
            )));
        }
        for pair in self.layers.windows(2) {
            if pair[0].weight.nrows() != pair[1].weight.ncols() {
                return Err(Error::contract("dense layer widths do not chain"));
            }
        }
        if self.layers.iter().any(|l| l.bias.len() != l.weight.nrows()) {
            return Err(Error::contract("dense bias length differs from layer width"));
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    fn zeros_like(&self) -> Self {
        DenseParams {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer { weight: Array2::zeros(l.weight.dim()), bias: Array1::zeros(l.bias.len()) })
                .collect(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTape {
    /// Input to each layer (post-activation of the previous one).
    pub inputs: Vec<Array1<f64>>,
    /// Pre-activation of each layer.
    pub pre: Vec<Array1<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutput {
    pub theta_raw: Array2<f64>,
    pub shifts: Array1<f64>,
}

pub fn dense_forward(params: &DenseParams, h_final: ArrayView1<'_, f64>) -> Result<(DenseOutput, DenseTape)> {
    params.check()?;
    if h_final.len() != params.input_width() {
        return Err(Error::contract(format!(
            "dense head expects {} inputs, got {}",
            params.input_width(),
            h_final.len()
        )));
    }
    let last = params.layers.len() - 1;
    let mut x = h_final.to_owned();
    let mut tape = DenseTape { inputs: Vec::with_capacity(last + 1), pre: Vec::with_capacity(last + 1) };
    for (i, layer) in params.layers.iter().enumerate() {
        let pre = layer.weight.dot(&x) + &layer.bias;
        let out = if i < last { pre.mapv(|v| v.max(0.0)) } else { pre.clone() };
        tape.inputs.push(std::mem::replace(&mut x, out));
        tape.pre.push(pre);
    }
    let coeffs = params.n * params.library_len;
    let theta_raw = x.slice(ndarray::s![..coeffs]).to_owned().into_shape_with_order((params.n, params.library_len)).expect("row-major split");
    let shifts = x.slice(ndarray::s![coeffs..]).to_owned();
    Ok((DenseOutput { theta_raw, shifts }, tape))
}

/// Returns parameter gradients and the gradient with respect to `h_final`.
pub fn dense_backward(
    params: &DenseParams,
    tape: &DenseTape,
    g_theta: ArrayView2<'_, f64>,
    g_shifts: ArrayView1<'_, f64>,
) -> Result<(DenseParams, Array1<f64>)> {
    if g_theta.dim() != (params.n, params.library_len) || g_shifts.len() != params.q {
        return Err(Error::contract("dense upstream gradient has the wrong shape"));
    }
    if tape.inputs.len() != params.layers.len() {
        return Err(Error::contract("dense tape does not match parameters"));
    }
    let mut grads = params.zeros_like();
    let mut g: Array1<f64> = g_theta.iter().chain(g_shifts.iter()).copied().collect();
    let last = params.layers.len() - 1;
    for i in (0..=last).rev() {
        if i < last {
            for (gv, &pre) in g.iter_mut().zip(&tape.pre[i]) {
                if pre <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let layer = &params.layers[i];
        let gl = &mut grads.layers[i];
        let input = &tape.inputs[i];
        for (r, &gr) in g.iter().enumerate() {
            if gr != 0.0 {
                gl.weight.row_mut(r).scaled_add(gr, input);
            }
        }
        gl.bias += &g;
        g = layer.weight.t().dot(&g);
    }
    Ok((grads, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_outputs_zero() {
        let p = DenseParams::zeros(4, &[5], 2, 3, 1);
        let (out, _) = dense_forward(&p, array![1.0, -1.0, 2.0, 0.5].view()).unwrap();
        assert!(out.theta_raw.iter().all(|&v| v == 0.0));
        assert_eq!(out.shifts, array![0.0]);
        assert_eq!(out.theta_raw.dim(), (2, 3));
    }

    #[test]
    fn single_layer_picks_weight_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = DenseParams::init(3, &[], 1, 2, 1, &mut rng);
        let (out, _) = dense_forward(&p, array![1.0, 0.0, 0.0].view()).unwrap();
        let expect = &p.layers[0].weight.column(0) + &p.layers[0].bias;
        let got: Vec<f64> = out.theta_raw.iter().chain(out.shifts.iter()).copied().collect();
        assert_eq!(got, expect.to_vec());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = DenseParams::init(3, &[4, 3], 2, 2, 1, &mut rng);
        let h = array![0.3, -0.8, 0.6];
        let gt = array![[1.0, -2.0], [0.5, 0.25]];
        let gs = array![-1.5];
        let loss = |p: &DenseParams, h: &Array1<f64>| {
            let (o, _) = dense_forward(p, h.view()).unwrap();
            (&o.theta_raw * &gt).sum() + (&o.shifts * &gs).sum()
        };
        let (_, tape) = dense_forward(&p, h.view()).unwrap();
        let (g, gh) = dense_backward(&p, &tape, gt.view(), gs.view()).unwrap();
        let analytic: Vec<f64> = g.iter().copied().collect();
        let eps = 1e-6;
        for idx in 0..analytic.len() {
            let mut a = p.clone();
            *a.iter_mut().nth(idx).unwrap() += eps;
            let mut b = p.clone();
            *b.iter_mut().nth(idx).unwrap() -= eps;
            let fd = (loss(&a, &h) - loss(&b, &h)) / (2.0 * eps);
            assert!((fd - analytic[idx]).abs() < 1e-7, "{idx}: {fd} vs {}", analytic[idx]);
        }
        for i in 0..3 {
            let mut a = h.clone();
            a[i] += eps;
            let mut b = h.clone();
            b[i] -= eps;
            let fd = (loss(&p, &a) - loss(&p, &b)) / (2.0 * eps);
            assert!((fd - gh[i]).abs() < 1e-7);
        }
    }
}
