//! Gated recurrent unit with a hand-written backward pass.
//!
//! Per timestep, with `c = [h_prev; x]`:
//!
//! ```text
//! z  = σ(Wz·c + bz)
//! r  = σ(Wr·c + br)
//! a  = tanh(Wa·[r ⊙ h_prev; x] + bc)
//! h  = z ⊙ h_prev + (1 − z) ⊙ a
//! ```

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub wz: Array2<f64>,
    pub wr: Array2<f64>,
    pub wa: Array2<f64>,
    pub bias_z: Array1<f64>,
    pub bias_r: Array1<f64>,
    pub bias_c: Array1<f64>,
}

impl GruParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = Array2::zeros((hidden, hidden + input));
        let b = Array1::zeros(hidden);
        GruParams { wz: w.clone(), wr: w.clone(), wa: w, bias_z: b.clone(), bias_r: b.clone(), bias_c: b }
    }

    /// Uniform(−s, s) with `s = 1/√(H + D)` for weights and biases alike.
    pub fn init<R: Rng>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let s = 1.0 / ((hidden + input) as f64).sqrt();
        let mut p = GruParams::zeros(hidden, input);
        for v in p.iter_mut() {
            *v = rng.random_range(-s..s);
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.wz.nrows()
    }

    pub fn input(&self) -> usize {
        self.wz.ncols() - self.hidden()
    }

    pub fn check(&self) -> Result<()> {
        let (h, w) = self.wz.dim();
        if w < h || self.wr.dim() != (h, w) || self.wa.dim() != (h, w) {
            return Err(Error::contract("GRU weight matrices must share shape H × (H + D)"));
        }
        if self.bias_z.len() != h || self.bias_r.len() != h || self.bias_c.len() != h {
            return Err(Error::contract("GRU biases must have length H"));
        }
        Ok(())
    }

    /// Flat mutable iteration in a fixed order (wz, wr, wa, bz, br, bc).
    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.wz
            .iter_mut()
            .chain(self.wr.iter_mut())
            .chain(self.wa.iter_mut())
            .chain(self.bias_z.iter_mut())
            .chain(self.bias_r.iter_mut())
            .chain(self.bias_c.iter_mut())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.wz
            .iter()
            .chain(self.wr.iter())
            .chain(self.wa.iter())
            .chain(self.bias_z.iter())
            .chain(self.bias_r.iter())
            .chain(self.bias_c.iter())
    }
}

/// Activations of one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub h_prev: Array1<f64>,
    pub x: Array1<f64>,
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub a: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruTape {
    pub steps: Vec<GruStep>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn concat(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.len() + b.len());
    out.slice_mut(s![..a.len()]).assign(&a);
    out.slice_mut(s![a.len()..]).assign(&b);
    out
}

/// Runs the cell over a `k × D` sequence. Returns all hidden states (`k × H`).
pub fn gru_forward(params: &GruParams, sequence: ArrayView2<'_, f64>, h0: ArrayView1<'_, f64>) -> Result<(Array2<f64>, GruTape)> {
    params.check()?;
    let hidden = params.hidden();
    if sequence.ncols() != params.input() || h0.len() != hidden {
        return Err(Error::contract(format!(
            "GRU expects D={} inputs and H={hidden} initial state, got {} and {}",
            params.input(),
            sequence.ncols(),
            h0.len()
        )));
    }
    let mut states = Array2::zeros((sequence.nrows(), hidden));
    let mut steps = Vec::with_capacity(sequence.nrows());
    let mut h = h0.to_owned();
    for (t, x) in sequence.rows().into_iter().enumerate() {
        let c = concat(h.view(), x);
        let z = (params.wz.dot(&c) + &params.bias_z).mapv(sigmoid);
        let r = (params.wr.dot(&c) + &params.bias_r).mapv(sigmoid);
        let rh = &r * &h;
        let c2 = concat(rh.view(), x);
        let a = (params.wa.dot(&c2) + &params.bias_c).mapv(f64::tanh);
        let next = &z * &h + &(1.0 - &z) * &a;
        states.row_mut(t).assign(&next);
        steps.push(GruStep { h_prev: std::mem::replace(&mut h, next), x: x.to_owned(), z, r, a });
    }
    Ok((states, GruTape { steps }))
}

/// Gradients of the GRU parameters, the input sequence and the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruGradients {
    pub params: GruParams,
    pub sequence: Array2<f64>,
    pub h0: Array1<f64>,
}

/// Backpropagation through time. `dl_dh` is the loss gradient with respect
/// to every hidden state returned by [`gru_forward`].
pub fn gru_backward(params: &GruParams, tape: &GruTape, dl_dh: ArrayView2<'_, f64>) -> Result<GruGradients> {
    let hidden = params.hidden();
    let input = params.input();
    if dl_dh.dim() != (tape.steps.len(), hidden) {
        return Err(Error::contract(format!(
            "hidden-state gradient is {:?}, expected ({}, {hidden})",
            dl_dh.dim(),
            tape.steps.len()
        )));
    }
    let mut g = GruParams::zeros(hidden, input);
    let mut g_seq = Array2::zeros((tape.steps.len(), input));
    let mut carry = Array1::<f64>::zeros(hidden);
    for (t, step) in tape.steps.iter().enumerate().rev() {
        let gh = &carry + &dl_dh.row(t);
        // h = z ⊙ h_prev + (1 − z) ⊙ a
        let gz = &gh * &(&step.h_prev - &step.a);
        let ga = &gh * &(1.0 - &step.z);
        let mut gh_prev = &gh * &step.z;

        let pre_a = &ga * &(1.0 - &step.a * &step.a);
        let rh = &step.r * &step.h_prev;
        let c2 = concat(rh.view(), step.x.view());
        g.wa += &outer(pre_a.view(), c2.view());
        g.bias_c += &pre_a;
        let g_c2 = params.wa.t().dot(&pre_a);
        let g_rh = g_c2.slice(s![..hidden]);
        let gr = &g_rh * &step.h_prev;
        gh_prev += &(&g_rh * &step.r);
        let mut gx = g_c2.slice(s![hidden..]).to_owned();

        let pre_z = &gz * &(&step.z * &(1.0 - &step.z));
        let pre_r = &gr * &(&step.r * &(1.0 - &step.r));
        let c = concat(step.h_prev.view(), step.x.view());
        g.wz += &outer(pre_z.view(), c.view());
        g.wr += &outer(pre_r.view(), c.view());
        g.bias_z += &pre_z;
        g.bias_r += &pre_r;
        let g_c = params.wz.t().dot(&pre_z) + params.wr.t().dot(&pre_r);
        gh_prev += &g_c.slice(s![..hidden]);
        gx += &g_c.slice(s![hidden..]);

        g_seq.row_mut(t).assign(&gx);
        carry = gh_prev;
    }
    Ok(GruGradients { params: g, sequence: g_seq, h0: carry })
}

fn outer(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let a2 = a.insert_axis(ndarray::Axis(1));
    let b2 = b.insert_axis(ndarray::Axis(0));
    a2.dot(&b2)
}
