use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::{dense_backward, dense_forward, DenseOutput, DenseParams, DenseTape};
use super::gru::{gru_backward, gru_forward, GruParams, GruTape};
use super::sparsify::{apply_shifts, ode_loss, ode_loss_grad, Selection};
use crate::error::{Error, Result};
use crate::library::{SparseModel, TermLibrary};
use crate::solver::{backprop_solve, solve_with, Scheme, SolveTape};

/// Which hidden states feed the dense head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    /// Final hidden state `h_k`.
    #[default]
    Last,
    /// Mean of all `k` hidden states.
    Mean,
}

/// Learnable weights of the recovery network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub gru: GruParams,
    pub dense: DenseParams,
}

impl NetworkParams {
    pub fn init<R: Rng>(library: &TermLibrary, hidden: usize, dense_hidden: &[usize], rng: &mut R) -> Self {
        let n = library.n();
        let m = library.m();
        let gru = GruParams::init(hidden, n + m, rng);
        let dense = DenseParams::init(hidden, dense_hidden, n, library.len(), m, rng);
        NetworkParams { gru, dense }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.iter_mut().for_each(|v| *v = 0.0);
        z
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.gru.iter().chain(self.dense.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.gru.iter_mut().chain(self.dense.iter_mut())
    }

    /// `self += scale · other`, elementwise.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Static description of one window passed through the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub dt: f64,
    pub solve_steps: usize,
    pub scheme: Scheme,
    pub head: HeadInput,
}

/// GRU + dense part of the forward pass (no solve).
#[derive(Debug, Clone)]
pub struct EncodeTape {
    pub gru: GruTape,
    pub hidden: Array2<f64>,
    pub dense: DenseTape,
    pub output: DenseOutput,
}

/// Encodes a `k × (n+m)` window into raw coefficients and shifts.
pub fn encode(params: &NetworkParams, sequence: ArrayView2<'_, f64>, head: HeadInput) -> Result<EncodeTape> {
    let h0 = Array1::zeros(params.gru.hidden());
    let (hidden, gru) = gru_forward(&params.gru, sequence, h0.view())?;
    if hidden.nrows() == 0 {
        return Err(Error::contract("empty window"));
    }
    let head_in = match head {
        HeadInput::Last => hidden.row(hidden.nrows() - 1).to_owned(),
        HeadInput::Mean => hidden.mean_axis(Axis(0)).expect("non-empty"),
    };
    let (output, dense) = dense_forward(&params.dense, head_in.view())?;
    Ok(EncodeTape { gru, hidden, dense, output })
}

/// Full forward record of one window.
#[derive(Debug, Clone)]
pub struct WindowForward {
    pub encode: EncodeTape,
    pub selection: Selection,
    pub model: SparseModel,
    pub shifted_inputs: Array2<f64>,
    pub solve: SolveTape,
    pub y_est: Array2<f64>,
    pub loss: f64,
}

/// Runs GRU → dense → mask → shifts → solve → loss on one window.
///
/// `sequence` is the (possibly standardised) network input, `states` and
/// `inputs` are the raw measurements of the same window; the solve starts
/// from `states[0]`.
pub fn forward_window(
    params: &NetworkParams,
    library: &TermLibrary,
    selection: &Selection,
    sequence: ArrayView2<'_, f64>,
    states: ArrayView2<'_, f64>,
    inputs: ArrayView2<'_, f64>,
    spec: &WindowSpec,
) -> Result<WindowForward> {
    let steps = spec.solve_steps;
    if states.nrows() < steps + 1 {
        return Err(Error::contract(format!("window has {} rows, solve needs {}", states.nrows(), steps + 1)));
    }
    let encode = encode(params, sequence, spec.head)?;
    let model = selection.model(library, &encode.output.theta_raw)?;
    let shifted_inputs = apply_shifts(inputs, &encode.output.shifts)?;
    let y0: Vec<f64> = states.row(0).to_vec();
    let (y_est, solve) = solve_with(spec.scheme, &model, &y0, shifted_inputs.view(), spec.dt, steps)?;
    let loss = ode_loss(states.slice(s![..=steps, ..]), y_est.view())?;
    Ok(WindowForward { encode, selection: selection.clone(), model, shifted_inputs, solve, y_est, loss })
}

/// Exact gradient of `dl_dloss · loss` with respect to all parameters. The
/// selection acts as a fixed mask: unselected coefficients get zero gradient.
pub fn network_backward(
    params: &NetworkParams,
    fwd: &WindowForward,
    states: ArrayView2<'_, f64>,
    dl_dloss: f64,
    head: HeadInput,
) -> Result<NetworkParams> {
    let steps = fwd.solve.steps();
    if states.nrows() < steps + 1 || states.ncols() != fwd.y_est.ncols() {
        return Err(Error::contract("measured window does not match the forward record"));
    }
    if fwd.encode.gru.steps.len() != fwd.encode.hidden.nrows() || params.gru.hidden() != fwd.encode.hidden.ncols() {
        return Err(Error::contract("forward tape does not match the parameters"));
    }
    let dy = ode_loss_grad(states.slice(s![..=steps, ..]), fwd.y_est.view()) * dl_dloss;
    let sg = backprop_solve(&fwd.solve, &fwd.model, dy.view())?;

    let g_theta = fwd.selection.mask(&sg.theta);
    let g_shifts = sg.inputs.sum_axis(Axis(0));
    encode_backward(params, &fwd.encode, g_theta.view(), g_shifts.view(), head)
}

/// Parameter gradients given upstream gradients on one window's raw
/// coefficients and shifts.
pub fn encode_backward(
    params: &NetworkParams,
    tape: &EncodeTape,
    g_theta: ArrayView2<'_, f64>,
    g_shifts: ArrayView1<'_, f64>,
    head: HeadInput,
) -> Result<NetworkParams> {
    if tape.gru.steps.len() != tape.hidden.nrows() || params.gru.hidden() != tape.hidden.ncols() {
        return Err(Error::contract("forward tape does not match the parameters"));
    }
    let (g_dense, g_head) = dense_backward(&params.dense, &tape.dense, g_theta, g_shifts)?;

    let k = tape.hidden.nrows();
    let mut dl_dh = Array2::zeros((k, params.gru.hidden()));
    match head {
        HeadInput::Last => dl_dh.row_mut(k - 1).assign(&g_head),
        HeadInput::Mean => {
            let g = &g_head / k as f64;
            for mut row in dl_dh.rows_mut() {
                row.assign(&g);
            }
        }
    }
    let g_gru = gru_backward(&params.gru, &tape.gru, dl_dh.view())?;
    Ok(NetworkParams { gru: g_gru.params, dense: g_dense })
}
