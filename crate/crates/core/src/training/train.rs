use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::batch::{make_batches, window_starts};
use super::config::{CoefficientPooling, TrainConfig};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::library::{SparseModel, TermLibrary};
use crate::nn::{
    apply_shifts, encode, encode_backward, forward_window, network_backward, ode_loss, ode_loss_grad, sparsify, NetworkParams, Selection, WindowSpec,
};
use crate::solver::{backprop_solve, solve_with};

/// Loss charged to a window whose solve diverged.
pub const DIVERGED_LOSS: f64 = 1e6;

/// Per-channel affine map applied to the network input (never to the
/// solve targets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: ArrayView2<'_, f64>) -> Self {
        let rows = data.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut scale = Vec::with_capacity(data.ncols());
        for col in data.columns() {
            let mu = col.sum() / rows;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / rows;
            mean.push(mu);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, window: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = window.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.scale[j]);
        }
        out
    }
}

/// Result of a training run. Immutable once returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredModel {
    pub model: SparseModel,
    pub shifts: Vec<f64>,
    /// Mean batch loss of every epoch run.
    pub history: Vec<f64>,
    pub config: TrainConfig,
    /// Zero-based epoch whose parameters produced `model`.
    pub best_epoch: usize,
    pub params: NetworkParams,
    pub standardizer: Option<Standardizer>,
}

/// Everything fixed for a run: dimensions, data, and the window layout.
struct Setup {
    library: TermLibrary,
    n: usize,
    data: Array2<f64>,
    standardizer: Option<Standardizer>,
    spec: WindowSpec,
}

impl Setup {
    fn new(config: &TrainConfig, traj: &Trajectory) -> Result<Self> {
        config.validate()?;
        if let Some(dt) = config.dt {
            if (dt - traj.dt()).abs() > 1e-9 * dt.abs().max(traj.dt().abs()) {
                return Err(Error::contract(format!("config dt {dt} differs from the data step {}", traj.dt())));
            }
        }
        let library = TermLibrary::build(traj.n(), traj.m(), config.order)?;
        let total = traj.n() * library.len();
        if config.support_size > total {
            return Err(Error::contract(format!("support_size {} exceeds {total} coefficients", config.support_size)));
        }
        let data = concatenate(Axis(1), &[traj.states().view(), traj.inputs().view()]).expect("row counts agree");
        let standardizer = config.standardize.then(|| Standardizer::fit(data.view()));
        let spec = WindowSpec { dt: traj.dt(), solve_steps: config.solve_steps(), scheme: config.scheme, head: config.head_input };
        Ok(Setup { library, n: traj.n(), data, standardizer, spec })
    }

    fn network_input(&self, window: ArrayView2<'_, f64>) -> Array2<f64> {
        match &self.standardizer {
            Some(st) => st.apply(window),
            None => window.to_owned(),
        }
    }

    /// Loss and gradient of one `k × (n+m)` window.
    fn window_pass(&self, params: &NetworkParams, selection: &Selection, window: ArrayView2<'_, f64>) -> Result<(f64, Option<NetworkParams>)> {
        let sequence = self.network_input(window);
        let states = window.slice(s![.., ..self.n]);
        let inputs = window.slice(s![.., self.n..]);
        let fwd = match forward_window(params, &self.library, selection, sequence.view(), states, inputs, &self.spec) {
            Ok(f) => f,
            Err(Error::Diverged { .. }) => return Ok((DIVERGED_LOSS, None)),
            Err(e) => return Err(e),
        };
        if !fwd.loss.is_finite() {
            return Ok((DIVERGED_LOSS, None));
        }
        let grads = network_backward(params, &fwd, states, 1.0, self.spec.head)?;
        Ok((fwd.loss, Some(grads)))
    }

    /// Loss of one window solved with a shared model and shifts, plus the
    /// masked coefficient and shift gradients when `with_grad` is set.
    /// Diverged windows carry no gradient.
    fn shared_solve(
        &self,
        model: &SparseModel,
        shifts: &Array1<f64>,
        selection: &Selection,
        window: ArrayView2<'_, f64>,
        with_grad: bool,
    ) -> Result<(f64, Option<(Array2<f64>, Array1<f64>)>)> {
        let steps = self.spec.solve_steps;
        if window.nrows() < steps + 1 {
            return Err(Error::contract(format!("window has {} rows, solve needs {}", window.nrows(), steps + 1)));
        }
        let states = window.slice(s![..=steps, ..self.n]);
        let inputs = apply_shifts(window.slice(s![.., self.n..]), shifts)?;
        let y0: Vec<f64> = states.row(0).to_vec();
        let (y_est, tape) = match solve_with(self.spec.scheme, model, &y0, inputs.view(), self.spec.dt, steps) {
            Ok(out) => out,
            Err(Error::Diverged { .. }) => return Ok((DIVERGED_LOSS, None)),
            Err(e) => return Err(e),
        };
        let loss = ode_loss(states, y_est.view())?;
        if !loss.is_finite() {
            return Ok((DIVERGED_LOSS, None));
        }
        if !with_grad {
            return Ok((loss, None));
        }
        let dy = ode_loss_grad(states, y_est.view());
        let sg = backprop_solve(&tape, model, dy.view())?;
        Ok((loss, Some((selection.mask(&sg.theta), sg.inputs.sum_axis(Axis(0))))))
    }

    /// Per-window losses and the gradient of their sum when the batch is
    /// solved with its mean coefficients and shifts.
    fn pooled_pass(&self, params: &NetworkParams, selection: &Selection, windows: &[Array2<f64>]) -> Result<(Vec<f64>, NetworkParams)> {
        let tapes = map_ordered(windows, |w| encode(params, self.network_input(w.view()).view(), self.spec.head))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let count = windows.len() as f64;
        let mut theta = Array2::zeros((self.n, self.library.len()));
        let mut shifts = Array1::zeros(self.library.m());
        for tape in &tapes {
            theta += &tape.output.theta_raw;
            shifts += &tape.output.shifts;
        }
        theta /= count;
        shifts /= count;
        let model = selection.model(&self.library, &theta)?;

        let solved = map_ordered(windows, |w| self.shared_solve(&model, &shifts, selection, w.view(), true));
        let mut losses = Vec::with_capacity(windows.len());
        let mut g_theta = Array2::zeros(theta.raw_dim());
        let mut g_shifts = Array1::zeros(shifts.raw_dim());
        for res in solved {
            let (loss, grad) = res?;
            losses.push(loss);
            if let Some((gt, gs)) = grad {
                g_theta += &gt;
                g_shifts += &gs;
            }
        }
        // each window's estimate enters the mean with weight 1/B
        g_theta /= count;
        g_shifts /= count;
        let per_window = map_ordered(&tapes, |tape| encode_backward(params, tape, g_theta.view(), g_shifts.view(), self.spec.head));
        let mut grads = params.zeros_like();
        for g in per_window {
            grads.add_scaled(&g?, 1.0);
        }
        Ok((losses, grads))
    }

    /// Mean raw coefficients and shifts over every window of the data.
    fn mean_output(&self, params: &NetworkParams, k: usize, stride: usize) -> Result<(Array2<f64>, Array1<f64>)> {
        let starts = window_starts(self.data.nrows(), k, stride)?;
        let outputs = map_ordered(&starts, |&start| {
            let sequence = self.network_input(self.data.slice(s![start..start + k, ..]));
            encode(params, sequence.view(), self.spec.head).map(|tape| tape.output)
        });
        let mut theta = Array2::zeros((self.n, self.library.len()));
        let mut shifts = Array1::zeros(self.library.m());
        for out in outputs {
            let out = out?;
            theta += &out.theta_raw;
            shifts += &out.shifts;
        }
        let count = starts.len() as f64;
        Ok((theta / count, shifts / count))
    }
}

#[cfg(feature = "parallel")]
fn map_ordered<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_ordered<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Fits the recovery network to `traj` and returns the coefficients of the
/// best epoch.
///
/// Each epoch refreshes the kept support from the mean raw coefficients over
/// all windows, keeping the largest entries among those kept so far, then
/// runs one Adam step per batch on the mean window loss. The budget follows
/// [`TrainConfig::budget`]; the best epoch is chosen among epochs at the
/// final budget.
pub fn train(config: &TrainConfig, traj: &Trajectory) -> Result<RecoveredModel> {
    let setup = Setup::new(config, traj)?;
    let k = config.window;
    let stride = config.stride();
    let window_count = window_starts(setup.data.nrows(), k, stride)?.len();
    if window_count < config.batch_size {
        return Err(Error::InsufficientData { needed: (config.batch_size - 1) * stride + k, got: setup.data.nrows() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = NetworkParams::init(&setup.library, config.hidden, &config.dense_hidden, &mut rng);
    if config.zero_output_layer {
        let out = params.dense.layers.last_mut().expect("head has an output layer");
        out.weight.fill(0.0);
        out.bias.fill(0.0);
    }
    let mut adam = Adam::new(params.len(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let coeff_rows = setup.n;
    let coeff_cols = setup.library.len();

    let total = coeff_rows * coeff_cols;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, NetworkParams, Selection)> = None;
    let mut selection = Selection::full(coeff_rows, coeff_cols);
    let final_budget = config.budget(config.epochs - 1, total);

    for epoch in 0..config.epochs {
        let budget = config.budget(epoch, total);
        adam.set_learning_rate(config.learning_rate_at(epoch));
        if budget < total {
            // nested refresh: only currently kept entries compete
            let (theta, _) = setup.mean_output(&params, k, stride)?;
            selection = sparsify(selection.mask(&theta).view(), budget)?;
        }
        let batches = make_batches(&setup.data, config.batch_size, k, stride, rng.next_u64())?;
        let mut epoch_loss = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let windows: Vec<Array2<f64>> = batch.tensor.outer_iter().map(|w| w.t().to_owned()).collect();
            let (mut grads, batch_loss) = match config.coefficient_pooling {
                CoefficientPooling::Window => {
                    let results = map_ordered(&windows, |w| setup.window_pass(&params, &selection, w.view()));
                    let mut grads = params.zeros_like();
                    let mut batch_loss = 0.0;
                    for res in results {
                        let (loss, g) = res?;
                        batch_loss += loss;
                        if let Some(g) = g {
                            grads.add_scaled(&g, 1.0);
                        }
                    }
                    (grads, batch_loss)
                }
                CoefficientPooling::Batch => {
                    let (losses, grads) = setup.pooled_pass(&params, &selection, &windows)?;
                    (grads, losses.iter().sum())
                }
            };
            let scale = 1.0 / windows.len() as f64;
            grads.iter_mut().for_each(|v| *v *= scale);
            epoch_loss += batch_loss * scale;
            adam.step(&mut params, &grads);
            if !params.all_finite() {
                history.push(epoch_loss / (b + 1) as f64);
                return Err(Error::NonFinite { epoch, batch: b, history });
            }
        }
        let epoch_loss = epoch_loss / batches.len() as f64;
        history.push(epoch_loss);
        if budget == final_budget && best.as_ref().is_none_or(|(l, ..)| epoch_loss < *l) {
            best = Some((epoch_loss, epoch, params.clone(), selection.clone()));
        }
    }

    let (_, best_epoch, best_params, best_selection) = best.expect("the last epoch is always tracked");
    let (theta, shifts) = setup.mean_output(&best_params, k, stride)?;
    let selection = sparsify(best_selection.mask(&theta).view(), final_budget)?;
    let model = selection.model(&setup.library, &theta)?;
    Ok(RecoveredModel {
        model,
        shifts: shifts.to_vec(),
        history,
        config: config.clone(),
        best_epoch,
        params: best_params,
        standardizer: setup.standardizer,
    })
}

/// Mean window loss of fixed parameters under a fixed selection, without
/// updating anything. Windows follow the configured stride in data order;
/// with batch pooling every window is solved with the mean over all of them.
pub fn window_loss(config: &TrainConfig, traj: &Trajectory, params: &NetworkParams, selection: &Selection) -> Result<f64> {
    let setup = Setup::new(config, traj)?;
    let k = config.window;
    let starts = window_starts(setup.data.nrows(), k, config.stride())?;
    let window = |start: usize| setup.data.slice(s![start..start + k, ..]);
    let losses = match config.coefficient_pooling {
        CoefficientPooling::Window => map_ordered(&starts, |&start| setup.window_pass(params, selection, window(start)).map(|(l, _)| l)),
        CoefficientPooling::Batch => {
            let (theta, shifts) = setup.mean_output(params, k, config.stride())?;
            let model = selection.model(&setup.library, &theta)?;
            map_ordered(&starts, |&start| setup.shared_solve(&model, &shifts, selection, window(start), false).map(|(l, _)| l))
        }
    };
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / starts.len() as f64)
}
