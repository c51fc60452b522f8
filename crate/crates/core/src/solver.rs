//! Fixed-step explicit Runge–Kutta integration of a [`SparseModel`] with a
//! recorded tape, and exact reverse-mode gradients through the unrolled
//! stages (discretize-then-optimize).
//!
//! Inputs use a zero-order hold: row `t` of `U` drives every stage of the
//! step from `t` to `t + 1`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::SparseModel;

/// Any state component above this magnitude aborts the solve.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Explicit Runge–Kutta method, stored as a lower-triangular Butcher tableau.
/// The time nodes are unused because the right-hand side is autonomous
/// within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Rk4,
    /// Explicit midpoint rule.
    Rk2,
}

impl Scheme {
    fn stages(self) -> usize {
        match self {
            Scheme::Rk4 => 4,
            Scheme::Rk2 => 2,
        }
    }

    /// Coefficient `a[i][j]` for stage `i` reading stage derivative `j < i`.
    fn a(self, i: usize, j: usize) -> f64 {
        match (self, i, j) {
            (Scheme::Rk4, 1, 0) | (Scheme::Rk4, 2, 1) | (Scheme::Rk2, 1, 0) => 0.5,
            (Scheme::Rk4, 3, 2) => 1.0,
            _ => 0.0,
        }
    }

    fn b(self, i: usize) -> f64 {
        match (self, i) {
            (Scheme::Rk4, 0 | 3) => 1.0 / 6.0,
            (Scheme::Rk4, _) => 1.0 / 3.0,
            (Scheme::Rk2, 0) => 0.0,
            (Scheme::Rk2, _) => 1.0,
        }
    }

    pub fn order(self) -> u32 {
        match self {
            Scheme::Rk4 => 4,
            Scheme::Rk2 => 2,
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Scheme::Rk4),
            "rk2" => Ok(Scheme::Rk2),
            other => Err(Error::contract(format!("unknown integration scheme `{other}`"))),
        }
    }
}

/// Everything computed during one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    pub stage_states: Vec<Vec<f64>>,
    pub stage_derivs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTape {
    pub scheme: Scheme,
    pub dt: f64,
    pub records: Vec<StepRecord>,
    /// Row count of the input matrix the solve was called with.
    pub input_rows: usize,
    pub final_state: Vec<f64>,
}

impl SolveTape {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    /// Trajectory stored on the tape, `(steps + 1) × n`.
    pub fn states(&self) -> Array2<f64> {
        let n = self.final_state.len();
        let mut out = Array2::zeros((self.steps() + 1, n));
        for (t, rec) in self.records.iter().enumerate() {
            out.row_mut(t).assign(&ndarray::ArrayView1::from(&rec.state[..]));
        }
        out.row_mut(self.steps()).assign(&ndarray::ArrayView1::from(&self.final_state[..]));
        out
    }

    /// Re-runs the forward recurrence from the recorded initial state and
    /// inputs.
    pub fn replay(&self, model: &SparseModel) -> Result<Array2<f64>> {
        let n = model.n();
        let m = model.m();
        let y0 = self.records.first().map(|r| r.state.clone()).unwrap_or_else(|| self.final_state.clone());
        let mut inputs = Array2::zeros((self.input_rows.max(self.steps() + 1), m));
        for (t, rec) in self.records.iter().enumerate() {
            for (j, &v) in rec.input.iter().enumerate() {
                inputs[(t, j)] = v;
            }
        }
        let (traj, _) = solve_with(self.scheme, model, &y0, inputs.view(), self.dt, self.steps())?;
        debug_assert_eq!(traj.ncols(), n);
        Ok(traj)
    }
}

/// Gradients returned by [`backprop_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveGradients {
    pub theta: Array2<f64>,
    pub y0: Vec<f64>,
    pub inputs: Array2<f64>,
}

/// Integrates `model` from `y0` for `steps` steps of size `dt` with RK4.
pub fn solve(
    model: &SparseModel,
    y0: &[f64],
    inputs: ArrayView2<'_, f64>,
    dt: f64,
    steps: usize,
) -> Result<(Array2<f64>, SolveTape)> {
    solve_with(Scheme::Rk4, model, y0, inputs, dt, steps)
}

pub fn solve_with(
    scheme: Scheme,
    model: &SparseModel,
    y0: &[f64],
    inputs: ArrayView2<'_, f64>,
    dt: f64,
    steps: usize,
) -> Result<(Array2<f64>, SolveTape)> {
    let n = model.n();
    let m = model.m();
    if y0.len() != n {
        return Err(Error::contract(format!("initial state has length {}, model has n={n}", y0.len())));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::contract(format!("step size must be positive, got {dt}")));
    }
    if m > 0 && (inputs.ncols() != m || inputs.nrows() < steps + 1) {
        return Err(Error::contract(format!(
            "input matrix is {}x{}, need at least {}x{m}",
            inputs.nrows(),
            inputs.ncols(),
            steps + 1
        )));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { step: 0 });
    }

    let lib = model.library();
    let stages = scheme.stages();
    let mut features = vec![0.0; lib.len()];
    let mut traj = Array2::zeros((steps + 1, n));
    traj.row_mut(0).assign(&ndarray::ArrayView1::from(y0));
    let mut records = Vec::with_capacity(steps);
    let mut y = y0.to_vec();

    for t in 0..steps {
        let u: Vec<f64> = if m > 0 { inputs.row(t).to_vec() } else { Vec::new() };
        let mut stage_states: Vec<Vec<f64>> = Vec::with_capacity(stages);
        let mut stage_derivs: Vec<Vec<f64>> = Vec::with_capacity(stages);
        for i in 0..stages {
            let mut s = y.clone();
            for (j, k) in stage_derivs.iter().enumerate() {
                let a = scheme.a(i, j);
                if a != 0.0 {
                    for (si, ki) in s.iter_mut().zip(k) {
                        *si += dt * a * ki;
                    }
                }
            }
            lib.evaluate_into(&s, &u, &mut features);
            let k = model.apply(&features);
            if !within_bound(&s) || !within_bound(&k) {
                return Err(Error::Diverged { step: t + 1 });
            }
            stage_states.push(s);
            stage_derivs.push(k);
        }
        let mut next = y.clone();
        for (i, k) in stage_derivs.iter().enumerate() {
            let b = scheme.b(i);
            if b != 0.0 {
                for (ni, ki) in next.iter_mut().zip(k) {
                    *ni += dt * b * ki;
                }
            }
        }
        if !within_bound(&next) {
            return Err(Error::Diverged { step: t + 1 });
        }
        traj.row_mut(t + 1).assign(&ndarray::ArrayView1::from(&next[..]));
        records.push(StepRecord { state: std::mem::replace(&mut y, next), input: u, stage_states, stage_derivs });
    }

    let tape = SolveTape { scheme, dt, records, input_rows: inputs.nrows(), final_state: y };
    Ok((traj, tape))
}

fn within_bound(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite() && x.abs() <= DIVERGENCE_BOUND)
}

/// Reverse pass through a recorded solve. `dl_dy` holds the loss gradient
/// with respect to every row of the returned trajectory.
pub fn backprop_solve(tape: &SolveTape, model: &SparseModel, dl_dy: ArrayView2<'_, f64>) -> Result<SolveGradients> {
    let n = model.n();
    let m = model.m();
    let lib = model.library();
    let steps = tape.steps();
    if dl_dy.dim() != (steps + 1, n) {
        return Err(Error::contract(format!(
            "upstream gradient is {:?}, expected ({}, {n})",
            dl_dy.dim(),
            steps + 1
        )));
    }
    if tape.final_state.len() != n || tape.records.iter().any(|r| r.input.len() != m) {
        return Err(Error::contract("tape dimensions do not match the model"));
    }

    let scheme = tape.scheme;
    let stages = scheme.stages();
    let dt = tape.dt;
    let theta = model.theta();
    let mut g_theta = Array2::zeros(theta.dim());
    let mut g_inputs = Array2::zeros((tape.input_rows, m));
    let mut features = vec![0.0; lib.len()];
    let mut w = vec![0.0; lib.len()];
    let mut gs = vec![0.0; n];
    let mut gu = vec![0.0; m];

    let mut adj: Vec<f64> = dl_dy.row(steps).to_vec();
    for (t, rec) in tape.records.iter().enumerate().rev() {
        let mut gk: Vec<Vec<f64>> = (0..stages).map(|i| adj.iter().map(|a| dt * scheme.b(i) * a).collect()).collect();
        let mut gy = adj.clone();
        for i in (0..stages).rev() {
            let s = &rec.stage_states[i];
            let g = &gk[i];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            lib.evaluate_into(s, &rec.input, &mut features);
            for r in 0..n {
                if g[r] != 0.0 {
                    for (c, f) in features.iter().enumerate() {
                        g_theta[(r, c)] += g[r] * f;
                    }
                }
            }
            // w = θᵀ g
            for (c, wc) in w.iter_mut().enumerate() {
                *wc = (0..n).map(|r| theta[(r, c)] * g[r]).sum();
            }
            lib.vjp(s, &rec.input, &w, &mut gs, &mut gu);
            for (j, v) in gu.iter().enumerate() {
                g_inputs[(t, j)] += v;
            }
            for (a, v) in gy.iter_mut().zip(&gs) {
                *a += v;
            }
            for j in 0..i {
                let a = scheme.a(i, j);
                if a != 0.0 {
                    for (gkj, v) in gk[j].iter_mut().zip(&gs) {
                        *gkj += dt * a * v;
                    }
                }
            }
        }
        for (a, (g, d)) in adj.iter_mut().zip(gy.iter().zip(dl_dy.row(t))) {
            *a = g + d;
        }
    }

    Ok(SolveGradients { theta: g_theta, y0: adj, inputs: g_inputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::TermLibrary;
    use ndarray::array;

    fn exp_model(rate: f64) -> SparseModel {
        let lib = TermLibrary::build(1, 0, 1).unwrap();
        SparseModel::new(lib, array![[0.0, rate]]).unwrap()
    }

    fn no_inputs(rows: usize) -> Array2<f64> {
        Array2::zeros((rows, 0))
    }

    #[test]
    fn zero_model_is_constant() {
        let lib = TermLibrary::build(2, 0, 2).unwrap();
        let model = SparseModel::zeros(lib);
        let (traj, tape) = solve(&model, &[1.0, 2.0], no_inputs(6).view(), 0.1, 5).unwrap();
        for row in traj.rows() {
            assert_eq!(row.to_vec(), vec![1.0, 2.0]);
        }
        assert!(tape.records.iter().flat_map(|r| r.stage_derivs.iter().flatten()).all(|&v| v == 0.0));
    }

    #[test]
    fn exponential_growth() {
        let (traj, _) = solve(&exp_model(1.0), &[1.0], no_inputs(11).view(), 0.1, 10).unwrap();
        assert!((traj[(10, 0)] - std::f64::consts::E).abs() < 1e-4);
    }

    #[test]
    fn tape_replays_bit_exactly() {
        let (traj, tape) = solve(&exp_model(-0.7), &[2.0], no_inputs(21).view(), 0.05, 20).unwrap();
        assert_eq!(tape.steps(), 20);
        assert_eq!(tape.states(), traj);
        assert_eq!(tape.replay(&exp_model(-0.7)).unwrap(), traj);
    }

    #[test]
    fn divergence_reports_step() {
        let err = solve(&exp_model(50.0), &[1.0], no_inputs(101).view(), 0.1, 100).unwrap_err();
        match err {
            Error::Diverged { step } => assert!(step > 1 && step <= 100),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn input_rows_checked() {
        let lib = TermLibrary::build(1, 1, 1).unwrap();
        let model = SparseModel::zeros(lib);
        let u = Array2::zeros((3, 1));
        assert!(matches!(solve(&model, &[0.0], u.view(), 0.1, 5), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let model = exp_model(0.3);
        let (_, tape) = solve(&model, &[1.0], no_inputs(6).view(), 0.1, 5).unwrap();
        let g = backprop_solve(&tape, &model, Array2::zeros((6, 1)).view()).unwrap();
        assert!(g.theta.iter().all(|&v| v == 0.0));
        assert_eq!(g.y0, vec![0.0]);
    }

    #[test]
    fn identity_flow_passes_gradient_through() {
        let lib = TermLibrary::build(2, 0, 1).unwrap();
        let model = SparseModel::zeros(lib);
        let (_, tape) = solve(&model, &[0.3, -1.0], no_inputs(8).view(), 0.1, 7).unwrap();
        let mut up = Array2::zeros((8, 2));
        up[(7, 0)] = 2.5;
        up[(7, 1)] = -4.0;
        let g = backprop_solve(&tape, &model, up.view()).unwrap();
        assert_eq!(g.y0, vec![2.5, -4.0]);
    }

    #[test]
    fn scalar_rate_gradient_matches_finite_difference() {
        let (dt, steps, rate) = (0.1, 10, 0.8);
        let final_state = |r: f64| {
            let (traj, _) = solve(&exp_model(r), &[1.0], no_inputs(steps + 1).view(), dt, steps).unwrap();
            traj[(steps, 0)]
        };
        let model = exp_model(rate);
        let (_, tape) = solve(&model, &[1.0], no_inputs(steps + 1).view(), dt, steps).unwrap();
        let mut up = Array2::zeros((steps + 1, 1));
        up[(steps, 0)] = 1.0;
        let g = backprop_solve(&tape, &model, up.view()).unwrap();
        let h = 1e-6;
        let fd = (final_state(rate + h) - final_state(rate - h)) / (2.0 * h);
        assert!((g.theta[(0, 1)] - fd).abs() / fd.abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let model = exp_model(0.3);
        let (_, tape) = solve(&model, &[1.0], no_inputs(6).view(), 0.1, 5).unwrap();
        assert!(backprop_solve(&tape, &model, Array2::zeros((5, 1)).view()).is_err());
    }
}
