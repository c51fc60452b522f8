//! Benchmark systems, ground-truth simulation, measurement noise and the
//! finite-difference identifiability diagnostic.

mod system;
mod trajectory;

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use system::{builtin_systems, DynamicalSystem, SystemRegistry};
pub use trajectory::Trajectory;

use crate::error::{Error, Result};
use crate::library::SparseModel;
use crate::solver;

/// Samples `signal` at `t = i·dt` for `rows` rows.
pub fn sample_inputs(signal: &dyn Fn(f64) -> Vec<f64>, m: usize, dt: f64, rows: usize) -> Result<Array2<f64>> {
    let mut u = Array2::zeros((rows, m));
    if m == 0 {
        return Ok(u);
    }
    for i in 0..rows {
        let v = signal(i as f64 * dt);
        if v.len() != m {
            return Err(Error::contract(format!("input signal returned {} values, expected {m}", v.len())));
        }
        for (j, x) in v.into_iter().enumerate() {
            u[(i, j)] = x;
        }
    }
    Ok(u)
}

/// Zero input for systems without inputs.
pub fn no_input(_t: f64) -> Vec<f64> {
    Vec::new()
}

/// Ground-truth trajectory with `steps + 1` rows, using the same RK4
/// integrator as the training loss.
pub fn simulate(
    system: &DynamicalSystem,
    y0: &[f64],
    input_signal: &dyn Fn(f64) -> Vec<f64>,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    simulate_model(system.model(), y0, input_signal, dt, steps)
}

pub fn simulate_model(
    model: &SparseModel,
    y0: &[f64],
    input_signal: &dyn Fn(f64) -> Vec<f64>,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::contract("simulation needs at least one step"));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::contract(format!("step size must be positive, got {dt}")));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("initial state must be finite"));
    }
    let inputs = sample_inputs(input_signal, model.m(), dt, steps + 1)?;
    let (states, _) = solver::solve(model, y0, inputs.view(), dt, steps)?;
    Trajectory::uniform(0.0, dt, states, inputs)
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation `sigma` to
/// every state entry. Deterministic for a given seed.
pub fn add_noise(traj: &Trajectory, sigma: f64, seed: u64) -> Result<Trajectory> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::contract(format!("noise level must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(traj.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = traj.states().clone();
    for v in states.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    traj.with_states(states)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    /// `(row, column)` of each active coefficient, in support order.
    pub coefficients: Vec<(usize, usize)>,
    /// Trajectory sensitivity norm per active coefficient.
    pub sensitivity: Vec<f64>,
    pub horizon: f64,
    /// Indices into `coefficients` whose sensitivity is below tolerance or
    /// could not be measured.
    pub flagged: BTreeSet<usize>,
    /// Subset of `flagged` whose perturbed trajectory diverged.
    pub indeterminate: BTreeSet<usize>,
}

/// Number of integration steps used across the horizon.
pub const IDENTIFIABILITY_STEPS: usize = 1000;

/// Central finite-difference sensitivity of the whole trajectory with respect
/// to each active coefficient. The norm is the time-weighted L2 norm
/// `sqrt(dt · Σ_t |∂y_t/∂θ_i|²)`.
pub fn identifiability_check(
    system: &DynamicalSystem,
    y0: &[f64],
    input_signal: &dyn Fn(f64) -> Vec<f64>,
    horizon: f64,
    tol: f64,
) -> Result<IdentifiabilityReport> {
    if !(horizon > 0.0) || !(tol >= 0.0) {
        return Err(Error::contract("horizon must be positive and tolerance non-negative"));
    }
    let steps = IDENTIFIABILITY_STEPS;
    let dt = horizon / steps as f64;
    let model = system.model();
    // the nominal trajectory must exist
    simulate_model(model, y0, input_signal, dt, steps)?;

    let coefficients: Vec<(usize, usize)> = model.support().iter().copied().collect();
    let mut sensitivity = Vec::with_capacity(coefficients.len());
    let mut flagged = BTreeSet::new();
    let mut indeterminate = BTreeSet::new();
    for (idx, &(r, c)) in coefficients.iter().enumerate() {
        let theta = model.theta()[(r, c)];
        let h = 1e-4 * theta.abs().max(1.0);
        let plus = simulate_model(&model.with_coefficient(r, c, theta + h), y0, input_signal, dt, steps);
        let minus = simulate_model(&model.with_coefficient(r, c, theta - h), y0, input_signal, dt, steps);
        match (plus, minus) {
            (Ok(p), Ok(m)) => {
                let sq: f64 = p
                    .states()
                    .iter()
                    .zip(m.states().iter())
                    .map(|(a, b)| ((a - b) / (2.0 * h)).powi(2))
                    .sum();
                let norm = (dt * sq).sqrt();
                if norm < tol {
                    flagged.insert(idx);
                }
                sensitivity.push(norm);
            }
            (Err(Error::Diverged { .. }), _) | (_, Err(Error::Diverged { .. })) => {
                sensitivity.push(0.0);
                flagged.insert(idx);
                indeterminate.insert(idx);
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    Ok(IdentifiabilityReport { coefficients, sensitivity, horizon, flagged, indeterminate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::TermLibrary;
    use ndarray::array;

    fn scalar(rate: f64) -> DynamicalSystem {
        let lib = TermLibrary::build(1, 0, 1).unwrap();
        DynamicalSystem::new("exp", "", SparseModel::new(lib, array![[0.0, rate]]).unwrap())
    }

    #[test]
    fn zero_dynamics_hold_state() {
        let lib = TermLibrary::build(2, 0, 2).unwrap();
        let sys = DynamicalSystem::new("zero", "", SparseModel::zeros(lib));
        let traj = simulate(&sys, &[1.0, 2.0], &no_input, 0.1, 5).unwrap();
        assert_eq!(traj.len(), 6);
        for row in traj.states().rows() {
            assert_eq!(row.to_vec(), vec![1.0, 2.0]);
        }
    }

    #[test]
    fn exponential_matches_closed_form() {
        let traj = simulate(&scalar(1.0), &[1.0], &no_input, 0.1, 10).unwrap();
        assert_eq!(traj.states()[(0, 0)], 1.0);
        assert!((traj.states()[(10, 0)] - 2.718282).abs() < 1e-4);
    }

    #[test]
    fn divergence_error() {
        assert!(matches!(simulate(&scalar(30.0), &[1.0], &no_input, 0.1, 200), Err(Error::Diverged { .. })));
    }

    #[test]
    fn forced_system_uses_signal() {
        let text = "name = forced\nn = 1\nm = 1\nM = 1\n0 0 1 1.0\n";
        let sys = DynamicalSystem::from_config_str(text).unwrap();
        // dx/dt = u with u = 2 → x(t) = 2t
        let traj = simulate(&sys, &[0.0], &|_t| vec![2.0], 0.1, 10).unwrap();
        assert!((traj.states()[(10, 0)] - 2.0).abs() < 1e-12);
        assert_eq!(traj.m(), 1);
    }

    #[test]
    fn noise_contract() {
        let traj = simulate(&scalar(-0.5), &[1.0], &no_input, 0.1, 20).unwrap();
        assert_eq!(add_noise(&traj, 0.0, 7).unwrap(), traj);
        let a = add_noise(&traj, 0.2, 7).unwrap();
        let b = add_noise(&traj, 0.2, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, traj);
        assert_eq!(a.times(), traj.times());
        assert!(add_noise(&traj, -1.0, 7).is_err());
    }

    #[test]
    fn scalar_coefficient_is_identifiable() {
        let rep = identifiability_check(&scalar(1.0), &[1.0], &no_input, 1.0, 1e-6).unwrap();
        assert_eq!(rep.sensitivity.len(), 1);
        assert!(rep.sensitivity[0] > 0.0);
        assert!(rep.flagged.is_empty());
        let none = identifiability_check(&scalar(1.0), &[1.0], &no_input, 1.0, 0.0).unwrap();
        assert!(none.flagged.is_empty());
    }
}
