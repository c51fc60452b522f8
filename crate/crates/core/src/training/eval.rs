use std::collections::BTreeMap;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::train::RecoveredModel;
use crate::dynamics::{DynamicalSystem, Trajectory};
use crate::error::{Error, Result};
use crate::library::SparseModel;
use crate::nn::{apply_shifts, ode_loss};
use crate::solver::{solve_with, Scheme};

/// Reconstruction quality of a recovered model. Coefficient fields are
/// `None` when no ground truth was supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean squared state error of a full-horizon re-simulation; infinite
    /// when the re-simulation diverged (written as `"inf"` in JSON).
    #[serde(with = "lenient_float")]
    pub reconstruction_mse: f64,
    /// Largest absolute coefficient difference over the union of supports.
    pub coeff_max_abs_err: Option<f64>,
    pub support_precision: Option<f64>,
    pub support_recall: Option<f64>,
    pub diverged: bool,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}

pub fn evaluate(recovered: &RecoveredModel, traj: &Trajectory, truth: Option<&DynamicalSystem>) -> Result<EvalReport> {
    evaluate_model(&recovered.model, &recovered.shifts, recovered.config.scheme, traj, truth)
}

/// Re-simulates `model` from the first state of `traj` across its whole
/// horizon, with `shifts` added to the measured inputs.
pub fn evaluate_model(
    model: &SparseModel,
    shifts: &[f64],
    scheme: Scheme,
    traj: &Trajectory,
    truth: Option<&DynamicalSystem>,
) -> Result<EvalReport> {
    if model.n() != traj.n() || model.m() != traj.m() || shifts.len() != traj.m() {
        return Err(Error::contract(format!(
            "model (n={}, m={}, {} shifts) does not match data (n={}, m={})",
            model.n(),
            model.m(),
            shifts.len(),
            traj.n(),
            traj.m()
        )));
    }
    if traj.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: traj.len() });
    }
    let inputs = apply_shifts(traj.inputs().view(), &Array1::from(shifts.to_vec()))?;
    let y0 = traj.states().row(0).to_vec();
    let (reconstruction_mse, diverged) = match solve_with(scheme, model, &y0, inputs.view(), traj.dt(), traj.len() - 1) {
        Ok((y_est, _)) => (ode_loss(traj.states().view(), y_est.view())?, false),
        Err(Error::Diverged { .. }) => (f64::INFINITY, true),
        Err(e) => return Err(e),
    };
    let mut report = EvalReport {
        reconstruction_mse,
        coeff_max_abs_err: None,
        support_precision: None,
        support_recall: None,
        diverged,
    };
    if let Some(truth) = truth {
        if truth.n() != model.n() || truth.m() != model.m() {
            return Err(Error::contract("ground truth dimensions differ from the model"));
        }
        let est = by_exponents(model);
        let tru = by_exponents(truth.model());
        let hits = est.keys().filter(|key| tru.contains_key(*key)).count() as f64;
        let err = est
            .keys()
            .chain(tru.keys())
            .map(|key| (est.get(key).copied().unwrap_or(0.0) - tru.get(key).copied().unwrap_or(0.0)).abs())
            .fold(0.0, f64::max);
        report.coeff_max_abs_err = Some(err);
        report.support_precision = Some(if est.is_empty() { 1.0 } else { hits / est.len() as f64 });
        report.support_recall = Some(if tru.is_empty() { 1.0 } else { hits / tru.len() as f64 });
    }
    Ok(report)
}

mod lenient_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Support entries keyed by (equation, exponent vector), so models over
/// libraries of different order compare term by term.
fn by_exponents(model: &SparseModel) -> BTreeMap<(usize, Vec<u32>), f64> {
    let terms = model.library().terms();
    model
        .support()
        .iter()
        .map(|&(row, col)| ((row, terms[col].exponents.clone()), model.theta()[(row, col)]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{builtin_systems, no_input, simulate};
    use crate::library::TermLibrary;

    fn lv() -> (DynamicalSystem, Trajectory) {
        let sys = builtin_systems().get("lotka_volterra").unwrap().clone();
        let traj = simulate(&sys, &[1.0, 0.5], &no_input, 0.01, 1000).unwrap();
        (sys, traj)
    }

    #[test]
    fn truth_reconstructs_exactly() {
        let (sys, traj) = lv();
        let r = evaluate_model(sys.model(), &[], Scheme::Rk4, &traj, Some(&sys)).unwrap();
        assert!(r.reconstruction_mse <= 1e-6);
        assert_eq!(r.coeff_max_abs_err, Some(0.0));
        assert_eq!((r.support_precision, r.support_recall), (Some(1.0), Some(1.0)));
        assert!(!r.diverged);
    }

    #[test]
    fn zero_model_holds_the_initial_state() {
        let (sys, traj) = lv();
        let zero = SparseModel::zeros(sys.library().clone());
        let r = evaluate_model(&zero, &[], Scheme::Rk4, &traj, None).unwrap();
        let y = traj.states();
        let expected = y.rows().into_iter().map(|row| (row[0] - y[(0, 0)]).powi(2) + (row[1] - y[(0, 1)]).powi(2)).sum::<f64>() / (2 * y.nrows()) as f64;
        assert!((r.reconstruction_mse - expected).abs() <= 1e-12 * expected);
        assert_eq!(r.coeff_max_abs_err, None);
    }

    #[test]
    fn coefficients_compare_across_library_orders() {
        let (sys, traj) = lv();
        let lib3 = TermLibrary::build(2, 0, 3).unwrap();
        let mut theta = ndarray::Array2::zeros((2, lib3.len()));
        for &(row, col) in sys.model().support() {
            let exps = &sys.library().terms()[col].exponents;
            theta[(row, lib3.index_of(exps).unwrap())] = sys.theta_true()[(row, col)];
        }
        theta[(0, 0)] = 0.25;
        theta[(0, lib3.index_of(&[0, 1]).unwrap())] += 0.1;
        let model = SparseModel::new(lib3, theta).unwrap();
        let r = evaluate_model(&model, &[], Scheme::Rk4, &traj, Some(&sys)).unwrap();
        assert!((r.coeff_max_abs_err.unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(r.support_precision, Some(4.0 / 6.0));
        assert_eq!(r.support_recall, Some(1.0));
    }

    #[test]
    fn blow_up_is_reported_not_raised() {
        let (sys, traj) = lv();
        let wild = sys.model().with_coefficient(0, 1, 50.0).with_coefficient(1, 2, 50.0);
        let r = evaluate_model(&wild, &[], Scheme::Rk4, &traj, None).unwrap();
        assert!(r.diverged);
        assert_eq!(r.reconstruction_mse, f64::INFINITY);
        let json = r.to_json();
        assert!(json.contains("\"reconstruction_mse\": \"inf\""));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
