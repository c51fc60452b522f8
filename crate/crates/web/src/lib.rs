//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers and strings and returns a JSON string, so
//! the page needs nothing beyond `JSON.parse`.

use modelrec::dynamics::{add_noise, builtin_systems, no_input, simulate};
use modelrec::fpga::{default_calibration, estimate, speedup_report, CostReport, OptimizationConfig, SpeedupRow, Strategy};
use modelrec::training::{evaluate, train, CoefficientPooling, TrainConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct SimulationOut {
    system: String,
    equations: String,
    times: Vec<f64>,
    /// One array per state variable.
    states: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct SweepOut {
    reports: Vec<CostReport>,
    speedup: Vec<SpeedupRow>,
}

#[derive(Serialize)]
struct RecoveryOut {
    equations: String,
    truth: String,
    loss: Vec<f64>,
    best_epoch: usize,
    reconstruction_mse: Option<f64>,
    support_recall: Option<f64>,
    support_precision: Option<f64>,
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serialises")
}

/// Comma-separated list of built-in systems.
pub fn system_names() -> String {
    builtin_systems().names().collect::<Vec<_>>().join(",")
}

pub fn simulate_json(system: &str, y0: &[f64], dt: f64, steps: usize, sigma: f64, seed: u64) -> Result<String, String> {
    let reg = builtin_systems();
    let sys = reg.get(system).map_err(|e| e.to_string())?;
    if y0.len() != sys.n() {
        return Err(format!("{system} needs {} initial values, got {}", sys.n(), y0.len()));
    }
    let clean = simulate(sys, y0, &no_input, dt, steps).map_err(|e| e.to_string())?;
    let traj = add_noise(&clean, sigma, seed).map_err(|e| e.to_string())?;
    Ok(json(&SimulationOut {
        system: sys.name.clone(),
        equations: sys.model().equations(),
        times: traj.times().to_vec(),
        states: traj.states().columns().into_iter().map(|c| c.to_vec()).collect(),
    }))
}

pub fn fpga_sweep_json(from: usize, to: usize, step: usize, strategy: &str, ii: u32) -> Result<String, String> {
    if step == 0 || from == 0 || to < from {
        return Err("dimension range needs 0 < from <= to and a positive step".into());
    }
    let strategy: Strategy = strategy.parse().map_err(|e: modelrec::Error| e.to_string())?;
    let mut opt = OptimizationConfig::for_strategy(strategy);
    if strategy == Strategy::PipelineUnroll {
        opt.ii = ii;
    }
    let cal = default_calibration();
    let dims: Vec<usize> = (from..=to).step_by(step).collect();
    let reports = dims.iter().map(|&d| estimate(&cal.params, d, &opt)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    let speedup = speedup_report(&cal.params, &dims).map_err(|e| e.to_string())?;
    Ok(json(&SweepOut { reports, speedup }))
}

/// Simulates `system` and trains a recovery network on it with the shipped
/// Lotka-Volterra schedule compressed to `epochs`.
pub fn recover_json(system: &str, y0: &[f64], steps: usize, epochs: usize, support_size: usize, seed: u64) -> Result<String, String> {
    let reg = builtin_systems();
    let sys = reg.get(system).map_err(|e| e.to_string())?;
    if y0.len() != sys.n() {
        return Err(format!("{system} needs {} initial values, got {}", sys.n(), y0.len()));
    }
    let traj = simulate(sys, y0, &no_input, 0.01, steps).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs,
        support_size,
        order: sys.library().order(),
        learning_rate: 1e-3,
        final_learning_rate: Some(1e-5),
        warmup_epochs: epochs * 2 / 15,
        anneal_epochs: epochs / 3,
        zero_output_layer: true,
        coefficient_pooling: CoefficientPooling::Batch,
        seed,
        ..TrainConfig::default()
    };
    let rec = train(&config, &traj).map_err(|e| e.to_string())?;
    let report = evaluate(&rec, &traj, Some(sys)).map_err(|e| e.to_string())?;
    Ok(json(&RecoveryOut {
        equations: rec.model.equations(),
        truth: sys.model().equations(),
        loss: rec.history.clone(),
        best_epoch: rec.best_epoch,
        reconstruction_mse: report.reconstruction_mse.is_finite().then_some(report.reconstruction_mse),
        support_recall: report.support_recall,
        support_precision: report.support_precision,
    }))
}

#[wasm_bindgen(js_name = systemNames)]
pub fn system_names_js() -> String {
    system_names()
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(system: &str, y0: Vec<f64>, dt: f64, steps: usize, sigma: f64, seed: u32) -> Result<String, JsError> {
    simulate_json(system, &y0, dt, steps, sigma, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = fpgaSweep)]
pub fn fpga_sweep_js(from: usize, to: usize, step: usize, strategy: &str, ii: u32) -> Result<String, JsError> {
    fpga_sweep_json(from, to, step, strategy, ii).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = recover)]
pub fn recover_js(system: &str, y0: Vec<f64>, steps: usize, epochs: usize, support_size: usize, seed: u32) -> Result<String, JsError> {
    recover_json(system, &y0, steps, epochs, support_size, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn simulation_has_one_column_per_state() {
        let out: Value = serde_json::from_str(&simulate_json("lorenz", &[1.0, 1.0, 1.0], 0.01, 50, 0.0, 0).unwrap()).unwrap();
        assert_eq!(out["times"].as_array().unwrap().len(), 51);
        assert_eq!(out["states"].as_array().unwrap().len(), 3);
        assert!(simulate_json("lorenz", &[1.0], 0.01, 50, 0.0, 0).is_err());
        assert!(simulate_json("nope", &[1.0], 0.01, 50, 0.0, 0).is_err());
    }

    #[test]
    fn sweep_reports_every_dimension() {
        let out: Value = serde_json::from_str(&fpga_sweep_json(20, 150, 10, "pipeline_unroll", 1).unwrap()).unwrap();
        assert_eq!(out["reports"].as_array().unwrap().len(), 14);
        assert_eq!(out["speedup"].as_array().unwrap().len(), 14);
        assert!(fpga_sweep_json(20, 10, 10, "none", 1).is_err());
        assert!(fpga_sweep_json(20, 30, 10, "fast", 1).is_err());
    }

    #[test]
    fn short_recovery_runs() {
        let out: Value = serde_json::from_str(&recover_json("lotka_volterra", &[1.0, 1.0], 200, 3, 4, 0).unwrap()).unwrap();
        assert_eq!(out["loss"].as_array().unwrap().len(), 3);
        assert!(out["equations"].as_str().unwrap().contains("dx1/dt"));
    }
}
