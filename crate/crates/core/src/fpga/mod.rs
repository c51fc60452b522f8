//! Analytical latency and resource model of the recovery kernel on an FPGA:
//! loop-nest graph, per-strategy schedules with a hazard-aware initiation
//! interval, and calibration against measured design points.

mod calibrate;
mod graph;
mod schedule;

use serde::{Deserialize, Serialize};

pub use calibrate::{
    calibrate, read_rows_csv, reference_strategies, reference_sweep, Affine, Calibration, CalibrationParams, MeasuredRow, RowResidual,
    StrategyRow, TimeAnchor, BRAM_AFFINE_FROM, REFERENCE_STRATEGY_D,
};
pub use graph::{build_kernel_graph, build_kernel_graph_with, GraphOptions, KernelGraph, LoopNest, OpCounts, Phase};
pub use schedule::{effective_ii, nest_cycles, peak_parallel_macs, schedule_cycles, OptimizationConfig, Strategy, UNPARTITIONED_PORTS};

use crate::error::Result;

/// LUT capacity of the target device.
pub const DEVICE_LUTS: u64 = 252_000;
/// Flip-flop capacity of the target device.
pub const DEVICE_FFS: u64 = 504_000;
/// Printed with any infeasible estimate.
pub const FEASIBILITY_CAVEAT: &str = "synthesis reports tend to over-estimate utilization; a design flagged infeasible may still fit after place and route";

/// Estimated cost of one design point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub d: usize,
    pub strategy: Strategy,
    /// Effective initiation interval (1 when not pipelining).
    pub ii: u32,
    pub cycles: u64,
    pub lut: u64,
    pub dsp: u64,
    pub bram_kb: u64,
    pub time_s: f64,
    /// LUT estimate within [`DEVICE_LUTS`].
    pub feasible: bool,
}

/// Calibrated cycles: the fitted reference-design curve plus the scaled
/// structural difference between `opt` and the reference schedule.
pub fn estimate_cycles(params: &CalibrationParams, graph: &KernelGraph, opt: &OptimizationConfig) -> Result<u64> {
    let extra = schedule_cycles(graph, opt)? as f64 - schedule_cycles(graph, &params.reference)? as f64;
    let cycles = params.reference_cycles(graph.d as usize) + params.schedule_scale * extra;
    Ok(cycles.round().max(1.0) as u64)
}

/// `(LUT, DSP, BRAM KB)` for `opt`.
pub fn estimate_resources(params: &CalibrationParams, graph: &KernelGraph, opt: &OptimizationConfig) -> (u64, u64, u64) {
    let peak = peak_parallel_macs(graph, opt) as f64;
    let clamp = |v: f64| v.round().max(0.0) as u64;
    (clamp(params.lut.eval(peak)), clamp(params.dsp.eval(peak)), clamp(params.bram.eval(graph.d as f64)))
}

pub fn estimate(params: &CalibrationParams, d: usize, opt: &OptimizationConfig) -> Result<CostReport> {
    opt.validate()?;
    let graph = params.graph_for(d)?;
    let cycles = estimate_cycles(params, &graph, opt)?;
    let (lut, dsp, bram_kb) = estimate_resources(params, &graph, opt);
    let ii = match opt.strategy {
        Strategy::PipelineUnroll => graph.nests.iter().map(|n| effective_ii(n, opt)).collect::<Result<Vec<_>>>()?.into_iter().max().unwrap_or(opt.ii),
        _ => 1,
    };
    Ok(CostReport { d, strategy: opt.strategy, ii, cycles, lut, dsp, bram_kb, time_s: cycles as f64 * params.kappa, feasible: lut <= DEVICE_LUTS })
}

/// Time of the unoptimised and fully optimised designs at one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub d: usize,
    pub none_s: f64,
    pub optimized_s: f64,
    pub ratio: f64,
}

pub fn speedup_report(params: &CalibrationParams, dims: &[usize]) -> Result<Vec<SpeedupRow>> {
    dims.iter()
        .map(|&d| {
            let none = estimate(params, d, &OptimizationConfig::none())?;
            let opt = estimate(params, d, &OptimizationConfig::pipeline_unroll(1))?;
            Ok(SpeedupRow { d, none_s: none.time_s, optimized_s: opt.time_s, ratio: none.time_s / opt.time_s })
        })
        .collect()
}

/// Calibration on the bundled sweep, anchored to the unoptimised 11.84 s
/// run at `d = 150`.
pub fn default_calibration() -> Calibration {
    calibrate(&reference_sweep(), &TimeAnchor::UNOPTIMIZED_D150, &GraphOptions::default()).expect("bundled data calibrates")
}

/// Aligned text table of reports.
pub fn render_table(reports: &[CostReport]) -> String {
    let mut out = format!("{:>5}  {:<16}{:>3}  {:>10}  {:>10}  {:>7}  {:>8}  {:>10}  {}\n", "d", "strategy", "ii", "cycles", "lut", "dsp", "bram_kb", "time_s", "feasible");
    for r in reports {
        out.push_str(&format!(
            "{:>5}  {:<16}{:>3}  {:>10}  {:>10}  {:>7}  {:>8}  {:>10.4}  {}\n",
            r.d,
            r.strategy.as_str(),
            r.ii,
            r.cycles,
            r.lut,
            r.dsp,
            r.bram_kb,
            r.time_s,
            if r.feasible { "yes" } else { "no*" }
        ));
    }
    if reports.iter().any(|r| !r.feasible) {
        out.push_str(&format!("* LUT estimate exceeds {DEVICE_LUTS}; {FEASIBILITY_CAVEAT}\n"));
    }
    out
}
