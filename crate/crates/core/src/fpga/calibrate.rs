use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::graph::{build_kernel_graph_with, GraphOptions, KernelGraph};
use super::schedule::{peak_parallel_macs, schedule_cycles, OptimizationConfig, Strategy};
use crate::error::{Error, Result};

/// Rows with at least this dimension share the affine BRAM law.
pub const BRAM_AFFINE_FROM: usize = 40;

const SWEEP_CSV: &str = include_str!("../../data/f8_dimension_sweep.csv");
const STRATEGY_CSV: &str = include_str!("../../data/d30_strategies.csv");

/// One measured design point: `d,cycles,lut,dsp,bram_kb,fpga_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRow {
    pub d: usize,
    pub cycles: f64,
    pub lut: f64,
    pub dsp: f64,
    pub bram_kb: f64,
    pub fpga_s: f64,
}

/// Measured cost of one strategy at a fixed dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: Strategy,
    pub cycles: f64,
    pub lut: f64,
    pub dsp: f64,
    pub bram_kb: f64,
    pub fpga_s: f64,
}

/// Published sweep over model dimension with the fully optimised design.
pub fn reference_sweep() -> Vec<MeasuredRow> {
    read_rows_csv(SWEEP_CSV.as_bytes()).expect("bundled sweep parses")
}

/// Published strategy comparison at `d = 30`.
pub fn reference_strategies() -> Vec<StrategyRow> {
    csv::Reader::from_reader(STRATEGY_CSV.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .expect("bundled strategy table parses")
}

pub const REFERENCE_STRATEGY_D: usize = 30;

pub fn read_rows_csv<R: Read>(input: R) -> Result<Vec<MeasuredRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| Error::parse(1, None, e.to_string()))?.clone();
    let expected = ["d", "cycles", "lut", "dsp", "bram_kb", "fpga_s"];
    if headers.iter().ne(expected) {
        return Err(Error::parse(1, None, format!("expected header `{}`", expected.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(line, None, e.to_string()))?;
        if rec.len() != expected.len() {
            return Err(Error::parse(line, None, format!("expected {} fields, found {}", expected.len(), rec.len())));
        }
        let num = |j: usize| -> Result<f64> {
            rec[j].parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0).ok_or_else(|| {
                Error::parse(line, Some(expected[j]), format!("`{}` is not a non-negative number", &rec[j]))
            })
        };
        let d = rec[0].parse::<usize>().ok().filter(|&d| d > 0).ok_or_else(|| Error::parse(line, Some("d"), "dimension must be a positive integer"))?;
        let row = MeasuredRow { d, cycles: num(1)?, lut: num(2)?, dsp: num(3)?, bram_kb: num(4)?, fpga_s: num(5)? };
        if row.cycles <= 0.0 {
            return Err(Error::parse(line, Some("cycles"), "cycles must be positive"));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// `intercept + slope · x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub intercept: f64,
    pub slope: f64,
}

impl Affine {
    pub fn eval(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Known total time of one design point, used to scale the structural
/// cycle difference between strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAnchor {
    pub d: usize,
    pub strategy: Strategy,
    pub seconds: f64,
}

impl TimeAnchor {
    /// The unoptimised design at `d = 150` took 11.84 s.
    pub const UNOPTIMIZED_D150: TimeAnchor = TimeAnchor { d: 150, strategy: Strategy::None, seconds: 11.84 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    /// Seconds per reported cycle.
    pub kappa: f64,
    /// Reference-design cycles as `[c0, c1, c2]` of `c0 + c1·d + c2·d²`.
    pub cycle_poly: [f64; 3],
    /// Reported cycles per structural cycle of difference from the
    /// reference schedule.
    pub schedule_scale: f64,
    pub dsp: Affine,
    pub lut: Affine,
    pub bram: Affine,
    /// Schedule the measured rows correspond to.
    pub reference: OptimizationConfig,
    pub graph: GraphOptions,
}

impl CalibrationParams {
    /// Graph with hidden size equal to the model dimension.
    pub fn graph_for(&self, d: usize) -> Result<KernelGraph> {
        build_kernel_graph_with(d, d, &self.graph)
    }

    pub fn reference_cycles(&self, d: usize) -> f64 {
        let [c0, c1, c2] = self.cycle_poly;
        let x = d as f64;
        c0 + c1 * x + c2 * x * x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowResidual {
    pub d: usize,
    /// Relative error `(model − measured) / measured`.
    pub cycles: f64,
    pub lut: f64,
    pub dsp: f64,
    /// Absolute error in KB; only meaningful for rows on the affine law.
    pub bram_kb: f64,
    /// Relative deviation of this row's seconds-per-cycle from `kappa`.
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: CalibrationParams,
    pub residuals: Vec<RowResidual>,
}

/// Least squares with a rank check; `None` when the columns are dependent.
fn least_squares(design: DMatrix<f64>, target: DVector<f64>) -> Option<DVector<f64>> {
    if design.nrows() < design.ncols() {
        return None;
    }
    let svd = design.svd(true, true);
    let max = svd.singular_values.max();
    if !(max > 0.0) || svd.singular_values.min() <= max * 1e-12 {
        return None;
    }
    svd.solve(&target, 0.0).ok()
}

fn fit_affine(xs: &[f64], ys: &[f64], what: &str) -> Result<Affine> {
    let design = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let sol = least_squares(design, DVector::from_column_slice(ys))
        .ok_or_else(|| Error::Calibration(format!("{what} fit is degenerate (need two distinct points)")))?;
    Ok(Affine { intercept: sol[0], slope: sol[1] })
}

/// Snaps values within `tol` of an integer onto it.
fn snap(v: f64, tol: f64) -> f64 {
    if (v - v.round()).abs() <= tol {
        v.round()
    } else {
        v
    }
}

/// Fits the cost model to measured rows of the reference design. The anchor
/// fixes how many reported cycles one structural cycle of schedule
/// difference costs.
pub fn calibrate(rows: &[MeasuredRow], anchor: &TimeAnchor, graph: &GraphOptions) -> Result<Calibration> {
    if rows.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: rows.len() });
    }
    let reference = OptimizationConfig::pipeline_unroll(1);
    let kappa = rows.iter().map(|r| r.fpga_s / r.cycles).sum::<f64>() / rows.len() as f64;
    if !(kappa > 0.0) {
        return Err(Error::Calibration("seconds per cycle must be positive".into()));
    }

    let ds: Vec<f64> = rows.iter().map(|r| r.d as f64).collect();
    let design = DMatrix::from_fn(rows.len(), 3, |i, j| ds[i].powi(j as i32));
    let cycles = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.cycles));
    let poly = least_squares(design, cycles)
        .ok_or_else(|| Error::Calibration("cycle fit is degenerate (need three distinct dimensions)".into()))?;
    let cycle_poly = [poly[0], poly[1], poly[2]];

    let graphs: Vec<KernelGraph> = rows.iter().map(|r| build_kernel_graph_with(r.d, r.d, graph)).collect::<Result<_>>()?;
    let peaks: Vec<f64> = graphs.iter().map(|g| peak_parallel_macs(g, &reference) as f64).collect();
    let dsp = fit_affine(&peaks, &rows.iter().map(|r| r.dsp).collect::<Vec<_>>(), "DSP")?;
    let lut = fit_affine(&peaks, &rows.iter().map(|r| r.lut).collect::<Vec<_>>(), "LUT")?;

    let (bx, by): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.d >= BRAM_AFFINE_FROM).map(|r| (r.d as f64, r.bram_kb)).unzip();
    let bram = fit_affine(&bx, &by, "BRAM")?;
    let bram = Affine { intercept: snap(bram.intercept, 1e-6), slope: snap(bram.slope, 1e-9) };

    let mut params = CalibrationParams { kappa, cycle_poly, schedule_scale: 0.0, dsp, lut, bram, reference, graph: *graph };
    let g = params.graph_for(anchor.d)?;
    let extra = schedule_cycles(&g, &OptimizationConfig::for_strategy(anchor.strategy))? as f64 - schedule_cycles(&g, &reference)? as f64;
    params.schedule_scale = (anchor.seconds / kappa - params.reference_cycles(anchor.d)) / extra;
    if !(params.schedule_scale > 0.0) || !params.schedule_scale.is_finite() {
        return Err(Error::Calibration(format!(
            "anchor {} s for `{}` at d={} is not slower than the fitted reference design",
            anchor.seconds, anchor.strategy, anchor.d
        )));
    }

    let residuals = rows
        .iter()
        .zip(&peaks)
        .map(|(r, &peak)| RowResidual {
            d: r.d,
            cycles: params.reference_cycles(r.d) / r.cycles - 1.0,
            lut: dsp_lut_rel(lut.eval(peak), r.lut),
            dsp: dsp_lut_rel(dsp.eval(peak), r.dsp),
            bram_kb: bram.eval(r.d as f64) - r.bram_kb,
            kappa: (r.fpga_s / r.cycles) / kappa - 1.0,
        })
        .collect();
    Ok(Calibration { params, residuals })
}

fn dsp_lut_rel(model: f64, measured: f64) -> f64 {
    if measured == 0.0 {
        model
    } else {
        model / measured - 1.0
    }
}
