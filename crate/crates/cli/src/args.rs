use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use modelrec::fpga::{GraphOptions, OptimizationConfig, Strategy, TimeAnchor};
use modelrec::solver::Scheme;
use serde::Serialize;

use crate::{CliError, CliResult};

/// Sparse model recovery from trajectories, and FPGA cost estimates for the
/// recovery kernel.
///
/// Exit codes: 0 success, 2 usage or contract error, 3 data or calibration
/// error, 4 numerical divergence.
#[derive(Debug, Parser)]
#[command(name = "modelrec", version, about, long_about)]
pub struct Cli {
    /// Seed for every random choice the command makes (noise, initialization,
    /// batch order). Recorded in the run manifest.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a system and write its trajectory as CSV.
    Generate(GenerateArgs),
    /// Train the recovery network on a trajectory and write a run directory.
    Recover(RecoverArgs),
    /// Score a checkpoint's recovered model against a trajectory.
    Eval(EvalArgs),
    /// Cycle, resource and time estimates for the FPGA kernel.
    Fpga(FpgaArgs),
}

/// Input signal fed to systems with external inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSignal {
    /// All inputs held at zero.
    Zero,
    /// Input `j` (from 1) is `sin(j·t)`.
    Sine,
    /// Every input is 1 from `t = 1` on.
    Step,
}

impl InputSignal {
    pub fn sample(self, t: f64, m: usize) -> Vec<f64> {
        (1..=m)
            .map(|j| match self {
                InputSignal::Zero => 0.0,
                InputSignal::Sine => (j as f64 * t).sin(),
                InputSignal::Step => f64::from(u8::from(t >= 1.0)),
            })
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Built-in system name (lotka_volterra, lorenz) or path to a system file.
    #[arg(long)]
    pub system: String,
    /// Initial state as comma-separated values; all ones when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Integration steps; the file gets `steps + 1` rows.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Standard deviation of additive Gaussian measurement noise.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = InputSignal::Sine)]
    pub input: InputSignal,
    /// Output CSV (`t,y1..yn,u1..um`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    /// Trajectory CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Training config (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ground-truth system for coefficient and support scores.
    #[arg(long)]
    pub system: Option<String>,
    /// Run directory for the config echo, loss history, checkpoint,
    /// equations, evaluation report and manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `recover`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Trajectory CSV to re-simulate against.
    #[arg(long)]
    pub data: PathBuf,
    /// Ground-truth system for coefficient and support scores.
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Rk4,
    Rk2,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Rk4 => Scheme::Rk4,
            SchemeArg::Rk2 => Scheme::Rk2,
        }
    }
}

#[derive(Debug, Args)]
pub struct FpgaArgs {
    #[command(subcommand)]
    pub command: FpgaCommand,
}

#[derive(Debug, Subcommand)]
pub enum FpgaCommand {
    /// Cost of one design point.
    Estimate {
        /// Model dimension `d` (the GRU width follows it).
        #[arg(long)]
        dim: usize,
        #[command(flatten)]
        opt: OptArgs,
        #[command(flatten)]
        common: CommonFpga,
    },
    /// Fit the cost model to measured rows and print residuals.
    Calibrate {
        #[command(flatten)]
        common: CommonFpga,
    },
    /// Costs over a range of dimensions.
    Sweep {
        /// `a..b` (inclusive, step 10), `a..b:step`, or a comma-separated list.
        #[arg(long, default_value = "20..150")]
        dims: String,
        #[command(flatten)]
        opt: OptArgs,
        /// Compare unoptimized against pipeline_unroll times instead.
        #[arg(long)]
        speedup: bool,
        #[command(flatten)]
        common: CommonFpga,
    },
}

impl FpgaCommand {
    pub(crate) fn common(&self) -> (Option<&Path>, &AnchorArgs, &GraphArgs, Option<&PathBuf>) {
        let c = match self {
            FpgaCommand::Estimate { common, .. } | FpgaCommand::Calibrate { common } | FpgaCommand::Sweep { common, .. } => common,
        };
        (c.rows.as_deref(), &c.anchor, &c.graph, c.json.as_ref())
    }
}

#[derive(Debug, Args)]
pub struct CommonFpga {
    /// Measured rows (`d,cycles,lut,dsp,bram_kb,fpga_s`); the bundled
    /// dimension sweep when omitted.
    #[arg(long)]
    pub rows: Option<PathBuf>,
    #[command(flatten)]
    pub anchor: AnchorArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptArgs {
    #[arg(long, default_value = "pipeline_unroll")]
    pub strategy: String,
    /// Requested initiation interval (1 to 3) when pipelining.
    #[arg(long, default_value_t = 1)]
    pub ii: u32,
    /// Inner-loop unroll factor; complete unrolling for pipeline_unroll and
    /// 2 for unroll when omitted.
    #[arg(long)]
    pub unroll: Option<u64>,
    /// Leave arrays unpartitioned (two ports per array).
    #[arg(long)]
    pub no_partition: bool,
    /// Fail instead of raising an initiation interval below a carried
    /// dependency distance.
    #[arg(long)]
    pub check_hazards: bool,
}

impl OptArgs {
    pub fn config(&self) -> CliResult<OptimizationConfig> {
        let strategy: Strategy = self.strategy.parse().map_err(|e: modelrec::Error| CliError::usage(e.to_string()))?;
        let mut cfg = OptimizationConfig::for_strategy(strategy);
        if strategy == Strategy::PipelineUnroll {
            cfg.ii = self.ii;
        }
        if self.unroll.is_some() {
            cfg.unroll = self.unroll;
        }
        if self.no_partition {
            cfg.partition = false;
        }
        cfg.check_hazards = self.check_hazards;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct AnchorArgs {
    /// Dimension of the design point with known time.
    #[arg(long, default_value_t = TimeAnchor::UNOPTIMIZED_D150.d)]
    pub anchor_dim: usize,
    #[arg(long, default_value = "none")]
    pub anchor_strategy: String,
    /// Known time of the anchor design in seconds.
    #[arg(long, default_value_t = TimeAnchor::UNOPTIMIZED_D150.seconds)]
    pub anchor_seconds: f64,
}

impl AnchorArgs {
    pub fn anchor(&self) -> CliResult<TimeAnchor> {
        let strategy = self.anchor_strategy.parse().map_err(|e: modelrec::Error| CliError::usage(e.to_string()))?;
        if !(self.anchor_seconds > 0.0) || !self.anchor_seconds.is_finite() {
            return Err(CliError::usage("--anchor-seconds must be positive"));
        }
        Ok(TimeAnchor { d: self.anchor_dim, strategy, seconds: self.anchor_seconds })
    }
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Carried dependency distance of the loss accumulation loop.
    #[arg(long, default_value_t = GraphOptions::default().reduction_distance)]
    pub reduction_distance: u32,
    /// Time steps per window in the modelled kernel.
    #[arg(long, default_value_t = GraphOptions::default().steps)]
    pub steps: u64,
}

impl GraphArgs {
    pub fn options(&self) -> GraphOptions {
        GraphOptions { reduction_distance: self.reduction_distance, steps: self.steps, ..GraphOptions::default() }
    }
}

/// Parses `a..b` (step 10), `a..b:s`, or `a,b,c`.
pub fn parse_dims(text: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::usage(format!("--dims `{text}` is not `a..b`, `a..b:step` or a comma-separated list"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let dims = if let Some((lo, rest)) = text.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (num(hi)?, num(step)?),
            None => (num(rest)?, 10),
        };
        let lo = num(lo)?;
        if step == 0 || hi < lo {
            return Err(bad());
        }
        (lo..=hi).step_by(step).collect()
    } else {
        text.split(',').map(num).collect::<CliResult<Vec<_>>>()?
    };
    if dims.is_empty() || dims.contains(&0) {
        return Err(bad());
    }
    Ok(dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_syntax() {
        assert_eq!(parse_dims("20..50").unwrap(), vec![20, 30, 40, 50]);
        assert_eq!(parse_dims("20..30:5").unwrap(), vec![20, 25, 30]);
        assert_eq!(parse_dims("30, 150").unwrap(), vec![30, 150]);
        for bad in ["", "50..20", "0..10", "a..b", "10..20:0"] {
            assert!(parse_dims(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn input_signals() {
        assert_eq!(InputSignal::Zero.sample(3.0, 2), vec![0.0, 0.0]);
        assert_eq!(InputSignal::Step.sample(0.5, 1), vec![0.0]);
        assert_eq!(InputSignal::Sine.sample(0.0, 2), vec![0.0, 0.0]);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
