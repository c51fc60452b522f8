use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::{KernelGraph, LoopNest};
use crate::error::{Error, Result};

/// Memory ports available to an unpartitioned array.
pub const UNPARTITIONED_PORTS: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    None,
    Unroll,
    PipelineUnroll,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::None, Strategy::Unroll, Strategy::PipelineUnroll];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Unroll => "unroll",
            Strategy::PipelineUnroll => "pipeline_unroll",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Strategy::None),
            "unroll" => Ok(Strategy::Unroll),
            "pipeline_unroll" | "pipeline+unroll" => Ok(Strategy::PipelineUnroll),
            other => Err(Error::contract(format!("unknown strategy `{other}` (none, unroll, pipeline_unroll)"))),
        }
    }
}

/// Loop transformation applied uniformly to every nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizationConfig {
    pub strategy: Strategy,
    /// Requested initiation interval; ignored unless pipelining.
    pub ii: u32,
    /// Innermost-loop unroll factor; `None` unrolls completely.
    pub unroll: Option<u64>,
    /// Complete array partitioning, lifting the two-port limit on unrolled
    /// accesses.
    pub partition: bool,
    /// Reject an II below a nest's carried dependency distance instead of
    /// raising it.
    pub check_hazards: bool,
}

impl OptimizationConfig {
    pub const DEFAULT_UNROLL: u64 = 2;

    pub fn none() -> Self {
        OptimizationConfig { strategy: Strategy::None, ii: 1, unroll: Some(1), partition: false, check_hazards: false }
    }

    pub fn unroll(factor: u64) -> Self {
        OptimizationConfig { strategy: Strategy::Unroll, ii: 1, unroll: Some(factor), partition: false, check_hazards: false }
    }

    /// Pipelined at `ii` with complete unrolling and partitioning.
    pub fn pipeline_unroll(ii: u32) -> Self {
        OptimizationConfig { strategy: Strategy::PipelineUnroll, ii, unroll: None, partition: true, check_hazards: false }
    }

    pub fn for_strategy(strategy: Strategy) -> Self {
        match strategy {
            Strategy::None => Self::none(),
            Strategy::Unroll => Self::unroll(Self::DEFAULT_UNROLL),
            Strategy::PipelineUnroll => Self::pipeline_unroll(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.ii) {
            return Err(Error::contract(format!("initiation interval {} outside 1..=3", self.ii)));
        }
        if self.unroll == Some(0) {
            return Err(Error::contract("unroll factor must be at least 1"));
        }
        if self.strategy == Strategy::PipelineUnroll && !self.partition {
            return Err(Error::contract("pipeline_unroll requires complete array partitioning"));
        }
        Ok(())
    }

    /// Inner iterations issued together for a loop of `inner` trips.
    pub fn lanes(&self, inner: u64) -> u64 {
        if self.strategy == Strategy::None {
            return 1;
        }
        let wanted = self.unroll.unwrap_or(inner).min(inner);
        if self.partition {
            wanted
        } else {
            wanted.min(UNPARTITIONED_PORTS)
        }
    }
}

/// Cycles of one entry into `nest`.
pub fn nest_cycles(nest: &LoopNest, opt: &OptimizationConfig) -> Result<u64> {
    opt.validate()?;
    let depth = nest.depth as u64;
    let issues = nest.outer() * nest.inner().div_ceil(opt.lanes(nest.inner()));
    Ok(match opt.strategy {
        Strategy::None | Strategy::Unroll => issues * depth,
        Strategy::PipelineUnroll => {
            let ii = effective_ii(nest, opt)? as u64;
            depth + (issues - 1) * ii
        }
    })
}

/// `max(requested II, carried distance)`, or an error when hazard checking
/// is on and the request is too small.
pub fn effective_ii(nest: &LoopNest, opt: &OptimizationConfig) -> Result<u32> {
    if opt.ii < nest.distance {
        if opt.check_hazards {
            return Err(Error::InfeasibleIi { nest: nest.name.clone(), ii: opt.ii, distance: nest.distance });
        }
        return Ok(nest.distance);
    }
    Ok(opt.ii)
}

/// Sum over nests of per-entry cycles times entries.
pub fn schedule_cycles(graph: &KernelGraph, opt: &OptimizationConfig) -> Result<u64> {
    let mut total = 0;
    for nest in &graph.nests {
        total += nest_cycles(nest, opt)? * nest.repeat;
    }
    Ok(total)
}

/// Largest number of MACs in flight at once under `opt`.
pub fn peak_parallel_macs(graph: &KernelGraph, opt: &OptimizationConfig) -> u64 {
    graph.nests.iter().map(|n| opt.lanes(n.inner()) * n.body.mac).max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpga::graph::OpCounts;

    fn ten() -> LoopNest {
        LoopNest::new("n", vec![10], OpCounts::mac(), 0, 5).unwrap()
    }

    #[test]
    fn textbook_pipeline() {
        let pipelined = OptimizationConfig { unroll: Some(1), ..OptimizationConfig::pipeline_unroll(1) };
        assert_eq!(nest_cycles(&ten(), &pipelined).unwrap(), 14);
        assert_eq!(nest_cycles(&ten(), &OptimizationConfig::none()).unwrap(), 50);
    }

    #[test]
    fn unroll_collapses_inner_loop() {
        let nest = LoopNest::new("n", vec![3, 10], OpCounts::mac(), 0, 4).unwrap();
        assert_eq!(nest_cycles(&nest, &OptimizationConfig::unroll(2)).unwrap(), 3 * 5 * 4);
        let three = OptimizationConfig { partition: true, ..OptimizationConfig::unroll(3) };
        assert_eq!(nest_cycles(&nest, &three).unwrap(), 3 * 4 * 4);
        // without partitioning only two ports feed the unrolled body
        assert_eq!(nest_cycles(&nest, &OptimizationConfig::unroll(10)).unwrap(), 3 * 5 * 4);
        let partitioned = OptimizationConfig { partition: true, ..OptimizationConfig::unroll(10) };
        assert_eq!(nest_cycles(&nest, &partitioned).unwrap(), 3 * 4);
    }

    #[test]
    fn hazard_rule() {
        let mut nest = ten();
        nest.distance = 2;
        let opt = OptimizationConfig { unroll: Some(1), ..OptimizationConfig::pipeline_unroll(1) };
        assert_eq!(effective_ii(&nest, &opt).unwrap(), 2);
        assert_eq!(nest_cycles(&nest, &opt).unwrap(), 5 + 9 * 2);
        let strict = OptimizationConfig { check_hazards: true, ..opt };
        assert!(matches!(nest_cycles(&nest, &strict), Err(Error::InfeasibleIi { ii: 1, distance: 2, .. })));
        let enough = OptimizationConfig { ii: 3, ..strict };
        assert_eq!(nest_cycles(&nest, &enough).unwrap(), 5 + 9 * 3);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizationConfig { ii: 4, ..OptimizationConfig::pipeline_unroll(1) }.validate().is_err());
        assert!(OptimizationConfig { partition: false, ..OptimizationConfig::pipeline_unroll(1) }.validate().is_err());
        assert!(OptimizationConfig::unroll(0).validate().is_err());
        // II is ignored without pipelining
        let none = OptimizationConfig { ii: 3, ..OptimizationConfig::none() };
        assert_eq!(nest_cycles(&ten(), &none).unwrap(), 50);
    }

    #[test]
    fn strategy_names() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("fast".parse::<Strategy>().is_err());
    }
}
