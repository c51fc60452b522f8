use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::library_size;

/// Operations executed by one iteration of a nest's innermost body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpCounts {
    pub mac: u64,
    pub activation: u64,
    pub mem_read: u64,
    pub mem_write: u64,
}

impl OpCounts {
    pub const fn mac() -> Self {
        OpCounts { mac: 1, activation: 0, mem_read: 2, mem_write: 0 }
    }

    pub const fn mac_activation() -> Self {
        OpCounts { mac: 1, activation: 1, mem_read: 2, mem_write: 0 }
    }

    pub const fn elementwise() -> Self {
        OpCounts { mac: 1, activation: 0, mem_read: 2, mem_write: 1 }
    }
}

/// Where a nest sits in the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    GruForward,
    GruBackward,
    HeadForward,
    HeadBackward,
    SolveForward,
    SolveBackward,
    Loss,
}

/// A perfectly nested loop. `trips` runs outer to inner; the innermost loop
/// is the one unrolling acts on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopNest {
    pub name: String,
    pub trips: Vec<u64>,
    pub body: OpCounts,
    /// Loop-carried dependency distance in iterations; 0 means none.
    pub distance: u32,
    /// Pipeline stages of one body iteration.
    pub depth: u32,
    /// Times the whole nest is entered per kernel run.
    pub repeat: u64,
    pub phase: Phase,
}

impl LoopNest {
    pub fn new(name: impl Into<String>, trips: Vec<u64>, body: OpCounts, distance: u32, depth: u32) -> Result<Self> {
        let name = name.into();
        if trips.is_empty() || trips.contains(&0) {
            return Err(Error::contract(format!("nest `{name}` needs at least one loop and positive trip counts")));
        }
        if depth == 0 {
            return Err(Error::contract(format!("nest `{name}` needs a positive pipeline depth")));
        }
        Ok(LoopNest { name, trips, body, distance, depth, repeat: 1, phase: Phase::GruForward })
    }

    pub fn with_repeat(mut self, repeat: u64) -> Self {
        self.repeat = repeat.max(1);
        self
    }

    pub fn with_phase(mut self, phase: Phase) -> Self {
        self.phase = phase;
        self
    }

    pub fn trip_product(&self) -> u64 {
        self.trips.iter().product()
    }

    pub fn inner(&self) -> u64 {
        *self.trips.last().expect("non-empty")
    }

    /// Product of every loop except the innermost.
    pub fn outer(&self) -> u64 {
        self.trips[..self.trips.len() - 1].iter().product()
    }

    /// MACs of one entry into the nest.
    pub fn macs(&self) -> u64 {
        self.trip_product() * self.body.mac
    }
}

/// Knobs of [`build_kernel_graph`] beyond the model dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphOptions {
    /// Library order used to size the coefficient head and solve.
    pub order: u32,
    /// GRU time steps and RK steps per window.
    pub steps: u64,
    pub mac_depth: u32,
    pub activation_depth: u32,
    /// Carried distance of the loss accumulation loop.
    pub reduction_distance: u32,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions { order: 2, steps: 10, mac_depth: 4, activation_depth: 8, reduction_distance: 1 }
    }
}

/// The nests of one training step of the recovery kernel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelGraph {
    pub d: u64,
    pub hidden: u64,
    pub nests: Vec<LoopNest>,
}

impl KernelGraph {
    /// MACs of the GRU forward operations for a single time step.
    pub fn gru_step_macs(&self) -> u64 {
        self.nests.iter().filter(|n| n.phase == Phase::GruForward).map(LoopNest::macs).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.nests.iter().map(|n| n.macs() * n.repeat).sum()
    }

    pub fn nest(&self, name: &str) -> Option<&LoopNest> {
        self.nests.iter().find(|n| n.name == name)
    }
}

pub fn build_kernel_graph(d: usize, hidden: usize) -> Result<KernelGraph> {
    build_kernel_graph_with(d, hidden, &GraphOptions::default())
}

/// Builds the GRU gate, reset-apply and candidate loops, their backward
/// mirrors (one input-gradient and one weight-gradient nest per matrix
/// product), the dense head, the RK solve and the loss reduction.
pub fn build_kernel_graph_with(d: usize, hidden: usize, opts: &GraphOptions) -> Result<KernelGraph> {
    if d == 0 || hidden == 0 {
        return Err(Error::contract("model dimension and hidden size must be at least 1"));
    }
    if opts.steps == 0 || opts.mac_depth == 0 || opts.activation_depth == 0 {
        return Err(Error::contract("graph options need positive steps and depths"));
    }
    let terms = library_size(d, opts.order).ok_or(Error::Capacity { vars: d, order: opts.order })? as u64;
    let (d, h) = (d as u64, hidden as u64);
    let width = h + d;
    let k = opts.steps;
    let mac = opts.mac_depth;
    let act = opts.activation_depth;
    use Phase::*;
    let nest = |name: &str, trips: Vec<u64>, body: OpCounts, distance: u32, depth: u32, repeat: u64, phase: Phase| {
        LoopNest::new(name, trips, body, distance, depth).map(|n| n.with_repeat(repeat).with_phase(phase))
    };
    let nests = vec![
        nest("update_gate", vec![h, width], OpCounts::mac_activation(), 0, act, k, GruForward)?,
        nest("reset_gate", vec![h, width], OpCounts::mac_activation(), 0, act, k, GruForward)?,
        nest("reset_apply", vec![h], OpCounts::elementwise(), 0, mac, k, GruForward)?,
        nest("candidate", vec![h, width], OpCounts::mac_activation(), 0, act, k, GruForward)?,
        nest("update_gate_grad_input", vec![h, width], OpCounts::mac(), 0, mac, k, GruBackward)?,
        nest("update_gate_grad_weight", vec![h, width], OpCounts::mac(), 0, mac, k, GruBackward)?,
        nest("reset_gate_grad_input", vec![h, width], OpCounts::mac(), 0, mac, k, GruBackward)?,
        nest("reset_gate_grad_weight", vec![h, width], OpCounts::mac(), 0, mac, k, GruBackward)?,
        // gradients flow to both the gate and the hidden state
        nest("reset_apply_grad", vec![2, h], OpCounts::elementwise(), 0, mac, k, GruBackward)?,
        nest("candidate_grad_input", vec![h, width], OpCounts::mac_activation(), 0, act, k, GruBackward)?,
        nest("candidate_grad_weight", vec![h, width], OpCounts::mac(), 0, mac, k, GruBackward)?,
        nest("head", vec![d * terms, h], OpCounts::mac(), 0, mac, 1, HeadForward)?,
        nest("head_grad_input", vec![d * terms, h], OpCounts::mac(), 0, mac, 1, HeadBackward)?,
        nest("head_grad_weight", vec![d * terms, h], OpCounts::mac(), 0, mac, 1, HeadBackward)?,
        nest("solve", vec![k, 4, terms, d], OpCounts::mac(), 0, mac, 1, SolveForward)?,
        nest("solve_grad", vec![k, 4, terms, d], OpCounts::mac(), 0, mac, 1, SolveBackward)?,
        // running sum: each iteration reads the previous partial
        nest("loss", vec![d * k], OpCounts::mac(), opts.reduction_distance, mac, 1, Loss)?,
    ];
    Ok(KernelGraph { d, hidden: h, nests })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_gate_nest() {
        let g = build_kernel_graph(1, 1).unwrap();
        assert_eq!(g.nest("update_gate").unwrap().trip_product(), 2);
    }

    #[test]
    fn gru_step_mac_count() {
        for (d, h) in [(1, 1), (3, 5), (30, 30), (7, 64)] {
            let g = build_kernel_graph(d, h).unwrap();
            let (d, h) = (d as u64, h as u64);
            assert_eq!(g.gru_step_macs(), 3 * h * (h + d) + h);
        }
    }

    #[test]
    fn backward_mirrors_forward_with_double_macs() {
        let g = build_kernel_graph(6, 4).unwrap();
        let sum = |p: Phase| g.nests.iter().filter(|n| n.phase == p).map(LoopNest::macs).sum::<u64>();
        assert_eq!(sum(Phase::GruBackward), 2 * sum(Phase::GruForward));
        assert_eq!(sum(Phase::HeadBackward), 2 * sum(Phase::HeadForward));
    }

    #[test]
    fn rejects_empty_dimensions() {
        assert!(build_kernel_graph(0, 3).is_err());
        assert!(build_kernel_graph(3, 0).is_err());
        assert!(LoopNest::new("x", vec![3, 0], OpCounts::mac(), 0, 4).is_err());
    }
}
