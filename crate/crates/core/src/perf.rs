//! Roofline time estimates and strategy-relative performance.
//!
//! Only the attention matmuls are counted; softmax and other elementwise work
//! is ignored. The estimate orders strategies, it does not predict wall time.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::{AttnGrid, PassDirection};
use crate::mapping::MappingStrategy;
use crate::sim::SimReport;
use crate::topology::ChipletTopology;

/// Matmuls per (query row, key row) pair: QK^T and PV forward; dV, dP, dQ,
/// dK and the recomputed S backward.
const FORWARD_MATMULS: f64 = 2.0;
const BACKWARD_MATMULS: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerfEstimate {
    pub compute_time_s: f64,
    pub memory_time_s: f64,
    pub est_time_s: f64,
    pub flops: f64,
    pub hbm_bytes: u64,
}

impl PerfEstimate {
    pub fn is_memory_bound(&self) -> bool {
        self.memory_time_s > self.compute_time_s
    }

    /// Flops per HBM byte.
    pub fn arithmetic_intensity(&self) -> f64 {
        self.flops / self.hbm_bytes.max(1) as f64
    }
}

pub fn attention_flops(grid: &AttnGrid) -> f64 {
    let cfg = grid.config();
    let matmuls = match cfg.pass {
        PassDirection::Forward => FORWARD_MATMULS,
        PassDirection::Backward => BACKWARD_MATMULS,
    };
    let n = cfg.seqlen as f64;
    (cfg.batch * cfg.num_q_heads) as f64 * 2.0 * matmuls * n * n * cfg.head_dim as f64
}

pub fn estimate_from_bytes(flops: f64, hbm_bytes: u64, topo: &ChipletTopology) -> PerfEstimate {
    let compute_time_s = flops / topo.peak_flops;
    let memory_time_s = hbm_bytes as f64 / topo.hbm_bw_bytes_per_s;
    PerfEstimate {
        compute_time_s,
        memory_time_s,
        est_time_s: compute_time_s.max(memory_time_s),
        flops,
        hbm_bytes,
    }
}

pub fn estimate_time(report: &SimReport, grid: &AttnGrid, topo: &ChipletTopology) -> PerfEstimate {
    let bytes = report.hbm_bytes_read() + report.hbm_bytes_written();
    estimate_from_bytes(attention_flops(grid), bytes, topo)
}

/// `est_time(baseline) / est_time(s)` for every strategy; the baseline maps
/// to exactly 1.0 and slower strategies fall below it.
pub fn relative_perf(
    estimates: &BTreeMap<MappingStrategy, PerfEstimate>,
) -> Result<BTreeMap<MappingStrategy, f64>> {
    let base = estimates
        .get(&MappingStrategy::BASELINE)
        .ok_or(Error::MissingBaseline(MappingStrategy::BASELINE.name()))?;
    Ok(estimates
        .iter()
        .map(|(&s, e)| {
            let ratio = if s == MappingStrategy::BASELINE {
                1.0
            } else {
                base.est_time_s / e.est_time_s
            };
            (s, ratio)
        })
        .collect())
}
