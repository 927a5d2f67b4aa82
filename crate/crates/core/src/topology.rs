use crate::error::{Error, Result};

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * KIB;

/// The simulated multi-die device. Defaults describe an MI300X-class part.
#[derive(Clone, Debug, PartialEq)]
pub struct ChipletTopology {
    pub num_xcd: usize,
    pub cus_per_xcd: usize,
    pub l2_bytes_per_xcd: u64,
    pub l2_assoc: usize,
    pub line_bytes: u64,
    /// Shared last-level cache probed on L2 misses; 0 disables it.
    pub llc_bytes: u64,
    pub hbm_bw_bytes_per_s: f64,
    /// Dense FP16 matrix throughput used by the roofline estimate.
    pub peak_flops: f64,
    /// Workgroups handed to one die before the dispatcher moves on.
    pub dispatch_chunk: usize,
}

impl Default for ChipletTopology {
    fn default() -> Self {
        Self {
            num_xcd: 8,
            cus_per_xcd: 38,
            l2_bytes_per_xcd: 4 * MIB,
            l2_assoc: 16,
            line_bytes: 128,
            llc_bytes: 0,
            hbm_bw_bytes_per_s: 5.3e12,
            peak_flops: 1.3074e15,
            dispatch_chunk: 1,
        }
    }
}

impl ChipletTopology {
    pub fn with_xcds(mut self, num_xcd: usize) -> Self {
        self.num_xcd = num_xcd;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_xcd", self.num_xcd as u64),
            ("cus_per_xcd", self.cus_per_xcd as u64),
            ("l2_bytes_per_xcd", self.l2_bytes_per_xcd),
            ("l2_assoc", self.l2_assoc as u64),
            ("line_bytes", self.line_bytes),
            ("dispatch_chunk", self.dispatch_chunk as u64),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidTopology(format!("{name} must be positive")));
        }
        let way_bytes = self.l2_bytes_per_xcd / self.l2_assoc as u64;
        if self.l2_bytes_per_xcd % self.l2_assoc as u64 != 0 || way_bytes % self.line_bytes != 0 {
            return Err(Error::InvalidTopology(format!(
                "line size {} does not divide the per-way capacity of a {}-byte {}-way L2",
                self.line_bytes, self.l2_bytes_per_xcd, self.l2_assoc
            )));
        }
        if !(self.hbm_bw_bytes_per_s > 0.0) || !(self.peak_flops > 0.0) {
            return Err(Error::InvalidTopology(
                "bandwidth and peak flops must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn l2_sets(&self) -> usize {
        (self.l2_bytes_per_xcd / (self.l2_assoc as u64 * self.line_bytes)) as usize
    }
}
