//! Dispatcher model and grid-to-XCD mapping strategies.
//!
//! The hardware hands workgroup `wgid` to die `(wgid / chunk) % num_xcd`.
//! A mapping strategy decides which tile each linear workgroup id computes,
//! and therefore which tiles end up sharing a die's L2.
//!
//! All strategies treat the batch as the outermost loop: for a per-batch grid
//! of `H * B` workgroups, `w = wgid % (H * B)` and `batch = wgid / (H * B)`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{grid_size, AccId, AttnGrid, TileCoord};
use crate::topology::ChipletTopology;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MappingStrategy {
    NaiveBlockFirst,
    SwizzledBlockFirst,
    NaiveHeadFirst,
    SwizzledHeadFirst,
}

impl MappingStrategy {
    pub const ALL: [MappingStrategy; 4] = [
        MappingStrategy::NaiveBlockFirst,
        MappingStrategy::SwizzledBlockFirst,
        MappingStrategy::NaiveHeadFirst,
        MappingStrategy::SwizzledHeadFirst,
    ];

    /// The strategy every relative-performance figure is normalized against.
    pub const BASELINE: MappingStrategy = MappingStrategy::SwizzledHeadFirst;

    pub fn name(self) -> &'static str {
        match self {
            MappingStrategy::NaiveBlockFirst => "naive-block-first",
            MappingStrategy::SwizzledBlockFirst => "swizzled-block-first",
            MappingStrategy::NaiveHeadFirst => "naive-head-first",
            MappingStrategy::SwizzledHeadFirst => "swizzled-head-first",
        }
    }
}

impl fmt::Display for MappingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MappingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "naiveblockfirst" | "nbf" => Ok(MappingStrategy::NaiveBlockFirst),
            "swizzledblockfirst" | "sbf" => Ok(MappingStrategy::SwizzledBlockFirst),
            "naiveheadfirst" | "nhf" => Ok(MappingStrategy::NaiveHeadFirst),
            "swizzledheadfirst" | "shf" => Ok(MappingStrategy::SwizzledHeadFirst),
            _ => Err(Error::UnknownStrategy(s.trim().to_string())),
        }
    }
}

/// Chunked round-robin hardware dispatch.
pub fn hardware_dispatch(wgid: usize, topo: &ChipletTopology) -> usize {
    (wgid / topo.dispatch_chunk) % topo.num_xcd
}

/// Generic chiplet-aware id remap: ids landing on die `x` under round-robin
/// dispatch are renumbered into the contiguous range owned by `x`.
///
/// Ids past the largest multiple of `num_xcd` are returned unchanged.
pub fn swizzle_chiplet(wgid: usize, grid: usize, num_xcd: usize) -> usize {
    let divisible = grid / num_xcd * num_xcd;
    if wgid >= divisible {
        return wgid;
    }
    let per_xcd = divisible / num_xcd;
    (wgid % num_xcd) * per_xcd + wgid / num_xcd
}

/// Precomputed wgid -> tile mapping for one (strategy, grid, topology).
#[derive(Clone, Debug)]
pub struct Mapper<'a> {
    strategy: MappingStrategy,
    grid: &'a AttnGrid,
    num_xcd: usize,
    /// Block-first head order within one row of the grid (swizzled block-first).
    row_heads: Vec<usize>,
}

impl<'a> Mapper<'a> {
    pub fn new(strategy: MappingStrategy, grid: &'a AttnGrid, topo: &ChipletTopology) -> Self {
        let row_heads = match strategy {
            MappingStrategy::SwizzledBlockFirst => grouped_head_order(grid, topo.num_xcd),
            _ => Vec::new(),
        };
        Self {
            strategy,
            grid,
            num_xcd: topo.num_xcd,
            row_heads,
        }
    }

    pub fn strategy(&self) -> MappingStrategy {
        self.strategy
    }

    /// Tile computed by workgroup `wgid`. `wgid` must be below the grid size.
    pub fn map(&self, wgid: usize) -> TileCoord {
        let heads = self.grid.num_q_heads();
        let blocks = self.grid.blocks_per_head();
        let per_batch = heads * blocks;
        let batch = wgid / per_batch;
        let w = wgid % per_batch;
        let (q_head, row_block) = match self.strategy {
            MappingStrategy::NaiveBlockFirst => (w % heads, w / heads),
            MappingStrategy::NaiveHeadFirst => (w / blocks, w % blocks),
            MappingStrategy::SwizzledBlockFirst => (self.row_heads[w % heads], w / heads),
            MappingStrategy::SwizzledHeadFirst => {
                let x = self.num_xcd;
                let heads_per_xcd = heads / x;
                let swizzled = heads_per_xcd * x * blocks;
                if w < swizzled {
                    let k = w / x;
                    ((w % x) * heads_per_xcd + k / blocks, k % blocks)
                } else {
                    // Remainder heads run head-first over plain round-robin.
                    let r = w - swizzled;
                    (heads_per_xcd * x + r / blocks, r % blocks)
                }
            }
        };
        TileCoord {
            batch,
            q_head,
            row_block,
        }
    }
}

/// Head order within a block row for swizzled block-first. Position `i` of a
/// row is dispatched to die `i % num_xcd` (when `num_xcd` divides the head
/// count), so position `i` gets the next head whose KV group is pinned to that
/// die (`kv_group % num_xcd == i % num_xcd`). Heads left over once the
/// smallest die class runs out follow in ascending order.
fn grouped_head_order(grid: &AttnGrid, num_xcd: usize) -> Vec<usize> {
    let heads = grid.num_q_heads();
    let mut classes: Vec<Vec<usize>> = vec![Vec::new(); num_xcd];
    for h in 0..heads {
        classes[grid.kv_group_of(h) % num_xcd].push(h);
    }
    let per_class = classes.iter().map(Vec::len).min().unwrap_or(0);
    let mut order = Vec::with_capacity(heads);
    for k in 0..per_class {
        for class in &classes {
            order.push(class[k]);
        }
    }
    let mut rest: Vec<usize> = classes
        .iter()
        .flat_map(|c| c[per_class..].iter().copied())
        .collect();
    rest.sort_unstable();
    order.extend(rest);
    order
}

pub fn map_tile(
    strategy: MappingStrategy,
    wgid: usize,
    grid: &AttnGrid,
    topo: &ChipletTopology,
) -> Result<TileCoord> {
    if wgid >= grid_size(grid) {
        return Err(Error::TileOutOfRange(format!(
            "wgid {wgid} (grid has {} workgroups)",
            grid_size(grid)
        )));
    }
    Ok(Mapper::new(strategy, grid, topo).map(wgid))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QueueEntry {
    pub wgid: usize,
    pub tile: TileCoord,
}

/// Per-XCD ordered workgroup queues produced by one strategy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkAssignment {
    pub queues: Vec<Vec<QueueEntry>>,
    pub origin: MappingStrategy,
}

impl WorkAssignment {
    pub fn num_xcd(&self) -> usize {
        self.queues.len()
    }

    pub fn total(&self) -> usize {
        self.queues.iter().map(Vec::len).sum()
    }

    /// Checks that the queues cover every tile of `grid` exactly once.
    pub fn is_bijective(&self, grid: &AttnGrid) -> bool {
        let n = grid_size(grid);
        if self.total() != n {
            return false;
        }
        let mut seen = vec![false; n];
        for e in self.queues.iter().flatten() {
            if !grid.contains(e.tile) {
                return false;
            }
            let i = grid.tile_index(e.tile);
            if std::mem::replace(&mut seen[i], true) {
                return false;
            }
        }
        true
    }

    pub fn queue_length_spread(&self) -> usize {
        let lens = self.queues.iter().map(Vec::len);
        lens.clone().max().unwrap_or(0) - lens.min().unwrap_or(0)
    }
}

pub fn build_assignment(
    strategy: MappingStrategy,
    grid: &AttnGrid,
    topo: &ChipletTopology,
) -> WorkAssignment {
    let mapper = Mapper::new(strategy, grid, topo);
    let n = grid_size(grid);
    let mut queues: Vec<Vec<QueueEntry>> = (0..topo.num_xcd)
        .map(|_| Vec::with_capacity(n / topo.num_xcd + topo.dispatch_chunk))
        .collect();
    for wgid in 0..n {
        queues[hardware_dispatch(wgid, topo)].push(QueueEntry {
            wgid,
            tile: mapper.map(wgid),
        });
    }
    WorkAssignment {
        queues,
        origin: strategy,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColocationReport {
    /// Distinct XCDs touched by each ACC, indexed by [`AttnGrid::acc_index`].
    pub acc_spread: Vec<usize>,
    /// Largest number of distinct ACCs resident together on each XCD, taking
    /// consecutive runs of `concurrent_wgs` queue entries as one wave.
    pub max_concurrent_accs: Vec<usize>,
}

impl ColocationReport {
    pub fn accs_with_spread(&self, spread: usize) -> usize {
        self.acc_spread.iter().filter(|&&s| s == spread).count()
    }
}

pub fn colocation_report(
    assignment: &WorkAssignment,
    grid: &AttnGrid,
    concurrent_wgs: usize,
) -> ColocationReport {
    let acc = |t: TileCoord| AccId {
        batch: t.batch,
        kv_group: grid.kv_group_of(t.q_head),
    };
    let mut xcds_of_acc: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); grid.num_accs()];
    let mut max_concurrent_accs = Vec::with_capacity(assignment.num_xcd());
    for (x, queue) in assignment.queues.iter().enumerate() {
        for e in queue {
            xcds_of_acc[grid.acc_index(acc(e.tile))].insert(x);
        }
        let widest = queue
            .chunks(concurrent_wgs.max(1))
            .map(|wave| {
                wave.iter()
                    .map(|e| acc(e.tile))
                    .collect::<BTreeSet<_>>()
                    .len()
            })
            .max()
            .unwrap_or(0);
        max_concurrent_accs.push(widest);
    }
    ColocationReport {
        acc_spread: xcds_of_acc.iter().map(BTreeSet::len).collect(),
        max_concurrent_accs,
    }
}
