//! Trace-driven replay of workgroup programs through per-XCD L2 caches.
//!
//! Each XCD runs its queue with up to `concurrent_wgs_per_xcd` resident
//! workgroups. Resident workgroups advance one program phase per global step;
//! a finished workgroup's slot is refilled from the queue at the start of the
//! next step. Hit and miss counts are weighted by cache lines in both
//! granularities, so tile-mode and line-mode hit rates are comparable.

use std::collections::HashSet;
use std::ops::AddAssign;

use rayon::prelude::*;

use crate::cache::{CacheState, LruCache, Probe, Request, SetAssocCache, Victim};
use crate::error::{Error, Result};
use crate::grid::{grid_size, AttnGrid, TileCoord};
use crate::mapping::{QueueEntry, WorkAssignment};
use crate::topology::ChipletTopology;
use crate::trace::{line_range, PerTensor, TensorId, TensorLayout, TileAccess, WgProgram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Granularity {
    /// Each cache line is a unit in a set-associative cache.
    Line,
    /// Each tile is one unit of its exact size in a fully associative cache.
    Tile,
}

impl std::str::FromStr for Granularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "line" => Ok(Granularity::Line),
            "tile" => Ok(Granularity::Tile),
            other => Err(Error::InvalidParams(format!(
                "unknown granularity `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Interleave {
    /// Within a step, each resident workgroup issues its whole phase in slot order.
    Lockstep,
    /// Within a step, resident workgroups issue one access each in turn.
    RoundRobinPhase,
}

impl std::str::FromStr for Interleave {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace(['-', '_'], "")
            .as_str()
        {
            "lockstep" => Ok(Interleave::Lockstep),
            "roundrobinphase" | "roundrobin" => Ok(Interleave::RoundRobinPhase),
            other => Err(Error::InvalidParams(format!(
                "unknown interleave `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimParams {
    pub concurrent_wgs_per_xcd: usize,
    pub granularity: Granularity,
    pub interleave: Interleave,
    /// Slot `s` starts each workgroup `s % (skew + 1)` steps late.
    pub skew: usize,
    /// Model the per-row softmax statistics read by the backward pass.
    pub include_stats: bool,
}

impl SimParams {
    pub fn for_topology(topo: &ChipletTopology) -> Self {
        Self {
            concurrent_wgs_per_xcd: topo.cus_per_xcd,
            granularity: Granularity::Tile,
            interleave: Interleave::Lockstep,
            skew: 0,
            include_stats: true,
        }
    }

    pub fn with_concurrency(mut self, wgs: usize) -> Self {
        self.concurrent_wgs_per_xcd = wgs;
        self
    }

    pub fn with_granularity(mut self, g: Granularity) -> Self {
        self.granularity = g;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.concurrent_wgs_per_xcd == 0 {
            return Err(Error::InvalidParams(
                "concurrent_wgs_per_xcd must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Counters in units of cache-line requests, plus HBM bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    /// L2 misses served by the shared LLC.
    pub llc_hits: u64,
    pub hbm_bytes_read: u64,
    pub hbm_bytes_written: u64,
}

impl Stats {
    pub fn hit_rate(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.hits as f64 / self.accesses as f64
        }
    }

    pub fn hbm_bytes(&self) -> u64 {
        self.hbm_bytes_read + self.hbm_bytes_written
    }
}

impl AddAssign for Stats {
    fn add_assign(&mut self, o: Self) {
        self.accesses += o.accesses;
        self.hits += o.hits;
        self.misses += o.misses;
        self.llc_hits += o.llc_hits;
        self.hbm_bytes_read += o.hbm_bytes_read;
        self.hbm_bytes_written += o.hbm_bytes_written;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct XcdReport {
    pub stats: Stats,
    pub by_tensor: PerTensor<Stats>,
}

impl AddAssign<&XcdReport> for XcdReport {
    fn add_assign(&mut self, o: &XcdReport) {
        self.stats += o.stats;
        for t in TensorId::ALL {
            self.by_tensor[t] += o.by_tensor[t];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimReport {
    pub per_xcd: Vec<XcdReport>,
    pub total: XcdReport,
}

impl SimReport {
    fn from_xcds(per_xcd: Vec<XcdReport>) -> Self {
        let mut total = XcdReport::default();
        for r in &per_xcd {
            total += r;
        }
        Self { per_xcd, total }
    }

    /// Access-weighted hit rate over all XCDs.
    pub fn hit_rate(&self) -> f64 {
        self.total.stats.hit_rate()
    }

    pub fn hbm_bytes_read(&self) -> u64 {
        self.total.stats.hbm_bytes_read
    }

    pub fn hbm_bytes_written(&self) -> u64 {
        self.total.stats.hbm_bytes_written
    }

    /// HBM bytes read for the given tensors.
    pub fn read_bytes_of(&self, tensors: &[TensorId]) -> u64 {
        tensors
            .iter()
            .map(|&t| self.total.by_tensor[t].hbm_bytes_read)
            .sum()
    }

    /// Hit rate restricted to the given tensors.
    pub fn hit_rate_of(&self, tensors: &[TensorId]) -> f64 {
        let mut s = Stats::default();
        for &t in tensors {
            s += self.total.by_tensor[t];
        }
        s.hit_rate()
    }
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    tile: TileCoord,
    phase: usize,
    delay: usize,
}

/// Outcome of an L2 miss forwarded past the XCD.
trait Backing {
    /// Returns true if the miss was served without reading HBM.
    fn fill(&mut self, unit: u64, bytes: u64) -> bool;
}

struct NoLlc;

impl Backing for NoLlc {
    fn fill(&mut self, _: u64, _: u64) -> bool {
        false
    }
}

impl Backing for LruCache {
    fn fill(&mut self, unit: u64, bytes: u64) -> bool {
        self.access(Request::read(unit, bytes), &mut |_| {})
            .is_hit()
    }
}

struct XcdReplay<'a> {
    grid: &'a AttnGrid,
    layout: &'a TensorLayout,
    params: &'a SimParams,
    line_bytes: u64,
    num_phases: usize,
    queue: &'a [QueueEntry],
    next: usize,
    slots: Vec<Option<Slot>>,
    cache: CacheState,
    report: XcdReport,
    bufs: Vec<Vec<TileAccess>>,
}

impl<'a> XcdReplay<'a> {
    fn new(
        queue: &'a [QueueEntry],
        grid: &'a AttnGrid,
        layout: &'a TensorLayout,
        topo: &ChipletTopology,
        params: &'a SimParams,
    ) -> Self {
        let cache = match params.granularity {
            Granularity::Tile => CacheState::Tile(LruCache::new(topo.l2_bytes_per_xcd)),
            Granularity::Line => CacheState::Line(SetAssocCache::new(
                topo.l2_sets(),
                topo.l2_assoc,
                topo.line_bytes,
            )),
        };
        let w = params.concurrent_wgs_per_xcd;
        Self {
            grid,
            layout,
            params,
            line_bytes: topo.line_bytes,
            num_phases: grid.kv_blocks() + 2,
            queue,
            next: 0,
            slots: vec![None; w],
            cache,
            report: XcdReport::default(),
            bufs: vec![Vec::with_capacity(4); w],
        }
    }

    fn probe(&mut self, a: &TileAccess, backing: &mut impl Backing) {
        let span = self.layout.span(&a.rect);
        let lines = line_range(&span, self.line_bytes);
        let tag = a.rect.tensor.index() as u8;
        let write = a.rw == crate::trace::Rw::Write;
        let mut delta = Stats::default();
        let mut written = PerTensor::<u64>::default();
        let mut on_evict = |v: Victim| {
            if v.dirty {
                written.0[v.tag as usize] += v.bytes;
            }
        };
        let mut record = |probe: Probe, unit: u64, bytes: u64, n_lines: u64, delta: &mut Stats| {
            delta.accesses += n_lines;
            if probe.is_hit() {
                delta.hits += n_lines;
            } else {
                delta.misses += n_lines;
                if backing.fill(unit, bytes) {
                    delta.llc_hits += n_lines;
                } else {
                    delta.hbm_bytes_read += bytes;
                }
            }
        };
        match self.params.granularity {
            Granularity::Tile => {
                let bytes = span.end - span.start;
                let req = Request {
                    unit: span.start,
                    bytes,
                    write,
                    tag,
                };
                let p = self.cache.access(req, &mut on_evict);
                record(p, span.start, bytes, lines.end - lines.start, &mut delta);
            }
            Granularity::Line => {
                for line in lines {
                    let req = Request {
                        unit: line,
                        bytes: self.line_bytes,
                        write,
                        tag,
                    };
                    let p = self.cache.access(req, &mut on_evict);
                    record(p, line, self.line_bytes, 1, &mut delta);
                }
            }
        }
        self.report.by_tensor[a.rect.tensor] += delta;
        self.report.stats += delta;
        self.credit_writebacks(&written);
    }

    fn credit_writebacks(&mut self, written: &PerTensor<u64>) {
        for (t, &bytes) in written.iter() {
            self.report.by_tensor[t].hbm_bytes_written += bytes;
            self.report.stats.hbm_bytes_written += bytes;
        }
    }

    /// Runs one global step. Returns false once the queue is drained.
    fn step(&mut self, backing: &mut impl Backing) -> bool {
        for (s, slot) in self.slots.iter_mut().enumerate() {
            if slot.is_none() && self.next < self.queue.len() {
                *slot = Some(Slot {
                    tile: self.queue[self.next].tile,
                    phase: 0,
                    delay: s % (self.params.skew + 1),
                });
                self.next += 1;
            }
        }
        if self.slots.iter().all(Option::is_none) {
            return false;
        }
        let include_stats = self.params.include_stats;
        for (slot, buf) in self.slots.iter_mut().zip(self.bufs.iter_mut()) {
            buf.clear();
            let Some(s) = slot else { continue };
            if s.delay > 0 {
                s.delay -= 1;
                continue;
            }
            WgProgram::new(self.grid, s.tile, include_stats).phase_into(s.phase, buf);
            s.phase += 1;
            if s.phase == self.num_phases {
                *slot = None;
            }
        }
        let bufs = std::mem::take(&mut self.bufs);
        match self.params.interleave {
            Interleave::Lockstep => {
                for a in bufs.iter().flatten() {
                    self.probe(a, backing);
                }
            }
            Interleave::RoundRobinPhase => {
                let longest = bufs.iter().map(Vec::len).max().unwrap_or(0);
                for i in 0..longest {
                    for buf in &bufs {
                        if let Some(a) = buf.get(i) {
                            self.probe(a, backing);
                        }
                    }
                }
            }
        }
        self.bufs = bufs;
        true
    }

    fn finish(mut self) -> XcdReport {
        let mut written = PerTensor::<u64>::default();
        self.cache.flush(&mut |v: Victim| {
            if v.dirty {
                written.0[v.tag as usize] += v.bytes;
            }
        });
        self.credit_writebacks(&written);
        self.report
    }
}

/// Replays `assignment` and returns per-XCD and aggregate statistics.
///
/// Without an LLC the XCDs share no state and are replayed in parallel. With
/// an LLC all XCDs advance together, step by step in XCD order, and probe the
/// shared LLC on each L2 miss; L2 write-backs go straight to HBM.
pub fn simulate(
    assignment: &WorkAssignment,
    grid: &AttnGrid,
    topo: &ChipletTopology,
    params: &SimParams,
) -> Result<SimReport> {
    topo.validate()?;
    params.validate()?;
    if assignment.total() != grid_size(grid) || assignment.num_xcd() != topo.num_xcd {
        return Err(Error::InvalidParams(
            "assignment does not match the grid and topology".into(),
        ));
    }
    let layout = TensorLayout::new(grid, params.include_stats);
    let replays = assignment
        .queues
        .iter()
        .map(|q| XcdReplay::new(q, grid, &layout, topo, params));

    let per_xcd: Vec<XcdReport> = if topo.llc_bytes == 0 {
        replays
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|mut r| {
                while r.step(&mut NoLlc) {}
                r.finish()
            })
            .collect()
    } else {
        let mut llc = LruCache::new(topo.llc_bytes);
        let mut replays: Vec<_> = replays.collect();
        let mut live = vec![true; replays.len()];
        while live.iter().any(|&l| l) {
            for (r, l) in replays.iter_mut().zip(live.iter_mut()) {
                if *l {
                    *l = r.step(&mut llc);
                }
            }
        }
        replays.into_iter().map(XcdReplay::finish).collect()
    };
    Ok(SimReport::from_xcds(per_xcd))
}

/// Unique units one XCD touches: the miss count of an unbounded cache.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Compulsory {
    pub units: u64,
    /// Line-weighted count, comparable to [`Stats::misses`].
    pub lines: u64,
    pub bytes: u64,
    pub bytes_by_tensor: PerTensor<u64>,
}

/// Per-XCD compulsory misses, counted directly from the set of distinct
/// units each XCD's workgroups touch.
pub fn infinite_cache_misses(
    assignment: &WorkAssignment,
    grid: &AttnGrid,
    topo: &ChipletTopology,
    params: &SimParams,
) -> Vec<Compulsory> {
    let layout = TensorLayout::new(grid, params.include_stats);
    assignment
        .queues
        .par_iter()
        .map(|queue| {
            let mut seen = HashSet::new();
            let mut out = Compulsory::default();
            let mut buf = Vec::new();
            for e in queue {
                let prog = WgProgram::new(grid, e.tile, params.include_stats);
                for p in 0..prog.num_phases() {
                    buf.clear();
                    prog.phase_into(p, &mut buf);
                    for a in &buf {
                        let span = layout.span(&a.rect);
                        let lines = line_range(&span, topo.line_bytes);
                        match params.granularity {
                            Granularity::Tile => {
                                if seen.insert(span.start) {
                                    let bytes = span.end - span.start;
                                    out.units += 1;
                                    out.lines += lines.end - lines.start;
                                    out.bytes += bytes;
                                    out.bytes_by_tensor[a.rect.tensor] += bytes;
                                }
                            }
                            Granularity::Line => {
                                for line in lines {
                                    if seen.insert(line) {
                                        out.units += 1;
                                        out.lines += 1;
                                        out.bytes += topo.line_bytes;
                                        out.bytes_by_tensor[a.rect.tensor] += topo.line_bytes;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect()
}

/// Number of cache probes a run would issue.
pub fn estimate_events(grid: &AttnGrid, topo: &ChipletTopology, params: &SimParams) -> u64 {
    let layout = TensorLayout::new(grid, params.include_stats);
    let prog = WgProgram::new(grid, TileCoord::new(0, 0, 0), params.include_stats);
    let mut buf = Vec::new();
    let mut per_wg = 0u64;
    for p in 0..prog.num_phases() {
        buf.clear();
        prog.phase_into(p, &mut buf);
        per_wg += buf
            .iter()
            .map(|a| match params.granularity {
                Granularity::Tile => 1,
                Granularity::Line => {
                    let l = line_range(&layout.span(&a.rect), topo.line_bytes);
                    l.end - l.start
                }
            })
            .sum::<u64>();
    }
    per_wg * grid_size(grid) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{validate_config, AttentionConfig, PassDirection};
    use crate::mapping::{build_assignment, MappingStrategy};
    use crate::topology::MIB;

    fn small_topo(x: usize, l2: u64) -> ChipletTopology {
        ChipletTopology {
            num_xcd: x,
            l2_bytes_per_xcd: l2,
            ..ChipletTopology::default()
        }
    }

    #[test]
    fn single_wg_only_compulsory_misses() {
        let g = validate_config(&AttentionConfig::mha(1, 1, 128, 64).with_blocks(128, 32)).unwrap();
        let topo = small_topo(1, MIB);
        let a = build_assignment(MappingStrategy::NaiveHeadFirst, &g, &topo);
        let params = SimParams::for_topology(&topo);
        let r = simulate(&a, &g, &topo, &params).unwrap();
        // Q, 4 K, 4 V, O: every tile touched once
        assert_eq!(r.total.stats.hits, 0);
        let oracle = infinite_cache_misses(&a, &g, &topo, &params);
        assert_eq!(r.total.stats.misses, oracle[0].lines);
        assert_eq!(r.hbm_bytes_read(), oracle[0].bytes);
        // O is written back at the end
        assert_eq!(r.hbm_bytes_written(), 128 * 64 * 2);
    }

    /// Brute-force lockstep replay for `w` workgroups streaming the same K/V
    /// through an LRU set: counts K/V hits directly from the access order.
    fn brute_force_shared_kv(w: usize, kv_blocks: usize) -> f64 {
        let mut resident: Vec<(char, usize)> = Vec::new();
        let (mut hits, mut total) = (0, 0);
        for j in 0..kv_blocks {
            for _ in 0..w {
                for t in ['K', 'V'] {
                    total += 1;
                    if resident.contains(&(t, j)) {
                        hits += 1;
                    } else {
                        resident.push((t, j));
                    }
                }
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn lockstep_same_acc_reuses_kv() {
        let w = 4;
        let g = validate_config(&AttentionConfig::mha(1, 1, 512, 64).with_blocks(128, 64)).unwrap();
        let topo = small_topo(1, MIB);
        let a = build_assignment(MappingStrategy::SwizzledHeadFirst, &g, &topo);
        let r = simulate(
            &a,
            &g,
            &topo,
            &SimParams::for_topology(&topo).with_concurrency(w),
        )
        .unwrap();
        let expected = brute_force_shared_kv(w, g.kv_blocks());
        assert_eq!(expected, 0.75);
        assert_eq!(r.hit_rate_of(&[TensorId::K, TensorId::V]), expected);
    }

    #[test]
    fn lockstep_distinct_accs_thrash() {
        // 4 heads on one die, block-first: every resident WG is a different ACC.
        // Per-head K+V is 2 * 4096 * 64 * 2 = 1 MiB; four of them exceed 1 MiB.
        let g = validate_config(&AttentionConfig::mha(1, 4, 4096, 64)).unwrap();
        let topo = small_topo(1, MIB);
        let a = build_assignment(MappingStrategy::NaiveBlockFirst, &g, &topo);
        let r = simulate(
            &a,
            &g,
            &topo,
            &SimParams::for_topology(&topo).with_concurrency(4),
        )
        .unwrap();
        assert_eq!(r.hit_rate_of(&[TensorId::K, TensorId::V]), 0.0);
    }

    #[test]
    fn conservation_and_tensor_breakdown() {
        let g = validate_config(
            &AttentionConfig::mha(2, 4, 768, 64).with_pass(PassDirection::Backward),
        )
        .unwrap();
        let topo = small_topo(4, 256 * 1024);
        for gran in [Granularity::Tile, Granularity::Line] {
            let params = SimParams::for_topology(&topo)
                .with_concurrency(3)
                .with_granularity(gran);
            let a = build_assignment(MappingStrategy::NaiveBlockFirst, &g, &topo);
            let r = simulate(&a, &g, &topo, &params).unwrap();
            let mut sum = Stats::default();
            for x in &r.per_xcd {
                assert_eq!(x.stats.hits + x.stats.misses, x.stats.accesses);
                let mut by_t = Stats::default();
                for (_, s) in x.by_tensor.iter() {
                    by_t += *s;
                }
                assert_eq!(by_t, x.stats);
                sum += x.stats;
            }
            assert_eq!(sum, r.total.stats);
            assert_eq!(
                r.total.stats.accesses,
                estimate_events_lines(&g, &topo, &params)
            );
        }
    }

    fn estimate_events_lines(g: &AttnGrid, topo: &ChipletTopology, params: &SimParams) -> u64 {
        let p = params.clone().with_granularity(Granularity::Line);
        estimate_events(g, topo, &p)
    }

    #[test]
    fn llc_serves_cross_die_reuse() {
        let g = validate_config(&AttentionConfig::mha(1, 2, 1024, 64)).unwrap();
        let mut topo = small_topo(4, 64 * 1024);
        let params = SimParams::for_topology(&topo).with_concurrency(2);
        let a = build_assignment(MappingStrategy::NaiveHeadFirst, &g, &topo);
        let without = simulate(&a, &g, &topo, &params).unwrap();
        topo.llc_bytes = 64 * MIB;
        let with = simulate(&a, &g, &topo, &params).unwrap();
        assert_eq!(with.total.stats.misses, without.total.stats.misses);
        assert!(with.total.stats.llc_hits > 0);
        assert!(with.hbm_bytes_read() < without.hbm_bytes_read());
    }

    #[test]
    fn interleave_and_skew_keep_totals() {
        let g = validate_config(&AttentionConfig::mha(1, 4, 1024, 64)).unwrap();
        let topo = small_topo(2, 128 * 1024);
        let a = build_assignment(MappingStrategy::SwizzledHeadFirst, &g, &topo);
        let base = SimParams::for_topology(&topo).with_concurrency(4);
        let lock = simulate(&a, &g, &topo, &base).unwrap();
        let rr = simulate(
            &a,
            &g,
            &topo,
            &SimParams {
                interleave: Interleave::RoundRobinPhase,
                ..base.clone()
            },
        )
        .unwrap();
        let skewed = simulate(&a, &g, &topo, &SimParams { skew: 3, ..base }).unwrap();
        for r in [&rr, &skewed] {
            assert_eq!(r.total.stats.accesses, lock.total.stats.accesses);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let g = validate_config(&AttentionConfig::mha(1, 1, 256, 64)).unwrap();
        let topo = small_topo(2, MIB);
        let a = build_assignment(MappingStrategy::NaiveHeadFirst, &g, &topo);
        let p = SimParams::for_topology(&topo).with_concurrency(0);
        assert!(simulate(&a, &g, &topo, &p).is_err());
        let other = small_topo(4, MIB);
        assert!(simulate(&a, &g, &other, &SimParams::for_topology(&other)).is_err());
    }
}
