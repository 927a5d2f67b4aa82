//! Per-workgroup memory access programs for the FlashAttention2 forward and
//! backward passes, and the flat address layout used to turn tiles into
//! cache lines.
//!
//! A program is a sequence of phases: a prologue that loads the workgroup's
//! query-side rows, one phase per K/V column block, and an epilogue that
//! stores the workgroup's output rows. Every tile spans the full row width of
//! its tensor, so each tile is one contiguous byte range.

use std::fmt;
use std::io::{self, Write};
use std::ops::{Index, IndexMut, Range};

use crate::error::{Error, Result};
use crate::grid::{AccId, AttnGrid, PassDirection, TileCoord};
use crate::mapping::WorkAssignment;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TensorId {
    Q,
    K,
    V,
    O,
    DO,
    DQ,
    DK,
    DV,
    Stats,
}

impl TensorId {
    pub const COUNT: usize = 9;
    pub const ALL: [TensorId; Self::COUNT] = [
        TensorId::Q,
        TensorId::K,
        TensorId::V,
        TensorId::O,
        TensorId::DO,
        TensorId::DQ,
        TensorId::DK,
        TensorId::DV,
        TensorId::Stats,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TensorId::Q => "Q",
            TensorId::K => "K",
            TensorId::V => "V",
            TensorId::O => "O",
            TensorId::DO => "dO",
            TensorId::DQ => "dQ",
            TensorId::DK => "dK",
            TensorId::DV => "dV",
            TensorId::Stats => "Stats",
        }
    }

    /// K-side tensors are indexed by KV group and tiled by `block_n`.
    pub fn is_kv(self) -> bool {
        matches!(
            self,
            TensorId::K | TensorId::V | TensorId::DK | TensorId::DV
        )
    }

    pub fn used_by(self, pass: PassDirection) -> bool {
        match pass {
            PassDirection::Forward => {
                matches!(self, TensorId::Q | TensorId::K | TensorId::V | TensorId::O)
            }
            PassDirection::Backward => !matches!(self, TensorId::O),
        }
    }
}

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A value per tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PerTensor<T>(pub [T; TensorId::COUNT]);

impl<T> Index<TensorId> for PerTensor<T> {
    type Output = T;
    fn index(&self, t: TensorId) -> &T {
        &self.0[t.index()]
    }
}

impl<T> IndexMut<TensorId> for PerTensor<T> {
    fn index_mut(&mut self, t: TensorId) -> &mut T {
        &mut self.0[t.index()]
    }
}

impl<T> PerTensor<T> {
    pub fn iter(&self) -> impl Iterator<Item = (TensorId, &T)> {
        TensorId::ALL.into_iter().zip(self.0.iter())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rw {
    Read,
    Write,
}

impl Rw {
    pub fn as_char(self) -> char {
        match self {
            Rw::Read => 'r',
            Rw::Write => 'w',
        }
    }
}

/// A rectangle of one `[batch][head]` slice of a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TileRect {
    pub tensor: TensorId,
    pub batch: usize,
    /// Query head for query-side tensors, KV group for K-side tensors.
    pub head: usize,
    pub row0: usize,
    pub rows: usize,
    pub col0: usize,
    pub cols: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TileAccess {
    pub rect: TileRect,
    pub rw: Rw,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccessPhase {
    pub accesses: Vec<TileAccess>,
}

/// Dense row-major `[batch][heads][seqlen][cols]` placement of every tensor a
/// pass touches, packed one after another with 4 KiB-aligned bases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorLayout {
    base: PerTensor<Option<u64>>,
    heads: PerTensor<usize>,
    batch: usize,
    seqlen: usize,
    head_dim: usize,
    dtype_bytes: u64,
    total_bytes: u64,
}

const BASE_ALIGN: u64 = 4096;
const STATS_BYTES: u64 = 4;

impl TensorLayout {
    pub fn new(grid: &AttnGrid, include_stats: bool) -> Self {
        let cfg = grid.config();
        let mut layout = Self {
            base: PerTensor::default(),
            heads: PerTensor::default(),
            batch: cfg.batch,
            seqlen: cfg.seqlen,
            head_dim: cfg.head_dim,
            dtype_bytes: cfg.dtype_bytes as u64,
            total_bytes: 0,
        };
        let mut next = 0u64;
        for t in TensorId::ALL {
            if !t.used_by(cfg.pass) || (t == TensorId::Stats && !include_stats) {
                continue;
            }
            layout.heads[t] = if t.is_kv() {
                cfg.num_kv_heads
            } else {
                cfg.num_q_heads
            };
            layout.base[t] = Some(next);
            let bytes = layout.tensor_bytes(t);
            next = (next + bytes).div_ceil(BASE_ALIGN) * BASE_ALIGN;
            layout.total_bytes = next;
        }
        layout
    }

    pub fn has(&self, t: TensorId) -> bool {
        self.base[t].is_some()
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    pub fn cols(&self, t: TensorId) -> usize {
        if t == TensorId::Stats {
            1
        } else {
            self.head_dim
        }
    }

    pub fn elem_bytes(&self, t: TensorId) -> u64 {
        if t == TensorId::Stats {
            STATS_BYTES
        } else {
            self.dtype_bytes
        }
    }

    pub fn row_bytes(&self, t: TensorId) -> u64 {
        self.cols(t) as u64 * self.elem_bytes(t)
    }

    pub fn head_bytes(&self, t: TensorId) -> u64 {
        self.seqlen as u64 * self.row_bytes(t)
    }

    pub fn tensor_bytes(&self, t: TensorId) -> u64 {
        (self.batch * self.heads[t]) as u64 * self.head_bytes(t)
    }

    /// Byte address of one element.
    pub fn address(&self, t: TensorId, batch: usize, head: usize, row: usize, col: usize) -> u64 {
        let base = self.base[t].expect("tensor not present in this layout");
        let slice = (batch * self.heads[t] + head) as u64;
        base + slice * self.head_bytes(t)
            + row as u64 * self.row_bytes(t)
            + col as u64 * self.elem_bytes(t)
    }

    fn check(&self, r: &TileRect) -> Result<()> {
        let oob = |detail: String| Error::TileOutOfBounds {
            tensor: r.tensor.name(),
            detail,
        };
        if !self.has(r.tensor) {
            return Err(oob("tensor is not part of this layout".into()));
        }
        if r.batch >= self.batch || r.head >= self.heads[r.tensor] {
            return Err(oob(format!("slice (b={}, h={})", r.batch, r.head)));
        }
        if r.rows == 0 || r.cols == 0 {
            return Err(oob("empty rectangle".into()));
        }
        if r.row0 + r.rows > self.seqlen || r.col0 + r.cols > self.cols(r.tensor) {
            return Err(oob(format!(
                "rows {}..{} cols {}..{}",
                r.row0,
                r.row0 + r.rows,
                r.col0,
                r.col0 + r.cols
            )));
        }
        Ok(())
    }

    /// Contiguous byte range of a full-width tile.
    pub fn span(&self, r: &TileRect) -> Range<u64> {
        debug_assert!(r.col0 == 0 && r.cols == self.cols(r.tensor));
        let start = self.address(r.tensor, r.batch, r.head, r.row0, 0);
        start..start + r.rows as u64 * self.row_bytes(r.tensor)
    }
}

/// Lines covering a byte range.
pub fn line_range(span: &Range<u64>, line_bytes: u64) -> Range<u64> {
    span.start / line_bytes..(span.end - 1) / line_bytes + 1
}

/// Address-ordered, deduplicated cache lines covering a tile rectangle.
pub fn tiles_to_lines(rect: &TileRect, layout: &TensorLayout, line_bytes: u64) -> Result<Vec<u64>> {
    layout.check(rect)?;
    if rect.col0 == 0 && rect.cols == layout.cols(rect.tensor) {
        return Ok(line_range(&layout.span(rect), line_bytes).collect());
    }
    let eb = layout.elem_bytes(rect.tensor);
    let mut lines: Vec<u64> = Vec::new();
    for row in rect.row0..rect.row0 + rect.rows {
        let start = layout.address(rect.tensor, rect.batch, rect.head, row, rect.col0);
        let end = start + rect.cols as u64 * eb;
        for line in line_range(&(start..end), line_bytes) {
            if lines.last() != Some(&line) {
                lines.push(line);
            }
        }
    }
    Ok(lines)
}

/// Access program of the workgroup computing `tile`.
#[derive(Clone, Copy, Debug)]
pub struct WgProgram<'a> {
    grid: &'a AttnGrid,
    tile: TileCoord,
    include_stats: bool,
}

impl<'a> WgProgram<'a> {
    pub fn new(grid: &'a AttnGrid, tile: TileCoord, include_stats: bool) -> Self {
        Self {
            grid,
            tile,
            include_stats,
        }
    }

    /// Prologue, one phase per K/V column block, epilogue.
    pub fn num_phases(&self) -> usize {
        self.grid.kv_blocks() + 2
    }

    fn q_side(&self, tensor: TensorId, rw: Rw) -> TileAccess {
        let cfg = self.grid.config();
        let cols = if tensor == TensorId::Stats {
            1
        } else {
            cfg.head_dim
        };
        TileAccess {
            rect: TileRect {
                tensor,
                batch: self.tile.batch,
                head: self.tile.q_head,
                row0: self.tile.row_block * cfg.block_m,
                rows: self.grid.rows_in_block(self.tile.row_block),
                col0: 0,
                cols,
            },
            rw,
        }
    }

    fn kv_side(&self, tensor: TensorId, block: usize, rw: Rw) -> TileAccess {
        let cfg = self.grid.config();
        TileAccess {
            rect: TileRect {
                tensor,
                batch: self.tile.batch,
                head: self.grid.kv_group_of(self.tile.q_head),
                row0: block * cfg.block_n,
                rows: self.grid.rows_in_kv_block(block),
                col0: 0,
                cols: cfg.head_dim,
            },
            rw,
        }
    }

    /// Appends the accesses of phase `idx` to `out`.
    pub fn phase_into(&self, idx: usize, out: &mut Vec<TileAccess>) {
        let last = self.num_phases() - 1;
        match (self.grid.pass(), idx) {
            (PassDirection::Forward, 0) => out.push(self.q_side(TensorId::Q, Rw::Read)),
            (PassDirection::Forward, i) if i == last => {
                out.push(self.q_side(TensorId::O, Rw::Write))
            }
            (PassDirection::Forward, i) => {
                out.push(self.kv_side(TensorId::K, i - 1, Rw::Read));
                out.push(self.kv_side(TensorId::V, i - 1, Rw::Read));
            }
            (PassDirection::Backward, 0) => {
                out.push(self.q_side(TensorId::Q, Rw::Read));
                out.push(self.q_side(TensorId::DO, Rw::Read));
                if self.include_stats {
                    out.push(self.q_side(TensorId::Stats, Rw::Read));
                }
            }
            (PassDirection::Backward, i) if i == last => {
                out.push(self.q_side(TensorId::DQ, Rw::Write))
            }
            (PassDirection::Backward, i) => {
                out.push(self.kv_side(TensorId::K, i - 1, Rw::Read));
                out.push(self.kv_side(TensorId::V, i - 1, Rw::Read));
                out.push(self.kv_side(TensorId::DK, i - 1, Rw::Write));
                out.push(self.kv_side(TensorId::DV, i - 1, Rw::Write));
            }
        }
    }

    pub fn phases(&self) -> Vec<AccessPhase> {
        (0..self.num_phases())
            .map(|i| {
                let mut accesses = Vec::with_capacity(4);
                self.phase_into(i, &mut accesses);
                AccessPhase { accesses }
            })
            .collect()
    }
}

/// Forward program: read Q rows, stream K/V column blocks, write O rows.
pub fn wg_program_forward(tile: TileCoord, grid: &AttnGrid) -> Vec<AccessPhase> {
    debug_assert_eq!(grid.pass(), PassDirection::Forward);
    WgProgram::new(grid, tile, false).phases()
}

/// Row-block-parallel backward program: read Q, dO and softmax statistics,
/// stream K/V while accumulating into dK/dV, write dQ rows.
pub fn wg_program_backward(
    tile: TileCoord,
    grid: &AttnGrid,
    include_stats: bool,
) -> Vec<AccessPhase> {
    debug_assert_eq!(grid.pass(), PassDirection::Backward);
    WgProgram::new(grid, tile, include_stats).phases()
}

/// Unique bytes each tensor contributes to the combined footprint of every
/// workgroup in `acc`, by merging the byte ranges of all their programs.
pub fn footprint(acc: AccId, grid: &AttnGrid, layout: &TensorLayout) -> PerTensor<u64> {
    let include_stats = layout.has(TensorId::Stats);
    let mut ranges: PerTensor<Vec<Range<u64>>> = PerTensor::default();
    let first = acc.kv_group * grid.group_size();
    let mut buf = Vec::new();
    for q_head in first..first + grid.group_size() {
        for row_block in 0..grid.blocks_per_head() {
            let prog = WgProgram::new(
                grid,
                TileCoord::new(acc.batch, q_head, row_block),
                include_stats,
            );
            for p in 0..prog.num_phases() {
                buf.clear();
                prog.phase_into(p, &mut buf);
                for a in &buf {
                    ranges[a.rect.tensor].push(layout.span(&a.rect));
                }
            }
        }
    }
    let mut out = PerTensor::default();
    for t in TensorId::ALL {
        out[t] = union_len(&mut ranges[t]);
    }
    out
}

fn union_len(ranges: &mut [Range<u64>]) -> u64 {
    ranges.sort_unstable_by_key(|r| r.start);
    let mut total = 0;
    let mut cur: Option<Range<u64>> = None;
    for r in ranges.iter() {
        match &mut cur {
            Some(c) if r.start <= c.end => c.end = c.end.max(r.end),
            _ => {
                if let Some(c) = cur.take() {
                    total += c.end - c.start;
                }
                cur = Some(r.clone());
            }
        }
    }
    total + cur.map_or(0, |c| c.end - c.start)
}

/// Writes one `xcd,wgid,phase,tensor,first_line,num_lines,rw` record per tile
/// access, walking each XCD's queue in order.
pub fn write_trace<W: Write>(
    out: &mut W,
    assignment: &WorkAssignment,
    grid: &AttnGrid,
    layout: &TensorLayout,
    line_bytes: u64,
) -> io::Result<()> {
    writeln!(out, "xcd,wgid,phase,tensor,first_line,num_lines,rw")?;
    let include_stats = layout.has(TensorId::Stats);
    let mut buf = Vec::new();
    for (x, queue) in assignment.queues.iter().enumerate() {
        for e in queue {
            let prog = WgProgram::new(grid, e.tile, include_stats);
            for p in 0..prog.num_phases() {
                buf.clear();
                prog.phase_into(p, &mut buf);
                for a in &buf {
                    let lines = line_range(&layout.span(&a.rect), line_bytes);
                    writeln!(
                        out,
                        "{x},{},{p},{},{},{},{}",
                        e.wgid,
                        a.rect.tensor,
                        lines.start,
                        lines.end - lines.start,
                        a.rw.as_char()
                    )?;
                }
            }
        }
    }
    Ok(())
}
