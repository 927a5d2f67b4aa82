//! Attention problem shapes, the FlashAttention2 workgroup grid, and the
//! grouping of workgroups into attention compute clusters (ACCs).
//!
//! One workgroup handles one `block_m`-row block of one query head of one
//! batch item. Workgroups that read the same K/V tensors form an ACC: one per
//! head for MHA, one per KV group for GQA.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PassDirection {
    Forward,
    Backward,
}

impl PassDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            PassDirection::Forward => "fwd",
            PassDirection::Backward => "bwd",
        }
    }
}

impl fmt::Display for PassDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttnKind {
    Mha,
    Gqa,
}

/// Shape and tiling of one attention problem. Query and key lengths are equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AttentionConfig {
    pub batch: usize,
    pub num_q_heads: usize,
    pub num_kv_heads: usize,
    pub seqlen: usize,
    pub head_dim: usize,
    pub block_m: usize,
    pub block_n: usize,
    pub dtype_bytes: usize,
    pub pass: PassDirection,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            batch: 1,
            num_q_heads: 8,
            num_kv_heads: 8,
            seqlen: 8192,
            head_dim: 128,
            block_m: 128,
            block_n: 64,
            dtype_bytes: 2,
            pass: PassDirection::Forward,
        }
    }
}

impl AttentionConfig {
    pub fn mha(batch: usize, heads: usize, seqlen: usize, head_dim: usize) -> Self {
        Self {
            batch,
            num_q_heads: heads,
            num_kv_heads: heads,
            seqlen,
            head_dim,
            ..Self::default()
        }
    }

    pub fn with_pass(mut self, pass: PassDirection) -> Self {
        self.pass = pass;
        self
    }

    pub fn with_blocks(mut self, block_m: usize, block_n: usize) -> Self {
        self.block_m = block_m;
        self.block_n = block_n;
        self
    }
}

/// A validated [`AttentionConfig`] together with its derived grid geometry.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AttnGrid {
    cfg: AttentionConfig,
    blocks_per_head: usize,
    kv_blocks: usize,
    group_size: usize,
}

pub fn validate_config(cfg: &AttentionConfig) -> Result<AttnGrid> {
    let dims = [
        ("batch", cfg.batch),
        ("num_q_heads", cfg.num_q_heads),
        ("num_kv_heads", cfg.num_kv_heads),
        ("seqlen", cfg.seqlen),
        ("head_dim", cfg.head_dim),
        ("block_m", cfg.block_m),
        ("block_n", cfg.block_n),
        ("dtype_bytes", cfg.dtype_bytes),
    ];
    if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
        return Err(Error::InvalidConfig(format!("{name} must be positive")));
    }
    if cfg.num_q_heads % cfg.num_kv_heads != 0 {
        return Err(Error::InvalidConfig(format!(
            "num_q_heads ({}) is not a multiple of num_kv_heads ({}); GQA groups must be uniform",
            cfg.num_q_heads, cfg.num_kv_heads
        )));
    }
    if cfg.block_m > cfg.seqlen || cfg.block_n > cfg.seqlen {
        return Err(Error::InvalidConfig(format!(
            "block sizes ({}x{}) exceed seqlen {}",
            cfg.block_m, cfg.block_n, cfg.seqlen
        )));
    }
    Ok(AttnGrid {
        blocks_per_head: cfg.seqlen.div_ceil(cfg.block_m),
        kv_blocks: cfg.seqlen.div_ceil(cfg.block_n),
        group_size: cfg.num_q_heads / cfg.num_kv_heads,
        cfg: cfg.clone(),
    })
}

impl AttnGrid {
    pub fn new(cfg: &AttentionConfig) -> Result<Self> {
        validate_config(cfg)
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.cfg
    }

    pub fn batch(&self) -> usize {
        self.cfg.batch
    }

    pub fn num_q_heads(&self) -> usize {
        self.cfg.num_q_heads
    }

    pub fn num_kv_heads(&self) -> usize {
        self.cfg.num_kv_heads
    }

    pub fn pass(&self) -> PassDirection {
        self.cfg.pass
    }

    /// Row blocks per query head, `ceil(seqlen / block_m)`.
    pub fn blocks_per_head(&self) -> usize {
        self.blocks_per_head
    }

    /// K/V column blocks streamed by each workgroup, `ceil(seqlen / block_n)`.
    pub fn kv_blocks(&self) -> usize {
        self.kv_blocks
    }

    /// Query heads per KV head.
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn kind(&self) -> AttnKind {
        if self.group_size == 1 {
            AttnKind::Mha
        } else {
            AttnKind::Gqa
        }
    }

    /// Workgroups per batch item.
    pub fn per_batch_size(&self) -> usize {
        self.cfg.num_q_heads * self.blocks_per_head
    }

    /// Number of valid query rows in row block `block`; the last block of a
    /// non-multiple sequence length is partial.
    pub fn rows_in_block(&self, block: usize) -> usize {
        let start = block * self.cfg.block_m;
        self.cfg.block_m.min(self.cfg.seqlen - start)
    }

    /// Number of valid key rows in column block `block`.
    pub fn rows_in_kv_block(&self, block: usize) -> usize {
        let start = block * self.cfg.block_n;
        self.cfg.block_n.min(self.cfg.seqlen - start)
    }

    pub fn contains(&self, tile: TileCoord) -> bool {
        tile.batch < self.cfg.batch
            && tile.q_head < self.cfg.num_q_heads
            && tile.row_block < self.blocks_per_head
    }

    /// Dense index of a tile in batch-major, then head, then block order.
    pub fn tile_index(&self, tile: TileCoord) -> usize {
        (tile.batch * self.cfg.num_q_heads + tile.q_head) * self.blocks_per_head + tile.row_block
    }

    pub fn tiles(&self) -> impl Iterator<Item = TileCoord> + '_ {
        let blocks = self.blocks_per_head;
        let heads = self.cfg.num_q_heads;
        (0..self.cfg.batch).flat_map(move |batch| {
            (0..heads).flat_map(move |q_head| {
                (0..blocks).map(move |row_block| TileCoord {
                    batch,
                    q_head,
                    row_block,
                })
            })
        })
    }

    pub fn kv_group_of(&self, q_head: usize) -> usize {
        q_head / self.group_size
    }

    /// Number of distinct ACCs across the whole grid.
    pub fn num_accs(&self) -> usize {
        self.cfg.batch * self.cfg.num_kv_heads
    }

    pub fn acc_index(&self, acc: AccId) -> usize {
        acc.batch * self.cfg.num_kv_heads + acc.kv_group
    }
}

/// Total workgroups: `batch * num_q_heads * ceil(seqlen / block_m)`.
pub fn grid_size(grid: &AttnGrid) -> usize {
    grid.batch() * grid.per_batch_size()
}

/// One workgroup's unit of work.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileCoord {
    pub batch: usize,
    pub q_head: usize,
    pub row_block: usize,
}

impl TileCoord {
    pub fn new(batch: usize, q_head: usize, row_block: usize) -> Self {
        Self {
            batch,
            q_head,
            row_block,
        }
    }
}

impl fmt::Display for TileCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(b={}, h={}, blk={})",
            self.batch, self.q_head, self.row_block
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AccId {
    pub batch: usize,
    pub kv_group: usize,
}

pub fn acc_of(grid: &AttnGrid, tile: TileCoord) -> Result<AccId> {
    if !grid.contains(tile) {
        return Err(Error::TileOutOfRange(tile.to_string()));
    }
    Ok(AccId {
        batch: tile.batch,
        kv_group: grid.kv_group_of(tile.q_head),
    })
}
