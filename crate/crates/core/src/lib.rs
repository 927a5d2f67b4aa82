//! Trace-driven model of FlashAttention2 workgroup placement on multi-die
//! GPUs with private per-die L2 caches.
//!
//! The pipeline: [`grid`] enumerates workgroups, [`mapping`] assigns them to
//! dies under one of four strategies, [`trace`] produces each workgroup's
//! tile accesses, [`sim`] replays them through per-die caches, and [`perf`]
//! turns the resulting HBM traffic into roofline estimates. [`runspec`] and
//! [`sweep`] drive parameter sweeps from config files.

pub mod cache;
pub mod error;
pub mod grid;
pub mod mapping;
pub mod perf;
pub mod runspec;
pub mod sim;
pub mod sweep;
pub mod topology;
pub mod trace;

pub use error::{Error, Result};
pub use grid::{
    acc_of, grid_size, validate_config, AccId, AttentionConfig, AttnGrid, AttnKind, PassDirection,
    TileCoord,
};
pub use mapping::{
    build_assignment, colocation_report, hardware_dispatch, map_tile, swizzle_chiplet,
    ColocationReport, MappingStrategy, WorkAssignment,
};
pub use perf::{attention_flops, estimate_time, relative_perf, PerfEstimate};
pub use runspec::{parse_config, preset, RunSpec};
pub use sim::{infinite_cache_misses, simulate, Granularity, Interleave, SimParams, SimReport};
pub use sweep::{run_sweep, write_csv};
pub use topology::ChipletTopology;
pub use trace::{
    footprint, tiles_to_lines, wg_program_backward, wg_program_forward, TensorId, TensorLayout,
};
