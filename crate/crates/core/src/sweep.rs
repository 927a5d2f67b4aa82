//! Sweep execution and CSV output.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{validate_config, AttentionConfig};
use crate::mapping::{build_assignment, MappingStrategy};
use crate::perf::{estimate_time, relative_perf, PerfEstimate};
use crate::runspec::RunSpec;
use crate::sim::{estimate_events, simulate, Granularity, SimReport};
use crate::trace::{write_trace, TensorLayout};

/// Line-granularity runs above this many cache probes need `force`.
pub const LINE_EVENT_LIMIT: u64 = 1_000_000_000;

pub const CSV_HEADER: [&str; 14] = [
    "batch",
    "h_q",
    "h_k",
    "n_ctx",
    "d_head",
    "block_m",
    "block_n",
    "pass",
    "strategy",
    "l2_hit_rate",
    "hbm_read_bytes",
    "hbm_write_bytes",
    "est_time_s",
    "rel_perf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub config: AttentionConfig,
    pub strategy: MappingStrategy,
    pub report: SimReport,
    pub estimate: PerfEstimate,
    pub rel_perf: f64,
}

impl SweepRow {
    fn record(&self) -> Vec<String> {
        let c = &self.config;
        vec![
            c.batch.to_string(),
            c.num_q_heads.to_string(),
            c.num_kv_heads.to_string(),
            c.seqlen.to_string(),
            c.head_dim.to_string(),
            c.block_m.to_string(),
            c.block_n.to_string(),
            c.pass.to_string(),
            self.strategy.to_string(),
            format!("{:.6}", self.report.hit_rate()),
            self.report.hbm_bytes_read().to_string(),
            self.report.hbm_bytes_written().to_string(),
            format!("{:.6e}", self.estimate.est_time_s),
            format!("{:.6}", self.rel_perf),
        ]
    }
}

/// Refuses oversized line-granularity runs unless `force` is set.
pub fn check_guardrail(spec: &RunSpec, force: bool) -> Result<()> {
    if spec.params.granularity != Granularity::Line || force {
        return Ok(());
    }
    for c in &spec.configs {
        let grid = validate_config(c)?;
        let events = estimate_events(&grid, &spec.topology, &spec.params);
        if events > LINE_EVENT_LIMIT {
            return Err(Error::Refused(format!(
                "line-granularity run of seqlen {} with {} heads needs ~{events} cache probes \
                 (limit {LINE_EVENT_LIMIT}); use tile granularity or --force",
                c.seqlen, c.num_q_heads
            )));
        }
    }
    Ok(())
}

fn run_config(spec: &RunSpec, cfg: &AttentionConfig) -> Result<Vec<SweepRow>> {
    let grid = validate_config(cfg)?;
    let mut simulated: Vec<MappingStrategy> = spec.strategies.clone();
    if !simulated.contains(&MappingStrategy::BASELINE) {
        simulated.push(MappingStrategy::BASELINE);
    }
    let results = simulated
        .iter()
        .map(|&s| {
            let a = build_assignment(s, &grid, &spec.topology);
            let report = simulate(&a, &grid, &spec.topology, &spec.params)?;
            let estimate = estimate_time(&report, &grid, &spec.topology);
            Ok((s, (report, estimate)))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let estimates: BTreeMap<_, _> = results.iter().map(|(&s, (_, e))| (s, *e)).collect();
    let rel = relative_perf(&estimates)?;
    Ok(spec
        .strategies
        .iter()
        .map(|s| {
            let (report, estimate) = results[s].clone();
            SweepRow {
                config: cfg.clone(),
                strategy: *s,
                report,
                estimate,
                rel_perf: rel[s],
            }
        })
        .collect())
}

/// Simulates every (config, strategy) pair. Rows come back in run-spec order:
/// configs in expansion order, strategies in listed order within each.
///
/// Relative performance is normalized per config against swizzled
/// head-first, which is simulated even when not listed.
pub fn run_sweep(spec: &RunSpec, force: bool) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    check_guardrail(spec, force)?;
    let per_config: Vec<Vec<SweepRow>> = spec
        .configs
        .par_iter()
        .map(|c| run_config(spec, c))
        .collect::<Result<_>>()?;
    Ok(per_config.into_iter().flatten().collect())
}

pub fn write_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes the access trace of every (config, strategy) pair, each section
/// introduced by a `#` comment line.
pub fn dump_traces<W: Write>(out: &mut W, spec: &RunSpec) -> Result<()> {
    let io_err = |source| Error::Io {
        path: "<trace>".into(),
        source,
    };
    for c in &spec.configs {
        let grid = validate_config(c)?;
        let layout = TensorLayout::new(&grid, spec.params.include_stats);
        for &s in &spec.strategies {
            writeln!(
                out,
                "# b={} h_q={} h_k={} n_ctx={} d={} pass={} strategy={s}",
                c.batch, c.num_q_heads, c.num_kv_heads, c.seqlen, c.head_dim, c.pass
            )
            .map_err(io_err)?;
            let a = build_assignment(s, &grid, &spec.topology);
            write_trace(out, &a, &grid, &layout, spec.topology.line_bytes).map_err(io_err)?;
        }
    }
    Ok(())
}
