//! Run specifications: the `key = value` config format and model presets.
//!
//! ```text
//! # MHA sensitivity sweep
//! n_ctx = 8K, 32K, 128K
//! batch = 1, 2, 4, 8
//! num_q_heads = 8, 16, 32, 64, 128
//! head_dim = 128
//! block_m = 128
//! block_n = 64
//! ```
//!
//! Shape keys accept comma-separated lists and are expanded as a cross
//! product. `num_kv_heads` defaults to `num_q_heads` (MHA). Counts accept a
//! binary `K`/`M`/`G` suffix, byte sizes also `KiB`/`MiB`/`GiB`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{validate_config, AttentionConfig, PassDirection};
use crate::mapping::MappingStrategy;
use crate::sim::SimParams;
use crate::topology::ChipletTopology;

pub const PRESETS: [&str; 4] = ["llama3-8b", "llama3-70b", "llama3-405b", "deepseek-v3"];

/// Head counts and head dimension of a published model; other fields default.
pub fn preset(name: &str) -> Result<AttentionConfig> {
    let (num_q_heads, num_kv_heads, head_dim) = match name.trim().to_ascii_lowercase().as_str() {
        "llama3-8b" => (32, 8, 128),
        "llama3-70b" => (64, 8, 128),
        "llama3-405b" => (128, 8, 128),
        "deepseek-v3" => (128, 128, 56),
        _ => return Err(Error::UnknownPreset(name.trim().to_string())),
    };
    Ok(AttentionConfig {
        num_q_heads,
        num_kv_heads,
        head_dim,
        ..AttentionConfig::default()
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub topology: ChipletTopology,
    pub params: SimParams,
    pub configs: Vec<AttentionConfig>,
    pub strategies: Vec<MappingStrategy>,
    pub out: Option<PathBuf>,
    /// Unused by the deterministic simulator; kept so specs stay forward compatible.
    pub seed: u64,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() {
            return Err(Error::InvalidConfig(
                "run spec has no attention configs".into(),
            ));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("run spec has no strategies".into()));
        }
        self.topology.validate()?;
        self.params.validate()?;
        for c in &self.configs {
            validate_config(c)?;
        }
        Ok(())
    }

    /// Number of CSV rows the spec produces.
    pub fn num_points(&self) -> usize {
        self.configs.len() * self.strategies.len()
    }
}

/// Sweep axes before expansion.
#[derive(Clone, Debug, Default)]
pub struct SweepAxes {
    pub presets: Vec<String>,
    pub batch: Vec<usize>,
    pub num_q_heads: Vec<usize>,
    pub num_kv_heads: Vec<usize>,
    pub n_ctx: Vec<usize>,
    pub head_dim: Vec<usize>,
    pub block_m: Vec<usize>,
    pub block_n: Vec<usize>,
    pub dtype_bytes: Vec<usize>,
    pub pass: Vec<PassDirection>,
}

fn or_default<T: Clone>(v: &[T], d: T) -> Vec<T> {
    if v.is_empty() {
        vec![d]
    } else {
        v.to_vec()
    }
}

impl SweepAxes {
    /// Cross product in `pass, batch, heads, n_ctx, head_dim, block_m,
    /// block_n, dtype` order.
    pub fn expand(&self) -> Result<Vec<AttentionConfig>> {
        let d = AttentionConfig::default();
        if !self.presets.is_empty()
            && !(self.num_q_heads.is_empty()
                && self.num_kv_heads.is_empty()
                && self.head_dim.is_empty())
        {
            return Err(Error::InvalidConfig(
                "preset already fixes num_q_heads, num_kv_heads and head_dim".into(),
            ));
        }
        // (num_q_heads, num_kv_heads or MHA, head_dim override)
        let mut heads: Vec<(usize, Option<usize>, Option<usize>)> = Vec::new();
        if self.presets.is_empty() {
            for &q in &or_default(&self.num_q_heads, d.num_q_heads) {
                if self.num_kv_heads.is_empty() {
                    heads.push((q, None, None));
                } else {
                    heads.extend(self.num_kv_heads.iter().map(|&k| (q, Some(k), None)));
                }
            }
        } else {
            for name in &self.presets {
                let p = preset(name)?;
                heads.push((p.num_q_heads, Some(p.num_kv_heads), Some(p.head_dim)));
            }
        }
        let mut out = Vec::new();
        for &pass in &or_default(&self.pass, d.pass) {
            for &batch in &or_default(&self.batch, d.batch) {
                for &(q, k, dim) in &heads {
                    for &seqlen in &or_default(&self.n_ctx, d.seqlen) {
                        let dims = match dim {
                            Some(dim) => vec![dim],
                            None => or_default(&self.head_dim, d.head_dim),
                        };
                        for &head_dim in &dims {
                            for &block_m in &or_default(&self.block_m, d.block_m) {
                                for &block_n in &or_default(&self.block_n, d.block_n) {
                                    for &dtype_bytes in
                                        &or_default(&self.dtype_bytes, d.dtype_bytes)
                                    {
                                        out.push(AttentionConfig {
                                            batch,
                                            num_q_heads: q,
                                            num_kv_heads: k.unwrap_or(q),
                                            seqlen,
                                            head_dim,
                                            block_m,
                                            block_n,
                                            dtype_bytes,
                                            pass,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Parses a count with an optional binary `K`, `M` or `G` suffix.
pub fn parse_count(s: &str) -> std::result::Result<u64, String> {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    let (num, mult) = [
        ("gib", 1u64 << 30),
        ("mib", 1 << 20),
        ("kib", 1 << 10),
        ("g", 1 << 30),
        ("m", 1 << 20),
        ("k", 1 << 10),
    ]
    .iter()
    .find_map(|(suf, m)| lower.strip_suffix(suf).map(|n| (n.trim().to_string(), *m)))
    .unwrap_or((lower.clone(), 1));
    num.parse::<u64>()
        .ok()
        .and_then(|n| n.checked_mul(mult))
        .ok_or_else(|| format!("`{t}` is not a non-negative integer"))
}

fn parse_float(s: &str) -> std::result::Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("`{}` is not a number", s.trim()))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

fn parse_pass(s: &str) -> std::result::Result<PassDirection, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "forward" | "fwd" => Ok(PassDirection::Forward),
        "backward" | "bwd" => Ok(PassDirection::Backward),
        other => Err(format!("`{other}` is not forward or backward")),
    }
}

fn list<T>(
    value: &str,
    f: impl Fn(&str) -> std::result::Result<T, String>,
) -> std::result::Result<Vec<T>, String> {
    value.split(',').map(f).collect()
}

fn counts(value: &str) -> std::result::Result<Vec<usize>, String> {
    list(value, |s| parse_count(s).map(|v| v as usize))
}

fn single<T>(mut v: Vec<T>, key: &str) -> std::result::Result<T, String> {
    if v.len() != 1 {
        return Err(format!("`{key}` takes a single value"));
    }
    Ok(v.remove(0))
}

/// Builds a run spec from config text. `path` is only used in error messages.
pub fn parse_str(text: &str, path: &Path) -> Result<RunSpec> {
    let mut topo = ChipletTopology::default();
    let mut axes = SweepAxes::default();
    let mut concurrent: Option<usize> = None;
    let mut params = SimParams::for_topology(&topo);
    let mut strategies = MappingStrategy::ALL.to_vec();
    let mut out = None;
    let mut seed = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(err(format!("`{key}` has no value")));
        }
        let r: std::result::Result<(), String> = (|| {
            match key {
                "preset" => {
                    axes.presets = value.split(',').map(|s| s.trim().to_string()).collect();
                    for p in &axes.presets {
                        preset(p).map_err(|e| e.to_string())?;
                    }
                }
                "batch" => axes.batch = counts(value)?,
                "num_q_heads" | "h_q" => axes.num_q_heads = counts(value)?,
                "num_kv_heads" | "h_k" => axes.num_kv_heads = counts(value)?,
                "n_ctx" | "seqlen" => axes.n_ctx = counts(value)?,
                "head_dim" | "d_head" => axes.head_dim = counts(value)?,
                "block_m" => axes.block_m = counts(value)?,
                "block_n" => axes.block_n = counts(value)?,
                "dtype_bytes" => axes.dtype_bytes = counts(value)?,
                "pass" => axes.pass = list(value, parse_pass)?,
                "strategies" | "strategy" => {
                    strategies = list(value, |s| {
                        s.parse::<MappingStrategy>().map_err(|e| e.to_string())
                    })?
                }
                "num_xcd" => topo.num_xcd = single(counts(value)?, key)?,
                "cus_per_xcd" => topo.cus_per_xcd = single(counts(value)?, key)?,
                "l2_bytes" | "l2_bytes_per_xcd" => {
                    topo.l2_bytes_per_xcd = single(list(value, parse_count)?, key)?
                }
                "l2_assoc" => topo.l2_assoc = single(counts(value)?, key)?,
                "line_bytes" => topo.line_bytes = single(list(value, parse_count)?, key)?,
                "llc_bytes" => topo.llc_bytes = single(list(value, parse_count)?, key)?,
                "hbm_bw" | "hbm_bw_bytes_per_s" => {
                    topo.hbm_bw_bytes_per_s = single(list(value, parse_float)?, key)?
                }
                "peak_flops" => topo.peak_flops = single(list(value, parse_float)?, key)?,
                "dispatch_chunk" => topo.dispatch_chunk = single(counts(value)?, key)?,
                "concurrent_wgs" | "concurrent_wgs_per_xcd" => {
                    concurrent = Some(single(counts(value)?, key)?)
                }
                "granularity" => {
                    params.granularity = value.parse().map_err(|e: Error| e.to_string())?
                }
                "interleave" => {
                    params.interleave = value.parse().map_err(|e: Error| e.to_string())?
                }
                "skew" => params.skew = single(counts(value)?, key)?,
                "include_stats" => params.include_stats = parse_bool(value)?,
                "out" => out = Some(PathBuf::from(value)),
                "seed" => seed = single(list(value, parse_count)?, key)?,
                _ => return Err(format!("unknown key `{key}`")),
            }
            Ok(())
        })();
        r.map_err(err)?;
    }

    params.concurrent_wgs_per_xcd = concurrent.unwrap_or(topo.cus_per_xcd);
    let spec = RunSpec {
        configs: axes.expand()?,
        topology: topo,
        params,
        strategies,
        out,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn parse_config(path: &Path) -> Result<RunSpec> {
    let text = fs::read_to_string(path).map_err(|source| Error::ReadConfig {
        path: path.to_path_buf(),
        source,
    })?;
    parse_str(&text, path)
}
