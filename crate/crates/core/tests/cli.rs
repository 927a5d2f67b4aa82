use std::path::Path;
use std::process::{Command, Output};

use xcdsim::runspec::parse_str;
use xcdsim::sweep::{run_sweep, write_csv, CSV_HEADER};
use xcdsim::MappingStrategy;

fn xcdsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xcdsim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn xcdsim")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = "\
num_xcd = 4
concurrent_wgs = 4
h_q = 8
n_ctx = 1024, 2048
d_head = 64
pass = fwd, bwd
";

#[test]
fn row_count_and_single_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.cfg", SMALL);
    let out = xcdsim(&["run", &cfg], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER.join(","));
    assert_eq!(lines.iter().filter(|l| l.starts_with("batch,")).count(), 1);
    assert_eq!(lines.len() - 1, 4 * 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("16 points"));
}

#[test]
fn each_group_has_one_baseline_at_unity() {
    let spec = parse_str(SMALL, "s.cfg".as_ref()).unwrap();
    let rows = run_sweep(&spec, false).unwrap();
    for group in rows.chunks(spec.strategies.len()) {
        let base: Vec<_> = group
            .iter()
            .filter(|r| r.strategy == MappingStrategy::SwizzledHeadFirst)
            .collect();
        assert_eq!(base.len(), 1);
        assert_eq!(base[0].rel_perf, 1.0);
        assert!(group.iter().all(|r| r.config == group[0].config));
    }
}

#[test]
fn baseline_is_normalized_even_when_not_listed() {
    let spec = parse_str(&format!("{SMALL}strategies = nbf\n"), "s.cfg".as_ref()).unwrap();
    let rows = run_sweep(&spec, false).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.rel_perf > 0.0 && r.rel_perf <= 1.0));
}

#[test]
fn single_baseline_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = xcdsim(
        &[
            "run",
            "--preset",
            "llama3-8b",
            "--strategy",
            "swizzled-head-first",
            "--out",
            "r.csv",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("1,32,8,8192,128,128,64,fwd,swizzled-head-first,"));
    assert!(rows[0].ends_with(",1.000000"));
}

#[test]
fn csv_matches_library_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.cfg", SMALL);
    let out = xcdsim(&["run", &cfg], dir.path());
    let spec = parse_str(SMALL, "s.cfg".as_ref()).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, &run_sweep(&spec, false).unwrap()).unwrap();
    assert_eq!(out.stdout, buf);
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "u.cfg", "h_q = 8\nwarp_size = 64\n");
    let out = xcdsim(&["run", &unknown], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));

    for args in [
        vec!["run", "missing.cfg"],
        vec!["run", "--preset", "gpt"],
        vec!["run", "--preset", "llama3-8b", "--strategy", "diagonal"],
        vec!["run"],
    ] {
        assert_eq!(xcdsim(&args, dir.path()).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn oversized_line_runs_are_refused_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "big.cfg",
        "preset = llama3-405b\nn_ctx = 131072\ngranularity = line\n",
    );
    let out = xcdsim(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    assert!(out.stdout.is_empty());
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = xcdsim(
        &[
            "run",
            "--preset",
            "llama3-8b",
            "--strategy",
            "shf",
            "--out",
            "no/such/dir/r.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trace_dump_lands_next_to_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "t.cfg",
        "num_xcd = 2\nh_q = 2\nn_ctx = 256\nd_head = 64\nstrategies = shf\n",
    );
    let out = xcdsim(&["run", &cfg, "--out", "t.csv", "--dump-trace"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let trace = std::fs::read_to_string(dir.path().join("t.trace.txt")).unwrap();
    assert!(trace.starts_with("# b=1 h_q=2"));
    assert!(trace.contains("xcd,wgid,phase,tensor,first_line,num_lines,rw"));
}

#[test]
fn readme_sweep_parses() {
    let text = "\
# MHA sweep
num_xcd = 8
l2_bytes_per_xcd = 4MiB
concurrent_wgs = 8
batch = 1, 2, 4, 8
h_q = 8, 16, 32, 64, 128
n_ctx = 8K, 32K, 128K
d_head = 128
block_m = 128
block_n = 64
pass = fwd
strategies = nbf, sbf, nhf, shf
";
    let spec = parse_str(text, "readme.cfg".as_ref()).unwrap();
    assert_eq!(spec.num_points(), 240);
    assert_eq!(spec.params.concurrent_wgs_per_xcd, 8);
    assert!(spec.configs.iter().all(|c| c.num_kv_heads == c.num_q_heads));
}
