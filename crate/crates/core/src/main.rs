use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use xcdsim::runspec::{parse_config, preset, RunSpec};
use xcdsim::sweep::{dump_traces, run_sweep, write_csv};
use xcdsim::{ChipletTopology, Error, Granularity, MappingStrategy, Result, SimParams};

#[derive(Parser, Debug)]
#[command(
    name = "xcdsim",
    version,
    about = "Attention workgroup placement on chiplet GPUs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate every config x strategy of a run spec and emit CSV.
    Run(RunArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// `key = value` run spec; optional when --preset is given.
    config: Option<PathBuf>,
    /// Model preset: llama3-8b, llama3-70b, llama3-405b, deepseek-v3.
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated strategies (default: all four).
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
    /// CSV output path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    granularity: Option<Granularity>,
    /// Also write every workgroup's tile accesses, next to --out or to stderr.
    #[arg(long)]
    dump_trace: bool,
    /// Run line-granularity sweeps past the event guardrail.
    #[arg(long)]
    force: bool,
}

fn build_spec(args: &RunArgs) -> Result<RunSpec> {
    let mut spec = match &args.config {
        Some(path) => parse_config(path)?,
        None => {
            let topology = ChipletTopology::default();
            RunSpec {
                params: SimParams::for_topology(&topology),
                topology,
                configs: Vec::new(),
                strategies: MappingStrategy::ALL.to_vec(),
                out: None,
                seed: 0,
            }
        }
    };
    if let Some(name) = &args.preset {
        let p = preset(name)?;
        if spec.configs.is_empty() {
            spec.configs.push(p);
        } else {
            for c in &mut spec.configs {
                c.num_q_heads = p.num_q_heads;
                c.num_kv_heads = p.num_kv_heads;
                c.head_dim = p.head_dim;
            }
            spec.configs.dedup();
        }
    }
    if !args.strategy.is_empty() {
        spec.strategies = args
            .strategy
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_>>()?;
    }
    if let Some(g) = args.granularity {
        spec.params.granularity = g;
    }
    if args.out.is_some() {
        spec.out = args.out.clone();
    }
    if spec.configs.is_empty() {
        return Err(Error::InvalidConfig(
            "nothing to run: pass a config file or --preset".into(),
        ));
    }
    spec.validate()?;
    Ok(spec)
}

fn io_err(path: PathBuf) -> impl FnOnce(io::Error) -> Error {
    move |source| Error::Io { path, source }
}

fn run(args: RunArgs) -> Result<()> {
    let spec = build_spec(&args)?;
    eprintln!(
        "xcdsim: {} configs x {} strategies = {} points",
        spec.configs.len(),
        spec.strategies.len(),
        spec.num_points()
    );
    let rows = run_sweep(&spec, args.force)?;

    if args.dump_trace {
        match &spec.out {
            Some(out) => {
                let path = out.with_extension("trace.txt");
                let f = File::create(&path).map_err(io_err(path.clone()))?;
                let mut w = BufWriter::new(f);
                dump_traces(&mut w, &spec)?;
                w.flush().map_err(io_err(path))?;
            }
            None => dump_traces(&mut io::stderr().lock(), &spec)?,
        }
    }

    match &spec.out {
        Some(path) => {
            let f = File::create(path).map_err(io_err(path.clone()))?;
            write_csv(BufWriter::new(f), &rows)?;
        }
        None => write_csv(io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("xcdsim: {e}");
            if e.is_config_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
