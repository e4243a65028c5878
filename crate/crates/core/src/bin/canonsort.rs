use canonsort::config::{parse_bool, MachineConfig};
use canonsort::harness::{
    config_for, experiment_csv, generate_input, run_experiment_redistribution, run_sort, Engine,
    InputSpec,
};
use canonsort::{Cluster, Error, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "canonsort",
    version,
    about = "Simulated parallel external sorting"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an input and print its size and checksum.
    Gen(Common),
    /// Generate, sort and verify; prints the statistics CSV.
    Sort(Common),
    /// Generate, sort and verify; prints only the verification result.
    Verify(Common),
    /// Measure the redistribution volume over a grid of block sizes.
    Experiment(ExperimentArgs),
}

#[derive(Args, Clone)]
struct Machine {
    /// Config file of `key = value` lines (P D B m N K seed randomize elem_size).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short = 'P', long)]
    pes: Option<usize>,
    #[arg(short = 'D', long)]
    disks: Option<usize>,
    #[arg(short = 'B', long)]
    block: Option<usize>,
    #[arg(short = 'm', long)]
    mem: Option<usize>,
    /// Number of real elements; padded up to a multiple of B·P.
    #[arg(short = 'N', long)]
    n: Option<u64>,
    #[arg(short = 'K', long)]
    sample_rate: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// on/off
    #[arg(long)]
    randomize: Option<String>,
    #[arg(long)]
    elem_size: Option<usize>,
    #[arg(long, default_value = "random")]
    input: String,
}

#[derive(Args, Clone)]
struct Common {
    #[command(flatten)]
    machine: Machine,
    #[arg(long, default_value = "canonical")]
    engine: String,
    /// Keep one file per (PE, disk) in this directory.
    #[arg(long)]
    persist: Option<PathBuf>,
    /// Also write the statistics CSV to this file.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    #[command(flatten)]
    machine: Machine,
    /// Block sizes to sweep.
    #[arg(long, value_delimiter = ',', default_value = "4,16,64")]
    blocks: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Sweep both randomize settings instead of the configured one.
    #[arg(long)]
    both: bool,
}

impl Machine {
    fn resolve(&self) -> Result<(MachineConfig, InputSpec)> {
        let mut cfg = MachineConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_text(&std::fs::read_to_string(path)?)?;
        }
        if let Some(v) = self.pes {
            cfg.pes = v;
        }
        if let Some(v) = self.disks {
            cfg.disks = v;
        }
        if let Some(v) = self.block {
            cfg.block = v;
        }
        if let Some(v) = self.mem {
            cfg.mem = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.sample_rate {
            cfg.sample_rate = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.randomize {
            cfg.randomize = parse_bool(v)?;
        }
        if let Some(v) = self.elem_size {
            cfg.elem_size = v;
        }
        let spec = InputSpec {
            kind: self.input.parse()?,
            n: cfg.n,
            seed: cfg.seed,
        };
        Ok((cfg, spec))
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Gen(c) => {
            let (cfg, spec) = c.machine.resolve()?;
            let cfg = config_for(&spec, &cfg);
            let mut cluster = match &c.persist {
                Some(dir) => Cluster::with_persistence(cfg.clone(), dir)?,
                None => Cluster::new(cfg.clone()),
            };
            let sum = generate_input(&mut cluster, &spec)?;
            println!(
                "input={} n={} padded_n={} checksum={:032x}",
                spec.kind.name(),
                sum.count,
                cfg.n,
                sum.sum
            );
            Ok(true)
        }
        Cmd::Sort(c) => sort(c, true),
        Cmd::Verify(c) => sort(c, false),
        Cmd::Experiment(e) => {
            let (cfg, spec) = e.machine.resolve()?;
            let randomize = if e.both {
                vec![false, true]
            } else {
                vec![cfg.randomize]
            };
            let rows = run_experiment_redistribution(
                &cfg, spec.kind, spec.n, &e.blocks, &randomize, e.trials,
            )?;
            print!("{}", experiment_csv(&rows));
            Ok(true)
        }
    }
}

fn sort(c: Common, print_stats: bool) -> Result<bool> {
    let (cfg, spec) = c.machine.resolve()?;
    let engine: Engine = c.engine.parse()?;
    if let Some(dir) = &c.persist {
        std::fs::create_dir_all(dir)?;
    }
    let out = run_sort(&cfg, &spec, engine, c.persist.as_deref())?;
    let csv = out.stats.csv();
    if print_stats {
        print!("{csv}");
    }
    if let Some(path) = &c.stats {
        std::fs::write(path, &csv)?;
    }
    if out.verify.passed() {
        eprintln!("verify: pass");
    } else {
        for f in &out.verify.failures {
            eprintln!("verify: FAIL {f:?}");
        }
    }
    Ok(out.verify.passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Error::InvalidConfig(v)) => {
            for x in v {
                eprintln!("invalid config: {x}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
