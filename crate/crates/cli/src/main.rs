use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use silt_varlab::config::{Experiment, ExperimentConfig};
use silt_varlab::output::{compare, read_manifest, RunManifest};

#[derive(Parser)]
#[command(name = "silt-varlab", version, about = "Monte Carlo experiments on the derivative of self-intersection local time")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Compare two manifests (files or run directories).
    Compare { a: PathBuf, b: PathBuf },
    /// Run the lemma and Gaussian plumbing checks.
    VerifyLemmas {
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<String>,
    },
}

fn apply(cfg: &mut ExperimentConfig, seed: Option<u64>, threads: Option<usize>, out: Option<String>) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
}

fn report(m: &RunManifest) -> ExitCode {
    for (name, a) in &m.assertions {
        let tag = if a.pass { "PASS" } else if a.advisory { "ADVISORY" } else { "FAIL" };
        println!("{tag:8} {name}: {}", a.detail);
    }
    for f in &m.failed_replicates {
        println!("ERROR    replicate {}: {}", f.replicate, f.message);
    }
    println!("wrote {} ({:.1} s, {} threads)", m.config.out_dir, m.wall_time_seconds, m.threads);
    if m.all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cfg: ExperimentConfig) -> ExitCode {
    match silt_varlab::run(&cfg) {
        Ok(m) => report(&m),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, seed, threads, out } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            let mut cfg = match ExperimentConfig::parse(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            apply(&mut cfg, seed, threads, out);
            run(cfg)
        }
        Command::VerifyLemmas { quick, seed, threads, out } => {
            let mut cfg = ExperimentConfig::new(Experiment::VerifyLemmas);
            cfg.quick = quick;
            cfg.out_dir = "results/verify-lemmas".into();
            apply(&mut cfg, seed, threads, out);
            run(cfg)
        }
        Command::Compare { a, b } => {
            let load = |p: &PathBuf| read_manifest(p);
            let (ma, mb) = match (load(&a), load(&b)) {
                (Ok(x), Ok(y)) => (x, y),
                (Err(e), _) | (_, Err(e)) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match compare(&ma, &mb) {
                Ok(r) => {
                    println!("{:<44} {:>14} {:>14} {:>10}", "statistic", "a", "b", "z");
                    for d in &r.diffs {
                        println!("{:<44} {:>14.6e} {:>14.6e} {:>10.3}", d.statistic, d.a, d.b, d.z);
                    }
                    for u in &r.unmatched {
                        println!("{u:<44} (present in one manifest only)");
                    }
                    println!("max |z| = {:.3}", r.max_abs_z());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("usage error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
