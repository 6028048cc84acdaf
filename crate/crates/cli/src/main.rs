use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use itc_ols::experiment::{ExperimentSpec, SweepAxis};
use itc_ols::harness::{self, HarnessError, TrialResult};
use itc_ols::selftest;

#[derive(Parser)]
#[command(
    name = "itc-ols",
    version,
    about = "Monte Carlo harness for ITC-OLS detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full sweep and write results.csv and runs.jsonl.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Also write replay bundles for run 0 of every cell into <out>/bundles.
        #[arg(long)]
        bundles: bool,
    },
    /// Run one trial and print a verbose trace.
    Single {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "snr")]
        axis: Axis,
    },
    /// Re-run a bundle and compare with its recorded result.
    Replay {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Run the built-in oracle and invariant checks.
    Selftest {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 0x5e1f)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Snr,
    Q,
    SigmaC,
}

impl From<Axis> for SweepAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Snr => SweepAxis::Snr,
            Axis::Q => SweepAxis::Q,
            Axis::SigmaC => SweepAxis::SigmaC,
        }
    }
}

fn exit_code(e: &HarnessError) -> u8 {
    match e {
        HarnessError::Config(_) | HarnessError::Bundle { .. } => 2,
        HarnessError::Numerical { .. } => 3,
        HarnessError::Io { .. } => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep {
            axis,
            config,
            out,
            workers,
            bundles,
        } => sweep(axis.into(), &config, &out, workers, bundles),
        Command::Single { config, axis } => single(axis.into(), &config),
        Command::Replay { bundle } => replay(&bundle),
        Command::Selftest { cases, seed } => Ok(run_selftest(cases, seed)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn sweep(
    axis: SweepAxis,
    config: &Path,
    out: &Path,
    workers: Option<usize>,
    bundles: bool,
) -> Result<ExitCode, HarnessError> {
    if workers == Some(0) {
        return Err(
            itc_ols::experiment::ConfigError::invalid("workers", "must be at least 1").into(),
        );
    }
    let spec = ExperimentSpec::from_file(config)?;
    let report = harness::run_experiment(&spec, axis, workers)?;
    report.write_to(out)?;
    eprintln!(
        "wrote {} rows and {} trials to {}",
        report.rows.len(),
        report.trials.len(),
        out.display()
    );
    if bundles {
        let paths = harness::emit_scene_bundle(&spec, axis, &out.join("bundles"))?;
        eprintln!("wrote {} bundles", paths.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn single(axis: SweepAxis, config: &Path) -> Result<ExitCode, HarnessError> {
    let spec = ExperimentSpec::from_file(config)?;
    let trial = harness::run_single(&spec, axis)?;
    let mut text = String::new();
    write_trial(&mut text, &trial).expect("writing to a String cannot fail");
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = std::io::stdout().write_all(text.as_bytes());
    Ok(ExitCode::SUCCESS)
}

fn write_trial(s: &mut String, t: &TrialResult) -> std::fmt::Result {
    let rec = &t.record;
    writeln!(
        s,
        "{} = {}  run {}  seed {:#x}  noise seed {:#x}",
        rec.sweep_axis, rec.sweep_value, rec.run_index, rec.seed, rec.noise_seed
    )?;
    writeln!(
        s,
        "array M={}  subcarriers Q={}  symbols D={}  noise variance {:.6e}",
        t.radar.num_antennas, t.radar.num_subcarriers, t.radar.num_symbols, rec.noise_variance
    )?;
    writeln!(s, "true targets ({}):", rec.k_true)?;
    for tg in &t.scene.targets {
        writeln!(
            s,
            "  theta {:+9.4} deg  |alpha| {:.4}  tau {:.3e} s  doppler {:+.2} Hz",
            tg.theta.to_degrees(),
            tg.gain.norm(),
            tg.tau,
            tg.doppler
        )?;
    }
    for ((cell, res), out) in t.cells.iter().zip(&t.results).zip(&t.outcomes) {
        writeln!(s)?;
        writeln!(
            s,
            "{} / {}: k_hat {}  hits {}  false alarms {}  misses {}",
            cell.method,
            cell.penalty_label(),
            res.k_hat,
            out.hits,
            out.false_alarms,
            out.misses
        )?;
        if let Some(r) = res.rank_k_hat {
            writeln!(s, "  rank estimate {r}")?;
        }
        let doas: Vec<String> = res
            .doas
            .iter()
            .map(|d| format!("{:+.4}", d.to_degrees()))
            .collect();
        writeln!(s, "  doas (deg) [{}]", doas.join(", "))?;
        for (k, v) in &res.itc_trace {
            writeln!(s, "  k={k:<3} {v:.6e}")?;
        }
    }
    Ok(())
}

fn replay(path: &Path) -> Result<ExitCode, HarnessError> {
    let outcome = harness::replay_bundle(path)?;
    if outcome.matches() {
        println!(
            "match: {} k_hat {}",
            path.display(),
            outcome.recomputed.k_hat
        );
        Ok(ExitCode::SUCCESS)
    } else {
        println!("MISMATCH: {}", path.display());
        println!("  recorded   {:?}", outcome.bundle.result);
        println!("  recomputed {:?}", outcome.recomputed);
        Ok(ExitCode::FAILURE)
    }
}

fn run_selftest(cases: usize, seed: u64) -> ExitCode {
    let outcomes = selftest::run_all(cases, seed);
    let mut failed = 0;
    for o in &outcomes {
        let tag = if o.passed() { "PASS" } else { "FAIL" };
        println!(
            "[{tag}] {} ({}/{} cases)",
            o.name,
            o.cases - o.failures,
            o.cases
        );
        failed += usize::from(!o.passed());
    }
    println!("{failed} check(s) failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
