use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ttd_beamtrain::arraylab::min_max_gain;
use ttd_beamtrain::channel::load_channel;
use ttd_beamtrain::config::{SystemConfig, ValidatedConfig};
use ttd_beamtrain::harness::{
    beampattern_table, median, run_benchmark, run_design_scan, run_los_sweep, run_train,
    run_verify, CsvRecord, CsvTable, ExperimentKind, ExperimentSpec,
};

#[derive(Parser)]
#[command(
    name = "ttd-beamtrain",
    version,
    about = "TTD array beam training simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-subcarrier receive gain over a grid of arrival angles.
    Beampattern(Common),
    /// Scan (delay spacing, subcarrier count) pairs against the gain floor.
    Design(Common),
    /// One training run on one channel.
    Train(Common),
    /// Post-training gain over an SNR sweep on single-path channels.
    Sweep(Common),
    /// TTD one-shot training against phased-array DFT sweeps.
    Benchmark(Common),
    /// Compare the frequency-domain model with the time-domain simulator.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// TOML system configuration, optionally with an [experiment] table.
    #[arg(long)]
    config: PathBuf,
    /// Channel file (gain_re,gain_im,delay_s,aod_rad,aoa_rad per line).
    #[arg(long)]
    channel_file: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

const VERIFY_TOL: f64 = 1e-9;

fn load(args: &Common, kind: ExperimentKind) -> Result<(ValidatedConfig, ExperimentSpec)> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let cfg = SystemConfig::from_toml(&text)?.validate()?;
    let mut spec = ExperimentSpec::from_toml(kind, &text)?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    Ok((cfg, spec))
}

fn emit(table: &CsvTable, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => table
            .save(p)
            .with_context(|| format!("writing {}", p.display()))?,
        None => table.write_to(std::io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Beampattern(a) => {
            let (cfg, spec) = load(&a, ExperimentKind::Beampattern)?;
            emit(&beampattern_table(&cfg, spec.grid_size)?, a.out.as_deref())?;
            let g = min_max_gain(&cfg, cfg.pilot_set(), spec.grid_size)?;
            eprintln!(
                "min_max_gain = {g:.6} (floor {:.6})",
                (1.0 - spec.epsilon) * cfg.nrx() as f64
            );
        }
        Command::Design(a) => {
            let (cfg, spec) = load(&a, ExperimentKind::DesignScan)?;
            let rows = run_design_scan(&cfg, &spec)?;
            emit(&CsvTable::from_records(&rows), a.out.as_deref())?;
            let strict = rows.iter().filter(|r| r.in_ss_strict).count();
            let bad = rows.iter().filter(|r| r.in_ss_strict && !r.pass).count();
            eprintln!("{strict} strict design points, {bad} below the gain floor");
        }
        Command::Train(a) => {
            let (cfg, spec) = load(&a, ExperimentKind::Train)?;
            let ch = a.channel_file.as_ref().map(load_channel).transpose()?;
            let row = run_train(&cfg, &spec, ch.as_ref())?;
            for (k, v) in ttd_beamtrain::harness::TrainRow::header()
                .into_iter()
                .zip(row.fields())
            {
                println!("{k} = {v}");
            }
            if let Some(p) = &a.out {
                emit(&CsvTable::from_records(&[row]), Some(p))?;
            }
        }
        Command::Sweep(a) => {
            let (cfg, spec) = load(&a, ExperimentKind::LosSweep)?;
            if a.channel_file.is_some() {
                eprintln!("note: sweep draws its own single-path channels; --channel-file ignored");
            }
            let rows = run_los_sweep(&cfg, &spec)?;
            emit(&CsvTable::from_records(&rows), a.out.as_deref())?;
            for &s in &spec.snr_db {
                for &p in &spec.pilot_counts {
                    let g: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.snr_db == s && r.pilots == p)
                        .map(|r| r.post_gain)
                        .collect();
                    eprintln!(
                        "snr {s:>6.1} dB  pilots {p:>4}  median post gain {:.4}",
                        median(&g)
                    );
                }
            }
        }
        Command::Benchmark(a) => {
            let (cfg, spec) = load(&a, ExperimentKind::Benchmark)?;
            let ch = a.channel_file.as_ref().map(load_channel).transpose()?;
            let rows = run_benchmark(&cfg, &spec, ch.as_ref())?;
            emit(&CsvTable::from_records(&rows), a.out.as_deref())?;
        }
        Command::Verify(a) => {
            let (cfg, spec) = load(&a, ExperimentKind::Verify)?;
            let rows = run_verify(&cfg, &spec)?;
            if let Some(p) = &a.out {
                emit(&CsvTable::from_records(&rows), Some(p))?;
            }
            let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
            println!("max relative error over {} trials: {worst:.3e}", rows.len());
            return Ok(worst <= VERIFY_TOL);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
