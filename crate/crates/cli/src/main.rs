use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qcm_cli::config::ExperimentConfig;
use qcm_cli::error::{CliError, Result};
use qcm_cli::manifest::output_dir;
use qcm_cli::sweep::default_workers;
use qcm_cli::{dump_constellation, run_psd, run_reach, run_scatter, run_sweep, RunOptions};
use qcm_core::constellation::{builtin, BUILTIN_FORMATS};

#[derive(Parser)]
#[command(name = "qcm", version, about = "QCM-QAM nonlinear transmission experiments")]
struct Cli {
    /// Configuration file, or a preset: desk-ssmf, desk-nzdsf, full-ssmf, full-nzdsf.
    #[arg(long, global = true, default_value = "desk-ssmf")]
    config: String,
    /// Output directory (overrides the configured one).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Reuse completed runs recorded in the output directory.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in formats as CSV on stdout.
    Formats,
    /// Power-fluctuation spectra, filter responses and band gaps.
    Psd,
    /// GMI and effective SNR over the launch-power and distance grids.
    Sweep,
    /// Optimal-power GMI per distance and reach at the SD-FEC threshold.
    Reach,
    /// Write the labeled point table of a format.
    Dump {
        /// Format name, e.g. 512QCM-QAM.
        format: String,
    },
    /// Received symbols of one transmission as 2D projections.
    Scatter {
        /// Format name, e.g. 512QCM-QAM.
        #[arg(long)]
        format: String,
        /// Link length in km.
        #[arg(long)]
        distance: f64,
        /// Launch power per channel in dBm.
        #[arg(long, allow_negative_numbers = true)]
        power: f64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Formats = cli.command {
        println!("name,points,spectral_efficiency,energy_mean,energy_variance,energy_min,energy_max,min_squared_distance");
        for name in BUILTIN_FORMATS {
            let f = builtin(name)?;
            let e = f.energy_stats();
            println!(
                "{name},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                f.len(),
                f.spectral_efficiency(),
                e.mean,
                e.variance,
                e.min,
                e.max,
                f.min_squared_distance()
            );
        }
        return Ok(());
    }
    if let Command::Dump { format } = &cli.command {
        let path = dump_constellation(format, cli.out.as_deref().unwrap_or_else(|| ".".as_ref()))?;
        println!("{}", path.display());
        return Ok(());
    }

    let mut config = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
        config.psd.seeds = vec![seed];
    }
    config.validate()?;
    let opts = RunOptions {
        out: output_dir(&config, cli.out.as_deref()),
        workers: cli.workers.unwrap_or_else(default_workers),
        resume: cli.resume,
        progress: true,
    };
    match cli.command {
        Command::Psd => {
            let outcome = run_psd(&config, &opts)?;
            for g in &outcome.gaps {
                println!(
                    "SE {:>2}: {} below {} by {:.3} dB (predicted SPM noise {:.3} dB, XPM {:.3} dB lower)",
                    g.spectral_efficiency, g.qcm, g.sp, g.gap_db, g.spm_noise_ratio_db, g.xpm_noise_ratio_db
                );
            }
        }
        Command::Sweep => {
            let outcome = run_sweep(&config, &opts)?;
            println!(
                "{} runs computed, {} reused, {} failed; results in {}",
                outcome.computed,
                outcome.reused,
                outcome.failed,
                opts.out.display()
            );
            if outcome.failed > 0 {
                return Err(CliError::RunsFailed { failed: outcome.failed, total: outcome.computed + outcome.failed });
            }
        }
        Command::Reach => {
            let outcome = run_reach(&config, &opts)?;
            for r in &outcome.reaches {
                match &r.reach_km {
                    Ok(km) => println!("{}: reach {km:.2} km at GMI {:.2}", r.format, r.threshold),
                    Err(e) => println!("{}: {e}", r.format),
                }
            }
            for g in &outcome.gains {
                println!("SE {:>2}: {} reaches {:+.2}% relative to {}", g.spectral_efficiency, g.qcm, g.gain_percent, g.sp);
            }
            if outcome.sweep.failed > 0 {
                return Err(CliError::RunsFailed {
                    failed: outcome.sweep.failed,
                    total: outcome.sweep.computed + outcome.sweep.failed,
                });
            }
        }
        Command::Scatter { format, distance, power } => {
            let seed = config.seeds[0];
            let outcome = run_scatter(&config, &opts, &format, distance, power, seed)?;
            println!(
                "{}: effective SNR {:.3} dB, GMI {:.4}, outer-decile angular variance {:.4e} rad²",
                outcome.path.display(),
                outcome.metrics.effective_snr_db,
                outcome.metrics.gmi,
                outcome.metrics.outer_angular_variance.unwrap_or(f64::NAN)
            );
        }
        Command::Formats | Command::Dump { .. } => unreachable!("handled above"),
    }
    Ok(())
}
