//! Constellation tables and received-symbol scatter data.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use qcm_core::constellation::builtin;
use qcm_core::metrics::{effective_snr, gmi_monte_carlo, outer_angular_variance};
use qcm_core::txrx::DspOutput;

use crate::config::{round_grid, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::manifest::{RunManifest, RunRecord, TupleKey, TupleMetrics};
use crate::sweep::{csv_writer, simulate, RunOptions};

/// Writes the labeled point table of a built-in format to `dir/<name>.txt`.
pub fn dump_constellation(name: &str, dir: &Path) -> Result<PathBuf> {
    let format = builtin(name)?;
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.txt"));
    format.write_table(fs::File::create(&path)?)?;
    Ok(path)
}

/// Writes transmitted and received symbols as 2D projections, one row per
/// 4D symbol.
pub fn write_scatter(dsp: &DspOutput, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["index", "tx_x_re", "tx_x_im", "tx_y_re", "tx_y_im", "rx_x_re", "rx_x_im", "rx_y_re", "rx_y_im"])?;
    for (k, (t, r)) in dsp.tx.iter().zip(&dsp.rx).enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(t.iter().chain(r).map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ScatterOutcome {
    pub path: PathBuf,
    pub metrics: TupleMetrics,
    pub manifest: RunManifest,
}

/// Simulates one tuple and writes its scatter file.
pub fn run_scatter(
    config: &ExperimentConfig,
    opts: &RunOptions,
    format: &str,
    distance_km: f64,
    launch_power_dbm: f64,
    seed: u64,
) -> Result<ScatterOutcome> {
    let mut manifest = RunManifest::open(&opts.out, config, opts.resume)?;
    let constellation = config.format(format)?;
    let key = TupleKey {
        format: format.to_string(),
        fiber: config.fiber_spec()?.name,
        distance_km: round_grid(distance_km),
        launch_power_dbm: round_grid(launch_power_dbm),
        seed,
    };
    let start = Instant::now();
    let dsp = simulate(config, &constellation, &key)?;
    let name = format!("scatter_{format}_{}km_{}dBm_s{seed}.csv", key.distance_km, key.launch_power_dbm);
    let path = opts.out.join(&name);
    write_scatter(&dsp, &path)?;
    let snr = effective_snr(&dsp);
    if !snr.is_finite() {
        return Err(CliError::Manifest(format!("effective SNR is not finite ({snr})")));
    }
    let metrics = TupleMetrics {
        n_symbols: dsp.len(),
        effective_snr_db: snr,
        gmi: gmi_monte_carlo(&dsp, &constellation)?,
        outer_angular_variance: Some(outer_angular_variance(&dsp)),
    };
    manifest.record(RunRecord {
        command: "scatter".into(),
        id: key.id(),
        seed,
        config_hash: config.hash()?,
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: vec![name.clone()],
        tuple: Some(key),
        metrics: Some(metrics.clone()),
    });
    manifest.add_output(&name);
    manifest.save(&opts.out)?;
    Ok(ScatterOutcome { path, metrics, manifest })
}
