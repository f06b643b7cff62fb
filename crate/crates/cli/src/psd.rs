//! Spectra of the total-power fluctuation per format together with the SPM
//! and XPM filter responses, and the QCM-QAM versus SP-QAM band gaps.

use std::time::Instant;

use qcm_core::nli_analysis::{
    power_fluctuation_psd, predicted_phase_noise_power, spm_filter, xpm_filter, PowerFluctuationPsd,
};
use rayon::prelude::*;

use crate::analysis::{sp_counterpart, spectral_efficiency_of};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest::{RunManifest, RunRecord};
use crate::sweep::{csv_writer, RunOptions};

pub const PSD_CSV: &str = "psd.csv";
pub const PSD_BANDS_CSV: &str = "psd_bands.csv";
pub const PSD_GAPS_CSV: &str = "psd_gaps.csv";

/// Band-average PSD of QCM-QAM below SP-QAM at equal spectral efficiency.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdGap {
    pub spectral_efficiency: u32,
    pub qcm: String,
    pub sp: String,
    pub qcm_band_db: f64,
    pub sp_band_db: f64,
    /// `sp_band_db − qcm_band_db`.
    pub gap_db: f64,
    /// Predicted phase-noise power through the SPM filter, SP-QAM over
    /// QCM-QAM, in dB.
    pub spm_noise_ratio_db: f64,
    /// The same through the adjacent-channel XPM filter.
    pub xpm_noise_ratio_db: f64,
}

#[derive(Debug, Clone)]
pub struct PsdOutcome {
    pub manifest: RunManifest,
    /// Seed-averaged spectrum per format, in configuration order.
    pub spectra: Vec<(String, PowerFluctuationPsd)>,
    /// Band average per (format, seed).
    pub bands: Vec<(String, u64, f64)>,
    pub gaps: Vec<PsdGap>,
}

pub fn run_psd(config: &ExperimentConfig, opts: &RunOptions) -> Result<PsdOutcome> {
    let mut manifest = RunManifest::open(&opts.out, config, opts.resume)?;
    let shaping = config.pulse_shaping();
    let jobs: Vec<(usize, u64)> =
        (0..config.formats.len()).flat_map(|f| config.psd.seeds.iter().map(move |&s| (f, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(usize, u64, PowerFluctuationPsd, f64)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(f, seed)| {
                let start = Instant::now();
                let format = config.format(&config.formats[f])?;
                let psd = power_fluctuation_psd(&format, &shaping, config.psd.n_symbols, seed)?;
                Ok((f, seed, psd, start.elapsed().as_secs_f64()))
            })
            .collect::<Result<_>>()
    })?;

    let mut spectra = Vec::new();
    let mut bands = Vec::new();
    for (f, name) in config.formats.iter().enumerate() {
        let runs: Vec<&PowerFluctuationPsd> = results.iter().filter(|r| r.0 == f).map(|r| &r.2).collect();
        let n = runs.len() as f64;
        let mean: Vec<f64> = (0..runs[0].psd.len()).map(|k| runs.iter().map(|p| p.psd[k]).sum::<f64>() / n).collect();
        spectra.push((name.clone(), PowerFluctuationPsd::from_linear(runs[0].freqs.clone(), mean, runs[0].band_hz)));
        for r in results.iter().filter(|r| r.0 == f) {
            bands.push((name.clone(), r.1, r.2.band_average_db));
        }
    }

    let fiber = config.fiber_spec()?;
    let freqs = spectra[0].1.freqs.clone();
    let spm = spm_filter(&fiber, config.psd.span_km, &freqs, 2.0 * shaping.band_edge_hz())?;
    let xpm = xpm_filter(&fiber, config.psd.span_km, config.channels.spacing_ghz * 1e9, &freqs)?;

    let mut gaps = Vec::new();
    for (name, q) in &spectra {
        let Some(sp_name) = sp_counterpart(name) else { continue };
        let Some((_, s)) = spectra.iter().find(|(n, _)| *n == sp_name) else { continue };
        let ratio = |filter| -> Result<f64> {
            let a = predicted_phase_noise_power(s, filter)?;
            let b = predicted_phase_noise_power(q, filter)?;
            Ok(10.0 * (a / b).log10())
        };
        gaps.push(PsdGap {
            spectral_efficiency: spectral_efficiency_of(name).unwrap_or(0),
            qcm: name.clone(),
            sp: sp_name.clone(),
            qcm_band_db: q.band_average_db,
            sp_band_db: s.band_average_db,
            gap_db: s.band_average_db - q.band_average_db,
            spm_noise_ratio_db: ratio(&spm)?,
            xpm_noise_ratio_db: ratio(&xpm)?,
        });
    }

    let dir = &opts.out;
    let mut w = csv_writer(&dir.join(PSD_CSV))?;
    let mut header = vec!["freq_ghz".to_string()];
    header.extend(spectra.iter().map(|(n, _)| format!("psd_db:{n}")));
    header.extend(["spm_filter_db".to_string(), "xpm_filter_db".to_string()]);
    w.write_record(&header)?;
    let (spm_db, xpm_db) = (spm.normalized_magnitude_db(), xpm.normalized_magnitude_db());
    for (k, f) in freqs.iter().enumerate() {
        let mut row = vec![format!("{:.6}", f / 1e9)];
        row.extend(spectra.iter().map(|(_, p)| format!("{:.6}", p.psd_db[k])));
        row.push(format!("{:.6}", spm_db[k]));
        row.push(format!("{:.6}", xpm_db[k]));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(PSD_BANDS_CSV))?;
    w.write_record(["format", "seed", "band_average_db"])?;
    for (name, seed, db) in &bands {
        w.write_record([name.clone(), seed.to_string(), format!("{db:.6}")])?;
    }
    for (name, p) in &spectra {
        w.write_record([name.clone(), "mean".to_string(), format!("{:.6}", p.band_average_db)])?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(PSD_GAPS_CSV))?;
    w.write_record([
        "spectral_efficiency",
        "qcm_format",
        "sp_format",
        "qcm_band_db",
        "sp_band_db",
        "gap_db",
        "spm_noise_ratio_db",
        "xpm_noise_ratio_db",
    ])?;
    for g in &gaps {
        w.write_record([
            g.spectral_efficiency.to_string(),
            g.qcm.clone(),
            g.sp.clone(),
            format!("{:.6}", g.qcm_band_db),
            format!("{:.6}", g.sp_band_db),
            format!("{:.6}", g.gap_db),
            format!("{:.6}", g.spm_noise_ratio_db),
            format!("{:.6}", g.xpm_noise_ratio_db),
        ])?;
    }
    w.flush()?;

    let outputs: Vec<String> = [PSD_CSV, PSD_BANDS_CSV, PSD_GAPS_CSV].map(String::from).to_vec();
    let hash = config.hash()?;
    for (f, seed, _, seconds) in &results {
        manifest.record(RunRecord {
            command: "psd".into(),
            id: format!("{}|{seed}", config.formats[*f]),
            seed: *seed,
            config_hash: hash.clone(),
            wall_time_s: *seconds,
            outputs: outputs.clone(),
            tuple: None,
            metrics: None,
        });
    }
    for o in &outputs {
        manifest.add_output(o);
    }
    manifest.save(dir)?;
    Ok(PsdOutcome { manifest, spectra, bands, gaps })
}
