//! Reach at the SD-FEC threshold: optimal-power GMI per distance, refined
//! around each optimum, then interpolated at `code_rate × SE`.

use qcm_core::metrics::reach_at_threshold;

use crate::analysis::{average_over_seeds, optima, sp_counterpart, spectral_efficiency_of, Optimum};
use crate::config::{round_grid, ExperimentConfig};
use crate::error::Result;
use crate::manifest::{RunManifest, TupleKey};
use crate::sweep::{csv_writer, execute, sweep_tuples, write_sweep_outputs, RunOptions, SweepOutcome};

pub const REACH_SWEEP_CSV: &str = "reach_sweep.csv";
pub const REACH_OPTIMA_CSV: &str = "reach_optima.csv";
pub const REACH_GAINS_CSV: &str = "reach_pair_gains.csv";
pub const REACH_CSV: &str = "reach.csv";
pub const REACH_GAIN_CSV: &str = "reach_gain.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct FormatReach {
    pub format: String,
    pub threshold: f64,
    /// Interpolated reach, or the reason it could not be found.
    pub reach_km: std::result::Result<f64, String>,
    /// Optimal-power GMI per distance.
    pub curve: Vec<Optimum>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachGain {
    pub spectral_efficiency: u32,
    pub qcm: String,
    pub sp: String,
    pub qcm_reach_km: f64,
    pub sp_reach_km: f64,
    /// `100 · (qcm / sp − 1)`.
    pub gain_percent: f64,
}

#[derive(Debug, Clone)]
pub struct ReachOutcome {
    pub sweep: SweepOutcome,
    pub reaches: Vec<FormatReach>,
    pub gains: Vec<ReachGain>,
}

/// Reach of every QCM-QAM format relative to its SP-QAM counterpart, for
/// pairs where both reaches were found.
pub fn reach_gains(reaches: &[FormatReach]) -> Vec<ReachGain> {
    let mut gains = Vec::new();
    for q in reaches {
        let Some(sp_name) = sp_counterpart(&q.format) else { continue };
        let Some(s) = reaches.iter().find(|r| r.format == sp_name) else { continue };
        if let (Ok(a), Ok(b)) = (&q.reach_km, &s.reach_km) {
            gains.push(ReachGain {
                spectral_efficiency: spectral_efficiency_of(&q.format).unwrap_or(0),
                qcm: q.format.clone(),
                sp: sp_name.clone(),
                qcm_reach_km: *a,
                sp_reach_km: *b,
                gain_percent: 100.0 * (a / b - 1.0),
            });
        }
    }
    gains
}

/// Interpolated reach of one format from its optimal-power curve.
pub fn format_reach(format: &str, spectral_efficiency: f64, curve: Vec<Optimum>, code_rate: f64) -> FormatReach {
    let se = spectral_efficiency;
    let samples: Vec<(f64, f64)> = curve.iter().map(|o| (o.distance_km, o.gmi)).collect();
    let reach_km = reach_at_threshold(&samples, code_rate, se).map(|r| r.reach_km).map_err(|e| e.to_string());
    FormatReach { format: format.to_string(), threshold: code_rate * se, reach_km, curve }
}

/// Runs the grid, adds `±refine_step` around each per-distance optimum,
/// and interpolates the reach of every format.
pub fn run_reach(config: &ExperimentConfig, opts: &RunOptions) -> Result<ReachOutcome> {
    let mut manifest = RunManifest::open(&opts.out, config, opts.resume)?;
    let mut tuples = sweep_tuples(config)?;
    let first = execute(config, opts, &mut manifest, &tuples)?;

    let step = config.launch_power_dbm.refine_step;
    for o in optima(&average_over_seeds(&first.rows)) {
        for p in [o.launch_power_dbm - step, o.launch_power_dbm + step] {
            let p = round_grid(p);
            for &seed in &config.seeds {
                let key = TupleKey {
                    format: o.format.clone(),
                    fiber: config.fiber_spec()?.name,
                    distance_km: o.distance_km,
                    launch_power_dbm: p,
                    seed,
                };
                if !tuples.iter().any(|k| k.id() == key.id()) {
                    tuples.push(key);
                }
            }
        }
    }
    let second = execute(config, opts, &mut manifest, &tuples)?;
    let curve = average_over_seeds(&second.rows);
    let best = optima(&curve);

    let mut reaches = Vec::new();
    for format in &config.formats {
        let per_distance: Vec<Optimum> = best.iter().filter(|o| &o.format == format).cloned().collect();
        reaches.push(format_reach(format, config.format(format)?.spectral_efficiency(), per_distance, config.code_rate));
    }
    let gains = reach_gains(&reaches);

    let dir = &opts.out;
    write_sweep_outputs(dir, &mut manifest, &second.rows, REACH_SWEEP_CSV, REACH_OPTIMA_CSV, REACH_GAINS_CSV)?;
    let mut w = csv_writer(&dir.join(REACH_CSV))?;
    w.write_record(["format", "threshold_gmi", "reach_km", "note"])?;
    for r in &reaches {
        let (reach, note) = match &r.reach_km {
            Ok(v) => (format!("{v:.6}"), String::new()),
            Err(e) => (String::new(), e.clone()),
        };
        w.write_record([r.format.clone(), format!("{:.6}", r.threshold), reach, note])?;
    }
    w.flush()?;
    let mut w = csv_writer(&dir.join(REACH_GAIN_CSV))?;
    w.write_record(["spectral_efficiency", "qcm_format", "sp_format", "qcm_reach_km", "sp_reach_km", "gain_percent"])?;
    for g in &gains {
        w.write_record([
            g.spectral_efficiency.to_string(),
            g.qcm.clone(),
            g.sp.clone(),
            format!("{:.6}", g.qcm_reach_km),
            format!("{:.6}", g.sp_reach_km),
            format!("{:.6}", g.gain_percent),
        ])?;
    }
    w.flush()?;
    manifest.add_output(REACH_CSV);
    manifest.add_output(REACH_GAIN_CSV);
    manifest.save(dir)?;
    let sweep = SweepOutcome {
        manifest,
        computed: first.computed + second.computed,
        reused: first.reused,
        failed: second.failed,
        rows: second.rows,
    };
    Ok(ReachOutcome { sweep, reaches, gains })
}
