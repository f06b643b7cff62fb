//! Execution of (format, fiber, distance, power, seed) tuples in a worker
//! pool, with results persisted through the manifest.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use qcm_core::channel::propagate;
use qcm_core::constellation::LabeledConstellation4D;
use qcm_core::metrics::{effective_snr, gmi_monte_carlo, MetricReport};
use qcm_core::txrx::{receive, set_launch_power, transmit, DspOutput};
use rayon::prelude::*;

use crate::analysis::{average_over_seeds, compare_pairs, optima};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest::{FailureRecord, RunManifest, RunRecord, TupleKey, TupleMetrics};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const OPTIMA_CSV: &str = "optima.csv";
pub const GAINS_CSV: &str = "gains.csv";
pub const CSV_SCHEMA: &str = "# qcm csv schema 1";

/// Where and how to run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub workers: usize,
    pub resume: bool,
    /// Print one progress line per finished tuple on stderr.
    pub progress: bool,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into(), workers: default_workers(), resume: false, progress: false }
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Result of executing a tuple set.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub manifest: RunManifest,
    /// Rows of the requested tuples that completed, in canonical order.
    pub rows: Vec<MetricReport>,
    /// Tuples simulated by this call.
    pub computed: usize,
    /// Tuples taken from the manifest without recomputation.
    pub reused: usize,
    pub failed: usize,
}

/// Every tuple of the configuration's grids.
pub fn sweep_tuples(config: &ExperimentConfig) -> Result<Vec<TupleKey>> {
    let fiber = config.fiber_spec()?.name;
    let powers = config.launch_power_dbm.values();
    let mut keys = Vec::new();
    for format in &config.formats {
        for d in config.distances_for(format) {
            for &p in &powers {
                for &seed in &config.seeds {
                    keys.push(TupleKey {
                        format: format.clone(),
                        fiber: fiber.clone(),
                        distance_km: d,
                        launch_power_dbm: p,
                        seed,
                    });
                }
            }
        }
    }
    Ok(keys)
}

/// Seed of the amplifier noise for a tuple, kept apart from the bit stream.
fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Transmits, propagates and receives the centre channel of one tuple.
pub fn simulate(config: &ExperimentConfig, format: &LabeledConstellation4D, key: &TupleKey) -> Result<DspOutput> {
    let plan = config.channel_plan();
    let (frame, wave) = transmit(format, &plan, config.n_symbols, config.samples_per_symbol, key.seed)?;
    let wave = set_launch_power(&wave, key.launch_power_dbm);
    let link = config.link_config(key.distance_km)?;
    let out = propagate(&wave, &link, noise_seed(key.seed))?;
    Ok(receive(&out, &frame, &link.fiber, key.distance_km, plan.center_channel())?)
}

fn evaluate(config: &ExperimentConfig, format: &LabeledConstellation4D, key: &TupleKey) -> Result<TupleMetrics> {
    let dsp = simulate(config, format, key)?;
    let snr = effective_snr(&dsp);
    if !snr.is_finite() {
        return Err(CliError::Manifest(format!("effective SNR is not finite ({snr})")));
    }
    Ok(TupleMetrics {
        n_symbols: dsp.len(),
        effective_snr_db: snr,
        gmi: gmi_monte_carlo(&dsp, format)?,
        outer_angular_variance: None,
    })
}

/// Runs the configuration's full grid and writes `sweep.csv`, `optima.csv`
/// and `gains.csv`.
pub fn run_sweep(config: &ExperimentConfig, opts: &RunOptions) -> Result<SweepOutcome> {
    let tuples = sweep_tuples(config)?;
    let mut manifest = RunManifest::open(&opts.out, config, opts.resume)?;
    let outcome = execute(config, opts, &mut manifest, &tuples)?;
    write_sweep_outputs(&opts.out, &mut manifest, &outcome.rows, SWEEP_CSV, OPTIMA_CSV, GAINS_CSV)?;
    manifest.save(&opts.out)?;
    Ok(SweepOutcome { manifest, ..outcome })
}

/// Simulates the tuples missing from the manifest and returns the rows of
/// all requested tuples.
pub(crate) fn execute(
    config: &ExperimentConfig,
    opts: &RunOptions,
    manifest: &mut RunManifest,
    tuples: &[TupleKey],
) -> Result<SweepOutcome> {
    let done = manifest.tuples();
    let todo: Vec<&TupleKey> = tuples.iter().filter(|k| !done.contains_key(&k.id())).collect();
    drop(done);
    let reused = tuples.len() - todo.len();
    let formats: HashMap<String, LabeledConstellation4D> =
        config.formats.iter().cloned().zip(config.constellations()?).collect();
    let config_hash = config.hash()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel();
    let total = todo.len();
    let (mut computed, mut failed) = (0, 0);
    let (formats, todo, pool) = (&formats, &todo, &pool);
    std::thread::scope(|scope| -> Result<()> {
        scope.spawn(move || {
            pool.install(|| {
                todo.par_iter().for_each_with(tx, |tx, key| {
                    let start = Instant::now();
                    let result = match formats.get(&key.format) {
                        Some(f) => evaluate(config, f, key),
                        None => Err(CliError::Config(format!("format {} not configured", key.format))),
                    };
                    // The receiver only disappears if the writer failed.
                    let _ = tx.send(((*key).clone(), result, start.elapsed().as_secs_f64()));
                });
            });
        });
        // Single writer: every finished tuple is persisted before the next.
        for (key, result, seconds) in rx {
            match result {
                Ok(metrics) => {
                    computed += 1;
                    if opts.progress {
                        eprintln!(
                            "[{}/{total}] {} snr {:.3} dB gmi {:.4} ({seconds:.1} s)",
                            computed + failed,
                            key.id(),
                            metrics.effective_snr_db,
                            metrics.gmi
                        );
                    }
                    manifest.record(RunRecord {
                        command: "sweep".into(),
                        id: key.id(),
                        seed: key.seed,
                        config_hash: config_hash.clone(),
                        wall_time_s: seconds,
                        outputs: Vec::new(),
                        tuple: Some(key),
                        metrics: Some(metrics),
                    });
                }
                Err(e) => {
                    failed += 1;
                    if opts.progress {
                        eprintln!("[{}/{total}] {} failed: {e}", computed + failed, key.id());
                    }
                    manifest.fail(FailureRecord { command: "sweep".into(), id: key.id(), seed: key.seed, error: e.to_string() });
                }
            }
            manifest.save(&opts.out)?;
        }
        Ok(())
    })?;
    let rows = rows_for(manifest, tuples);
    Ok(SweepOutcome { manifest: manifest.clone(), rows, computed, reused, failed })
}

/// Rows of the listed tuples present in the manifest, in canonical order:
/// format as listed in the configuration, then distance, power and seed.
pub(crate) fn rows_for(manifest: &RunManifest, tuples: &[TupleKey]) -> Vec<MetricReport> {
    let done = manifest.tuples();
    let mut format_rank: HashMap<&str, usize> = HashMap::new();
    for k in tuples {
        let next = format_rank.len();
        format_rank.entry(k.format.as_str()).or_insert(next);
    }
    let mut rows: Vec<MetricReport> = tuples
        .iter()
        .filter_map(|k| done.get(&k.id()))
        .map(|(k, m)| MetricReport {
            format: k.format.clone(),
            fiber: k.fiber.clone(),
            distance_km: k.distance_km,
            launch_power_dbm: k.launch_power_dbm,
            seed: k.seed,
            n_symbols: m.n_symbols,
            effective_snr_db: m.effective_snr_db,
            gmi: m.gmi,
        })
        .collect();
    rows.sort_by(|a, b| {
        format_rank[a.format.as_str()]
            .cmp(&format_rank[b.format.as_str()])
            .then(a.distance_km.total_cmp(&b.distance_km))
            .then(a.launch_power_dbm.total_cmp(&b.launch_power_dbm))
            .then(a.seed.cmp(&b.seed))
    });
    rows.dedup_by(|a, b| a == b);
    rows
}

/// Writes the per-tuple rows, the seed-averaged optima and the pairwise
/// comparisons, and lists them in the manifest.
pub(crate) fn write_sweep_outputs(
    dir: &Path,
    manifest: &mut RunManifest,
    rows: &[MetricReport],
    rows_name: &str,
    optima_name: &str,
    gains_name: &str,
) -> Result<()> {
    let mut text = format!("{CSV_SCHEMA}\n{}\n", MetricReport::CSV_HEADER);
    for r in rows {
        text.push_str(&r.to_csv_row());
        text.push('\n');
    }
    fs::write(dir.join(rows_name), text)?;

    let curve = average_over_seeds(rows);
    let mut w = csv_writer(&dir.join(optima_name))?;
    w.write_record(["format", "distance_km", "optimal_power_dbm", "gmi", "effective_snr_db"])?;
    for o in optima(&curve) {
        w.write_record([
            o.format,
            o.distance_km.to_string(),
            o.launch_power_dbm.to_string(),
            format!("{:.6}", o.gmi),
            format!("{:.6}", o.effective_snr_db),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(gains_name))?;
    w.write_record([
        "spectral_efficiency",
        "qcm_format",
        "sp_format",
        "distance_km",
        "qcm_optimal_power_dbm",
        "sp_optimal_power_dbm",
        "snr_gain_db",
        "gmi_gain",
    ])?;
    for c in compare_pairs(&curve) {
        w.write_record([
            c.spectral_efficiency.to_string(),
            c.qcm,
            c.sp,
            c.distance_km.to_string(),
            c.qcm_optimal_power_dbm.to_string(),
            c.sp_optimal_power_dbm.to_string(),
            format!("{:.6}", c.snr_gain_db),
            format!("{:.6}", c.gmi_gain),
        ])?;
    }
    w.flush()?;
    for name in [rows_name, optima_name, gains_name] {
        manifest.add_output(name);
    }
    Ok(())
}

/// CSV writer whose first line is the schema comment.
pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "{CSV_SCHEMA}")?;
    Ok(csv::Writer::from_writer(file))
}

/// Reads a CSV written by this tool back into records, skipping the schema
/// comment.
pub fn read_csv(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    Ok(reader.records().collect::<std::result::Result<_, _>>()?)
}
