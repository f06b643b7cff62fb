//! Experiment configuration: a commented TOML document naming the formats,
//! fiber, grids, channel plan and seeds of a campaign.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use qcm_core::channel::{Amplifier, FiberPreset, FiberSpec, LinkConfig, StepPolicy};
use qcm_core::constellation::{builtin, LabeledConstellation4D};
use qcm_core::nli_analysis::PulseShaping;
use qcm_core::txrx::ChannelPlan;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Shipped presets, by name.
pub const PRESETS: [(&str, &str); 4] = [
    ("desk-ssmf", include_str!("../configs/desk-ssmf.toml")),
    ("desk-nzdsf", include_str!("../configs/desk-nzdsf.toml")),
    ("full-ssmf", include_str!("../configs/full-ssmf.toml")),
    ("full-nzdsf", include_str!("../configs/full-nzdsf.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub formats: Vec<String>,
    /// Distance grid shared by every format without its own entry in
    /// `format_distances_km`.
    pub distances_km: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_symbols: usize,
    pub samples_per_symbol: usize,
    pub output_dir: PathBuf,
    pub desk_scale: bool,
    pub code_rate: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub format_distances_km: BTreeMap<String, Vec<f64>>,
    /// Point tables in the `qcm dump` format that replace the built-in
    /// definition of the named formats, e.g. to evaluate another labeling.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub format_tables: BTreeMap<String, PathBuf>,
    pub launch_power_dbm: PowerGrid,
    pub fiber: FiberSection,
    pub link: LinkSection,
    pub channels: ChannelSection,
    pub psd: PsdSection,
}

/// Inclusive launch-power grid `start, start + step, …, stop` in dBm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    pub refine_step: f64,
}

impl PowerGrid {
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        // Rounded to the micro-dB so grid points compare exactly across runs.
        (0..count).map(|k| round_grid(self.start + k as f64 * self.step)).collect()
    }
}

/// Rounds a grid coordinate to 1e-6 so that keys built from it are stable.
pub fn round_grid(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSection {
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attenuation_db_per_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion_ps_nm_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_per_w_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_nm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub spans: usize,
    /// 0 disables ASE.
    pub noise_figure_db: f64,
    pub max_phase_rad: f64,
    pub max_step_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub count: usize,
    pub spacing_ghz: f64,
    pub symbol_rate_gbaud: f64,
    pub rolloff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsdSection {
    pub n_symbols: usize,
    pub samples_per_symbol: usize,
    pub seeds: Vec<u64>,
    pub span_km: f64,
}

/// Settings that change the numbers a sweep tuple produces. Grids, seeds
/// and format lists are excluded because they only select tuples.
#[derive(Serialize)]
struct SimulationKey<'a> {
    fiber: (&'a str, [f64; 4]),
    link: &'a LinkSection,
    channels: &'a ChannelSection,
    n_symbols: usize,
    samples_per_symbol: usize,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    format_tables: BTreeMap<&'a str, String>,
}

impl ExperimentConfig {
    /// Loads a configuration from a file path, or a shipped preset by name
    /// when no such file exists.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.exists() {
            return Self::parse(&std::fs::read_to_string(path)?);
        }
        match PRESETS.iter().find(|(name, _)| *name == spec) {
            Some((_, text)) => Self::parse(text),
            None => Err(CliError::Config(format!(
                "{spec:?} is neither a readable file nor a preset ({})",
                PRESETS.map(|p| p.0).join(", ")
            ))),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match PRESETS.iter().find(|(n, _)| *n == name) {
            Some((_, text)) => Self::parse(text),
            None => Err(CliError::Config(format!("unknown preset {name:?}"))),
        }
    }

    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical TOML text; parsing it yields an identical configuration.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    /// Hash of the settings that determine per-tuple results.
    pub fn simulation_hash(&self) -> Result<String> {
        let fiber = self.fiber_spec()?;
        let key = SimulationKey {
            fiber: (
                &fiber.name,
                [fiber.attenuation_db_per_km, fiber.dispersion_ps_nm_km, fiber.gamma_per_w_km, fiber.wavelength_nm],
            ),
            link: &self.link,
            channels: &self.channels,
            n_symbols: self.n_symbols,
            samples_per_symbol: self.samples_per_symbol,
            format_tables: self
                .format_tables
                .iter()
                .map(|(name, path)| Ok((name.as_str(), sha256_hex(&std::fs::read(path)?))))
                .collect::<Result<_>>()?,
        };
        Ok(sha256_hex(serde_json::to_string(&key)?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.formats.is_empty() {
            return bad("format list is empty".into());
        }
        let mut names = HashSet::new();
        for f in &self.formats {
            self.format(f).map_err(|e| CliError::Config(format!("format {f:?}: {e}")))?;
            if !names.insert(f) {
                return bad(format!("format {f:?} listed twice"));
            }
        }
        for f in self.format_distances_km.keys() {
            if !names.contains(f) {
                return bad(format!("distance override for {f:?}, which is not in the format list"));
            }
        }
        for f in self.format_tables.keys() {
            if !names.contains(f) {
                return bad(format!("format table for {f:?}, which is not in the format list"));
            }
        }
        for (label, grid) in std::iter::once(("distances_km", &self.distances_km))
            .chain(self.format_distances_km.iter().map(|(k, v)| (k.as_str(), v)))
        {
            if grid.is_empty() {
                return bad(format!("distance grid {label} is empty"));
            }
            if grid.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return bad(format!("distance grid {label} must hold positive distances"));
            }
        }
        if self.seeds.is_empty() || self.psd.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len()
            || self.psd.seeds.iter().collect::<HashSet<_>>().len() != self.psd.seeds.len()
        {
            return bad("seeds must be distinct".into());
        }
        let p = &self.launch_power_dbm;
        if !(p.step > 0.0 && p.refine_step > 0.0 && p.start.is_finite() && p.stop >= p.start) {
            return bad(format!("launch power grid {p:?} is empty or malformed"));
        }
        if !(self.code_rate > 0.0 && self.code_rate <= 1.0) {
            return bad(format!("code rate {} outside (0, 1]", self.code_rate));
        }
        for (label, n) in [("n_symbols", self.n_symbols), ("psd.n_symbols", self.psd.n_symbols)] {
            if !n.is_power_of_two() || n < 1024 {
                return bad(format!("{label} = {n} must be a power of two ≥ 1024"));
            }
        }
        if self.samples_per_symbol == 0 || self.psd.samples_per_symbol == 0 {
            return bad("samples per symbol must be positive".into());
        }
        if !(self.psd.span_km > 0.0) {
            return bad("psd.span_km must be positive".into());
        }
        let c = &self.channels;
        if c.count == 0 || !(c.symbol_rate_gbaud > 0.0) || !(0.0..=1.0).contains(&c.rolloff) || !(c.spacing_ghz > 0.0) {
            return bad(format!("channel plan {c:?} is malformed"));
        }
        let band = self.channel_plan().occupied_band_hz();
        let rate = c.symbol_rate_gbaud * 1e9 * self.samples_per_symbol as f64;
        if band >= rate {
            return bad(format!(
                "{} samples per symbol give {:.1} GHz, less than the {:.1} GHz WDM band",
                self.samples_per_symbol,
                rate / 1e9,
                band / 1e9
            ));
        }
        self.link_config(1.0)?;
        Ok(())
    }

    pub fn fiber_spec(&self) -> Result<FiberSpec> {
        let preset: FiberPreset = self.fiber.preset.parse()?;
        let mut fiber = preset.fiber();
        let f = &self.fiber;
        if let Some(v) = f.attenuation_db_per_km {
            fiber.attenuation_db_per_km = v;
        }
        if let Some(v) = f.dispersion_ps_nm_km {
            fiber.dispersion_ps_nm_km = v;
        }
        if let Some(v) = f.gamma_per_w_km {
            fiber.gamma_per_w_km = v;
        }
        if let Some(v) = f.wavelength_nm {
            fiber.wavelength_nm = v;
        }
        fiber.validate()?;
        Ok(fiber)
    }

    pub fn link_config(&self, length_km: f64) -> Result<LinkConfig> {
        let link = LinkConfig {
            fiber: self.fiber_spec()?,
            length_km,
            spans: self.link.spans,
            amplifier: Some(Amplifier { noise_figure_db: self.link.noise_figure_db }),
            steps: StepPolicy::Adaptive { max_phase_rad: self.link.max_phase_rad, max_step_km: self.link.max_step_km },
        };
        link.validate()?;
        Ok(link)
    }

    pub fn channel_plan(&self) -> ChannelPlan {
        let c = &self.channels;
        ChannelPlan {
            channels: c.count,
            spacing_hz: c.spacing_ghz * 1e9,
            symbol_rate_hz: c.symbol_rate_gbaud * 1e9,
            rolloff: c.rolloff,
        }
    }

    pub fn pulse_shaping(&self) -> PulseShaping {
        PulseShaping {
            symbol_rate_hz: self.channels.symbol_rate_gbaud * 1e9,
            rolloff: self.channels.rolloff,
            samples_per_symbol: self.psd.samples_per_symbol,
        }
    }

    pub fn distances_for(&self, format: &str) -> Vec<f64> {
        let grid = self.format_distances_km.get(format).unwrap_or(&self.distances_km);
        let mut d: Vec<f64> = grid.iter().map(|&v| round_grid(v)).collect();
        d.sort_by(f64::total_cmp);
        d.dedup();
        d
    }

    /// The named format: its table from `format_tables` if listed there,
    /// otherwise the built-in definition.
    pub fn format(&self, name: &str) -> Result<LabeledConstellation4D> {
        let Some(path) = self.format_tables.get(name) else {
            return Ok(builtin(name)?);
        };
        let file = std::fs::File::open(path)
            .map_err(|e| CliError::Config(format!("format table {}: {e}", path.display())))?;
        let mut table = LabeledConstellation4D::read_table(std::io::BufReader::new(file))?;
        table.name = name.to_string();
        Ok(table)
    }

    pub fn constellations(&self) -> Result<Vec<LabeledConstellation4D>> {
        self.formats.iter().map(|f| self.format(f)).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
