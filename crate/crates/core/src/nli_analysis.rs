//! Simplified SPM/XPM phase-noise filters and the spectrum of total-power
//! fluctuations of a 4D format.
//!
//! In the first-order picture the nonlinear phase seen by a channel is
//! `κ · (P_xy(t) ⊗ h(t))`, where `P_xy` is the instantaneous total power of the
//! interfering field (the channel itself for SPM, a neighbour for XPM) and `h`
//! a low-pass filter set by dispersion and attenuation. Only the fluctuation
//! `P_xy − P_avg` produces noise, so a format whose total power fluctuates
//! less, or whose fluctuation spectrum sits outside the filter passband,
//! suffers less phase noise.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{FiberSpec, MANAKOV_FACTOR};
use crate::constellation::LabeledConstellation4D;
use crate::dsp::{db10, rrc_shape, welch_psd, WelchConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NliKind {
    Spm,
    Xpm { delta_f_hz: f64 },
}

/// Frequency response of a phase-noise filter on a symmetric grid.
///
/// `response` is normalized so that its DC value is the effective length in
/// km; the nonlinear coefficient `kappa` (rad/W/km) is kept separately.
#[derive(Debug, Clone, PartialEq)]
pub struct NliFilter {
    pub freqs: Vec<f64>,
    pub response: Vec<Complex64>,
    pub kind: NliKind,
    pub kappa: f64,
}

impl NliFilter {
    /// Response at the grid point closest to DC.
    pub fn dc_gain(&self) -> Complex64 {
        let k = self
            .freqs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        self.response[k]
    }

    /// `20·log10(|H(f)| / |H(0)|)`.
    pub fn normalized_magnitude_db(&self) -> Vec<f64> {
        let dc = self.dc_gain().norm();
        self.response.iter().map(|h| 20.0 * (h.norm() / dc).log10()).collect()
    }

    /// Smallest positive frequency at which `|H|` drops 3 dB below DC.
    pub fn bandwidth_3db_hz(&self) -> Option<f64> {
        let mag = self.normalized_magnitude_db();
        self.freqs
            .iter()
            .zip(&mag)
            .filter(|(f, _)| **f > 0.0)
            .find(|(_, m)| **m <= -10.0 * 2f64.log10())
            .map(|(f, _)| *f)
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|f| !f.is_finite()) {
        return Err(Error::GridMismatch("frequency grid is empty or not finite".into()));
    }
    let scale = grid.iter().fold(0.0f64, |a, f| a.max(f.abs())).max(1.0);
    let n = grid.len();
    for i in 0..n {
        if (grid[i] + grid[n - 1 - i]).abs() > 1e-9 * scale {
            return Err(Error::GridMismatch("frequency grid is not symmetric about 0".into()));
        }
        if i > 0 && grid[i] <= grid[i - 1] {
            return Err(Error::GridMismatch("frequency grid is not strictly ascending".into()));
        }
    }
    Ok(())
}

fn loss_per_km(fiber: &FiberSpec) -> f64 {
    fiber.alpha_per_km().max(0.0)
}

fn effective_length(alpha: f64, length_km: f64) -> f64 {
    if alpha * length_km < 1e-12 {
        length_km
    } else {
        -(-alpha * length_km).exp_m1() / alpha
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Intra-channel (SPM) phase-noise filter of one span.
///
/// The power of a dispersed signal at beat frequency `Ω` is made of field
/// pairs `(ω, ω + Ω)` that have drifted apart by a phase `β₂ Ω ω z`. For a
/// flat signal spectrum of width `W = 2π · bandwidth_hz`, averaging this phase
/// over `ω ∈ [−W/2, W/2]` gives the kernel `G(Ω, z) = sinc(β₂ Ω W z / 2)`, and
///
/// `H(f) = ∫₀^L e^{−αz} · sinc(β₂ Ω W z / 2) dz`,  `Ω = 2πf`,
///
/// evaluated with composite Simpson quadrature. `H(0) = L_eff`, `H` is real,
/// even and decreases monotonically in `|f|`, and it is flat when `D = 0`.
pub fn spm_filter(fiber: &FiberSpec, length_km: f64, grid: &[f64], bandwidth_hz: f64) -> Result<NliFilter> {
    if !(length_km > 0.0) {
        return Err(Error::InvalidParameter(format!("span length must be positive, got {length_km}")));
    }
    if !(bandwidth_hz > 0.0) {
        return Err(Error::InvalidParameter(format!("signal bandwidth must be positive, got {bandwidth_hz}")));
    }
    check_grid(grid)?;
    let alpha = loss_per_km(fiber);
    let beta2 = fiber.beta2();
    let w = 2.0 * PI * bandwidth_hz;
    let response = grid
        .iter()
        .map(|&f| {
            let a = beta2 * 2.0 * PI * f * w / 2.0;
            let total_phase = (a * length_km).abs();
            if total_phase < 1e-9 {
                return Complex64::new(effective_length(alpha, length_km), 0.0);
            }
            let steps = (((total_phase / 0.05).ceil() as usize).max(256) + 1) & !1;
            let h = length_km / steps as f64;
            let g = |z: f64| (-alpha * z).exp() * sinc(a * z);
            let mut acc = g(0.0) + g(length_km);
            for k in 1..steps {
                acc += if k % 2 == 1 { 4.0 } else { 2.0 } * g(k as f64 * h);
            }
            Complex64::new(acc * h / 3.0, 0.0)
        })
        .collect();
    Ok(NliFilter {
        freqs: grid.to_vec(),
        response,
        kind: NliKind::Spm,
        kappa: MANAKOV_FACTOR * fiber.gamma_per_w_km,
    })
}

/// Inter-channel (XPM) walk-off filter for an interferer `delta_f_hz` away:
///
/// `H(ω) = (1 − e^{(−α + jωd)L}) / (α − jωd)`,  `d = 2π β₂ Δf`.
pub fn xpm_filter(fiber: &FiberSpec, length_km: f64, delta_f_hz: f64, grid: &[f64]) -> Result<NliFilter> {
    if delta_f_hz == 0.0 || !delta_f_hz.is_finite() {
        return Err(Error::InvalidParameter("XPM filter needs a non-zero channel offset; use spm_filter".into()));
    }
    if !(length_km > 0.0) {
        return Err(Error::InvalidParameter(format!("span length must be positive, got {length_km}")));
    }
    check_grid(grid)?;
    let alpha = loss_per_km(fiber);
    let d = 2.0 * PI * fiber.beta2() * delta_f_hz;
    let response = grid
        .iter()
        .map(|&f| {
            let s = Complex64::new(-alpha, 2.0 * PI * f * d);
            let sl = s * length_km;
            if sl.norm() < 1e-4 {
                // Series of (e^{sL} − 1)/s.
                length_km * (1.0 + sl / 2.0 + sl * sl / 6.0 + sl * sl * sl / 24.0)
            } else {
                (sl.exp() - 1.0) / s
            }
        })
        .collect();
    Ok(NliFilter {
        freqs: grid.to_vec(),
        response,
        kind: NliKind::Xpm { delta_f_hz },
        kappa: MANAKOV_FACTOR * fiber.gamma_per_w_km,
    })
}

/// Pulse shaping used when synthesizing power waveforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShaping {
    pub symbol_rate_hz: f64,
    pub rolloff: f64,
    pub samples_per_symbol: usize,
}

impl Default for PulseShaping {
    fn default() -> Self {
        Self { symbol_rate_hz: 70e9, rolloff: 0.05, samples_per_symbol: 8 }
    }
}

impl PulseShaping {
    /// One-sided half width of the signal band, `(1 + β) R_s / 2`.
    pub fn band_edge_hz(&self) -> f64 {
        (1.0 + self.rolloff) * self.symbol_rate_hz / 2.0
    }
}

/// Two-sided PSD of `P_xy(t) − P_avg` for unit mean 4D symbol energy.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFluctuationPsd {
    /// Ascending, symmetric about 0 (the lone Nyquist bin is dropped).
    pub freqs: Vec<f64>,
    /// Linear PSD in 1/Hz.
    pub psd: Vec<f64>,
    pub psd_db: Vec<f64>,
    /// Half width of the averaging band.
    pub band_hz: f64,
    /// Linear mean of the PSD over `|f| ≤ band_hz`, in dB.
    pub band_average_db: f64,
}

impl PowerFluctuationPsd {
    pub fn from_linear(freqs: Vec<f64>, psd: Vec<f64>, band_hz: f64) -> Self {
        let psd_db = psd.iter().map(|&p| db10(p)).collect();
        let (sum, count) = freqs
            .iter()
            .zip(&psd)
            .filter(|(f, _)| f.abs() <= band_hz)
            .fold((0.0, 0usize), |(s, c), (_, p)| (s + p, c + 1));
        Self { freqs, psd, psd_db, band_hz, band_average_db: db10(sum / count.max(1) as f64) }
    }
}

/// Draws `n_symbols` uniform i.i.d. symbols, RRC-shapes both polarizations
/// and estimates the spectrum of the total-power fluctuation with Welch's
/// method (Hann window, 4096-sample segments, 50 % overlap).
pub fn power_fluctuation_psd(
    format: &LabeledConstellation4D,
    shaping: &PulseShaping,
    n_symbols: usize,
    seed: u64,
) -> Result<PowerFluctuationPsd> {
    if shaping.samples_per_symbol == 0 || !(0.0..=1.0).contains(&shaping.rolloff) {
        return Err(Error::InvalidParameter(format!("invalid pulse shaping {shaping:?}")));
    }
    if n_symbols == 0 {
        return Err(Error::InvalidParameter("no symbols requested".into()));
    }
    let norm = format.energy_stats().mean.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut xs, mut ys) = (Vec::with_capacity(n_symbols), Vec::with_capacity(n_symbols));
    for _ in 0..n_symbols {
        let p = format.points[rng.random_range(0..format.len())];
        xs.push(Complex64::new(p[0], p[1]) / norm);
        ys.push(Complex64::new(p[2], p[3]) / norm);
    }
    let sps = shaping.samples_per_symbol;
    let x = rrc_shape(&xs, sps, shaping.rolloff);
    let y = rrc_shape(&ys, sps, shaping.rolloff);
    let mut power: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).collect();
    let mean = power.iter().sum::<f64>() / power.len() as f64;
    power.iter_mut().for_each(|p| *p -= mean);
    let fs = sps as f64 * shaping.symbol_rate_hz;
    let (mut freqs, mut psd) = welch_psd(&power, fs, WelchConfig::default());
    if freqs.len() % 2 == 0 {
        freqs.remove(0);
        psd.remove(0);
    }
    Ok(PowerFluctuationPsd::from_linear(freqs, psd, shaping.band_edge_hz()))
}

/// Relative phase-noise power `κ² Σ PSD(f) |H(f)|² Δf` driven by the
/// total-power fluctuation through `filter`.
pub fn predicted_phase_noise_power(psd: &PowerFluctuationPsd, filter: &NliFilter) -> Result<f64> {
    if psd.freqs.len() != filter.freqs.len()
        || psd.freqs.iter().zip(&filter.freqs).any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0))
    {
        return Err(Error::GridMismatch("PSD and filter frequency grids differ".into()));
    }
    let df = if psd.freqs.len() > 1 { psd.freqs[1] - psd.freqs[0] } else { 1.0 };
    let sum: f64 = psd.psd.iter().zip(&filter.response).map(|(p, h)| p * h.norm_sqr()).sum();
    Ok(filter.kappa * filter.kappa * sum * df)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, half: f64) -> Vec<f64> {
        (0..2 * n + 1).map(|k| (k as f64 - n as f64) * half / n as f64).collect()
    }

    #[test]
    fn dc_is_effective_length() {
        let fiber = FiberSpec::ssmf();
        let g = grid(50, 40e9);
        let leff = fiber.effective_length(80.0);
        let spm = spm_filter(&fiber, 80.0, &g, 73.5e9).unwrap();
        let xpm = xpm_filter(&fiber, 80.0, 75e9, &g).unwrap();
        assert!((spm.dc_gain().re / leff - 1.0).abs() < 1e-9);
        assert!((xpm.dc_gain().re / leff - 1.0).abs() < 1e-9);
        assert!(xpm.dc_gain().im.abs() < 1e-9 * leff);
    }

    #[test]
    fn rejects_bad_inputs() {
        let fiber = FiberSpec::ssmf();
        let g = grid(4, 1e9);
        assert!(xpm_filter(&fiber, 80.0, 0.0, &g).is_err());
        assert!(spm_filter(&fiber, 0.0, &g, 1e9).is_err());
        assert!(matches!(spm_filter(&fiber, 80.0, &[0.0, 1.0], 1e9), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn lossless_xpm_is_sinc() {
        let mut fiber = FiberSpec::ssmf();
        fiber.attenuation_db_per_km = 0.0;
        let g = grid(20, 10e9);
        let h = xpm_filter(&fiber, 50.0, 75e9, &g).unwrap();
        let d = 2.0 * PI * fiber.beta2() * 75e9;
        for (f, v) in g.iter().zip(&h.response) {
            let x = 2.0 * PI * f * d;
            let expect = 50.0 * sinc(x * 50.0 / 2.0);
            assert!((v.norm() - expect.abs()).abs() < 1e-9 * 50.0, "{f}");
        }
    }
}
