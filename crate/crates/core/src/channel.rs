//! Fiber link model: dual-polarization Manakov propagation solved with a
//! symmetric split-step Fourier method, followed by an EDFA that restores the
//! launch power and adds ASE noise.
//!
//! Conventions: the field envelope obeys
//! `∂A/∂z = −(α/2)A − j(β₂/2)∂²A/∂t² + j(8/9)γ(|Ax|² + |Ay|²)A`,
//! so in the FFT domain (`X[k] = Σ x[n]e^{−j2πkn/N}`) the linear operator is
//! `exp((−α/2 + jβ₂ω²/2)z)`. Lengths are in km, `α` in 1/km (power),
//! `β₂` in s²/km and `γ` in 1/(W·km).

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::{fft_freqs, FftPair};
use crate::error::{Error, Result};
use crate::txrx::WaveformGrid;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Manakov averaging factor for the Kerr term.
pub const MANAKOV_FACTOR: f64 = 8.0 / 9.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FiberSpec {
    pub name: String,
    pub attenuation_db_per_km: f64,
    /// Dispersion parameter D in ps/(nm·km).
    pub dispersion_ps_nm_km: f64,
    pub gamma_per_w_km: f64,
    pub wavelength_nm: f64,
}

impl FiberSpec {
    pub fn ssmf() -> Self {
        Self {
            name: "SSMF".into(),
            attenuation_db_per_km: 0.21,
            dispersion_ps_nm_km: 16.9,
            gamma_per_w_km: 1.31,
            wavelength_nm: 1550.0,
        }
    }

    pub fn nzdsf() -> Self {
        Self {
            name: "NZDSF".into(),
            attenuation_db_per_km: 0.2,
            dispersion_ps_nm_km: 3.9,
            gamma_per_w_km: 1.6,
            wavelength_nm: 1550.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.attenuation_db_per_km >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "attenuation must be ≥ 0, got {}",
                self.attenuation_db_per_km
            )));
        }
        if !(self.wavelength_nm > 0.0) {
            return Err(Error::InvalidParameter(format!("wavelength must be > 0, got {}", self.wavelength_nm)));
        }
        Ok(())
    }

    /// Power attenuation coefficient in 1/km.
    pub fn alpha_per_km(&self) -> f64 {
        self.attenuation_db_per_km * std::f64::consts::LN_10 / 10.0
    }

    /// Group-velocity dispersion `β₂ = −Dλ²/(2πc)` in s²/km.
    pub fn beta2(&self) -> f64 {
        beta2(self)
    }

    /// `(1 − e^{−αL})/α`, or `L` for a lossless fiber.
    pub fn effective_length(&self, length_km: f64) -> f64 {
        let a = self.alpha_per_km();
        if a <= 0.0 {
            length_km
        } else {
            -(-a * length_km).exp_m1() / a
        }
    }

    pub fn carrier_frequency_hz(&self) -> f64 {
        SPEED_OF_LIGHT / (self.wavelength_nm * 1e-9)
    }
}

/// `β₂ = −Dλ²/(2πc)`, in s²/km.
pub fn beta2(fiber: &FiberSpec) -> f64 {
    // ps/(nm·km) → s/(m·km)
    let d = fiber.dispersion_ps_nm_km * 1e-3;
    let lambda = fiber.wavelength_nm * 1e-9;
    -d * lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FiberPreset {
    Ssmf,
    Nzdsf,
}

impl FiberPreset {
    pub fn fiber(self) -> FiberSpec {
        match self {
            FiberPreset::Ssmf => FiberSpec::ssmf(),
            FiberPreset::Nzdsf => FiberSpec::nzdsf(),
        }
    }
}

impl std::str::FromStr for FiberPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SSMF" => Ok(FiberPreset::Ssmf),
            "NZDSF" => Ok(FiberPreset::Nzdsf),
            _ => Err(Error::InvalidParameter(format!("unknown fiber preset {s:?}"))),
        }
    }
}

/// EDFA at the end of each span. A noise figure of 0 dB disables ASE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amplifier {
    pub noise_figure_db: f64,
}

impl Amplifier {
    pub fn noiseless() -> Self {
        Self { noise_figure_db: 0.0 }
    }

    pub fn is_noiseless(&self) -> bool {
        self.noise_figure_db == 0.0
    }

    /// Spontaneous emission factor `n_sp = 10^(NF/10)/2`.
    pub fn n_sp(&self) -> f64 {
        10f64.powf(self.noise_figure_db / 10.0) / 2.0
    }

    /// One-sided ASE PSD per polarization, `(G − 1)·hν·n_sp`, in W/Hz.
    pub fn ase_psd(&self, gain: f64, carrier_hz: f64) -> f64 {
        if self.is_noiseless() {
            0.0
        } else {
            (gain - 1.0) * PLANCK * carrier_hz * self.n_sp()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepPolicy {
    /// Each step is the largest that keeps the nonlinear phase of the mean
    /// total power below `max_phase_rad`, capped at `max_step_km`.
    Adaptive { max_phase_rad: f64, max_step_km: f64 },
    /// Uniform steps; a step whose nonlinear phase exceeds `max_phase_rad`
    /// aborts the propagation.
    Fixed { step_km: f64, max_phase_rad: f64 },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Adaptive { max_phase_rad: 1e-3, max_step_km: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub fiber: FiberSpec,
    pub length_km: f64,
    /// Number of equal spans; each is followed by an amplifier.
    pub spans: usize,
    /// `None` leaves the span output unamplified.
    pub amplifier: Option<Amplifier>,
    pub steps: StepPolicy,
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        self.fiber.validate()?;
        if !(self.length_km > 0.0) {
            return Err(Error::InvalidParameter(format!("link length must be > 0, got {}", self.length_km)));
        }
        if self.spans == 0 {
            return Err(Error::InvalidParameter("at least one span is required".into()));
        }
        if let Some(amp) = self.amplifier {
            if !amp.is_noiseless() && amp.noise_figure_db < 3.0 {
                return Err(Error::InvalidParameter(format!(
                    "noise figure {} dB is below the 3 dB quantum limit",
                    amp.noise_figure_db
                )));
            }
        }
        match self.steps {
            StepPolicy::Adaptive { max_phase_rad, max_step_km } if max_phase_rad > 0.0 && max_step_km > 0.0 => {}
            StepPolicy::Fixed { step_km, max_phase_rad } if step_km > 0.0 && max_phase_rad > 0.0 => {}
            other => return Err(Error::InvalidParameter(format!("invalid step policy {other:?}"))),
        }
        Ok(())
    }

    pub fn span_length_km(&self) -> f64 {
        self.length_km / self.spans as f64
    }

    /// Amplifier gain restoring the launch power after one span.
    pub fn span_gain(&self) -> f64 {
        (self.fiber.alpha_per_km() * self.span_length_km()).exp()
    }
}

/// Table values for the named fiber, one unrepeated span with a 4.5 dB NF
/// EDFA at the receiver.
pub fn make_link(preset: FiberPreset, length_km: f64) -> LinkConfig {
    LinkConfig {
        fiber: preset.fiber(),
        length_km,
        spans: 1,
        amplifier: Some(Amplifier { noise_figure_db: 4.5 }),
        steps: StepPolicy::default(),
    }
}

fn mean_total_power(x: &[Complex64], y: &[Complex64]) -> f64 {
    let sum: f64 = x.iter().zip(y).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).sum();
    sum / x.len() as f64
}

/// Split-step state for one waveform.
struct Stepper {
    fft: FftPair,
    omega2: Vec<f64>,
    half_alpha: f64,
    half_beta2: f64,
    /// Recently used operators keyed by step length; adaptive steps repeat
    /// over long stretches, so two slots cover the transitions.
    cached: Vec<(f64, Vec<Complex64>)>,
    scratch: Vec<Complex64>,
}

impl Stepper {
    fn new(len: usize, sample_rate: f64, center_offset: f64, fiber: &FiberSpec) -> Self {
        let omega2 =
            fft_freqs(len, sample_rate).into_iter().map(|f| (2.0 * PI * (f + center_offset)).powi(2)).collect();
        let fft = FftPair::new(len);
        Self {
            scratch: fft.scratch(),
            fft,
            omega2,
            half_alpha: fiber.alpha_per_km() / 2.0,
            half_beta2: fiber.beta2() / 2.0,
            cached: Vec::with_capacity(2),
        }
    }

    fn linear(&mut self, x: &mut [Complex64], y: &mut [Complex64], dz: f64) {
        if dz == 0.0 {
            return;
        }
        let slot = match self.cached.iter().position(|(h, _)| *h == dz) {
            Some(k) => k,
            None => {
                // The inverse-FFT normalization is folded into the operator.
                let amp = (-self.half_alpha * dz).exp() / self.omega2.len() as f64;
                let op = self.omega2.iter().map(|w2| Complex64::from_polar(amp, self.half_beta2 * w2 * dz)).collect();
                if self.cached.len() == 2 {
                    self.cached.remove(0);
                }
                self.cached.push((dz, op));
                self.cached.len() - 1
            }
        };
        let op = &self.cached[slot].1;
        for field in [x, y] {
            self.fft.forward_with(field, &mut self.scratch);
            field.iter_mut().zip(op).for_each(|(v, h)| *v *= h);
            self.fft.inverse_unscaled_with(field, &mut self.scratch);
        }
    }
}

/// `e^{jθ}`; small angles use a truncated Taylor series whose remainder is
/// below one ulp.
fn small_cis(theta: f64) -> Complex64 {
    if theta.abs() >= 0.1 {
        return Complex64::cis(theta);
    }
    let t2 = theta * theta;
    let cos = 1.0 - t2 / 2.0 * (1.0 - t2 / 12.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0 * (1.0 - t2 / 90.0))));
    let sin = theta * (1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0 * (1.0 - t2 / 110.0)))));
    Complex64::new(cos, sin)
}

fn nonlinear(x: &mut [Complex64], y: &mut [Complex64], coeff: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let rot = small_cis(coeff * (a.norm_sqr() + b.norm_sqr()));
        *a *= rot;
        *b *= rot;
    }
}

/// Largest step of the form `max_step · 2^(−k/LADDER_DIVISIONS)` not
/// exceeding `limit`, so that successive adaptive steps reuse operators.
fn ladder_step(limit: f64, max_step: f64) -> f64 {
    if limit >= max_step {
        return max_step;
    }
    let k = (LADDER_DIVISIONS * (max_step / limit).log2()).ceil();
    let dz = max_step * (-k / LADDER_DIVISIONS).exp2();
    if dz > limit { max_step * (-(k + 1.0) / LADDER_DIVISIONS).exp2() } else { dz }
}

const LADDER_DIVISIONS: f64 = 16.0;

/// Propagates one span without amplification.
fn propagate_span(wave: &mut WaveformGrid, fiber: &FiberSpec, length_km: f64, steps: StepPolicy) -> Result<()> {
    let gamma = MANAKOV_FACTOR * fiber.gamma_per_w_km;
    let mut stepper = Stepper::new(wave.len(), wave.sample_rate_hz, wave.center_offset_hz, fiber);
    let (x, y) = (&mut wave.x, &mut wave.y);
    // Dispersion and the Kerr rotation are lossless, so the mean power
    // follows the attenuation exactly.
    let launch = mean_total_power(x, y);
    let alpha = fiber.alpha_per_km();
    let mut z = 0.0;
    let mut pending = 0.0;
    while z < length_km {
        let remaining = length_km - z;
        let power = launch * (-alpha * z).exp();
        let dz = match steps {
            StepPolicy::Adaptive { max_phase_rad, max_step_km } => {
                let limit = if gamma * power > 0.0 { max_phase_rad / (gamma * power) } else { f64::INFINITY };
                let dz = ladder_step(limit, max_step_km);
                // Avoid a sliver of a final step.
                if dz >= remaining || remaining - dz < 1e-9 * length_km { remaining } else { dz }
            }
            StepPolicy::Fixed { step_km, max_phase_rad } => {
                let dz = step_km.min(remaining);
                let phase = gamma * power * dz;
                if phase > max_phase_rad {
                    return Err(Error::StepTooLong { step_km: dz, phase, limit: max_phase_rad });
                }
                if remaining - dz < 1e-9 * length_km { remaining } else { dz }
            }
        };
        stepper.linear(x, y, pending + dz / 2.0);
        nonlinear(x, y, gamma * dz);
        pending = dz / 2.0;
        z += dz;
    }
    stepper.linear(x, y, pending);
    Ok(())
}

/// Propagates a waveform through the link: split-step Manakov solution per
/// span, then flat EDFA gain equal to the span loss plus circular complex
/// Gaussian ASE of variance `S_ASE · f_s` per polarization and sample.
pub fn propagate(wave: &WaveformGrid, link: &LinkConfig, seed: u64) -> Result<WaveformGrid> {
    link.validate()?;
    let mut out = wave.clone();
    let span = link.span_length_km();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..link.spans {
        propagate_span(&mut out, &link.fiber, span, link.steps)?;
        if let Some(amp) = link.amplifier {
            let gain = link.span_gain();
            let g = gain.sqrt();
            out.x.iter_mut().chain(out.y.iter_mut()).for_each(|v| *v *= g);
            let variance = amp.ase_psd(gain, link.fiber.carrier_frequency_hz()) * out.sample_rate_hz;
            if variance > 0.0 {
                let sigma = (variance / 2.0).sqrt();
                for v in out.x.iter_mut().chain(out.y.iter_mut()) {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *v += Complex64::new(sigma * re, sigma * im);
                }
            }
        }
    }
    Ok(out)
}

/// Applies `exp(±jβ₂ω²L/2)` to both polarizations; `sign = +1` is forward
/// dispersion, `−1` undoes it.
pub(crate) fn apply_dispersion(wave: &mut WaveformGrid, fiber: &FiberSpec, length_km: f64, sign: f64) {
    let half_beta2 = fiber.beta2() / 2.0;
    let fft = FftPair::new(wave.len());
    let op: Vec<Complex64> = fft_freqs(wave.len(), wave.sample_rate_hz)
        .into_iter()
        .map(|f| {
            let w = 2.0 * PI * (f + wave.center_offset_hz);
            Complex64::cis(sign * half_beta2 * w * w * length_km)
        })
        .collect();
    for field in [&mut wave.x, &mut wave.y] {
        fft.forward(field);
        field.iter_mut().zip(&op).for_each(|(v, h)| *v *= h);
        fft.inverse(field);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(n: usize, seed: u64) -> WaveformGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im) * 0.01
        };
        let x = (0..n).map(|_| draw()).collect();
        let y = (0..n).map(|_| draw()).collect();
        WaveformGrid { x, y, sample_rate_hz: 100e9, center_offset_hz: 0.0, channels: 1 }
    }

    #[test]
    fn small_angle_rotation_is_exact() {
        for k in -2000..=2000 {
            let theta = k as f64 * 1e-4 + 1.234e-7;
            let (s, c) = theta.sin_cos();
            let r = small_cis(theta);
            assert!((r.re - c).abs() < 4e-16 && (r.im - s).abs() < 4e-16, "{theta}");
        }
    }

    #[test]
    fn ladder_steps_never_exceed_the_limit() {
        for k in 1..5000 {
            let limit = k as f64 * 1.3e-4;
            let dz = ladder_step(limit, 0.5);
            assert!(dz <= limit.min(0.5) && dz > limit.min(0.5) * 0.95, "{limit} {dz}");
        }
    }

    #[test]
    fn presets_match_table_values() {
        let s = make_link(FiberPreset::Ssmf, 80.0);
        assert_eq!(s.fiber.attenuation_db_per_km, 0.21);
        assert_eq!(s.fiber.dispersion_ps_nm_km, 16.9);
        assert_eq!(s.fiber.gamma_per_w_km, 1.31);
        assert_eq!(s.fiber.wavelength_nm, 1550.0);
        assert_eq!(s.amplifier.unwrap().noise_figure_db, 4.5);
        let n = make_link(FiberPreset::Nzdsf, 80.0);
        assert_eq!(n.fiber.attenuation_db_per_km, 0.2);
        assert_eq!(n.fiber.dispersion_ps_nm_km, 3.9);
        assert_eq!(n.fiber.gamma_per_w_km, 1.6);
        assert_eq!(n.fiber.wavelength_nm, 1550.0);
        assert_eq!("nzdsf".parse::<FiberPreset>().unwrap(), FiberPreset::Nzdsf);
        assert!("dsf".parse::<FiberPreset>().is_err());
    }

    #[test]
    fn beta2_unit_conversion() {
        // Independent route: D [s/m²] = 16.9 ps/(nm·km) = 16.9e-12 / (1e-9 · 1e3);
        // β₂ [s²/m] = −Dλ²/(2πc); ×1e3 for s²/km; ×1e24 for ps²/km.
        let d_si = 16.9e-12 / (1e-9 * 1e3);
        let expected_ps2_km = -d_si * 1550e-9f64.powi(2) / (2.0 * PI * 299_792_458.0) * 1e3 * 1e24;
        let got = FiberSpec::ssmf().beta2() * 1e24;
        assert!((got - expected_ps2_km).abs() < 1e-9);
        assert!((got + 21.6).abs() < 0.1, "{got}");
        let mut f = FiberSpec::ssmf();
        f.dispersion_ps_nm_km = 0.0;
        assert_eq!(f.beta2(), 0.0);
        f.dispersion_ps_nm_km = -3.0;
        assert!(f.beta2() > 0.0);
    }

    #[test]
    fn loss_only_attenuates_exactly() {
        let w = wave(4096, 1);
        let mut fiber = FiberSpec::ssmf();
        fiber.dispersion_ps_nm_km = 0.0;
        fiber.gamma_per_w_km = 0.0;
        let link = LinkConfig { fiber, length_km: 57.3, spans: 1, amplifier: None, steps: StepPolicy::default() };
        let out = propagate(&w, &link, 0).unwrap();
        let loss_db = 10.0 * (w.mean_total_power() / out.mean_total_power()).log10();
        assert!((loss_db - 0.21 * 57.3).abs() < 1e-6, "{loss_db}");
    }

    #[test]
    fn fixed_step_aborts_when_phase_too_large() {
        let mut w = wave(1024, 2);
        w.x.iter_mut().for_each(|v| *v *= 100.0);
        let mut link = make_link(FiberPreset::Ssmf, 10.0);
        link.steps = StepPolicy::Fixed { step_km: 1.0, max_phase_rad: 1e-3 };
        assert!(matches!(propagate(&w, &link, 0), Err(Error::StepTooLong { .. })));
    }

    #[test]
    fn rejects_invalid_links() {
        let mut link = make_link(FiberPreset::Ssmf, 0.0);
        assert!(link.validate().is_err());
        link.length_km = 10.0;
        link.amplifier = Some(Amplifier { noise_figure_db: 2.0 });
        assert!(link.validate().is_err());
        link.amplifier = Some(Amplifier::noiseless());
        assert!(link.validate().is_ok());
        link.fiber.attenuation_db_per_km = -0.1;
        assert!(link.validate().is_err());
    }

    #[test]
    fn same_seed_same_output() {
        let w = wave(2048, 3);
        let link = make_link(FiberPreset::Nzdsf, 20.0);
        let a = propagate(&w, &link, 9).unwrap();
        let b = propagate(&w, &link, 9).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        let c = propagate(&w, &link, 10).unwrap();
        assert_ne!(a.x, c.x);
    }
}
