//! Small signal-processing helpers shared by the transmitter, receiver,
//! channel and PSD analysis.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and normalized inverse FFT of a fixed length.
#[derive(Clone)]
pub struct FftPair {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    len: usize,
}

impl FftPair {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { fwd: planner.plan_fft_forward(len), inv: planner.plan_fft_inverse(len), len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `X[k] = Σ x[n] e^{−j2πkn/N}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.fwd.process(buf);
    }

    /// Scratch buffer sized for the in-place transforms below.
    pub fn scratch(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len())]
    }

    /// Forward transform reusing a caller-owned scratch buffer.
    pub fn forward_with(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.fwd.process_with_scratch(buf, scratch);
    }

    /// Inverse transform without the `1/N` factor, reusing `scratch`.
    pub fn inverse_unscaled_with(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inv.process_with_scratch(buf, scratch);
    }

    /// Inverse including the `1/N` factor.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inv.process(buf);
        let scale = 1.0 / self.len as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Bin frequencies in FFT order (`0, df, …, −df`), in Hz.
pub fn fft_freqs(len: usize, sample_rate: f64) -> Vec<f64> {
    let df = sample_rate / len as f64;
    (0..len)
        .map(|k| if k < len.div_ceil(2) { k as f64 * df } else { (k as f64 - len as f64) * df })
        .collect()
}

/// Root-raised-cosine amplitude response with unit passband gain.
pub fn rrc_response(f: f64, symbol_rate: f64, rolloff: f64) -> f64 {
    let a = f.abs() / symbol_rate;
    let f1 = (1.0 - rolloff) / 2.0;
    let f2 = (1.0 + rolloff) / 2.0;
    if a <= f1 {
        1.0
    } else if a <= f2 {
        (0.5 * (1.0 + (PI / rolloff * (a - f1)).cos())).sqrt()
    } else {
        0.0
    }
}

/// Frequency-domain RRC pulse shaping of a symbol sequence at
/// `sps` samples per symbol (circular).
///
/// The output has mean power equal to the mean symbol energy, and matched
/// filtering with [`rrc_matched`] followed by sampling every `sps` samples
/// returns the symbols exactly.
pub fn rrc_shape(symbols: &[Complex64], sps: usize, rolloff: f64) -> Vec<Complex64> {
    let n = symbols.len() * sps;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (k, &s) in symbols.iter().enumerate() {
        buf[k * sps] = s;
    }
    let fft = FftPair::new(n);
    fft.forward(&mut buf);
    apply_rrc(&mut buf, sps, rolloff, sps as f64);
    fft.inverse(&mut buf);
    buf
}

/// Multiplies a spectrum (FFT order, sample rate `sps` in symbol-rate units)
/// by `gain` times the RRC response.
pub fn apply_rrc(spectrum: &mut [Complex64], sps: usize, rolloff: f64, gain: f64) {
    let freqs = fft_freqs(spectrum.len(), sps as f64);
    for (v, f) in spectrum.iter_mut().zip(freqs) {
        *v *= gain * rrc_response(f, 1.0, rolloff);
    }
}

/// Matched RRC filter on a waveform sampled at `sps` samples per symbol.
pub fn rrc_matched(wave: &[Complex64], sps: usize, rolloff: f64) -> Vec<Complex64> {
    let fft = FftPair::new(wave.len());
    let mut buf = wave.to_vec();
    fft.forward(&mut buf);
    apply_rrc(&mut buf, sps, rolloff, 1.0);
    fft.inverse(&mut buf);
    buf
}

/// Welch PSD estimate settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchConfig {
    pub segment: usize,
    /// Overlap between segments as a fraction of the segment length.
    pub overlap: f64,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self { segment: 4096, overlap: 0.5 }
    }
}

/// Two-sided Welch PSD of a real signal with a periodic Hann window.
///
/// Returns `(frequencies, psd)` with frequencies ascending from `−fs/2`,
/// PSD in units²/Hz.
pub fn welch_psd(signal: &[f64], sample_rate: f64, cfg: WelchConfig) -> (Vec<f64>, Vec<f64>) {
    let seg = cfg.segment.min(signal.len());
    let hop = ((seg as f64) * (1.0 - cfg.overlap)).round().max(1.0) as usize;
    let window: Vec<f64> = (0..seg).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / seg as f64).cos()).collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPair::new(seg);
    let mut acc = vec![0.0; seg];
    let mut count = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); seg];
    let mut start = 0;
    while start + seg <= signal.len() {
        for (b, (s, w)) in buf.iter_mut().zip(signal[start..start + seg].iter().zip(&window)) {
            *b = Complex64::new(s * w, 0.0);
        }
        fft.forward(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    let scale = 1.0 / (sample_rate * window_power * count as f64);
    let freqs = fft_freqs(seg, sample_rate);
    let mut pairs: Vec<(f64, f64)> = freqs.into_iter().zip(acc.into_iter().map(|a| a * scale)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

pub fn db10(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db10(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rrc_squared_is_nyquist() {
        // The folded raised-cosine spectrum is flat.
        for i in 0..100 {
            let f = i as f64 / 100.0 - 0.5;
            let folded: f64 = (-2..=2).map(|k| rrc_response(f + k as f64, 1.0, 0.05).powi(2)).sum();
            assert!((folded - 1.0).abs() < 1e-12, "{f} {folded}");
        }
    }

    #[test]
    fn shape_then_match_recovers_symbols() {
        let symbols: Vec<Complex64> =
            (0..256).map(|k| Complex64::new(((k * 7) % 5) as f64 - 2.0, ((k * 3) % 4) as f64 - 1.5)).collect();
        let shaped = rrc_shape(&symbols, 4, 0.05);
        let mean_power = shaped.iter().map(|v| v.norm_sqr()).sum::<f64>() / shaped.len() as f64;
        let sym_energy = symbols.iter().map(|v| v.norm_sqr()).sum::<f64>() / symbols.len() as f64;
        assert!((mean_power / sym_energy - 1.0).abs() < 0.05);
        let matched = rrc_matched(&shaped, 4, 0.05);
        for (k, s) in symbols.iter().enumerate() {
            assert!((matched[4 * k] - s).norm() < 1e-9);
        }
    }

    #[test]
    fn welch_white_noise_level() {
        // Deterministic pseudo-noise with unit variance: PSD ≈ 1/fs.
        let mut state = 12345u64;
        let signal: Vec<f64> = (0..1 << 16)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 12f64.sqrt()
            })
            .collect();
        let (f, p) = welch_psd(&signal, 2.0, WelchConfig { segment: 1024, overlap: 0.5 });
        assert_eq!(f.len(), 1024);
        assert!((f[0] + 1.0).abs() < 1e-12);
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        assert!((mean * 2.0 - 1.0).abs() < 0.02, "{mean}");
    }
}
