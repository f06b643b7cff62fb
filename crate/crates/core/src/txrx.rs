//! Transmitter and receiver DSP.
//!
//! The transmitter draws independent bits per WDM channel, maps them onto the
//! 4D format, RRC-shapes both polarizations and places each channel on its
//! slot of a common sample grid. The receiver undoes chromatic dispersion,
//! brings one channel to baseband, matched-filters, picks the sampling phase
//! and symbol lag by cross-correlation, and removes one complex gain per
//! polarization, fitted by least squares to the known transmitted symbols.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{apply_dispersion, FiberSpec};
use crate::constellation::LabeledConstellation4D;
use crate::dsp::{apply_rrc, rrc_response, FftPair};
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// WDM channel plan. Channels sit symmetrically around the grid center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPlan {
    pub channels: usize,
    pub spacing_hz: f64,
    pub symbol_rate_hz: f64,
    pub rolloff: f64,
}

impl ChannelPlan {
    /// Five 70 GBaud channels on a 75 GHz grid with roll-off 0.05.
    pub fn reference() -> Self {
        Self { channels: 5, spacing_hz: 75e9, symbol_rate_hz: 70e9, rolloff: 0.05 }
    }

    pub fn single(symbol_rate_hz: f64, rolloff: f64) -> Self {
        Self { channels: 1, spacing_hz: 0.0, symbol_rate_hz, rolloff }
    }

    /// Total occupied bandwidth from the lowest to the highest channel edge.
    pub fn occupied_band_hz(&self) -> f64 {
        (self.channels as f64 - 1.0) * self.spacing_hz + self.symbol_rate_hz * (1.0 + self.rolloff)
    }

    /// Nominal center frequency of channel `c` relative to the grid center.
    pub fn channel_offset_hz(&self, c: usize) -> f64 {
        (c as f64 - (self.channels as f64 - 1.0) / 2.0) * self.spacing_hz
    }

    pub fn center_channel(&self) -> usize {
        self.channels / 2
    }
}

/// Uniformly sampled dual-polarization complex baseband field.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformGrid {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub sample_rate_hz: f64,
    /// Offset of the grid center from the reference carrier.
    pub center_offset_hz: f64,
    /// Number of WDM channels carried, used as the launch power reference.
    pub channels: usize,
}

const DUMP_MAGIC: &[u8; 8] = b"QCMWAVE1";

impl WaveformGrid {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Mean of `|Ex|² + |Ey|²` over the grid.
    pub fn mean_total_power(&self) -> f64 {
        self.x.iter().zip(&self.y).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).sum::<f64>() / self.len() as f64
    }

    /// Instantaneous total power `P_xy(t)`.
    pub fn total_power(&self) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).collect()
    }

    pub fn rotate(&mut self, phase: f64) {
        let r = Complex64::cis(phase);
        self.x.iter_mut().chain(self.y.iter_mut()).for_each(|v| *v *= r);
    }

    /// Binary dump: magic, `u64` length, `f64` sample rate and center offset,
    /// then little-endian complex64 samples interleaved `x, y`.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.sample_rate_hz.to_le_bytes())?;
        w.write_all(&self.center_offset_hz.to_le_bytes())?;
        for (a, b) in self.x.iter().zip(&self.y) {
            for v in [a.re, a.im, b.re, b.im] {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::InvalidParameter("not a waveform dump".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let sample_rate_hz = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let center_offset_hz = f64::from_le_bytes(b8);
        let mut x = Vec::with_capacity(len);
        let mut y = Vec::with_capacity(len);
        let mut b4 = [0u8; 4];
        let mut next = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut b4)?;
            Ok(f32::from_le_bytes(b4) as f64)
        };
        for _ in 0..len {
            x.push(Complex64::new(next(&mut r)?, next(&mut r)?));
            y.push(Complex64::new(next(&mut r)?, next(&mut r)?));
        }
        Ok(Self { x, y, sample_rate_hz, center_offset_hz, channels: 1 })
    }
}

/// What was sent: per-channel bits, point indices and 4D symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct TxFrame {
    pub plan: ChannelPlan,
    pub samples_per_symbol: usize,
    pub seed: u64,
    pub bits: Vec<Vec<u8>>,
    pub indices: Vec<Vec<usize>>,
    pub symbols: Vec<Vec<[f64; 4]>>,
    /// Frequency offset of each channel in FFT bins of the sample grid.
    pub bin_offsets: Vec<isize>,
}

impl TxFrame {
    pub fn n_symbols(&self) -> usize {
        self.symbols.first().map_or(0, Vec::len)
    }
}

/// Generates a WDM frame.
///
/// Channel slots are snapped to the nearest FFT bin of the grid so that the
/// circular processing stays exact; the snapping error is below one bin
/// (`sample rate / samples`). Each channel uses its own ChaCha stream of the
/// master seed. The result has unit mean symbol energy per channel; use
/// [`set_launch_power`] to scale it.
pub fn transmit(
    format: &LabeledConstellation4D,
    plan: &ChannelPlan,
    n_symbols: usize,
    oversampling: usize,
    seed: u64,
) -> Result<(TxFrame, WaveformGrid)> {
    if plan.channels == 0 {
        return Err(Error::InvalidParameter("channel plan has no channels".into()));
    }
    if !n_symbols.is_power_of_two() {
        return Err(Error::InvalidParameter(format!("symbol count {n_symbols} is not a power of two")));
    }
    if !(0.0..=1.0).contains(&plan.rolloff) || plan.symbol_rate_hz <= 0.0 {
        return Err(Error::InvalidParameter(format!("invalid channel plan {plan:?}")));
    }
    let sample_rate = oversampling as f64 * plan.symbol_rate_hz;
    let band = plan.occupied_band_hz();
    if oversampling == 0 || band >= sample_rate {
        return Err(Error::Aliasing { band_hz: band, sample_rate_hz: sample_rate });
    }
    let n = n_symbols * oversampling;
    let fft = FftPair::new(n);
    let mut spec_x = vec![ZERO; n];
    let mut spec_y = vec![ZERO; n];
    let width = format.bits as usize;
    let mut frame = TxFrame {
        plan: *plan,
        samples_per_symbol: oversampling,
        seed,
        bits: Vec::new(),
        indices: Vec::new(),
        symbols: Vec::new(),
        bin_offsets: Vec::new(),
    };
    for c in 0..plan.channels {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let bits: Vec<u8> = (0..n_symbols * width).map(|_| rng.random::<bool>() as u8).collect();
        let indices = format.map_bits(&bits)?;
        let symbols: Vec<[f64; 4]> = indices.iter().map(|&i| format.points[i]).collect();
        let bin = (plan.channel_offset_hz(c) * n as f64 / sample_rate).round() as isize;

        for (pol, spec) in [(0, &mut spec_x), (2, &mut spec_y)] {
            let mut buf = vec![ZERO; n];
            for (k, s) in symbols.iter().enumerate() {
                buf[k * oversampling] = Complex64::new(s[pol], s[pol + 1]);
            }
            fft.forward(&mut buf);
            apply_rrc(&mut buf, oversampling, plan.rolloff, oversampling as f64);
            for (k, v) in buf.into_iter().enumerate() {
                spec[(k as isize + bin).rem_euclid(n as isize) as usize] += v;
            }
        }
        frame.bits.push(bits);
        frame.indices.push(indices);
        frame.symbols.push(symbols);
        frame.bin_offsets.push(bin);
    }
    fft.inverse(&mut spec_x);
    fft.inverse(&mut spec_y);
    let wave = WaveformGrid {
        x: spec_x,
        y: spec_y,
        sample_rate_hz: sample_rate,
        center_offset_hz: 0.0,
        channels: plan.channels,
    };
    Ok((frame, wave))
}

/// Rescales the field so that the average power per channel is `dbm`.
pub fn set_launch_power(wave: &WaveformGrid, dbm: f64) -> WaveformGrid {
    let target = 1e-3 * 10f64.powf(dbm / 10.0) * wave.channels as f64;
    let scale = (target / wave.mean_total_power()).sqrt();
    let mut out = wave.clone();
    out.x.iter_mut().chain(out.y.iter_mut()).for_each(|v| *v *= scale);
    out
}

/// Ideal chromatic dispersion compensation for `length_km` of `fiber`.
pub fn cd_compensate(wave: &WaveformGrid, fiber: &FiberSpec, length_km: f64) -> WaveformGrid {
    let mut out = wave.clone();
    if length_km != 0.0 && fiber.dispersion_ps_nm_km != 0.0 {
        apply_dispersion(&mut out, fiber, length_km, -1.0);
    }
    out
}

/// Aligned transmitted and received 4D symbols of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DspOutput {
    pub tx: Vec<[f64; 4]>,
    pub tx_indices: Vec<usize>,
    pub rx: Vec<[f64; 4]>,
    /// Complex equalizer gain applied to each polarization (inverse of the
    /// least-squares channel gain).
    pub scale: [Complex64; 2],
    pub channel: usize,
    pub sample_phase: usize,
    pub symbol_lag: usize,
}

impl DspOutput {
    pub fn len(&self) -> usize {
        self.tx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tx.is_empty()
    }
}

fn to_c(s: &[f64; 4], pol: usize) -> Complex64 {
    Complex64::new(s[2 * pol], s[2 * pol + 1])
}

/// Finds the sampling phase and symbol lag maximizing the circular
/// cross-correlation of the X polarization with the transmitted symbols.
fn align(rx: &[Complex64], tx: &[Complex64], sps: usize) -> Result<(usize, usize)> {
    let n = tx.len();
    let fft = FftPair::new(n);
    let mut tx_spec = tx.to_vec();
    fft.forward(&mut tx_spec);
    let mut best = (0usize, 0usize, -1.0f64);
    let mut best_corr = Vec::new();
    for phase in 0..sps {
        let mut buf: Vec<Complex64> = (0..n).map(|k| rx[k * sps + phase]).collect();
        fft.forward(&mut buf);
        buf.iter_mut().zip(&tx_spec).for_each(|(a, b)| *a *= b.conj());
        fft.inverse(&mut buf);
        let (lag, peak) =
            buf.iter().enumerate().map(|(k, v)| (k, v.norm())).fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        if peak > best.2 {
            best = (phase, lag, peak);
            best_corr = buf;
        }
    }
    let (phase, lag, peak) = best;
    let runner_up = best_corr.iter().enumerate().filter(|&(k, _)| k != lag).map(|(_, v)| v.norm()).fold(0.0, f64::max);
    if !(peak > 0.0) || runner_up > 0.5 * peak {
        return Err(Error::Alignment(format!("correlation peak {peak:.3e} not unique (next {runner_up:.3e})")));
    }
    Ok((phase, lag))
}

/// Receiver DSP for one channel of a WDM waveform.
pub fn receive(
    wave: &WaveformGrid,
    frame: &TxFrame,
    fiber: &FiberSpec,
    length_km: f64,
    channel: usize,
) -> Result<DspOutput> {
    if channel >= frame.plan.channels {
        return Err(Error::InvalidParameter(format!(
            "channel {channel} out of range for {} channels",
            frame.plan.channels
        )));
    }
    let sps = frame.samples_per_symbol;
    let n = wave.len();
    if n != frame.n_symbols() * sps {
        return Err(Error::InvalidParameter(format!(
            "waveform has {n} samples, frame expects {}",
            frame.n_symbols() * sps
        )));
    }
    let compensated = cd_compensate(wave, fiber, length_km);
    let fft = FftPair::new(n);
    let bin = frame.bin_offsets[channel];
    let mut pols = Vec::with_capacity(2);
    for field in [&compensated.x, &compensated.y] {
        let mut spec = field.clone();
        fft.forward(&mut spec);
        let mut base: Vec<Complex64> = (0..n).map(|k| spec[(k as isize + bin).rem_euclid(n as isize) as usize]).collect();
        apply_rrc(&mut base, sps, frame.plan.rolloff, 1.0);
        fft.inverse(&mut base);
        pols.push(base);
    }
    let tx = &frame.symbols[channel];
    let tx_x: Vec<Complex64> = tx.iter().map(|s| to_c(s, 0)).collect();
    let (phase, lag) = align(&pols[0], &tx_x, sps)?;
    let ns = tx.len();
    let mut scale = [Complex64::new(1.0, 0.0); 2];
    let mut rx = vec![[0.0; 4]; ns];
    for (pol, field) in pols.iter().enumerate() {
        let samples: Vec<Complex64> = (0..ns).map(|k| field[((k + lag) % ns) * sps + phase]).collect();
        // Fit r ≈ g·x and equalize with 1/g, which leaves the noise
        // unscaled relative to the signal.
        let cross: Complex64 = samples.iter().zip(tx).map(|(r, t)| r * to_c(t, pol).conj()).sum();
        let energy: f64 = tx.iter().map(|t| to_c(t, pol).norm_sqr()).sum();
        let h = if cross.norm() > 0.0 { energy / cross } else { Complex64::new(1.0, 0.0) };
        scale[pol] = h;
        for (out, r) in rx.iter_mut().zip(&samples) {
            let v = h * r;
            out[2 * pol] = v.re;
            out[2 * pol + 1] = v.im;
        }
    }
    Ok(DspOutput {
        tx: tx.clone(),
        tx_indices: frame.indices[channel].clone(),
        rx,
        scale,
        channel,
        sample_phase: phase,
        symbol_lag: lag,
    })
}

/// RRC response evaluated on physical frequencies; exposed for analysis.
pub fn rrc_gain(f_hz: f64, plan: &ChannelPlan) -> f64 {
    rrc_response(f_hz, plan.symbol_rate_hz, plan.rolloff)
}
