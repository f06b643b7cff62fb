//! Labeled 2D and 4D constellations.
//!
//! The 2D building block is square QAM (even bits per symbol) or cross QAM
//! (odd bits per symbol) with binary-reflected Gray labels. From it we build
//! three 4D families over the two polarizations:
//!
//! * the PM-M-QAM product, `M²` points, `2m` bits;
//! * QCM-QAM, where an inner-shell point in one polarization is always paired
//!   with an outer-shell point in the other, `M·M/2` points, `2m − 1` bits;
//! * SP-QAM, the half of the PM-M-QAM product whose integer lattice
//!   coordinates have an even sum, `2^(2m−1)` points.
//!
//! 4D labels are stored as integers, most significant bit first: the first
//! `m` bits select the X-polarization point and the remaining bits select the
//! Y-polarization point.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Relative tolerance used when comparing floating-point shell energies.
const ENERGY_TIE_RTOL: f64 = 1e-9;
const ANGLE_TIE_TOL: f64 = 1e-12;

pub(crate) fn gray(n: u32) -> u32 {
    n ^ (n >> 1)
}

/// A labeled 2D constellation (one polarization).
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation2D {
    pub name: String,
    pub points: Vec<[f64; 2]>,
    /// Bit labels, `bits` wide, most significant bit first.
    pub labels: Vec<u32>,
    pub bits: u32,
}

impl Constellation2D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / self.len() as f64
    }

    /// Rescales to unit average energy.
    pub fn normalize(&mut self) {
        let scale = self.mean_energy().sqrt().recip();
        for p in &mut self.points {
            p[0] *= scale;
            p[1] *= scale;
        }
    }
}

/// Equal-size split of a 2D constellation into low- and high-energy halves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShellPartition {
    pub inner: Vec<usize>,
    pub outer: Vec<usize>,
}

impl ShellPartition {
    /// Membership table, `true` for inner indices.
    pub fn inner_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.inner.len() + self.outer.len()];
        for &i in &self.inner {
            mask[i] = true;
        }
        mask
    }
}

/// Odd-integer QAM lattice with Gray labels, before normalization.
///
/// Even `m` gives a square grid. Odd `m` gives the cross constellation obtained
/// from a `2^((m+1)/2) × 2^((m−1)/2)` rectangular Gray grid by folding the
/// outermost columns onto the top and bottom rows, which keeps the labels
/// quasi-Gray.
pub(crate) fn qam_lattice(m: u32) -> Result<(Vec<[i32; 2]>, Vec<u32>)> {
    if !(2..=16).contains(&m) {
        return Err(Error::UnsupportedOrder(m));
    }
    let (bits_i, bits_q) = if m % 2 == 0 { (m / 2, m / 2) } else { (m.div_ceil(2), m / 2) };
    let side_i = 1i32 << bits_i;
    let side_q = 1i32 << bits_q;
    let coord = |idx: i32, side: i32| 2 * idx - side + 1;
    let mut points = Vec::with_capacity(1 << m);
    let mut labels = Vec::with_capacity(1 << m);
    for ii in 0..side_i {
        for qi in 0..side_q {
            let mut i = coord(ii, side_i);
            let mut q = coord(qi, side_q);
            if m % 2 == 1 && m >= 5 {
                let n = bits_i as i32;
                let fold_at = 3 << (n - 2);
                if i.abs() > fold_at {
                    let (si, sq) = (i.signum(), q.signum());
                    let new_i = si * ((1 << (n - 1)) - q.abs());
                    let new_q = sq * (i.abs() - (1 << (n - 2)));
                    i = new_i;
                    q = new_q;
                }
            }
            points.push([i, q]);
            labels.push((gray(ii as u32) << bits_q) | gray(qi as u32));
        }
    }
    Ok((points, labels))
}

fn qam_name(m: u32) -> String {
    match m {
        2 => "QPSK".to_string(),
        _ => format!("{}QAM", 1u64 << m),
    }
}

/// Standard M-QAM with Gray (square) or quasi-Gray (cross) labels, unit energy.
pub fn build_pm_qam(m: u32) -> Result<Constellation2D> {
    let (lattice, labels) = qam_lattice(m)?;
    let mut c = Constellation2D {
        name: qam_name(m),
        points: lattice.iter().map(|p| [p[0] as f64, p[1] as f64]).collect(),
        labels,
        bits: m,
    };
    c.normalize();
    Ok(c)
}

fn energy_cmp(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= ENERGY_TIE_RTOL * a.abs().max(b.abs()) {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// Splits a 2D constellation into inner and outer halves.
///
/// Points are sorted by energy, ties broken by the first then the second
/// coordinate; the first half is the inner shell.
pub fn split_shells(c: &Constellation2D) -> Result<ShellPartition> {
    let n = c.len();
    if n == 0 || n % 2 == 1 {
        return Err(Error::OddCardinality(n));
    }
    let energy: Vec<f64> = c.points.iter().map(|p| p[0] * p[0] + p[1] * p[1]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        energy_cmp(energy[a], energy[b])
            .then_with(|| c.points[a][0].total_cmp(&c.points[b][0]))
            .then_with(|| c.points[a][1].total_cmp(&c.points[b][1]))
    });
    let outer = order.split_off(n / 2);
    Ok(ShellPartition { inner: order, outer })
}

/// Gray codes along the angular order of a shell: rank by angle in
/// `[0, 2π)`, then by radius.
fn angular_gray_labels(c: &Constellation2D, shell: &[usize]) -> Vec<u32> {
    let angle = |i: usize| {
        let p = c.points[i];
        let a = p[1].atan2(p[0]);
        if a < 0.0 {
            a + std::f64::consts::TAU
        } else {
            a
        }
    };
    let radius = |i: usize| c.points[i][0].hypot(c.points[i][1]);
    let mut order: Vec<usize> = shell.to_vec();
    order.sort_by(|&a, &b| {
        let (aa, ab) = (angle(a), angle(b));
        let by_angle = if (aa - ab).abs() <= ANGLE_TIE_TOL { Ordering::Equal } else { aa.total_cmp(&ab) };
        by_angle.then_with(|| radius(a).total_cmp(&radius(b)))
    });
    let mut labels = vec![0u32; shell.len()];
    for (rank, &idx) in order.iter().enumerate() {
        let pos = shell.iter().position(|&s| s == idx).unwrap();
        labels[pos] = gray(rank as u32);
    }
    labels
}

/// A labeled 4D constellation spanning both polarizations.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledConstellation4D {
    pub name: String,
    /// Coordinates `[x_i, x_q, y_i, y_q]`.
    pub points: Vec<[f64; 4]>,
    pub labels: Vec<u32>,
    pub bits: u32,
}

/// Moments of the per-point squared 4D norm under uniform signaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyStats {
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

pub(crate) fn norm4(p: &[f64; 4]) -> f64 {
    p.iter().map(|v| v * v).sum()
}

impl LabeledConstellation4D {
    /// Validates the invariants: power-of-two size, label width, bijective labels.
    pub fn new(name: impl Into<String>, points: Vec<[f64; 4]>, labels: Vec<u32>) -> Result<Self> {
        let n = points.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidConstellation(format!("size {n} is not a power of two ≥ 2")));
        }
        if labels.len() != n {
            return Err(Error::InvalidConstellation(format!(
                "{} labels for {n} points",
                labels.len()
            )));
        }
        let bits = n.trailing_zeros();
        let mut seen = vec![false; n];
        for &l in &labels {
            let slot = seen
                .get_mut(l as usize)
                .ok_or_else(|| Error::InvalidConstellation(format!("label {l} wider than {bits} bits")))?;
            if *slot {
                return Err(Error::InvalidConstellation(format!("duplicate label {l}")));
            }
            *slot = true;
        }
        Ok(Self { name: name.into(), points, labels, bits })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Bits per 4D symbol.
    pub fn spectral_efficiency(&self) -> f64 {
        self.bits as f64
    }

    pub fn normalize(&mut self) {
        let mean = self.points.iter().map(norm4).sum::<f64>() / self.len() as f64;
        let scale = mean.sqrt().recip();
        for p in &mut self.points {
            p.iter_mut().for_each(|v| *v *= scale);
        }
    }

    pub fn energy_stats(&self) -> EnergyStats {
        let n = self.len() as f64;
        let energies: Vec<f64> = self.points.iter().map(norm4).collect();
        let mean = energies.iter().sum::<f64>() / n;
        let variance = energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        EnergyStats {
            mean,
            variance,
            min: energies.iter().copied().fold(f64::INFINITY, f64::min),
            max: energies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Table mapping each label value to its point index.
    pub fn label_index(&self) -> Vec<usize> {
        let mut table = vec![0usize; self.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            table[l as usize] = i;
        }
        table
    }

    /// Maps a bit stream (one `0`/`1` per byte, MSB of each label first) to
    /// point indices.
    pub fn map_bits(&self, bits: &[u8]) -> Result<Vec<usize>> {
        let width = self.bits as usize;
        if bits.len() % width != 0 {
            return Err(Error::RaggedBitStream { len: bits.len(), bits: self.bits });
        }
        let table = self.label_index();
        bits.chunks(width)
            .map(|chunk| {
                let mut label = 0usize;
                for &b in chunk {
                    if b > 1 {
                        return Err(Error::InvalidBit(b));
                    }
                    label = (label << 1) | b as usize;
                }
                Ok(table[label])
            })
            .collect()
    }

    /// Bits of the label at `index`, MSB first.
    pub fn label_bits(&self, index: usize) -> impl Iterator<Item = u8> + '_ {
        let label = self.labels[index];
        (0..self.bits).rev().map(move |k| ((label >> k) & 1) as u8)
    }

    /// Minimum-distance point index; ties go to the lowest index.
    pub fn nearest_point(&self, y: &[f64; 4]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d: f64 = (0..4).map(|k| (y[k] - p[k]).powi(2)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn min_squared_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                let d: f64 = (0..4).map(|k| (a[k] - b[k]).powi(2)).sum();
                best = best.min(d);
            }
        }
        best
    }

    /// Writes the plain-text table: a header, then one row per point with
    /// four coordinates and the label as a bit string.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# qcm constellation table v1")?;
        writeln!(w, "name = {}", self.name)?;
        writeln!(w, "bits = {}", self.bits)?;
        writeln!(w, "spectral_efficiency = {}", self.spectral_efficiency())?;
        let width = self.bits as usize;
        for (p, l) in self.points.iter().zip(&self.labels) {
            let mut line = String::new();
            for v in p {
                write!(line, "{v:e} ").unwrap();
            }
            write!(line, "{l:0width$b}").unwrap();
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_table<R: BufRead>(r: R) -> Result<Self> {
        let mut name = None;
        let mut bits = None;
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            let err = |msg: String| Error::Parse { line: lineno + 1, msg };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "name" => name = Some(value.to_string()),
                    "bits" => bits = Some(value.parse::<u32>().map_err(|e| err(e.to_string()))?),
                    "spectral_efficiency" => {}
                    other => return Err(err(format!("unknown header key {other:?}"))),
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", fields.len())));
            }
            let mut p = [0.0; 4];
            for (k, f) in fields[..4].iter().enumerate() {
                p[k] = f.parse().map_err(|e: std::num::ParseFloatError| err(e.to_string()))?;
            }
            if let Some(b) = bits {
                if fields[4].len() != b as usize {
                    return Err(err(format!("label {:?} is not {b} bits wide", fields[4])));
                }
            }
            let label = u32::from_str_radix(fields[4], 2).map_err(|e| err(e.to_string()))?;
            points.push(p);
            labels.push(label);
        }
        let name = name.ok_or_else(|| Error::Parse { line: 0, msg: "missing name header".into() })?;
        let c = Self::new(name, points, labels)?;
        if let Some(b) = bits {
            if b != c.bits {
                return Err(Error::InvalidConstellation(format!(
                    "header declares {b} bits but table has {} points",
                    c.len()
                )));
            }
        }
        Ok(c)
    }
}

fn assemble(name: String, entries: Vec<([f64; 4], u32)>) -> Result<LabeledConstellation4D> {
    let mut entries = entries;
    entries.sort_by_key(|e| e.1);
    let (points, labels) = entries.into_iter().unzip();
    let mut c = LabeledConstellation4D::new(name, points, labels)?;
    c.normalize();
    Ok(c)
}

fn join(x: [f64; 2], y: [f64; 2]) -> [f64; 4] {
    [x[0], x[1], y[0], y[1]]
}

/// The full PM-M-QAM product with labels `[X Gray | Y Gray]`.
pub fn build_pm_product(m: u32) -> Result<LabeledConstellation4D> {
    let c = build_pm_qam(m)?;
    let mut entries = Vec::with_capacity(c.len() * c.len());
    for (x, &lx) in c.points.iter().zip(&c.labels) {
        for (y, &ly) in c.points.iter().zip(&c.labels) {
            entries.push((join(*x, *y), (lx << m) | ly));
        }
    }
    assemble(format!("PM-{}", c.name), entries)
}

/// QCM-QAM built from PM-M-QAM.
///
/// X carries any M-QAM point (its `m` Gray bits); Y carries `m − 1` bits
/// selecting a point of the opposite shell, Gray-labeled along the shell's
/// angular order.
pub fn build_qcm_qam(m: u32) -> Result<LabeledConstellation4D> {
    let c = build_pm_qam(m)?;
    let shells = split_shells(&c)?;
    let inner_labels = angular_gray_labels(&c, &shells.inner);
    let outer_labels = angular_gray_labels(&c, &shells.outer);
    let inner = shells.inner_mask();
    let mut entries = Vec::with_capacity(c.len() * c.len() / 2);
    for (xi, x) in c.points.iter().enumerate() {
        let (partner, partner_labels) = if inner[xi] {
            (&shells.outer, &outer_labels)
        } else {
            (&shells.inner, &inner_labels)
        };
        for (&yi, &ly) in partner.iter().zip(partner_labels) {
            entries.push((join(*x, c.points[yi]), (c.labels[xi] << (m - 1)) | ly));
        }
    }
    assemble(format!("{}QCM-QAM", c.len() * c.len() / 2), entries)
}

/// Parity of the integer lattice index of an odd-integer coordinate.
fn lattice_parity(p: [i32; 2]) -> usize {
    let u = |a: i32| (a + 1).div_euclid(2);
    (u(p[0]) + u(p[1])).rem_euclid(2) as usize
}

/// Set-partitioned QAM: the even-parity half of the PM-M-QAM product.
///
/// X keeps its `m` Gray bits. Within each Y parity class the Y label drops
/// the lowest bit position whose removal stays one-to-one, so that bit is
/// the parity-completing bit.
pub fn build_sp_qam(m: u32) -> Result<LabeledConstellation4D> {
    let (lattice, _) = qam_lattice(m)?;
    let c = build_pm_qam(m)?;
    let parity: Vec<usize> = lattice.iter().map(|&p| lattice_parity(p)).collect();
    let mut class_labels: [Vec<(usize, u32)>; 2] = [Vec::new(), Vec::new()];
    for class in 0..2 {
        let members: Vec<usize> = (0..c.len()).filter(|&i| parity[i] == class).collect();
        let drop_bit = (0..m)
            .find(|&k| {
                let mut seen = std::collections::HashSet::new();
                members.iter().all(|&i| seen.insert(drop_bit_at(c.labels[i], k)))
            })
            .ok_or_else(|| {
                Error::InvalidConstellation(format!("no parity-completing bit for {}", c.name))
            })?;
        class_labels[class] = members.iter().map(|&i| (i, drop_bit_at(c.labels[i], drop_bit))).collect();
    }
    let mut entries = Vec::with_capacity(c.len() * c.len() / 2);
    for (xi, x) in c.points.iter().enumerate() {
        for &(yi, ly) in &class_labels[parity[xi]] {
            entries.push((join(*x, c.points[yi]), (c.labels[xi] << (m - 1)) | ly));
        }
    }
    assemble(format!("{}SP-QAM", c.len() * c.len() / 2), entries)
}

fn drop_bit_at(label: u32, k: u32) -> u32 {
    let low = label & ((1 << k) - 1);
    ((label >> (k + 1)) << k) | low
}

/// Names of the six formats compared throughout.
pub const BUILTIN_FORMATS: [&str; 6] =
    ["512QCM-QAM", "2048QCM-QAM", "8192QCM-QAM", "512SP-QAM", "2048SP-QAM", "8192SP-QAM"];

/// Looks up a built-in format by name: `<N>QCM-QAM`, `<N>SP-QAM` or `PM-<M>QAM`
/// (`PM-QPSK` for `M = 4`).
pub fn builtin(name: &str) -> Result<LabeledConstellation4D> {
    let unknown = || Error::InvalidParameter(format!("unknown format {name:?}"));
    let log2 = |n: u64| -> Option<u32> { (n.is_power_of_two()).then(|| n.trailing_zeros()) };
    if let Some(size) = name.strip_suffix("QCM-QAM") {
        let bits = log2(size.parse().map_err(|_| unknown())?).ok_or_else(unknown)?;
        if bits % 2 == 0 || bits < 3 {
            return Err(unknown());
        }
        return build_qcm_qam(bits.div_ceil(2));
    }
    if let Some(size) = name.strip_suffix("SP-QAM") {
        let bits = log2(size.parse().map_err(|_| unknown())?).ok_or_else(unknown)?;
        if bits % 2 == 0 || bits < 3 {
            return Err(unknown());
        }
        return build_sp_qam(bits.div_ceil(2));
    }
    if name == "PM-QPSK" {
        return build_pm_product(2);
    }
    if let Some(size) = name.strip_prefix("PM-").and_then(|s| s.strip_suffix("QAM")) {
        let bits = log2(size.parse().map_err(|_| unknown())?).ok_or_else(unknown)?;
        return build_pm_product(bits);
    }
    Err(unknown())
}

/// X-polarization projection.
pub fn x_of(p: &[f64; 4]) -> [f64; 2] {
    [p[0], p[1]]
}

/// Y-polarization projection.
pub fn y_of(p: &[f64; 4]) -> [f64; 2] {
    [p[2], p[3]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hamming(a: u32, b: u32) -> u32 {
        (a ^ b).count_ones()
    }

    #[test]
    fn qpsk_is_constant_modulus_gray() {
        let c = build_pm_qam(2).unwrap();
        assert_eq!(c.len(), 4);
        for p in &c.points {
            assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 1e-15);
        }
        // Adjacent quadrants differ in exactly one bit.
        for i in 0..4 {
            for j in 0..4 {
                let d = (c.points[i][0] - c.points[j][0]).abs() + (c.points[i][1] - c.points[j][1]).abs();
                if (d - 2.0f64.sqrt()).abs() < 1e-12 {
                    assert_eq!(hamming(c.labels[i], c.labels[j]), 1);
                }
            }
        }
    }

    #[test]
    fn sixty_four_qam_neighbors_are_gray() {
        let (lat, labels) = qam_lattice(6).unwrap();
        let mut checked = 0;
        for i in 0..lat.len() {
            for j in 0..lat.len() {
                let dx = (lat[i][0] - lat[j][0]).abs();
                let dy = (lat[i][1] - lat[j][1]).abs();
                if dx + dy == 2 {
                    assert_eq!(hamming(labels[i], labels[j]), 1, "{:?} {:?}", lat[i], lat[j]);
                    checked += 1;
                }
            }
        }
        // 2 · 8 · 7 horizontal plus vertical adjacencies, counted both ways.
        assert_eq!(checked, 2 * 2 * 8 * 7);
    }

    #[test]
    fn cross_constellations_have_cross_shape() {
        for (m, max, corner) in [(5, 5, 3), (7, 11, 7)] {
            let (lat, labels) = qam_lattice(m).unwrap();
            assert_eq!(lat.len(), 1 << m);
            let distinct: std::collections::HashSet<_> = lat.iter().collect();
            assert_eq!(distinct.len(), 1 << m);
            let labs: std::collections::HashSet<_> = labels.iter().collect();
            assert_eq!(labs.len(), 1 << m);
            for p in &lat {
                assert!(p[0].abs() <= max && p[1].abs() <= max);
                assert!(!(p[0].abs() > corner && p[1].abs() > corner), "{p:?}");
            }
        }
    }

    #[test]
    fn rejects_tiny_orders() {
        assert!(matches!(build_pm_qam(1), Err(Error::UnsupportedOrder(1))));
        assert!(matches!(build_pm_qam(0), Err(Error::UnsupportedOrder(0))));
    }

    #[test]
    fn qpsk_shells_split_lexicographically() {
        let c = build_pm_qam(2).unwrap();
        let s = split_shells(&c).unwrap();
        let mut inner: Vec<[f64; 2]> = s.inner.iter().map(|&i| c.points[i]).collect();
        inner.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        let h = 0.5f64.sqrt();
        assert_eq!(inner.len(), 2);
        assert!(inner.iter().all(|p| (p[0] + h).abs() < 1e-12));
    }

    #[test]
    fn split_rejects_odd() {
        let mut c = build_pm_qam(2).unwrap();
        c.points.pop();
        c.labels.pop();
        assert!(matches!(split_shells(&c), Err(Error::OddCardinality(3))));
    }

    #[test]
    fn thirty_two_qam_splits_sixteen_sixteen_by_energy() {
        let c = build_pm_qam(5).unwrap();
        let s = split_shells(&c).unwrap();
        assert_eq!((s.inner.len(), s.outer.len()), (16, 16));
        let e = |i: usize| c.points[i][0].powi(2) + c.points[i][1].powi(2);
        let max_inner = s.inner.iter().map(|&i| e(i)).fold(0.0, f64::max);
        let min_outer = s.outer.iter().map(|&i| e(i)).fold(f64::INFINITY, f64::min);
        assert!(max_inner < min_outer);
    }

    #[test]
    fn sizes_and_spectral_efficiency() {
        for (m, size) in [(5, 512), (6, 2048), (7, 8192)] {
            let q = build_qcm_qam(m).unwrap();
            assert_eq!(q.len(), size);
            assert_eq!(q.spectral_efficiency(), (2 * m - 1) as f64);
            let s = build_sp_qam(m).unwrap();
            assert_eq!(s.len(), size);
            assert_eq!(s.bits, 2 * m - 1);
        }
        assert_eq!(build_qcm_qam(5).unwrap().name, "512QCM-QAM");
        assert_eq!(build_sp_qam(7).unwrap().name, "8192SP-QAM");
    }

    #[test]
    fn sp_qpsk_is_eight_equal_energy_points() {
        let c = build_sp_qam(2).unwrap();
        assert_eq!(c.len(), 8);
        assert!(c.energy_stats().variance < 1e-15);
    }

    #[test]
    fn map_bits_rejects_ragged_and_nonbinary() {
        let c = build_qcm_qam(5).unwrap();
        assert!(matches!(c.map_bits(&[0; 10]), Err(Error::RaggedBitStream { len: 10, bits: 9 })));
        assert!(matches!(c.map_bits(&[0, 0, 0, 0, 0, 0, 0, 0, 2]), Err(Error::InvalidBit(2))));
    }

    #[test]
    fn nearest_point_tie_goes_low() {
        let c = build_pm_product(2).unwrap();
        let (a, b) = (c.points[3], c.points[7]);
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0, (a[3] + b[3]) / 2.0];
        let da: f64 = (0..4).map(|k| (mid[k] - a[k]).powi(2)).sum();
        let db: f64 = (0..4).map(|k| (mid[k] - b[k]).powi(2)).sum();
        assert_eq!(da, db);
        // Both endpoints are nearest among all 16 points at the midpoint of a unit edge.
        assert_eq!(c.nearest_point(&mid), 3);
    }

    #[test]
    fn table_round_trip_and_errors() {
        let c = build_qcm_qam(5).unwrap();
        let mut buf = Vec::new();
        c.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().filter(|l| !l.contains('=') && !l.starts_with('#')).count(), 512);
        let back = LabeledConstellation4D::read_table(&buf[..]).unwrap();
        assert_eq!(back, c);

        let bad = "name = x\nbits = 1\n0 0 0 0 0\n0 0 0 0 0\n";
        assert!(matches!(
            LabeledConstellation4D::read_table(bad.as_bytes()),
            Err(Error::InvalidConstellation(_))
        ));
        let short = "name = x\n0 0 0 0\n";
        assert!(matches!(LabeledConstellation4D::read_table(short.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn builtin_names() {
        for name in BUILTIN_FORMATS {
            assert_eq!(builtin(name).unwrap().name, name);
        }
        assert_eq!(builtin("PM-QPSK").unwrap().len(), 16);
        assert_eq!(builtin("PM-32QAM").unwrap().len(), 1024);
        assert!(builtin("1024QCM-QAM").is_err());
        assert!(builtin("nonsense").is_err());
    }
}
