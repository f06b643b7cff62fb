//! Reductions over sweep rows: seed averages, optimal launch power and the
//! QCM-QAM versus SP-QAM comparisons.

use std::collections::BTreeMap;

use qcm_core::metrics::MetricReport;

/// Seed-averaged metrics at one (format, distance, power).
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub format: String,
    pub distance_km: f64,
    pub launch_power_dbm: f64,
    /// Mean of the per-seed effective SNRs in dB.
    pub effective_snr_db: f64,
    pub gmi: f64,
    pub seeds: usize,
}

/// Best launch power of one (format, distance) curve, by mean GMI.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub format: String,
    pub distance_km: f64,
    pub launch_power_dbm: f64,
    pub gmi: f64,
    pub effective_snr_db: f64,
}

/// QCM-QAM against the SP-QAM format of equal spectral efficiency at one
/// distance.
#[derive(Debug, Clone, PartialEq)]
pub struct PairComparison {
    pub spectral_efficiency: u32,
    pub qcm: String,
    pub sp: String,
    pub distance_km: f64,
    pub qcm_optimal_power_dbm: f64,
    pub sp_optimal_power_dbm: f64,
    /// Effective SNR of QCM-QAM minus SP-QAM, both at the SP-QAM optimum.
    pub snr_gain_db: f64,
    /// Peak GMI of QCM-QAM minus peak GMI of SP-QAM.
    pub gmi_gain: f64,
}

/// Groups rows by (format, distance, power) and averages over seeds. The
/// output follows the first-appearance order of formats and ascending
/// distance and power.
pub fn average_over_seeds(rows: &[MetricReport]) -> Vec<CurvePoint> {
    let order = format_order(rows.iter().map(|r| r.format.as_str()));
    let mut groups: BTreeMap<(usize, u64, u64), Vec<&MetricReport>> = BTreeMap::new();
    for r in rows {
        groups.entry((order[&r.format], ordered(r.distance_km), ordered(r.launch_power_dbm))).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let n = g.len() as f64;
            CurvePoint {
                format: g[0].format.clone(),
                distance_km: g[0].distance_km,
                launch_power_dbm: g[0].launch_power_dbm,
                effective_snr_db: g.iter().map(|r| r.effective_snr_db).sum::<f64>() / n,
                gmi: g.iter().map(|r| r.gmi).sum::<f64>() / n,
                seeds: g.len(),
            }
        })
        .collect()
}

/// Per (format, distance), the power with the highest mean GMI; ties go to
/// the lowest power.
pub fn optima(curve: &[CurvePoint]) -> Vec<Optimum> {
    let mut best: Vec<Optimum> = Vec::new();
    for p in curve {
        match best.iter_mut().find(|o| o.format == p.format && o.distance_km == p.distance_km) {
            Some(o) => {
                if p.gmi > o.gmi || (p.gmi == o.gmi && p.launch_power_dbm < o.launch_power_dbm) {
                    o.launch_power_dbm = p.launch_power_dbm;
                    o.gmi = p.gmi;
                    o.effective_snr_db = p.effective_snr_db;
                }
            }
            None => best.push(Optimum {
                format: p.format.clone(),
                distance_km: p.distance_km,
                launch_power_dbm: p.launch_power_dbm,
                gmi: p.gmi,
                effective_snr_db: p.effective_snr_db,
            }),
        }
    }
    best
}

/// Name of the SP-QAM format with the same cardinality as a QCM-QAM one.
pub fn sp_counterpart(qcm: &str) -> Option<String> {
    qcm.strip_suffix("QCM-QAM").map(|size| format!("{size}SP-QAM"))
}

/// Bits per 4D symbol encoded in a format name such as `2048SP-QAM`.
pub fn spectral_efficiency_of(name: &str) -> Option<u32> {
    let digits: String = name.chars().take_while(char::is_ascii_digit).collect();
    let size: u64 = digits.parse().ok()?;
    size.is_power_of_two().then(|| size.trailing_zeros())
}

/// Compares every QCM-QAM curve with its SP-QAM counterpart at each distance
/// both were swept at.
pub fn compare_pairs(curve: &[CurvePoint]) -> Vec<PairComparison> {
    let best = optima(curve);
    let mut out = Vec::new();
    for q in &best {
        let Some(sp_name) = sp_counterpart(&q.format) else { continue };
        let Some(s) = best.iter().find(|o| o.format == sp_name && o.distance_km == q.distance_km) else { continue };
        let at = |format: &str| {
            curve.iter().find(|p| {
                p.format == format && p.distance_km == s.distance_km && p.launch_power_dbm == s.launch_power_dbm
            })
        };
        let Some(q_at_sp) = at(&q.format) else { continue };
        out.push(PairComparison {
            spectral_efficiency: spectral_efficiency_of(&q.format).unwrap_or(0),
            qcm: q.format.clone(),
            sp: sp_name.clone(),
            distance_km: q.distance_km,
            qcm_optimal_power_dbm: q.launch_power_dbm,
            sp_optimal_power_dbm: s.launch_power_dbm,
            snr_gain_db: q_at_sp.effective_snr_db - s.effective_snr_db,
            gmi_gain: q.gmi - s.gmi,
        });
    }
    out
}

/// True when the sequence rises (weakly) to a single peak and then falls
/// (weakly).
pub fn is_unimodal(values: &[f64]) -> bool {
    let mut falling = false;
    for w in values.windows(2) {
        if w[1] < w[0] {
            falling = true;
        } else if falling && w[1] > w[0] {
            return false;
        }
    }
    true
}

fn format_order<'a>(names: impl Iterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut order = BTreeMap::new();
    for n in names {
        let next = order.len();
        order.entry(n.to_string()).or_insert(next);
    }
    order
}

/// Order-preserving map of finite floats to integers.
fn ordered(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 { !bits } else { bits | (1 << 63) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(format: &str, d: f64, p: f64, seed: u64, snr: f64, gmi: f64) -> MetricReport {
        MetricReport {
            format: format.into(),
            fiber: "SSMF".into(),
            distance_km: d,
            launch_power_dbm: p,
            seed,
            n_symbols: 1024,
            effective_snr_db: snr,
            gmi,
        }
    }

    #[test]
    fn averages_and_optima() {
        let rows = vec![
            row("512QCM-QAM", 100.0, 2.0, 1, 10.0, 7.0),
            row("512QCM-QAM", 100.0, 2.0, 2, 12.0, 7.2),
            row("512QCM-QAM", 100.0, -2.0, 1, 8.0, 6.0),
            row("512QCM-QAM", 100.0, -2.0, 2, 8.0, 6.0),
            row("512SP-QAM", 100.0, -2.0, 1, 9.0, 6.5),
            row("512SP-QAM", 100.0, 2.0, 1, 10.5, 6.9),
        ];
        let curve = average_over_seeds(&rows);
        assert_eq!(curve.len(), 4);
        assert_eq!((curve[0].launch_power_dbm, curve[0].seeds), (-2.0, 2));
        assert!((curve[1].gmi - 7.1).abs() < 1e-12 && (curve[1].effective_snr_db - 11.0).abs() < 1e-12);
        let cmp = compare_pairs(&curve);
        assert_eq!(cmp.len(), 1);
        let c = &cmp[0];
        assert_eq!((c.spectral_efficiency, c.qcm_optimal_power_dbm, c.sp_optimal_power_dbm), (9, 2.0, 2.0));
        assert!((c.snr_gain_db - 0.5).abs() < 1e-12 && (c.gmi_gain - 0.2).abs() < 1e-12);
    }

    #[test]
    fn names_and_shapes() {
        assert_eq!(sp_counterpart("8192QCM-QAM").as_deref(), Some("8192SP-QAM"));
        assert_eq!(sp_counterpart("PM-QPSK"), None);
        assert_eq!(spectral_efficiency_of("2048SP-QAM"), Some(11));
        assert!(is_unimodal(&[1.0, 2.0, 2.0, 3.0, 1.0, 0.5]));
        assert!(is_unimodal(&[3.0, 2.0, 1.0]));
        assert!(!is_unimodal(&[1.0, 3.0, 2.0, 2.5]));
        let mut values = vec![-3.5, -0.0, 0.0, 2.0, 1e-9, -1e300];
        values.sort_by_key(|v| ordered(*v));
        assert_eq!(values, vec![-1e300, -3.5, -0.0, 0.0, 1e-9, 2.0]);
    }
}
