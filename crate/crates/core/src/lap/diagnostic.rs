//! Histogram and moment summary of a loss sample, for checking how close
//! per-source losses are to normal.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalityReport {
    pub bins: Vec<HistogramBin>,
    pub n: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    /// `None` when the variance is zero.
    pub skewness: Option<f64>,
    /// `None` when the variance is zero.
    pub excess_kurtosis: Option<f64>,
}

const MIN_BINS: usize = 5;

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Freedman–Diaconis histogram (at least five bins, at most one per sample)
/// plus population skewness and excess kurtosis. Panics on an empty sample.
pub fn normality_report(values: &[f64]) -> NormalityReport {
    assert!(!values.is_empty(), "normality report of an empty sample");
    let n = values.len();
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[n - 1]);
    let range = max - min;
    // all-equal samples are degenerate; avoid reporting rounding residue
    let mean = if range == 0.0 { min } else { mean };

    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (Some(m3 / m2.powf(1.5)), Some(m4 / (m2 * m2) - 3.0))
    } else {
        (None, None)
    };

    let bins = if range == 0.0 {
        vec![HistogramBin {
            low: min,
            high: max,
            count: n,
        }]
    } else {
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let width = 2.0 * iqr / nf.cbrt();
        let fd = if width > 0.0 {
            (range / width).ceil() as usize
        } else {
            MIN_BINS
        };
        let k = fd.max(MIN_BINS).min(n.max(MIN_BINS));
        let step = range / k as f64;
        let mut bins: Vec<HistogramBin> = (0..k)
            .map(|i| HistogramBin {
                low: min + step * i as f64,
                high: if i + 1 == k {
                    max
                } else {
                    min + step * (i + 1) as f64
                },
                count: 0,
            })
            .collect();
        for &v in values {
            let i = (((v - min) / step) as usize).min(k - 1);
            bins[i].count += 1;
        }
        bins
    };

    NormalityReport {
        bins,
        n,
        mean,
        variance: m2,
        skewness,
        excess_kurtosis,
    }
}
