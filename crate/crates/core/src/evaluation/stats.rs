use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

/// Boxplot summary. Whiskers reach the most extreme samples within 1.5 IQR
/// of the quartiles (matplotlib convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single sample.
    pub std: f64,
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7, the
/// numpy default).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn std_error(x: &[f64]) -> f64 {
    sample_std(x) / (x.len() as f64).sqrt()
}

impl BoxStats {
    pub fn from_samples(x: &[f64]) -> Result<Self, EvalError> {
        if x.is_empty() {
            return Err(EvalError::EmptySeries);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::InvalidInput("non-finite sample".into()));
        }
        let mut s = x.to_vec();
        s.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&s, 0.25);
        let q3 = quantile_sorted(&s, 0.75);
        let iqr = q3 - q1;
        // Clipped to the box when the fence excludes everything up to it.
        let whisker_lo = s.iter().find(|&&v| v >= q1 - 1.5 * iqr).unwrap().min(q1);
        let whisker_hi = s.iter().rev().find(|&&v| v <= q3 + 1.5 * iqr).unwrap().max(q3);
        Ok(Self {
            n: s.len(),
            min: s[0],
            q1,
            median: quantile_sorted(&s, 0.5),
            q3,
            max: s[s.len() - 1],
            whisker_lo,
            whisker_hi,
            mean: mean(x),
            std: sample_std(x),
        })
    }
}

/// `attacked / benign`, undefined (None) when the benign mean is not
/// positive.
pub fn relative_reward(attacked_mean: f64, benign_mean: f64) -> Option<f64> {
    (benign_mean > 0.0).then(|| attacked_mean / benign_mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for "the first sample tends to be smaller".
    pub p_less: f64,
}

/// Mann-Whitney U test with midranks for ties and the tie-corrected normal
/// approximation (with continuity correction).
pub fn mann_whitney_less(x: &[f64], y: &[f64]) -> Result<MannWhitney, EvalError> {
    if x.is_empty() || y.is_empty() {
        return Err(EvalError::EmptySeries);
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let mut all: Vec<(f64, bool)> = x
        .iter()
        .map(|&v| (v, true))
        .chain(y.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut rank_sum_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum_x += midrank * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_x - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;
    let nn = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    if var <= 0.0 {
        // Every value tied: no evidence either way.
        return Ok(MannWhitney {
            u,
            z: 0.0,
            p_less: 0.5,
        });
    }
    let z = (u - mu + 0.5) / var.sqrt();
    let normal = Normal::standard();
    Ok(MannWhitney {
        u,
        z,
        p_less: normal.cdf(z),
    })
}

/// Exponential moving average with alpha = 2 / (window + 1); the first value
/// is kept as is.
pub fn ema_smooth(series: &[f64], window: usize) -> Result<Vec<f64>, EvalError> {
    if series.is_empty() {
        return Err(EvalError::EmptySeries);
    }
    if window == 0 {
        return Err(EvalError::InvalidInput("EMA window must be >= 1".into()));
    }
    let alpha = 2.0 / (window as f64 + 1.0);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = series[0];
    out.push(acc);
    for &v in &series[1..] {
        acc = alpha * v + (1.0 - alpha) * acc;
        out.push(acc);
    }
    Ok(out)
}

/// Normalized histogram over fixed bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub freq: Vec<f64>,
}

impl Histogram {
    /// `bins` equal-width bins spanning `range` (or the data range). Values
    /// outside the range go to the nearest end bin; a zero-width range gives
    /// a single bin.
    pub fn build(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::EmptySeries);
        }
        if bins == 0 {
            return Err(EvalError::InvalidInput("histogram needs at least one bin".into()));
        }
        let (lo, hi) = range.unwrap_or_else(|| {
            values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
        });
        if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
            return Err(EvalError::InvalidInput(format!("bad histogram range [{lo}, {hi}]")));
        }
        if hi == lo {
            return Ok(Self {
                edges: vec![lo, hi],
                freq: vec![1.0],
            });
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let n = values.len() as f64;
        Ok(Self {
            edges,
            freq: counts.into_iter().map(|c| c as f64 / n).collect(),
        })
    }

    pub fn nonzero_bins(&self) -> usize {
        self.freq.iter().filter(|&&f| f > 0.0).count()
    }
}
