//! Residual statistics that ground the scripted critic.

use crate::engine::moments;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Series shorter than this get a periodicity ratio of 1.
pub const MIN_PERIODOGRAM_LEN: usize = 16;

/// Cap applied when the median periodogram power is zero.
const MAX_PERIODICITY: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// OLS slope of `dy` on `y`; negative means the series reverts.
    pub reversion_slope: f64,
    /// Peak over median periodogram power of the residual.
    pub periodicity_ratio: f64,
    /// Pearson correlation of `|dy|` with `y`.
    pub level_vol_corr: f64,
    /// Kurtosis of the residual increments.
    pub residual_kurtosis: f64,
    /// Frequency of the periodogram peak, in cycles per unit time.
    pub dominant_frequency: f64,
    /// Phase `psi` of the peak component `cos(2*pi*f*t + psi)`.
    pub dominant_phase: f64,
    /// Mean level of the series.
    pub series_mean: f64,
}

/// Thresholds the scripted cascade compares diagnostics against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub reversion_slope: f64,
    pub level_vol_corr: f64,
    pub periodicity_ratio: f64,
    pub residual_kurtosis: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            reversion_slope: -0.05,
            level_vol_corr: 0.3,
            periodicity_ratio: 3.0,
            residual_kurtosis: 4.0,
        }
    }
}

impl Diagnostics {
    pub fn is_reverting(&self, th: &Thresholds) -> bool {
        self.reversion_slope < th.reversion_slope
    }

    pub fn is_level_dependent(&self, th: &Thresholds) -> bool {
        self.level_vol_corr > th.level_vol_corr
    }

    pub fn is_periodic(&self, th: &Thresholds) -> bool {
        self.periodicity_ratio > th.periodicity_ratio
    }

    pub fn is_heavy_tailed(&self, th: &Thresholds) -> bool {
        self.residual_kurtosis > th.residual_kurtosis
    }

    /// Plain-language summary used as the scripted critique.
    pub fn describe(&self, th: &Thresholds) -> String {
        let mut lines = vec![format!(
            "Mean-reversion slope {:.4} ({}).",
            self.reversion_slope,
            if self.is_reverting(th) { "reverting" } else { "no clear reversion" }
        )];
        lines.push(format!(
            "Level-volatility correlation {:.4} ({}).",
            self.level_vol_corr,
            if self.is_level_dependent(th) {
                "volatility grows with level"
            } else {
                "volatility roughly level-independent"
            }
        ));
        lines.push(format!(
            "Residual periodicity ratio {:.4} ({}).",
            self.periodicity_ratio,
            if self.is_periodic(th) {
                format!("cycle near frequency {:.4}", self.dominant_frequency)
            } else {
                "no dominant cycle".to_string()
            }
        ));
        lines.push(format!(
            "Residual increment kurtosis {:.4} ({}).",
            self.residual_kurtosis,
            if self.is_heavy_tailed(th) { "heavy tails" } else { "tails near normal" }
        ));
        lines.join("\n")
    }
}

/// Diagnostics of `y` against the mean simulated path `fit`, both sampled
/// every `dt` starting at `t0`.
pub fn residual_diagnostics(y: &[f64], fit: &[f64], t0: f64, dt: f64) -> Diagnostics {
    assert_eq!(y.len(), fit.len(), "series and fit lengths differ");
    let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let level = &y[..y.len().saturating_sub(1)];
    let r: Vec<f64> = y.iter().zip(fit).map(|(a, b)| a - b).collect();
    let dr: Vec<f64> = r.windows(2).map(|w| w[1] - w[0]).collect();

    let reversion_slope = ols_slope(level, &dy);
    let abs_dy: Vec<f64> = dy.iter().map(|d| d.abs()).collect();
    let level_vol_corr = pearson(&abs_dy, level);
    let residual_kurtosis = moments(&dr).map(|m| m.kurtosis).unwrap_or(0.0);
    let (periodicity_ratio, k, phase) = periodogram_peak(&r);
    let n = r.len() as f64;
    let dominant_frequency = k as f64 / (n * dt);
    Diagnostics {
        reversion_slope,
        periodicity_ratio,
        level_vol_corr,
        residual_kurtosis,
        dominant_frequency,
        dominant_phase: wrap_phase(phase - 2.0 * PI * dominant_frequency * t0),
        series_mean: mean(y),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Slope of `y` regressed on `x`; 0 when `x` has no spread.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx <= 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Pearson correlation; 0 when either side has no spread.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    // Spreads at rounding level count as none.
    let tiny = 1e-24 * x.len() as f64;
    if sxx <= tiny || syy <= tiny {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Periodogram `|X_k|^2` for `k = 1..=n/2` of the mean-removed series.
pub fn periodogram(r: &[f64]) -> Vec<(usize, f64, f64)> {
    let n = r.len();
    let m = mean(r);
    (1..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, x) in r.iter().enumerate() {
                let a = -2.0 * PI * (k * j % n) as f64 / n as f64;
                re += (x - m) * a.cos();
                im += (x - m) * a.sin();
            }
            (k, re * re + im * im, im.atan2(re))
        })
        .collect()
}

/// `(max/median power, k at max, phase at max)`.
fn periodogram_peak(r: &[f64]) -> (f64, usize, f64) {
    if r.len() < MIN_PERIODOGRAM_LEN {
        return (1.0, 0, 0.0);
    }
    let spec = periodogram(r);
    let (k, peak, phase) = spec
        .iter()
        .copied()
        .fold((0, f64::NEG_INFINITY, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    let mut powers: Vec<f64> = spec.iter().map(|s| s.1).collect();
    powers.sort_by(f64::total_cmp);
    let mid = powers.len() / 2;
    let median = if powers.len() % 2 == 0 {
        0.5 * (powers[mid - 1] + powers[mid])
    } else {
        powers[mid]
    };
    let ratio = if peak <= 0.0 {
        1.0
    } else if median <= 0.0 {
        MAX_PERIODICITY
    } else {
        (peak / median).min(MAX_PERIODICITY)
    };
    (ratio, k, phase)
}

fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}
