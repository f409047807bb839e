//! One-sided functional conformal bands over score traces.
//!
//! A band is `upper_t = mu_t + q * m_t`: a time-varying mean, a modulation
//! that tracks the spread of non-extreme calibration traces, and a scalar
//! quantile `q` of the normalized sup-deviation. A trace is flagged at the
//! first step that strictly exceeds the band.

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::ceil_tolerant;
use crate::trace::ScoreTrace;
use crate::{Error, Result};

/// How calibration traces are used to build the band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CalibrationMode {
    /// Even-indexed traces fit `mu` and `m`; odd-indexed traces supply the
    /// conformity scores. Keeps the scores exchangeable with test traces.
    #[default]
    Split,
    /// Every trace is used for both `mu`/`m` and the scores.
    InSample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BandConfig {
    pub alpha: f64,
    /// Band length; defaults to the longest calibration trace.
    pub horizon: Option<usize>,
    pub mode: CalibrationMode,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            horizon: None,
            mode: CalibrationMode::Split,
        }
    }
}

impl BandConfig {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }
}

/// Calibrated threshold `upper_t = mu_t + q * m_t` for `t < horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalBand {
    mu: Vec<f64>,
    modulation: Vec<f64>,
    q: f64,
    alpha: f64,
}

/// Outcome of scanning one trace against a band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub detected: bool,
    pub first_exceed_step: Option<usize>,
    /// `(step + 1) / T` with `T` the trace's own length; 1 if never detected.
    pub relative_time: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// `1e-8 * (1 + |mu|)`
pub fn modulation_floor(mu: f64) -> f64 {
    1e-8 * (1.0 + mu.abs())
}

impl ConformalBand {
    /// Assembles a band from explicit parts. `q` may be infinite (vacuous bands).
    pub fn from_parts(mu: Vec<f64>, modulation: Vec<f64>, q: f64, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if mu.is_empty() {
            return Err(Error::Empty("band mean"));
        }
        if mu.len() != modulation.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: modulation.len(),
            });
        }
        if mu.iter().any(|v| !v.is_finite()) || modulation.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::InvalidData("band mean must be finite and modulation positive".into()));
        }
        if q.is_nan() {
            return Err(Error::InvalidData("band quantile is NaN".into()));
        }
        Ok(Self {
            mu,
            modulation,
            q,
            alpha,
        })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn modulation(&self) -> &[f64] {
        &self.modulation
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn horizon(&self) -> usize {
        self.mu.len()
    }

    /// Threshold at step `t`; steps past the horizon reuse the last one.
    pub fn upper(&self, t: usize) -> f64 {
        let i = t.min(self.mu.len() - 1);
        let m = self.modulation[i];
        // Avoid inf * 0 style NaNs; m > 0 so the sign of q decides.
        if self.q.is_infinite() {
            self.q
        } else {
            self.mu[i] + self.q * m
        }
    }

    fn normalized(&self, t: usize, s: f64) -> f64 {
        let i = t.min(self.mu.len() - 1);
        (s - self.mu[i]) / self.modulation[i]
    }
}

/// Per-step mean over traces reaching each step, carrying the last
/// well-supported value forward where too few traces remain.
fn supported_mean(traces: &[&[f64]], horizon: usize, min_support: usize) -> Vec<f64> {
    let mut mu = Vec::with_capacity(horizon);
    let mut last = 0.0;
    for t in 0..horizon {
        let (mut sum, mut count) = (0.0, 0usize);
        for s in traces.iter().filter(|s| s.len() > t) {
            sum += s[t];
            count += 1;
        }
        if count >= min_support || t == 0 {
            last = if count > 0 { sum / count as f64 } else { 0.0 };
        }
        mu.push(last);
    }
    mu
}

fn sup_deviation(s: &[f64], mu: &[f64]) -> f64 {
    s.iter()
        .enumerate()
        .map(|(t, v)| v - mu[t.min(mu.len() - 1)])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Fits `mu` and `m` on `fit` traces.
fn fit_shape(fit: &[&[f64]], alpha: f64, horizon: usize) -> (Vec<f64>, Vec<f64>) {
    let n = fit.len();
    let n_extreme = ceil_tolerant(alpha * n as f64).min(n);
    let min_support = core::cmp::max(2, n_extreme + 1).min(n);
    let mu = supported_mean(fit, horizon, min_support);

    let mut order: Vec<(f64, usize)> = fit.iter().enumerate().map(|(i, s)| (sup_deviation(s, &mu), i)).collect();
    // Largest sup-deviation first; index breaks ties so the choice is stable.
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut extreme = alloc::vec![false; n];
    for &(_, i) in &order[..n_extreme] {
        extreme[i] = true;
    }

    let mut m = Vec::with_capacity(horizon);
    let mut last: Option<f64> = None;
    for t in 0..horizon {
        let reaching = fit.iter().filter(|s| s.len() > t).count();
        let dev = fit
            .iter()
            .zip(&extreme)
            .filter(|(s, &x)| !x && s.len() > t)
            .map(|(s, _)| (s[t] - mu[t]).abs())
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
        let value = match (dev, last) {
            (Some(d), Some(prev)) => {
                if reaching >= min_support {
                    d
                } else {
                    prev
                }
            }
            (Some(d), None) => d,
            (None, Some(prev)) => prev,
            (None, None) => 0.0,
        };
        last = Some(value);
        m.push(value.max(modulation_floor(mu[t])));
    }
    (mu, m)
}

/// Calibrates a band on score traces from successful rollouts.
pub fn fit_band(calibration: &[ScoreTrace], cfg: &BandConfig) -> Result<ConformalBand> {
    check_alpha(cfg.alpha)?;
    if calibration.is_empty() {
        return Err(Error::Empty("calibration traces"));
    }
    if calibration.iter().any(|c| c.is_empty()) {
        return Err(Error::Empty("calibration trace"));
    }
    if calibration.iter().any(|c| c.values.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidData("calibration trace has non-finite scores".into()));
    }
    let horizon = cfg
        .horizon
        .unwrap_or_else(|| calibration.iter().map(ScoreTrace::len).max().unwrap_or(1));
    if horizon == 0 {
        return Err(Error::InvalidArgument("band horizon must be positive".into()));
    }
    let all: Vec<&[f64]> = calibration.iter().map(|c| c.values.as_slice()).collect();
    let (fit, score): (Vec<&[f64]>, Vec<&[f64]>) = match cfg.mode {
        CalibrationMode::InSample => (all.clone(), all),
        CalibrationMode::Split if all.len() >= 2 => {
            let even = all.iter().step_by(2).copied().collect();
            let odd = all.iter().skip(1).step_by(2).copied().collect();
            (even, odd)
        }
        CalibrationMode::Split => (all, Vec::new()),
    };
    let (mu, modulation) = fit_shape(&fit, cfg.alpha, horizon);
    let q = conformal_quantile(
        score.iter().map(|s| {
            s.iter()
                .enumerate()
                .map(|(t, v)| {
                    let i = t.min(horizon - 1);
                    (v - mu[i]) / modulation[i]
                })
                .fold(f64::NEG_INFINITY, f64::max)
        }),
        cfg.alpha,
    );
    ConformalBand::from_parts(mu, modulation, q, cfg.alpha)
}

/// The `ceil((n + 1)(1 - alpha))`-th smallest score, or `+inf` when that
/// index exceeds `n`.
pub fn conformal_quantile(scores: impl IntoIterator<Item = f64>, alpha: f64) -> f64 {
    let mut r: Vec<f64> = scores.into_iter().collect();
    let n = r.len();
    let idx = ceil_tolerant((n as f64 + 1.0) * (1.0 - alpha));
    if idx == 0 {
        return f64::NEG_INFINITY;
    }
    if idx > n {
        return f64::INFINITY;
    }
    r.sort_by(f64::total_cmp);
    r[idx - 1]
}

/// First step with `s_t > upper_t`.
pub fn detect(band: &ConformalBand, trace: &ScoreTrace) -> Detection {
    let hit = trace.values.iter().enumerate().position(|(t, &s)| s > band.upper(t));
    match hit {
        Some(k) => Detection {
            detected: true,
            first_exceed_step: Some(k),
            relative_time: (k + 1) as f64 / trace.len() as f64,
        },
        None => Detection {
            detected: false,
            first_exceed_step: None,
            relative_time: 1.0,
        },
    }
}

/// Normalized sup-deviation `sup_t (s_t - mu_t) / m_t` of a trace.
pub fn conformity_score(band: &ConformalBand, trace: &ScoreTrace) -> f64 {
    trace
        .values
        .iter()
        .enumerate()
        .map(|(t, &s)| band.normalized(t, s))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tr(v: Vec<f64>) -> ScoreTrace {
        ScoreTrace::new("r", v, "test")
    }

    #[test]
    fn constant_calibration_gives_floor_modulation() {
        let cal: Vec<_> = (0..20).map(|_| tr(vec![2.0; 5])).collect();
        for mode in [CalibrationMode::Split, CalibrationMode::InSample] {
            let cfg = BandConfig {
                alpha: 0.2,
                mode,
                ..BandConfig::default()
            };
            let band = fit_band(&cal, &cfg).unwrap();
            assert!(band.mu().iter().all(|&m| m == 2.0));
            assert!(band.modulation().iter().all(|&m| m == modulation_floor(2.0)));
            let bump = band.upper(2) + 1e-6;
            let d = detect(&band, &tr(vec![2.0, 2.0, bump, bump, 2.0]));
            assert_eq!(d.first_exceed_step, Some(2));
            assert_eq!(d.relative_time, 3.0 / 5.0);
        }
    }

    #[test]
    fn quantile_index_arithmetic() {
        let r: Vec<f64> = (1..=19).map(f64::from).collect();
        assert_eq!(conformal_quantile(r.iter().copied(), 0.05), 19.0);
        assert_eq!(conformal_quantile(r.iter().copied(), 0.1), 18.0);
        // n = 5 < ceil(1/alpha) - 1 -> vacuous
        assert_eq!(conformal_quantile([1.0, 2.0, 3.0, 4.0, 5.0], 0.1), f64::INFINITY);
    }

    #[test]
    fn trace_on_mean_is_not_detected() {
        let band = ConformalBand::from_parts(vec![0.0, 1.0, 2.0], vec![1.0; 3], 0.5, 0.1).unwrap();
        let d = detect(&band, &tr(vec![0.0, 1.0, 2.0]));
        assert!(!d.detected);
        assert_eq!(d.relative_time, 1.0);
        let d = detect(&band, &tr(vec![5.0, 1.0, 2.0]));
        assert_eq!(d.first_exceed_step, Some(0));
        assert!((d.relative_time - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn steps_past_horizon_use_last_threshold() {
        let band = ConformalBand::from_parts(vec![0.0, 1.0], vec![1.0; 2], 1.0, 0.1).unwrap();
        assert_eq!(band.upper(7), 2.0);
        let d = detect(&band, &tr(vec![0.0, 0.0, 0.0, 2.5]));
        assert_eq!(d.first_exceed_step, Some(3));
    }

    #[test]
    fn infinite_quantiles() {
        let hi = ConformalBand::from_parts(vec![0.0; 2], vec![1.0; 2], f64::INFINITY, 0.1).unwrap();
        assert!(!detect(&hi, &tr(vec![1e300, 1e300])).detected);
        let lo = ConformalBand::from_parts(vec![0.0; 2], vec![1.0; 2], f64::NEG_INFINITY, 0.1).unwrap();
        assert_eq!(detect(&lo, &tr(vec![-1e300])).first_exceed_step, Some(0));
    }

    #[test]
    fn ragged_traces_carry_last_supported_step() {
        let mut cal: Vec<_> = (0..10).map(|i| tr(vec![i as f64; 4])).collect();
        cal.push(tr(vec![100.0; 8]));
        let cfg = BandConfig {
            alpha: 0.1,
            mode: CalibrationMode::InSample,
            ..BandConfig::default()
        };
        let band = fit_band(&cal, &cfg).unwrap();
        assert_eq!(band.horizon(), 8);
        for t in 4..8 {
            assert_eq!(band.mu()[t], band.mu()[3]);
            assert_eq!(band.modulation()[t], band.modulation()[3]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_band(&[], &BandConfig::default()).is_err());
        let cal = [tr(vec![1.0])];
        assert!(fit_band(&cal, &BandConfig::new(0.0)).is_err());
        assert!(fit_band(&cal, &BandConfig::new(1.0)).is_err());
    }
}
