//! Pan–Tompkins QRS detection.
//!
//! The chain is a 5–15 Hz band-pass, the five-point derivative, pointwise
//! squaring and a moving-window integrator, followed by adaptive dual
//! thresholds on the integrated and filtered waveforms with search-back
//! for missed beats.

use thiserror::Error;

use crate::dsp::{self, DspError};

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("signal of {len} samples too short, need at least {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("integration window {window} longer than signal of {len} samples")]
    WindowTooLong { window: usize, len: usize },
    #[error("fewer than two beats found")]
    NoBeatsFound,
    #[error("sampling rate {0} Hz too low for QRS detection")]
    InvalidSamplingRate(f64),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

pub type Result<T> = std::result::Result<T, DetectError>;

/// Detected beats. All three index vectors have equal length.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QrsDetection {
    pub r_peaks: Vec<usize>,
    pub qrs_onsets: Vec<usize>,
    pub qrs_offsets: Vec<usize>,
}

impl QrsDetection {
    pub fn len(&self) -> usize {
        self.r_peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_peaks.is_empty()
    }

    /// RR intervals in samples.
    pub fn rr_samples(&self) -> Vec<usize> {
        self.r_peaks.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Tunable constants of the detector; defaults follow the classical
/// algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub band_order: usize,
    pub integration_window_s: f64,
    pub refractory_s: f64,
    /// Primary threshold = noise + fraction * (signal - noise).
    pub signal_fraction: f64,
    /// Secondary (search-back) threshold = factor * primary.
    pub search_back_factor: f64,
    /// Search back when no beat within this multiple of the RR average.
    pub rr_miss_factor: f64,
    /// Weight of a new peak in the running signal/noise estimates.
    pub level_update: f64,
    pub refine_half_window_s: f64,
    /// Plausible QRS width band in seconds (10 and 50 samples at 300 Hz).
    pub min_qrs_width_s: f64,
    pub max_qrs_width_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            band_lo_hz: 5.0,
            band_hi_hz: 15.0,
            band_order: 4,
            integration_window_s: 0.150,
            refractory_s: 0.200,
            signal_fraction: 0.25,
            search_back_factor: 0.5,
            rr_miss_factor: 1.66,
            level_update: 0.125,
            refine_half_window_s: 0.050,
            min_qrs_width_s: 10.0 / 300.0,
            max_qrs_width_s: 50.0 / 300.0,
        }
    }
}

/// Zero-phase 5–15 Hz order-4 Butterworth band-pass.
pub fn pt_bandpass(x: &[f64], fs_hz: f64) -> Result<Vec<f64>> {
    let cfg = DetectorConfig::default();
    pt_bandpass_with(x, fs_hz, &cfg)
}

fn pt_bandpass_with(x: &[f64], fs_hz: f64, cfg: &DetectorConfig) -> Result<Vec<f64>> {
    if !(fs_hz > 2.0 * cfg.band_hi_hz) {
        return Err(DetectError::InvalidSamplingRate(fs_hz));
    }
    Ok(dsp::bandpass_zero_phase(
        x,
        cfg.band_order,
        cfg.band_lo_hz,
        cfg.band_hi_hz,
        fs_hz,
    )?)
}

/// `y[n] = (2x[n] + x[n-1] - x[n-3] - 2x[n-4]) / 8` with zero history.
pub fn derivative_filter(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 5 {
        return Err(DetectError::SignalTooShort { len: x.len(), min: 5 });
    }
    let at = |i: isize| if i < 0 { 0.0 } else { x[i as usize] };
    Ok((0..x.len() as isize)
        .map(|n| (2.0 * at(n) + at(n - 1) - at(n - 3) - 2.0 * at(n - 4)) / 8.0)
        .collect())
}

pub fn square_signal(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v * v).collect()
}

/// Causal moving average over `window_n` samples with zero history.
pub fn moving_window_integrate(x: &[f64], window_n: usize) -> Result<Vec<f64>> {
    if window_n == 0 || window_n > x.len() {
        return Err(DetectError::WindowTooLong {
            window: window_n,
            len: x.len(),
        });
    }
    let inv = 1.0 / window_n as f64;
    let mut out = Vec::with_capacity(x.len());
    // recompute each window sum directly: exact and free of drift
    for n in 0..x.len() {
        let start = (n + 1).saturating_sub(window_n);
        out.push(x[start..=n].iter().sum::<f64>() * inv);
    }
    Ok(out)
}

pub fn detect_r_peaks(x: &[f64], fs_hz: f64) -> Result<QrsDetection> {
    detect_r_peaks_with(x, fs_hz, &DetectorConfig::default())
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    index: usize,
    integ: f64,
    filt: f64,
}

struct Levels {
    spki: f64,
    npki: f64,
    spkf: f64,
    npkf: f64,
    fraction: f64,
    update: f64,
}

impl Levels {
    fn thr_i(&self) -> f64 {
        self.npki + self.fraction * (self.spki - self.npki)
    }

    fn thr_f(&self) -> f64 {
        self.npkf + self.fraction * (self.spkf - self.npkf)
    }

    fn signal(&mut self, c: &Candidate, weight: f64) {
        self.spki = weight * c.integ + (1.0 - weight) * self.spki;
        self.spkf = weight * c.filt + (1.0 - weight) * self.spkf;
    }

    fn noise(&mut self, c: &Candidate) {
        self.npki = self.update * c.integ + (1.0 - self.update) * self.npki;
        self.npkf = self.update * c.filt + (1.0 - self.update) * self.npkf;
    }
}

struct Accepted {
    integ_index: usize,
    threshold: f64,
}

struct ThresholdState<'a> {
    candidates: &'a [Candidate],
    taken: Vec<bool>,
    accepted: Vec<Accepted>,
    /// Last eight RR intervals, in integrator samples.
    rr_recent: Vec<usize>,
    levels: Levels,
    refractory: usize,
    cfg: &'a DetectorConfig,
}

impl ThresholdState<'_> {
    fn accept(&mut self, idx: usize) {
        if let Some(last) = self.accepted.last() {
            self.rr_recent.push(idx - last.integ_index);
            if self.rr_recent.len() > 8 {
                self.rr_recent.remove(0);
            }
        }
        self.accepted.push(Accepted {
            integ_index: idx,
            threshold: self.levels.thr_i(),
        });
    }

    fn rr_average(&self) -> Option<f64> {
        if self.rr_recent.is_empty() {
            None
        } else {
            Some(self.rr_recent.iter().sum::<usize>() as f64 / self.rr_recent.len() as f64)
        }
    }

    /// While the gap since the last beat exceeds the miss limit, accept the
    /// strongest skipped candidate above the secondary thresholds.
    fn search_back(&mut self, upto: usize) {
        loop {
            let (Some(last), Some(avg)) = (self.accepted.last(), self.rr_average()) else {
                return;
            };
            let last = last.integ_index;
            if ((upto - last) as f64) <= self.cfg.rr_miss_factor * avg {
                return;
            }
            let thr_i2 = self.cfg.search_back_factor * self.levels.thr_i();
            let thr_f2 = self.cfg.search_back_factor * self.levels.thr_f();
            let mut best: Option<usize> = None;
            for (k, c) in self.candidates.iter().enumerate() {
                if self.taken[k] || c.index < last + self.refractory || c.index >= upto {
                    continue;
                }
                if c.integ > thr_i2 && c.filt > thr_f2 {
                    match best {
                        Some(b) if self.candidates[b].integ >= c.integ => {}
                        _ => best = Some(k),
                    }
                }
            }
            let Some(k) = best else {
                return;
            };
            let c = self.candidates[k];
            self.taken[k] = true;
            self.levels.signal(&c, 0.25);
            self.accept(c.index);
        }
    }
}

pub fn detect_r_peaks_with(x: &[f64], fs_hz: f64, cfg: &DetectorConfig) -> Result<QrsDetection> {
    let min_len = (2.0 * fs_hz).ceil() as usize;
    if x.len() < min_len {
        return Err(DetectError::SignalTooShort {
            len: x.len(),
            min: min_len,
        });
    }
    let filtered = pt_bandpass_with(x, fs_hz, cfg)?;
    let deriv = derivative_filter(&filtered)?;
    let squared = square_signal(&deriv);
    let window_n = ((cfg.integration_window_s * fs_hz).round() as usize).max(1);
    let integ = moving_window_integrate(&squared, window_n)?;
    // derivative group delay (2) plus integrator group delay
    let delay = 2 + (window_n - 1) / 2;
    let refractory = (cfg.refractory_s * fs_hz).round() as usize;

    let candidates = find_candidates(&integ, &filtered, window_n, refractory / 2);
    let init = min_len.min(integ.len());
    let max_i = integ[..init].iter().cloned().fold(0.0, f64::max);
    let mean_i = integ[..init].iter().sum::<f64>() / init as f64;
    let max_f = filtered[..init].iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mean_f = filtered[..init].iter().map(|v| v.abs()).sum::<f64>() / init as f64;
    let levels = Levels {
        spki: max_i / 3.0,
        npki: mean_i / 2.0,
        spkf: max_f / 3.0,
        npkf: mean_f / 2.0,
        fraction: cfg.signal_fraction,
        update: cfg.level_update,
    };

    let mut state = ThresholdState {
        candidates: &candidates,
        taken: vec![false; candidates.len()],
        accepted: Vec::new(),
        rr_recent: Vec::new(),
        levels,
        refractory,
        cfg,
    };
    for k in 0..candidates.len() {
        let c = candidates[k];
        state.search_back(c.index);
        if let Some(last) = state.accepted.last() {
            if c.index < last.integ_index + refractory {
                continue;
            }
        }
        if c.integ > state.levels.thr_i() && c.filt > state.levels.thr_f() {
            state.taken[k] = true;
            state.levels.signal(&c, cfg.level_update);
            state.accept(c.index);
        } else {
            state.levels.noise(&c);
        }
    }
    state.search_back(integ.len());
    let accepted = state.accepted;

    finalize(x, &integ, &accepted, delay, fs_hz, cfg)
}

/// Local maxima of the integrator that dominate a `±half_span` neighborhood.
fn find_candidates(
    integ: &[f64],
    filtered: &[f64],
    window_n: usize,
    half_span: usize,
) -> Vec<Candidate> {
    let n = integ.len();
    let mut out = Vec::new();
    // the last sample counts as a peak when the record cuts off a rising edge
    for i in 1..n {
        if !(integ[i] > integ[i - 1] && (i + 1 == n || integ[i] >= integ[i + 1])) {
            continue;
        }
        let lo = i.saturating_sub(half_span);
        let hi = (i + half_span).min(n - 1);
        let dominant = (lo..=hi).all(|j| integ[j] < integ[i] || (integ[j] == integ[i] && j >= i));
        if !dominant {
            continue;
        }
        let f_lo = i.saturating_sub(window_n);
        let filt = filtered[f_lo..=i].iter().map(|v| v.abs()).fold(0.0, f64::max);
        out.push(Candidate {
            index: i,
            integ: integ[i],
            filt,
        });
    }
    out
}

fn finalize(
    x: &[f64],
    integ: &[f64],
    accepted: &[Accepted],
    delay: usize,
    fs_hz: f64,
    cfg: &DetectorConfig,
) -> Result<QrsDetection> {
    let n = x.len();
    let half = (cfg.refine_half_window_s * fs_hz).round() as usize;
    let refractory = (cfg.refractory_s * fs_hz).round() as usize;
    let min_half = ((cfg.min_qrs_width_s * fs_hz / 2.0).round() as usize).max(1);
    let max_half = ((cfg.max_qrs_width_s * fs_hz / 2.0).round() as usize).max(min_half);

    let mut peaks: Vec<(usize, f64)> = Vec::with_capacity(accepted.len());
    for a in accepted {
        let decision = a.integ_index.saturating_sub(delay);
        let lo = decision.saturating_sub(half);
        let hi = (decision + half).min(n - 1);
        let mut r = lo;
        for i in lo..=hi {
            if x[i] > x[r] {
                r = i;
            }
        }
        match peaks.last_mut() {
            Some(prev) if r < prev.0 + refractory => {
                if x[r] > x[prev.0] {
                    *prev = (r, a.threshold);
                }
            }
            _ => peaks.push((r, a.threshold)),
        }
    }

    let aligned = |i: usize| integ.get(i + delay).copied().unwrap_or(0.0);
    let mut det = QrsDetection::default();
    for (r, threshold) in peaks {
        if r < min_half || r + min_half >= n {
            continue;
        }
        let mut left = 0;
        while left < max_half && r > left && aligned(r - left - 1) >= threshold {
            left += 1;
        }
        let mut right = 0;
        while right < max_half && r + right + 1 < n && aligned(r + right + 1) >= threshold {
            right += 1;
        }
        let left = left.clamp(min_half, max_half).min(r);
        let right = right.clamp(min_half, max_half).min(n - 1 - r);
        det.r_peaks.push(r);
        det.qrs_onsets.push(r - left);
        det.qrs_offsets.push(r + right);
    }
    if det.r_peaks.len() < 2 {
        return Err(DetectError::NoBeatsFound);
    }
    Ok(det)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_examples() {
        let mut impulse = vec![0.0; 8];
        impulse[0] = 1.0;
        let y = derivative_filter(&impulse).unwrap();
        assert_eq!(&y[..6], &[0.25, 0.125, 0.0, -0.125, -0.25, 0.0]);
        let ramp: Vec<f64> = (0..20).map(f64::from).collect();
        let y = derivative_filter(&ramp).unwrap();
        assert!(y[4..].iter().all(|v| (v - 1.25).abs() < 1e-12));
        let y = derivative_filter(&[3.0; 10]).unwrap();
        assert!(y[4..].iter().all(|v| *v == 0.0));
        assert!(derivative_filter(&[1.0; 4]).is_err());
    }

    #[test]
    fn square_examples() {
        assert_eq!(square_signal(&[-2.0, 3.0]), vec![4.0, 9.0]);
        assert_eq!(square_signal(&[0.0; 3]), vec![0.0; 3]);
    }

    #[test]
    fn integrator_examples() {
        let mut impulse = vec![0.0; 6];
        impulse[0] = 1.0;
        let y = moving_window_integrate(&impulse, 3).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(y, vec![third, third, third, 0.0, 0.0, 0.0]);
        let y = moving_window_integrate(&[2.5; 10], 4).unwrap();
        assert!(y[3..].iter().all(|v| (v - 2.5).abs() < 1e-15));
        assert_eq!(
            moving_window_integrate(&[1.0; 3], 4),
            Err(DetectError::WindowTooLong { window: 4, len: 3 })
        );
    }

    #[test]
    fn flat_signal_has_no_beats() {
        assert_eq!(detect_r_peaks(&[0.0; 3000], 300.0), Err(DetectError::NoBeatsFound));
        assert!(matches!(
            detect_r_peaks(&[0.0; 100], 300.0),
            Err(DetectError::SignalTooShort { .. })
        ));
    }
}
