//! Numerical primitives shared by the pipeline: Butterworth band-pass
//! design, zero-phase IIR filtering, Hamming windows and framewise
//! magnitude spectra.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("invalid band: need 0 < lo ({lo_hz}) < hi ({hi_hz}) < fs/2 ({nyquist})", nyquist = fs_hz / 2.0)]
    InvalidBand { lo_hz: f64, hi_hz: f64, fs_hz: f64 },
    #[error("band-pass order must be even and positive, got {0}")]
    InvalidOrder(usize),
    #[error("signal of {len} samples too short, need more than {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// IIR transfer function `b(z^-1) / a(z^-1)` with `a[0] == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoefficients {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub order: usize,
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub fs_hz: f64,
}

impl FilterCoefficients {
    /// Complex response at `f_hz` on the unit circle.
    pub fn response_at(&self, f_hz: f64) -> Complex64 {
        let w = 2.0 * PI * f_hz / self.fs_hz;
        let eval = |c: &[f64]| {
            c.iter()
                .enumerate()
                .map(|(k, v)| *v * Complex64::from_polar(1.0, -w * k as f64))
                .sum::<Complex64>()
        };
        eval(&self.numerator) / eval(&self.denominator)
    }

    pub fn magnitude_at(&self, f_hz: f64) -> f64 {
        self.response_at(f_hz).norm()
    }

    /// Schur-Cohn test: every denominator root has modulus below
    /// `1 - margin`.
    pub fn is_stable_with_margin(&self, margin: f64) -> bool {
        let rho = 1.0 - margin;
        let scaled: Vec<f64> = self
            .denominator
            .iter()
            .enumerate()
            .map(|(k, a)| a / rho.powi(k as i32))
            .collect();
        schur_cohn_stable(&scaled)
    }

    pub fn is_stable(&self) -> bool {
        self.is_stable_with_margin(0.0)
    }
}

/// Step-down recursion on the reflection coefficients.
fn schur_cohn_stable(a: &[f64]) -> bool {
    let mut p: Vec<f64> = a.iter().map(|v| v / a[0]).collect();
    while p.len() > 1 {
        let m = p.len() - 1;
        let k = p[m];
        if !(k.abs() < 1.0) {
            return false;
        }
        let denom = 1.0 - k * k;
        p = (0..m).map(|i| (p[i] - k * p[m - i]) / denom).collect();
    }
    true
}

fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, v) in c.iter().enumerate() {
            next[i] += v;
            next[i + 1] -= v * r;
        }
        c = next;
    }
    c
}

/// Digital Butterworth band-pass of total order `order` (the analog
/// low-pass prototype has `order / 2` poles). Edges are pre-warped so the
/// bilinear-transformed response is exactly -3 dB at `lo_hz` and `hi_hz`.
pub fn design_butterworth_bandpass(
    order: usize,
    lo_hz: f64,
    hi_hz: f64,
    fs_hz: f64,
) -> Result<FilterCoefficients> {
    if order == 0 || order % 2 != 0 {
        return Err(DspError::InvalidOrder(order));
    }
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs_hz / 2.0) {
        return Err(DspError::InvalidBand { lo_hz, hi_hz, fs_hz });
    }
    let n = order / 2;
    let fs2 = 2.0 * fs_hz;
    let w1 = fs2 * (PI * lo_hz / fs_hz).tan();
    let w2 = fs2 * (PI * hi_hz / fs_hz).tan();
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    let mut poles_s = Vec::with_capacity(order);
    for k in 1..=n {
        let theta = PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let half = p * bw / 2.0;
        let d = (half * half - w0_sq).sqrt();
        poles_s.push(half + d);
        poles_s.push(half - d);
    }
    let fs2c = Complex64::new(fs2, 0.0);
    let poles_z: Vec<Complex64> = poles_s.iter().map(|p| (fs2c + p) / (fs2c - p)).collect();
    let mut zeros_z = vec![Complex64::new(1.0, 0.0); n];
    zeros_z.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(n));

    let denom_prod: Complex64 = poles_s.iter().map(|p| fs2c - p).product();
    let gain = (Complex64::new(bw.powi(n as i32) * fs2.powi(n as i32), 0.0) / denom_prod).re;

    let numerator = poly_from_roots(&zeros_z)
        .iter()
        .map(|c| c.re * gain)
        .collect();
    let denominator: Vec<f64> = poly_from_roots(&poles_z).iter().map(|c| c.re).collect();
    Ok(FilterCoefficients {
        numerator,
        denominator,
        order,
        lo_hz,
        hi_hz,
        fs_hz,
    })
}

/// Transposed direct-form II filtering with initial state `zi`.
fn lfilter(b: &[f64], a: &[f64], x: &[f64], zi: &[f64]) -> Vec<f64> {
    let m = b.len().max(a.len());
    let mut z = zi.to_vec();
    z.resize(m - 1, 0.0);
    let coef = |c: &[f64], i: usize| c.get(i).copied().unwrap_or(0.0);
    let mut y = Vec::with_capacity(x.len());
    for &xn in x {
        let yn = coef(b, 0) * xn + z.first().copied().unwrap_or(0.0);
        for i in 0..m - 1 {
            let next = if i + 1 < m - 1 { z[i + 1] } else { 0.0 };
            z[i] = coef(b, i + 1) * xn + next - coef(a, i + 1) * yn;
        }
        y.push(yn);
    }
    y
}

/// Steady-state filter state for a unit step input.
fn lfilter_zi(b: &[f64], a: &[f64]) -> Vec<f64> {
    let m = b.len().max(a.len());
    let k = m - 1;
    if k == 0 {
        return Vec::new();
    }
    let coef = |c: &[f64], i: usize| c.get(i).copied().unwrap_or(0.0);
    // (I - companion(a)^T) zi = b[1:] - a[1:] * b[0]
    let mut mat = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for i in 0..k {
        mat[i][i] += 1.0;
        mat[i][0] += coef(a, i + 1);
        if i + 1 < k {
            mat[i][i + 1] -= 1.0;
        }
        rhs[i] = coef(b, i + 1) - coef(a, i + 1) * coef(b, 0);
    }
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|r1, r2| mat[*r1][col].abs().total_cmp(&mat[*r2][col].abs()))
            .unwrap_or(col);
        mat.swap(col, pivot);
        rhs.swap(col, pivot);
        let d = mat[col][col];
        if d == 0.0 {
            return vec![0.0; k];
        }
        for row in col + 1..k {
            let f = mat[row][col] / d;
            if f != 0.0 {
                for c in col..k {
                    mat[row][c] -= f * mat[col][c];
                }
                rhs[row] -= f * rhs[col];
            }
        }
    }
    let mut zi = vec![0.0; k];
    for row in (0..k).rev() {
        let s: f64 = (row + 1..k).map(|c| mat[row][c] * zi[c]).sum();
        zi[row] = (rhs[row] - s) / mat[row][row];
    }
    zi
}

/// Forward-backward filtering with odd reflective padding of
/// `3 * order` samples per side. Output has the input's length and zero
/// phase; the magnitude response is squared.
pub fn filter_zero_phase(coeffs: &FilterCoefficients, x: &[f64]) -> Result<Vec<f64>> {
    let pad = 3 * coeffs.order;
    if x.len() <= pad {
        return Err(DspError::SignalTooShort {
            len: x.len(),
            min: pad,
        });
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let (b, a) = (&coeffs.numerator, &coeffs.denominator);
    let zi = lfilter_zi(b, a);
    let scaled = |s: f64| zi.iter().map(|z| z * s).collect::<Vec<_>>();
    let mut y = lfilter(b, a, &ext, &scaled(ext[0]));
    y.reverse();
    let mut y = lfilter(b, a, &y, &scaled(y[0]));
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

/// Convenience: design an order-`order` band-pass and apply it zero-phase.
pub fn bandpass_zero_phase(
    x: &[f64],
    order: usize,
    lo_hz: f64,
    hi_hz: f64,
    fs_hz: f64,
) -> Result<Vec<f64>> {
    let coeffs = design_butterworth_bandpass(order, lo_hz, hi_hz, fs_hz)?;
    filter_zero_phase(&coeffs, x)
}

/// Symmetric Hamming window; `n == 1` yields `[1.0]`.
pub fn hamming_window(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..n)
            .map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / (n - 1) as f64).cos())
            .collect(),
    }
}

/// One-sided magnitude spectrum of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub magnitudes: Vec<f64>,
    pub frame_start_index: usize,
    pub nfft: usize,
}

/// Reusable FFT plan for frames of a fixed transform length.
#[derive(Clone)]
pub struct SpectrumPlan {
    nfft: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectrumPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumPlan").field("nfft", &self.nfft).finish()
    }
}

impl SpectrumPlan {
    pub fn new(nfft: usize) -> Result<Self> {
        if nfft == 0 || nfft % 2 != 0 {
            return Err(DspError::InvalidFrame(format!("nfft must be even and positive, got {nfft}")));
        }
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Ok(Self { nfft, fft })
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    pub fn bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    /// Zero-pads `frame` to `nfft` and appends the one-sided magnitudes to
    /// `out`.
    pub fn magnitudes_into(&self, frame: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if frame.is_empty() || frame.len() > self.nfft {
            return Err(DspError::InvalidFrame(format!(
                "frame length {} must be in 1..={}",
                frame.len(),
                self.nfft
            )));
        }
        let mut buf: Vec<Complex64> = frame.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        buf.resize(self.nfft, Complex64::new(0.0, 0.0));
        self.fft.process(&mut buf);
        out.extend(buf[..self.bins()].iter().map(|c| c.norm()));
        Ok(())
    }
}

pub fn frame_magnitude_spectrum(frame: &[f64], nfft: usize) -> Result<SpectralFrame> {
    let plan = SpectrumPlan::new(nfft)?;
    let mut magnitudes = Vec::with_capacity(plan.bins());
    plan.magnitudes_into(frame, &mut magnitudes)?;
    Ok(SpectralFrame {
        magnitudes,
        frame_start_index: 0,
        nfft,
    })
}
