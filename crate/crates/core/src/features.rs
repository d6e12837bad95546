//! Per-beat and per-window feature extraction, z-score normalization and
//! feature-matrix persistence.

pub mod wavelet;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::detect::QrsDetection;
use crate::dsp::{self, DspError, SpectrumPlan};
use crate::ingest::{Condition, EcgRecord};
use crate::segment::{self, SegmentError};
use wavelet::TabulatedWavelet;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("all-zero window has no autocorrelation")]
    DegenerateWindow,
    #[error("{n_lags} lags invalid for a window of {len} samples")]
    InvalidLags { n_lags: usize, len: usize },
    #[error("analysis window around R={r_index} exceeds record bounds")]
    BeatOutOfBounds { r_index: usize },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite feature value in row for {0}")]
    NonFinite(String),
    #[error("layout mismatch: {0} vs {1}")]
    LayoutMismatch(String, String),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("no usable rows for {0}")]
    NoRows(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed feature file at line {line}: {reason}")]
    MalformedFile { line: usize, reason: String },
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub subject_id: String,
    pub condition: Condition,
    /// Anchor sample in the source record: the R peak for beat features,
    /// the window start for windowed autocorrelation.
    pub r_index: usize,
    pub values: Vec<f64>,
}

/// Rows sharing one layout. Rows keep insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    layout_id: String,
    dim: usize,
    rows: Vec<FeatureVector>,
}

impl FeatureMatrix {
    pub fn new(layout_id: impl Into<String>, dim: usize) -> Self {
        Self {
            layout_id: layout_id.into(),
            dim,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(layout_id: impl Into<String>, dim: usize, rows: Vec<FeatureVector>) -> Result<Self> {
        let mut m = Self::new(layout_id, dim);
        m.rows.reserve(rows.len());
        for r in rows {
            m.push(r)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: FeatureVector) -> Result<()> {
        if row.values.len() != self.dim {
            return Err(FeatureError::DimensionMismatch {
                expected: self.dim,
                got: row.values.len(),
            });
        }
        if row.values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(row.subject_id));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Appends rows of another matrix with the same layout.
    pub fn append(&mut self, other: FeatureMatrix) -> Result<()> {
        if other.layout_id != self.layout_id || other.dim != self.dim {
            return Err(FeatureError::LayoutMismatch(self.layout_id.clone(), other.layout_id));
        }
        self.rows.extend(other.rows);
        Ok(())
    }

    pub fn layout_id(&self) -> &str {
        &self.layout_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[FeatureVector] {
        &self.rows
    }

    /// Mutable access to row values. Callers must keep values finite.
    pub fn rows_mut(&mut self) -> &mut [FeatureVector] {
        &mut self.rows
    }

    pub fn into_rows(self) -> Vec<FeatureVector> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.subject_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Keeps the given columns in the given order.
    pub fn select_columns(&self, columns: &[usize], layout_id: impl Into<String>) -> Result<FeatureMatrix> {
        if let Some(bad) = columns.iter().find(|c| **c >= self.dim) {
            return Err(FeatureError::InvalidParameter(format!(
                "column {bad} out of range for dimension {}",
                self.dim
            )));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| FeatureVector {
                subject_id: r.subject_id.clone(),
                condition: r.condition,
                r_index: r.r_index,
                values: columns.iter().map(|c| r.values[*c]).collect(),
            })
            .collect();
        Ok(FeatureMatrix {
            layout_id: layout_id.into(),
            dim: columns.len(),
            rows,
        })
    }

    pub fn filter(&self, keep: impl Fn(&FeatureVector) -> bool) -> FeatureMatrix {
        FeatureMatrix {
            layout_id: self.layout_id.clone(),
            dim: self.dim,
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }
}

/// Frame geometry of the short-time spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub window_n: usize,
    pub hop: usize,
    pub nfft: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_n: 16,
            hop: 13,
            nfft: 50,
        }
    }
}

impl StftParams {
    pub fn frames(&self, len: usize) -> usize {
        if len < self.window_n {
            0
        } else {
            (len - self.window_n) / self.hop + 1
        }
    }

    pub fn dim(&self, len: usize) -> usize {
        self.frames(len) * (self.nfft / 2 + 1)
    }
}

pub const DEFAULT_CWT_SCALES: usize = 32;
pub const CASCADE_ITERATIONS: u32 = 8;
pub const FUSED_AC_LAGS: usize = 80;
pub const QRS_LEN: usize = 30;
pub const BEAT_LEN: usize = 300;
pub const PQRST_LEN: usize = 240;

/// Feature layouts with their parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Layout {
    Qrs30,
    Beat300,
    Pqrst240,
    Stft,
    Cwt,
    /// Autocorrelation over consecutive non-overlapping windows.
    Ac { n_lags: usize, window_s: f64 },
    /// Autocorrelation of each 300-sample midpoint beat.
    AcBeat { n_lags: usize },
    Fused,
}

impl Layout {
    pub fn id(&self) -> String {
        match self {
            Layout::Qrs30 => "qrs30".into(),
            Layout::Beat300 => "beat300".into(),
            Layout::Pqrst240 => "pqrst240".into(),
            Layout::Stft => "stft".into(),
            Layout::Cwt => "cwt".into(),
            Layout::Ac { n_lags, window_s } => format!("ac-n{n_lags}-L{window_s}"),
            Layout::AcBeat { n_lags } => format!("ac_beat-n{n_lags}"),
            Layout::Fused => "fused".into(),
        }
    }
}

/// Convolution kernels `psi((t - tau) / a) / sqrt(a)` for integer scales.
#[derive(Debug, Clone)]
pub struct CwtKernels {
    /// `kernels[a-1][d + half[a-1]]` for lags `d` in `-half..=half`.
    kernels: Vec<Vec<f64>>,
    half: Vec<usize>,
}

impl CwtKernels {
    pub fn new(psi: &TabulatedWavelet, n_scales: usize) -> Self {
        let mut kernels = Vec::with_capacity(n_scales);
        let mut half = Vec::with_capacity(n_scales);
        for a in 1..=n_scales {
            let a = a as f64;
            let h = (psi.half_support() * a).floor() as usize;
            let norm = a.sqrt().recip();
            kernels.push(
                (-(h as isize)..=h as isize)
                    .map(|d| psi.eval(d as f64 / a) * norm)
                    .collect(),
            );
            half.push(h);
        }
        Self { kernels, half }
    }

    pub fn n_scales(&self) -> usize {
        self.kernels.len()
    }

    /// Same-length transform of `window` for every scale, scale-major,
    /// with zeros assumed beyond the window edges.
    pub fn transform_into(&self, window: &[f64], out: &mut Vec<f64>) {
        let n = window.len() as isize;
        for (k, h) in self.kernels.iter().zip(&self.half) {
            let h = *h as isize;
            for tau in 0..n {
                let lo = (-h).max(-tau);
                let hi = h.min(n - 1 - tau);
                let mut acc = 0.0;
                for d in lo..=hi {
                    acc += window[(tau + d) as usize] * k[(d + h) as usize];
                }
                out.push(acc);
            }
        }
    }
}

/// Normalized autocorrelation at lags `1..=n_lags`; lag 0 is identically 1
/// and left out.
pub fn autocorr_features(x: &[f64], n_lags: usize) -> Result<Vec<f64>> {
    if n_lags == 0 || n_lags > x.len() / 2 {
        return Err(FeatureError::InvalidLags { n_lags, len: x.len() });
    }
    let r0: f64 = x.iter().map(|v| v * v).sum();
    if r0 == 0.0 {
        return Err(FeatureError::DegenerateWindow);
    }
    Ok((1..=n_lags)
        .map(|m| x[..x.len() - m].iter().zip(&x[m..]).map(|(a, b)| a * b).sum::<f64>() / r0)
        .collect())
}

/// Result of featurizing one record.
#[derive(Debug, Clone)]
pub struct Featurized {
    pub matrix: FeatureMatrix,
    /// Beats or windows rejected by bound or degeneracy checks.
    pub skipped: usize,
}

/// Extractor with its transform plans built once.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    layout: Layout,
    fs_hz: f64,
    stft: StftParams,
    plan: Option<SpectrumPlan>,
    hamming: Vec<f64>,
    cwt: Option<CwtKernels>,
}

impl FeatureExtractor {
    pub fn new(layout: Layout, fs_hz: f64) -> Result<Self> {
        Self::with_stft(layout, fs_hz, StftParams::default())
    }

    pub fn with_stft(layout: Layout, fs_hz: f64, stft: StftParams) -> Result<Self> {
        if !(fs_hz > 0.0) {
            return Err(FeatureError::InvalidParameter(format!("sampling rate {fs_hz}")));
        }
        if stft.window_n == 0 || stft.hop == 0 || stft.nfft < stft.window_n {
            return Err(FeatureError::InvalidParameter(format!("{stft:?}")));
        }
        let needs_stft = matches!(layout, Layout::Stft | Layout::Fused);
        let needs_cwt = matches!(layout, Layout::Cwt | Layout::Fused);
        let ext = Self {
            layout,
            fs_hz,
            stft,
            plan: if needs_stft { Some(SpectrumPlan::new(stft.nfft)?) } else { None },
            hamming: dsp::hamming_window(stft.window_n),
            cwt: needs_cwt.then(|| CwtKernels::new(&TabulatedWavelet::db5(CASCADE_ITERATIONS), DEFAULT_CWT_SCALES)),
        };
        match layout {
            Layout::Ac { n_lags, window_s } => {
                let w = ext.ac_window_len(window_s);
                if n_lags == 0 || 2 * n_lags > w {
                    return Err(FeatureError::InvalidLags { n_lags, len: w });
                }
            }
            Layout::AcBeat { n_lags } if n_lags == 0 || 2 * n_lags > BEAT_LEN => {
                return Err(FeatureError::InvalidLags {
                    n_lags,
                    len: BEAT_LEN,
                });
            }
            _ => {}
        }
        Ok(ext)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Samples in the one-second window centered on R.
    pub fn window_len(&self) -> usize {
        self.fs_hz.round() as usize
    }

    fn ac_window_len(&self, window_s: f64) -> usize {
        (window_s * self.fs_hz).round() as usize
    }

    pub fn stft_dim(&self) -> usize {
        self.stft.dim(self.window_len())
    }

    pub fn cwt_dim(&self) -> usize {
        DEFAULT_CWT_SCALES * self.window_len()
    }

    pub fn dim(&self) -> usize {
        match self.layout {
            Layout::Qrs30 => QRS_LEN,
            Layout::Beat300 => BEAT_LEN,
            Layout::Pqrst240 => PQRST_LEN,
            Layout::Stft => self.stft_dim(),
            Layout::Cwt => self.cwt_dim(),
            Layout::Ac { n_lags, .. } | Layout::AcBeat { n_lags } => n_lags,
            Layout::Fused => self.stft_dim() + self.cwt_dim() + FUSED_AC_LAGS,
        }
    }

    pub fn layout_id(&self) -> String {
        self.layout.id()
    }

    /// Short-time magnitude spectrum of one analysis window.
    pub fn stft_window(&self, window: &[f64], out: &mut Vec<f64>) -> Result<()> {
        let plan = match &self.plan {
            Some(p) => p,
            None => return Err(FeatureError::InvalidParameter("extractor has no STFT plan".into())),
        };
        let mut frame = vec![0.0; self.stft.window_n];
        for f in 0..self.stft.frames(window.len()) {
            let start = f * self.stft.hop;
            for (k, v) in frame.iter_mut().enumerate() {
                *v = window[start + k] * self.hamming[k];
            }
            plan.magnitudes_into(&frame, out)?;
        }
        Ok(())
    }

    pub fn cwt_window(&self, window: &[f64], out: &mut Vec<f64>) -> Result<()> {
        match &self.cwt {
            Some(k) => {
                k.transform_into(window, out);
                Ok(())
            }
            None => Err(FeatureError::InvalidParameter("extractor has no wavelet kernels".into())),
        }
    }

    fn centered_window<'a>(&self, x: &'a [f64], r: usize) -> Option<&'a [f64]> {
        let w = self.window_len();
        let start = r.checked_sub(w / 2)?;
        x.get(start..start + w)
    }

    pub fn extract(&self, record: &EcgRecord, det: &QrsDetection) -> Result<Featurized> {
        if (record.sampling_rate_hz() - self.fs_hz).abs() > 1e-9 {
            return Err(FeatureError::InvalidParameter(format!(
                "record at {} Hz, extractor built for {} Hz",
                record.sampling_rate_hz(),
                self.fs_hz
            )));
        }
        let mut out = Featurized {
            matrix: FeatureMatrix::new(self.layout_id(), self.dim()),
            skipped: 0,
        };
        let row = |r_index: usize, values: Vec<f64>| FeatureVector {
            subject_id: record.subject_id().to_string(),
            condition: record.condition(),
            r_index,
            values,
        };
        let x = record.samples();
        match self.layout {
            Layout::Qrs30 => {
                for ((r, on), off) in det.r_peaks.iter().zip(&det.qrs_onsets).zip(&det.qrs_offsets) {
                    match segment::resample_to_length(&x[*on..*off], QRS_LEN) {
                        Ok(v) => out.matrix.push(row(*r, v))?,
                        Err(_) => out.skipped += 1,
                    }
                }
            }
            Layout::Beat300 | Layout::AcBeat { .. } => {
                for beat in segment::segment_beats_midpoint(record, det)? {
                    let v = match segment::resample_to_length(&beat.samples, BEAT_LEN) {
                        Ok(v) => v,
                        Err(_) => {
                            out.skipped += 1;
                            continue;
                        }
                    };
                    let v = match self.layout {
                        Layout::AcBeat { n_lags } => match autocorr_features(&v, n_lags) {
                            Ok(ac) => ac,
                            Err(_) => {
                                out.skipped += 1;
                                continue;
                            }
                        },
                        _ => v,
                    };
                    out.matrix.push(row(beat.r_index, v))?;
                }
            }
            Layout::Pqrst240 => {
                let seg = segment::segment_pqrst(record, det)?;
                out.skipped += seg.skipped;
                for beat in seg.beats {
                    out.matrix.push(row(beat.r_index, beat.samples))?;
                }
            }
            Layout::Ac { n_lags, window_s } => {
                let w = self.ac_window_len(window_s);
                for (k, win) in x.chunks_exact(w).enumerate() {
                    match autocorr_features(win, n_lags) {
                        Ok(v) => out.matrix.push(row(k * w, v))?,
                        Err(_) => out.skipped += 1,
                    }
                }
            }
            Layout::Stft | Layout::Cwt | Layout::Fused => {
                for r in &det.r_peaks {
                    let Some(win) = self.centered_window(x, *r) else {
                        out.skipped += 1;
                        continue;
                    };
                    let mut v = Vec::with_capacity(self.dim());
                    if matches!(self.layout, Layout::Stft | Layout::Fused) {
                        self.stft_window(win, &mut v)?;
                    }
                    if matches!(self.layout, Layout::Cwt | Layout::Fused) {
                        self.cwt_window(win, &mut v)?;
                    }
                    if self.layout == Layout::Fused {
                        match autocorr_features(win, FUSED_AC_LAGS) {
                            Ok(ac) => v.extend(ac),
                            Err(_) => {
                                out.skipped += 1;
                                continue;
                            }
                        }
                    }
                    out.matrix.push(row(*r, v))?;
                }
            }
        }
        Ok(out)
    }
}

pub fn qrs_features(record: &EcgRecord, det: &QrsDetection) -> Result<Featurized> {
    FeatureExtractor::new(Layout::Qrs30, record.sampling_rate_hz())?.extract(record, det)
}

pub fn beat_features(record: &EcgRecord, det: &QrsDetection) -> Result<Featurized> {
    FeatureExtractor::new(Layout::Beat300, record.sampling_rate_hz())?.extract(record, det)
}

pub fn pqrst_features(record: &EcgRecord, det: &QrsDetection) -> Result<Featurized> {
    FeatureExtractor::new(Layout::Pqrst240, record.sampling_rate_hz())?.extract(record, det)
}

pub fn stft_features(record: &EcgRecord, det: &QrsDetection) -> Result<Featurized> {
    FeatureExtractor::new(Layout::Stft, record.sampling_rate_hz())?.extract(record, det)
}

pub fn cwt_features(record: &EcgRecord, det: &QrsDetection) -> Result<Featurized> {
    FeatureExtractor::new(Layout::Cwt, record.sampling_rate_hz())?.extract(record, det)
}

pub fn fused_features(record: &EcgRecord, det: &QrsDetection) -> Result<Featurized> {
    FeatureExtractor::new(Layout::Fused, record.sampling_rate_hz())?.extract(record, det)
}

/// Column threshold below which a standard deviation counts as zero.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScoreParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub fit_rows: usize,
}

impl ZScoreParams {
    pub fn fit(m: &FeatureMatrix) -> Result<Self> {
        let n = m.len();
        if n < 2 {
            return Err(FeatureError::TooFewRows(n));
        }
        let d = m.dim();
        let mut mean = vec![0.0; d];
        for r in m.rows() {
            for (acc, v) in mean.iter_mut().zip(&r.values) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; d];
        for r in m.rows() {
            for ((acc, v), mu) in var.iter_mut().zip(&r.values).zip(&mean) {
                let c = v - mu;
                *acc += c * c;
            }
        }
        let std = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Self { mean, std, fit_rows: n })
    }

    pub fn is_degenerate(&self, column: usize) -> bool {
        self.std[column] < DEGENERATE_STD
    }

    pub fn transform_row(&self, values: &mut [f64]) {
        for ((v, mu), sd) in values.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = if *sd < DEGENERATE_STD { 0.0 } else { (*v - mu) / sd };
        }
    }

    pub fn apply_in_place(&self, m: &mut FeatureMatrix) -> Result<()> {
        if m.dim() != self.mean.len() {
            return Err(FeatureError::DimensionMismatch {
                expected: self.mean.len(),
                got: m.dim(),
            });
        }
        for r in m.rows_mut() {
            self.transform_row(&mut r.values);
        }
        Ok(())
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut out = m.clone();
        self.apply_in_place(&mut out)?;
        Ok(out)
    }
}

pub fn format_matrix(m: &FeatureMatrix) -> String {
    let mut s = format!("layout={},dim={}\n", m.layout_id(), m.dim());
    for r in m.rows() {
        s.push_str(&r.subject_id);
        s.push(',');
        s.push_str(r.condition.as_str());
        for v in &r.values {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Parses the text written by [`format_matrix`]. The file does not carry
/// anchors, so `r_index` is set to the row's position in the file.
pub fn parse_matrix(text: &str) -> Result<FeatureMatrix> {
    let bad = |line: usize, reason: String| FeatureError::MalformedFile { line, reason };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let mut layout = None;
    let mut dim = None;
    for field in header.split(',') {
        match field.split_once('=') {
            Some(("layout", v)) => layout = Some(v.to_string()),
            Some(("dim", v)) => dim = Some(v.parse::<usize>().map_err(|e| bad(1, format!("dim: {e}")))?),
            _ => return Err(bad(1, format!("unexpected header field {field:?}"))),
        }
    }
    let (Some(layout), Some(dim)) = (layout, dim) else {
        return Err(bad(1, "header needs layout= and dim=".into()));
    };
    let mut m = FeatureMatrix::new(layout, dim);
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let subject = parts.next().unwrap_or_default().to_string();
        let condition: Condition = parts
            .next()
            .ok_or_else(|| bad(i + 1, "missing condition".into()))?
            .parse()
            .map_err(|_| bad(i + 1, "bad condition".into()))?;
        let values = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(i + 1, e.to_string()))?;
        let r_index = m.len();
        m.push(FeatureVector {
            subject_id: subject,
            condition,
            r_index,
            values,
        })
        .map_err(|e| bad(i + 1, e.to_string()))?;
    }
    Ok(m)
}

pub fn save_matrix(m: &FeatureMatrix, path: &Path) -> Result<()> {
    std::fs::write(path, format_matrix(m))?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<FeatureMatrix> {
    parse_matrix(&std::fs::read_to_string(path)?)
}
