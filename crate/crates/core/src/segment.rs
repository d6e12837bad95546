//! Heartbeat segmentation and heart-rate-adaptive beat reconstruction.

use thiserror::Error;

use crate::detect::QrsDetection;
use crate::ingest::{Condition, EcgRecord};

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("need at least three R peaks for midpoint segmentation, got {0}")]
    TooFewBeats(usize),
    #[error("segment of {0} samples cannot be resampled (need at least 2)")]
    SegmentTooShort(usize),
    #[error("invalid target length {0} (need at least 2)")]
    InvalidTargetLength(usize),
    #[error("implausible RR interval {0} s")]
    ImplausibleRR(f64),
    #[error("heart rate {0} bpm outside the threshold table")]
    OutOfTable(f64),
    #[error("beat at {r_index} needs samples [{start}, {end}) outside record of {len}")]
    BeatOutOfBounds {
        r_index: usize,
        start: isize,
        end: isize,
        len: usize,
    },
    #[error("T window is empty for RR {0} s")]
    NonPositiveSlice(f64),
    #[error("empty {0} segment")]
    EmptyPart(&'static str),
}

pub type Result<T> = std::result::Result<T, SegmentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BeatKind {
    Raw,
    Qrs30,
    Beat300,
    Pqrst240,
}

impl BeatKind {
    pub fn expected_len(&self) -> Option<usize> {
        match self {
            BeatKind::Raw => None,
            BeatKind::Qrs30 => Some(30),
            BeatKind::Beat300 => Some(300),
            BeatKind::Pqrst240 => Some(240),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatSegment {
    pub subject_id: String,
    pub condition: Condition,
    /// R-peak index in the source record.
    pub r_index: usize,
    /// First sample of the segment in the source record (raw beats only;
    /// resampled beats keep the start of their source slice).
    pub start: usize,
    pub samples: Vec<f64>,
    pub kind: BeatKind,
}

/// Beat windows before resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct PqrstParts {
    pub subject_id: String,
    pub condition: Condition,
    pub r_index: usize,
    pub pq: Vec<f64>,
    pub qrs: Vec<f64>,
    pub st: Vec<f64>,
    pub t: Vec<f64>,
    pub heart_rate_bpm: f64,
    pub rr_s: f64,
}

/// Splits the record between consecutive RR midpoints. The first and last
/// peaks have no two-sided midpoint and are dropped.
pub fn segment_beats_midpoint(record: &EcgRecord, det: &QrsDetection) -> Result<Vec<BeatSegment>> {
    let r = &det.r_peaks;
    if r.len() < 3 {
        return Err(SegmentError::TooFewBeats(r.len()));
    }
    let x = record.samples();
    Ok(r.windows(3)
        .map(|w| {
            let start = (w[0] + w[1]) / 2;
            let end = (w[1] + w[2]) / 2;
            BeatSegment {
                subject_id: record.subject_id().to_string(),
                condition: record.condition(),
                r_index: w[1],
                start,
                samples: x[start..end].to_vec(),
                kind: BeatKind::Raw,
            }
        })
        .collect())
}

/// Linear-interpolation resampling that keeps both endpoints.
///
/// Output sample `j` (0-based) sits at source position `j (n* - 1) / (n - 1)`;
/// the integer and fractional parts are computed exactly in integers.
pub fn resample_to_length(y: &[f64], n: usize) -> Result<Vec<f64>> {
    let m = y.len();
    if m < 2 {
        return Err(SegmentError::SegmentTooShort(m));
    }
    if n < 2 {
        return Err(SegmentError::InvalidTargetLength(n));
    }
    let span = n - 1;
    Ok((0..n)
        .map(|j| {
            let num = j * (m - 1);
            let base = num / span;
            let rem = num % span;
            if rem == 0 {
                y[base]
            } else {
                let frac = rem as f64 / span as f64;
                y[base] + (y[base + 1] - y[base]) * frac
            }
        })
        .collect())
}

pub fn heart_rate_from_rr(rr_s: f64) -> Result<f64> {
    if !(0.2..=3.0).contains(&rr_s) {
        return Err(SegmentError::ImplausibleRR(rr_s));
    }
    Ok(60.0 / rr_s)
}

/// PQ start offset in milliseconds for the given heart rate.
pub fn dt_threshold(hr_bpm: f64) -> Result<f64> {
    if !(30.0..155.0).contains(&hr_bpm) {
        return Err(SegmentError::OutOfTable(hr_bpm));
    }
    const BRACKETS: [(f64, f64); 6] = [
        (65.0, -10.0),
        (80.0, 0.0),
        (95.0, 10.0),
        (110.0, 20.0),
        (125.0, 30.0),
        (140.0, 40.0),
    ];
    Ok(BRACKETS
        .iter()
        .find(|(upper, _)| hr_bpm < *upper)
        .map_or(50.0, |(_, dt)| *dt))
}

pub fn ms_to_samples(ms: f64, fs_hz: f64) -> isize {
    (ms * fs_hz / 1000.0).round() as isize
}

/// Sample offsets of the four windows relative to R, as half-open ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PqrstWindows {
    pub pq: (isize, isize),
    pub qrs: (isize, isize),
    pub st: (isize, isize),
    pub t: (isize, isize),
}

/// Window offsets. `hr_rr_s` picks the PQ threshold; `rr_s` scales the ST
/// and T windows.
pub fn pqrst_windows(hr_rr_s: f64, rr_s: f64, fs_hz: f64) -> Result<PqrstWindows> {
    let hr = heart_rate_from_rr(hr_rr_s)?;
    heart_rate_from_rr(rr_s)?;
    let dt = dt_threshold(hr)?;
    let qrs_start = -ms_to_samples(90.0, fs_hz);
    let qrs_end = ms_to_samples(100.0, fs_hz);
    let pq_start = -ms_to_samples(230.0, fs_hz) + ms_to_samples(dt, fs_hz);
    let st_end = qrs_end + ms_to_samples(80.0 * rr_s, fs_hz);
    let t_end = ms_to_samples(420.0 * rr_s, fs_hz);
    if t_end <= st_end {
        return Err(SegmentError::NonPositiveSlice(rr_s));
    }
    Ok(PqrstWindows {
        pq: (pq_start, qrs_start),
        qrs: (qrs_start, qrs_end),
        st: (qrs_end, st_end),
        t: (st_end, t_end),
    })
}

/// Cuts the PQ, QRS, ST and T windows around `r_index` using one RR value
/// for both the threshold lookup and the ST/T scaling.
pub fn extract_pqrst(record: &EcgRecord, r_index: usize, rr_s: f64) -> Result<PqrstParts> {
    extract_pqrst_with(record, r_index, rr_s, rr_s)
}

pub fn extract_pqrst_with(
    record: &EcgRecord,
    r_index: usize,
    hr_rr_s: f64,
    rr_s: f64,
) -> Result<PqrstParts> {
    let fs = record.sampling_rate_hz();
    let w = pqrst_windows(hr_rr_s, rr_s, fs)?;
    let x = record.samples();
    let r = r_index as isize;
    let (start, end) = (r + w.pq.0, r + w.t.1);
    if start < 0 || end > x.len() as isize {
        return Err(SegmentError::BeatOutOfBounds {
            r_index,
            start,
            end,
            len: x.len(),
        });
    }
    let cut = |(a, b): (isize, isize)| x[(r + a) as usize..(r + b) as usize].to_vec();
    Ok(PqrstParts {
        subject_id: record.subject_id().to_string(),
        condition: record.condition(),
        r_index,
        pq: cut(w.pq),
        qrs: cut(w.qrs),
        st: cut(w.st),
        t: cut(w.t),
        heart_rate_bpm: 60.0 / hr_rr_s,
        rr_s,
    })
}

fn stretch(part: &[f64], n: usize, name: &'static str) -> Result<Vec<f64>> {
    match part.len() {
        0 => Err(SegmentError::EmptyPart(name)),
        1 => Ok(vec![part[0]; n]),
        _ => resample_to_length(part, n),
    }
}

/// Resamples PQ to 450 ms, ST to 110 ms and T to 50 ms around the
/// unchanged QRS, then removes the mean.
pub fn reconstruct_beat(parts: &PqrstParts, fs_hz: f64) -> Result<BeatSegment> {
    let len = |ms: f64| ms_to_samples(ms, fs_hz).max(2) as usize;
    if parts.qrs.is_empty() {
        return Err(SegmentError::EmptyPart("QRS"));
    }
    let mut samples = stretch(&parts.pq, len(450.0), "PQ")?;
    samples.extend_from_slice(&parts.qrs);
    samples.extend(stretch(&parts.st, len(110.0), "ST")?);
    samples.extend(stretch(&parts.t, len(50.0), "T")?);
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.iter_mut().for_each(|v| *v -= mean);
    let pq_offset = parts.pq.len() + ms_to_samples(90.0, fs_hz).max(0) as usize;
    Ok(BeatSegment {
        subject_id: parts.subject_id.clone(),
        condition: parts.condition,
        r_index: parts.r_index,
        start: parts.r_index.saturating_sub(pq_offset),
        samples,
        kind: BeatKind::Pqrst240,
    })
}

/// Beats that survived segmentation plus the number rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segmented {
    pub beats: Vec<BeatSegment>,
    pub skipped: usize,
}

/// Reconstructed beats for every interior peak. The threshold lookup uses
/// the mean of the two adjacent RR intervals; ST/T use the preceding one.
/// Beats whose windows fail are counted rather than returned as errors.
pub fn segment_pqrst(record: &EcgRecord, det: &QrsDetection) -> Result<Segmented> {
    let r = &det.r_peaks;
    if r.len() < 3 {
        return Err(SegmentError::TooFewBeats(r.len()));
    }
    let fs = record.sampling_rate_hz();
    let mut out = Segmented::default();
    for w in r.windows(3) {
        let prev_rr = (w[1] - w[0]) as f64 / fs;
        let local_rr = (w[2] - w[0]) as f64 / (2.0 * fs);
        match extract_pqrst_with(record, w[1], local_rr, prev_rr).and_then(|p| reconstruct_beat(&p, fs)) {
            Ok(beat) => out.beats.push(beat),
            Err(_) => out.skipped += 1,
        }
    }
    Ok(out)
}
