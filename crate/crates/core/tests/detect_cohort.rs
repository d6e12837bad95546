//! Detector chain against direct convolution, and detection against the
//! generator's ground truth.

use ecgid_core::detect::{
    derivative_filter, detect_r_peaks, moving_window_integrate, pt_bandpass, square_signal, QrsDetection,
};
use ecgid_core::dsp::bandpass_zero_phase;
use ecgid_core::ingest::{synthesize_cohort, synthesize_record, CohortSpec, GeneratorParams};
use ecgid_core::Condition;
use proptest::prelude::*;

const FS: f64 = 300.0;
const TOL: usize = 3;

/// Causal FIR with zero history, written as an explicit convolution sum.
fn convolve(h: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| (0..h.len()).filter(|k| *k <= n).map(|k| h[k] * x[n - k]).sum())
        .collect()
}

#[test]
fn derivative_examples() {
    let ramp: Vec<f64> = (0..20).map(f64::from).collect();
    let d = derivative_filter(&ramp).unwrap();
    assert!(d[4..].iter().all(|v| (v - 1.25).abs() < 1e-12));
    let d = derivative_filter(&[3.0; 10]).unwrap();
    assert!(d[4..].iter().all(|v| v.abs() < 1e-12));
    let mut imp = vec![0.0; 8];
    imp[0] = 1.0;
    let d = derivative_filter(&imp).unwrap();
    let want = [0.25, 0.125, 0.0, -0.125, -0.25, 0.0, 0.0, 0.0];
    assert!(d.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15));
    assert!(derivative_filter(&[1.0; 4]).is_err());
}

#[test]
fn integrator_examples() {
    let mut imp = vec![0.0; 6];
    imp[0] = 1.0;
    let y = moving_window_integrate(&imp, 3).unwrap();
    let third = 1.0 / 3.0;
    assert!(y.iter().zip([third, third, third, 0.0, 0.0, 0.0]).all(|(a, b)| (a - b).abs() < 1e-15));
    let c = moving_window_integrate(&[2.5; 30], 7).unwrap();
    assert!(c[6..].iter().all(|v| (v - 2.5).abs() < 1e-12));
    assert!(moving_window_integrate(&[1.0; 3], 4).is_err());
    assert_eq!(square_signal(&[-2.0, 3.0]), vec![4.0, 9.0]);
}

proptest! {
    #[test]
    fn chain_matches_convolution(x in prop::collection::vec(-2.0f64..2.0, 5..120), n_win in 1usize..30) {
        let n_win = n_win.min(x.len());
        let d = derivative_filter(&x).unwrap();
        let want = convolve(&[0.25, 0.125, 0.0, -0.125, -0.25], &x);
        for (a, b) in d.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        let sq = square_signal(&d);
        for (s, v) in sq.iter().zip(&d) {
            prop_assert!(*s >= 0.0 && (*s - v * v).abs() <= 1e-12);
        }
        let y = moving_window_integrate(&sq, n_win).unwrap();
        let box_filter = vec![1.0 / n_win as f64; n_win];
        for (a, b) in y.iter().zip(convolve(&box_filter, &sq)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn pan_tompkins_band_retains_qrs_energy() {
    let n = 6000;
    let tone = |f: f64| (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / FS).sin()).collect::<Vec<_>>();
    let rms = |x: &[f64]| (x[n / 4..3 * n / 4].iter().map(|v| v * v).sum::<f64>() / (n / 2) as f64).sqrt();
    let y = pt_bandpass(&tone(10.0), FS).unwrap();
    assert!((rms(&y) / rms(&tone(10.0)) - 1.0).abs() < 0.05);
    let y = pt_bandpass(&tone(0.2), FS).unwrap();
    assert!(rms(&y) < 0.05 * rms(&tone(0.2)));
    assert!(pt_bandpass(&vec![0.0; 600], FS).unwrap().iter().all(|v| *v == 0.0));
}

/// (sensitivity, positive predictivity) matching each truth peak to at
/// most one detection within `TOL` samples.
fn score(truth: &[usize], det: &[usize]) -> (f64, f64) {
    let mut used = vec![false; det.len()];
    let mut tp = 0;
    for t in truth {
        let hit = det
            .iter()
            .enumerate()
            .filter(|(j, d)| !used[*j] && d.abs_diff(*t) <= TOL)
            .min_by_key(|(_, d)| d.abs_diff(*t));
        if let Some((j, _)) = hit {
            used[j] = true;
            tp += 1;
        }
    }
    (tp as f64 / truth.len() as f64, tp as f64 / det.len() as f64)
}

/// Drops beats within the refinement half window of either record edge,
/// where the QRS complex itself is cut off.
fn inner(peaks: &[usize], len: usize) -> Vec<usize> {
    let guard = (0.05 * FS) as usize;
    peaks.iter().copied().filter(|p| *p >= guard && p + guard < len).collect()
}

fn preprocess(x: &[f64]) -> Vec<f64> {
    bandpass_zero_phase(x, 4, 0.5, 40.0, FS).unwrap()
}

#[test]
fn noise_off_cohorts_are_detected() {
    for seed in [1u64, 2, 3] {
        let spec = CohortSpec {
            subjects: 10,
            rest_s: 60.0,
            ex_s: 60.0,
            seed,
            noise_on: false,
            exercise_shift: true,
        };
        for synth in synthesize_cohort(&spec).unwrap() {
            let x = preprocess(synth.record.samples());
            let det = detect_r_peaks(&x, FS).unwrap();
            let (se, ppv) = score(&inner(&synth.r_peaks, x.len()), &inner(&det.r_peaks, x.len()));
            let id = format!("seed {seed} {} {}", synth.record.subject_id(), synth.record.condition());
            assert!(se >= 0.99 && ppv >= 0.99, "{id}: se {se} ppv {ppv}");
            assert!(synth.r_peaks.len().abs_diff(det.len()) <= 1, "{id}");
            check_invariants(&det);
        }
    }
}

fn check_invariants(det: &QrsDetection) {
    let refractory = (0.2 * FS) as usize;
    assert!(det.r_peaks.windows(2).all(|w| w[1] - w[0] >= refractory));
    for i in 0..det.len() {
        assert!(det.qrs_onsets[i] < det.r_peaks[i] && det.r_peaks[i] < det.qrs_offsets[i]);
    }
}

fn fixed_rate(hr: f64) -> GeneratorParams {
    let mut p = ecgid_core::ingest::generate_subject_params("s01", 7);
    p.rest_hr_bpm = hr.min(p.rest_hr_bpm);
    p.ex_hr_bpm = hr;
    p.hr_jitter_frac = 0.0;
    p
}

#[test]
fn rest_record_at_sixty_bpm() {
    let mut p = fixed_rate(90.0);
    p.rest_hr_bpm = 60.0;
    let synth = synthesize_record(&p, Condition::Rest, 30.0, false, 1).unwrap();
    let det = detect_r_peaks(&preprocess(synth.record.samples()), FS).unwrap();
    assert!(det.len().abs_diff(30) <= 1, "{} peaks", det.len());
    let (se, ppv) = score(&synth.r_peaks, &det.r_peaks);
    assert_eq!((se, ppv), (1.0, 1.0));
}

#[test]
fn exercise_bound_rate() {
    let synth = synthesize_record(&fixed_rate(150.0), Condition::PostExercise, 30.0, false, 2).unwrap();
    let det = detect_r_peaks(&preprocess(synth.record.samples()), FS).unwrap();
    let rr = det.rr_samples();
    let mean_s = rr.iter().sum::<usize>() as f64 / rr.len() as f64 / FS;
    assert!((mean_s / 0.4 - 1.0).abs() < 0.02, "mean RR {mean_s}");
}

#[test]
fn amplitude_scale_invariance() {
    let spec = CohortSpec {
        subjects: 3,
        rest_s: 20.0,
        ex_s: 20.0,
        seed: 11,
        noise_on: true,
        exercise_shift: true,
    };
    for synth in synthesize_cohort(&spec).unwrap() {
        let x = preprocess(synth.record.samples());
        let base = detect_r_peaks(&x, FS).unwrap();
        for alpha in [0.01, 0.5, 2.0, 1000.0] {
            let scaled: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            assert_eq!(detect_r_peaks(&scaled, FS).unwrap().r_peaks, base.r_peaks, "alpha {alpha}");
        }
        assert_eq!(detect_r_peaks(&x, FS).unwrap(), base);
    }
}

#[test]
fn flat_signal_has_no_beats() {
    assert!(detect_r_peaks(&vec![0.0; 3000], FS).is_err());
}
