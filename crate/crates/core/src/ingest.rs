//! Labelled single-lead ECG records: text I/O, cohort manifests and a
//! parametric sum-of-Gaussians generator for synthetic cohorts.
//!
//! Record file layout: a first line `fs=<integer Hz>`, then one decimal
//! amplitude (millivolts) per line, LF-terminated. Manifest layout: one
//! entry per line, `subject_id,condition,relative_path,duration_s`; lines
//! starting with `#` are comments. A synthetic cohort records its seed in a
//! `# seed=<u64>` comment.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Highest preprocessing cutoff; records must sample above twice this.
pub const MAX_CUTOFF_HZ: f64 = 40.0;
/// Minimum record duration in seconds.
pub const MIN_DURATION_S: f64 = 2.0;
/// Sampling rate of the reference database.
pub const DEFAULT_SAMPLING_RATE_HZ: f64 = 300.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed file at line {line}: {reason}")]
    MalformedFile { line: usize, reason: String },
    #[error("record too short: {samples} samples, need at least {required}")]
    TooShort { samples: usize, required: usize },
    #[error("non-finite sample at line {line}")]
    NonFiniteSample { line: usize },
    #[error("invalid sampling rate {0} Hz (must exceed {limit} Hz)", limit = 2.0 * MAX_CUTOFF_HZ)]
    InvalidSamplingRate(f64),
    #[error("sampling rate {0} Hz is not an integer and cannot be written to a record file")]
    NonIntegerSamplingRate(f64),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("duration {0} s is below the {MIN_DURATION_S} s minimum")]
    InvalidDuration(f64),
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Rest,
    PostExercise,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::Rest, Condition::PostExercise];

    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Rest => "rest",
            Condition::PostExercise => "post_exercise",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "rest" => Ok(Condition::Rest),
            "post_exercise" | "ex" | "exercise" => Ok(Condition::PostExercise),
            other => Err(format!(
                "unknown condition `{other}` (expected rest|post_exercise)"
            )),
        }
    }
}

/// One subject's single-lead recording under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    subject_id: String,
    condition: Condition,
    sampling_rate_hz: f64,
    samples: Vec<f64>,
}

impl EcgRecord {
    pub fn new(
        subject_id: impl Into<String>,
        condition: Condition,
        sampling_rate_hz: f64,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if !sampling_rate_hz.is_finite() || sampling_rate_hz <= 2.0 * MAX_CUTOFF_HZ {
            return Err(IngestError::InvalidSamplingRate(sampling_rate_hz));
        }
        let required = (MIN_DURATION_S * sampling_rate_hz).ceil() as usize;
        if samples.len() < required {
            return Err(IngestError::TooShort {
                samples: samples.len(),
                required,
            });
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            // line numbers are 1-based and the header occupies line 1
            return Err(IngestError::NonFiniteSample { line: i + 2 });
        }
        Ok(Self {
            subject_id: subject_id.into(),
            condition,
            sampling_rate_hz,
            samples,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_rate_hz
    }

    /// Same labels and rate, different samples (e.g. a filtered copy).
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(
            self.subject_id.clone(),
            self.condition,
            self.sampling_rate_hz,
            samples,
        )
    }
}

/// Parses a record file. Sample lines may be surrounded by whitespace; the
/// trailing LF of the last line is optional.
pub fn parse_record(text: &str, subject_id: &str, condition: Condition) -> Result<EcgRecord> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| IngestError::MalformedFile {
        line: 1,
        reason: "empty file".into(),
    })?;
    let fs = header
        .trim()
        .strip_prefix("fs=")
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| IngestError::MalformedFile {
            line: 1,
            reason: format!("expected header `fs=<integer Hz>`, found `{header}`"),
        })?;
    let mut samples = Vec::new();
    for (i, line) in lines {
        let value: f64 = line.trim().parse().map_err(|_| IngestError::MalformedFile {
            line: i + 1,
            reason: format!("not a decimal number: `{line}`"),
        })?;
        if !value.is_finite() {
            return Err(IngestError::NonFiniteSample { line: i + 1 });
        }
        samples.push(value);
    }
    EcgRecord::new(subject_id, condition, f64::from(fs), samples)
}

pub fn load_record(path: &Path, subject_id: &str, condition: Condition) -> Result<EcgRecord> {
    let text = fs::read_to_string(path)?;
    parse_record(&text, subject_id, condition)
}

/// Renders the record file text. Samples use the shortest decimal that
/// parses back to the identical `f64`.
pub fn format_record(record: &EcgRecord) -> Result<String> {
    let fs = record.sampling_rate_hz;
    if fs.fract() != 0.0 {
        return Err(IngestError::NonIntegerSamplingRate(fs));
    }
    let mut out = String::with_capacity(record.samples.len() * 12 + 16);
    out.push_str(&format!("fs={}\n", fs as u64));
    for v in &record.samples {
        out.push_str(&format!("{v}\n"));
    }
    Ok(out)
}

pub fn save_record(record: &EcgRecord, path: &Path) -> Result<()> {
    let text = format_record(record)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub condition: Condition,
    pub path: PathBuf,
    pub duration_s: f64,
}

/// Cohort listing. Entry paths are relative to `base_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: Option<u64>,
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(IngestError::InvalidManifest("no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.subject_id.is_empty() || e.subject_id.contains(',') {
                return Err(IngestError::InvalidManifest(format!(
                    "invalid subject id `{}`",
                    e.subject_id
                )));
            }
            if !seen.insert((e.subject_id.as_str(), e.condition, e.path.as_path())) {
                return Err(IngestError::InvalidManifest(format!(
                    "duplicate entry ({}, {}, {})",
                    e.subject_id,
                    e.condition,
                    e.path.display()
                )));
            }
        }
        for subject in self.subjects() {
            if !self.has(&subject, Condition::Rest) {
                return Err(IngestError::InvalidManifest(format!(
                    "subject {subject} has no rest entry"
                )));
            }
        }
        Ok(())
    }

    /// Additional check for protocols that test on post-exercise data.
    pub fn require_exercise(&self) -> Result<()> {
        for subject in self.subjects() {
            if !self.has(&subject, Condition::PostExercise) {
                return Err(IngestError::InvalidManifest(format!(
                    "subject {subject} has no post_exercise entry"
                )));
            }
        }
        Ok(())
    }

    fn has(&self, subject: &str, condition: Condition) -> bool {
        self.entries
            .iter()
            .any(|e| e.subject_id == subject && e.condition == condition)
    }

    /// Sorted, de-duplicated subject ids.
    pub fn subjects(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.subject_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    /// Loads every listed record, in manifest order.
    pub fn load_records(&self) -> Result<Vec<EcgRecord>> {
        self.entries
            .iter()
            .map(|e| load_record(&self.resolve(e), &e.subject_id, e.condition))
            .collect()
    }
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    let mut seed = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("seed=") {
                seed = Some(v.trim().parse::<u64>().map_err(|_| {
                    IngestError::MalformedFile {
                        line: i + 1,
                        reason: format!("bad seed `{v}`"),
                    }
                })?);
            }
            continue;
        }
        let malformed = |reason: String| IngestError::MalformedFile {
            line: i + 1,
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(malformed(format!(
                "expected `subject_id,condition,relative_path,duration_s`, found `{line}`"
            )));
        }
        let condition = fields[1].parse::<Condition>().map_err(malformed)?;
        let duration_s = fields[3]
            .parse::<f64>()
            .ok()
            .filter(|d| d.is_finite() && *d > 0.0)
            .ok_or_else(|| malformed(format!("bad duration `{}`", fields[3])))?;
        entries.push(ManifestEntry {
            subject_id: fields[0].to_string(),
            condition,
            path: PathBuf::from(fields[2]),
            duration_s,
        });
    }
    let manifest = DatasetManifest {
        entries,
        seed,
        base_dir: base_dir.to_path_buf(),
    };
    manifest.validate()?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}

pub fn format_manifest(manifest: &DatasetManifest) -> String {
    let mut out = String::from("# subject_id,condition,relative_path,duration_s\n");
    if let Some(seed) = manifest.seed {
        out.push_str(&format!("# seed={seed}\n"));
    }
    for e in &manifest.entries {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.subject_id,
            e.condition,
            e.path.display(),
            e.duration_s
        ));
    }
    out
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    fs::write(path, format_manifest(manifest))?;
    Ok(())
}

/// One Gaussian component of the beat template.
///
/// `center` is the offset from the R peak as a fraction of the current
/// beat's RR interval. `width` is the standard deviation, a fraction of the
/// current RR for P and T but of the subject's resting period for Q, R and
/// S, so QRS widths do not change with heart rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wave {
    pub amplitude_mv: f64,
    pub center: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub subject_id: String,
    pub p: Wave,
    pub q: Wave,
    pub r: Wave,
    pub s: Wave,
    pub t: Wave,
    pub rest_hr_bpm: f64,
    pub ex_hr_bpm: f64,
    pub hr_jitter_frac: f64,
    pub baseline_wander_mv: f64,
    pub powerline_mv: f64,
    pub white_noise_mv: f64,
    /// P amplitude multiplier under post-exercise.
    pub exercise_p_gain: f64,
    /// T amplitude multiplier under post-exercise.
    pub exercise_t_gain: f64,
    pub sampling_rate_hz: f64,
}

pub const DEFAULT_EXERCISE_P_GAIN: f64 = 1.3;
pub const DEFAULT_EXERCISE_T_GAIN: f64 = 0.6;
pub const DEFAULT_HR_JITTER_FRAC: f64 = 0.03;

impl GeneratorParams {
    pub fn waves(&self) -> [Wave; 5] {
        [self.p, self.q, self.r, self.s, self.t]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IngestError::InvalidParams(m));
        let w = self.waves();
        if w.windows(2).any(|pair| pair[0].center >= pair[1].center) {
            return bad("wave centers must be strictly ordered P < Q < R < S < T".into());
        }
        if w.iter().any(|x| x.center.abs() >= 0.5) {
            return bad("wave centers must lie within one beat period".into());
        }
        if w.iter().any(|x| !(x.width > 0.0)) {
            return bad("wave widths must be positive".into());
        }
        let r_amp = self.r.amplitude_mv;
        let others = [self.p, self.q, self.s, self.t];
        let all_zero = w.iter().all(|x| x.amplitude_mv == 0.0);
        if !all_zero && others.iter().any(|x| x.amplitude_mv.abs() >= r_amp) {
            return bad("R amplitude must exceed every other wave amplitude".into());
        }
        if !(self.ex_hr_bpm > self.rest_hr_bpm) || self.rest_hr_bpm <= 0.0 {
            return bad(format!(
                "exercise HR {} must exceed rest HR {}",
                self.ex_hr_bpm, self.rest_hr_bpm
            ));
        }
        if !(self.hr_jitter_frac >= 0.0 && self.hr_jitter_frac < 0.5) {
            return bad(format!("HR jitter {} outside [0, 0.5)", self.hr_jitter_frac));
        }
        if self.sampling_rate_hz <= 2.0 * MAX_CUTOFF_HZ {
            return Err(IngestError::InvalidSamplingRate(self.sampling_rate_hz));
        }
        Ok(())
    }

    /// Wave set used under `condition` (exercise gains applied to P and T).
    pub fn waves_for(&self, condition: Condition) -> [Wave; 5] {
        let mut w = self.waves();
        if condition == Condition::PostExercise {
            w[0].amplitude_mv *= self.exercise_p_gain;
            w[4].amplitude_mv *= self.exercise_t_gain;
        }
        w
    }

    pub fn hr_for(&self, condition: Condition) -> f64 {
        match condition {
            Condition::Rest => self.rest_hr_bpm,
            Condition::PostExercise => self.ex_hr_bpm,
        }
    }
}

/// FNV-1a over the id bytes, mixed with the cohort seed.
fn subject_seed(subject_id: &str, cohort_seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in subject_id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ cohort_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Deterministic per-subject template drawn from `(subject_id, cohort_seed)`.
pub fn generate_subject_params(subject_id: &str, cohort_seed: u64) -> GeneratorParams {
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(subject_id, cohort_seed));
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let p = Wave {
        amplitude_mv: u(0.08, 0.25),
        center: -u(0.16, 0.22),
        width: u(0.020, 0.035),
    };
    let q = Wave {
        amplitude_mv: -u(0.05, 0.20),
        center: -u(0.025, 0.040),
        width: u(0.008, 0.013),
    };
    let r = Wave {
        amplitude_mv: u(0.8, 1.6),
        center: 0.0,
        width: u(0.009, 0.014),
    };
    let s = Wave {
        amplitude_mv: -u(0.10, 0.40),
        center: u(0.025, 0.045),
        width: u(0.008, 0.014),
    };
    let t = Wave {
        amplitude_mv: u(0.20, 0.50),
        center: u(0.28, 0.36),
        width: u(0.040, 0.070),
    };
    let ex_hr_bpm = u(90.0, 150.0);
    let rest_hr_bpm: f64 = Normal::new(70.0_f64, 4.0)
        .expect("valid normal")
        .sample(&mut rng)
        .clamp(60.0, 80.0);
    GeneratorParams {
        subject_id: subject_id.to_string(),
        p,
        q,
        r,
        s,
        t,
        rest_hr_bpm,
        ex_hr_bpm,
        hr_jitter_frac: DEFAULT_HR_JITTER_FRAC,
        baseline_wander_mv: 0.05,
        powerline_mv: 0.02,
        white_noise_mv: 0.01,
        exercise_p_gain: DEFAULT_EXERCISE_P_GAIN,
        exercise_t_gain: DEFAULT_EXERCISE_T_GAIN,
        sampling_rate_hz: DEFAULT_SAMPLING_RATE_HZ,
    }
}

/// A synthetic record with its generator ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticRecord {
    pub record: EcgRecord,
    /// Sample indices of the R-wave centers that fall inside the record.
    pub r_peaks: Vec<usize>,
    /// Exact R-wave center times in seconds (same order as `r_peaks`).
    pub r_times_s: Vec<f64>,
}

/// Renders a sum-of-Gaussians beat train.
///
/// Beat periods follow the condition's heart rate with uniform
/// multiplicative jitter of `±hr_jitter_frac`. With `noise_on`, adds a
/// 0.25 Hz baseline wander, 50 Hz powerline and white noise at the levels
/// in `params`.
pub fn synthesize_record(
    params: &GeneratorParams,
    condition: Condition,
    duration_s: f64,
    noise_on: bool,
    rng_seed: u64,
) -> Result<SyntheticRecord> {
    if !(duration_s >= MIN_DURATION_S) || !duration_s.is_finite() {
        return Err(IngestError::InvalidDuration(duration_s));
    }
    params.validate()?;
    let fs = params.sampling_rate_hz;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let waves = params.waves_for(condition);
    let rest_period = 60.0 / params.rest_hr_bpm;
    let period = 60.0 / params.hr_for(condition);
    let jitter = params.hr_jitter_frac;

    let mut samples = vec![0.0; n];
    let mut r_peaks = Vec::new();
    let mut r_times = Vec::new();
    // start half a beat in so the first P wave is on the record
    let mut t_r = 0.5 * period;
    let end = n as f64 / fs;
    while t_r < end + period {
        let rr = if jitter > 0.0 {
            period * (1.0 + rng.gen_range(-jitter..=jitter))
        } else {
            period
        };
        for (k, w) in waves.iter().enumerate() {
            if w.amplitude_mv == 0.0 {
                continue;
            }
            let width_scale = if k == 0 || k == 4 { rr } else { rest_period };
            let mu = t_r + w.center * rr;
            let sigma = w.width * width_scale;
            let lo = (((mu - 6.0 * sigma) * fs).floor().max(0.0)) as usize;
            let hi = (((mu + 6.0 * sigma) * fs).ceil().max(0.0) as usize).min(n);
            for (i, s) in samples.iter_mut().enumerate().take(hi).skip(lo) {
                let dt = i as f64 / fs - mu;
                *s += w.amplitude_mv * (-dt * dt / (2.0 * sigma * sigma)).exp();
            }
        }
        let idx = (t_r * fs).round();
        if idx >= 0.0 && (idx as usize) < n {
            r_peaks.push(idx as usize);
            r_times.push(t_r);
        }
        t_r += rr;
    }

    if noise_on {
        let wander_phase = rng.gen_range(0.0..2.0 * PI);
        let mains_phase = rng.gen_range(0.0..2.0 * PI);
        let white = Normal::new(0.0, params.white_noise_mv.max(0.0))
            .map_err(|e| IngestError::InvalidParams(e.to_string()))?;
        for (i, s) in samples.iter_mut().enumerate() {
            let t = i as f64 / fs;
            *s += params.baseline_wander_mv * (2.0 * PI * 0.25 * t + wander_phase).sin();
            *s += params.powerline_mv * (2.0 * PI * 50.0 * t + mains_phase).sin();
            *s += white.sample(&mut rng);
        }
    }

    let record = EcgRecord::new(params.subject_id.clone(), condition, fs, samples)?;
    Ok(SyntheticRecord {
        record,
        r_peaks,
        r_times_s: r_times,
    })
}

/// Cohort layout for [`synthesize_cohort`] and [`generate_cohort`].
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub subjects: usize,
    pub rest_s: f64,
    pub ex_s: f64,
    pub seed: u64,
    pub noise_on: bool,
    /// When false, exercise records keep P/T amplitudes (gains = 1).
    pub exercise_shift: bool,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            subjects: 45,
            rest_s: 300.0,
            ex_s: 150.0,
            seed: 7,
            noise_on: true,
            exercise_shift: true,
        }
    }
}

impl CohortSpec {
    pub fn subject_ids(&self) -> Vec<String> {
        let width = self.subjects.to_string().len().max(2);
        (1..=self.subjects)
            .map(|i| format!("s{i:0width$}"))
            .collect()
    }

    pub fn params_for(&self, subject_id: &str) -> GeneratorParams {
        let mut p = generate_subject_params(subject_id, self.seed);
        if !self.exercise_shift {
            p.exercise_p_gain = 1.0;
            p.exercise_t_gain = 1.0;
        }
        p
    }

    fn record_seed(&self, subject_index: usize, condition: Condition) -> u64 {
        let c = match condition {
            Condition::Rest => 0u64,
            Condition::PostExercise => 1,
        };
        self.seed
            .wrapping_mul(1_000_003)
            .wrapping_add((subject_index as u64) * 2 + c)
    }

    fn duration(&self, condition: Condition) -> f64 {
        match condition {
            Condition::Rest => self.rest_s,
            Condition::PostExercise => self.ex_s,
        }
    }
}

/// All records of a synthetic cohort, rest then post-exercise per subject.
pub fn synthesize_cohort(spec: &CohortSpec) -> Result<Vec<SyntheticRecord>> {
    let mut out = Vec::with_capacity(spec.subjects * 2);
    for (i, id) in spec.subject_ids().iter().enumerate() {
        let params = spec.params_for(id);
        for c in Condition::ALL {
            out.push(synthesize_record(
                &params,
                c,
                spec.duration(c),
                spec.noise_on,
                spec.record_seed(i, c),
            )?);
        }
    }
    Ok(out)
}

/// Writes a synthetic cohort (record files plus `manifest.txt`) under `dir`.
pub fn generate_cohort(spec: &CohortSpec, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for synth in synthesize_cohort(spec)? {
        let rec = &synth.record;
        let name = format!("{}_{}.txt", rec.subject_id(), rec.condition());
        save_record(rec, &dir.join(&name))?;
        entries.push(ManifestEntry {
            subject_id: rec.subject_id().to_string(),
            condition: rec.condition(),
            path: PathBuf::from(name),
            duration_s: spec.duration(rec.condition()),
        });
    }
    let manifest = DatasetManifest {
        entries,
        seed: Some(spec.seed),
        base_dir: dir.to_path_buf(),
    };
    save_manifest(&manifest, &dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Groups records by subject id (sorted) preserving input order per subject.
pub fn group_by_subject(records: &[EcgRecord]) -> BTreeMap<&str, Vec<&EcgRecord>> {
    let mut map: BTreeMap<&str, Vec<&EcgRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.subject_id()).or_default().push(r);
    }
    map
}
