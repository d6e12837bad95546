//! Train/test protocols over per-subject chronological rows.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ecgid_core::features::{FeatureMatrix, FeatureVector};
use ecgid_core::Condition;

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    RestRest,
    ExFirst70,
    ExLast70,
    RestEx,
}

pub const TRAIN_FRACTION: f64 = 0.7;
pub const MIN_TRAIN_ROWS: usize = 10;
pub const MIN_TEST_ROWS: usize = 3;

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::RestRest,
        Protocol::ExFirst70,
        Protocol::ExLast70,
        Protocol::RestEx,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::RestRest => "rest_rest",
            Protocol::ExFirst70 => "ex_first70",
            Protocol::ExLast70 => "ex_last70",
            Protocol::RestEx => "rest_ex",
        }
    }

    /// Table-style descriptions of the training and test sets.
    pub fn set_labels(&self) -> (&'static str, &'static str) {
        match self {
            Protocol::RestRest => ("rest (first 70%)", "rest (last 30%)"),
            Protocol::ExFirst70 => ("post-exercise (first 70%)", "post-exercise (last 30%)"),
            Protocol::ExLast70 => ("post-exercise (last 70%)", "post-exercise (first 30%)"),
            Protocol::RestEx => ("rest", "post-exercise"),
        }
    }

    pub fn needs_exercise(&self) -> bool {
        *self != Protocol::RestRest
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| BenchError::Usage(format!("unknown protocol {s:?}; expected rest_rest, ex_first70, ex_last70 or rest_ex")))
    }
}

/// Train and test row counts for a 70/30 chronological split of `n` rows.
pub fn split_counts(n: usize) -> (usize, usize) {
    let train = (TRAIN_FRACTION * n as f64 + 1e-9).floor() as usize;
    (train, n - train)
}

/// Per-subject (train, test) lists under `protocol`, given chronological
/// rest and exercise rows.
pub fn split_subject<T: Clone>(rest: &[T], ex: &[T], protocol: Protocol) -> (Vec<T>, Vec<T>) {
    match protocol {
        Protocol::RestRest => {
            let (k, _) = split_counts(rest.len());
            (rest[..k].to_vec(), rest[k..].to_vec())
        }
        Protocol::ExFirst70 => {
            let (k, _) = split_counts(ex.len());
            (ex[..k].to_vec(), ex[k..].to_vec())
        }
        Protocol::ExLast70 => {
            let (_, t) = split_counts(ex.len());
            (ex[t..].to_vec(), ex[..t].to_vec())
        }
        Protocol::RestEx => (rest.to_vec(), ex.to_vec()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: FeatureMatrix,
    pub test: FeatureMatrix,
    pub subjects: Vec<String>,
    /// Subjects dropped for having too few rows.
    pub dropped: Vec<String>,
}

/// Applies `protocol` to every subject. Rows are ordered by `r_index`
/// within each subject and condition; subjects with fewer than 10 train or
/// 3 test rows are dropped.
pub fn split_protocol(m: FeatureMatrix, protocol: Protocol) -> Result<SplitResult, BenchError> {
    let layout = m.layout_id().to_string();
    let dim = m.dim();
    let mut by_subject: BTreeMap<String, [Vec<FeatureVector>; 2]> = BTreeMap::new();
    for row in m.into_rows() {
        let slot = usize::from(row.condition == Condition::PostExercise);
        by_subject.entry(row.subject_id.clone()).or_default()[slot].push(row);
    }
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    let mut subjects = Vec::new();
    let mut dropped = Vec::new();
    for (subject, [mut rest, mut ex]) in by_subject {
        rest.sort_by_key(|r| r.r_index);
        ex.sort_by_key(|r| r.r_index);
        let idx_rest: Vec<usize> = (0..rest.len()).collect();
        let idx_ex: Vec<usize> = (rest.len()..rest.len() + ex.len()).collect();
        let (tr, te) = split_subject(&idx_rest, &idx_ex, protocol);
        if tr.len() < MIN_TRAIN_ROWS || te.len() < MIN_TEST_ROWS {
            dropped.push(subject);
            continue;
        }
        let mut all: Vec<Option<FeatureVector>> = rest.into_iter().chain(ex).map(Some).collect();
        train_rows.extend(tr.iter().map(|i| all[*i].take().expect("index used once")));
        test_rows.extend(te.iter().map(|i| all[*i].take().expect("index used once")));
        subjects.push(subject);
    }
    if subjects.is_empty() {
        return Err(BenchError::EmptyCohort(format!(
            "no subject has at least {MIN_TRAIN_ROWS} train and {MIN_TEST_ROWS} test rows under {protocol}"
        )));
    }
    let build = |rows| FeatureMatrix::from_rows(layout.clone(), dim, rows).map_err(BenchError::from);
    Ok(SplitResult {
        train: build(train_rows)?,
        test: build(test_rows)?,
        subjects,
        dropped,
    })
}
