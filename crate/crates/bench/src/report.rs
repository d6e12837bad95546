//! Experiment reports and their CSV / markdown tables.

use std::path::Path;

use ecgid_core::classify::PredictionResult;
use ecgid_core::features::FeatureMatrix;

use crate::protocol::Protocol;
use crate::BenchError;

/// Outcome of one pipeline under one protocol. Accuracies are fractions of
/// beats.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub pipeline: String,
    pub protocol: Protocol,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Fraction of test subjects whose majority prediction is themselves.
    pub subject_accuracy: f64,
    /// Class labels, sorted; rows and columns of `confusion`.
    pub subjects: Vec<String>,
    /// `confusion[i][j]`: test beats of subject i predicted as subject j.
    pub confusion: Vec<Vec<usize>>,
    pub train_beats: usize,
    pub test_beats: usize,
    pub skipped_beats: usize,
    pub dropped_subjects: Vec<String>,
    pub converged: bool,
    pub seed: u64,
}

fn hits(m: &FeatureMatrix, pred: &PredictionResult) -> usize {
    m.rows()
        .iter()
        .zip(&pred.predicted)
        .filter(|(r, p)| pred.labels[**p] == r.subject_id)
        .count()
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ExperimentReport {
    #[allow(clippy::too_many_arguments)]
    pub fn from_predictions(
        pipeline: String,
        protocol: Protocol,
        train: &FeatureMatrix,
        train_pred: &PredictionResult,
        test: &FeatureMatrix,
        test_pred: Option<&PredictionResult>,
        skipped_beats: usize,
        dropped_subjects: Vec<String>,
        converged: bool,
        seed: u64,
    ) -> Self {
        let subjects = train_pred.labels.clone();
        let n = subjects.len();
        let mut confusion = vec![vec![0usize; n]; n];
        let mut test_hits = 0;
        if let Some(pred) = test_pred {
            for (row, p) in test.rows().iter().zip(&pred.predicted) {
                if let Ok(i) = subjects.binary_search(&row.subject_id) {
                    confusion[i][*p] += 1;
                }
            }
            test_hits = hits(test, pred);
        }
        let tested: Vec<usize> = (0..n).filter(|i| confusion[*i].iter().sum::<usize>() > 0).collect();
        let majority_hits = tested
            .iter()
            .filter(|i| {
                let row = &confusion[**i];
                let best = row.iter().max().copied().unwrap_or(0);
                row.iter().position(|v| *v == best) == Some(**i)
            })
            .count();
        Self {
            pipeline,
            protocol,
            train_accuracy: fraction(hits(train, train_pred), train.len()),
            test_accuracy: fraction(test_hits, test.len()),
            subject_accuracy: fraction(majority_hits, tested.len()),
            subjects,
            confusion,
            train_beats: train.len(),
            test_beats: if test_pred.is_some() { test.len() } else { 0 },
            skipped_beats,
            dropped_subjects,
            converged,
            seed,
        }
    }

    pub fn row(&self) -> ReportRow {
        ReportRow {
            pipeline: self.pipeline.clone(),
            protocol: self.protocol,
            train_acc_pct: 100.0 * self.train_accuracy,
            test_acc_pct: 100.0 * self.test_accuracy,
            subjects: self.subjects.len(),
            train_beats: self.train_beats,
            test_beats: self.test_beats,
            skipped_beats: self.skipped_beats,
            converged: self.converged,
            subject_acc_pct: 100.0 * self.subject_accuracy,
            seed: self.seed,
        }
    }
}

/// One table line. Percentages are stored unrounded and printed with one
/// decimal.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub pipeline: String,
    pub protocol: Protocol,
    pub train_acc_pct: f64,
    pub test_acc_pct: f64,
    pub subjects: usize,
    pub train_beats: usize,
    pub test_beats: usize,
    pub skipped_beats: usize,
    pub converged: bool,
    pub subject_acc_pct: f64,
    pub seed: u64,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "pipeline",
    "protocol",
    "train_acc_pct",
    "test_acc_pct",
    "subjects",
    "train_beats",
    "test_beats",
    "skipped_beats",
    "converged",
    "subject_acc_pct",
    "seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(BenchError::Usage(format!("unknown format {s:?}; expected csv or markdown"))),
        }
    }
}

pub fn pct(v: f64) -> String {
    format!("{v:.1}%")
}

impl ReportRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.pipeline.clone(),
            self.protocol.to_string(),
            pct(self.train_acc_pct),
            pct(self.test_acc_pct),
            self.subjects.to_string(),
            self.train_beats.to_string(),
            self.test_beats.to_string(),
            self.skipped_beats.to_string(),
            self.converged.to_string(),
            pct(self.subject_acc_pct),
            self.seed.to_string(),
        ]
    }
}

/// Sorts by (pipeline, protocol); the order is independent of input order.
pub fn merge_rows(groups: impl IntoIterator<Item = Vec<ReportRow>>) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = groups.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        (a.pipeline.as_str(), a.protocol, a.seed).cmp(&(b.pipeline.as_str(), b.protocol, b.seed))
    });
    rows
}

pub fn render_rows(rows: &[ReportRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            w.write_record(CSV_COLUMNS).expect("in-memory write");
            for r in rows {
                w.write_record(r.fields()).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("fields are UTF-8")
        }
        ReportFormat::Markdown => {
            let mut s = String::from(
                "| Pipeline | Training set | Test set | Training accuracy | Test accuracy | Subject accuracy | Subjects | Train beats | Test beats | Skipped beats | Converged |\n",
            );
            s.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
            for r in rows {
                let (tr, te) = r.protocol.set_labels();
                s.push_str(&format!(
                    "| {} | {tr} | {te} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                    r.pipeline,
                    pct(r.train_acc_pct),
                    pct(r.test_acc_pct),
                    pct(r.subject_acc_pct),
                    r.subjects,
                    r.train_beats,
                    r.test_beats,
                    r.skipped_beats,
                    if r.converged { "yes" } else { "no" },
                ));
            }
            s
        }
    }
}

/// Renders reports sorted by (pipeline, protocol).
pub fn render_report(reports: &[ExperimentReport], format: ReportFormat) -> String {
    render_rows(&merge_rows([reports.iter().map(ExperimentReport::row).collect()]), format)
}

fn parse_pct(s: &str, line: usize) -> Result<f64, BenchError> {
    s.strip_suffix('%')
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| BenchError::MalformedReport(format!("line {line}: bad percentage {s:?}")))
}

/// Parses a CSV report written by [`render_rows`].
pub fn parse_rows(text: &str) -> Result<Vec<ReportRow>, BenchError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| BenchError::MalformedReport(e.to_string()))?
        .clone();
    if header.iter().ne(CSV_COLUMNS) {
        return Err(BenchError::MalformedReport(format!("unexpected header {:?}", header)));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| BenchError::MalformedReport(format!("line {line}: {e}")))?;
        let int = |k: usize| {
            rec[k]
                .parse::<u64>()
                .map_err(|_| BenchError::MalformedReport(format!("line {line}: bad {} {:?}", CSV_COLUMNS[k], &rec[k])))
        };
        rows.push(ReportRow {
            pipeline: rec[0].to_string(),
            protocol: rec[1]
                .parse()
                .map_err(|_| BenchError::MalformedReport(format!("line {line}: bad protocol {:?}", &rec[1])))?,
            train_acc_pct: parse_pct(&rec[2], line)?,
            test_acc_pct: parse_pct(&rec[3], line)?,
            subjects: int(4)? as usize,
            train_beats: int(5)? as usize,
            test_beats: int(6)? as usize,
            skipped_beats: int(7)? as usize,
            converged: rec[8]
                .parse()
                .map_err(|_| BenchError::MalformedReport(format!("line {line}: bad converged {:?}", &rec[8])))?,
            subject_acc_pct: parse_pct(&rec[9], line)?,
            seed: int(10)?,
        });
    }
    Ok(rows)
}

pub fn load_rows(path: &Path) -> Result<Vec<ReportRow>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io(path.display().to_string(), e))?;
    parse_rows(&text).map_err(|e| match e {
        BenchError::MalformedReport(m) => BenchError::MalformedReport(format!("{}: {m}", path.display())),
        other => other,
    })
}
