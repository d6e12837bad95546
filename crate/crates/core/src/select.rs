//! Principal component reduction and exercise-robust feature selection by
//! symmetric Kullback–Leibler weights.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::features::{FeatureMatrix, FeatureVector};
use crate::ingest::Condition;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("need at least 2 auxiliary subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("subject {0} has no {1} rows")]
    MissingCondition(String, Condition),
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("data has no variance to decompose")]
    ZeroVariance,
    #[error("malformed weights file at line {line}: {reason}")]
    MalformedFile { line: usize, reason: String },
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SelectError>;

/// Row-major `rows x cols` product `a * b^T` where `a` is `m x k` and `b`
/// is `n x k`, both row-major.
fn gemm_abt(a: &[f64], m: usize, b: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    // SAFETY: slices hold m*k, n*k and m*n elements, matching the strides.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
    c
}

/// Row-major `a^T * a` for `a` of shape `m x k`.
fn gemm_ata(a: &[f64], m: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * k];
    // SAFETY: a holds m*k elements; c holds k*k.
    unsafe {
        matrixmultiply::dgemm(
            k, m, k, 1.0,
            a.as_ptr(), 1, k as isize,
            a.as_ptr(), k as isize, 1,
            0.0,
            c.as_mut_ptr(), k as isize, 1,
        );
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Retained unit directions, each of length `dim`, by decreasing
    /// variance.
    pub components: Vec<Vec<f64>>,
    /// Variance along every retained direction.
    pub explained_variance: Vec<f64>,
    /// Total variance of the fit data (trace of the covariance).
    pub total_variance: f64,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(values).zip(&self.mean).map(|((w, v), mu)| w * (v - mu)).sum())
            .collect()
    }

    pub fn transform(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.dim() != self.dim() {
            return Err(SelectError::DimensionMismatch {
                expected: self.dim(),
                got: m.dim(),
            });
        }
        let rows = m
            .rows()
            .iter()
            .map(|r| FeatureVector {
                subject_id: r.subject_id.clone(),
                condition: r.condition,
                r_index: r.r_index,
                values: self.project(&r.values),
            })
            .collect();
        FeatureMatrix::from_rows(format!("{}+pca{}", m.layout_id(), self.k()), self.k(), rows)
            .map_err(|e| SelectError::InvalidParameter(e.to_string()))
    }
}

/// Sample-covariance PCA. `variance_retained` picks the smallest component
/// count whose cumulative variance fraction reaches it; 1.0 keeps as many
/// as the data supports.
pub fn pca_fit(m: &FeatureMatrix, variance_retained: f64) -> Result<PcaModel> {
    let n = m.len();
    if n < 2 {
        return Err(SelectError::TooFewRows(n));
    }
    if !(variance_retained > 0.0 && variance_retained <= 1.0) {
        return Err(SelectError::InvalidParameter(format!(
            "variance_retained {variance_retained} outside (0, 1]"
        )));
    }
    let d = m.dim();
    let mut mean = vec![0.0; d];
    for r in m.rows() {
        for (acc, v) in mean.iter_mut().zip(&r.values) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut xc = Vec::with_capacity(n * d);
    for r in m.rows() {
        xc.extend(r.values.iter().zip(&mean).map(|(v, mu)| v - mu));
    }
    let denom = (n - 1) as f64;

    let (values, vectors): (Vec<f64>, Vec<Vec<f64>>) = if d <= n {
        let cov = gemm_ata(&xc, n, d);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov).map(|v| v / denom));
        sorted_pairs(&eig)
            .into_iter()
            .map(|(lambda, i)| (lambda.max(0.0), eig.eigenvectors.column(i).iter().copied().collect()))
            .unzip()
    } else {
        // dual route: eigenvectors of the n x n Gram matrix mapped back
        let gram = gemm_abt(&xc, n, &xc, n, d);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &gram).map(|v| v / denom));
        let top = sorted_pairs(&eig).first().map_or(0.0, |p| p.0);
        sorted_pairs(&eig)
            .into_iter()
            .filter(|(lambda, _)| *lambda > top * 1e-12 && *lambda > 0.0)
            .map(|(lambda, i)| {
                let u = eig.eigenvectors.column(i);
                let mut v = vec![0.0; d];
                for (row, ui) in xc.chunks_exact(d).zip(u.iter()) {
                    for (acc, x) in v.iter_mut().zip(row) {
                        *acc += ui * x;
                    }
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                (lambda, v)
            })
            .unzip()
    };

    let total: f64 = xc.iter().map(|v| v * v).sum::<f64>() / denom;
    if !(total > 0.0) {
        return Err(SelectError::ZeroVariance);
    }
    let cap = d.min(n - 1).min(values.len());
    let k = if variance_retained >= 1.0 {
        cap
    } else {
        let mut acc = 0.0;
        let mut k = cap;
        for (i, v) in values.iter().enumerate().take(cap) {
            acc += v;
            if acc / total >= variance_retained {
                k = i + 1;
                break;
            }
        }
        k
    };
    let components = vectors
        .into_iter()
        .take(k)
        .map(|mut v| {
            // deterministic sign: largest-magnitude entry positive
            let lead = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1.abs() { (i, *x) } else { best });
            if lead.1 < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance: values.into_iter().take(k).collect(),
        total_variance: total,
    })
}

/// Eigenvalues with their column index, by decreasing value then index.
fn sorted_pairs(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> Vec<(f64, usize)> {
    let mut pairs: Vec<(f64, usize)> = eig.eigenvalues.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    pairs
}

/// Lower clamp on standard deviations before the divergence.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Symmetric KL divergence between two normals.
pub fn kl_sym(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> f64 {
    let s1 = sigma1.max(SIGMA_FLOOR).powi(2);
    let s2 = sigma2.max(SIGMA_FLOOR).powi(2);
    let dm = (mu1 - mu2).powi(2);
    ((s1 + dm) / (2.0 * s2) + (s2 + dm) / (2.0 * s1) - 1.0).max(0.0)
}

/// Running per-column count, mean and sum of squared deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub count: usize,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl ColumnStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, values: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((mu, m2), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(values) {
            let delta = x - *mu;
            *mu += delta / n;
            *m2 += delta * (x - *mu);
        }
    }

    /// Pooled statistics of two disjoint samples.
    pub fn merged(&self, other: &ColumnStats) -> ColumnStats {
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let mut out = ColumnStats::new(self.mean.len());
        out.count = self.count + other.count;
        if out.count == 0 {
            return out;
        }
        for l in 0..self.mean.len() {
            let delta = other.mean[l] - self.mean[l];
            out.mean[l] = self.mean[l] + delta * nb / n;
            out.m2[l] = self.m2[l] + other.m2[l] + delta * delta * na * nb / n;
        }
        out
    }

    /// Population standard deviation of column `l`.
    pub fn std(&self, l: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2[l].max(0.0) / self.count as f64).sqrt()
        }
    }
}

/// Per-subject, per-condition statistics of an auxiliary cohort. Rows can
/// be streamed in without keeping the matrix.
#[derive(Debug, Clone)]
pub struct AuxStats {
    dim: usize,
    subjects: BTreeMap<String, [ColumnStats; 2]>,
}

fn slot(c: Condition) -> usize {
    match c {
        Condition::Rest => 0,
        Condition::PostExercise => 1,
    }
}

impl AuxStats {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            subjects: BTreeMap::new(),
        }
    }

    pub fn from_matrix(m: &FeatureMatrix) -> Self {
        let mut s = Self::new(m.dim());
        s.add_matrix(m).expect("dimension matches by construction");
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add_row(&mut self, subject_id: &str, condition: Condition, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(SelectError::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        let dim = self.dim;
        let entry = self
            .subjects
            .entry(subject_id.to_string())
            .or_insert_with(|| [ColumnStats::new(dim), ColumnStats::new(dim)]);
        entry[slot(condition)].add(values);
        Ok(())
    }

    pub fn add_matrix(&mut self, m: &FeatureMatrix) -> Result<()> {
        for r in m.rows() {
            self.add_row(&r.subject_id, r.condition, &r.values)?;
        }
        Ok(())
    }

    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }

    /// Class-separability and exercise-sensitivity terms for every
    /// feature. Each feature is first standardized with the pooled
    /// auxiliary mean and deviation so the fixed sigma floor is scale-free;
    /// features constant over the whole auxiliary set score zero on both
    /// terms.
    pub fn weight_terms(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n_subj = self.subjects.len();
        if n_subj < 2 {
            return Err(SelectError::TooFewSubjects(n_subj));
        }
        for (id, s) in &self.subjects {
            for c in [Condition::Rest, Condition::PostExercise] {
                if s[slot(c)].count == 0 {
                    return Err(SelectError::MissingCondition(id.clone(), c));
                }
            }
        }
        let per_subject: Vec<(ColumnStats, &ColumnStats, &ColumnStats)> = self
            .subjects
            .values()
            .map(|[rest, ex]| (rest.merged(ex), rest, ex))
            .collect();
        let mut pool = ColumnStats::new(self.dim);
        for (all, _, _) in &per_subject {
            pool = pool.merged(all);
        }
        let mut w1 = vec![0.0; self.dim];
        let mut w2 = vec![0.0; self.dim];
        for l in 0..self.dim {
            let (mu_p, sd_p) = (pool.mean[l], pool.std(l));
            if sd_p < crate::features::DEGENERATE_STD {
                continue;
            }
            let z = |s: &ColumnStats| ((s.mean[l] - mu_p) / sd_p, s.std(l) / sd_p);
            let (mut a, mut b) = (0.0, 0.0);
            for (all, rest, ex) in &per_subject {
                let (mu_i, sd_i) = z(all);
                let (mu_r, sd_r) = z(rest);
                let (mu_e, sd_e) = z(ex);
                a += kl_sym(mu_i, sd_i, 0.0, 1.0);
                b += kl_sym(mu_r, sd_r, mu_i, sd_i) + kl_sym(mu_e, sd_e, mu_i, sd_i);
            }
            w1[l] = a / n_subj as f64;
            w2[l] = b / n_subj as f64;
        }
        Ok((w1, w2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionMode {
    TopN(usize),
    /// Keep every feature with weight strictly above the threshold.
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionWeights {
    pub lambda: f64,
    pub w: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// Indices by descending `w`, ties by ascending index.
    pub ranking: Vec<usize>,
    pub selected: Vec<usize>,
}

impl SelectionWeights {
    pub fn from_terms(w1: Vec<f64>, w2: Vec<f64>, lambda: f64, mode: SelectionMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(SelectError::InvalidParameter(format!("lambda {lambda} outside [0, 1]")));
        }
        if w1.len() != w2.len() {
            return Err(SelectError::DimensionMismatch {
                expected: w1.len(),
                got: w2.len(),
            });
        }
        let w: Vec<f64> = w1
            .iter()
            .zip(&w2)
            .map(|(a, b)| lambda * a - (1.0 - lambda) * b)
            .collect();
        let mut ranking: Vec<usize> = (0..w.len()).collect();
        ranking.sort_by(|a, b| w[*b].total_cmp(&w[*a]).then(a.cmp(b)));
        let mut out = Self {
            lambda,
            w,
            w1,
            w2,
            ranking,
            selected: Vec::new(),
        };
        out.reselect(mode)?;
        Ok(out)
    }

    /// Re-applies the cut without recomputing weights.
    pub fn reselect(&mut self, mode: SelectionMode) -> Result<()> {
        self.selected = match mode {
            SelectionMode::TopN(n) => {
                if n > self.w.len() {
                    return Err(SelectError::InvalidParameter(format!(
                        "top_n {n} exceeds dimension {}",
                        self.w.len()
                    )));
                }
                self.ranking[..n].to_vec()
            }
            SelectionMode::Threshold(t) => self.ranking.iter().copied().take_while(|i| self.w[*i] > t).collect(),
        };
        Ok(())
    }

    pub fn with_top_n(&self, n: usize) -> Result<Self> {
        let mut s = self.clone();
        s.reselect(SelectionMode::TopN(n))?;
        Ok(s)
    }
}

pub fn weight_w1(aux: &FeatureMatrix) -> Result<Vec<f64>> {
    Ok(AuxStats::from_matrix(aux).weight_terms()?.0)
}

pub fn weight_w2(aux: &FeatureMatrix) -> Result<Vec<f64>> {
    Ok(AuxStats::from_matrix(aux).weight_terms()?.1)
}

pub fn select_features(aux: &FeatureMatrix, lambda: f64, top_n: usize) -> Result<SelectionWeights> {
    select_features_with(aux, lambda, SelectionMode::TopN(top_n))
}

pub fn select_features_with(aux: &FeatureMatrix, lambda: f64, mode: SelectionMode) -> Result<SelectionWeights> {
    let (w1, w2) = AuxStats::from_matrix(aux).weight_terms()?;
    SelectionWeights::from_terms(w1, w2, lambda, mode)
}

pub fn format_weights(s: &SelectionWeights) -> String {
    let mut out = format!("lambda={},top_n={}\n", s.lambda, s.selected.len());
    let mut flag = vec![false; s.w.len()];
    for i in &s.selected {
        flag[*i] = true;
    }
    for i in 0..s.w.len() {
        let _ = writeln!(out, "{i},{},{},{},{}", s.w[i], s.w1[i], s.w2[i], u8::from(flag[i]));
    }
    out
}

/// Parses [`format_weights`] output. The selection is rebuilt as the
/// flagged indices in ranking order.
pub fn parse_weights(text: &str) -> Result<SelectionWeights> {
    let bad = |line: usize, reason: String| SelectError::MalformedFile { line, reason };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let mut lambda = None;
    let mut top_n = None;
    for field in header.split(',') {
        match field.split_once('=') {
            Some(("lambda", v)) => lambda = Some(v.parse::<f64>().map_err(|e| bad(1, e.to_string()))?),
            Some(("top_n", v)) => top_n = Some(v.parse::<usize>().map_err(|e| bad(1, e.to_string()))?),
            _ => return Err(bad(1, format!("unexpected header field {field:?}"))),
        }
    }
    let (Some(lambda), Some(top_n)) = (lambda, top_n) else {
        return Err(bad(1, "header needs lambda= and top_n=".into()));
    };
    let (mut w1, mut w2, mut flags) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 || f[0].parse::<usize>().ok() != Some(w1.len()) {
            return Err(bad(i + 1, "expected index,w,w1,w2,flag in index order".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, e.to_string()));
        num(f[1])?;
        w1.push(num(f[2])?);
        w2.push(num(f[3])?);
        flags.push(f[4] == "1");
    }
    let mut s = SelectionWeights::from_terms(w1, w2, lambda, SelectionMode::TopN(0))?;
    s.selected = s.ranking.iter().copied().filter(|i| flags[*i]).collect();
    if s.selected.len() != top_n {
        return Err(bad(1, format!("header says {top_n} selected, found {}", s.selected.len())));
    }
    Ok(s)
}

pub fn save_weights(s: &SelectionWeights, path: &Path) -> Result<()> {
    std::fs::write(path, format_weights(s))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<SelectionWeights> {
    parse_weights(&std::fs::read_to_string(path)?)
}
