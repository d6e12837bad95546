//! One-vs-one kernel SVM trained by sequential minimal optimization, a
//! k-nearest-neighbor baseline and accuracy scoring.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::FeatureMatrix;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("class {0} has fewer than 2 training rows")]
    DegenerateClass(String),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{predicted} predictions for {truth} labels")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed model file at line {line}: {reason}")]
    MalformedFile { line: usize, reason: String },
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ClassifyError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    /// Kernel value from a dot product and the two squared norms.
    #[inline]
    fn from_dot(&self, dot: f64, nx: f64, ny: f64) -> f64 {
        match self {
            Kernel::Rbf { gamma } => (-gamma * (nx + ny - 2.0 * dot).max(0.0)).exp(),
            Kernel::Linear => dot,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Kernel::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }
}

/// Row-major `a * b^T`: `a` is `m x k`, `b` is `n x k`.
fn gemm_abt(a: &[f64], m: usize, b: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 {
        return c;
    }
    // SAFETY: a holds m*k, b holds n*k and c holds m*n elements.
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

fn sq_norms(data: &[f64], dim: usize) -> Vec<f64> {
    data.chunks_exact(dim.max(1))
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect()
}

/// Kernel block between row sets `a` and `b`. When `same` the diagonal is
/// set exactly (zero distance for RBF).
fn kernel_block(kernel: &Kernel, a: &[f64], na: &[f64], b: &[f64], nb: &[f64], dim: usize, same: bool) -> Vec<f64> {
    let (m, n) = (na.len(), nb.len());
    let mut k = gemm_abt(a, m, b, n, dim);
    for i in 0..m {
        for j in 0..n {
            let v = &mut k[i * n + j];
            // exact self-similarity on the diagonal
            let dot = if same && i == j { na[i] } else { *v };
            *v = kernel.from_dot(dot, na[i], nb[j]);
        }
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: Kernel,
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 100.0,
            kernel: Kernel::Rbf { gamma: 1.0 },
            tol: 1e-3,
            max_epochs: 200,
            seed: 0,
        }
    }
}

/// Solver diagnostics for one class pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTrace {
    pub class_a: usize,
    pub class_b: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Final maximal violating-pair gap.
    pub kkt_violation: f64,
    /// Dual objective after each epoch of `n` iterations, plus the final
    /// value.
    pub objective: Vec<f64>,
    /// Smallest and largest dual coefficient.
    pub alpha_range: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_violation: f64,
    pub objective: Vec<f64>,
}

/// Solves `min 1/2 a'Qa - e'a` subject to `0 <= a <= c`, `y'a = 0` with
/// `Q_ij = y_i y_j K_ij`, using second-order working-set selection. `k` is
/// the full row-major kernel matrix; `order` fixes the scan order used to
/// break selection ties.
pub fn smo_solve(k: &[f64], y: &[f64], c: f64, tol: f64, max_iter: usize, order: &[usize]) -> SmoSolution {
    const TAU: f64 = 1e-12;
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yy: f64| (yy > 0.0 && a < c) || (yy < 0.0 && a > 0.0);
    let in_low = |a: f64, yy: f64| (yy > 0.0 && a > 0.0) || (yy < 0.0 && a < c);
    let dual = |alpha: &[f64], grad: &[f64]| -0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();

    let mut objective = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut gap = f64::INFINITY;
    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for &t in order {
            if in_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        if i != usize::MAX {
            let kii = k[i * n + i];
            for &t in order {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let yg = y[t] * grad[t];
                gmax2 = gmax2.max(yg);
                let b = gmax + yg;
                if b > 0.0 {
                    let mut a = kii + k[t * n + t] - 2.0 * k[i * n + t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < best {
                        best = obj;
                        j = t;
                    }
                }
            }
        }
        gap = gmax + gmax2;
        if gap < tol || j == usize::MAX {
            converged = true;
            break;
        }

        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let kij = k[i * n + j];
        let qij = y[i] * y[j] * kij;
        let (qii, qjj) = (k[i * n + i], k[j * n + j]);
        if y[i] != y[j] {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - ai_old, alpha[j] - aj_old);
        let (ki, kj) = (&k[i * n..(i + 1) * n], &k[j * n..(j + 1) * n]);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * dai + y[j] * kj[t] * daj);
        }
        iterations += 1;
        if iterations % n == 0 {
            objective.push(dual(&alpha, &grad));
        }
    }
    objective.push(dual(&alpha, &grad));

    // bias from free vectors, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    SmoSolution {
        alpha,
        rho,
        iterations,
        converged,
        kkt_violation: gap,
        objective,
    }
}

/// Decision function of one class pair over pooled support rows. Positive
/// values vote for `class_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    pub class_a: usize,
    pub class_b: usize,
    pub support: Vec<usize>,
    /// `y_i * alpha_i` per support row.
    pub coef: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    pub labels: Vec<String>,
    pub dim: usize,
    /// Row-major support rows shared by all pairs.
    pub pool: Vec<f64>,
    pub pairs: Vec<PairModel>,
    /// Solver diagnostics; not persisted.
    pub traces: Vec<BinaryTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub labels: Vec<String>,
    /// Class index per row.
    pub predicted: Vec<usize>,
    /// Per-row vote counts indexed by class.
    pub votes: Vec<Vec<u32>>,
}

impl PredictionResult {
    pub fn predicted_labels(&self) -> Vec<&str> {
        self.predicted.iter().map(|i| self.labels[*i].as_str()).collect()
    }
}

/// Sorted class labels and per-row class index.
fn label_index(m: &FeatureMatrix) -> (Vec<String>, Vec<usize>) {
    let labels: Vec<String> = m.subjects();
    let idx = m
        .rows()
        .iter()
        .map(|r| labels.binary_search(&r.subject_id).expect("label present"))
        .collect();
    (labels, idx)
}

/// Majority vote; ties go to the lowest class index.
fn vote_winner(votes: &[u32]) -> usize {
    let mut best = 0;
    for (i, v) in votes.iter().enumerate() {
        if *v > votes[best] {
            best = i;
        }
    }
    best
}

/// A trained model together with its predictions on the training rows.
#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: SvmModel,
    pub train_prediction: PredictionResult,
}

/// Largest training Gram matrix kept in memory (entries); beyond this the
/// pair blocks are recomputed and training rows are re-predicted.
const GRAM_CACHE_ENTRIES: usize = 1 << 27;

pub fn svm_train(m: &FeatureMatrix, params: &SvmParams) -> Result<SvmModel> {
    Ok(svm_fit(m, params)?.model)
}

pub fn svm_fit(m: &FeatureMatrix, params: &SvmParams) -> Result<SvmFit> {
    if !(params.c > 0.0) || !(params.tol > 0.0) || params.max_epochs == 0 {
        return Err(ClassifyError::InvalidParameter(format!("{params:?}")));
    }
    if let Kernel::Rbf { gamma } = params.kernel {
        if !(gamma > 0.0) {
            return Err(ClassifyError::InvalidParameter(format!("gamma {gamma}")));
        }
    }
    let (labels, idx) = label_index(m);
    if labels.len() < 2 {
        return Err(ClassifyError::TooFewClasses(labels.len()));
    }
    let dim = m.dim();
    let n_classes = labels.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (row, class) in idx.iter().enumerate() {
        members[*class].push(row);
    }
    if let Some(c) = members.iter().position(|v| v.len() < 2) {
        return Err(ClassifyError::DegenerateClass(labels[c].clone()));
    }
    let class_data: Vec<Vec<f64>> = members
        .iter()
        .map(|rows| rows.iter().flat_map(|r| m.rows()[*r].values.iter().copied()).collect())
        .collect();
    let class_norms: Vec<Vec<f64>> = class_data.iter().map(|d| sq_norms(d, dim)).collect();
    let block = |a: usize, b: usize| {
        kernel_block(
            &params.kernel,
            &class_data[a],
            &class_norms[a],
            &class_data[b],
            &class_norms[b],
            dim,
            a == b,
        )
    };
    // class-sorted position of each class's first row
    let offsets: Vec<usize> = members
        .iter()
        .scan(0, |acc, v| {
            let start = *acc;
            *acc += v.len();
            Some(start)
        })
        .collect();
    let n_total = m.len();
    let mut gram: Option<Vec<f64>> = (n_total * n_total <= GRAM_CACHE_ENTRIES).then(|| vec![0.0; n_total * n_total]);
    let self_blocks: Vec<Vec<f64>> = (0..n_classes).map(|c| block(c, c)).collect();
    if let Some(g) = gram.as_mut() {
        for a in 0..n_classes {
            for b in a..n_classes {
                let kab = if a == b { self_blocks[a].clone() } else { block(a, b) };
                let (na, nb) = (members[a].len(), members[b].len());
                for i in 0..na {
                    for j in 0..nb {
                        let v = kab[i * nb + j];
                        g[(offsets[a] + i) * n_total + offsets[b] + j] = v;
                        g[(offsets[b] + j) * n_total + offsets[a] + i] = v;
                    }
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut pairs = Vec::new();
    let mut traces = Vec::new();
    let mut pool_slot: Vec<Option<usize>> = vec![None; n_total];
    let mut pool_rows: Vec<usize> = Vec::new();
    // per pair, the class-sorted positions of its support rows
    let mut pair_support_pos: Vec<Vec<usize>> = Vec::new();
    for a in 0..n_classes {
        for b in a + 1..n_classes {
            let (na, nb) = (members[a].len(), members[b].len());
            let n = na + nb;
            let mut k = vec![0.0; n * n];
            if let Some(g) = gram.as_ref() {
                let pos = |i: usize| if i < na { offsets[a] + i } else { offsets[b] + i - na };
                for i in 0..n {
                    let gi = pos(i) * n_total;
                    for j in 0..n {
                        k[i * n + j] = g[gi + pos(j)];
                    }
                }
            } else {
                let cross = block(a, b);
                for i in 0..na {
                    k[i * n..i * n + na].copy_from_slice(&self_blocks[a][i * na..(i + 1) * na]);
                    k[i * n + na..(i + 1) * n].copy_from_slice(&cross[i * nb..(i + 1) * nb]);
                }
                for j in 0..nb {
                    let row = (na + j) * n;
                    for i in 0..na {
                        k[row + i] = cross[i * nb + j];
                    }
                    k[row + na..row + n].copy_from_slice(&self_blocks[b][j * nb..(j + 1) * nb]);
                }
            }
            let y: Vec<f64> = (0..n).map(|i| if i < na { 1.0 } else { -1.0 }).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let sol = smo_solve(&k, &y, params.c, params.tol, params.max_epochs * n, &order);

            let mut support = Vec::new();
            let mut coef = Vec::new();
            let mut positions = Vec::new();
            for (i, alpha) in sol.alpha.iter().enumerate() {
                if *alpha > 0.0 {
                    let (row, pos) = if i < na {
                        (members[a][i], offsets[a] + i)
                    } else {
                        (members[b][i - na], offsets[b] + i - na)
                    };
                    let slot = *pool_slot[row].get_or_insert_with(|| {
                        pool_rows.push(row);
                        pool_rows.len() - 1
                    });
                    support.push(slot);
                    coef.push(y[i] * alpha);
                    positions.push(pos);
                }
            }
            let alpha_range = sol
                .alpha
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
            traces.push(BinaryTrace {
                class_a: a,
                class_b: b,
                iterations: sol.iterations,
                converged: sol.converged,
                kkt_violation: sol.kkt_violation,
                objective: sol.objective,
                alpha_range,
            });
            pairs.push(PairModel {
                class_a: a,
                class_b: b,
                support,
                coef,
                rho: sol.rho,
            });
            pair_support_pos.push(positions);
        }
    }
    let pool = pool_rows
        .iter()
        .flat_map(|r| m.rows()[*r].values.iter().copied())
        .collect();
    let model = SvmModel {
        kernel: params.kernel,
        c: params.c,
        labels,
        dim,
        pool,
        pairs,
        traces,
    };
    let train_prediction = match gram {
        Some(g) => {
            let mut sorted_pos = vec![0; n_total];
            for (c, rows) in members.iter().enumerate() {
                for (i, r) in rows.iter().enumerate() {
                    sorted_pos[*r] = offsets[c] + i;
                }
            }
            let decisions = sorted_pos.iter().map(|p| {
                let gr = &g[p * n_total..(p + 1) * n_total];
                model
                    .pairs
                    .iter()
                    .zip(&pair_support_pos)
                    .map(|(pair, pos)| pos.iter().zip(&pair.coef).map(|(s, c)| c * gr[*s]).sum::<f64>() - pair.rho)
                    .collect::<Vec<f64>>()
            });
            model.vote(decisions)
        }
        None => svm_predict(&model, m)?,
    };
    Ok(SvmFit { model, train_prediction })
}

/// Rows per kernel block during prediction.
const PREDICT_CHUNK: usize = 256;

impl SvmModel {
    pub fn pool_len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.pool.len() / self.dim
        }
    }

    pub fn converged(&self) -> bool {
        self.traces.iter().all(|t| t.converged)
    }

    /// Pair decision values for row-major `chunk`, in pair order.
    fn decide_chunk(&self, chunk: &[f64], pool_norms: &[f64]) -> Vec<Vec<f64>> {
        let norms = sq_norms(chunk, self.dim);
        let k = kernel_block(&self.kernel, chunk, &norms, &self.pool, pool_norms, self.dim, false);
        let p = pool_norms.len();
        (0..norms.len())
            .map(|r| {
                let kr = &k[r * p..(r + 1) * p];
                self.pairs
                    .iter()
                    .map(|pair| pair.support.iter().zip(&pair.coef).map(|(s, c)| c * kr[*s]).sum::<f64>() - pair.rho)
                    .collect()
            })
            .collect()
    }

    /// Pair decision values for each row of row-major `data`.
    pub fn decision_values(&self, data: &[f64]) -> Result<Vec<Vec<f64>>> {
        if self.dim == 0 || data.len() % self.dim != 0 {
            return Err(ClassifyError::DimensionMismatch {
                expected: self.dim,
                got: data.len(),
            });
        }
        let pool_norms = sq_norms(&self.pool, self.dim);
        Ok(data
            .chunks(PREDICT_CHUNK * self.dim)
            .flat_map(|chunk| self.decide_chunk(chunk, &pool_norms))
            .collect())
    }

    fn vote(&self, decisions: impl Iterator<Item = Vec<f64>>) -> PredictionResult {
        let mut predicted = Vec::new();
        let mut votes = Vec::new();
        for row in decisions {
            let mut v = vec![0u32; self.labels.len()];
            for (pair, f) in self.pairs.iter().zip(row) {
                v[if f > 0.0 { pair.class_a } else { pair.class_b }] += 1;
            }
            predicted.push(vote_winner(&v));
            votes.push(v);
        }
        PredictionResult {
            labels: self.labels.clone(),
            predicted,
            votes,
        }
    }

    pub fn predict_values(&self, data: &[f64]) -> Result<PredictionResult> {
        Ok(self.vote(self.decision_values(data)?.into_iter()))
    }
}

pub fn svm_predict(model: &SvmModel, m: &FeatureMatrix) -> Result<PredictionResult> {
    if m.dim() != model.dim {
        return Err(ClassifyError::DimensionMismatch {
            expected: model.dim,
            got: m.dim(),
        });
    }
    let pool_norms = sq_norms(&model.pool, model.dim);
    let decisions = m.rows().chunks(PREDICT_CHUNK).flat_map(|rows| {
        let chunk: Vec<f64> = rows.iter().flat_map(|r| r.values.iter().copied()).collect();
        model.decide_chunk(&chunk, &pool_norms)
    });
    Ok(model.vote(decisions))
}

/// Euclidean k-nearest-neighbor vote. Distance ties go to the lower train
/// row, vote ties to the lower class index.
pub fn knn_predict(train: &FeatureMatrix, test: &FeatureMatrix, k: usize) -> Result<PredictionResult> {
    if train.dim() != test.dim() {
        return Err(ClassifyError::DimensionMismatch {
            expected: train.dim(),
            got: test.dim(),
        });
    }
    if k == 0 || k > train.len() {
        return Err(ClassifyError::InvalidParameter(format!("k={k} with {} train rows", train.len())));
    }
    let (labels, idx) = label_index(train);
    let mut predicted = Vec::with_capacity(test.len());
    let mut votes = Vec::with_capacity(test.len());
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    for t in test.rows() {
        dist.clear();
        dist.extend(train.rows().iter().enumerate().map(|(i, r)| {
            let d: f64 = r.values.iter().zip(&t.values).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, i)
        }));
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut v = vec![0u32; labels.len()];
        for (_, i) in &dist[..k] {
            v[idx[*i]] += 1;
        }
        predicted.push(vote_winner(&v));
        votes.push(v);
    }
    Ok(PredictionResult {
        labels,
        predicted,
        votes,
    })
}

/// Fraction of rows whose predicted label equals the truth.
pub fn accuracy(pred: &PredictionResult, truth: &[&str]) -> Result<f64> {
    if pred.predicted.len() != truth.len() {
        return Err(ClassifyError::LengthMismatch {
            predicted: pred.predicted.len(),
            truth: truth.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = pred
        .predicted
        .iter()
        .zip(truth)
        .filter(|(p, t)| pred.labels[**p] == **t)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

pub fn format_model(model: &SvmModel) -> Result<String> {
    if let Some(bad) = model.labels.iter().find(|l| l.is_empty() || l.contains(char::is_whitespace)) {
        return Err(ClassifyError::InvalidParameter(format!("label {bad:?} cannot be written")));
    }
    let mut s = String::new();
    match model.kernel {
        Kernel::Rbf { gamma } => {
            let _ = writeln!(s, "svm kernel=rbf gamma={gamma} c={} dim={}", model.c, model.dim);
        }
        Kernel::Linear => {
            let _ = writeln!(s, "svm kernel=linear c={} dim={}", model.c, model.dim);
        }
    }
    let _ = writeln!(s, "labels {}", model.labels.join(" "));
    let pool_n = model.pool_len();
    let _ = writeln!(s, "pool {pool_n}");
    for row in model.pool.chunks_exact(model.dim.max(1)) {
        let text: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", text.join(" "));
    }
    let _ = writeln!(s, "pairs {}", model.pairs.len());
    for p in &model.pairs {
        let _ = write!(s, "{} {} {}", p.class_a, p.class_b, p.rho);
        for (i, c) in p.support.iter().zip(&p.coef) {
            let _ = write!(s, " {i}:{c}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_model(text: &str) -> Result<SvmModel> {
    let bad = |line: usize, reason: &str| ClassifyError::MalformedFile {
        line,
        reason: reason.to_string(),
    };
    let lines: Vec<&str> = text.lines().collect();
    let header = lines.first().ok_or_else(|| bad(1, "empty file"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("svm") {
        return Err(bad(1, "missing svm header"));
    }
    let (mut kind, mut gamma, mut c, mut dim) = (None, None, None, None);
    for f in fields {
        let (k, v) = f.split_once('=').ok_or_else(|| bad(1, "expected key=value"))?;
        match k {
            "kernel" => kind = Some(v.to_string()),
            "gamma" => gamma = Some(v.parse::<f64>().map_err(|_| bad(1, "gamma"))?),
            "c" => c = Some(v.parse::<f64>().map_err(|_| bad(1, "c"))?),
            "dim" => dim = Some(v.parse::<usize>().map_err(|_| bad(1, "dim"))?),
            _ => return Err(bad(1, "unknown header key")),
        }
    }
    let kernel = match (kind.as_deref(), gamma) {
        (Some("rbf"), Some(gamma)) => Kernel::Rbf { gamma },
        (Some("linear"), None) => Kernel::Linear,
        _ => return Err(bad(1, "bad kernel spec")),
    };
    let (Some(c), Some(dim)) = (c, dim) else {
        return Err(bad(1, "header needs c= and dim="));
    };
    let labels: Vec<String> = lines
        .get(1)
        .and_then(|l| l.strip_prefix("labels "))
        .ok_or_else(|| bad(2, "missing labels"))?
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let pool_n: usize = lines
        .get(2)
        .and_then(|l| l.strip_prefix("pool "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(3, "missing pool count"))?;
    let mut pool = Vec::with_capacity(pool_n * dim);
    for i in 0..pool_n {
        let ln = 3 + i;
        let line = lines.get(ln).ok_or_else(|| bad(ln + 1, "truncated pool"))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(ln + 1, "bad pool value"))?;
        if row.len() != dim {
            return Err(bad(ln + 1, "pool row has wrong dimension"));
        }
        pool.extend(row);
    }
    let ln = 3 + pool_n;
    let n_pairs: usize = lines
        .get(ln)
        .and_then(|l| l.strip_prefix("pairs "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(ln + 1, "missing pair count"))?;
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let ln = 4 + pool_n + i;
        let line = lines.get(ln).ok_or_else(|| bad(ln + 1, "truncated pairs"))?;
        let mut f = line.split_whitespace();
        let mut next_num = |what: &str| -> Result<String> { f.next().map(str::to_string).ok_or_else(|| bad(ln + 1, what)) };
        let class_a: usize = next_num("class a")?.parse().map_err(|_| bad(ln + 1, "class a"))?;
        let class_b: usize = next_num("class b")?.parse().map_err(|_| bad(ln + 1, "class b"))?;
        let rho: f64 = next_num("rho")?.parse().map_err(|_| bad(ln + 1, "rho"))?;
        let mut support = Vec::new();
        let mut coef = Vec::new();
        for tok in f {
            let (s, v) = tok.split_once(':').ok_or_else(|| bad(ln + 1, "expected idx:coef"))?;
            let s: usize = s.parse().map_err(|_| bad(ln + 1, "support index"))?;
            if s >= pool_n {
                return Err(bad(ln + 1, "support index out of range"));
            }
            support.push(s);
            coef.push(v.parse().map_err(|_| bad(ln + 1, "coefficient"))?);
        }
        if class_a >= labels.len() || class_b >= labels.len() {
            return Err(bad(ln + 1, "class index out of range"));
        }
        pairs.push(PairModel {
            class_a,
            class_b,
            support,
            coef,
            rho,
        });
    }
    Ok(SvmModel {
        kernel,
        c,
        labels,
        dim,
        pool,
        pairs,
        traces: Vec::new(),
    })
}

pub fn save_model(model: &SvmModel, path: &Path) -> Result<()> {
    std::fs::write(path, format_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SvmModel> {
    parse_model(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use crate::ingest::Condition;

    fn matrix(points: &[(&str, Vec<f64>)]) -> FeatureMatrix {
        let dim = points[0].1.len();
        FeatureMatrix::from_rows(
            "t",
            dim,
            points
                .iter()
                .enumerate()
                .map(|(i, (s, v))| FeatureVector {
                    subject_id: s.to_string(),
                    condition: Condition::Rest,
                    r_index: i,
                    values: v.clone(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn kernel_identities() {
        let k = Kernel::Rbf { gamma: 0.5 };
        let (x, y) = ([1.0, 2.0], [0.0, -1.0]);
        assert_eq!(k.eval(&x, &x), 1.0);
        assert_eq!(k.eval(&x, &y), k.eval(&y, &x));
        assert!((k.eval(&x, &y) - (-0.5f64 * 10.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn separable_1d() {
        let mut pts = Vec::new();
        for _ in 0..10 {
            pts.push(("neg", vec![-1.0]));
            pts.push(("pos", vec![1.0]));
        }
        let m = matrix(&pts);
        let model = svm_train(&m, &SvmParams::default()).unwrap();
        assert!(model.converged());
        let pred = svm_predict(&model, &m).unwrap();
        let truth: Vec<&str> = m.rows().iter().map(|r| r.subject_id.as_str()).collect();
        assert_eq!(accuracy(&pred, &truth).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_counts() {
        let pred = PredictionResult {
            labels: vec!["a".into(), "b".into()],
            predicted: vec![0, 0, 0, 0, 0, 0, 0, 1, 1, 1],
            votes: vec![vec![1, 0]; 10],
        };
        let truth = ["a"; 10];
        assert!((accuracy(&pred, &truth).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(accuracy(&pred, &truth[..3]), Err(ClassifyError::LengthMismatch { .. })));
    }

    #[test]
    fn degenerate_class_rejected() {
        let m = matrix(&[("a", vec![0.0]), ("a", vec![0.1]), ("b", vec![1.0])]);
        assert!(matches!(svm_train(&m, &SvmParams::default()), Err(ClassifyError::DegenerateClass(l)) if l == "b"));
    }
}
