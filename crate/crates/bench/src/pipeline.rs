//! End-to-end runs: preprocess, detect, featurize, fit on training (or
//! auxiliary) rows only, then score.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ecgid_core::classify::{knn_predict, svm_fit, svm_predict, PredictionResult, SvmModel};
use ecgid_core::detect::detect_r_peaks;
use ecgid_core::dsp::bandpass_zero_phase;
use ecgid_core::features::{FeatureExtractor, FeatureMatrix, ZScoreParams};
use ecgid_core::ingest::DatasetManifest;
use ecgid_core::select::{pca_fit, AuxStats, PcaModel, SelectionMode, SelectionWeights};
use ecgid_core::EcgRecord;

use crate::config::{ClassifierConfig, FeatureStage, PipelineConfig, Reduction, PREPROCESS_ORDER};
use crate::protocol::{split_protocol, Protocol};
use crate::report::ExperimentReport;
use crate::BenchError;

type Result<T> = std::result::Result<T, BenchError>;

/// Band used for the filtered-beat variant.
pub const VARIANT_BAND_HZ: (f64, f64) = (10.0, 40.0);

/// Featurized identification cohort plus, for the selection stage, the
/// streamed statistics of the auxiliary half.
#[derive(Debug, Clone)]
pub struct CohortFeatures {
    pub matrix: FeatureMatrix,
    pub aux: Option<AuxStats>,
    /// Subjects held out for fitting selection weights; empty unless the
    /// stage splits the cohort.
    pub aux_subjects: Vec<String>,
    /// Beats rejected while featurizing the identification cohort.
    pub skipped: usize,
    pub seed: u64,
}

/// Splits sorted subject ids into (auxiliary, identification) halves with a
/// seeded shuffle; the auxiliary half gets floor(n/2) subjects.
pub fn split_aux_subjects(subjects: &[String], seed: u64) -> (Vec<String>, Vec<String>) {
    let mut ids = subjects.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ids.split_off(ids.len() / 2);
    let mut aux = ids;
    aux.sort();
    let mut held = held;
    held.sort();
    (aux, held)
}

/// Featurizes one record under `config`. Detection always runs on the
/// preprocessed signal; the filtered-beat variant draws its beats from a
/// separate 10–40 Hz pass over the raw samples.
pub fn featurize_record(
    record: &EcgRecord,
    config: &PipelineConfig,
    extractor: &FeatureExtractor,
) -> Result<(FeatureMatrix, usize)> {
    let subject = record.subject_id();
    let fs = record.sampling_rate_hz();
    let pre = bandpass_zero_phase(
        record.samples(),
        PREPROCESS_ORDER,
        config.preprocess_lo_hz,
        config.preprocess_hi_hz,
        fs,
    )
    .map_err(|e| BenchError::stage(subject, "preprocess", e))?;
    let det = detect_r_peaks(&pre, fs).map_err(|e| BenchError::stage(subject, "detect", e))?;
    let source = if config.feature == FeatureStage::Bandpass10To40Beat300 {
        bandpass_zero_phase(record.samples(), PREPROCESS_ORDER, VARIANT_BAND_HZ.0, VARIANT_BAND_HZ.1, fs)
            .map_err(|e| BenchError::stage(subject, "preprocess", e))?
    } else {
        pre
    };
    let filtered = record
        .with_samples(source)
        .map_err(|e| BenchError::stage(subject, "preprocess", e))?;
    let out = extractor
        .extract(&filtered, &det)
        .map_err(|e| BenchError::stage(subject, "featurize", e))?;
    Ok((out.matrix, out.skipped))
}

fn extractor_for(records: &[EcgRecord], config: &PipelineConfig) -> Result<FeatureExtractor> {
    let fs = records
        .first()
        .ok_or_else(|| BenchError::EmptyCohort("no records".into()))?
        .sampling_rate_hz();
    if let Some(r) = records.iter().find(|r| r.sampling_rate_hz() != fs) {
        return Err(BenchError::stage(
            r.subject_id(),
            "featurize",
            format!("sampling rate {} Hz differs from cohort rate {fs} Hz", r.sampling_rate_hz()),
        ));
    }
    Ok(FeatureExtractor::new(config.feature.layout(), fs)?)
}

/// Featurizes every record into one matrix, ignoring any auxiliary split.
pub fn featurize_all(records: &[EcgRecord], config: &PipelineConfig) -> Result<(FeatureMatrix, usize)> {
    let extractor = extractor_for(records, config)?;
    let mut matrix = FeatureMatrix::new(extractor.layout_id(), extractor.dim());
    let mut skipped = 0;
    for record in records {
        let (m, s) = featurize_record(record, config, &extractor)?;
        matrix.append(m)?;
        skipped += s;
    }
    Ok((matrix, skipped))
}

/// Featurizes a cohort. Stages that split the cohort stream the auxiliary
/// half into statistics and keep only the identification half as rows.
pub fn extract_cohort(records: &[EcgRecord], config: &PipelineConfig, seed: u64) -> Result<CohortFeatures> {
    config.validate()?;
    if !config.feature.uses_aux_split() {
        let (matrix, skipped) = featurize_all(records, config)?;
        return Ok(CohortFeatures {
            matrix,
            aux: None,
            aux_subjects: Vec::new(),
            skipped,
            seed,
        });
    }
    let extractor = extractor_for(records, config)?;
    let subjects: Vec<String> = records.iter().map(|r| r.subject_id().to_string()).collect();
    let (aux_subjects, _) = split_aux_subjects(&subjects, seed);
    if aux_subjects.len() < 2 {
        return Err(BenchError::EmptyCohort(format!(
            "auxiliary split needs at least 4 subjects, got {}",
            subjects.iter().collect::<std::collections::BTreeSet<_>>().len()
        )));
    }
    let mut aux = AuxStats::new(extractor.dim());
    let mut matrix = FeatureMatrix::new(extractor.layout_id(), extractor.dim());
    let mut skipped = 0;
    for record in records {
        let (m, s) = featurize_record(record, config, &extractor)?;
        if aux_subjects.binary_search(&record.subject_id().to_string()).is_ok() {
            aux.add_matrix(&m)?;
        } else {
            matrix.append(m)?;
            skipped += s;
        }
    }
    Ok(CohortFeatures {
        matrix,
        aux: Some(aux),
        aux_subjects,
        skipped,
        seed,
    })
}

/// What happens to the test rows before fitting. Fitting never reads them,
/// so every choice must leave the fitted state unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TestRows {
    #[default]
    Keep,
    Drop,
    /// Replace every test value `v` with `3v + 1`.
    Perturb,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub test_rows: TestRows,
}

#[derive(Debug, Clone)]
pub enum FittedClassifier {
    Svm(SvmModel),
    Knn { train: FeatureMatrix, k: usize },
}

/// Everything learned from training or auxiliary data.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub selection: Option<Vec<usize>>,
    pub zscore: Option<ZScoreParams>,
    pub pca: Option<PcaModel>,
    pub classifier: FittedClassifier,
}

fn hash_f64s(h: &mut DefaultHasher, xs: &[f64]) {
    xs.len().hash(h);
    for x in xs {
        x.to_bits().hash(h);
    }
}

impl FittedPipeline {
    /// Hash over the bit patterns of all fitted state.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.selection.hash(&mut h);
        if let Some(z) = &self.zscore {
            hash_f64s(&mut h, &z.mean);
            hash_f64s(&mut h, &z.std);
            z.fit_rows.hash(&mut h);
        }
        if let Some(p) = &self.pca {
            hash_f64s(&mut h, &p.mean);
            for c in &p.components {
                hash_f64s(&mut h, c);
            }
            hash_f64s(&mut h, &p.explained_variance);
        }
        match &self.classifier {
            FittedClassifier::Svm(m) => {
                m.labels.hash(&mut h);
                hash_f64s(&mut h, &m.pool);
                for p in &m.pairs {
                    (p.class_a, p.class_b).hash(&mut h);
                    p.support.hash(&mut h);
                    hash_f64s(&mut h, &p.coef);
                    p.rho.to_bits().hash(&mut h);
                }
            }
            FittedClassifier::Knn { train, k } => {
                k.hash(&mut h);
                for r in train.rows() {
                    r.subject_id.hash(&mut h);
                    hash_f64s(&mut h, &r.values);
                }
            }
        }
        h.finish()
    }

    /// Applies the fitted transforms to raw-layout rows.
    pub fn transform(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut out = match &self.selection {
            Some(cols) => m.select_columns(cols, format!("{}+sel{}", m.layout_id(), cols.len()))?,
            None => m.clone(),
        };
        if let Some(z) = &self.zscore {
            z.apply_in_place(&mut out)?;
        }
        if let Some(p) = &self.pca {
            out = p.transform(&out)?;
        }
        Ok(out)
    }

    pub fn predict(&self, transformed: &FeatureMatrix) -> Result<PredictionResult> {
        Ok(match &self.classifier {
            FittedClassifier::Svm(m) => svm_predict(m, transformed)?,
            FittedClassifier::Knn { train, k } => knn_predict(train, transformed, *k)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub fitted: FittedPipeline,
}

/// Fits the (already selected) pipeline on `matrix`'s training rows and
/// scores both sets.
fn fit_and_score(
    matrix: FeatureMatrix,
    selection: Option<Vec<usize>>,
    pipeline_id: String,
    config: &PipelineConfig,
    protocol: Protocol,
    opts: RunOptions,
    skipped: usize,
    seed: u64,
) -> Result<RunOutput> {
    let split = split_protocol(matrix, protocol)?;
    let mut train = split.train;
    let mut test = match opts.test_rows {
        TestRows::Keep => split.test,
        TestRows::Drop => FeatureMatrix::new(split.test.layout_id(), split.test.dim()),
        TestRows::Perturb => {
            let mut t = split.test;
            for r in t.rows_mut() {
                r.values.iter_mut().for_each(|v| *v = 3.0 * *v + 1.0);
            }
            t
        }
    };

    let zscore = if config.zscore {
        let z = ZScoreParams::fit(&train)?;
        z.apply_in_place(&mut train)?;
        z.apply_in_place(&mut test)?;
        Some(z)
    } else {
        None
    };
    let pca = match config.reduction {
        Reduction::None => None,
        Reduction::Pca { variance_retained } => {
            let p = pca_fit(&train, variance_retained)?;
            train = p.transform(&train)?;
            test = p.transform(&test)?;
            Some(p)
        }
    };
    let (classifier, train_pred, converged) = match config.classifier {
        ClassifierConfig::Svm(params) => {
            let fit = svm_fit(&train, &params)?;
            let converged = fit.model.converged();
            (FittedClassifier::Svm(fit.model), fit.train_prediction, converged)
        }
        ClassifierConfig::Knn { k } => {
            let pred = knn_predict(&train, &train, k)?;
            (FittedClassifier::Knn { train: train.clone(), k }, pred, true)
        }
    };
    let fitted = FittedPipeline {
        selection,
        zscore,
        pca,
        classifier,
    };
    let test_pred = if test.is_empty() {
        None
    } else {
        Some(fitted.predict(&test)?)
    };
    let report = ExperimentReport::from_predictions(
        pipeline_id,
        protocol,
        &train,
        &train_pred,
        &test,
        test_pred.as_ref(),
        skipped,
        split.dropped,
        converged,
        seed,
    );
    Ok(RunOutput { report, fitted })
}

fn selection_weights(features: &CohortFeatures, lambda: f64, mode: SelectionMode) -> Result<SelectionWeights> {
    let aux = features
        .aux
        .as_ref()
        .ok_or_else(|| BenchError::Config("fused_kl needs an auxiliary cohort split".into()))?;
    let (w1, w2) = aux.weight_terms()?;
    Ok(SelectionWeights::from_terms(w1, w2, lambda, mode)?)
}

/// Runs `config` on already featurized rows, leaving them untouched.
pub fn run_on_features(
    features: &CohortFeatures,
    config: &PipelineConfig,
    protocol: Protocol,
    opts: RunOptions,
) -> Result<RunOutput> {
    config.validate()?;
    match config.feature {
        FeatureStage::FusedKl { lambda, mode } => {
            let weights = selection_weights(features, lambda, mode)?;
            run_selected(features, &weights.selected, config, protocol, opts)
        }
        _ => fit_and_score(
            features.matrix.clone(),
            None,
            config.id(),
            config,
            protocol,
            opts,
            features.skipped,
            features.seed,
        ),
    }
}

/// Like [`run_on_features`] but consumes the rows, avoiding a copy of a
/// large unselected matrix.
pub fn run_on_features_owned(
    features: CohortFeatures,
    config: &PipelineConfig,
    protocol: Protocol,
    opts: RunOptions,
) -> Result<RunOutput> {
    if let FeatureStage::FusedKl { .. } = config.feature {
        return run_on_features(&features, config, protocol, opts);
    }
    config.validate()?;
    fit_and_score(
        features.matrix,
        None,
        config.id(),
        config,
        protocol,
        opts,
        features.skipped,
        features.seed,
    )
}

fn run_selected(
    features: &CohortFeatures,
    columns: &[usize],
    config: &PipelineConfig,
    protocol: Protocol,
    opts: RunOptions,
) -> Result<RunOutput> {
    if columns.is_empty() {
        return Err(BenchError::Config("selection kept no features".into()));
    }
    let m = features
        .matrix
        .select_columns(columns, format!("{}+sel{}", features.matrix.layout_id(), columns.len()))?;
    fit_and_score(
        m,
        Some(columns.to_vec()),
        config.id(),
        config,
        protocol,
        opts,
        features.skipped,
        features.seed,
    )
}

/// Evaluates the selection stage at each `top_n`, computing the weights
/// once.
pub fn sweep_top_n(
    features: &CohortFeatures,
    config: &PipelineConfig,
    protocol: Protocol,
    top_ns: &[usize],
    opts: RunOptions,
) -> Result<Vec<RunOutput>> {
    let FeatureStage::FusedKl { lambda, .. } = config.feature else {
        return Err(BenchError::Config(format!(
            "sweep needs feature=fused_kl, got {}",
            config.feature.name()
        )));
    };
    if top_ns.is_empty() {
        return Err(BenchError::Usage("empty top_n list".into()));
    }
    let mut weights = selection_weights(features, lambda, SelectionMode::TopN(0))?;
    let mut out = Vec::with_capacity(top_ns.len());
    for &n in top_ns {
        let cfg = PipelineConfig {
            feature: FeatureStage::FusedKl {
                lambda,
                mode: SelectionMode::TopN(n),
            },
            ..config.clone()
        };
        cfg.validate()?;
        weights.reselect(SelectionMode::TopN(n))?;
        out.push(run_selected(features, &weights.selected, &cfg, protocol, opts)?);
    }
    Ok(out)
}

/// Loads, featurizes and runs one configuration under one protocol.
pub fn run_pipeline(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    protocol: Protocol,
    seed: u64,
) -> Result<ExperimentReport> {
    config.validate()?;
    manifest.validate()?;
    if protocol.needs_exercise() || matches!(config.feature, FeatureStage::FusedKl { .. }) {
        manifest.require_exercise()?;
    }
    let records = manifest.load_records()?;
    let features = extract_cohort(&records, config, seed)?;
    Ok(run_on_features_owned(features, config, protocol, RunOptions::default())?.report)
}
