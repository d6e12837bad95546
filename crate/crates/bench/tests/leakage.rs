//! Fitted state must depend on training (and auxiliary) rows only.

use ecgid_bench::pipeline::TestRows;
use ecgid_bench::{extract_cohort, run_on_features, ClassifierConfig, FeatureStage, PipelineConfig, Protocol, RunOptions};
use ecgid_core::classify::{svm_predict, svm_train, SvmParams};
use ecgid_core::ingest::{synthesize_cohort, CohortSpec};
use ecgid_core::select::SelectionMode;
use ecgid_core::EcgRecord;

fn cohort() -> Vec<EcgRecord> {
    let spec = CohortSpec {
        subjects: 6,
        rest_s: 30.0,
        ex_s: 25.0,
        seed: 5,
        noise_on: true,
        exercise_shift: true,
    };
    synthesize_cohort(&spec).unwrap().into_iter().map(|s| s.record).collect()
}

fn configs() -> Vec<PipelineConfig> {
    let knn = |f| PipelineConfig {
        classifier: ClassifierConfig::Knn { k: 3 },
        ..PipelineConfig::new(f)
    };
    let kl = |n| FeatureStage::FusedKl {
        lambda: 0.3,
        mode: SelectionMode::TopN(n),
    };
    vec![
        PipelineConfig::new(FeatureStage::Qrs30),
        PipelineConfig::new(FeatureStage::Qrs30).with_pca(0.99),
        knn(FeatureStage::Qrs30),
        PipelineConfig::new(FeatureStage::Beat300),
        PipelineConfig::new(FeatureStage::Pqrst240).with_pca(0.95),
        PipelineConfig::new(FeatureStage::Bandpass10To40Beat300),
        PipelineConfig::new(FeatureStage::Stft),
        PipelineConfig::new(FeatureStage::Cwt).with_pca(0.9),
        PipelineConfig::new(FeatureStage::Ac {
            n_lags: 80,
            window_s: 1.0,
        }),
        knn(FeatureStage::AcBeat { n_lags: 40 }),
        PipelineConfig {
            zscore: true,
            ..PipelineConfig::new(FeatureStage::Beat300)
        },
        PipelineConfig::new(FeatureStage::Fused),
        PipelineConfig::new(kl(20)),
        PipelineConfig::new(kl(20)).with_pca(0.99),
        knn(kl(50)),
    ]
}

#[test]
fn test_rows_never_reach_fitted_state() {
    let records = cohort();
    let mut cached: Option<(FeatureStage, ecgid_bench::CohortFeatures)> = None;
    for cfg in configs() {
        let features = match &cached {
            Some((stage, f)) if *stage == cfg.feature => f.clone(),
            _ => {
                let f = extract_cohort(&records, &cfg, 11).unwrap();
                cached = Some((cfg.feature, f.clone()));
                f
            }
        };
        let mut seen = Vec::new();
        for protocol in [Protocol::RestRest, Protocol::RestEx] {
            let run = |test_rows| {
                run_on_features(&features, &cfg, protocol, RunOptions { test_rows })
                    .unwrap_or_else(|e| panic!("{} {protocol}: {e}", cfg.id()))
            };
            let keep = run(TestRows::Keep);
            let drop = run(TestRows::Drop);
            let perturb = run(TestRows::Perturb);
            let fp = keep.fitted.fingerprint();
            assert_eq!(fp, drop.fitted.fingerprint(), "{} {protocol}: drop", cfg.id());
            assert_eq!(fp, perturb.fitted.fingerprint(), "{} {protocol}: perturb", cfg.id());
            assert_eq!(keep.report.train_accuracy, drop.report.train_accuracy);
            assert_eq!(drop.report.test_beats, 0);
            assert!(keep.report.test_beats > 0);
            seen.push(fp);
        }
        // different training rows, different state: the hash is not vacuous
        assert_ne!(seen[0], seen[1], "{}", cfg.id());
    }
}

#[test]
fn duplicated_training_beats_leave_predictions_unchanged() {
    let records = cohort();
    let cfg = PipelineConfig::new(FeatureStage::Qrs30);
    let features = extract_cohort(&records, &cfg, 11).unwrap();
    for protocol in [Protocol::RestRest, Protocol::RestEx] {
        let split = ecgid_bench::split_protocol(features.matrix.clone(), protocol).unwrap();
        let mut doubled = split.train.clone();
        doubled.append(split.train.clone()).unwrap();
        let params = SvmParams::default();
        let a = svm_predict(&svm_train(&split.train, &params).unwrap(), &split.test).unwrap();
        let b = svm_predict(&svm_train(&doubled, &params).unwrap(), &split.test).unwrap();
        assert_eq!(a.predicted_labels(), b.predicted_labels(), "{protocol}");
    }
}
