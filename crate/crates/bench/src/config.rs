//! Pipeline configuration and its flat `key=value` file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ecgid_core::classify::{Kernel, SvmParams};
use ecgid_core::features::Layout;
use ecgid_core::select::SelectionMode;

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureStage {
    Qrs30,
    Beat300,
    Pqrst240,
    /// Midpoint beats taken from a 10–40 Hz band-passed signal.
    Bandpass10To40Beat300,
    Stft,
    Cwt,
    Ac { n_lags: usize, window_s: f64 },
    AcBeat { n_lags: usize },
    /// Full fused layout without selection.
    Fused,
    /// Fused layout with weights fit on an auxiliary half of the cohort.
    FusedKl { lambda: f64, mode: SelectionMode },
}

impl FeatureStage {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureStage::Qrs30 => "qrs30",
            FeatureStage::Beat300 => "beat300",
            FeatureStage::Pqrst240 => "pqrst240",
            FeatureStage::Bandpass10To40Beat300 => "bandpass10_40+beat300",
            FeatureStage::Stft => "stft",
            FeatureStage::Cwt => "cwt",
            FeatureStage::Ac { .. } => "ac",
            FeatureStage::AcBeat { .. } => "ac_beat",
            FeatureStage::Fused => "fused",
            FeatureStage::FusedKl { .. } => "fused_kl",
        }
    }

    pub fn layout(&self) -> Layout {
        match *self {
            FeatureStage::Qrs30 => Layout::Qrs30,
            FeatureStage::Beat300 | FeatureStage::Bandpass10To40Beat300 => Layout::Beat300,
            FeatureStage::Pqrst240 => Layout::Pqrst240,
            FeatureStage::Stft => Layout::Stft,
            FeatureStage::Cwt => Layout::Cwt,
            FeatureStage::Ac { n_lags, window_s } => Layout::Ac { n_lags, window_s },
            FeatureStage::AcBeat { n_lags } => Layout::AcBeat { n_lags },
            FeatureStage::Fused | FeatureStage::FusedKl { .. } => Layout::Fused,
        }
    }

    /// Whether the stage splits off an auxiliary half of the subjects.
    pub fn uses_aux_split(&self) -> bool {
        matches!(self, FeatureStage::Fused | FeatureStage::FusedKl { .. })
    }

    fn id(&self) -> String {
        match self {
            FeatureStage::Ac { n_lags, window_s } => format!("ac-n{n_lags}-L{window_s}"),
            FeatureStage::AcBeat { n_lags } => format!("ac_beat-n{n_lags}"),
            FeatureStage::FusedKl { lambda, mode } => match mode {
                SelectionMode::TopN(n) => format!("fused_kl-l{lambda}-n{n}"),
                SelectionMode::Threshold(t) => format!("fused_kl-l{lambda}-t{t}"),
            },
            other => other.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reduction {
    None,
    Pca { variance_retained: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassifierConfig {
    Svm(SvmParams),
    Knn { k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub feature: FeatureStage,
    pub reduction: Reduction,
    pub classifier: ClassifierConfig,
    pub zscore: bool,
    pub preprocess_lo_hz: f64,
    pub preprocess_hi_hz: f64,
}

pub const PREPROCESS_ORDER: usize = 4;
pub const DEFAULT_AC_LAGS: usize = 80;
pub const DEFAULT_AC_WINDOW_S: f64 = 1.0;
pub const DEFAULT_KL_LAMBDA: f64 = 0.3;
pub const DEFAULT_KL_TOP_N: usize = 100;
pub const DEFAULT_PCA_VARIANCE: f64 = 0.99;

impl PipelineConfig {
    /// Stage defaults: z-scoring only for the fused layouts, no reduction,
    /// RBF SVM with c=100 and gamma=1, 0.5–40 Hz preprocessing.
    pub fn new(feature: FeatureStage) -> Self {
        Self {
            feature,
            reduction: Reduction::None,
            classifier: ClassifierConfig::Svm(SvmParams::default()),
            zscore: feature.uses_aux_split(),
            preprocess_lo_hz: 0.5,
            preprocess_hi_hz: 40.0,
        }
    }

    pub fn with_pca(mut self, variance_retained: f64) -> Self {
        self.reduction = Reduction::Pca { variance_retained };
        self
    }

    /// Comma-free identifier used in reports.
    pub fn id(&self) -> String {
        let mut s = self.feature.id();
        if self.zscore && !self.feature.uses_aux_split() {
            s.push_str("+z");
        }
        if let Reduction::Pca { variance_retained } = self.reduction {
            s.push_str(&format!("+pca{variance_retained}"));
        }
        match self.classifier {
            ClassifierConfig::Svm(p) => match p.kernel {
                Kernel::Rbf { gamma } => s.push_str(&format!("+svm-c{}-g{gamma}", p.c)),
                Kernel::Linear => s.push_str(&format!("+svm-c{}-linear", p.c)),
            },
            ClassifierConfig::Knn { k } => s.push_str(&format!("+knn{k}")),
        }
        s
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if !(self.preprocess_lo_hz > 0.0 && self.preprocess_lo_hz < self.preprocess_hi_hz) {
            return bad(format!(
                "preprocessing band {}–{} Hz is invalid",
                self.preprocess_lo_hz, self.preprocess_hi_hz
            ));
        }
        if let FeatureStage::FusedKl { lambda, mode } = self.feature {
            if !(0.0..=1.0).contains(&lambda) {
                return bad(format!("kl_lambda {lambda} outside [0, 1]"));
            }
            if mode == SelectionMode::TopN(0) {
                return bad("kl_top_n must be positive".into());
            }
        }
        if let Reduction::Pca { variance_retained } = self.reduction {
            if !(variance_retained > 0.0 && variance_retained <= 1.0) {
                return bad(format!("pca_variance {variance_retained} outside (0, 1]"));
            }
        }
        match self.classifier {
            ClassifierConfig::Svm(p) => {
                if !(p.c > 0.0 && p.tol > 0.0 && p.max_epochs > 0) {
                    return bad(format!("invalid svm parameters {p:?}"));
                }
            }
            ClassifierConfig::Knn { k } if k == 0 => return bad("knn_k must be positive".into()),
            _ => {}
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut lines = vec![format!("feature={}", self.feature.name())];
        match self.feature {
            FeatureStage::Ac { n_lags, window_s } => {
                lines.push(format!("ac_lags={n_lags}"));
                lines.push(format!("ac_window_s={window_s}"));
            }
            FeatureStage::AcBeat { n_lags } => lines.push(format!("ac_lags={n_lags}")),
            FeatureStage::FusedKl { lambda, mode } => {
                lines.push(format!("kl_lambda={lambda}"));
                match mode {
                    SelectionMode::TopN(n) => lines.push(format!("kl_top_n={n}")),
                    SelectionMode::Threshold(t) => lines.push(format!("kl_threshold={t}")),
                }
            }
            _ => {}
        }
        match self.reduction {
            Reduction::None => lines.push("reduction=none".into()),
            Reduction::Pca { variance_retained } => {
                lines.push("reduction=pca".into());
                lines.push(format!("pca_variance={variance_retained}"));
            }
        }
        match self.classifier {
            ClassifierConfig::Svm(p) => {
                lines.push("classifier=svm".into());
                lines.push(format!("svm_c={}", p.c));
                match p.kernel {
                    Kernel::Rbf { gamma } => lines.push(format!("svm_gamma={gamma}")),
                    Kernel::Linear => lines.push("svm_kernel=linear".into()),
                }
                lines.push(format!("svm_tol={}", p.tol));
                lines.push(format!("svm_max_epochs={}", p.max_epochs));
            }
            ClassifierConfig::Knn { k } => {
                lines.push("classifier=knn".into());
                lines.push(format!("knn_k={k}"));
            }
        }
        lines.push(format!("zscore={}", self.zscore));
        lines.push(format!("preprocess_lo_hz={}", self.preprocess_lo_hz));
        lines.push(format!("preprocess_hi_hz={}", self.preprocess_hi_hz));
        lines.join("\n") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io(path.display().to_string(), e))?;
        text.parse()
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, BenchError> {
    v.parse()
        .map_err(|_| BenchError::Config(format!("{key}: cannot parse {v:?}")))
}

impl FromStr for PipelineConfig {
    type Err = BenchError;

    /// Parses `key=value` lines; `#` starts a comment. Unset keys take the
    /// stage defaults.
    fn from_str(text: &str) -> Result<Self, BenchError> {
        let mut kv: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| BenchError::Config(format!("line {}: expected key=value", i + 1)))?;
            kv.push((k.trim().to_string(), v.trim().to_string()));
        }
        let get = |key: &str| kv.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        const KEYS: [&str; 18] = [
            "feature",
            "ac_lags",
            "ac_window_s",
            "kl_lambda",
            "kl_top_n",
            "kl_threshold",
            "reduction",
            "pca_variance",
            "classifier",
            "svm_c",
            "svm_gamma",
            "svm_kernel",
            "svm_tol",
            "svm_max_epochs",
            "knn_k",
            "zscore",
            "preprocess_lo_hz",
            "preprocess_hi_hz",
        ];
        if let Some((k, _)) = kv.iter().find(|(k, _)| !KEYS.contains(&k.as_str())) {
            return Err(BenchError::Config(format!("unknown key {k:?}")));
        }

        let ac_lags = get("ac_lags").map(|v| parse_num("ac_lags", v)).transpose()?.unwrap_or(DEFAULT_AC_LAGS);
        let feature = match get("feature").ok_or_else(|| BenchError::Config("missing feature".into()))? {
            "qrs30" => FeatureStage::Qrs30,
            "beat300" => FeatureStage::Beat300,
            "pqrst240" => FeatureStage::Pqrst240,
            "bandpass10_40+beat300" | "bp10_40_beat300" => FeatureStage::Bandpass10To40Beat300,
            "stft" => FeatureStage::Stft,
            "cwt" => FeatureStage::Cwt,
            "ac" => FeatureStage::Ac {
                n_lags: ac_lags,
                window_s: get("ac_window_s")
                    .map(|v| parse_num("ac_window_s", v))
                    .transpose()?
                    .unwrap_or(DEFAULT_AC_WINDOW_S),
            },
            "ac_beat" => FeatureStage::AcBeat { n_lags: ac_lags },
            "fused" => FeatureStage::Fused,
            "fused_kl" => {
                let lambda = get("kl_lambda")
                    .map(|v| parse_num("kl_lambda", v))
                    .transpose()?
                    .unwrap_or(DEFAULT_KL_LAMBDA);
                let mode = match (get("kl_top_n"), get("kl_threshold")) {
                    (Some(_), Some(_)) => {
                        return Err(BenchError::Config("set only one of kl_top_n and kl_threshold".into()))
                    }
                    (_, Some(t)) => SelectionMode::Threshold(parse_num("kl_threshold", t)?),
                    (Some(n), None) => SelectionMode::TopN(parse_num("kl_top_n", n)?),
                    (None, None) => SelectionMode::TopN(DEFAULT_KL_TOP_N),
                };
                FeatureStage::FusedKl { lambda, mode }
            }
            other => return Err(BenchError::Config(format!("unknown feature {other:?}"))),
        };
        let mut cfg = PipelineConfig::new(feature);
        cfg.reduction = match get("reduction").unwrap_or("none") {
            "none" => Reduction::None,
            "pca" => Reduction::Pca {
                variance_retained: get("pca_variance")
                    .map(|v| parse_num("pca_variance", v))
                    .transpose()?
                    .unwrap_or(DEFAULT_PCA_VARIANCE),
            },
            other => return Err(BenchError::Config(format!("unknown reduction {other:?}"))),
        };
        cfg.classifier = match get("classifier").unwrap_or("svm") {
            "svm" => {
                let mut p = SvmParams::default();
                if let Some(v) = get("svm_c") {
                    p.c = parse_num("svm_c", v)?;
                }
                match get("svm_kernel").unwrap_or("rbf") {
                    "rbf" => {
                        if let Some(v) = get("svm_gamma") {
                            p.kernel = Kernel::Rbf {
                                gamma: parse_num("svm_gamma", v)?,
                            };
                        }
                    }
                    "linear" => p.kernel = Kernel::Linear,
                    other => return Err(BenchError::Config(format!("unknown svm_kernel {other:?}"))),
                }
                if let Some(v) = get("svm_tol") {
                    p.tol = parse_num("svm_tol", v)?;
                }
                if let Some(v) = get("svm_max_epochs") {
                    p.max_epochs = parse_num("svm_max_epochs", v)?;
                }
                ClassifierConfig::Svm(p)
            }
            "knn" => ClassifierConfig::Knn {
                k: get("knn_k").map(|v| parse_num("knn_k", v)).transpose()?.unwrap_or(1),
            },
            other => return Err(BenchError::Config(format!("unknown classifier {other:?}"))),
        };
        if let Some(v) = get("zscore") {
            cfg.zscore = parse_num("zscore", v)?;
        }
        if let Some(v) = get("preprocess_lo_hz") {
            cfg.preprocess_lo_hz = parse_num("preprocess_lo_hz", v)?;
        }
        if let Some(v) = get("preprocess_hi_hz") {
            cfg.preprocess_hi_hz = parse_num("preprocess_hi_hz", v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}
