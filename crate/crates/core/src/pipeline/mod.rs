//! Four-stage recognition pipeline (loading, preprocessing, feature
//! extraction, training/classification) whose stages run as procedural
//! demands.

mod corpus;
mod driver;
mod model;
mod signal;

use serde::{Deserialize, Serialize};

pub use corpus::{synthesize, Corpus, CorpusEntry, SynthSpec};
pub use driver::{
    procedures, ClassificationService, InstanceExecutor, LocalExecutor, Pipeline, Report, SampleLine, StageExecutor,
    STAGES,
};
pub use model::{classify, exact_sum, train, FeatureVector, ResultSet, TrainingSet};
pub use signal::{extract_features, load_sample, parse_csv, preprocess, Sample, SILENCE_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("FormatError: {0}")]
    Format(String),
    #[error("EmptySample")]
    EmptySample,
    #[error("AllSilence")]
    AllSilence,
    #[error("SampleTooShort: {0} samples, need at least 8")]
    SampleTooShort(usize),
    #[error("MethodMismatch: feature method {feature}, training set method {training}")]
    MethodMismatch { feature: u8, training: u8 },
    #[error("EmptyTrainingSet")]
    EmptyTrainingSet,
    #[error("InvalidConfig: {field} {detail}")]
    InvalidConfig { field: &'static str, detail: String },
    #[error("CorpusError: {0}")]
    Corpus(String),
    #[error("StageError: {0}")]
    Stage(String),
}

/// Method ids of each stage. All five fields are required; cloning is a
/// deep copy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Configuration {
    /// 1 normalize, 2 normalize and trim silence.
    pub preprocessing_method: u8,
    /// 1 five statistics, 2 those plus four band energies.
    pub feature_extraction_method: u8,
    /// 1 Euclidean, 2 Chebyshev.
    pub classification_method: u8,
    /// Subject a training sample is attributed to.
    pub current_subject: i64,
    /// 1 CSV, 2 raw little-endian f64 with a `.rate` sidecar.
    pub sample_format: u8,
}

impl Default for Configuration {
    fn default() -> Self {
        Configuration {
            preprocessing_method: 1,
            feature_extraction_method: 2,
            classification_method: 1,
            current_subject: 0,
            sample_format: 1,
        }
    }
}

fn check(field: &'static str, v: u8) -> Result<(), PipelineError> {
    if (1..=2).contains(&v) {
        Ok(())
    } else {
        Err(PipelineError::InvalidConfig { field, detail: format!("= {v}, expected 1 or 2") })
    }
}

impl Configuration {
    pub fn validate(&self) -> Result<(), PipelineError> {
        check("preprocessingMethod", self.preprocessing_method)?;
        check("featureExtractionMethod", self.feature_extraction_method)?;
        check("classificationMethod", self.classification_method)?;
        check("sampleFormat", self.sample_format)
    }

    pub fn from_json(text: &str) -> Result<Configuration, PipelineError> {
        let c: Configuration = serde_json::from_str(text)
            .map_err(|e| PipelineError::InvalidConfig { field: "configuration", detail: e.to_string() })?;
        c.validate()?;
        Ok(c)
    }

    /// Copy with `current_subject` replaced.
    pub fn for_subject(&self, subject: i64) -> Configuration {
        Configuration { current_subject: subject, ..self.clone() }
    }
}
