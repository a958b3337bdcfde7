use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Configuration, PipelineError};
use crate::pipeline::model::FeatureVector;

/// Amplitude below which leading and trailing samples count as silence.
pub const SILENCE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub samples: Vec<f64>,
    pub rate: u32,
    pub subject_id: Option<i64>,
    pub source_path: Option<String>,
}

impl Sample {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Sample, PipelineError> {
        if samples.is_empty() {
            return Err(PipelineError::EmptySample);
        }
        if rate == 0 {
            return Err(PipelineError::Format("rate must be positive".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(PipelineError::Format("non-finite sample".into()));
        }
        Ok(Sample { samples, rate, subject_id: None, source_path: None })
    }
}

/// `rate=<n>` on the first line, then one float per line.
pub fn parse_csv(text: &str) -> Result<Sample, PipelineError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let Some(header) = lines.next() else {
        return Err(PipelineError::EmptySample);
    };
    let rate = header
        .strip_prefix("rate=")
        .and_then(|r| r.parse::<u32>().ok())
        .ok_or_else(|| PipelineError::Format(format!("expected `rate=<n>` header, found `{header}`")))?;
    let samples = lines
        .enumerate()
        .map(|(i, l)| l.parse::<f64>().map_err(|_| PipelineError::Format(format!("line {}: `{l}` is not a number", i + 2))))
        .collect::<Result<Vec<_>, _>>()?;
    Sample::new(samples, rate)
}

fn parse_raw(bytes: &[u8], rate_text: &str) -> Result<Sample, PipelineError> {
    if bytes.is_empty() {
        return Err(PipelineError::EmptySample);
    }
    if !bytes.len().is_multiple_of(8) {
        return Err(PipelineError::Format(format!("{} bytes is not a whole number of f64 values", bytes.len())));
    }
    let rate = rate_text.trim().parse().map_err(|_| PipelineError::Format("bad rate sidecar".into()))?;
    let samples = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Sample::new(samples, rate)
}

pub fn load_sample(path: &Path, format: u8) -> Result<Sample, PipelineError> {
    let io = |e: std::io::Error| PipelineError::Format(format!("{}: {e}", path.display()));
    let mut s = match format {
        1 => parse_csv(&std::fs::read_to_string(path).map_err(io)?)?,
        2 => {
            let mut sidecar = path.as_os_str().to_owned();
            sidecar.push(".rate");
            parse_raw(&std::fs::read(path).map_err(io)?, &std::fs::read_to_string(&sidecar).map_err(io)?)?
        }
        other => return Err(PipelineError::Format(format!("unknown sample format {other}"))),
    };
    s.source_path = Some(path.display().to_string());
    Ok(s)
}

fn normalize(xs: &[f64]) -> Vec<f64> {
    let peak = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        xs.to_vec()
    } else {
        xs.iter().map(|x| x / peak).collect()
    }
}

pub fn preprocess(sample: &Sample, cfg: &Configuration) -> Result<Sample, PipelineError> {
    let normalized = normalize(&sample.samples);
    let samples = match cfg.preprocessing_method {
        1 => normalized,
        2 => {
            let loud = |x: &f64| x.abs() >= SILENCE_THRESHOLD;
            let start = normalized.iter().position(loud).ok_or(PipelineError::AllSilence)?;
            let end = normalized.iter().rposition(loud).unwrap();
            normalized[start..=end].to_vec()
        }
        other => return Err(PipelineError::InvalidConfig { field: "preprocessingMethod", detail: format!("= {other}") }),
    };
    Ok(Sample { samples, ..sample.clone() })
}

fn mean_square(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
}

pub fn extract_features(sample: &Sample, cfg: &Configuration) -> Result<FeatureVector, PipelineError> {
    let xs = &sample.samples;
    if xs.is_empty() {
        return Err(PipelineError::EmptySample);
    }
    let method = cfg.feature_extraction_method;
    if method == 2 && xs.len() < 8 {
        return Err(PipelineError::SampleTooShort(xs.len()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let rms = mean_square(xs).sqrt();
    let crossings = xs.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count();
    let zc = if xs.len() > 1 { crossings as f64 / (xs.len() - 1) as f64 } else { 0.0 };
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut values = vec![mean, rms, zc, min, max];
    match method {
        1 => {}
        2 => {
            let len = xs.len();
            for k in 0..4 {
                values.push(mean_square(&xs[k * len / 4..(k + 1) * len / 4]));
            }
        }
        other => {
            return Err(PipelineError::InvalidConfig { field: "featureExtractionMethod", detail: format!("= {other}") })
        }
    }
    FeatureVector::new(values, method)
}
