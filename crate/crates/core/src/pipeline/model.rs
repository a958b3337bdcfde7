use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Configuration, PipelineError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub method_id: u8,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, method_id: u8) -> Result<FeatureVector, PipelineError> {
        let expected = match method_id {
            1 => 5,
            2 => 9,
            other => return Err(PipelineError::Format(format!("unknown feature method {other}"))),
        };
        if values.len() != expected {
            return Err(PipelineError::Format(format!("method {method_id} has {expected} features, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PipelineError::Format("non-finite feature".into()));
        }
        Ok(FeatureVector { values, method_id })
    }
}

/// Shewchuk's grow-expansion step: `partials` stays a non-overlapping
/// expansion, in increasing magnitude, of the exact running sum.
fn grow(partials: &mut Vec<f64>, mut x: f64) {
    let mut i = 0;
    for j in 0..partials.len() {
        let mut y = partials[j];
        if x.abs() < y.abs() {
            std::mem::swap(&mut x, &mut y);
        }
        let hi = x + y;
        let lo = y - (hi - x);
        if lo != 0.0 {
            partials[i] = lo;
            i += 1;
        }
        x = hi;
    }
    partials.truncate(i);
    if x != 0.0 {
        partials.push(x);
    }
}

/// Correctly rounded value of an expansion.
fn round(partials: &[f64]) -> f64 {
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        let y = partials[n - 1];
        n -= 1;
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Correctly rounded sum, independent of the order of `xs`.
pub fn exact_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut p = Vec::new();
    for x in xs {
        grow(&mut p, x);
    }
    round(&p)
}

/// An exact sum kept in canonical form (largest term first, each term the
/// rounding of what remains), so equal sums compare and serialize equal no
/// matter the order they were accumulated in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ExactSum(Vec<f64>);

impl ExactSum {
    fn add(&mut self, x: f64) {
        let mut p = Vec::new();
        for t in self.0.iter().rev() {
            grow(&mut p, *t);
        }
        grow(&mut p, x);
        let mut canon = Vec::new();
        while !p.is_empty() {
            let r = round(&p);
            if r == 0.0 {
                break;
            }
            canon.push(r);
            grow(&mut p, -r);
        }
        self.0 = canon;
    }

    fn value(&self) -> f64 {
        self.0.first().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Centroid {
    sums: Vec<ExactSum>,
    count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    centroids: BTreeMap<i64, Centroid>,
    pub method_id: u8,
}

impl TrainingSet {
    pub fn new(method_id: u8) -> TrainingSet {
        TrainingSet { centroids: BTreeMap::new(), method_id }
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn subjects(&self) -> impl Iterator<Item = i64> + '_ {
        self.centroids.keys().copied()
    }

    pub fn count(&self, subject: i64) -> u64 {
        self.centroids.get(&subject).map_or(0, |c| c.count)
    }

    /// Mean of the vectors trained for `subject`.
    pub fn centroid(&self, subject: i64) -> Option<Vec<f64>> {
        let c = self.centroids.get(&subject)?;
        Some(c.sums.iter().map(|s| s.value() / c.count as f64).collect())
    }
}

pub fn train(fv: &FeatureVector, subject: i64, set: &TrainingSet) -> Result<TrainingSet, PipelineError> {
    if fv.method_id != set.method_id {
        return Err(PipelineError::MethodMismatch { feature: fv.method_id, training: set.method_id });
    }
    let mut out = set.clone();
    let c = out
        .centroids
        .entry(subject)
        .or_insert_with(|| Centroid { sums: vec![ExactSum::default(); fv.values.len()], count: 0 });
    for (s, v) in c.sums.iter_mut().zip(&fv.values) {
        s.add(*v);
    }
    c.count += 1;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    /// Ascending by distance, ties by subject id.
    pub ranked: Vec<(i64, f64)>,
    pub method_id: u8,
}

impl ResultSet {
    pub fn top(&self) -> Option<i64> {
        self.ranked.first().map(|r| r.0)
    }
}

pub fn classify(fv: &FeatureVector, set: &TrainingSet, cfg: &Configuration) -> Result<ResultSet, PipelineError> {
    if set.is_empty() {
        return Err(PipelineError::EmptyTrainingSet);
    }
    if fv.method_id != set.method_id {
        return Err(PipelineError::MethodMismatch { feature: fv.method_id, training: set.method_id });
    }
    let metric = cfg.classification_method;
    let mut ranked = Vec::new();
    for subject in set.subjects() {
        let c = set.centroid(subject).unwrap();
        let diffs = fv.values.iter().zip(&c).map(|(a, b)| a - b);
        let d = match metric {
            1 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            2 => diffs.fold(0.0f64, |m, d| m.max(d.abs())),
            other => {
                return Err(PipelineError::InvalidConfig { field: "classificationMethod", detail: format!("= {other}") })
            }
        };
        ranked.push((subject, d));
    }
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ResultSet { ranked, method_id: metric })
}
