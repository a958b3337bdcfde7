use std::collections::BTreeMap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::model::{classify, train, FeatureVector, ResultSet, TrainingSet};
use super::signal::{extract_features, load_sample, preprocess, Sample};
use super::{Configuration, PipelineError};
use crate::eduction::{Outcome, ProcedureTable};
use crate::recovery::{Recoverable, RecoverableService, RecoveryError, WriteAheadLogger};
use crate::tiers::Instance;
use crate::value::Value;

pub const STAGES: [&str; 5] = ["loading", "preprocessing", "extraction", "training", "classification"];

fn pack<T: Serialize>(v: &T) -> Value {
    Value::Bytes(bincode::serialize(v).expect("pipeline artifacts serialize"))
}

fn unpack<T: DeserializeOwned>(args: &[Value], i: usize) -> Result<T, String> {
    let bytes = args.get(i).and_then(Value::as_bytes).ok_or_else(|| format!("argument {i} must be bytes"))?;
    bincode::deserialize(bytes).map_err(|e| format!("argument {i}: {e}"))
}

fn int(args: &[Value], i: usize) -> Result<i64, String> {
    args.get(i).and_then(Value::as_int).ok_or_else(|| format!("argument {i} must be an integer"))
}

fn method(args: &[Value], i: usize) -> Result<u8, String> {
    u8::try_from(int(args, i)?).map_err(|_| format!("argument {i} is not a method id"))
}

fn stage_err(e: PipelineError) -> String {
    e.to_string()
}

/// The stage procedures, as registered with workers:
/// `load(path, format)`, `preprocess(sample, method)`,
/// `extract(sample, method)`, `train(features, subject, set)` and
/// `classify(features, set, method)`.
pub fn procedures() -> ProcedureTable {
    let mut t = ProcedureTable::new();
    t.insert("load", |args| {
        let path = args.first().and_then(Value::as_text).ok_or("argument 0 must be a path")?;
        let s = load_sample(std::path::Path::new(path), method(args, 1)?).map_err(stage_err)?;
        Ok(pack(&s))
    });
    t.insert("preprocess", |args| {
        let s: Sample = unpack(args, 0)?;
        let cfg = Configuration { preprocessing_method: method(args, 1)?, ..Configuration::default() };
        Ok(pack(&preprocess(&s, &cfg).map_err(stage_err)?))
    });
    t.insert("extract", |args| {
        let s: Sample = unpack(args, 0)?;
        let cfg = Configuration { feature_extraction_method: method(args, 1)?, ..Configuration::default() };
        Ok(pack(&extract_features(&s, &cfg).map_err(stage_err)?))
    });
    t.insert("train", |args| {
        let fv: FeatureVector = unpack(args, 0)?;
        let set: TrainingSet = unpack(args, 2)?;
        Ok(pack(&train(&fv, int(args, 1)?, &set).map_err(stage_err)?))
    });
    t.insert("classify", |args| {
        let fv: FeatureVector = unpack(args, 0)?;
        let set: TrainingSet = unpack(args, 1)?;
        let cfg = Configuration { classification_method: method(args, 2)?, ..Configuration::default() };
        Ok(pack(&classify(&fv, &set, &cfg).map_err(stage_err)?))
    });
    t
}

pub type Call = (String, Vec<Value>);

/// Runs batches of independent stage calls.
pub trait StageExecutor {
    /// Outcomes in call order.
    fn run(&mut self, calls: Vec<Call>) -> Vec<Outcome>;

    fn stage(&mut self, _stage: &str, _entered: bool) {}
}

/// Calls the procedures directly, one after another.
#[derive(Debug, Clone)]
pub struct LocalExecutor {
    procedures: ProcedureTable,
}

impl LocalExecutor {
    pub fn new() -> Self {
        LocalExecutor { procedures: procedures() }
    }
}

impl Default for LocalExecutor {
    fn default() -> Self {
        Self::new()
    }
}

impl StageExecutor for LocalExecutor {
    fn run(&mut self, calls: Vec<Call>) -> Vec<Outcome> {
        calls
            .into_iter()
            .map(|(name, args)| match self.procedures.get(&name) {
                None => Outcome::error("unknown_procedure", name),
                Some(f) => match f(&args) {
                    Ok(v) => Outcome::Value(v),
                    Err(detail) => Outcome::error("procedural_failure", detail),
                },
            })
            .collect()
    }
}

type Hook<'a> = Box<dyn FnMut(&mut Instance) + 'a>;

/// Deposits each call as a procedural demand with the instance's store and
/// steps the instance until every one is computed.
pub struct InstanceExecutor<'a> {
    instance: &'a mut Instance,
    max_ticks: u64,
    hook: Option<Hook<'a>>,
}

impl<'a> InstanceExecutor<'a> {
    pub fn new(instance: &'a mut Instance) -> Self {
        InstanceExecutor { instance, max_ticks: 100_000, hook: None }
    }

    pub fn with_max_ticks(mut self, ticks: u64) -> Self {
        self.max_ticks = ticks;
        self
    }

    /// Called before every tick, e.g. to inject faults.
    pub fn with_hook(mut self, hook: impl FnMut(&mut Instance) + 'a) -> Self {
        self.hook = Some(Box::new(hook));
        self
    }

    pub fn instance(&mut self) -> &mut Instance {
        self.instance
    }
}

impl StageExecutor for InstanceExecutor<'_> {
    fn run(&mut self, calls: Vec<Call>) -> Vec<Outcome> {
        let sigs: Vec<_> = calls.into_iter().map(|(name, args)| self.instance.submit_procedure(&name, args)).collect();
        for _ in 0..self.max_ticks {
            if sigs.iter().all(|s| self.instance.procedure_result(s).is_some()) {
                break;
            }
            if let Some(h) = self.hook.as_mut() {
                h(self.instance);
            }
            self.instance.step();
        }
        sigs.iter()
            .map(|s| {
                self.instance
                    .procedure_result(s)
                    .cloned()
                    .unwrap_or_else(|| Outcome::error("unavailable", format!("not computed within {} ticks", self.max_ticks)))
            })
            .collect()
    }

    fn stage(&mut self, stage: &str, entered: bool) {
        let name = if entered { "stage_entered" } else { "stage_exited" };
        let e = self.instance.event(name, "pipeline").with("stage", stage);
        self.instance.record(e);
        self.instance.step();
    }
}

/// The classification stage's recoverable state: the current training set
/// and every committed result.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationService {
    pub training: Option<TrainingSet>,
    pub results: BTreeMap<String, ResultSet>,
}

impl Recoverable for ClassificationService {
    fn apply(&mut self, operation: &str, payload: &[u8]) -> Result<(), String> {
        match operation {
            "train" => self.training = Some(bincode::deserialize(payload).map_err(|e| e.to_string())?),
            "classify" => {
                let (name, result): (String, Option<ResultSet>) =
                    bincode::deserialize(payload).map_err(|e| e.to_string())?;
                if let Some(r) = result {
                    self.results.insert(name, r);
                }
            }
            other => return Err(format!("unknown operation {other}")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleLine {
    pub name: String,
    pub subject: i64,
    pub result: Result<ResultSet, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub training_errors: Vec<(String, String)>,
    pub lines: Vec<SampleLine>,
    pub accuracy: f64,
    pub demands: u64,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, e) in &self.training_errors {
            writeln!(f, "train {name} error={e}")?;
        }
        for l in &self.lines {
            write!(f, "{} subject={}", l.name, l.subject)?;
            match &l.result {
                Ok(r) => {
                    let ranked: Vec<String> = r.ranked.iter().map(|(s, d)| format!("{s}:{d}")).collect();
                    writeln!(f, " top={} ranked={}", r.top().map_or("-".into(), |t| t.to_string()), ranked.join(","))?;
                }
                Err(e) => writeln!(f, " error={e}")?,
            }
        }
        writeln!(f, "accuracy={} demands={}", self.accuracy, self.demands)
    }
}

fn outcome_bytes(o: Outcome) -> Result<Vec<u8>, String> {
    match o {
        Outcome::Value(Value::Bytes(b)) => Ok(b),
        Outcome::Value(v) => Err(format!("unexpected {} result", v.type_name())),
        Outcome::Error { detail, .. } => Err(detail),
    }
}

fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, String> {
    bincode::deserialize(bytes).map_err(|e| e.to_string())
}

fn recovery(e: RecoveryError) -> PipelineError {
    PipelineError::Stage(format!("classification log: {e}"))
}

/// Drives a corpus through the stages. Training-set updates and
/// classification results go through logged transactions.
pub struct Pipeline<E> {
    config: Configuration,
    exec: E,
    service: RecoverableService<ClassificationService>,
    demands: u64,
    training_errors: Vec<(String, String)>,
}

impl<E: StageExecutor> Pipeline<E> {
    pub fn new(config: Configuration, exec: E) -> Result<Self, PipelineError> {
        Self::with_logger(config, exec, WriteAheadLogger::in_memory())
    }

    pub fn with_logger(config: Configuration, exec: E, logger: WriteAheadLogger) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Pipeline {
            config,
            exec,
            service: RecoverableService::new(logger, ClassificationService::default()),
            demands: 0,
            training_errors: Vec::new(),
        })
    }

    pub fn service(&self) -> &RecoverableService<ClassificationService> {
        &self.service
    }

    pub fn executor(&mut self) -> &mut E {
        &mut self.exec
    }

    pub fn demands(&self) -> u64 {
        self.demands
    }

    pub fn training_set(&self) -> Option<&TrainingSet> {
        self.service.state().training.as_ref()
    }

    fn batch(&mut self, stage: &str, calls: Vec<Call>) -> Vec<Outcome> {
        self.exec.stage(stage, true);
        self.demands += calls.len() as u64;
        let out = self.exec.run(calls);
        self.exec.stage(stage, false);
        out
    }

    /// Runs one stage over the samples still in play.
    fn advance(
        &mut self,
        stage: &str,
        items: Vec<Result<Vec<u8>, String>>,
        call: impl Fn(Vec<u8>) -> Call,
    ) -> Vec<Result<Vec<u8>, String>> {
        let live: Vec<usize> = (0..items.len()).filter(|i| items[*i].is_ok()).collect();
        let mut items = items;
        let calls = live.iter().map(|i| call(items[*i].clone().unwrap())).collect();
        for (i, o) in live.into_iter().zip(self.batch(stage, calls)) {
            items[i] = outcome_bytes(o);
        }
        items
    }

    fn features(&mut self, corpus: &Corpus) -> Vec<Result<Vec<u8>, String>> {
        let fmt = Value::Int(self.config.sample_format.into());
        let pre = Value::Int(self.config.preprocessing_method.into());
        let ext = Value::Int(self.config.feature_extraction_method.into());
        let paths: Vec<Result<Vec<u8>, String>> =
            corpus.entries.iter().map(|e| Ok(e.path.display().to_string().into_bytes())).collect();
        let loaded = self.advance("loading", paths, |p| {
            ("load".into(), vec![Value::Text(String::from_utf8(p).unwrap()), fmt.clone()])
        });
        let cleaned = self.advance("preprocessing", loaded, |s| ("preprocess".into(), vec![Value::Bytes(s), pre.clone()]));
        self.advance("extraction", cleaned, |s| ("extract".into(), vec![Value::Bytes(s), ext.clone()]))
    }

    /// Installs a training set produced elsewhere.
    pub fn install(&mut self, set: &TrainingSet) -> Result<(), PipelineError> {
        let bytes = bincode::serialize(set).expect("training sets serialize");
        self.service.execute("train", bytes).map(|_| ()).map_err(recovery)
    }

    /// Trains on every sample of `corpus`, in corpus order, on top of the
    /// current training set.
    pub fn train(&mut self, corpus: &Corpus) -> Result<(), PipelineError> {
        let features = self.features(corpus);
        let mut set = self
            .training_set()
            .cloned()
            .unwrap_or_else(|| TrainingSet::new(self.config.feature_extraction_method));
        self.exec.stage("training", true);
        for (entry, fv) in corpus.entries.iter().zip(features) {
            let cfg = self.config.for_subject(entry.subject);
            let fv = match fv {
                Ok(fv) => fv,
                Err(e) => {
                    self.training_errors.push((entry.name.clone(), e));
                    continue;
                }
            };
            self.demands += 1;
            let call = ("train".to_owned(), vec![Value::Bytes(fv), Value::Int(cfg.current_subject), pack(&set)]);
            let out = self.exec.run(vec![call]).remove(0);
            match outcome_bytes(out).and_then(|b| decode::<TrainingSet>(&b).map(|s| (b, s))) {
                Ok((bytes, next)) => {
                    self.service.execute("train", bytes).map_err(recovery)?;
                    set = next;
                }
                Err(e) => self.training_errors.push((entry.name.clone(), e)),
            }
        }
        self.exec.stage("training", false);
        Ok(())
    }

    /// Classifies every sample of `corpus` against the current training set.
    pub fn classify(&mut self, corpus: &Corpus) -> Result<Report, PipelineError> {
        let features = self.features(corpus);
        let set = self
            .training_set()
            .cloned()
            .unwrap_or_else(|| TrainingSet::new(self.config.feature_extraction_method));
        let metric = Value::Int(self.config.classification_method.into());
        let mut txns = BTreeMap::new();
        for (i, (entry, fv)) in corpus.entries.iter().zip(&features).enumerate() {
            if fv.is_ok() {
                let intent = bincode::serialize(&(entry.name.clone(), None::<ResultSet>)).unwrap();
                txns.insert(i, self.service.prepare("classify", intent).map_err(recovery)?);
            }
        }
        let set_bytes = pack(&set);
        let results =
            self.advance("classification", features, |fv| ("classify".into(), vec![Value::Bytes(fv), set_bytes.clone(), metric.clone()]));
        let mut lines = Vec::new();
        let mut correct = 0usize;
        for (i, (entry, r)) in corpus.entries.iter().zip(results).enumerate() {
            let result = r.and_then(|b| decode::<ResultSet>(&b));
            if let Some(txn) = txns.get(&i).copied() {
                match &result {
                    Ok(rs) => {
                        let effect = bincode::serialize(&(entry.name.clone(), Some(rs.clone()))).unwrap();
                        self.service.preliminary_complete(txn, effect).map_err(recovery)?;
                        self.service.commit(txn).map_err(recovery)?;
                        self.service.end(txn).map_err(recovery)?;
                    }
                    Err(_) => self.service.abort(txn).map_err(recovery)?,
                }
            }
            if result.as_ref().is_ok_and(|r| r.top() == Some(entry.subject)) {
                correct += 1;
            }
            lines.push(SampleLine { name: entry.name.clone(), subject: entry.subject, result });
        }
        let accuracy = if corpus.is_empty() { 0.0 } else { correct as f64 / corpus.len() as f64 };
        Ok(Report { training_errors: self.training_errors.clone(), lines, accuracy, demands: self.demands })
    }
}
