//! The eductive evaluator.
//!
//! Evaluation runs on an explicit task stack. Procedure calls suspend the
//! machine with a [`Step::Call`]; the driver satisfies the call however it
//! likes (a local table, a demand-store round trip) and resumes it. This is
//! what lets a generator tier keep many evaluations in flight while it waits
//! on workers.

use std::sync::Arc;

use super::warehouse::{Warehouse, WarehouseKey};
use super::{Context, Outcome, ProcedureTable};
use crate::lang::{BinOp, Geer, IdentifierKind, NodeId, Op, Payload, UnOp};
use crate::value::Value;

pub const DEFAULT_DEPTH_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivideByZero,
    #[error("evaluation depth limit {0} exceeded")]
    DepthExceeded(usize),
    #[error("procedure {name} failed: {detail}")]
    ProceduralFailure { name: String, detail: String },
    #[error("unknown procedure {0}")]
    UnknownProcedure(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("integer overflow in {0}")]
    Overflow(String),
    #[error("unknown dimension {0}")]
    UnknownDimension(String),
    #[error("node {0} cannot be evaluated")]
    InvalidNode(NodeId),
    #[error("evaluation services unavailable: {0}")]
    Unavailable(String),
}

impl EvalError {
    pub fn kind(&self) -> &'static str {
        match self {
            EvalError::DivideByZero => "divide_by_zero",
            EvalError::DepthExceeded(_) => "depth_exceeded",
            EvalError::ProceduralFailure { .. } => "procedural_failure",
            EvalError::UnknownProcedure(_) => "unknown_procedure",
            EvalError::TypeMismatch(_) => "type_mismatch",
            EvalError::Overflow(_) => "overflow",
            EvalError::UnknownDimension(_) => "unknown_dimension",
            EvalError::InvalidNode(_) => "invalid_node",
            EvalError::Unavailable(_) => "unavailable",
        }
    }

    /// Error record stored for a failed procedural demand.
    pub fn procedure_outcome(name: &str, failure: Result<Value, Option<String>>) -> Outcome {
        match failure {
            Ok(v) => Outcome::Value(v),
            Err(None) => Outcome::error("unknown_procedure", name),
            Err(Some(detail)) => Outcome::error("procedural_failure", detail),
        }
    }

    /// Maps a stored outcome of a call to `name` back into the evaluator's
    /// terms.
    pub fn from_outcome(name: &str, outcome: Outcome) -> Result<Value, EvalError> {
        match outcome {
            Outcome::Value(v) => Ok(v),
            Outcome::Error { kind, .. } if kind == "unknown_procedure" => Err(EvalError::UnknownProcedure(name.to_owned())),
            Outcome::Error { detail, .. } => Err(EvalError::ProceduralFailure { name: name.to_owned(), detail }),
        }
    }
}

fn mismatch(op: &str, a: &Value, b: &Value) -> EvalError {
    EvalError::TypeMismatch(format!("{} {op} {}", a.type_name(), b.type_name()))
}

fn numeric_pair(a: &Value, b: &Value) -> Option<(f64, f64)> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some((*x as f64, *y as f64)),
        (Value::Int(x), Value::Float(y)) => Some((*x as f64, *y)),
        (Value::Float(x), Value::Int(y)) => Some((*x, *y as f64)),
        (Value::Float(x), Value::Float(y)) => Some((*x, *y)),
        _ => None,
    }
}

/// Binary operator semantics. Int op Int stays integral (checked); any float
/// operand promotes both sides to float.
pub fn apply_binary(op: BinOp, a: &Value, b: &Value) -> Result<Value, EvalError> {
    let sym = op.symbol();
    match op {
        BinOp::And | BinOp::Or => match (a, b) {
            (Value::Bool(x), Value::Bool(y)) => Ok(Value::Bool(if op == BinOp::And { *x && *y } else { *x || *y })),
            _ => Err(mismatch(sym, a, b)),
        },
        BinOp::Eq | BinOp::Ne => {
            let eq = match (a, b) {
                (Value::Int(x), Value::Int(y)) => x == y,
                _ => match numeric_pair(a, b) {
                    Some((x, y)) => x == y,
                    None if std::mem::discriminant(a) == std::mem::discriminant(b) => a == b,
                    None => return Err(mismatch(sym, a, b)),
                },
            };
            Ok(Value::Bool(eq == (op == BinOp::Eq)))
        }
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
            let ord = match (a, b) {
                (Value::Int(x), Value::Int(y)) => x.partial_cmp(y),
                _ => {
                    let (x, y) = numeric_pair(a, b).ok_or_else(|| mismatch(sym, a, b))?;
                    x.partial_cmp(&y)
                }
            };
            let r = match ord {
                None => false,
                Some(o) => match op {
                    BinOp::Lt => o.is_lt(),
                    BinOp::Le => o.is_le(),
                    BinOp::Gt => o.is_gt(),
                    _ => o.is_ge(),
                },
            };
            Ok(Value::Bool(r))
        }
        BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Rem => {
            if let (Value::Int(x), Value::Int(y)) = (a, b) {
                if matches!(op, BinOp::Div | BinOp::Rem) && *y == 0 {
                    return Err(EvalError::DivideByZero);
                }
                let r = match op {
                    BinOp::Add => x.checked_add(*y),
                    BinOp::Sub => x.checked_sub(*y),
                    BinOp::Mul => x.checked_mul(*y),
                    BinOp::Div => x.checked_div(*y),
                    _ => x.checked_rem(*y),
                };
                return r.map(Value::Int).ok_or_else(|| EvalError::Overflow(format!("{x} {sym} {y}")));
            }
            let (x, y) = numeric_pair(a, b).ok_or_else(|| mismatch(sym, a, b))?;
            if matches!(op, BinOp::Div | BinOp::Rem) && y == 0.0 {
                return Err(EvalError::DivideByZero);
            }
            Ok(Value::Float(match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                _ => x % y,
            }))
        }
    }
}

pub fn apply_unary(op: UnOp, v: &Value) -> Result<Value, EvalError> {
    match (op, v) {
        (UnOp::Neg, Value::Int(x)) => x.checked_neg().map(Value::Int).ok_or_else(|| EvalError::Overflow(format!("-{x}"))),
        (UnOp::Neg, Value::Float(x)) => Ok(Value::Float(-x)),
        (UnOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
        _ => Err(EvalError::TypeMismatch(format!("{}{}", op.symbol(), v.type_name()))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    /// Maximum number of outstanding tasks on the work stack.
    pub depth_limit: usize,
    pub memoize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { depth_limit: DEFAULT_DEPTH_LIMIT, memoize: true }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalStats {
    /// Times an identifier's definition was evaluated (warehouse misses, or
    /// every reference when memoization is off).
    pub intensional_evaluations: u64,
    pub warehouse_hits: u64,
    pub procedure_calls: u64,
    pub nodes_visited: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcRequest {
    pub name: String,
    pub args: Vec<Value>,
    pub context: Context,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Call(ProcRequest),
    Done(Result<Value, EvalError>),
}

#[derive(Debug, Clone)]
enum Task {
    Eval(NodeId, Context),
    Binary(BinOp),
    Unary(UnOp),
    Branch { then: NodeId, otherwise: NodeId, ctx: Context },
    Shift { expr: NodeId, dim: String, ctx: Context },
    /// Marks the end of a definition's evaluation; commits when memoizing.
    Commit(Option<WarehouseKey>),
    Call { name: String, argc: usize, ctx: Context },
}

/// A suspended evaluation of one node in one context.
#[derive(Debug, Clone)]
pub struct Machine {
    geer: Arc<Geer>,
    config: EvalConfig,
    tasks: Vec<Task>,
    values: Vec<Value>,
    awaiting: Option<ProcRequest>,
    finished: Option<Result<Value, EvalError>>,
    stats: EvalStats,
}

impl Machine {
    pub fn new(geer: Arc<Geer>, node: NodeId, ctx: Context, config: EvalConfig) -> Machine {
        let finished = geer.node(node).is_none().then_some(Err(EvalError::InvalidNode(node)));
        Machine {
            geer,
            config,
            tasks: vec![Task::Eval(node, ctx)],
            values: Vec::new(),
            awaiting: None,
            finished,
            stats: EvalStats::default(),
        }
    }

    pub fn geer(&self) -> &Arc<Geer> {
        &self.geer
    }

    pub fn stats(&self) -> EvalStats {
        self.stats
    }

    pub fn is_finished(&self) -> bool {
        self.finished.is_some()
    }

    pub fn pending_call(&self) -> Option<&ProcRequest> {
        self.awaiting.as_ref()
    }

    /// Runs until the evaluation finishes or needs a procedure result. While
    /// a call is outstanding this keeps returning the same request.
    pub fn run(&mut self, wh: &mut Warehouse) -> Step {
        loop {
            if let Some(r) = &self.finished {
                return Step::Done(r.clone());
            }
            if let Some(req) = &self.awaiting {
                return Step::Call(req.clone());
            }
            let Some(task) = self.tasks.pop() else {
                let v = self.values.pop().expect("finished evaluation leaves one value");
                self.finished = Some(Ok(v));
                continue;
            };
            if let Err(e) = self.exec(task, wh) {
                self.finished = Some(Err(e));
            } else if self.tasks.len() > self.config.depth_limit {
                self.finished = Some(Err(EvalError::DepthExceeded(self.config.depth_limit)));
            }
        }
    }

    /// Supplies the result of the outstanding call.
    pub fn resume(&mut self, result: Result<Value, EvalError>) {
        if self.awaiting.take().is_none() {
            return;
        }
        match result {
            Ok(v) => self.values.push(v),
            Err(e) => self.finished = Some(Err(e)),
        }
    }

    fn pop(&mut self) -> Value {
        self.values.pop().expect("operand available")
    }

    fn exec(&mut self, task: Task, wh: &mut Warehouse) -> Result<(), EvalError> {
        match task {
            Task::Eval(id, ctx) => self.eval_node(id, ctx, wh)?,
            Task::Binary(op) => {
                let r = self.pop();
                let l = self.pop();
                self.values.push(apply_binary(op, &l, &r)?);
            }
            Task::Unary(op) => {
                let v = self.pop();
                self.values.push(apply_unary(op, &v)?);
            }
            Task::Branch { then, otherwise, ctx } => match self.pop() {
                Value::Bool(c) => self.tasks.push(Task::Eval(if c { then } else { otherwise }, ctx)),
                other => return Err(EvalError::TypeMismatch(format!("if condition is {}", other.type_name()))),
            },
            Task::Shift { expr, dim, ctx } => {
                let tag = match self.pop() {
                    Value::Int(t) => t,
                    other => return Err(EvalError::TypeMismatch(format!("tag of {dim} is {}", other.type_name()))),
                };
                let shifted = ctx
                    .override_in(&self.geer.dimensions, &dim, tag)
                    .map_err(|_| EvalError::UnknownDimension(dim.clone()))?;
                self.tasks.push(Task::Eval(expr, shifted));
            }
            Task::Commit(key) => {
                if let Some(key) = key {
                    let v = self.values.last().expect("definition value").clone();
                    wh.commit(key, v);
                }
            }
            Task::Call { name, argc, ctx } => {
                let args = self.values.split_off(self.values.len() - argc);
                self.stats.procedure_calls += 1;
                self.awaiting = Some(ProcRequest { name, args, context: ctx });
            }
        }
        Ok(())
    }

    fn eval_node(&mut self, id: NodeId, ctx: Context, wh: &mut Warehouse) -> Result<(), EvalError> {
        self.stats.nodes_visited += 1;
        let geer = self.geer.clone();
        let node = geer.node(id).ok_or(EvalError::InvalidNode(id))?;
        let ch = &node.children;
        match (&node.op, &node.payload) {
            (Op::IntLit, Payload::Int(v)) => self.values.push(Value::Int(*v)),
            (Op::FloatLit, Payload::Float(v)) => self.values.push(Value::Float(*v)),
            (Op::BoolLit, Payload::Bool(v)) => self.values.push(Value::Bool(*v)),
            (Op::HashDim, Payload::Name(d)) => self.values.push(Value::Int(ctx.tag(d))),
            (Op::BinOp, _) => {
                let op = node.bin_op().ok_or(EvalError::InvalidNode(id))?;
                self.tasks.push(Task::Binary(op));
                self.tasks.push(Task::Eval(ch[1], ctx.clone()));
                self.tasks.push(Task::Eval(ch[0], ctx));
            }
            (Op::UnOp, _) => {
                let op = node.un_op().ok_or(EvalError::InvalidNode(id))?;
                self.tasks.push(Task::Unary(op));
                self.tasks.push(Task::Eval(ch[0], ctx));
            }
            (Op::If, _) => {
                self.tasks.push(Task::Branch { then: ch[1], otherwise: ch[2], ctx: ctx.clone() });
                self.tasks.push(Task::Eval(ch[0], ctx));
            }
            (Op::At, _) => {
                let dim = geer.node(ch[1]).and_then(|n| n.name()).ok_or(EvalError::InvalidNode(id))?;
                self.tasks.push(Task::Shift { expr: ch[0], dim: dim.to_owned(), ctx: ctx.clone() });
                self.tasks.push(Task::Eval(ch[2], ctx));
            }
            (Op::Where, _) => self.tasks.push(Task::Eval(ch[0], ctx)),
            (Op::ProcCall, Payload::Name(name)) => {
                self.tasks.push(Task::Call { name: name.clone(), argc: ch.len(), ctx: ctx.clone() });
                for &a in ch.iter().rev() {
                    self.tasks.push(Task::Eval(a, ctx.clone()));
                }
            }
            (Op::Ident, Payload::Name(name)) => {
                let entry = geer.lookup(name).ok_or(EvalError::InvalidNode(id))?;
                let def = match (entry.kind, entry.definition) {
                    (IdentifierKind::Intensional, Some(def)) => def,
                    (IdentifierKind::Dimension, _) => return Err(EvalError::UnknownDimension(name.clone())),
                    _ => return Err(EvalError::InvalidNode(id)),
                };
                let key = self
                    .config
                    .memoize
                    .then(|| WarehouseKey::new(&geer.geer_id, def, &ctx, &geer.dimensions));
                if let Some(k) = &key {
                    if let Some(v) = wh.lookup(k) {
                        self.stats.warehouse_hits += 1;
                        self.values.push(v);
                        return Ok(());
                    }
                }
                self.stats.intensional_evaluations += 1;
                self.tasks.push(Task::Commit(key));
                self.tasks.push(Task::Eval(def, ctx));
            }
            _ => return Err(EvalError::InvalidNode(id)),
        }
        Ok(())
    }
}

/// What the evaluator needs from its environment.
pub trait Services {
    fn call(&mut self, request: &ProcRequest) -> Result<Value, EvalError>;
    fn warehouse(&mut self) -> &mut Warehouse;
}

/// Local mode: procedures from a table, a private warehouse.
#[derive(Debug, Clone, Default)]
pub struct LocalServices {
    pub procedures: ProcedureTable,
    pub warehouse: Warehouse,
}

impl LocalServices {
    pub fn new(procedures: ProcedureTable) -> Self {
        LocalServices { procedures, warehouse: Warehouse::new() }
    }
}

impl Services for LocalServices {
    fn call(&mut self, request: &ProcRequest) -> Result<Value, EvalError> {
        let f = self
            .procedures
            .get(&request.name)
            .ok_or_else(|| EvalError::UnknownProcedure(request.name.clone()))?;
        f(&request.args).map_err(|detail| EvalError::ProceduralFailure { name: request.name.clone(), detail })
    }

    fn warehouse(&mut self) -> &mut Warehouse {
        &mut self.warehouse
    }
}

/// Evaluates `node` in `ctx` to completion, answering procedure calls
/// through `services`.
pub fn eval_eductive(
    geer: &Arc<Geer>,
    node: NodeId,
    ctx: &Context,
    services: &mut dyn Services,
    config: EvalConfig,
) -> (Result<Value, EvalError>, EvalStats) {
    let mut m = Machine::new(geer.clone(), node, ctx.clone(), config);
    loop {
        match m.run(services.warehouse()) {
            Step::Done(r) => return (r, m.stats()),
            Step::Call(req) => {
                let r = services.call(&req);
                m.resume(r);
            }
        }
    }
}

/// Convenience: evaluate a program's entry expression locally with the
/// standard procedures.
pub fn eval_program(geer: &Arc<Geer>, ctx: &Context) -> Result<Value, EvalError> {
    let mut services = LocalServices::new(ProcedureTable::standard());
    eval_eductive(geer, geer.entry, ctx, &mut services, EvalConfig::default()).0
}
