//! Naive recursive interpreter over the surface syntax, plus shared fixtures.
//!
//! Sugar forms are evaluated directly rather than desugared, arithmetic is
//! reimplemented here, and nothing is memoized. `ident_evals` counts every
//! identifier reference that forces a definition.
#![allow(dead_code)]

pub mod centroid;
pub mod ledger;
pub mod store_model;
pub mod sugar;
pub mod workload;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use eductive::eduction::{Context, Outcome};
use eductive::lang::{compile, parse_program, BinOp, Expr, Geer, UnOp};
use eductive::tiers::{Instance, Topology};
use eductive::value::Value;

pub const SECRET: &[u8] = b"integration-test-secret";

pub const NATURALS: &str = "N where dimension t; N = 0 fby.t (N + 1); end";
pub const COUNTER: &str = "C where dimension t; C = 100 fby.t sub(C, 3); end";
pub const FIB: &str = "fib where dimension t; fib = if #t <= 1 then #t else fib@t:(#t-1) + fib@t:(#t-2); end";
pub const RUNNING_SUM: &str = "S where dimension t; X = square(#t); S = X fby.t add(S, X @ t:(#t + 1)); end";
pub const DIFFERENCE: &str = "D where dimension t; X = #t * #t; D = next.t X - first.t X - X; end";

pub fn corpus() -> Vec<(&'static str, &'static str)> {
    vec![
        ("naturals", NATURALS),
        ("fby-counter", COUNTER),
        ("fib", FIB),
        ("running-sum", RUNNING_SUM),
        ("difference", DIFFERENCE),
    ]
}

pub type Tags = BTreeMap<String, i64>;

pub fn tags(pairs: &[(&str, i64)]) -> Tags {
    pairs.iter().map(|(d, t)| (d.to_string(), *t)).collect()
}

pub fn context(tags: &Tags) -> Context {
    Context::from_pairs(tags.iter().map(|(d, t)| (d.as_str(), *t)))
}

pub struct Oracle {
    defs: HashMap<String, Expr>,
    entry: Expr,
    pub ident_evals: u64,
    depth: usize,
}

const MAX_DEPTH: usize = 20_000;

fn collect(e: &Expr, defs: &mut HashMap<String, Expr>) {
    e.walk(&mut |n| {
        if let Expr::Where { defs: ds, .. } = n {
            for (name, body) in ds {
                defs.insert(name.clone(), body.clone());
            }
        }
    });
}

fn int(v: &Value) -> Result<i64, String> {
    match v {
        Value::Int(i) => Ok(*i),
        other => Err(format!("expected int, got {other:?}")),
    }
}

fn float(v: &Value) -> Option<f64> {
    match v {
        Value::Int(i) => Some(*i as f64),
        Value::Float(f) => Some(*f),
        _ => None,
    }
}

fn arith(op: BinOp, a: &Value, b: &Value) -> Result<Value, String> {
    use BinOp::*;
    match op {
        And | Or => match (a, b) {
            (Value::Bool(x), Value::Bool(y)) => Ok(Value::Bool(if op == And { *x && *y } else { *x || *y })),
            _ => Err("logic on non-bool".into()),
        },
        Lt | Le | Gt | Ge | Eq | Ne => {
            if let (Value::Bool(x), Value::Bool(y)) = (a, b) {
                return match op {
                    Eq => Ok(Value::Bool(x == y)),
                    Ne => Ok(Value::Bool(x != y)),
                    _ => Err("ordering on bool".into()),
                };
            }
            if let (Value::Int(x), Value::Int(y)) = (a, b) {
                let r = match op {
                    Lt => x < y,
                    Le => x <= y,
                    Gt => x > y,
                    Ge => x >= y,
                    Eq => x == y,
                    _ => x != y,
                };
                return Ok(Value::Bool(r));
            }
            let (x, y) = (float(a).ok_or("non-numeric")?, float(b).ok_or("non-numeric")?);
            let r = match op {
                Lt => x < y,
                Le => x <= y,
                Gt => x > y,
                Ge => x >= y,
                Eq => x == y,
                _ => x != y,
            };
            Ok(Value::Bool(r))
        }
        Add | Sub | Mul | Div | Rem => {
            if let (Value::Int(x), Value::Int(y)) = (a, b) {
                let r = match op {
                    Add => x.checked_add(*y),
                    Sub => x.checked_sub(*y),
                    Mul => x.checked_mul(*y),
                    Div if *y != 0 => x.checked_div(*y),
                    Rem if *y != 0 => x.checked_rem(*y),
                    _ => return Err("division by zero".into()),
                };
                return r.map(Value::Int).ok_or_else(|| "overflow".into());
            }
            let (x, y) = (float(a).ok_or("non-numeric")?, float(b).ok_or("non-numeric")?);
            if matches!(op, Div | Rem) && y == 0.0 {
                return Err("division by zero".into());
            }
            Ok(Value::Float(match op {
                Add => x + y,
                Sub => x - y,
                Mul => x * y,
                Div => x / y,
                _ => x % y,
            }))
        }
    }
}

fn procedure(name: &str, args: &[Value]) -> Result<Value, String> {
    match (name, args) {
        ("add", [a, b]) => arith(BinOp::Add, a, b),
        ("sub", [a, b]) => arith(BinOp::Sub, a, b),
        ("mul", [a, b]) => arith(BinOp::Mul, a, b),
        ("div", [a, b]) => arith(BinOp::Div, a, b),
        ("square", [a]) => arith(BinOp::Mul, a, a),
        ("neg", [a]) => arith(BinOp::Sub, &Value::Int(0), a),
        ("max", [a, b]) => Ok(if arith(BinOp::Lt, a, b)? == Value::Bool(true) { b.clone() } else { a.clone() }),
        ("min", [a, b]) => Ok(if arith(BinOp::Gt, a, b)? == Value::Bool(true) { b.clone() } else { a.clone() }),
        _ => Err(format!("no procedure {name}/{}", args.len())),
    }
}

impl Oracle {
    pub fn new(src: &str) -> Oracle {
        Oracle::from_expr(parse_program(src).expect("oracle program parses"))
    }

    pub fn from_expr(entry: Expr) -> Oracle {
        let mut defs = HashMap::new();
        collect(&entry, &mut defs);
        Oracle { defs, entry, ident_evals: 0, depth: 0 }
    }

    pub fn run(&mut self, at: &Tags) -> Result<Value, String> {
        let entry = self.entry.clone();
        self.eval(&entry, at)
    }

    pub fn ident_evals_at(mut self, at: &Tags) -> u64 {
        let _ = self.run(at);
        self.ident_evals
    }

    fn with(at: &Tags, dim: &str, tag: i64) -> Tags {
        let mut c = at.clone();
        c.insert(dim.to_owned(), tag);
        c
    }

    pub fn eval(&mut self, e: &Expr, at: &Tags) -> Result<Value, String> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            self.depth -= 1;
            return Err("too deep".into());
        }
        let r = self.eval_inner(e, at);
        self.depth -= 1;
        r
    }

    fn eval_inner(&mut self, e: &Expr, at: &Tags) -> Result<Value, String> {
        let tag = |d: &str| at.get(d).copied().unwrap_or(0);
        match e {
            Expr::Int(i) => Ok(Value::Int(*i)),
            Expr::Float(f) => Ok(Value::Float(*f)),
            Expr::Bool(b) => Ok(Value::Bool(*b)),
            Expr::HashDim(d) => Ok(Value::Int(tag(d))),
            Expr::Ident(name) => {
                self.ident_evals += 1;
                let body = self.defs.get(name).cloned().ok_or_else(|| format!("undefined {name}"))?;
                self.eval(&body, at)
            }
            Expr::Binary(op, l, r) => {
                let a = self.eval(l, at)?;
                let b = self.eval(r, at)?;
                arith(*op, &a, &b)
            }
            Expr::Unary(op, x) => match (op, self.eval(x, at)?) {
                (UnOp::Neg, Value::Int(i)) => i.checked_neg().map(Value::Int).ok_or_else(|| "overflow".into()),
                (UnOp::Neg, Value::Float(f)) => Ok(Value::Float(-f)),
                (UnOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                _ => Err("bad unary operand".into()),
            },
            Expr::If(c, t, f) => match self.eval(c, at)? {
                Value::Bool(true) => self.eval(t, at),
                Value::Bool(false) => self.eval(f, at),
                _ => Err("non-bool condition".into()),
            },
            Expr::At { expr, dim, tag: t } => {
                let k = int(&self.eval(t, at)?)?;
                self.eval(expr, &Self::with(at, dim, k))
            }
            Expr::Where { body, .. } => self.eval(body, at),
            Expr::Call(name, args) => {
                let vals = args.iter().map(|a| self.eval(a, at)).collect::<Result<Vec<_>, _>>()?;
                procedure(name, &vals)
            }
            Expr::First { dim, expr } => self.eval(expr, &Self::with(at, dim, 0)),
            Expr::Next { dim, expr } => {
                let k = tag(dim).checked_add(1).ok_or("overflow")?;
                self.eval(expr, &Self::with(at, dim, k))
            }
            Expr::Fby { dim, init, rest } => {
                let k = tag(dim);
                if k <= 0 {
                    self.eval(init, at)
                } else {
                    self.eval(rest, &Self::with(at, dim, k - 1))
                }
            }
        }
    }
}

pub fn oracle_value(src: &str, at: &Tags) -> Result<Value, String> {
    Oracle::new(src).run(at)
}

pub fn compiled(src: &str) -> Arc<Geer> {
    Arc::new(compile(src).expect("program compiles"))
}

pub fn desk(dwts: usize, seed: u64) -> Instance {
    let topo = Topology::desk(dwts);
    topo.boot(topo.config(seed), SECRET).expect("instance boots")
}

pub fn as_outcome(r: Result<Value, String>) -> Option<Value> {
    r.ok()
}

pub fn outcome_value(o: &Outcome) -> Option<Value> {
    match o {
        Outcome::Value(v) => Some(v.clone()),
        Outcome::Error { .. } => None,
    }
}

/// Desk instance whose workers also run the pipeline stages.
pub fn pipeline_desk(dwts: usize, seed: u64) -> Instance {
    let topo = Topology::desk(dwts);
    let mut config = topo.config(seed);
    config.procedures.extend(&eductive::pipeline::procedures());
    topo.boot(config, SECRET).expect("instance boots")
}

pub fn held_out_spec() -> eductive::pipeline::SynthSpec {
    eductive::pipeline::SynthSpec { seed: 2, per_subject: 4, noise: 0.05, ..Default::default() }
}

/// Held-out accuracy of the default configuration, computed with the
/// nearest-centroid oracle and frozen.
pub const HELD_OUT_ACCURACY: f64 = 1.0;
pub const HELD_OUT_FLOOR: f64 = 0.75;
