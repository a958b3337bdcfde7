use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::eval::apply_binary;
use crate::lang::BinOp;
use crate::value::Value;

pub type Procedure = Arc<dyn Fn(&[Value]) -> Result<Value, String> + Send + Sync>;

/// Name-to-function table consulted by workers (and by the evaluator in
/// local mode).
#[derive(Clone, Default)]
pub struct ProcedureTable {
    procs: BTreeMap<String, Procedure>,
}

impl fmt::Debug for ProcedureTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.procs.keys()).finish()
    }
}

fn arity(name: &str, args: &[Value], n: usize) -> Result<(), String> {
    if args.len() == n {
        Ok(())
    } else {
        Err(format!("{name} expects {n} arguments, got {}", args.len()))
    }
}

fn binary(name: &'static str, op: BinOp) -> Procedure {
    Arc::new(move |args: &[Value]| {
        arity(name, args, 2)?;
        apply_binary(op, &args[0], &args[1]).map_err(|e| e.to_string())
    })
}

impl ProcedureTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Arithmetic helpers available to every program.
    pub fn standard() -> Self {
        let mut t = ProcedureTable::new();
        t.insert_arc("add", binary("add", BinOp::Add));
        t.insert_arc("sub", binary("sub", BinOp::Sub));
        t.insert_arc("mul", binary("mul", BinOp::Mul));
        t.insert_arc("div", binary("div", BinOp::Div));
        t.insert("square", |args| {
            arity("square", args, 1)?;
            apply_binary(BinOp::Mul, &args[0], &args[0]).map_err(|e| e.to_string())
        });
        t.insert("neg", |args| {
            arity("neg", args, 1)?;
            apply_binary(BinOp::Sub, &Value::Int(0), &args[0]).map_err(|e| e.to_string())
        });
        t.insert("max", |args| {
            arity("max", args, 2)?;
            let greater = apply_binary(BinOp::Lt, &args[0], &args[1]).map_err(|e| e.to_string())?;
            Ok(if greater == Value::Bool(true) { args[1].clone() } else { args[0].clone() })
        });
        t.insert("min", |args| {
            arity("min", args, 2)?;
            let greater = apply_binary(BinOp::Gt, &args[0], &args[1]).map_err(|e| e.to_string())?;
            Ok(if greater == Value::Bool(true) { args[1].clone() } else { args[0].clone() })
        });
        t
    }

    pub fn insert(&mut self, name: &str, f: impl Fn(&[Value]) -> Result<Value, String> + Send + Sync + 'static) {
        self.procs.insert(name.to_owned(), Arc::new(f));
    }

    pub fn insert_arc(&mut self, name: &str, f: Procedure) {
        self.procs.insert(name.to_owned(), f);
    }

    pub fn get(&self, name: &str) -> Option<&Procedure> {
        self.procs.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.procs.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.procs.keys().map(String::as_str)
    }

    /// Merges `other` into `self`; entries in `other` win.
    pub fn extend(&mut self, other: &ProcedureTable) {
        for (k, v) in &other.procs {
            self.procs.insert(k.clone(), v.clone());
        }
    }
}
