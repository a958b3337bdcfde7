//! Surface syntax tree. The same type carries desugared core programs; the
//! sugar variants (`First`, `Next`, `Fby`) simply no longer occur.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    pub fn from_symbol(s: &str) -> Option<BinOp> {
        const ALL: [BinOp; 13] = [
            BinOp::Add,
            BinOp::Sub,
            BinOp::Mul,
            BinOp::Div,
            BinOp::Rem,
            BinOp::Lt,
            BinOp::Le,
            BinOp::Gt,
            BinOp::Ge,
            BinOp::Eq,
            BinOp::Ne,
            BinOp::And,
            BinOp::Or,
        ];
        ALL.into_iter().find(|op| op.symbol() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Not,
}

impl UnOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnOp::Neg => "-",
            UnOp::Not => "!",
        }
    }

    pub fn from_symbol(s: &str) -> Option<UnOp> {
        match s {
            "-" => Some(UnOp::Neg),
            "!" => Some(UnOp::Not),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Float(f64),
    Bool(bool),
    Ident(String),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Unary(UnOp, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    At { expr: Box<Expr>, dim: String, tag: Box<Expr> },
    HashDim(String),
    Where { body: Box<Expr>, dims: Vec<String>, defs: Vec<(String, Expr)> },
    Call(String, Vec<Expr>),
    First { dim: String, expr: Box<Expr> },
    Next { dim: String, expr: Box<Expr> },
    Fby { dim: String, init: Box<Expr>, rest: Box<Expr> },
}

impl Expr {
    pub fn binary(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn at(expr: Expr, dim: impl Into<String>, tag: Expr) -> Expr {
        Expr::At { expr: Box::new(expr), dim: dim.into(), tag: Box::new(tag) }
    }

    pub fn is_sugar(&self) -> bool {
        matches!(self, Expr::First { .. } | Expr::Next { .. } | Expr::Fby { .. })
    }

    /// True if this node or any descendant is a sugar form.
    pub fn contains_sugar(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| found |= e.is_sugar());
        found
    }

    pub fn walk(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Int(_) | Expr::Float(_) | Expr::Bool(_) | Expr::Ident(_) | Expr::HashDim(_) => {}
            Expr::Binary(_, l, r) => {
                l.walk(f);
                r.walk(f);
            }
            Expr::Unary(_, e) | Expr::First { expr: e, .. } | Expr::Next { expr: e, .. } => e.walk(f),
            Expr::If(c, t, e) => {
                c.walk(f);
                t.walk(f);
                e.walk(f);
            }
            Expr::At { expr, tag, .. } => {
                expr.walk(f);
                tag.walk(f);
            }
            Expr::Where { body, defs, .. } => {
                body.walk(f);
                for (_, d) in defs {
                    d.walk(f);
                }
            }
            Expr::Call(_, args) => {
                for a in args {
                    a.walk(f);
                }
            }
            Expr::Fby { init, rest, .. } => {
                init.walk(f);
                rest.walk(f);
            }
        }
    }
}

/// Fully parenthesized rendering; `parse_program(&e.to_string())` yields `e`
/// back for any tree the parser can produce.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(v) if *v < 0 => write!(f, "(-{})", v.unsigned_abs()),
            Expr::Int(v) => write!(f, "{v}"),
            Expr::Float(v) => {
                let text = v.to_string();
                if text.contains('.') {
                    write!(f, "{text}")
                } else {
                    write!(f, "{text}.0")
                }
            }
            Expr::Bool(v) => write!(f, "{v}"),
            Expr::Ident(n) => write!(f, "{n}"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Unary(op, e) => write!(f, "({}{e})", op.symbol()),
            Expr::If(c, t, e) => write!(f, "(if {c} then {t} else {e})"),
            Expr::At { expr, dim, tag } => write!(f, "({expr} @ {dim}:{tag})"),
            Expr::HashDim(d) => write!(f, "#{d}"),
            Expr::Where { body, dims, defs } => {
                write!(f, "({body} where")?;
                if !dims.is_empty() {
                    write!(f, " dimension {};", dims.join(", "))?;
                }
                for (name, def) in defs {
                    write!(f, " {name} = {def};")?;
                }
                write!(f, " end)")
            }
            Expr::Call(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Expr::First { dim, expr } => write!(f, "(first.{dim} {expr})"),
            Expr::Next { dim, expr } => write!(f, "(next.{dim} {expr})"),
            Expr::Fby { dim, init, rest } => write!(f, "({init} fby.{dim} {rest})"),
        }
    }
}
