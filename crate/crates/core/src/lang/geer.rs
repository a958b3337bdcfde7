//! The compiled, source-independent program resource: a flat node table in
//! canonical preorder, the identifier dictionary and the dimension list.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::analyze::{IdentifierKind, SymbolReport};
use super::ast::{BinOp, Expr, UnOp};
use super::LangError;

pub const GEER_FORMAT_VERSION: u32 = 1;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    IntLit,
    FloatLit,
    BoolLit,
    Ident,
    BinOp,
    UnOp,
    If,
    At,
    HashDim,
    Where,
    ProcCall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    None,
    Int(i64),
    Float(f64),
    Bool(bool),
    Name(String),
    Operator(String),
    Where { dims: Vec<String>, defs: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AstNode {
    pub id: NodeId,
    pub op: Op,
    pub children: Vec<NodeId>,
    pub payload: Payload,
}

impl AstNode {
    pub fn name(&self) -> Option<&str> {
        match &self.payload {
            Payload::Name(n) => Some(n),
            _ => None,
        }
    }

    pub fn bin_op(&self) -> Option<BinOp> {
        match (&self.op, &self.payload) {
            (Op::BinOp, Payload::Operator(s)) => BinOp::from_symbol(s),
            _ => None,
        }
    }

    pub fn un_op(&self) -> Option<UnOp> {
        match (&self.op, &self.payload) {
            (Op::UnOp, Payload::Operator(s)) => UnOp::from_symbol(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifierEntry {
    pub name: String,
    pub kind: IdentifierKind,
    pub definition: Option<NodeId>,
}

/// 32 lowercase hex characters (128 bits of SHA-256).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeerId(pub String);

impl std::fmt::Display for GeerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geer {
    pub version: u32,
    pub geer_id: GeerId,
    pub dimensions: Vec<String>,
    pub dictionary: Vec<IdentifierEntry>,
    pub nodes: Vec<AstNode>,
    pub entry: NodeId,
}

impl Geer {
    pub fn node(&self, id: NodeId) -> Option<&AstNode> {
        self.nodes.get(id as usize)
    }

    pub fn lookup(&self, name: &str) -> Option<&IdentifierEntry> {
        self.dictionary.iter().find(|e| e.name == name)
    }

    pub fn definition_of(&self, name: &str) -> Option<NodeId> {
        self.lookup(name).and_then(|e| e.definition)
    }

    /// Node ids of every call to the named procedure.
    pub fn calls_to<'a>(&'a self, procedure: &'a str) -> impl Iterator<Item = NodeId> + 'a {
        self.nodes
            .iter()
            .filter(move |n| n.op == Op::ProcCall && n.name() == Some(procedure))
            .map(|n| n.id)
    }

    /// Canonical encoding: JSON with lexicographically sorted keys.
    pub fn encode(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("geer serializes");
        let mut out = serde_json::to_vec(&value).expect("json value serializes");
        out.push(b'\n');
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Geer, LangError> {
        let raw: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| LangError::Format(format!("invalid json: {e}")))?;
        let version = raw
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| LangError::Format("missing version".into()))?;
        if version != u64::from(GEER_FORMAT_VERSION) {
            return Err(LangError::Version(version));
        }
        let geer: Geer = serde_json::from_value(raw).map_err(|e| LangError::Format(e.to_string()))?;
        geer.validate()?;
        Ok(geer)
    }

    pub fn compute_id(&self) -> GeerId {
        let mut unsigned = self.clone();
        unsigned.geer_id = GeerId(String::new());
        let digest = Sha256::digest(unsigned.encode());
        GeerId(hex::encode(&digest[..16]))
    }

    /// Checks every structural invariant, including that `geer_id` matches
    /// the content.
    pub fn validate(&self) -> Result<(), LangError> {
        let fail = |m: String| Err(LangError::Format(m));
        let n = self.nodes.len();
        if self.entry as usize >= n {
            return fail(format!("entry node {} does not exist", self.entry));
        }
        let mut names = BTreeSet::new();
        for e in &self.dictionary {
            if !names.insert(e.name.as_str()) {
                return fail(format!("duplicate dictionary name {}", e.name));
            }
            match (e.kind, e.definition) {
                (IdentifierKind::Intensional, Some(d)) if (d as usize) < n => {}
                (IdentifierKind::Intensional, _) => return fail(format!("{} has no valid definition", e.name)),
                (_, Some(_)) => return fail(format!("{} must not carry a definition", e.name)),
                (IdentifierKind::Dimension, None) if !self.dimensions.contains(&e.name) => {
                    return fail(format!("dimension {} missing from dimension list", e.name))
                }
                _ => {}
            }
        }
        let dims: BTreeSet<&str> = self.dimensions.iter().map(String::as_str).collect();
        if dims.len() != self.dimensions.len() {
            return fail("duplicate dimension".into());
        }
        for d in &self.dimensions {
            if self.lookup(d).map(|e| e.kind) != Some(IdentifierKind::Dimension) {
                return fail(format!("dimension {d} missing from dictionary"));
            }
        }
        let mut parent_count = vec![0usize; n];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id as usize != i {
                return fail(format!("node at index {i} has id {}", node.id));
            }
            for &c in &node.children {
                if c as usize >= n || c <= node.id {
                    return fail(format!("node {} has invalid child {c}", node.id));
                }
                parent_count[c as usize] += 1;
            }
            self.validate_node(node)?;
        }
        for (i, count) in parent_count.iter().enumerate() {
            let expected = usize::from(i as NodeId != self.entry);
            if *count != expected {
                return fail(format!("node {i} has {count} parents"));
            }
        }
        if self.geer_id != self.compute_id() {
            return fail("geer_id does not match content".into());
        }
        Ok(())
    }

    fn validate_node(&self, node: &AstNode) -> Result<(), LangError> {
        let arity = node.children.len();
        let bad = |what: &str| Err(LangError::Format(format!("node {}: {what}", node.id)));
        let ok = match (&node.op, &node.payload) {
            (Op::IntLit, Payload::Int(_)) | (Op::BoolLit, Payload::Bool(_)) => arity == 0,
            (Op::FloatLit, Payload::Float(v)) => arity == 0 && v.is_finite(),
            (Op::Ident, Payload::Name(name)) => {
                if self.lookup(name).is_none() {
                    return bad(&format!("identifier {name} not in dictionary"));
                }
                arity == 0
            }
            (Op::HashDim, Payload::Name(d)) => {
                if !self.dimensions.contains(d) {
                    return bad(&format!("dimension {d} not declared"));
                }
                arity == 0
            }
            (Op::BinOp, Payload::Operator(s)) => arity == 2 && BinOp::from_symbol(s).is_some(),
            (Op::UnOp, Payload::Operator(s)) => arity == 1 && UnOp::from_symbol(s).is_some(),
            (Op::If, Payload::None) => arity == 3,
            (Op::At, Payload::None) => {
                if arity != 3 {
                    return bad("@ needs 3 children");
                }
                let dim = self.node(node.children[1]);
                match dim {
                    Some(d) if d.op == Op::Ident && d.name().is_some_and(|n| self.dimensions.iter().any(|x| x == n)) => true,
                    _ => return bad("@ dimension operand is not a declared dimension"),
                }
            }
            (Op::Where, Payload::Where { dims, defs }) => {
                dims.iter().all(|d| self.dimensions.contains(d)) && arity == defs.len() + 1
            }
            (Op::ProcCall, Payload::Name(name)) => {
                self.lookup(name).map(|e| e.kind) == Some(IdentifierKind::Procedural)
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            bad("malformed node")
        }
    }

    /// Dataflow graph: AST edges plus dashed identifier-to-definition edges.
    pub fn to_dot(&self) -> String {
        let mut out = format!("digraph \"geer_{}\" {{\n  node [shape=box];\n", self.geer_id);
        for node in &self.nodes {
            let label = match &node.payload {
                Payload::None => format!("{:?}", node.op),
                Payload::Int(v) => v.to_string(),
                Payload::Float(v) => format!("{v:?}"),
                Payload::Bool(v) => v.to_string(),
                Payload::Name(n) if node.op == Op::HashDim => format!("#{n}"),
                Payload::Name(n) if node.op == Op::ProcCall => format!("{n}()"),
                Payload::Name(n) => n.clone(),
                Payload::Operator(s) => s.clone(),
                Payload::Where { dims, defs } => format!("where [{}] {}", dims.join(","), defs.join(",")),
            };
            writeln!(out, "  n{} [label=\"{}\"];", node.id, label.replace('"', "\\\"")).unwrap();
        }
        for node in &self.nodes {
            for (i, c) in node.children.iter().enumerate() {
                writeln!(out, "  n{} -> n{c} [label=\"{i}\"];", node.id).unwrap();
            }
        }
        for node in &self.nodes {
            if node.op == Op::Ident {
                if let Some(def) = node.name().and_then(|n| self.definition_of(n)) {
                    writeln!(out, "  n{} -> n{def} [style=dashed, constraint=false];", node.id).unwrap();
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Flattens a desugared, analyzed tree into a Geer. Node ids follow preorder
/// traversal, so the result depends only on the tree.
pub fn generate_geer(core: &Expr, symbols: &SymbolReport) -> Result<Geer, LangError> {
    let mut g = Flattener::default();
    g.visit(core)?;
    let dictionary = symbols
        .symbols
        .iter()
        .map(|(name, kind)| {
            let definition = match kind {
                IdentifierKind::Intensional => Some(
                    *g.defs.get(name).ok_or_else(|| LangError::UndefinedIdentifier(name.clone()))?,
                ),
                _ => None,
            };
            Ok(IdentifierEntry { name: name.clone(), kind: *kind, definition })
        })
        .collect::<Result<Vec<_>, LangError>>()?;
    let mut geer = Geer {
        version: GEER_FORMAT_VERSION,
        geer_id: GeerId(String::new()),
        dimensions: g.dims,
        dictionary,
        nodes: g.nodes,
        entry: 0,
    };
    geer.geer_id = geer.compute_id();
    geer.validate()?;
    Ok(geer)
}

#[derive(Default)]
struct Flattener {
    nodes: Vec<AstNode>,
    defs: BTreeMap<String, NodeId>,
    dims: Vec<String>,
}

impl Flattener {
    fn push(&mut self, op: Op, payload: Payload) -> NodeId {
        let id = self.nodes.len() as NodeId;
        self.nodes.push(AstNode { id, op, children: Vec::new(), payload });
        id
    }

    fn child(&mut self, parent: NodeId, e: &Expr) -> Result<(), LangError> {
        let c = self.visit(e)?;
        self.nodes[parent as usize].children.push(c);
        Ok(())
    }

    fn visit(&mut self, e: &Expr) -> Result<NodeId, LangError> {
        Ok(match e {
            Expr::Int(v) => self.push(Op::IntLit, Payload::Int(*v)),
            Expr::Float(v) => self.push(Op::FloatLit, Payload::Float(*v)),
            Expr::Bool(v) => self.push(Op::BoolLit, Payload::Bool(*v)),
            Expr::Ident(n) => self.push(Op::Ident, Payload::Name(n.clone())),
            Expr::HashDim(d) => self.push(Op::HashDim, Payload::Name(d.clone())),
            Expr::Binary(op, l, r) => {
                let id = self.push(Op::BinOp, Payload::Operator(op.symbol().into()));
                self.child(id, l)?;
                self.child(id, r)?;
                id
            }
            Expr::Unary(op, x) => {
                let id = self.push(Op::UnOp, Payload::Operator(op.symbol().into()));
                self.child(id, x)?;
                id
            }
            Expr::If(c, t, f) => {
                let id = self.push(Op::If, Payload::None);
                self.child(id, c)?;
                self.child(id, t)?;
                self.child(id, f)?;
                id
            }
            Expr::At { expr, dim, tag } => {
                let id = self.push(Op::At, Payload::None);
                self.child(id, expr)?;
                self.child(id, &Expr::Ident(dim.clone()))?;
                self.child(id, tag)?;
                id
            }
            Expr::Call(name, args) => {
                let id = self.push(Op::ProcCall, Payload::Name(name.clone()));
                for a in args {
                    self.child(id, a)?;
                }
                id
            }
            Expr::Where { body, dims, defs } => {
                let id = self.push(
                    Op::Where,
                    Payload::Where { dims: dims.clone(), defs: defs.iter().map(|(n, _)| n.clone()).collect() },
                );
                self.dims.extend(dims.iter().cloned());
                self.child(id, body)?;
                for (name, def) in defs {
                    let def_id = self.nodes.len() as NodeId;
                    self.defs.insert(name.clone(), def_id);
                    self.child(id, def)?;
                }
                id
            }
            Expr::First { .. } | Expr::Next { .. } | Expr::Fby { .. } => return Err(LangError::SugarNotExpanded),
        })
    }
}
