//! Compiler front-end: surface parser, sugar expansion, semantic analysis
//! and Geer generation.

mod analyze;
mod ast;
mod desugar;
mod geer;
mod lexer;
mod parser;

pub use analyze::{analyze, Diagnostics, IdentifierKind, SymbolReport};
pub use ast::{BinOp, Expr, UnOp};
pub use desugar::desugar;
pub use geer::{generate_geer, AstNode, Geer, GeerId, IdentifierEntry, NodeId, Op, Payload, GEER_FORMAT_VERSION};
pub use parser::parse_program;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LangError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("undefined identifier `{0}`")]
    UndefinedIdentifier(String),
    #[error("duplicate definition of `{0}`")]
    DuplicateDefinition(String),
    #[error("dimension `{0}` is already declared")]
    DimensionShadowing(String),
    #[error("dimension `{0}` used as a value (use #{0})")]
    MisusedDimension(String),
    #[error("sugar form reached a core-only phase")]
    SugarNotExpanded,
    #[error("semantic errors: {0}")]
    Semantic(Diagnostics),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported geer version {0}")]
    Version(u64),
}

impl LangError {
    pub fn is_syntax(&self) -> bool {
        matches!(self, LangError::Syntax { .. })
    }

    /// 1-based source line the error points at. Semantic errors carry no
    /// position, so the offending name is searched for: the second
    /// definition or declaration for duplicates, the first use otherwise.
    pub fn line_in(&self, source: &str) -> Option<usize> {
        let hits = |name: &str, defining: bool| -> Vec<usize> {
            let ident = |c: u8| c.is_ascii_alphanumeric() || c == b'_';
            let mut out = Vec::new();
            for (i, line) in source.lines().enumerate() {
                let b = line.as_bytes();
                for (at, _) in line.match_indices(name) {
                    let end = at + name.len();
                    if (at > 0 && ident(b[at - 1])) || (end < b.len() && ident(b[end])) {
                        continue;
                    }
                    let rest = line[end..].trim_start();
                    let before = line[..at].trim_end();
                    let is_def = (rest.starts_with('=') && !rest.starts_with("=="))
                        || before.ends_with("dimension")
                        || before.ends_with(',');
                    if !defining || is_def {
                        out.push(i + 1);
                    }
                }
            }
            out
        };
        match self {
            LangError::Syntax { line, .. } => Some(*line),
            LangError::DuplicateDefinition(n) | LangError::DimensionShadowing(n) => {
                let h = hits(n, true);
                h.get(1).or(h.first()).copied().or_else(|| hits(n, false).first().copied())
            }
            LangError::UnknownDimension(n) | LangError::UndefinedIdentifier(n) | LangError::MisusedDimension(n) => {
                hits(n, false).first().copied()
            }
            LangError::Semantic(d) => d.0.iter().find_map(|e| e.line_in(source)),
            _ => None,
        }
    }
}

/// Source text to Geer: parse, desugar, analyze, generate.
pub fn compile(source: &str) -> Result<Geer, LangError> {
    let surface = parse_program(source)?;
    let core = desugar(&surface)?;
    let symbols = analyze(&core).map_err(|d| match <[LangError; 1]>::try_from(d.0) {
        Ok([single]) => single,
        Err(many) => LangError::Semantic(Diagnostics(many)),
    })?;
    generate_geer(&core, &symbols)
}
