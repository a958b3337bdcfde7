use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::Expr;
use super::LangError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentifierKind {
    Intensional,
    Procedural,
    Dimension,
}

/// Result of semantic analysis: every name in the program with its kind.
/// Names are unique program-wide, so a name alone identifies its binding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolReport {
    pub symbols: BTreeMap<String, IdentifierKind>,
}

impl SymbolReport {
    pub fn kind_of(&self, name: &str) -> Option<IdentifierKind> {
        self.symbols.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct Diagnostics(pub Vec<LangError>);

/// Resolves identifiers against lexical `where` scopes. Expects a desugared
/// tree; sugar forms are reported as errors.
pub fn analyze(e: &Expr) -> Result<SymbolReport, Diagnostics> {
    let mut a = Analyzer::default();
    a.visit(e);
    if a.errors.is_empty() {
        Ok(SymbolReport { symbols: a.symbols })
    } else {
        Err(Diagnostics(a.errors))
    }
}

#[derive(Default)]
struct Scope {
    defs: Vec<String>,
    dims: Vec<String>,
}

#[derive(Default)]
struct Analyzer {
    scopes: Vec<Scope>,
    symbols: BTreeMap<String, IdentifierKind>,
    errors: Vec<LangError>,
}

impl Analyzer {
    fn error(&mut self, e: LangError) {
        if !self.errors.contains(&e) {
            self.errors.push(e);
        }
    }

    fn visible_def(&self, name: &str) -> bool {
        self.scopes.iter().any(|s| s.defs.iter().any(|d| d == name))
    }

    fn visible_dim(&self, name: &str) -> bool {
        self.scopes.iter().any(|s| s.dims.iter().any(|d| d == name))
    }

    fn declare(&mut self, name: &str, kind: IdentifierKind) {
        match self.symbols.get(name) {
            None => {
                self.symbols.insert(name.to_owned(), kind);
            }
            Some(IdentifierKind::Dimension) if kind == IdentifierKind::Dimension => {
                self.error(LangError::DimensionShadowing(name.to_owned()))
            }
            Some(IdentifierKind::Procedural) if kind == IdentifierKind::Procedural => {}
            Some(_) => self.error(LangError::DuplicateDefinition(name.to_owned())),
        }
    }

    fn check_dim(&mut self, dim: &str) {
        if !self.visible_dim(dim) {
            self.error(LangError::UnknownDimension(dim.to_owned()));
        }
    }

    fn visit(&mut self, e: &Expr) {
        match e {
            Expr::Int(_) | Expr::Float(_) | Expr::Bool(_) => {}
            Expr::Ident(name) => {
                if self.visible_def(name) {
                } else if self.visible_dim(name) {
                    self.error(LangError::MisusedDimension(name.clone()));
                } else {
                    self.error(LangError::UndefinedIdentifier(name.clone()));
                }
            }
            Expr::HashDim(d) => self.check_dim(d),
            Expr::Binary(_, l, r) => {
                self.visit(l);
                self.visit(r);
            }
            Expr::Unary(_, x) => self.visit(x),
            Expr::If(c, t, f) => {
                self.visit(c);
                self.visit(t);
                self.visit(f);
            }
            Expr::At { expr, dim, tag } => {
                self.visit(expr);
                self.check_dim(dim);
                self.visit(tag);
            }
            Expr::Call(name, args) => {
                self.declare(name, IdentifierKind::Procedural);
                for a in args {
                    self.visit(a);
                }
            }
            Expr::Where { body, dims, defs } => {
                for d in dims {
                    self.declare(d, IdentifierKind::Dimension);
                }
                let mut scope = Scope { dims: dims.clone(), defs: Vec::new() };
                for (name, _) in defs {
                    if scope.defs.contains(name) {
                        self.error(LangError::DuplicateDefinition(name.clone()));
                    } else {
                        self.declare(name, IdentifierKind::Intensional);
                        scope.defs.push(name.clone());
                    }
                }
                self.scopes.push(scope);
                self.visit(body);
                for (_, def) in defs {
                    self.visit(def);
                }
                self.scopes.pop();
            }
            Expr::First { .. } | Expr::Next { .. } | Expr::Fby { .. } => {
                self.error(LangError::SugarNotExpanded);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{desugar, parse_program};

    fn run(src: &str) -> Result<SymbolReport, Diagnostics> {
        analyze(&desugar(&parse_program(src).unwrap()).unwrap())
    }

    #[test]
    fn naturals_symbols() {
        let r = run("N where dimension t; N = 0 fby.t (N+1); end").unwrap();
        assert_eq!(r.kind_of("N"), Some(IdentifierKind::Intensional));
        assert_eq!(r.kind_of("t"), Some(IdentifierKind::Dimension));
        assert_eq!(r.symbols.len(), 2);
    }

    #[test]
    fn free_identifier() {
        assert_eq!(run("X + 1").unwrap_err().0, [LangError::UndefinedIdentifier("X".into())]);
    }

    #[test]
    fn duplicate_definition() {
        let err = run("N where N = 1; N = 2; end").unwrap_err();
        assert_eq!(err.0, [LangError::DuplicateDefinition("N".into())]);
    }

    #[test]
    fn dimension_shadowing() {
        let err = run("X where dimension t; X = (Y where dimension t; Y = #t; end); end").unwrap_err();
        assert_eq!(err.0, [LangError::DimensionShadowing("t".into())]);
    }

    #[test]
    fn procedures_are_resolved_by_call_syntax() {
        let r = run("add(1, sq(2)) + add(3, 4)").unwrap();
        assert_eq!(r.kind_of("add"), Some(IdentifierKind::Procedural));
        assert_eq!(r.kind_of("sq"), Some(IdentifierKind::Procedural));
    }

    #[test]
    fn procedure_name_clashing_with_definition() {
        let err = run("f(1) where f = 2; end").unwrap_err();
        assert_eq!(err.0, [LangError::DuplicateDefinition("f".into())]);
    }

    #[test]
    fn dimension_used_as_value() {
        let err = run("t where dimension t; end").unwrap_err();
        assert_eq!(err.0, [LangError::MisusedDimension("t".into())]);
    }

    #[test]
    fn definitions_are_lexically_scoped() {
        let err = run("(A where A = 1; end) + A").unwrap_err();
        assert_eq!(err.0, [LangError::UndefinedIdentifier("A".into())]);
        assert!(run("A where A = B where B = A; end; end").is_ok());
    }
}
