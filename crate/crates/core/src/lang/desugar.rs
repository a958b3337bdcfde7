//! Rewrites the specific-language operators into the generic core:
//!
//! ```text
//! first.d X      =>  X @ d:0
//! next.d X       =>  X @ d:(#d + 1)
//! X fby.d Y      =>  if #d <= 0 then X else (Y @ d:(#d - 1))
//! ```

use super::ast::{BinOp, Expr};
use super::LangError;

pub fn desugar(e: &Expr) -> Result<Expr, LangError> {
    let mut scope = Vec::new();
    rewrite(e, &mut scope)
}

fn check_dim(dim: &str, scope: &[String]) -> Result<(), LangError> {
    if scope.iter().any(|d| d == dim) {
        Ok(())
    } else {
        Err(LangError::UnknownDimension(dim.to_owned()))
    }
}

fn shifted(dim: &str, op: BinOp) -> Expr {
    Expr::binary(op, Expr::HashDim(dim.to_owned()), Expr::Int(1))
}

fn rewrite(e: &Expr, scope: &mut Vec<String>) -> Result<Expr, LangError> {
    let bx = |e: Expr| Box::new(e);
    Ok(match e {
        Expr::Int(_) | Expr::Float(_) | Expr::Bool(_) | Expr::Ident(_) | Expr::HashDim(_) => e.clone(),
        Expr::Binary(op, l, r) => Expr::Binary(*op, bx(rewrite(l, scope)?), bx(rewrite(r, scope)?)),
        Expr::Unary(op, x) => Expr::Unary(*op, bx(rewrite(x, scope)?)),
        Expr::If(c, t, f) => Expr::If(bx(rewrite(c, scope)?), bx(rewrite(t, scope)?), bx(rewrite(f, scope)?)),
        Expr::At { expr, dim, tag } => Expr::At {
            expr: bx(rewrite(expr, scope)?),
            dim: dim.clone(),
            tag: bx(rewrite(tag, scope)?),
        },
        Expr::Call(name, args) => {
            Expr::Call(name.clone(), args.iter().map(|a| rewrite(a, scope)).collect::<Result<_, _>>()?)
        }
        Expr::Where { body, dims, defs } => {
            let mark = scope.len();
            scope.extend(dims.iter().cloned());
            let result = (|| {
                let body = rewrite(body, scope)?;
                let defs = defs
                    .iter()
                    .map(|(n, d)| Ok((n.clone(), rewrite(d, scope)?)))
                    .collect::<Result<Vec<_>, LangError>>()?;
                Ok(Expr::Where { body: bx(body), dims: dims.clone(), defs })
            })();
            scope.truncate(mark);
            result?
        }
        Expr::First { dim, expr } => {
            check_dim(dim, scope)?;
            Expr::at(rewrite(expr, scope)?, dim.clone(), Expr::Int(0))
        }
        Expr::Next { dim, expr } => {
            check_dim(dim, scope)?;
            Expr::at(rewrite(expr, scope)?, dim.clone(), shifted(dim, BinOp::Add))
        }
        Expr::Fby { dim, init, rest } => {
            check_dim(dim, scope)?;
            let cond = Expr::binary(BinOp::Le, Expr::HashDim(dim.clone()), Expr::Int(0));
            let prev = Expr::at(rewrite(rest, scope)?, dim.clone(), shifted(dim, BinOp::Sub));
            Expr::If(bx(cond), bx(rewrite(init, scope)?), bx(prev))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;

    fn core_of(src: &str) -> String {
        desugar(&parse_program(src).unwrap()).unwrap().to_string()
    }

    #[test]
    fn first_rewrites_to_at_zero() {
        assert_eq!(core_of("first.t X where dimension t; X = #t; end"), "((X @ t:0) where dimension t; X = #t; end)");
    }

    #[test]
    fn next_rewrites_to_at_successor() {
        assert_eq!(
            core_of("next.t X where dimension t; X = #t; end"),
            "((X @ t:(#t + 1)) where dimension t; X = #t; end)"
        );
    }

    #[test]
    fn fby_rewrites_to_conditional() {
        assert_eq!(
            core_of("N where dimension t; N = 0 fby.t (N + 1); end"),
            "(N where dimension t; N = (if (#t <= 0) then 0 else ((N + 1) @ t:(#t - 1))); end)"
        );
    }

    #[test]
    fn core_nodes_are_unchanged() {
        assert_eq!(desugar(&Expr::Int(7)).unwrap(), Expr::Int(7));
        let e = parse_program("a(1) + -2 * 3").unwrap();
        assert_eq!(desugar(&e).unwrap(), e);
    }

    #[test]
    fn output_contains_no_sugar() {
        let e = parse_program("X where dimension t, s; X = first.s (1 fby.t next.s next.t #t); end").unwrap();
        assert!(e.contains_sugar());
        assert!(!desugar(&e).unwrap().contains_sugar());
    }

    #[test]
    fn undeclared_dimension_is_rejected() {
        let e = parse_program("first.t 1").unwrap();
        assert_eq!(desugar(&e), Err(LangError::UnknownDimension("t".into())));
        // a dimension is only visible inside its own where clause
        let e = parse_program("(X where dimension t; X = 1; end) + next.t 2").unwrap();
        assert_eq!(desugar(&e), Err(LangError::UnknownDimension("t".into())));
    }
}
