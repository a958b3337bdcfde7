//! Recursive-descent parser for the surface language.
//!
//! Precedence, loosest first: `where` (postfix clause), `fby.d` (right
//! associative), `||`, `&&`, `== !=`, `< <= > >=`, `+ -`, `* / %`, prefix
//! `- ! first.d next.d`, postfix `@ d:E`. The tag of `@` binds like a prefix
//! operand, so `X @ t:#t + 1` reads as `(X @ t:#t) + 1`.

use super::ast::{BinOp, Expr, UnOp};
use super::lexer::{tokenize, Tok, Token};
use super::LangError;

const MAX_NESTING: usize = 256;

fn binary_op(tok: &Tok) -> Option<(BinOp, u8)> {
    Some(match tok {
        Tok::OrOr => (BinOp::Or, 0),
        Tok::AndAnd => (BinOp::And, 1),
        Tok::EqEq => (BinOp::Eq, 2),
        Tok::Ne => (BinOp::Ne, 2),
        Tok::Lt => (BinOp::Lt, 3),
        Tok::Le => (BinOp::Le, 3),
        Tok::Gt => (BinOp::Gt, 3),
        Tok::Ge => (BinOp::Ge, 3),
        Tok::Plus => (BinOp::Add, 4),
        Tok::Minus => (BinOp::Sub, 4),
        Tok::Star => (BinOp::Mul, 5),
        Tok::Slash => (BinOp::Div, 5),
        Tok::Percent => (BinOp::Rem, 5),
        _ => return None,
    })
}

pub fn parse_program(src: &str) -> Result<Expr, LangError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0, depth: 0 };
    let e = p.expr()?;
    p.expect(Tok::Eof)?;
    Ok(e)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> LangError {
        let t = &self.tokens[self.pos];
        LangError::Syntax { line: t.line, col: t.col, message: message.into() }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), LangError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected {}, found {}", tok.describe(), self.peek().describe())))
        }
    }

    fn ident(&mut self) -> Result<String, LangError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok(name)
            }
            other => Err(self.error(format!("expected identifier, found {}", other.describe()))),
        }
    }

    fn enter(&mut self) -> Result<(), LangError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            Err(self.error(format!("expression nesting exceeds {MAX_NESTING} levels")))
        } else {
            Ok(())
        }
    }

    fn expr(&mut self) -> Result<Expr, LangError> {
        self.enter()?;
        let mut e = self.fby()?;
        while *self.peek() == Tok::Where {
            self.bump();
            e = self.where_clause(e)?;
        }
        self.depth -= 1;
        Ok(e)
    }

    fn where_clause(&mut self, body: Expr) -> Result<Expr, LangError> {
        let mut dims = Vec::new();
        let mut defs = Vec::new();
        loop {
            match self.peek() {
                Tok::End => {
                    self.bump();
                    break;
                }
                Tok::Dimension => {
                    self.bump();
                    dims.push(self.ident()?);
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        dims.push(self.ident()?);
                    }
                    self.expect(Tok::Semi)?;
                }
                Tok::Ident(_) => {
                    let name = self.ident()?;
                    self.expect(Tok::Assign)?;
                    let def = self.expr()?;
                    self.expect(Tok::Semi)?;
                    defs.push((name, def));
                }
                other => {
                    return Err(self.error(format!(
                        "expected `dimension`, a definition or `end` in where clause, found {}",
                        other.describe()
                    )))
                }
            }
        }
        Ok(Expr::Where { body: Box::new(body), dims, defs })
    }

    fn dim_suffix(&mut self) -> Result<String, LangError> {
        self.expect(Tok::Dot)?;
        self.ident()
    }

    fn fby(&mut self) -> Result<Expr, LangError> {
        let lhs = self.binary(0)?;
        if *self.peek() == Tok::Fby {
            self.bump();
            let dim = self.dim_suffix()?;
            self.enter()?;
            let rhs = self.fby()?;
            self.depth -= 1;
            return Ok(Expr::Fby { dim, init: Box::new(lhs), rest: Box::new(rhs) });
        }
        Ok(lhs)
    }

    /// Precedence climbing over the left-associative binary operators.
    fn binary(&mut self, min_level: u8) -> Result<Expr, LangError> {
        let mut lhs = self.unary()?;
        while let Some((op, level)) = binary_op(self.peek()).filter(|(_, l)| *l >= min_level) {
            self.bump();
            let rhs = self.binary(level + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, LangError> {
        self.enter()?;
        let e = match self.peek() {
            Tok::Minus => {
                self.bump();
                Expr::Unary(UnOp::Neg, Box::new(self.unary()?))
            }
            Tok::Bang => {
                self.bump();
                Expr::Unary(UnOp::Not, Box::new(self.unary()?))
            }
            Tok::First => {
                self.bump();
                let dim = self.dim_suffix()?;
                Expr::First { dim, expr: Box::new(self.unary()?) }
            }
            Tok::Next => {
                self.bump();
                let dim = self.dim_suffix()?;
                Expr::Next { dim, expr: Box::new(self.unary()?) }
            }
            _ => self.postfix()?,
        };
        self.depth -= 1;
        Ok(e)
    }

    fn postfix(&mut self) -> Result<Expr, LangError> {
        let mut e = self.primary()?;
        while *self.peek() == Tok::At {
            self.bump();
            let dim = self.ident()?;
            self.expect(Tok::Colon)?;
            let tag = self.unary()?;
            e = Expr::at(e, dim, tag);
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, LangError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Float(v))
            }
            Tok::True => {
                self.bump();
                Ok(Expr::Bool(true))
            }
            Tok::False => {
                self.bump();
                Ok(Expr::Bool(false))
            }
            Tok::Hash => {
                self.bump();
                Ok(Expr::HashDim(self.ident()?))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::If => {
                self.bump();
                let c = self.expr()?;
                self.expect(Tok::Then)?;
                let t = self.expr()?;
                self.expect(Tok::Else)?;
                self.enter()?;
                let e = self.fby()?;
                self.depth -= 1;
                Ok(Expr::If(Box::new(c), Box::new(t), Box::new(e)))
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        args.push(self.expr()?);
                        while *self.peek() == Tok::Comma {
                            self.bump();
                            args.push(self.expr()?);
                        }
                    }
                    self.expect(Tok::RParen)?;
                    Ok(Expr::Call(name, args))
                } else {
                    Ok(Expr::Ident(name))
                }
            }
            other => Err(self.error(format!("expected an expression, found {}", other.describe()))),
        }
    }
}
