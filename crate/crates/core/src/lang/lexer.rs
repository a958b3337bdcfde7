use super::LangError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Int(i64),
    Float(f64),
    Ident(String),
    True,
    False,
    Where,
    Dimension,
    End,
    If,
    Then,
    Else,
    Fby,
    First,
    Next,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    AndAnd,
    OrOr,
    Bang,
    LParen,
    RParen,
    Comma,
    Semi,
    Assign,
    At,
    Colon,
    Hash,
    Dot,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Int(v) => format!("integer {v}"),
            Tok::Float(v) => format!("float {v:?}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Eof => "end of input".to_owned(),
            other => format!("`{}`", symbol(other)),
        }
    }
}

fn symbol(t: &Tok) -> &'static str {
    match t {
        Tok::True => "true",
        Tok::False => "false",
        Tok::Where => "where",
        Tok::Dimension => "dimension",
        Tok::End => "end",
        Tok::If => "if",
        Tok::Then => "then",
        Tok::Else => "else",
        Tok::Fby => "fby",
        Tok::First => "first",
        Tok::Next => "next",
        Tok::Plus => "+",
        Tok::Minus => "-",
        Tok::Star => "*",
        Tok::Slash => "/",
        Tok::Percent => "%",
        Tok::Lt => "<",
        Tok::Le => "<=",
        Tok::Gt => ">",
        Tok::Ge => ">=",
        Tok::EqEq => "==",
        Tok::Ne => "!=",
        Tok::AndAnd => "&&",
        Tok::OrOr => "||",
        Tok::Bang => "!",
        Tok::LParen => "(",
        Tok::RParen => ")",
        Tok::Comma => ",",
        Tok::Semi => ";",
        Tok::Assign => "=",
        Tok::At => "@",
        Tok::Colon => ":",
        Tok::Hash => "#",
        Tok::Dot => ".",
        _ => "?",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

/// Splits source text into tokens. `//` starts a comment running to the end
/// of the line.
pub fn tokenize(src: &str) -> Result<Vec<Token>, LangError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let err = |msg: String| LangError::Syntax { line: tline, col: tcol, message: msg };
        let tok = if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let is_float = chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit());
            if is_float {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            let tok = if is_float {
                let v: f64 = text.parse().map_err(|_| err(format!("invalid float literal {text}")))?;
                if !v.is_finite() {
                    return Err(err(format!("float literal {text} out of range")));
                }
                Tok::Float(v)
            } else {
                Tok::Int(text.parse().map_err(|_| err(format!("integer literal {text} out of range")))?)
            };
            out.push(Token { tok, line: tline, col: tcol });
            continue;
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += i - start;
            let tok = match word.as_str() {
                "true" => Tok::True,
                "false" => Tok::False,
                "where" => Tok::Where,
                "dimension" => Tok::Dimension,
                "end" => Tok::End,
                "if" => Tok::If,
                "then" => Tok::Then,
                "else" => Tok::Else,
                "fby" => Tok::Fby,
                "first" => Tok::First,
                "next" => Tok::Next,
                _ => Tok::Ident(word),
            };
            out.push(Token { tok, line: tline, col: tcol });
            continue;
        } else {
            let next = chars.get(i + 1).copied();
            let (tok, width) = match (c, next) {
                ('<', Some('=')) => (Tok::Le, 2),
                ('>', Some('=')) => (Tok::Ge, 2),
                ('=', Some('=')) => (Tok::EqEq, 2),
                ('!', Some('=')) => (Tok::Ne, 2),
                ('&', Some('&')) => (Tok::AndAnd, 2),
                ('|', Some('|')) => (Tok::OrOr, 2),
                ('+', _) => (Tok::Plus, 1),
                ('-', _) => (Tok::Minus, 1),
                ('*', _) => (Tok::Star, 1),
                ('/', _) => (Tok::Slash, 1),
                ('%', _) => (Tok::Percent, 1),
                ('<', _) => (Tok::Lt, 1),
                ('>', _) => (Tok::Gt, 1),
                ('!', _) => (Tok::Bang, 1),
                ('(', _) => (Tok::LParen, 1),
                (')', _) => (Tok::RParen, 1),
                (',', _) => (Tok::Comma, 1),
                (';', _) => (Tok::Semi, 1),
                ('=', _) => (Tok::Assign, 1),
                ('@', _) => (Tok::At, 1),
                (':', _) => (Tok::Colon, 1),
                ('#', _) => (Tok::Hash, 1),
                ('.', _) => (Tok::Dot, 1),
                _ => return Err(err(format!("unexpected character {c:?}"))),
            };
            i += width;
            col += width;
            tok
        };
        out.push(Token { tok, line: tline, col: tcol });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_and_comments() {
        let toks = tokenize("a // note\n  fby.t 1.5").unwrap();
        let kinds: Vec<_> = toks.iter().map(|t| t.tok.clone()).collect();
        assert_eq!(
            kinds,
            [Tok::Ident("a".into()), Tok::Fby, Tok::Dot, Tok::Ident("t".into()), Tok::Float(1.5), Tok::Eof]
        );
        assert_eq!((toks[1].line, toks[1].col), (2, 3));
    }

    #[test]
    fn int_followed_by_dot_is_not_a_float() {
        let toks = tokenize("3.t").unwrap();
        assert_eq!(toks[0].tok, Tok::Int(3));
        assert_eq!(toks[1].tok, Tok::Dot);
    }

    #[test]
    fn bad_character_reports_position() {
        match tokenize("1 +\n  $") {
            Err(LangError::Syntax { line, col, .. }) => assert_eq!((line, col), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn integer_overflow_is_a_syntax_error() {
        assert!(tokenize("99999999999999999999").is_err());
    }
}
