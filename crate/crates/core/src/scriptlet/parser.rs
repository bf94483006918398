//! Precedence-climbing parser over the token stream.

use super::ast::{BinaryOp, Builtin, Expr, ExprKind, Span, UnaryOp};
use super::lexer::{tokenize, Tok, Token};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at {line}:{col}: expected {expected}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub expected: String,
}

impl ParseError {
    pub(crate) fn at(src: &str, offset: usize, expected: impl Into<String>) -> ParseError {
        let (line, col) = line_col(src, offset);
        ParseError {
            line,
            col,
            expected: expected.into(),
        }
    }
}

/// 1-based line and column (in characters) of a byte offset.
pub(crate) fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map(|i| i + 1).unwrap_or(0);
    (line, before[line_start..].chars().count() + 1)
}

pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        src,
        tokens,
        pos: 0,
    };
    let expr = p.expression()?;
    if p.peek().tok != Tok::Eof {
        return Err(p.error("end of input"));
    }
    Ok(expr)
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> ParseError {
        let t = self.peek();
        let expected = if t.tok == Tok::Eof {
            expected.to_string()
        } else {
            format!("{expected}, found {}", t.tok.describe())
        };
        ParseError::at(self.src, t.start, expected)
    }

    fn eat(&mut self, p: &str) -> bool {
        if matches!(self.peek().tok, Tok::Punct(q) if q == p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<Token, ParseError> {
        if matches!(self.peek().tok, Tok::Punct(q) if q == p) {
            Ok(self.bump())
        } else {
            Err(self.error(&format!("`{p}`")))
        }
    }

    fn expression(&mut self) -> Result<Expr, ParseError> {
        let cond = self.binary(1)?;
        if self.eat("?") {
            let then = self.expression()?;
            self.expect(":")?;
            let otherwise = self.expression()?;
            let span = Span {
                start: cond.span.start,
                end: otherwise.span.end,
            };
            return Ok(Expr {
                kind: ExprKind::Conditional(Box::new(cond), Box::new(then), Box::new(otherwise)),
                span,
            });
        }
        Ok(cond)
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Punct(p) => match binary_op(p) {
                    Some(op) if op.precedence() >= min_prec => op,
                    _ => break,
                },
                _ => break,
            };
            self.bump();
            let rhs = self.binary(op.precedence() + 1)?;
            let span = Span {
                start: lhs.span.start,
                end: rhs.span.end,
            };
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let start = self.peek().start;
        let op = if self.eat("-") {
            UnaryOp::Neg
        } else if self.eat("!") {
            UnaryOp::Not
        } else {
            return self.postfix();
        };
        let operand = self.unary()?;
        let span = Span {
            start,
            end: operand.span.end,
        };
        Ok(Expr {
            kind: ExprKind::Unary(op, Box::new(operand)),
            span,
        })
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut expr = self.primary()?;
        loop {
            if self.eat(".") {
                let t = self.bump();
                let Tok::Ident(name) = t.tok else {
                    self.pos -= 1;
                    return Err(self.error("member name"));
                };
                let span = Span {
                    start: expr.span.start,
                    end: t.end,
                };
                expr = Expr {
                    kind: ExprKind::Member(Box::new(expr), name),
                    span,
                };
            } else if self.eat("[") {
                let index = self.expression()?;
                let close = self.expect("]")?;
                let span = Span {
                    start: expr.span.start,
                    end: close.end,
                };
                expr = Expr {
                    kind: ExprKind::Index(Box::new(expr), Box::new(index)),
                    span,
                };
            } else {
                return Ok(expr);
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek().clone();
        let kind = match t.tok {
            Tok::Number(n) => {
                self.bump();
                ExprKind::Number(n)
            }
            Tok::Str(ref s) => {
                self.bump();
                ExprKind::Str(s.clone())
            }
            Tok::Ident(ref name) => {
                self.bump();
                match name.as_str() {
                    "null" => ExprKind::Null,
                    "true" => ExprKind::Bool(true),
                    "false" => ExprKind::Bool(false),
                    _ if matches!(self.peek().tok, Tok::Punct("(")) => {
                        return self.call(name, t.start);
                    }
                    _ => ExprKind::Ident(name.clone()),
                }
            }
            Tok::Punct("(") => {
                self.bump();
                let inner = self.expression()?;
                let close = self.expect(")")?;
                return Ok(Expr {
                    kind: inner.kind,
                    span: Span {
                        start: t.start,
                        end: close.end,
                    },
                });
            }
            Tok::Punct("[") => {
                self.bump();
                let mut items = Vec::new();
                if !self.eat("]") {
                    loop {
                        items.push(self.expression()?);
                        if self.eat("]") {
                            break;
                        }
                        self.expect(",")?;
                    }
                }
                ExprKind::Array(items)
            }
            Tok::Punct("{") => {
                self.bump();
                let mut entries = Vec::new();
                if !self.eat("}") {
                    loop {
                        let key = match self.bump().tok {
                            Tok::Str(s) => s,
                            _ => {
                                self.pos -= 1;
                                return Err(self.error("string key"));
                            }
                        };
                        self.expect(":")?;
                        entries.push((key, self.expression()?));
                        if self.eat("}") {
                            break;
                        }
                        self.expect(",")?;
                    }
                }
                ExprKind::Object(entries)
            }
            _ => return Err(self.error("expression")),
        };
        let end = self.tokens[self.pos.saturating_sub(1)].end;
        Ok(Expr {
            kind,
            span: Span {
                start: t.start,
                end,
            },
        })
    }

    fn call(&mut self, name: &str, start: usize) -> Result<Expr, ParseError> {
        let builtin = Builtin::from_name(name)
            .ok_or_else(|| ParseError::at(self.src, start, format!("built-in function, found `{name}`")))?;
        self.expect("(")?;
        let mut args = Vec::new();
        if !self.eat(")") {
            loop {
                args.push(self.expression()?);
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        let end = self.tokens[self.pos - 1].end;
        if args.len() != builtin.arity() {
            return Err(ParseError::at(
                self.src,
                start,
                format!("{} argument(s) to {}", builtin.arity(), builtin.name()),
            ));
        }
        Ok(Expr {
            kind: ExprKind::Call(builtin, args),
            span: Span { start, end },
        })
    }
}

fn binary_op(p: &str) -> Option<BinaryOp> {
    Some(match p {
        "*" => BinaryOp::Mul,
        "/" => BinaryOp::Div,
        "%" => BinaryOp::Rem,
        "+" => BinaryOp::Add,
        "-" => BinaryOp::Sub,
        "<" => BinaryOp::Lt,
        "<=" => BinaryOp::Le,
        ">" => BinaryOp::Gt,
        ">=" => BinaryOp::Ge,
        "==" => BinaryOp::Eq,
        "!=" => BinaryOp::Ne,
        "&&" => BinaryOp::And,
        "||" => BinaryOp::Or,
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_of_mul_over_add() {
        let e = parse("1+2*3").unwrap();
        assert_eq!(e.to_string(), "(1 + (2 * 3))");
    }

    #[test]
    fn dangling_operator_reports_column() {
        let err = parse("1 +").unwrap_err();
        assert_eq!((err.line, err.col), (1, 4));
        assert_eq!(err.expected, "expression");
    }

    #[test]
    fn multiline_positions() {
        let err = parse("1 +\n  )").unwrap_err();
        assert_eq!((err.line, err.col), (2, 3));
    }

    #[test]
    fn unknown_function_and_bad_arity() {
        assert!(parse("exec(1)").is_err());
        assert!(parse("len(1, 2)").is_err());
        assert!(parse("slice([1], 0, 1)").is_ok());
    }

    #[test]
    fn bad_escape_and_unterminated_string() {
        assert!(parse(r#""a\q""#).is_err());
        assert!(parse(r#""abc"#).is_err());
    }

    #[test]
    fn ternary_is_right_associative() {
        let e = parse("a ? b : c ? d : e").unwrap();
        assert_eq!(e.to_string(), "(a ? b : (c ? d : e))");
    }

    #[test]
    fn left_associative_subtraction() {
        assert_eq!(parse("5 - 2 - 1").unwrap().to_string(), "((5 - 2) - 1)");
    }
}
